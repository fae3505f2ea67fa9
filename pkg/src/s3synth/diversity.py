"""Dataset quality and coverage analyses.

The quality report pairs each extrapolated example with its source error
and averages embedding cosine similarity, character edit distance, and
text lengths — high similarity with near-length edit distance means the
backend produced lookalikes rather than copies.  The coverage analysis
projects embeddings to 2-D and measures the fraction of gold points within
radius gamma of any synthesized point.

Embeddings are externally supplied (id -> vector files) or computed by a
small hashed bag-of-words embedder so everything runs offline.  The
built-in projection is PCA; externally computed 2-D coordinates (e.g. from
a heavier nonlinear method) can be passed through instead.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import core
from .errors import ConfigError, DataFormatError
from .trainer import tokenize

HASH_EMBED_DIM = 256


@dataclass(frozen=True)
class EmbeddingSet:
    vectors: Mapping[str, np.ndarray]
    dim: int

    @classmethod
    def from_vectors(cls, vectors: Mapping[str, Sequence[float]]) -> "EmbeddingSet":
        out: dict[str, np.ndarray] = {}
        dim: int | None = None
        for key, vec in vectors.items():
            arr = np.asarray(vec, dtype=np.float64)
            if arr.ndim != 1:
                raise ConfigError(f"embedding for {key!r} is not a vector")
            if dim is None:
                dim = int(arr.shape[0])
                if dim < 1:
                    raise ConfigError("embedding dimension must be >= 1")
            elif arr.shape[0] != dim:
                raise ConfigError(
                    f"embedding for {key!r} has dimension {arr.shape[0]}, expected {dim}"
                )
            out[key] = arr
        if dim is None:
            raise ConfigError("embedding set is empty")
        return cls(vectors=out, dim=dim)

    @classmethod
    def from_file(cls, path: str | Path) -> "EmbeddingSet":
        path = Path(path)
        vectors: dict[str, Sequence[float]] = {}
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except FileNotFoundError:
            raise ConfigError(f"embedding file not found: {path}") from None
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                vectors[rec["id"]] = rec["vector"]
            except Exception:
                raise DataFormatError(f"{path}: line {lineno}: expected {{id, vector}}") from None
        return cls.from_vectors(vectors)

    def get(self, key: str) -> np.ndarray:
        vec = self.vectors.get(key)
        if vec is None:
            raise ConfigError(f"missing embedding for id {key!r}")
        return vec

    def ids(self) -> list[str]:
        return list(self.vectors)


def hash_embed(texts: Mapping[str, str], dim: int = HASH_EMBED_DIM) -> EmbeddingSet:
    """Feature-hashed bag-of-words embeddings, L2-normalized."""
    import hashlib

    vectors: dict[str, np.ndarray] = {}
    for key, text in texts.items():
        vec = np.zeros(dim, dtype=np.float64)
        for token in tokenize(text):
            bucket = int.from_bytes(hashlib.sha1(token.encode("utf-8")).digest()[:4], "big") % dim
            vec[bucket] += 1.0
        norm = float(np.linalg.norm(vec))
        if norm > 0:
            vec /= norm
        vectors[key] = vec
    return EmbeddingSet(vectors=vectors, dim=dim)


def cosine_similarity(u: Sequence[float], v: Sequence[float]) -> float:
    a = np.asarray(u, dtype=np.float64)
    b = np.asarray(v, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ConfigError("cosine similarity is undefined for a zero vector")
    return float(np.dot(a, b) / (na * nb))


def edit_distance(a: str, b: str) -> int:
    """Character-level Levenshtein distance, unit costs."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i] + [0] * len(b)
        for j, cb in enumerate(b, start=1):
            cost = 0 if ca == cb else 1
            current[j] = min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost)
        previous = current
    return previous[len(b)]


@dataclass(frozen=True)
class DiversityReport:
    n_pairs: int
    avg_cos_sim: float
    avg_edit_dist: float
    avg_len_mis: float
    avg_len_add: float

    def to_json(self) -> dict:
        return {
            "n_pairs": self.n_pairs,
            "avg_cos_sim": self.avg_cos_sim,
            "avg_edit_dist": self.avg_edit_dist,
            "avg_len_mis": self.avg_len_mis,
            "avg_len_add": self.avg_len_add,
        }


def quality_report(mis: core.Dataset, add: core.Dataset, emb: EmbeddingSet) -> DiversityReport:
    """Averages over (source error, extrapolated example) pairs.

    Every ``add`` example must link to a ``mis`` example through its
    provenance, and both sides need embeddings keyed by example id.
    """
    if len(add) == 0:
        raise ConfigError("no extrapolated examples to analyze")
    kind = (add.task or mis.task).kind if (add.task or mis.task) else core.SINGLE_TEXT
    by_id = {ex.id: ex for ex in mis}
    cos_total = edit_total = len_mis_total = len_add_total = 0.0
    for ex in add:
        source_id = ex.provenance.source_error_id
        if source_id is None or source_id not in by_id:
            raise ConfigError(
                f"extrapolated example {ex.id!r} does not link to a known source error "
                f"(source_error_id={source_id!r})"
            )
        source = by_id[source_id]
        text_mis = source.text(kind)
        text_add = ex.text(kind)
        cos_total += cosine_similarity(emb.get(source.id or ""), emb.get(ex.id or ""))
        edit_total += edit_distance(text_mis, text_add)
        len_mis_total += len(text_mis)
        len_add_total += len(text_add)
    n = len(add)
    return DiversityReport(
        n_pairs=n,
        avg_cos_sim=cos_total / n,
        avg_edit_dist=edit_total / n,
        avg_len_mis=len_mis_total / n,
        avg_len_add=len_add_total / n,
    )


def load_coords(path: str | Path) -> dict[str, tuple[float, float]]:
    path = Path(path)
    coords: dict[str, tuple[float, float]] = {}
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise ConfigError(f"coordinates file not found: {path}") from None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            coords[rec["id"]] = (float(rec["x"]), float(rec["y"]))
        except Exception:
            raise DataFormatError(f"{path}: line {lineno}: expected {{id, x, y}}") from None
    return coords


def project_2d(
    emb: EmbeddingSet,
    method: str = "pca",
    coords: str | Path | Mapping[str, tuple[float, float]] | None = None,
) -> dict[str, tuple[float, float]]:
    """2-D coordinates per id: mean-centered top-2 PCA, or external pass-through."""
    if method == "external":
        if coords is None:
            raise ConfigError("external projection requires a coordinates file")
        mapping = coords if isinstance(coords, Mapping) else load_coords(coords)
        missing = [i for i in emb.ids() if i not in mapping]
        if missing:
            raise ConfigError(f"external coordinates missing for id(s): {', '.join(missing[:5])}")
        return {i: (float(mapping[i][0]), float(mapping[i][1])) for i in emb.ids()}
    if method != "pca":
        raise ConfigError(f"unknown projection method {method!r}; expected pca or external")
    if emb.dim < 2:
        raise ConfigError("PCA projection requires embedding dimension >= 2")
    ids = emb.ids()
    matrix = np.stack([emb.vectors[i] for i in ids])
    centered = matrix - matrix.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:2]
    # Fix the sign convention so the projection is deterministic.
    for row in range(components.shape[0]):
        pivot = int(np.argmax(np.abs(components[row])))
        if components[row, pivot] < 0:
            components[row] = -components[row]
    projected = centered @ components.T
    if projected.shape[1] < 2:
        projected = np.pad(projected, ((0, 0), (0, 2 - projected.shape[1])))
    return {i: (float(projected[k, 0]), float(projected[k, 1])) for k, i in enumerate(ids)}


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2:
        raise ConfigError("points must be a 2-D array of coordinates")
    return arr


def coverage_rate(gold_pts, syn_pts, gamma: float) -> float:
    """Fraction of gold points within Euclidean distance gamma of a synthesized point."""
    gold = _as_points(gold_pts)
    syn = _as_points(syn_pts)
    if syn.shape[0] == 0:
        raise ConfigError("synthesized point set must be non-empty")
    if gamma < 0:
        raise ConfigError("gamma must be >= 0")
    d2 = ((gold[:, None, :] - syn[None, :, :]) ** 2).sum(axis=-1)
    covered = d2.min(axis=1) <= gamma * gamma
    return float(covered.sum() / gold.shape[0])


def median_nn_distance(points) -> float:
    """Median nearest-neighbor distance within one point set (gamma default)."""
    pts = _as_points(points)
    if pts.shape[0] < 2:
        raise ConfigError("need at least two points for a nearest-neighbor distance")
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1)
    np.fill_diagonal(d2, np.inf)
    return float(np.median(np.sqrt(d2.min(axis=1))))
