import json
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from s3synth import core, diversity
from s3synth.core import Dataset, Example, Provenance
from s3synth.diversity import (
    EmbeddingSet, cosine_similarity, coverage_rate, edit_distance, hash_embed,
    median_nn_distance, project_2d, quality_report,
)
from s3synth.errors import ConfigError
from reference_impls import brute_coverage, reference_edit_distance


# --- cosine ------------------------------------------------------------------

def test_cosine_basic():
    assert cosine_similarity([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert cosine_similarity([1, 0], [0, 1]) == pytest.approx(0.0)
    assert cosine_similarity([1, 2], [-1, -2]) == pytest.approx(-1.0)


def test_cosine_errors():
    with pytest.raises(ConfigError, match="zero vector"):
        cosine_similarity([0, 0], [1, 0])
    with pytest.raises(ConfigError, match="dimension mismatch"):
        cosine_similarity([1, 0], [1, 0, 0])


# --- edit distance --------------------------------------------------------------

def test_edit_distance_basic():
    assert edit_distance("same", "same") == 0
    assert edit_distance("", "hello") == 5
    assert edit_distance("kitten", "sitting") == 3


def test_edit_distance_against_dp_oracle():
    rng = random.Random(424242)
    alphabet = "abcde"
    for _ in range(1000):
        a = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 20)))
        b = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 20)))
        assert edit_distance(a, b) == reference_edit_distance(a, b)


_short = st.text(alphabet="abc", max_size=12)


@given(a=_short, b=_short)
def test_edit_distance_symmetric(a, b):
    assert edit_distance(a, b) == edit_distance(b, a)


@settings(max_examples=60)
@given(a=_short, b=_short, c=_short)
def test_edit_distance_triangle_inequality(a, b, c):
    assert edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c)


# --- quality report ---------------------------------------------------------------

def _mis_and_add(text_spec, add_texts):
    mis_examples = [
        Example(provenance=Provenance(stage=core.STAGE_GOLD_VAL), x=t, y="positive",
                id=f"m{i}")
        for i, t in enumerate(["the first gold text", "a second gold line"])
    ]
    mis = Dataset.from_examples(text_spec, mis_examples)
    add_examples = [
        Example(provenance=Provenance(stage=core.STAGE_ADD, round=1,
                                      source_error_id=f"m{i}"),
                x=t, y="positive", id=f"a{i}")
        for i, t in enumerate(add_texts)
    ]
    add = Dataset.from_examples(text_spec, add_examples)
    return mis, add


def test_quality_report_identity_pairs(text_spec):
    mis, add = _mis_and_add(text_spec, ["the first gold text", "a second gold line"])
    emb = hash_embed({ex.id: ex.x for ex in list(mis) + list(add)})
    report = quality_report(mis, add, emb)
    assert report.avg_cos_sim == pytest.approx(1.0)
    assert report.avg_edit_dist == 0.0
    assert report.avg_len_mis == report.avg_len_add


def test_quality_report_hand_computed(text_spec):
    mis, add = _mis_and_add(text_spec, ["the first gold te__", "a second gold li__"])
    vectors = {"m0": [1.0, 0.0], "m1": [0.0, 1.0], "a0": [1.0, 1.0], "a1": [0.0, 1.0]}
    emb = EmbeddingSet.from_vectors(vectors)
    report = quality_report(mis, add, emb)
    assert report.n_pairs == 2
    assert report.avg_cos_sim == pytest.approx((math.sqrt(0.5) + 1.0) / 2)
    assert report.avg_edit_dist == pytest.approx(2.0)  # two substitutions each
    assert report.avg_len_mis == pytest.approx((19 + 18) / 2)
    assert report.avg_len_add == pytest.approx((19 + 18) / 2)


def test_quality_report_unlinked_example(text_spec):
    mis, add = _mis_and_add(text_spec, ["x", "y"])
    orphan = Example(provenance=Provenance(stage=core.STAGE_ADD, round=1,
                                           source_error_id="missing"),
                     x="stray", y="positive", id="a9")
    add = Dataset.from_examples(text_spec, list(add) + [orphan])
    emb = hash_embed({ex.id: ex.x or "" for ex in list(mis) + list(add)})
    with pytest.raises(ConfigError, match="a9"):
        quality_report(mis, add, emb)


def test_quality_report_missing_embedding(text_spec):
    mis, add = _mis_and_add(text_spec, ["x", "y"])
    emb = EmbeddingSet.from_vectors({"m0": [1.0], "m1": [1.0], "a0": [1.0]})
    with pytest.raises(ConfigError, match="missing embedding"):
        quality_report(mis, add, emb)


# --- projection --------------------------------------------------------------------

def test_project_2d_preserves_planar_geometry():
    rng = np.random.default_rng(5)
    flat = rng.normal(size=(40, 2))
    basis, _ = np.linalg.qr(rng.normal(size=(5, 2)))
    high = flat @ basis.T + 3.0  # planar data embedded in 5-D
    emb = EmbeddingSet.from_vectors({f"p{i}": high[i] for i in range(len(high))})
    coords = project_2d(emb, method="pca")
    def dists(points):
        arr = np.array(points)
        return np.linalg.norm(arr[:, None, :] - arr[None, :, :], axis=-1)
    original = dists([high[i] for i in range(len(high))])
    projected = dists([coords[f"p{i}"] for i in range(len(high))])
    assert np.allclose(original, projected, atol=1e-9)


def test_project_2d_single_point_centers_to_origin():
    emb = EmbeddingSet.from_vectors({"only": [3.0, 4.0, 5.0]})
    assert project_2d(emb)["only"] == (0.0, 0.0)


def test_project_2d_external_roundtrip(tmp_path):
    emb = EmbeddingSet.from_vectors({"a": [1.0, 2.0], "b": [3.0, 4.0]})
    coords_path = tmp_path / "coords.jsonl"
    coords_path.write_text(
        json.dumps({"id": "a", "x": 0.5, "y": -0.5}) + "\n"
        + json.dumps({"id": "b", "x": 1.5, "y": 2.5}) + "\n")
    out = project_2d(emb, method="external", coords=coords_path)
    assert out == {"a": (0.5, -0.5), "b": (1.5, 2.5)}


def test_project_2d_external_missing_id(tmp_path):
    emb = EmbeddingSet.from_vectors({"a": [1.0, 2.0], "b": [3.0, 4.0]})
    coords_path = tmp_path / "coords.jsonl"
    coords_path.write_text(json.dumps({"id": "a", "x": 0.0, "y": 0.0}) + "\n")
    with pytest.raises(ConfigError, match="b"):
        project_2d(emb, method="external", coords=coords_path)


def test_project_2d_rejects_1d():
    emb = EmbeddingSet.from_vectors({"a": [1.0], "b": [2.0]})
    with pytest.raises(ConfigError, match=">= 2"):
        project_2d(emb)


def test_project_2d_deterministic():
    rng = np.random.default_rng(8)
    vecs = {f"i{i}": rng.normal(size=6) for i in range(10)}
    a = project_2d(EmbeddingSet.from_vectors(vecs))
    b = project_2d(EmbeddingSet.from_vectors(vecs))
    assert a == b


# --- coverage ---------------------------------------------------------------------

def test_coverage_gold_subset_of_syn():
    pts = [(0.0, 0.0), (1.0, 1.0), (2.0, 0.5)]
    assert coverage_rate(pts, pts, 0.5) == 1.0


def test_coverage_gamma_zero_disjoint():
    assert coverage_rate([(0.0, 0.0)], [(1.0, 1.0)], 0.0) == 0.0


def test_coverage_known_half():
    gold = [(0.0, 0.0), (2.0, 0.0)]
    syn = [(0.0, 0.5)]
    # distances: 0.5 and sqrt(4 + 0.25) ~ 2.06
    assert coverage_rate(gold, syn, 1.0) == 0.5


def test_coverage_requires_nonempty_syn():
    with pytest.raises(ConfigError):
        coverage_rate([(0.0, 0.0)], np.empty((0, 2)), 1.0)


def test_coverage_matches_brute_force():
    rng = random.Random(99)
    for _ in range(50):
        n, m = rng.randint(1, 200), rng.randint(1, 200)
        gold = [(rng.uniform(-5, 5), rng.uniform(-5, 5)) for _ in range(n)]
        syn = [(rng.uniform(-5, 5), rng.uniform(-5, 5)) for _ in range(m)]
        gamma = rng.uniform(0, 3)
        assert coverage_rate(gold, syn, gamma) == brute_coverage(gold, syn, gamma)


def test_coverage_monotone_in_gamma_and_points():
    rng = random.Random(7)
    gold = [(rng.uniform(0, 4), rng.uniform(0, 4)) for _ in range(60)]
    syn = [(rng.uniform(0, 4), rng.uniform(0, 4)) for _ in range(20)]
    rates = [coverage_rate(gold, syn, g) for g in np.linspace(0, 4, 30)]
    assert all(b >= a for a, b in zip(rates, rates[1:]))
    more_syn = syn + [(rng.uniform(0, 4), rng.uniform(0, 4)) for _ in range(20)]
    assert coverage_rate(gold, more_syn, 1.0) >= coverage_rate(gold, syn, 1.0)


def test_median_nn_distance():
    pts = [(0.0, 0.0), (1.0, 0.0), (10.0, 0.0)]
    # nearest-neighbor distances: 1, 1, 9 -> median 1
    assert median_nn_distance(pts) == pytest.approx(1.0)


# --- embeddings ---------------------------------------------------------------------

def test_hash_embed_unit_norm_and_determinism():
    texts = {"a": "some words here", "b": "other words", "c": ""}
    emb = hash_embed(texts)
    assert emb.dim == 256
    assert np.linalg.norm(emb.get("a")) == pytest.approx(1.0)
    assert np.linalg.norm(emb.get("c")) == 0.0
    again = hash_embed(texts)
    assert np.array_equal(emb.get("a"), again.get("a"))


def test_embedding_set_uniform_dim():
    with pytest.raises(ConfigError, match="dimension"):
        EmbeddingSet.from_vectors({"a": [1.0, 2.0], "b": [1.0]})


def test_embedding_file_roundtrip(tmp_path):
    path = tmp_path / "emb.jsonl"
    path.write_text(json.dumps({"id": "a", "vector": [1.0, 0.0]}) + "\n"
                    + json.dumps({"id": "b", "vector": [0.0, 1.0]}) + "\n")
    emb = EmbeddingSet.from_file(path)
    assert emb.dim == 2
    assert list(emb.ids()) == ["a", "b"]
