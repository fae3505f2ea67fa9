"""Text-generation backends and the response cache.

Three backends share one interface: a remote OpenAI-compatible HTTP
endpoint, a scripted oracle (prompt-pattern rules with canned cyclic
responses), and a distributional oracle that samples labeled atoms from a
finite space — the offline stand-in used for end-to-end tests and the
bundled demo.  Scripted and distributional completions are pure functions
of (script, rng_seed, prompt, sample_index), so runs are bit-reproducible
and safe to fan out across threads.

The cache is an append-only JSONL file keyed by a digest of the request;
a corrupt line invalidates only itself.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

from . import prompting
from .errors import (
    AuthError,
    BackendError,
    BackendTimeoutError,
    ConfigError,
    OracleMatchError,
    RateLimitError,
    RationaleParseError,
)
from .rng import stable_seed

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.9  # nucleus-sampling default used for all synthesis
DEFAULT_TOP_P = 1.0
DEFAULT_MAX_TOKENS = 256


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    temperature: float = DEFAULT_TEMPERATURE
    top_p: float = DEFAULT_TOP_P
    max_tokens: int = DEFAULT_MAX_TOKENS
    n: int = 1
    sample_index: int = 0
    stop: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ConfigError("prompt must be non-empty")
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")
        if not 0.0 < self.top_p <= 1.0:
            raise ConfigError("top_p must lie in (0, 1]")
        if self.max_tokens < 1:
            raise ConfigError("max_tokens must be >= 1")
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.sample_index < 0:
            raise ConfigError("sample_index must be >= 0")
        if self.stop is not None:
            object.__setattr__(self, "stop", tuple(self.stop))


def cache_key(backend_id: str, req: GenerationRequest, sample_index: int) -> str:
    blob = json.dumps(
        [req.prompt, req.temperature, req.top_p, req.max_tokens, sample_index, backend_id],
        ensure_ascii=False,
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def request_digest(req: GenerationRequest) -> str:
    blob = json.dumps(
        [req.prompt, req.temperature, req.top_p, req.max_tokens, req.stop],
        ensure_ascii=False,
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


class ResponseCache:
    """Append-only on-disk cache of completions, tolerant of torn writes."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, str] = {}
        self.hits = 0
        self.misses = 0
        self.corrupt = 0
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        for line in self.path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                key = rec["key"]
                completions = rec["completions"]
                if not isinstance(key, str) or not isinstance(completions, list):
                    raise ValueError("bad record shape")
            except Exception:
                self.corrupt += 1
                continue
            if completions:
                self._entries[key] = completions[0]

    def get(self, key: str) -> str | None:
        with self._lock:
            hit = self._entries.get(key)
            if hit is None:
                self.misses += 1
            else:
                self.hits += 1
            return hit

    def put(self, key: str, digest: str, completion: str) -> None:
        rec = {"key": key, "request_digest": digest, "completions": [completion]}
        with self._lock:
            self._entries[key] = completion
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")

    def stats(self) -> dict:
        return {"hits": self.hits, "misses": self.misses, "corrupt": self.corrupt}


class Backend:
    """Base class: thread-safe call counting plus the completion hook."""

    backend_id: str = "backend"

    def __init__(self) -> None:
        self._calls = 0
        self._calls_lock = threading.Lock()

    @property
    def calls(self) -> int:
        with self._calls_lock:
            return self._calls

    def _record_call(self) -> None:
        with self._calls_lock:
            self._calls += 1

    def complete(self, req: GenerationRequest, sample_index: int) -> str:
        raise NotImplementedError


def generate(backend: Backend, req: GenerationRequest, cache: ResponseCache | None = None) -> list[str]:
    """Return ``req.n`` completions, one per consecutive sample index.

    Cached samples never reach the backend; uncached ones are fetched and
    recorded.  Output order follows sample index, independent of any
    concurrency inside the backend.
    """
    digest = request_digest(req)
    out: list[str] = []
    for offset in range(req.n):
        idx = req.sample_index + offset
        key = cache_key(backend.backend_id, req, idx)
        if cache is not None:
            hit = cache.get(key)
            if hit is not None:
                out.append(hit)
                continue
        text = backend.complete(req, idx)
        if cache is not None:
            cache.put(key, digest, text)
        out.append(text)
    return out


@dataclass(frozen=True)
class OracleRule:
    match: str
    responses: tuple[str, ...]
    regex: bool = False

    def __post_init__(self) -> None:
        if not self.responses:
            raise ConfigError("oracle rule needs at least one response")
        object.__setattr__(self, "responses", tuple(self.responses))

    def matches(self, prompt: str) -> bool:
        if self.regex:
            return re.search(self.match, prompt) is not None
        return self.match in prompt


@dataclass(frozen=True)
class Atom:
    text: str
    label: str
    cluster: str = ""


@dataclass(frozen=True)
class DistributionalSpec:
    """Finite labeled atom space with cluster weights for seed sampling.

    ``weights`` maps label -> {cluster -> weight} and controls which part
    of each label's space seed queries draw from.  When a prompt carries
    the ``similar_marker`` and embeds a known atom's text, sampling is
    restricted to that atom's cluster — lookalike generation.
    """

    space: tuple[Atom, ...]
    weights: Mapping[str, Mapping[str, float]]
    similar_marker: str = "similar to"

    def __post_init__(self) -> None:
        if not self.space:
            raise ConfigError("distributional oracle needs a non-empty atom space")
        object.__setattr__(self, "space", tuple(self.space))
        weights = {
            label: dict(clusters) for label, clusters in dict(self.weights).items()
        }
        for label, clusters in weights.items():
            if any(w < 0 for w in clusters.values()):
                raise ConfigError(f"negative cluster weight under label {label!r}")
            if sum(clusters.values()) <= 0:
                raise ConfigError(f"cluster weights under label {label!r} are not normalizable")
        object.__setattr__(self, "weights", weights)

    def labels(self) -> list[str]:
        seen: list[str] = []
        for atom in self.space:
            if atom.label not in seen:
                seen.append(atom.label)
        return seen


class ScriptedOracle(Backend):
    """Deterministic offline backend: ordered rules, then the atom sampler.

    Rules are checked first (first match wins) and answer with their
    response list cycled by sample index.  If no rule matches and a
    distributional spec is present, an atom is sampled; otherwise the
    prompt is unanswerable and an error is raised.
    """

    def __init__(
        self,
        rules: Sequence[OracleRule] = (),
        distributional: DistributionalSpec | None = None,
        rng_seed: int = 0,
    ):
        super().__init__()
        self.rules = tuple(rules)
        self.distributional = distributional
        self.rng_seed = rng_seed
        if not self.rules and self.distributional is None:
            raise ConfigError("oracle script needs at least one rule or a distributional spec")
        script_blob = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)
        self.backend_id = "scripted:" + hashlib.sha256(script_blob.encode("utf-8")).hexdigest()[:12]

    def to_dict(self) -> dict:
        out: dict = {
            "rng_seed": self.rng_seed,
            "rules": [
                {"match": r.match, "responses": list(r.responses), "regex": r.regex}
                for r in self.rules
            ],
        }
        if self.distributional is not None:
            d = self.distributional
            out["distributional"] = {
                "space": [{"text": a.text, "label": a.label, "cluster": a.cluster} for a in d.space],
                "weights": {lbl: dict(cl) for lbl, cl in d.weights.items()},
                "similar_marker": d.similar_marker,
            }
        return out

    @classmethod
    def from_dict(cls, obj: Mapping) -> "ScriptedOracle":
        rules = [
            OracleRule(
                match=r["match"],
                responses=tuple(r["responses"]),
                regex=bool(r.get("regex", False)),
            )
            for r in obj.get("rules", ())
        ]
        distributional = None
        if obj.get("distributional") is not None:
            d = obj["distributional"]
            distributional = DistributionalSpec(
                space=tuple(
                    Atom(text=a["text"], label=a["label"], cluster=a.get("cluster", ""))
                    for a in d["space"]
                ),
                weights=d.get("weights", {}),
                similar_marker=d.get("similar_marker", "similar to"),
            )
        return cls(rules=rules, distributional=distributional, rng_seed=int(obj.get("rng_seed", 0)))

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedOracle":
        path = Path(path)
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"oracle script not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"could not parse oracle script {path}: {exc}") from None
        return cls.from_dict(obj)

    def complete(self, req: GenerationRequest, sample_index: int) -> str:
        self._record_call()
        for rule in self.rules:
            if rule.matches(req.prompt):
                return rule.responses[sample_index % len(rule.responses)]
        if self.distributional is not None:
            return self._sample_atom(req.prompt, sample_index)
        raise OracleMatchError(f"no oracle rule matches prompt: {req.prompt[:120]!r}")

    def _detect_label(self, prompt: str) -> str:
        spec = self.distributional
        assert spec is not None
        # Longest label word first so "not in" is not shadowed by "in".
        for label in sorted(spec.labels(), key=len, reverse=True):
            if re.search(r"(?<!\w)" + re.escape(label) + r"(?!\w)", prompt):
                return label
        raise OracleMatchError(f"no label word found in prompt: {prompt[:120]!r}")

    def _exemplar_cluster(self, prompt: str, label: str) -> str | None:
        spec = self.distributional
        assert spec is not None
        if spec.similar_marker not in prompt:
            return None
        # Longest embedded atom text wins; lookalikes stay in its cluster.
        best: Atom | None = None
        for atom in spec.space:
            if atom.text and atom.text in prompt:
                if best is None or len(atom.text) > len(best.text):
                    best = atom
        return best.cluster if best is not None else None

    def _sample_atom(self, prompt: str, sample_index: int) -> str:
        spec = self.distributional
        assert spec is not None
        label = self._detect_label(prompt)
        cluster = self._exemplar_cluster(prompt, label)
        rng = random.Random(stable_seed(self.rng_seed, prompt, sample_index))
        if cluster is not None:
            pool = [a for a in spec.space if a.label == label and a.cluster == cluster]
            if not pool:
                cluster = None
        if cluster is None:
            cluster_weights = spec.weights.get(label)
            if cluster_weights is None:
                pool = [a for a in spec.space if a.label == label]
            else:
                clusters = sorted(c for c, w in cluster_weights.items() if w > 0)
                chosen = rng.choices(clusters, weights=[cluster_weights[c] for c in clusters], k=1)[0]
                pool = [a for a in spec.space if a.label == label and a.cluster == chosen]
        if not pool:
            raise OracleMatchError(f"no atoms available for label {label!r} in the sampled cluster")
        return rng.choice(pool).text


class RemoteBackend(Backend):
    """OpenAI-compatible chat-completions client with bounded retries.

    Transient failures (429, 5xx, timeouts) back off exponentially up to
    ``max_retries``; authentication failures raise immediately.  One HTTP
    call per sample keeps responses cache-keyable by sample index.
    """

    def __init__(
        self,
        model: str,
        api_key: str | None,
        base_url: str = "https://api.openai.com/v1",
        *,
        session=None,
        max_retries: int = 5,
        backoff: float = 0.5,
        timeout: float = 60.0,
        sleep=time.sleep,
    ):
        super().__init__()
        if not api_key:
            raise AuthError("remote backend requires an API key; set S3_LLM_API_KEY")
        if session is None:
            import requests

            session = requests.Session()
        self.model = model
        self.api_key = api_key
        self.base_url = base_url.rstrip("/")
        self.session = session
        self.max_retries = max_retries
        self.backoff = backoff
        self.timeout = timeout
        self._sleep = sleep
        self.backend_id = f"remote:{model}@{self.base_url}"

    def complete(self, req: GenerationRequest, sample_index: int) -> str:
        self._record_call()
        payload: dict = {
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "top_p": req.top_p,
            "max_tokens": req.max_tokens,
            "n": 1,
        }
        if req.stop:
            payload["stop"] = list(req.stop)
        headers = {"Authorization": f"Bearer {self.api_key}"}
        url = f"{self.base_url}/chat/completions"

        last_error: BackendError | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self.session.post(url, json=payload, headers=headers, timeout=self.timeout)
            except Exception as exc:  # requests.Timeout, connection resets, ...
                last_error = BackendTimeoutError(f"request to {url} failed: {exc}")
                continue
            status = getattr(resp, "status_code", 0)
            if status in (401, 403):
                raise AuthError(f"authentication rejected by {url} (HTTP {status})")
            if status == 429:
                last_error = RateLimitError(f"rate limited by {url} (HTTP 429)")
                continue
            if status >= 500:
                last_error = BackendError(f"server error from {url} (HTTP {status})")
                continue
            if status != 200:
                raise BackendError(f"unexpected HTTP {status} from {url}")
            try:
                body = resp.json()
                return body["choices"][0]["message"]["content"]
            except Exception as exc:
                raise BackendError(f"malformed completion response from {url}: {exc}") from None
        assert last_error is not None
        last_error.args = (f"{last_error.args[0]} after {self.max_retries} retries",)
        raise last_error


_LIST_LINE_RE = re.compile(r"^\s*(?:\d+\s*[.)]|[-*•])\s*(.+?)\s*$")


def parse_rationales(text: str) -> list[str]:
    """Distinct rationale phrases from numbered or bulleted lines."""
    phrases: list[str] = []
    for line in text.splitlines():
        m = _LIST_LINE_RE.match(line)
        if not m:
            continue
        phrase = m.group(1).strip().lower().rstrip(".,;:!")
        if phrase and phrase not in phrases:
            phrases.append(phrase)
    return phrases


def top_k_rationales(
    backend: Backend,
    label: str,
    template: prompting.PromptTemplate,
    count: int,
    *,
    cache: ResponseCache | None = None,
    attempts: int = 4,
    reason_count: int | None = None,
    request: GenerationRequest | None = None,
) -> list[str]:
    """Exactly ``count`` distinct rationale phrases for one label.

    Re-queries with fresh sample indices while short of ``count``, up to
    ``attempts`` tries, accumulating distinct phrases across attempts.
    """
    if template.role != prompting.RATION:
        raise ConfigError(f"rationale synthesis needs a {prompting.RATION!r} template, got {template.role!r}")
    if count < 1:
        raise ConfigError("rationale count K must be >= 1")
    if attempts < 1:
        raise ConfigError("attempt budget must be >= 1")

    bindings: dict[str, str] = {prompting.Y: label}
    if prompting.X in prompting.placeholders_in(template.body):
        bindings[prompting.X] = str(reason_count if reason_count is not None else count)
    prompt = prompting.render(template, bindings)

    base = request if request is not None else GenerationRequest(prompt=prompt)
    if base.prompt != prompt:
        base = replace(base, prompt=prompt)

    collected: list[str] = []
    parsed_any = False
    for attempt in range(attempts):
        req = replace(base, n=1, sample_index=base.sample_index + attempt)
        completion = generate(backend, req, cache)[0]
        phrases = parse_rationales(completion)
        if phrases:
            parsed_any = True
        for phrase in phrases:
            if phrase not in collected:
                collected.append(phrase)
        if len(collected) >= count:
            return collected[:count]
    if not parsed_any:
        raise RationaleParseError(
            f"no rationale list could be parsed for label {label!r} after {attempts} attempts"
        )
    raise RationaleParseError(
        f"only {len(collected)} distinct rationales for label {label!r} after {attempts} attempts; need {count}"
    )
