"""Task configuration, typed examples, and JSONL dataset persistence.

A dataset file is one header line (task name + schema version) followed by
one JSON object per example.  Record fields are written in a fixed order,
absent fields omitted, so saving an unchanged dataset is byte-stable.
Datasets are immutable after construction and safe to share across
threads; builders and mergers produce new objects.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from . import prompting
from .errors import ConfigError, DataFormatError

SINGLE_TEXT = "single_text_classification"
PAIR = "pair_classification"
CONTEXT_QA = "context_qa"
KINDS = (SINGLE_TEXT, PAIR, CONTEXT_QA)

STAGE_SEED = "seed"
STAGE_ADD = "add"
STAGE_GOLD_VAL = "gold_val"
STAGE_GOLD_TEST = "gold_test"
STAGES = (STAGE_SEED, STAGE_ADD, STAGE_GOLD_VAL, STAGE_GOLD_TEST)

SCHEMA_VERSION = 1

# Template roles each task kind must have before synthesis can run.
REQUIRED_ROLES = {
    SINGLE_TEXT: (prompting.RATION, prompting.QUERY1, prompting.MIS1),
    PAIR: (prompting.QUERY2, prompting.MIS2),
    CONTEXT_QA: (prompting.QUERY2, prompting.MIS2),
}

_PAYLOAD_FIELDS = {
    SINGLE_TEXT: ("x", "y"),
    PAIR: ("context", "x", "y"),
    CONTEXT_QA: ("context", "answer", "question"),
}


@dataclass(frozen=True)
class Provenance:
    stage: str
    round: int = 0
    source_error_id: str | None = None
    prompt_hash: str | None = None

    def __post_init__(self) -> None:
        if self.stage not in STAGES:
            raise ConfigError(f"unknown provenance stage {self.stage!r}; expected one of {STAGES}")
        if self.round < 0:
            raise ConfigError("provenance round must be >= 0")
        if self.stage == STAGE_ADD and (self.round < 1 or not self.source_error_id):
            raise ConfigError("add-stage examples require round >= 1 and a source_error_id")

    def to_record(self) -> dict:
        rec: dict = {"stage": self.stage, "round": self.round}
        if self.source_error_id is not None:
            rec["source_error_id"] = self.source_error_id
        if self.prompt_hash is not None:
            rec["prompt_hash"] = self.prompt_hash
        return rec

    @classmethod
    def from_record(cls, rec: Mapping) -> "Provenance":
        return cls(
            stage=rec.get("stage", STAGE_SEED),
            round=int(rec.get("round", 0)),
            source_error_id=rec.get("source_error_id"),
            prompt_hash=rec.get("prompt_hash"),
        )


@dataclass(frozen=True)
class Example:
    provenance: Provenance
    x: str | None = None
    y: str | None = None
    context: str | None = None
    question: str | None = None
    answer: str | None = None
    id: str | None = None

    def payload(self, kind: str) -> dict:
        """The kind-specific content fields, ignoring provenance and id."""
        return {f: getattr(self, f) for f in _PAYLOAD_FIELDS[kind]}

    def text(self, kind: str) -> str:
        """The free-text part synthesis produces: x, or the question for QA."""
        value = self.question if kind == CONTEXT_QA else self.x
        return value or ""


def validate_example(kind: str, labels: Sequence[str], ex: Example) -> None:
    for f in _PAYLOAD_FIELDS[kind]:
        if getattr(ex, f) in (None, ""):
            raise DataFormatError(f"{kind} example is missing field {f!r}")
    if ex.y is not None and labels and ex.y not in labels:
        raise DataFormatError(f"label {ex.y!r} is not in the task label set {list(labels)}")


def normalized_payload(kind: str, ex: Example) -> tuple:
    """Dedup key: whitespace-normalized payload text plus label, no provenance."""
    parts = []
    for f in _PAYLOAD_FIELDS[kind]:
        value = getattr(ex, f) or ""
        parts.append(" ".join(value.split()))
    return tuple(parts)


def content_id(kind: str, ex: Example) -> str:
    blob = "\x1f".join([kind] + [getattr(ex, f) or "" for f in _PAYLOAD_FIELDS[kind]])
    return hashlib.sha1(blob.encode("utf-8")).hexdigest()[:12]


@dataclass(frozen=True)
class TaskSpec:
    """Task configuration: label set, templates, and synthesis parameters.

    ``rationale_count`` is the number of reason phrases requested per label
    (K), ``rationales_per_query`` how many are packed into one synthesis
    prompt (k), ``seed_size`` the target seed dataset size, ``ees_rounds``
    the default number of error-extrapolation rounds.
    """

    name: str
    kind: str
    labels: tuple[str, ...] = ()
    templates: Mapping[str, prompting.PromptTemplate] = field(default_factory=dict)
    rationale_count: int = 1
    rationales_per_query: int = 1
    seed_size: int = 0
    ees_rounds: int = 2
    qa_f1_threshold: float = 0.5
    dedup: bool = False
    # Count substituted for <X> in the ration template; defaults to rationale_count.
    ration_reason_count: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown task kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "labels", tuple(self.labels))
        if not self.labels and self.kind != CONTEXT_QA:
            raise ConfigError(f"task kind {self.kind} requires a non-empty label set")
        if len(set(self.labels)) != len(self.labels):
            raise ConfigError("task labels must be distinct")
        if self.rationale_count < 1:
            raise ConfigError("rationale_count K must be >= 1")
        if self.rationales_per_query < 1:
            raise ConfigError("rationales_per_query k must be >= 1")
        if self.rationales_per_query > self.rationale_count:
            raise ConfigError(
                f"rationales_per_query k={self.rationales_per_query} exceeds "
                f"rationale_count K={self.rationale_count}"
            )
        if self.seed_size < 0:
            raise ConfigError("seed_size must be >= 0")
        if self.ees_rounds < 0:
            raise ConfigError("ees_rounds must be >= 0")
        if not 0.0 <= self.qa_f1_threshold <= 1.0:
            raise ConfigError("qa_f1_threshold must lie in [0, 1]")
        object.__setattr__(self, "templates", dict(self.templates))
        missing = [r for r in REQUIRED_ROLES[self.kind] if r not in self.templates]
        if missing:
            raise ConfigError(
                f"task kind {self.kind} is missing template role(s): " + ", ".join(missing)
            )

    def label_index(self, label: str) -> int:
        return self.labels.index(label)

    def template(self, role: str) -> prompting.PromptTemplate:
        return self.templates[role]


def parse_task_spec(obj: Mapping) -> TaskSpec:
    if not isinstance(obj, Mapping):
        raise ConfigError("task spec must be a JSON object")
    name = obj.get("name")
    kind = obj.get("kind")
    if not name or not kind:
        raise ConfigError("task spec requires 'name' and 'kind'")
    templates: dict[str, prompting.PromptTemplate] = {}
    defaults = obj.get("template_defaults")
    if defaults is not None:
        templates.update(prompting.builtin_templates(defaults))
    overrides = obj.get("templates")
    if overrides is not None:
        if not isinstance(overrides, Mapping):
            raise ConfigError("'templates' must be a mapping of role -> template")
        templates.update(prompting.parse_template_map(overrides))
    return TaskSpec(
        name=name,
        kind=kind,
        labels=tuple(obj.get("labels", ())),
        templates=templates,
        rationale_count=int(obj.get("rationale_count", 1)),
        rationales_per_query=int(obj.get("rationales_per_query", 1)),
        seed_size=int(obj.get("seed_size", 0)),
        ees_rounds=int(obj.get("ees_rounds", 2)),
        qa_f1_threshold=float(obj.get("qa_f1_threshold", 0.5)),
        dedup=bool(obj.get("dedup", False)),
        ration_reason_count=(
            int(obj["ration_reason_count"]) if obj.get("ration_reason_count") is not None else None
        ),
    )


def load_task_spec(path: str | Path) -> TaskSpec:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"task spec file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"could not parse task spec {path}: {exc}") from None
    return parse_task_spec(obj)


def task_spec_to_json(spec: TaskSpec) -> dict:
    """JSON-serializable form of a TaskSpec (templates inlined)."""
    templates = {
        role: {"body": t.body, **({"label_map": dict(t.label_map)} if t.label_map else {})}
        for role, t in spec.templates.items()
    }
    out: dict = {
        "name": spec.name,
        "kind": spec.kind,
        "labels": list(spec.labels),
        "templates": templates,
        "rationale_count": spec.rationale_count,
        "rationales_per_query": spec.rationales_per_query,
        "seed_size": spec.seed_size,
        "ees_rounds": spec.ees_rounds,
        "qa_f1_threshold": spec.qa_f1_threshold,
        "dedup": spec.dedup,
    }
    if spec.ration_reason_count is not None:
        out["ration_reason_count"] = spec.ration_reason_count
    return out


@dataclass(frozen=True)
class Dataset:
    examples: tuple[Example, ...] = ()
    task: TaskSpec | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "examples", tuple(self.examples))
        ids = [ex.id for ex in self.examples]
        if any(i is None for i in ids):
            raise ConfigError("all dataset examples must carry an id (use Dataset.from_examples)")
        if len(set(ids)) != len(ids):
            raise ConfigError("dataset example ids must be unique")

    @classmethod
    def from_examples(
        cls,
        task: TaskSpec | None,
        examples: Iterable[Example],
        *,
        validate: bool = True,
        on_id_collision: str = "error",
    ) -> "Dataset":
        """Build a dataset, assigning content-hash ids where missing.

        ``on_id_collision`` is "error" for loaded data (ids must be unique
        in the file) or "suffix" for merges, where the same content may
        legitimately appear twice and gets a deterministic counter suffix.
        """
        seen: set[str] = set()
        out: list[Example] = []
        for ex in examples:
            if validate and task is not None:
                validate_example(task.kind, task.labels, ex)
            ex_id = ex.id
            if ex_id is None:
                ex_id = content_id(task.kind if task else SINGLE_TEXT, ex)
            if ex_id in seen:
                if on_id_collision == "error":
                    raise DataFormatError(f"duplicate example id {ex_id!r}")
                base, n = ex_id, 1
                while f"{base}-{n}" in seen:
                    n += 1
                ex_id = f"{base}-{n}"
            seen.add(ex_id)
            out.append(ex if ex.id == ex_id else replace(ex, id=ex_id))
        return cls(examples=tuple(out), task=task)

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[Example]:
        return iter(self.examples)

    def __getitem__(self, i: int) -> Example:
        return self.examples[i]

    def by_id(self, ex_id: str) -> Example:
        for ex in self.examples:
            if ex.id == ex_id:
                return ex
        raise KeyError(ex_id)

    def with_task(self, task: TaskSpec) -> "Dataset":
        return Dataset(examples=self.examples, task=task)


def example_to_record(ex: Example, kind: str) -> dict:
    """Wire/file record for one example; fixed field order, None omitted."""
    rec: dict = {"id": ex.id, "kind": kind}
    for f in ("x", "y", "context", "question", "answer"):
        value = getattr(ex, f)
        if value is not None:
            rec[f] = value
    rec["provenance"] = ex.provenance.to_record()
    return rec


def record_to_example(rec: Mapping) -> Example:
    prov = Provenance.from_record(rec.get("provenance", {"stage": STAGE_SEED}))
    return Example(
        provenance=prov,
        x=rec.get("x"),
        y=rec.get("y"),
        context=rec.get("context"),
        question=rec.get("question"),
        answer=rec.get("answer"),
        id=rec.get("id"),
    )


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    path = Path(path)
    kind = dataset.task.kind if dataset.task else SINGLE_TEXT
    header = {
        "record": "header",
        "task": dataset.task.name if dataset.task else "",
        "kind": kind,
        "schema_version": SCHEMA_VERSION,
    }
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, ensure_ascii=False) + "\n")
        for ex in dataset:
            fh.write(json.dumps(example_to_record(ex, kind), ensure_ascii=False) + "\n")


def load_dataset(path: str | Path, spec: TaskSpec) -> Dataset:
    """Load a JSONL dataset, validating records against the task spec.

    Malformed lines are reported with their line number; an empty file is
    an empty dataset.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise ConfigError(f"dataset file not found: {path}") from None

    examples: list[Example] = []
    header_seen = False
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: line {lineno}: invalid JSON: {exc.msg}") from None
        if not isinstance(rec, dict):
            raise DataFormatError(f"{path}: line {lineno}: expected a JSON object")
        if not header_seen:
            if rec.get("record") != "header":
                raise DataFormatError(f"{path}: line {lineno}: expected a header record first")
            if int(rec.get("schema_version", 0)) > SCHEMA_VERSION:
                raise DataFormatError(
                    f"{path}: line {lineno}: schema_version {rec.get('schema_version')} "
                    f"is newer than supported ({SCHEMA_VERSION})"
                )
            header_seen = True
            continue
        rec_kind = rec.get("kind", spec.kind)
        if rec_kind != spec.kind:
            raise DataFormatError(
                f"{path}: line {lineno}: example kind {rec_kind!r} does not match task kind {spec.kind!r}"
            )
        try:
            ex = record_to_example(rec)
            validate_example(spec.kind, spec.labels, ex)
        except (ConfigError, DataFormatError) as exc:
            raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
        examples.append(ex)
    return Dataset.from_examples(spec, examples, validate=False)


def merge(parts: Sequence[Dataset], *, task: TaskSpec | None = None, dedup: bool | None = None) -> Dataset:
    """Concatenate datasets in order, optionally dropping duplicate payloads.

    Duplicate detection compares whitespace-normalized payload text and
    label only; provenance never participates and is never altered.  The
    first occurrence wins.
    """
    parts = list(parts)
    if not parts:
        return Dataset(examples=(), task=task)
    kinds = {p.task.kind for p in parts if p.task is not None}
    if len(kinds) > 1:
        raise ConfigError(f"cannot merge datasets of mixed task kinds: {sorted(kinds)}")
    task = task or parts[0].task
    if dedup is None:
        dedup = task.dedup if task is not None else False
    kind = task.kind if task else SINGLE_TEXT

    merged: list[Example] = []
    seen_payloads: set[tuple] = set()
    for part in parts:
        for ex in part:
            if dedup:
                key = normalized_payload(kind, ex)
                if key in seen_payloads:
                    continue
                seen_payloads.add(key)
            merged.append(ex)
    return Dataset.from_examples(task, merged, validate=False, on_id_collision="suffix")
