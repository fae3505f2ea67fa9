"""Seed dataset construction.

Single-text tasks go through the rationale route: ask the backend for K
reason phrases per label, then synthesize each example from a uniformly
drawn label and a non-repeating k-subset of its rationales.  Pair and QA
tasks condition on a pool of contexts instead, sampling a context (with
replacement) and, for pair tasks, a uniform label.

All draws come from a caller-supplied seed; generations may fan out over
threads but the dataset is assembled in draw order, so scripted-oracle
runs are bit-reproducible.
"""

from __future__ import annotations

import json
import logging
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

from . import core, llm, prompting
from .errors import BackendError, ConfigError, DataFormatError
from .rng import stable_seed

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RationaleSet:
    by_label: Mapping[str, tuple[str, ...]]

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "by_label", {label: tuple(phrases) for label, phrases in dict(self.by_label).items()}
        )
        for label, phrases in self.by_label.items():
            if len(set(phrases)) != len(phrases):
                raise ConfigError(f"rationales for label {label!r} contain duplicates")

    def for_label(self, label: str) -> tuple[str, ...]:
        return self.by_label[label]

    def validate_for(self, spec: core.TaskSpec) -> None:
        for label in spec.labels:
            phrases = self.by_label.get(label)
            if phrases is None:
                raise ConfigError(f"no rationales for label {label!r}")
            if len(phrases) != spec.rationale_count:
                raise ConfigError(
                    f"label {label!r} has {len(phrases)} rationales; expected K={spec.rationale_count}"
                )


@dataclass(frozen=True)
class ContextRecord:
    context: str
    answer: str | None = None


@dataclass(frozen=True)
class ContextPool:
    records: tuple[ContextRecord, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self) -> int:
        return len(self.records)

    @classmethod
    def from_file(cls, path: str | Path) -> "ContextPool":
        path = Path(path)
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except FileNotFoundError:
            raise ConfigError(f"context pool file not found: {path}") from None
        records = []
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}: line {lineno}: invalid JSON: {exc.msg}") from None
            if "context" not in rec:
                raise DataFormatError(f"{path}: line {lineno}: missing 'context'")
            records.append(ContextRecord(context=rec["context"], answer=rec.get("answer")))
        return cls(records=tuple(records))


def join_phrases(phrases: Sequence[str]) -> str:
    """Comma-and-"and" list: "great acting, intriguing plot, and beautiful cinematography"."""
    phrases = list(phrases)
    if not phrases:
        return ""
    if len(phrases) == 1:
        return phrases[0]
    if len(phrases) == 2:
        return f"{phrases[0]} and {phrases[1]}"
    return ", ".join(phrases[:-1]) + f", and {phrases[-1]}"


_LEADING_TAG_RE = re.compile(r"^[A-Za-z]{1,12}:\s+")


def strip_echo(completion: str, prompt: str, *, min_echo_len: int = 12) -> str:
    """Clean a completion: quotes, "Review:"-style tags, and prompt echoes.

    Early models tended to lead with a verbatim copy of the prompt's tail;
    the longest prompt suffix (at least ``min_echo_len`` chars) found at
    the start of the completion is removed.
    """
    s = completion.strip()
    if len(s) >= 2 and s[0] == s[-1] and s[0] in ('"', "'"):
        s = s[1:-1].strip()
    m = _LEADING_TAG_RE.match(s)
    if m:
        s = s[m.end():]
    for length in range(min(len(prompt), len(s)), min_echo_len - 1, -1):
        tail = prompt[-length:]
        if s.startswith(tail):
            s = s[length:].lstrip()
            break
    return s.strip()


def synthesize_rationales(
    spec: core.TaskSpec,
    backend: llm.Backend,
    *,
    cache: llm.ResponseCache | None = None,
    attempts: int = 4,
) -> RationaleSet:
    """One K-list of rationale phrases per label, via the ration template."""
    if spec.kind != core.SINGLE_TEXT:
        raise ConfigError("rationale synthesis applies to single-text classification tasks only")
    template = spec.template(prompting.RATION)
    by_label: dict[str, tuple[str, ...]] = {}
    for label in spec.labels:
        try:
            phrases = llm.top_k_rationales(
                backend,
                label,
                template,
                spec.rationale_count,
                cache=cache,
                attempts=attempts,
                reason_count=spec.ration_reason_count,
            )
        except BackendError as exc:
            raise type(exc)(f"rationale synthesis for label {label!r} failed: {exc}") from exc
        by_label[label] = tuple(phrases)
    return RationaleSet(by_label=by_label)


def _generate_indexed(
    jobs: Sequence[Callable[[], core.Example]],
    parallel: int,
) -> list[core.Example]:
    """Run jobs with bounded fan-out; results ordered by job index."""
    if parallel <= 1 or len(jobs) <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=parallel) as pool:
        return list(pool.map(lambda job: job(), jobs))


def _generate_with_retry(
    backend: llm.Backend,
    cache: llm.ResponseCache | None,
    make_draw: Callable[[int], tuple[dict, str]],
    index: int,
    total: int,
    retry_budget: int,
    echo_strip: bool,
) -> tuple[dict, str, str]:
    """Generate one example's text, redrawing on failure up to the budget.

    ``make_draw(attempt)`` returns (draw fields, rendered prompt) — a fresh
    deterministic draw per attempt.  Returns (fields, prompt, text).
    """
    last_exc: Exception | None = None
    for attempt in range(retry_budget + 1):
        fields, prompt = make_draw(attempt)
        req = llm.GenerationRequest(prompt=prompt, sample_index=attempt * total + index)
        try:
            raw = llm.generate(backend, req, cache)[0]
        except BackendError as exc:
            last_exc = exc
            log.warning("generation failed (draw %d attempt %d): %s", index, attempt, exc)
            continue
        text = strip_echo(raw, prompt) if echo_strip else raw.strip()
        if text:
            return fields, prompt, text
        last_exc = BackendError("backend returned an empty completion")
    raise BackendError(
        f"generation for draw {index} failed after {retry_budget + 1} attempts: {last_exc}"
    )


def synthesize_seed(
    spec: core.TaskSpec,
    rations: RationaleSet,
    backend: llm.Backend,
    rng_seed: int,
    *,
    cache: llm.ResponseCache | None = None,
    parallel: int = 1,
    echo_strip: bool = True,
    retry_budget: int = 3,
    balance: bool = False,
) -> core.Dataset:
    """Rationale-guided seed synthesis for single-text classification.

    Produces exactly ``spec.seed_size`` examples.  Per example: a uniform
    label (or round-robin with ``balance``), a non-repeating k-subset of
    that label's rationales, and one completion under the query template.
    """
    if spec.kind != core.SINGLE_TEXT:
        raise ConfigError("seed synthesis with rationales applies to single-text tasks only")
    rations.validate_for(spec)
    template = spec.template(prompting.QUERY1)
    n = spec.seed_size
    rng = random.Random(rng_seed)

    def draw(index: int, attempt: int) -> tuple[dict, str]:
        if attempt == 0:
            r = rng
        else:
            r = random.Random(stable_seed(rng_seed, "retry", index, attempt))
        if balance:
            label = spec.labels[index % len(spec.labels)] if attempt == 0 else r.choice(spec.labels)
        else:
            label = spec.labels[r.randrange(len(spec.labels))]
        subset = r.sample(list(rations.for_label(label)), spec.rationales_per_query)
        prompt = prompting.render(
            template, {prompting.X: join_phrases(subset), prompting.Y: label}
        )
        return {"y": label}, prompt

    # Draw sequentially (one shared rng) so results do not depend on the
    # fan-out schedule; only generation runs concurrently.
    first_draws = [draw(i, 0) for i in range(n)]

    def job(index: int) -> core.Example:
        def make_draw(attempt: int) -> tuple[dict, str]:
            return first_draws[index] if attempt == 0 else draw(index, attempt)

        fields, prompt, text = _generate_with_retry(
            backend, cache, make_draw, index, max(n, 1), retry_budget, echo_strip
        )
        return core.Example(
            provenance=core.Provenance(
                stage=core.STAGE_SEED, round=0, prompt_hash=_prompt_hash(prompt)
            ),
            x=text,
            y=fields["y"],
        )

    jobs = [lambda i=i: job(i) for i in range(n)]
    examples = _generate_indexed(jobs, parallel)
    return core.Dataset.from_examples(spec, examples, on_id_collision="suffix")


def synthesize_seed_conditional(
    spec: core.TaskSpec,
    pool: ContextPool,
    backend: llm.Backend,
    rng_seed: int,
    *,
    cache: llm.ResponseCache | None = None,
    parallel: int = 1,
    echo_strip: bool = True,
    retry_budget: int = 3,
    without_replacement: bool = False,
) -> core.Dataset:
    """Context-conditioned seed synthesis for pair and QA tasks.

    Contexts are drawn uniformly with replacement (or in shuffled epochs
    with ``without_replacement`` for small pools); pair tasks also draw a
    uniform label.  The backend supplies the target sentence: a hypothesis
    or question.
    """
    if spec.kind not in (core.PAIR, core.CONTEXT_QA):
        raise ConfigError("conditional seed synthesis applies to pair and QA tasks only")
    if len(pool) == 0:
        raise ConfigError("context pool must be non-empty")
    template = spec.template(prompting.QUERY2)
    needs_answer = prompting.X_ANSWER in prompting.placeholders_in(template.body)
    n = spec.seed_size
    rng = random.Random(rng_seed)

    epoch_order: list[int] = []

    def next_context(r: random.Random, fresh: bool) -> ContextRecord:
        if without_replacement and not fresh:
            if not epoch_order:
                epoch_order.extend(r.sample(range(len(pool)), len(pool)))
            return pool.records[epoch_order.pop(0)]
        return pool.records[r.randrange(len(pool))]

    def draw(index: int, attempt: int) -> tuple[dict, str]:
        if attempt == 0:
            r = rng
        else:
            r = random.Random(stable_seed(rng_seed, "retry", index, attempt))
        record = next_context(r, fresh=attempt > 0)
        if needs_answer and not record.answer:
            raise ConfigError(
                "the query template uses the answer placeholder but the context pool has no answers"
            )
        bindings = {
            prompting.X: record.context,
            prompting.X_CONTEXT: record.context,
        }
        if record.answer is not None:
            bindings[prompting.X_ANSWER] = record.answer
        fields: dict = {"context": record.context, "answer": record.answer}
        if spec.kind == core.PAIR:
            label = spec.labels[r.randrange(len(spec.labels))]
            bindings[prompting.Y] = label
            fields["y"] = label
        prompt = prompting.render(template, bindings)
        return fields, prompt

    first_draws = [draw(i, 0) for i in range(n)]

    def job(index: int) -> core.Example:
        def make_draw(attempt: int) -> tuple[dict, str]:
            return first_draws[index] if attempt == 0 else draw(index, attempt)

        fields, prompt, text = _generate_with_retry(
            backend, cache, make_draw, index, max(n, 1), retry_budget, echo_strip
        )
        prov = core.Provenance(stage=core.STAGE_SEED, round=0, prompt_hash=_prompt_hash(prompt))
        if spec.kind == core.PAIR:
            return core.Example(provenance=prov, context=fields["context"], x=text, y=fields["y"])
        return core.Example(
            provenance=prov, context=fields["context"], answer=fields["answer"], question=text
        )

    jobs = [lambda i=i: job(i) for i in range(n)]
    examples = _generate_indexed(jobs, parallel)
    return core.Dataset.from_examples(spec, examples, on_id_collision="suffix")


def _prompt_hash(prompt: str) -> str:
    import hashlib

    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]
