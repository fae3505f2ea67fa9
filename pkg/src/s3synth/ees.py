"""The error-extrapolation loop.

Each round rebuilds the training set from the seed data plus everything
added so far, trains a fresh small model, collects its errors on the gold
validation split, and asks the generation backend for one lookalike
example per error (label and context copied from the error).  The loop
stops early when there are no errors or when the validation metric stops
improving; a final model is then trained on the complete dataset for
reporting.  Gold test data is scored for the reports only and never
influences any decision.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable

from . import core, llm, metrics, prompting, trainer
from .errors import BackendError, ConfigError
from .synthesis import _generate_indexed, strip_echo

log = logging.getLogger(__name__)

# Validation-metric gain (in metric points, 0-1 scale) below which the
# model is considered converged: 0.5 points.
CONVERGENCE_DELTA = 0.005

# Sample-index stride per round so re-extrapolating the same error in a
# later round draws a fresh completion instead of a cache hit.
_ROUND_STRIDE = 1_000_000


@dataclass
class RoundReport:
    round: int
    train_size: int
    val_metrics: metrics.MetricsReport | None = None
    test_metrics: metrics.MetricsReport | None = None
    mis_count: int | None = None
    add_count: int | None = None
    skipped: int = 0
    wall_time_s: float = 0.0
    backend_calls: int = 0
    stop_reason: str | None = None
    final: bool = False

    def to_json(self, *, include_timing: bool = False) -> dict:
        # Wall time is volatile; it is excluded by default so report files
        # are byte-identical across reruns of the same seed.
        out: dict = {"round": self.round, "train_size": self.train_size, "final": self.final}
        if self.val_metrics is not None:
            out["val"] = self.val_metrics.to_json()
        if self.test_metrics is not None:
            out["test"] = self.test_metrics.to_json()
        if self.mis_count is not None:
            out["mis_count"] = self.mis_count
        if self.add_count is not None:
            out["add_count"] = self.add_count
        if self.skipped:
            out["skipped"] = self.skipped
        out["backend_calls"] = self.backend_calls
        if self.stop_reason:
            out["stop_reason"] = self.stop_reason
        if include_timing:
            out["wall_time_s"] = self.wall_time_s
        return out


def _mis_bindings(item: trainer.Misclassified, spec: core.TaskSpec) -> dict[str, str]:
    ex = item.example
    if spec.kind == core.SINGLE_TEXT:
        return {prompting.X: ex.x or "", prompting.Y: ex.y or ""}
    if spec.kind == core.PAIR:
        # Which placeholder names the target sentence varies by template
        # (question vs hypothesis); bind all aliases.
        return {
            prompting.X_PREMISE: ex.context or "",
            prompting.X_QUESTION: ex.x or "",
            prompting.X_HYPOTHESIS: ex.x or "",
            prompting.Y: ex.y or "",
        }
    return {
        prompting.X_CONTEXT: ex.context or "",
        prompting.X_ANSWER: ex.answer or "",
        prompting.X_QUESTION: ex.question or "",
    }


def extrapolate_errors(
    mis: trainer.MisclassifiedSet,
    spec: core.TaskSpec,
    backend: llm.Backend,
    *,
    round_index: int = 1,
    cache: llm.ResponseCache | None = None,
    expansion: int = 1,
    parallel: int = 1,
    echo_strip: bool = True,
    retry_budget: int = 3,
) -> core.Dataset:
    """One lookalike example per error (times ``expansion``).

    The error's label — and its context for pair/QA kinds — is copied
    unchanged; only the free-text part is newly synthesized.  Errors whose
    generation keeps failing are skipped with a warning rather than
    aborting the round.
    """
    if expansion < 1:
        raise ConfigError("expansion must be >= 1")
    role = prompting.MIS1 if spec.kind == core.SINGLE_TEXT else prompting.MIS2
    template = spec.template(role)

    def job(item: trainer.Misclassified, slot: int, sample: int) -> core.Example | None:
        prompt = prompting.render(template, _mis_bindings(item, spec))
        base_index = round_index * _ROUND_STRIDE + slot * expansion + sample
        last_exc: Exception | None = None
        for attempt in range(retry_budget + 1):
            req = llm.GenerationRequest(
                prompt=prompt, sample_index=base_index + attempt * _ROUND_STRIDE // 2
            )
            try:
                raw = llm.generate(backend, req, cache)[0]
            except BackendError as exc:
                last_exc = exc
                continue
            text = strip_echo(raw, prompt) if echo_strip else raw.strip()
            if text:
                prov = core.Provenance(
                    stage=core.STAGE_ADD,
                    round=round_index,
                    source_error_id=item.error_id,
                    prompt_hash=llm.request_digest(req),
                )
                ex = item.example
                if spec.kind == core.SINGLE_TEXT:
                    return core.Example(provenance=prov, x=text, y=ex.y)
                if spec.kind == core.PAIR:
                    return core.Example(provenance=prov, context=ex.context, x=text, y=ex.y)
                return core.Example(
                    provenance=prov, context=ex.context, answer=ex.answer, question=text
                )
        log.warning(
            "skipping error %s: generation failed after %d attempts: %s",
            item.error_id,
            retry_budget + 1,
            last_exc,
        )
        return None

    jobs: list[Callable[[], core.Example | None]] = []
    for slot, item in enumerate(mis):
        for sample in range(expansion):
            jobs.append(lambda it=item, s=slot, e=sample: job(it, s, e))
    results = _generate_indexed(jobs, parallel)
    examples = [ex for ex in results if ex is not None]
    return core.Dataset.from_examples(spec, examples, on_id_collision="suffix")


def _metric_for_convergence(report: metrics.MetricsReport, kind: str) -> float:
    if kind == core.CONTEXT_QA:
        return report.f1 or 0.0
    return report.accuracy or 0.0


def run_ees(
    spec: core.TaskSpec,
    seed: core.Dataset,
    gold_val: core.Dataset,
    gold_test: core.Dataset | None = None,
    trainer_cfg: trainer.TrainerConfig | None = None,
    backend: llm.Backend | None = None,
    *,
    rounds: int | None = None,
    cache: llm.ResponseCache | None = None,
    expansion: int = 1,
    parallel: int = 1,
    echo_strip: bool = True,
    convergence_delta: float = CONVERGENCE_DELTA,
) -> tuple[core.Dataset, list[RoundReport]]:
    """Run the full loop; returns the final dataset and per-round reports.

    Reports 0..R'-1 cover the extrapolation rounds actually run; if new
    data was added after the last trained model, one more report covers
    the final model trained on the complete dataset.  The final dataset is
    always ``seed`` plus every added set, in round order.
    """
    rounds = spec.ees_rounds if rounds is None else rounds
    if rounds < 0:
        raise ConfigError("rounds must be >= 0")
    if rounds >= 1 and len(gold_val) == 0:
        raise ConfigError("gold validation data is required when rounds >= 1")
    trainer_cfg = trainer_cfg or trainer.TrainerConfig()
    if rounds >= 1 and backend is None:
        raise ConfigError("a generation backend is required when rounds >= 1")

    def evaluate(model) -> tuple[metrics.MetricsReport, metrics.MetricsReport | None, trainer.PredictionSet]:
        val_preds = trainer.predict(model, gold_val) if len(gold_val) else trainer.PredictionSet(())
        val_report = (
            metrics.evaluate_predictions(val_preds.values, gold_val, spec) if len(gold_val) else None
        )
        test_report = None
        if gold_test is not None and len(gold_test):
            test_preds = trainer.predict(model, gold_test)
            test_report = metrics.evaluate_predictions(test_preds.values, gold_test, spec)
        return val_report, test_report, val_preds  # type: ignore[return-value]

    reports: list[RoundReport] = []
    adds: list[core.Dataset] = []
    prev_metric: float | None = None
    trained_add_sets = 0  # add sets included in the most recently trained model
    calls_before = backend.calls if backend is not None else 0

    for q in range(rounds):
        t0 = time.monotonic()
        train_q = core.merge([seed, *adds], task=spec)
        model = trainer.train(trainer_cfg, train_q)
        trained_add_sets = len(adds)
        val_report, test_report, val_preds = evaluate(model)
        mis = trainer.misclassified(val_preds, gold_val, spec)
        report = RoundReport(
            round=q,
            train_size=len(train_q),
            val_metrics=val_report,
            test_metrics=test_report,
            mis_count=len(mis),
        )

        if len(mis) == 0:
            report.stop_reason = "no_errors"
            report.add_count = 0
        else:
            metric = _metric_for_convergence(val_report, spec.kind)
            if prev_metric is not None and metric - prev_metric < convergence_delta:
                report.stop_reason = "converged"
                report.add_count = 0
            else:
                prev_metric = metric
                add = extrapolate_errors(
                    mis,
                    spec,
                    backend,  # type: ignore[arg-type]
                    round_index=q + 1,
                    cache=cache,
                    expansion=expansion,
                    parallel=parallel,
                    echo_strip=echo_strip,
                )
                adds.append(add)
                report.add_count = len(add)
                report.skipped = len(mis) * expansion - len(add)

        calls_now = backend.calls if backend is not None else 0
        report.backend_calls = calls_now - calls_before
        calls_before = calls_now
        report.wall_time_s = time.monotonic() - t0
        reports.append(report)
        if report.stop_reason:
            break

    final = core.merge([seed, *adds], task=spec)

    ran_all_rounds_with_new_data = len(adds) > trained_add_sets or not reports
    if ran_all_rounds_with_new_data:
        # The complete dataset has not been trained on yet (or R=0): one
        # final train/evaluate pass for reporting.
        t0 = time.monotonic()
        model = trainer.train(trainer_cfg, final)
        val_report, test_report, _ = evaluate(model)
        calls_now = backend.calls if backend is not None else 0
        reports.append(
            RoundReport(
                round=len(reports),
                train_size=len(final),
                val_metrics=val_report,
                test_metrics=test_report,
                backend_calls=calls_now - calls_before,
                wall_time_s=time.monotonic() - t0,
                final=True,
            )
        )
    else:
        reports[-1].final = True

    return final, reports
