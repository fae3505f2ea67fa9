"""Task metrics (accuracy, exact match, token F1) and training-cost accounting.

Answer normalization for the QA metrics follows the usual extractive-QA
convention: lowercase, strip punctuation, drop the articles a/an/the, and
collapse whitespace.  Token F1 is computed over bags (duplicates count).
"""

from __future__ import annotations

import re
import string
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from . import core
from .errors import ConfigError

_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_answer(text: str) -> str:
    text = text.lower()
    text = text.translate(_PUNCT_TABLE)
    text = _ARTICLE_RE.sub(" ", text)
    return " ".join(text.split())


def answer_tokens(text: str) -> list[str]:
    normalized = normalize_answer(text)
    return normalized.split() if normalized else []


def exact_match(pred: str, gold: str) -> int:
    return int(normalize_answer(pred) == normalize_answer(gold))


def token_f1(pred: str, gold: str) -> float:
    pred_tokens = answer_tokens(pred)
    gold_tokens = answer_tokens(gold)
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def accuracy(pred_values: Sequence[str], gold_values: Sequence[str]) -> float:
    if len(pred_values) != len(gold_values):
        raise ConfigError(
            f"prediction/gold misalignment: {len(pred_values)} predictions for {len(gold_values)} examples"
        )
    if not gold_values:
        raise ConfigError("accuracy is undefined on an empty evaluation set")
    correct = sum(1 for p, g in zip(pred_values, gold_values) if p == g)
    return correct / len(gold_values)


@dataclass(frozen=True)
class MetricsReport:
    n: int
    accuracy: float | None = None
    em: float | None = None
    f1: float | None = None

    def to_json(self) -> dict:
        out: dict = {"n": self.n}
        for name in ("accuracy", "em", "f1"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out


def evaluate_predictions(pred_values: Sequence[str], gold: core.Dataset, spec: core.TaskSpec) -> MetricsReport:
    """Score aligned prediction values against a gold dataset."""
    if len(pred_values) != len(gold):
        raise ConfigError(
            f"prediction/gold misalignment: {len(pred_values)} predictions for {len(gold)} examples"
        )
    if spec.kind == core.CONTEXT_QA:
        if not len(gold):
            raise ConfigError("cannot evaluate an empty gold dataset")
        ems = [exact_match(p, ex.answer or "") for p, ex in zip(pred_values, gold)]
        f1s = [token_f1(p, ex.answer or "") for p, ex in zip(pred_values, gold)]
        return MetricsReport(n=len(gold), em=sum(ems) / len(ems), f1=sum(f1s) / len(f1s))
    acc = accuracy(pred_values, [ex.y or "" for ex in gold])
    return MetricsReport(n=len(gold), accuracy=acc)


# Training-cost model for BERT-family fine-tuning.
FLOPS_PER_TOKEN_PER_PARAM = 6.0


@dataclass(frozen=True)
class StageCost:
    records: float
    epochs: float
    flops: float


@dataclass(frozen=True)
class FlopsReport:
    per_record_flops: float
    per_stage: tuple[StageCost, ...]
    total: float

    def to_json(self) -> dict:
        return {
            "per_record_flops": self.per_record_flops,
            "per_stage": [
                {"records": s.records, "epochs": s.epochs, "flops": s.flops} for s in self.per_stage
            ],
            "total": self.total,
        }


def flops(n_para: float, seq_len: float, stages: Sequence[tuple[float, float]]) -> FlopsReport:
    """Fine-tuning cost: 6 FLOPs per token per parameter, per record, per epoch."""
    if n_para <= 0 or seq_len <= 0:
        raise ConfigError("parameter count and sequence length must be positive")
    per_record = FLOPS_PER_TOKEN_PER_PARAM * seq_len * n_para
    costs = []
    for records, epochs in stages:
        if records <= 0 or epochs <= 0:
            raise ConfigError("stage record and epoch counts must be positive")
        costs.append(StageCost(records=records, epochs=epochs, flops=per_record * records * epochs))
    return FlopsReport(
        per_record_flops=per_record,
        per_stage=tuple(costs),
        total=sum(s.flops for s in costs),
    )
