"""Small-model training backends and misclassification extraction.

The builtin backend is a multinomial naive Bayes text classifier over
lowercased word tokens with Laplace smoothing — deliberately the smallest
trainable model that lets the whole pipeline run offline and
deterministically.  Real models plug in through the external trainer wire
protocol: JSON lines over a subprocess's stdin/stdout with the commands
hello / train / predict / shutdown.  Training always builds a fresh model;
nothing carries over between rounds.
"""

from __future__ import annotations

import json
import logging
import math
import re
import shlex
import subprocess
import tempfile
import threading
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from . import core, metrics
from .errors import ConfigError, TrainerProtocolError

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1

_WORD_RE = re.compile(r"\w+")


def tokenize(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


@dataclass
class TrainerConfig:
    backend: str = "builtin_nb"
    smoothing: float = 1.0
    external_cmd: str | None = None
    hyperparameters: dict = field(default_factory=dict)
    # Train messages switch from inline rows to a dataset_path file above this size.
    dataset_path_threshold: int = 2000

    def __post_init__(self) -> None:
        if self.backend not in ("builtin_nb", "external"):
            raise ConfigError(f"unknown trainer backend {self.backend!r}")
        if self.smoothing <= 0:
            raise ConfigError("smoothing must be positive")
        if self.backend == "external" and not self.external_cmd:
            raise ConfigError("external trainer backend requires external_cmd")
        self._client: ExternalTrainerClient | None = None

    def client(self) -> "ExternalTrainerClient":
        if self._client is None or not self._client.alive():
            self._client = ExternalTrainerClient(self.external_cmd or "")
        return self._client

    def close(self) -> None:
        if self._client is not None:
            self._client.close()
            self._client = None


@dataclass(frozen=True)
class Prediction:
    value: str
    score: float | None = None


@dataclass(frozen=True)
class PredictionSet:
    predictions: tuple[Prediction, ...]

    def __len__(self) -> int:
        return len(self.predictions)

    def __iter__(self):
        return iter(self.predictions)

    @property
    def values(self) -> list[str]:
        return [p.value for p in self.predictions]


@dataclass(frozen=True)
class Misclassified:
    example: core.Example
    prediction: str
    error_id: str


@dataclass(frozen=True)
class MisclassifiedSet:
    items: tuple[Misclassified, ...]

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)


def _example_text(ex: core.Example, kind: str) -> str:
    if kind == core.PAIR:
        # Toy treatment: context and target joined with a separator token.
        return f"{ex.context} [sep] {ex.x}"
    return ex.x or ""


class NaiveBayesModel:
    """Multinomial naive Bayes with Laplace smoothing.

    Tokens never seen in training are dropped at prediction time, so with
    no in-vocabulary evidence the prediction falls back to the class
    prior; score ties resolve toward the lower label index.
    """

    def __init__(self, kind: str, labels: Sequence[str], alpha: float):
        self.kind = kind
        self.labels = tuple(labels)
        self.alpha = alpha
        self.token_counts: dict[str, Counter] = {label: Counter() for label in self.labels}
        self.total_tokens: dict[str, int] = {label: 0 for label in self.labels}
        self.doc_counts: dict[str, int] = {label: 0 for label in self.labels}
        self.n_docs = 0
        self.vocab: set[str] = set()

    @classmethod
    def fit(cls, dataset: core.Dataset, alpha: float) -> "NaiveBayesModel":
        task = dataset.task
        if task is None:
            raise ConfigError("builtin trainer needs a dataset with an attached task spec")
        model = cls(task.kind, task.labels, alpha)
        for ex in dataset:
            label = ex.y or ""
            if label not in model.token_counts:
                raise ConfigError(f"example label {label!r} is not in the task label set")
            tokens = tokenize(_example_text(ex, task.kind))
            model.token_counts[label].update(tokens)
            model.total_tokens[label] += len(tokens)
            model.doc_counts[label] += 1
            model.vocab.update(tokens)
        model.n_docs = len(dataset)
        return model

    def predict_text(self, text: str) -> tuple[str, float]:
        tokens = [t for t in tokenize(text) if t in self.vocab]
        vocab_size = max(len(self.vocab), 1)
        best_label = self.labels[0]
        best_score = -math.inf
        for label in self.labels:
            if self.doc_counts[label] == 0:
                continue
            score = math.log(self.doc_counts[label] / self.n_docs)
            denom = self.total_tokens[label] + self.alpha * vocab_size
            for t in tokens:
                score += math.log((self.token_counts[label][t] + self.alpha) / denom)
            if score > best_score:
                best_label, best_score = label, score
        return best_label, best_score

    def predict(self, dataset: core.Dataset) -> PredictionSet:
        kind = dataset.task.kind if dataset.task else self.kind
        if kind != self.kind:
            raise ConfigError(f"model trained for {self.kind} cannot predict {kind} data")
        preds = []
        for ex in dataset:
            value, score = self.predict_text(_example_text(ex, kind))
            preds.append(Prediction(value=value, score=score))
        return PredictionSet(predictions=tuple(preds))


class ExternalTrainerClient:
    """Serialized JSON-lines client for an external trainer subprocess."""

    def __init__(self, cmd: str):
        if not cmd:
            raise ConfigError("external trainer command is empty")
        self.cmd = cmd
        try:
            self.proc = subprocess.Popen(
                shlex.split(cmd),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise TrainerProtocolError(f"could not start external trainer {cmd!r}: {exc}") from None
        self._lock = threading.Lock()
        self._stderr_thread = threading.Thread(target=self._pump_stderr, daemon=True)
        self._stderr_thread.start()
        self.info = self._request({"cmd": "hello"})
        if "kinds" not in self.info:
            raise TrainerProtocolError("external trainer hello response lacks 'kinds'")

    def _pump_stderr(self) -> None:
        assert self.proc.stderr is not None
        for line in self.proc.stderr:
            log.info("external trainer: %s", line.rstrip("\n"))

    def alive(self) -> bool:
        return self.proc.poll() is None

    def _request(self, obj: dict) -> dict:
        with self._lock:
            if not self.alive():
                raise TrainerProtocolError("external trainer process has exited")
            assert self.proc.stdin is not None and self.proc.stdout is not None
            self.proc.stdin.write(json.dumps(obj, ensure_ascii=False) + "\n")
            self.proc.stdin.flush()
            line = self.proc.stdout.readline()
        if not line:
            raise TrainerProtocolError("external trainer closed its output stream")
        try:
            resp = json.loads(line)
        except json.JSONDecodeError:
            raise TrainerProtocolError(f"external trainer sent invalid JSON: {line[:200]!r}") from None
        if not resp.get("ok", False):
            raise TrainerProtocolError(f"external trainer error: {resp.get('error', 'unknown')}")
        return resp

    def train(self, dataset: core.Dataset, config: Mapping, threshold: int) -> dict:
        kind = dataset.task.kind if dataset.task else core.SINGLE_TEXT
        rows = [core.example_to_record(ex, kind) for ex in dataset]
        msg: dict = {"cmd": "train", "config": dict(config)}
        if len(rows) > threshold:
            tmp = tempfile.NamedTemporaryFile(
                "w", suffix=".jsonl", prefix="s3-train-", delete=False, encoding="utf-8"
            )
            with tmp as fh:
                for row in rows:
                    fh.write(json.dumps(row, ensure_ascii=False) + "\n")
            msg["dataset_path"] = tmp.name
        else:
            msg["dataset"] = rows
        resp = self._request(msg)
        if "dataset_path" in msg:
            Path(msg["dataset_path"]).unlink(missing_ok=True)
        return resp.get("train_report", {})

    def predict(self, dataset: core.Dataset) -> PredictionSet:
        kind = dataset.task.kind if dataset.task else core.SINGLE_TEXT
        rows = [core.example_to_record(ex, kind) for ex in dataset]
        resp = self._request({"cmd": "predict", "examples": rows})
        raw = resp.get("predictions")
        if not isinstance(raw, list) or len(raw) != len(rows):
            raise TrainerProtocolError(
                f"external trainer returned {len(raw) if isinstance(raw, list) else 'no'} "
                f"predictions for {len(rows)} examples"
            )
        preds = []
        for item in raw:
            if isinstance(item, str):
                preds.append(Prediction(value=item))
            elif isinstance(item, Mapping) and "value" in item:
                preds.append(Prediction(value=str(item["value"]), score=item.get("score")))
            else:
                raise TrainerProtocolError(f"malformed prediction item: {item!r}")
        return PredictionSet(predictions=tuple(preds))

    def shutdown(self) -> None:
        try:
            self._request({"cmd": "shutdown"})
        except TrainerProtocolError:
            pass

    def close(self) -> None:
        if self.alive():
            self.shutdown()
            try:
                self.proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                self.proc.terminate()
        for stream in (self.proc.stdin, self.proc.stdout):
            if stream:
                stream.close()


class ExternalModel:
    def __init__(self, client: ExternalTrainerClient, kind: str, train_report: dict):
        self.client = client
        self.kind = kind
        self.train_report = train_report

    def predict(self, dataset: core.Dataset) -> PredictionSet:
        return self.client.predict(dataset)


def train(cfg: TrainerConfig, dataset: core.Dataset):
    """Train a fresh model on the dataset (no state across calls)."""
    if len(dataset) == 0:
        raise ConfigError("cannot train on an empty dataset")
    if cfg.backend == "builtin_nb":
        kind = dataset.task.kind if dataset.task else None
        if kind == core.CONTEXT_QA:
            raise ConfigError("builtin_nb supports classification kinds only, not context_qa")
        return NaiveBayesModel.fit(dataset, cfg.smoothing)
    client = cfg.client()
    task = dataset.task
    config = dict(cfg.hyperparameters)
    if task is not None:
        config.setdefault("kind", task.kind)
        config.setdefault("labels", list(task.labels))
    report = client.train(dataset, config, cfg.dataset_path_threshold)
    return ExternalModel(client, task.kind if task else core.SINGLE_TEXT, report)


def predict(model, dataset: core.Dataset) -> PredictionSet:
    return model.predict(dataset)


def is_correct(prediction: str, ex: core.Example, spec: core.TaskSpec) -> bool:
    """The task's correctness test: label equality, or EM / token-F1 for QA."""
    if spec.kind == core.CONTEXT_QA:
        gold = ex.answer or ""
        if metrics.exact_match(prediction, gold):
            return True
        return metrics.token_f1(prediction, gold) >= spec.qa_f1_threshold
    return prediction == ex.y


def misclassified(preds: PredictionSet, gold: core.Dataset, spec: core.TaskSpec) -> MisclassifiedSet:
    """Gold examples the model got wrong, each with its wrong prediction.

    Classification: predicted label differs from the gold label.  QA: no
    exact match and token F1 below the task threshold.
    """
    if len(preds) != len(gold):
        raise ConfigError(
            f"prediction/gold misalignment: {len(preds)} predictions for {len(gold)} examples"
        )
    items = []
    for pred, ex in zip(preds, gold):
        if not is_correct(pred.value, ex, spec):
            items.append(Misclassified(example=ex, prediction=pred.value, error_id=ex.id or ""))
    return MisclassifiedSet(items=tuple(items))
