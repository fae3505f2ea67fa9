"""Classifier backends for the adapter.

The default is a tiny randomly initialized transformer encoder over
hash-bucketed word tokens — no downloads, CPU-friendly, deterministic
given the seed.  Passing a checkpoint name instead loads a pretrained
sequence-classification model through the transformers library, which is
how a real distilled BERT slots in.
"""

from __future__ import annotations

import hashlib
import re

import torch
from torch import nn

from .config import AdapterConfig

_WORD_RE = re.compile(r"\w+")
_PAD = 0
_VOCAB = 512


def _tokenize(text: str, max_length: int) -> list[int]:
    ids = []
    for token in _WORD_RE.findall(text.lower())[:max_length]:
        bucket = int.from_bytes(hashlib.sha1(token.encode()).digest()[:4], "big")
        ids.append(1 + bucket % (_VOCAB - 1))
    return ids or [_PAD]


def example_text(row: dict, kind: str) -> str:
    if kind == "pair_classification":
        return f"{row.get('context', '')} [sep] {row.get('x', '')}"
    return row.get("x", "") or ""


class TinyTransformerClassifier(nn.Module):
    def __init__(self, num_labels: int, d_model: int = 32):
        super().__init__()
        self.embed = nn.Embedding(_VOCAB, d_model, padding_idx=_PAD)
        layer = nn.TransformerEncoderLayer(
            d_model=d_model, nhead=4, dim_feedforward=64, batch_first=True,
            dropout=0.0,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=1)
        self.head = nn.Linear(d_model, num_labels)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        mask = ids.eq(_PAD)
        hidden = self.encoder(self.embed(ids), src_key_padding_mask=mask)
        keep = (~mask).unsqueeze(-1).float()
        pooled = (hidden * keep).sum(dim=1) / keep.sum(dim=1).clamp(min=1.0)
        return self.head(pooled)


class TinyBackend:
    """Train-from-scratch tiny transformer; rebuilt on every train call."""

    def __init__(self, cfg: AdapterConfig):
        self.cfg = cfg
        self.labels = list(cfg.labels)
        self.model: TinyTransformerClassifier | None = None

    def _batch(self, rows: list[dict]) -> torch.Tensor:
        seqs = [_tokenize(example_text(r, self.cfg.kind), self.cfg.max_length) for r in rows]
        width = max(len(s) for s in seqs)
        return torch.tensor([s + [_PAD] * (width - len(s)) for s in seqs], dtype=torch.long)

    def train(self, rows: list[dict]) -> dict:
        if not self.labels:
            # fall back to label order of first appearance in the data
            for row in rows:
                y = row.get("y")
                if y is not None and y not in self.labels:
                    self.labels.append(y)
        if not self.labels:
            raise ValueError("no labels: pass them in the config or label the dataset")
        torch.manual_seed(self.cfg.seed)
        self.model = TinyTransformerClassifier(num_labels=len(self.labels))
        optimizer = torch.optim.AdamW(
            self.model.parameters(),
            lr=self.cfg.learning_rate,
            weight_decay=self.cfg.weight_decay,
        )
        loss_fn = nn.CrossEntropyLoss()
        targets = torch.tensor([self.labels.index(r["y"]) for r in rows], dtype=torch.long)
        ids = self._batch(rows)
        self.model.train()
        final_loss = 0.0
        n = len(rows)
        for _epoch in range(self.cfg.epochs):
            perm = torch.randperm(n)
            for start in range(0, n, self.cfg.batch_size):
                idx = perm[start:start + self.cfg.batch_size]
                optimizer.zero_grad()
                logits = self.model(ids[idx])
                loss = loss_fn(logits, targets[idx])
                loss.backward()
                optimizer.step()
                final_loss = float(loss.item())
        return {"n": n, "epochs": self.cfg.epochs, "final_loss": final_loss,
                "labels": self.labels}

    @torch.no_grad()
    def predict(self, rows: list[dict]) -> list[dict]:
        if self.model is None:
            raise RuntimeError("predict before train")
        self.model.eval()
        out = []
        for start in range(0, len(rows), self.cfg.batch_size):
            chunk = rows[start:start + self.cfg.batch_size]
            probs = torch.softmax(self.model(self._batch(chunk)), dim=-1)
            best = probs.argmax(dim=-1)
            for i in range(len(chunk)):
                out.append({"value": self.labels[int(best[i])],
                            "score": float(probs[i, int(best[i])])})
        return out


class PretrainedBackend:
    """Sequence classification on top of a transformers checkpoint.

    Reloads the base checkpoint on every train call, so each round starts
    from the same initialization.
    """

    def __init__(self, cfg: AdapterConfig):
        try:
            from transformers import AutoModelForSequenceClassification, AutoTokenizer
        except ImportError as exc:  # pragma: no cover
            raise RuntimeError(
                "pretrained checkpoints need the 'pretrained' extra (transformers)"
            ) from exc
        self._auto_model = AutoModelForSequenceClassification
        self.cfg = cfg
        self.labels = list(cfg.labels)
        self.tokenizer = AutoTokenizer.from_pretrained(cfg.model)
        self.model = None

    def _encode(self, rows: list[dict]):
        if self.cfg.kind == "pair_classification":
            return self.tokenizer(
                [r.get("context", "") for r in rows], [r.get("x", "") for r in rows],
                truncation=True, max_length=self.cfg.max_length,
                padding=True, return_tensors="pt")
        return self.tokenizer(
            [r.get("x", "") or "" for r in rows], truncation=True,
            max_length=self.cfg.max_length, padding=True, return_tensors="pt")

    def train(self, rows: list[dict]) -> dict:
        if not self.labels:
            self.labels = sorted({r["y"] for r in rows if r.get("y") is not None})
        torch.manual_seed(self.cfg.seed)
        self.model = self._auto_model.from_pretrained(
            self.cfg.model, num_labels=len(self.labels))
        optimizer = torch.optim.AdamW(
            self.model.parameters(), lr=self.cfg.learning_rate,
            weight_decay=self.cfg.weight_decay)
        targets = torch.tensor([self.labels.index(r["y"]) for r in rows], dtype=torch.long)
        self.model.train()
        final_loss = 0.0
        for _epoch in range(self.cfg.epochs):
            for start in range(0, len(rows), self.cfg.batch_size):
                chunk = rows[start:start + self.cfg.batch_size]
                enc = self._encode(chunk)
                out = self.model(**enc, labels=targets[start:start + len(chunk)])
                optimizer.zero_grad()
                out.loss.backward()
                optimizer.step()
                final_loss = float(out.loss.item())
        return {"n": len(rows), "epochs": self.cfg.epochs, "final_loss": final_loss,
                "labels": self.labels}

    @torch.no_grad()
    def predict(self, rows: list[dict]) -> list[dict]:
        if self.model is None:
            raise RuntimeError("predict before train")
        self.model.eval()
        out = []
        for start in range(0, len(rows), self.cfg.batch_size):
            chunk = rows[start:start + self.cfg.batch_size]
            probs = torch.softmax(self.model(**self._encode(chunk)).logits, dim=-1)
            best = probs.argmax(dim=-1)
            for i in range(len(chunk)):
                out.append({"value": self.labels[int(best[i])],
                            "score": float(probs[i, int(best[i])])})
        return out


def make_backend(cfg: AdapterConfig):
    if cfg.model == "tiny":
        return TinyBackend(cfg)
    return PretrainedBackend(cfg)
