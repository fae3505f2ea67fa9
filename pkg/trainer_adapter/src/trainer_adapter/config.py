"""Adapter configuration: model choice and fine-tuning hyperparameters."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class AdapterConfig:
    # "tiny" builds a small randomly initialized transformer with a hashing
    # tokenizer (fully offline); any other value is treated as a
    # Hugging-Face-style checkpoint name and needs the `pretrained` extra.
    model: str = "tiny"
    epochs: int = 20
    batch_size: int = 16
    learning_rate: float = 5e-3
    weight_decay: float = 0.01
    max_length: int = 48
    seed: int = 0
    kind: str = "single_text_classification"
    labels: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("learning_rate must be positive and weight_decay non-negative")
        if self.max_length <= 0:
            raise ValueError("max_length must be positive")

    @classmethod
    def from_message(cls, raw: dict) -> "AdapterConfig":
        known = {f for f in cls.__dataclass_fields__}
        kwargs = {k: v for k, v in raw.items() if k in known}
        return cls(**kwargs)
