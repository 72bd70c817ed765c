"""Offline adaptation: continue masked-LM training on seed text and
persist the result as a new model directory.

Runs strictly before serving, never concurrently with it. The training
log is written next to the weights so the loss trajectory can be
inspected after the fact.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List

import torch

from .model import ModelError, load_model_dir, read_corpus

logger = logging.getLogger(__name__)

LOG_NAME = "training_log.json"


class AdaptError(ValueError):
    """Raised for invalid adaptation settings or insufficient data."""


@dataclass(frozen=True)
class AdaptConfig:
    steps: int = 30
    mask_rate: float = 0.15
    lr: float = 5e-3
    batch_size: int = 8
    max_length: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise AdaptError(f"steps must be >= 0, got {self.steps}")
        if not 0.0 < self.mask_rate < 1.0:
            raise AdaptError(f"mask rate must be in (0, 1), got {self.mask_rate!r}")
        if self.lr <= 0:
            raise AdaptError(f"learning rate must be positive, got {self.lr!r}")
        if self.batch_size < 1:
            raise AdaptError(f"batch size must be >= 1, got {self.batch_size}")


@dataclass
class TrainingLog:
    base_model: str
    out_dir: str
    num_utterances: int
    config: AdaptConfig
    losses: List[float]

    def as_dict(self) -> dict:
        d = asdict(self)
        d["config"] = asdict(self.config)
        return d


def _mask_batch(ids, attention, special, mask_rate, mask_token_id, generator):
    """BERT-style masking: replace a random subset of non-special positions
    with the mask token; at least one per example so every row trains."""
    maskable = ~special & (attention == 1)
    selected = (torch.rand(ids.shape, generator=generator) < mask_rate) & maskable
    for row in range(ids.shape[0]):
        if not selected[row].any():
            options = maskable[row].nonzero().flatten()
            pick = options[torch.randint(len(options), (1,), generator=generator)]
            selected[row, pick] = True
    labels = torch.where(selected, ids, torch.tensor(-100))
    masked = ids.clone()
    masked[selected] = mask_token_id
    return masked, labels


def adapt_model(model_dir, corpus_path, out_dir, config: AdaptConfig = AdaptConfig()) -> TrainingLog:
    """Fine-tune the model at ``model_dir`` on masked seed sequences and
    save the artifact to ``out_dir``. steps=0 persists the base behavior
    unchanged."""
    lines = read_corpus(corpus_path)
    if len(lines) < config.batch_size:
        raise AdaptError(
            f"corpus has {len(lines)} utterances but one batch needs "
            f"{config.batch_size}"
        )
    model, tokenizer = load_model_dir(model_dir)

    enc = tokenizer(
        lines,
        padding=True,
        truncation=True,
        max_length=config.max_length,
        return_tensors="pt",
    )
    ids, attention = enc["input_ids"], enc["attention_mask"]
    special = torch.zeros_like(ids, dtype=torch.bool)
    for sid in tokenizer.all_special_ids:
        special |= ids == sid

    generator = torch.Generator().manual_seed(config.seed)
    torch.manual_seed(config.seed)
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.lr)
    losses: List[float] = []
    model.train()
    for step in range(config.steps):
        pick = torch.randperm(len(lines), generator=generator)[: config.batch_size]
        masked, labels = _mask_batch(
            ids[pick], attention[pick], special[pick],
            config.mask_rate, tokenizer.mask_token_id, generator,
        )
        loss = model(
            input_ids=masked, attention_mask=attention[pick], labels=labels
        ).loss
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses.append(loss.item())
        logger.info("step %d/%d loss %.4f", step + 1, config.steps, losses[-1])
    model.eval()

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model.save_pretrained(out)
    tokenizer.save_pretrained(out)
    log = TrainingLog(
        base_model=str(model_dir),
        out_dir=str(out),
        num_utterances=len(lines),
        config=config,
        losses=losses,
    )
    (out / LOG_NAME).write_text(
        json.dumps(log.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return log
