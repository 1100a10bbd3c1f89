"""Conditional flow matching.

Training regresses a velocity field onto the straight-line displacement
between a noise draw x0 ~ N(0, I) and a data sample x1, evaluated on the
linear interpolation x_t = (1 - t) x0 + t x1 with t ~ U(0, 1) drawn per
batch element. Condition dropout runs inside the loss so classifier-free
guidance works at sampling time.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conditioning import ConditioningEncoder, PromptSpec, apply_condition_dropout
from .errors import ContractError, DimensionError, NumericAbort
from .lrc import LrcDocument
from .optim import adam_init, adam_step, clip_grad_norm
from .tensor import Tensor, add, backward, mse, scale, zero_grads

__all__ = [
    "interpolate",
    "target_velocity",
    "TrainExample",
    "TrainBatch",
    "TrainConfig",
    "FixedDataset",
    "cfm_loss",
    "TrainReport",
    "train",
]


def interpolate(x0: np.ndarray, x1: np.ndarray, t: float) -> np.ndarray:
    """x_t = (1 - t) x0 + t x1, exact at both endpoints."""
    if x0.shape != x1.shape:
        raise DimensionError(f"interpolate: shapes {x0.shape} vs {x1.shape}")
    if not (0.0 <= t <= 1.0):
        raise ContractError(f"t={t} outside [0, 1]")
    if t == 0.0:
        return x0.copy()
    if t == 1.0:
        return x1.copy()
    return (1.0 - t) * x0 + t * x1


def target_velocity(x0: np.ndarray, x1: np.ndarray) -> np.ndarray:
    """The regression target x1 - x0; independent of t."""
    if x0.shape != x1.shape:
        raise DimensionError(f"target_velocity: shapes {x0.shape} vs {x1.shape}")
    return x1 - x0


@dataclass(frozen=True)
class TrainExample:
    id: str
    spec: PromptSpec
    doc: LrcDocument | None
    x1: np.ndarray


@dataclass(frozen=True)
class TrainBatch:
    examples: tuple[TrainExample, ...]

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        if not self.examples:
            raise ContractError("batch must be non-empty")
        shape = self.examples[0].x1.shape
        if any(ex.x1.shape != shape for ex in self.examples):
            raise DimensionError("batch elements must share T and d_audio")

    def ids(self) -> list[str]:
        return [ex.id for ex in self.examples]


class FixedDataset:
    """Cycles deterministically through a fixed list of examples."""

    def __init__(self, examples: list[TrainExample]):
        if not examples:
            raise ContractError("dataset must be non-empty")
        self.examples = list(examples)

    def draw(self, rng: np.random.Generator, n: int) -> TrainBatch:
        picks = rng.integers(0, len(self.examples), size=n)
        return TrainBatch(tuple(self.examples[i] for i in picks))


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    learning_rate: float = 1e-3
    p_drop_global: float = 0.2
    p_drop_segment: float = 0.2
    p_drop_lyrics: float | None = None  # None -> follow p_drop_global
    grad_clip_norm: float | None = None
    checkpoint_every: int = 0  # 0 -> only at the end
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ContractError("steps must be >= 1")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        for p in (self.p_drop_global, self.p_drop_segment):
            if not (0.0 <= p <= 1.0):
                raise ContractError(f"dropout probability {p} outside [0, 1]")
        if self.p_drop_lyrics is not None and not (0.0 <= self.p_drop_lyrics <= 1.0):
            raise ContractError(f"dropout probability {self.p_drop_lyrics} outside [0, 1]")

    @property
    def lyric_dropout(self) -> float:
        return self.p_drop_global if self.p_drop_lyrics is None else self.p_drop_lyrics


def cfm_loss(
    model,
    encoder: ConditioningEncoder,
    batch: TrainBatch,
    rng: np.random.Generator,
    p_drop_global: float = 0.0,
    p_drop_segment: float = 0.0,
    p_drop_lyrics: float = 0.0,
) -> Tensor:
    """Mean over the batch of || v(t, C, x_t) - (x1 - x0) ||^2 / N.

    Per element, in order: t ~ U(0,1), x0 ~ N(0,I), dropout draws.
    """
    total = None
    for ex in batch.examples:
        t = float(rng.random())
        x0 = rng.standard_normal(ex.x1.shape)
        x_t = interpolate(x0, ex.x1, t)
        u = target_velocity(x0, ex.x1)
        bundle = encoder.encode(ex.spec, ex.doc, ex.x1.shape[0])
        bundle = apply_condition_dropout(
            bundle, p_drop_global, p_drop_segment, rng, p_lyrics=p_drop_lyrics
        )
        term = mse(model.forward(Tensor(x_t), bundle, t), Tensor(u))
        total = term if total is None else add(total, term)
    return scale(total, 1.0 / len(batch.examples))


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    steps: int = 0
    checkpoint_path: str | None = None
    wall_seconds: float = 0.0

    def smoothed(self, k: int = 50) -> tuple[float, float]:
        """(mean of first k losses, mean of last k losses)."""
        k = min(k, len(self.losses))
        return float(np.mean(self.losses[:k])), float(np.mean(self.losses[-k:]))


def train(
    system,
    dataset,
    config: TrainConfig,
    checkpoint_dir=None,
    log_path=None,
) -> TrainReport:
    """Deterministic under config.seed. Writes a JSON-lines log
    (step, loss, wall_ms) when log_path is given, and checkpoints into
    checkpoint_dir at the end plus every config.checkpoint_every steps."""
    rng = np.random.default_rng(config.seed)
    params = [t for _, t in system.named_parameters()]
    state = adam_init(params, config.learning_rate)
    report = TrainReport()
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    started = time.perf_counter()
    try:
        for step in range(config.steps):
            step_started = time.perf_counter()
            batch = dataset.draw(rng, config.batch_size)
            loss = cfm_loss(
                system.model,
                system.encoder,
                batch,
                rng,
                p_drop_global=config.p_drop_global,
                p_drop_segment=config.p_drop_segment,
                p_drop_lyrics=config.lyric_dropout,
            )
            loss_value = float(loss.data)
            if not np.isfinite(loss_value):
                raise NumericAbort("loss is not finite", step=step, batch_ids=batch.ids())
            zero_grads(params)
            backward(loss)
            if config.grad_clip_norm is not None:
                clip_grad_norm(params, config.grad_clip_norm)
            adam_step(params, state)
            report.losses.append(loss_value)
            report.steps = step + 1
            if log_file is not None:
                wall_ms = (time.perf_counter() - step_started) * 1000.0
                log_file.write(
                    json.dumps({"step": step, "loss": loss_value, "wall_ms": wall_ms}) + "\n"
                )
            if (
                checkpoint_dir is not None
                and config.checkpoint_every > 0
                and (step + 1) % config.checkpoint_every == 0
                and step + 1 < config.steps
            ):
                system.save(Path(checkpoint_dir) / f"checkpoint-{step + 1:06d}.json")
    finally:
        if log_file is not None:
            log_file.close()
    if checkpoint_dir is not None:
        final = Path(checkpoint_dir) / "checkpoint.json"
        system.save(final)
        report.checkpoint_path = str(final)
    report.wall_seconds = time.perf_counter() - started
    return report
