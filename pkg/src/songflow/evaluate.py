"""Alignment and timing metrics over pluggable similarity scorers.

The bundled PatternOracleScorer is the synthetic-task oracle: segment texts
score by Pearson correlation between a window's mean-channel trace and the
text's anchored pattern template; global texts score by correlation across
channels between the time-averaged frame and the text's offset vector.
Ground-truth noiseless samples maximize both scores by construction.
"""

from __future__ import annotations

from typing import Protocol

import numpy as np

from .conditioning import PromptSpec
from .errors import ContractError, DimensionError
from .lrc import BOUNDARY, LrcDocument, SegmentWindow
from .synthetic import SyntheticTaskSpec, pattern_trace

__all__ = [
    "SimilarityScorer",
    "PatternOracleScorer",
    "segment_alignment_score",
    "global_alignment_score",
    "ab_accuracy",
    "duration_mae",
    "validate_report",
]


class SimilarityScorer(Protocol):
    """Deterministic (latent slice or full latent, text) -> score in [-1, 1]."""

    def score(self, latent: np.ndarray, text: str) -> float: ...


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson r, 0.0 when either side is (numerically) constant."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionError(f"pearson: shapes {a.shape} vs {b.shape}")
    if a.size < 2:
        return 0.0
    ac = a - a.mean()
    bc = b - b.mean()
    denom = np.sqrt((ac * ac).sum() * (bc * bc).sum())
    if denom < 1e-12:
        return 0.0
    return float(np.clip((ac * bc).sum() / denom, -1.0, 1.0))


class PatternOracleScorer:
    """Maximal-at-truth scorer for the synthetic task."""

    def __init__(self, task: SyntheticTaskSpec):
        self.task = task

    def score(self, latent: np.ndarray, text: str) -> float:
        latent = np.asarray(latent, dtype=np.float64)
        if latent.ndim != 2:
            raise DimensionError(f"latent must be (frames, channels), got {latent.shape}")
        if text in self.task.segment_vocab:
            trace = latent.mean(axis=1)
            return _pearson(trace, pattern_trace(self.task, text, len(trace)))
        if text in self.task.global_vocab:
            return _pearson(latent.mean(axis=0), self.task.global_vocab[text])
        raise ContractError(f"text {text!r} is in neither vocabulary")


def segment_alignment_score(
    latent: np.ndarray,
    spec: PromptSpec,
    windows: list[SegmentWindow],
    scorer: SimilarityScorer,
    include_boundary: bool = False,
) -> tuple[list[float], float]:
    """Score each window's latent slice against its segment text; return
    (per-segment scores, their arithmetic mean). Boundary-marker segments are
    excluded unless asked for."""
    if len(windows) != len(spec.segments):
        raise ContractError(f"{len(windows)} windows for {len(spec.segments)} segments")
    scores = []
    for seg, window in zip(spec.segments, windows):
        if seg.kind == BOUNDARY and not include_boundary:
            continue
        scores.append(scorer.score(latent[window.frame_start : window.frame_end], seg.text))
    if not scores:
        raise ContractError("no scorable segments: the mean is undefined")
    return scores, sum(scores) / len(scores)


def global_alignment_score(latent: np.ndarray, global_text: str, scorer: SimilarityScorer) -> float:
    return scorer.score(latent, global_text)


def ab_accuracy(judgments: list[tuple[str, str]]) -> float:
    """Fraction of (truth, judged) pairs, each in {"A", "B"}, that agree."""
    if not judgments:
        raise ContractError("ab_accuracy needs at least one judgment")
    for truth, judged in judgments:
        if truth not in ("A", "B") or judged not in ("A", "B"):
            raise ContractError(f"judgments must be 'A' or 'B', got {(truth, judged)!r}")
    correct = sum(1 for truth, judged in judgments if truth == judged)
    return correct / len(judgments)


def duration_mae(predicted: LrcDocument, truth: LrcDocument) -> float:
    """Mean absolute sentence-onset error in seconds; texts must line up."""
    if len(predicted.lines) != len(truth.lines):
        raise ContractError(
            f"line counts differ: {len(predicted.lines)} vs {len(truth.lines)}"
        )
    if not truth.lines:
        raise ContractError("documents have no lines")
    for i, (p, t) in enumerate(zip(predicted.lines, truth.lines)):
        if _normalize_line(p.text) != _normalize_line(t.text):
            raise ContractError(f"line {i + 1} texts differ after normalization")
    return sum(abs(p.timestamp - t.timestamp) for p, t in zip(predicted.lines, truth.lines)) / len(
        truth.lines
    )


def _normalize_line(text: str) -> str:
    return " ".join(text.lower().split())


_REPORT_SAMPLE_KEYS = {"global_alignment", "segment_alignment"}


def validate_report(report: dict) -> None:
    """Structural check of the metric-report JSON emitted by the CLI."""
    if set(report) < {"samples", "aggregate"}:
        raise ContractError("report must carry 'samples' and 'aggregate'")
    if not isinstance(report["samples"], list):
        raise ContractError("'samples' must be a list")
    for i, sample in enumerate(report["samples"]):
        missing = _REPORT_SAMPLE_KEYS - set(sample)
        if missing:
            raise ContractError(f"sample {i} is missing {sorted(missing)}")
        seg = sample["segment_alignment"]
        if not {"per_segment", "mean"} <= set(seg):
            raise ContractError(f"sample {i} segment_alignment needs per_segment and mean")
    agg = report["aggregate"]
    if report["samples"] and not {"global_alignment_mean", "segment_alignment_mean"} <= set(agg):
        raise ContractError("aggregate is missing alignment means")
