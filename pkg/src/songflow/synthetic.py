"""Synthetic controllable-latent task.

Stands in for real songs at desk scale: each global prompt maps to a fixed
per-channel offset vector, each segment prompt to an anchored periodic
pattern (amplitude, integer period in frames) added uniformly across
channels inside the segment's window. Frames outside every segment carry
the offset alone. Lyric documents carry one line per pattern cycle, each
line's tokens ("p0 p1 ...") filling the cycle one frame apiece, so the
token at a frame encodes the frame's phase. That is what anchors pattern
phase: the network sees position only through conditioning.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conditioning import HashEmbedder, PromptSpec
from .errors import ContractError, ValidationError
from .flow import TrainBatch, TrainExample
from .lrc import LYRIC, LrcDocument, LrcLine, SegmentSpec, windows_from_segments

__all__ = [
    "SyntheticTaskSpec",
    "default_task",
    "pattern_trace",
    "synth_sample",
    "sample_prompt",
    "SyntheticDataset",
]


@dataclass(frozen=True)
class SyntheticTaskSpec:
    T: int
    d_audio: int
    frame_rate: float
    global_vocab: dict[str, np.ndarray]  # text -> offset vector (d_audio,)
    segment_vocab: dict[str, tuple[float, int]]  # text -> (amplitude, period >= 2)
    noise_sigma: float = 0.05

    def __post_init__(self):
        if self.T < 1 or self.d_audio < 1 or self.frame_rate <= 0:
            raise ValidationError("T, d_audio, frame_rate must be positive")
        if not self.global_vocab or not self.segment_vocab:
            raise ValidationError("vocabularies must be non-empty")
        for text, vec in self.global_vocab.items():
            if np.asarray(vec).shape != (self.d_audio,):
                raise ValidationError(f"offset for {text!r} must have shape ({self.d_audio},)")
        for text, (amp, period) in self.segment_vocab.items():
            if period < 2:
                raise ValidationError(f"period for {text!r} must be >= 2 frames")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be >= 0")

    @property
    def duration(self) -> float:
        return self.T / self.frame_rate


_GLOBAL_WORDS = ("ember", "tide", "neon", "moss")
_SEGMENT_PATTERNS = {
    "pulse": (1.0, 3),
    "wave": (1.0, 4),
    "drift": (0.9, 5),
    "shimmer": (1.1, 7),
    "hum": (0.8, 9),
}


def default_task(
    T: int = 64,
    d_audio: int = 8,
    frame_rate: float = 4.0,
    noise_sigma: float = 0.05,
    offset_scale: float = 0.8,
) -> SyntheticTaskSpec:
    """Fixed vocabularies; offsets come from the deterministic hash embedder."""
    offsets = HashEmbedder("synthetic-offset", d_audio)
    return SyntheticTaskSpec(
        T=T,
        d_audio=d_audio,
        frame_rate=frame_rate,
        global_vocab={w: offset_scale * offsets.embed(w) for w in _GLOBAL_WORDS},
        segment_vocab=dict(_SEGMENT_PATTERNS),
        noise_sigma=noise_sigma,
    )


def pattern_trace(task: SyntheticTaskSpec, text: str, length: int) -> np.ndarray:
    """The anchored template: amplitude * cos(2 pi k / period), k = 0..length-1."""
    if text not in task.segment_vocab:
        raise ContractError(f"unknown segment text {text!r}")
    amp, period = task.segment_vocab[text]
    k = np.arange(length)
    return amp * np.cos(2.0 * np.pi * k / period)


def synth_sample(task: SyntheticTaskSpec, spec: PromptSpec, rng: np.random.Generator) -> np.ndarray:
    """frame f = offset + (pattern at f, phase-anchored to the window start)
    + N(0, sigma^2) noise."""
    if spec.global_text not in task.global_vocab:
        raise ContractError(f"unknown global text {spec.global_text!r}")
    x = np.tile(task.global_vocab[spec.global_text], (task.T, 1)).astype(np.float64)
    for window in windows_from_segments(spec.segments, task.frame_rate, task.T):
        trace = pattern_trace(task, window.label, len(window))
        x[window.frame_start : window.frame_end] += trace[:, None]
    if task.noise_sigma > 0:
        x += rng.normal(0.0, task.noise_sigma, size=x.shape)
    return x


def _phase_tokens(n: int) -> str:
    return " ".join(f"p{j}" for j in range(n))


def segment_lines(task: SyntheticTaskSpec, text: str, ws: int, we: int) -> list[LrcLine]:
    """One line per pattern cycle starting at the window start; each line's
    tokens fill its cycle one frame apiece, so token j marks phase j."""
    _, period = task.segment_vocab[text]
    lines = []
    for start in range(ws, we, period):
        n = min(period, we - start)
        lines.append(LrcLine(timestamp=start / task.frame_rate, text=_phase_tokens(n)))
    return lines


def sample_prompt(
    task: SyntheticTaskSpec,
    rng: np.random.Generator,
    max_segments: int = 3,
    min_width: int = 8,
    gap_probability: float = 0.25,
) -> tuple[PromptSpec, LrcDocument]:
    """Draw a random layout of contiguous windows over [0, T); each window
    becomes a segment with a random pattern text, or (with gap_probability)
    an unprompted gap. Lyric lines mark pattern cycles inside each segment."""
    n_windows = int(rng.integers(1, max_segments + 1))
    n_windows = max(min(n_windows, task.T // min_width), 1)
    # Distinct interior cut points on the frame grid, respecting min_width.
    cuts = [0, task.T]
    for _ in range(n_windows - 1):
        candidates = [
            f
            for f in range(min_width, task.T - min_width + 1)
            if all(abs(f - c) >= min_width for c in cuts)
        ]
        if not candidates:
            break
        cuts.append(int(rng.choice(candidates)))
    cuts = sorted(cuts)

    texts = list(task.segment_vocab)
    segments: list[SegmentSpec] = []
    lines: list[LrcLine] = []
    for ws, we in zip(cuts[:-1], cuts[1:]):
        if len(cuts) > 2 and rng.random() < gap_probability:
            continue  # leave this window unprompted
        text = _choice(rng, texts)
        segments.append(
            SegmentSpec(t_s=ws / task.frame_rate, t_e=we / task.frame_rate, text=text, kind=LYRIC)
        )
        lines.extend(segment_lines(task, text, ws, we))
    if not segments:  # keep at least one prompted window
        text = _choice(rng, texts)
        segments.append(SegmentSpec(t_s=0.0, t_e=cuts[1] / task.frame_rate, text=text, kind=LYRIC))
        lines.extend(segment_lines(task, text, 0, cuts[1]))

    global_text = _choice(rng, list(task.global_vocab))
    spec = PromptSpec(global_text=global_text, segments=tuple(segments), duration_s=task.duration)
    doc = LrcDocument(lines=tuple(lines), total_duration=task.duration)
    return spec, doc


def _choice(rng: np.random.Generator, items: list[str]) -> str:
    return items[int(rng.integers(0, len(items)))]


class SyntheticDataset:
    """Infinite stream of freshly drawn (prompt, lyric doc, latent) examples."""

    def __init__(self, task: SyntheticTaskSpec, max_segments: int = 3, min_width: int = 8):
        self.task = task
        self.max_segments = max_segments
        self.min_width = min_width
        self._counter = 0

    def draw(self, rng: np.random.Generator, n: int) -> TrainBatch:
        examples = []
        for _ in range(n):
            spec, doc = sample_prompt(
                self.task, rng, max_segments=self.max_segments, min_width=self.min_width
            )
            x1 = synth_sample(self.task, spec, rng)
            examples.append(
                TrainExample(id=f"synth-{self._counter:06d}", spec=spec, doc=doc, x1=x1)
            )
            self._counter += 1
        return TrainBatch(tuple(examples))
