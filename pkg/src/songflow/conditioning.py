"""Prompt and lyric conditioning.

A song is conditioned by one global prompt broadcast to every latent frame
and by timed segment prompts broadcast only to their frame windows. Both are
embedded, concatenated channel-wise, and pushed through a three-layer
projection to give the text embedding E_text. Lyric lines are tokenized and
their token embeddings placed one-per-frame from each line's onset. The full
model input concatenates (E_text, E_lyrics, E_audio, E_t) along channels.

Condition dropout zeroes the global and/or segment halves *before* the
projection (and optionally the lyric frames), so the projection always sees
a well-defined unconditional input.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Protocol

import numpy as np

from .errors import ContractError, DimensionError, ValidationError
from .lrc import (
    LYRIC,
    LrcDocument,
    SegmentSpec,
    SegmentWindow,
    time_to_frame,
    validate_segments,
    windows_from_segments,
)
from .tensor import Tensor, add_row, concat_channels, fan_in_uniform, matmul, silu

__all__ = [
    "TextEmbedder",
    "HashEmbedder",
    "OutputProjection",
    "NegativePrompts",
    "PromptSpec",
    "prompt_spec_from_json",
    "prompt_spec_to_json",
    "ConditioningBundle",
    "broadcast_prompt_halves",
    "encode_prompts",
    "lyric_tokens",
    "encode_lyrics",
    "apply_condition_dropout",
    "assemble_input",
    "ConditioningEncoder",
    "stub_embedder",
]


class TextEmbedder(Protocol):
    """Deterministic text -> unit vector of fixed dimension."""

    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


class HashEmbedder:
    """Stand-in encoder: a unit-norm vector seeded by a keyed hash of
    (namespace, text). Equal texts always embed identically; distinct short
    texts collide with negligible probability."""

    def __init__(self, namespace: str, dimension: int):
        if dimension < 1:
            raise ContractError("embedder dimension must be >= 1")
        self.namespace = namespace
        self.dimension = dimension
        self._cache: dict[str, np.ndarray] = {}

    def embed(self, text: str) -> np.ndarray:
        vec = self._cache.get(text)
        if vec is None:
            digest = hashlib.sha256(f"{self.namespace}\x1f{text}".encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            raw = rng.standard_normal(self.dimension)
            norm = float(np.linalg.norm(raw))
            if norm < 1e-12:
                raw[0] = 1.0
                norm = 1.0
            vec = raw / norm
            self._cache[text] = vec
        return vec.copy()


def stub_embedder(seed_namespace: str, d: int) -> HashEmbedder:
    return HashEmbedder(seed_namespace, d)


class OutputProjection:
    """linear -> silu -> linear -> silu -> linear, applied per row."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator):
        self.d_in, self.d_hidden, self.d_out = d_in, d_hidden, d_out
        self.w1 = fan_in_uniform(rng, (d_in, d_hidden))
        self.b1 = Tensor(np.zeros(d_hidden), requires_grad=True)
        self.w2 = fan_in_uniform(rng, (d_hidden, d_hidden))
        self.b2 = Tensor(np.zeros(d_hidden), requires_grad=True)
        self.w3 = fan_in_uniform(rng, (d_hidden, d_out))
        self.b3 = Tensor(np.zeros(d_out), requires_grad=True)

    def __call__(self, e_cat: Tensor) -> Tensor:
        h = silu(add_row(matmul(e_cat, self.w1), self.b1))
        h = silu(add_row(matmul(h, self.w2), self.b2))
        return add_row(matmul(h, self.w3), self.b3)

    def named_parameters(self, prefix: str = "proj") -> list[tuple[str, Tensor]]:
        return [
            (f"{prefix}.w1", self.w1),
            (f"{prefix}.b1", self.b1),
            (f"{prefix}.w2", self.w2),
            (f"{prefix}.b2", self.b2),
            (f"{prefix}.w3", self.w3),
            (f"{prefix}.b3", self.b3),
        ]


@dataclass(frozen=True)
class NegativePrompts:
    global_text: str
    segment_text: str


@dataclass(frozen=True)
class PromptSpec:
    """One global prompt plus timed segment prompts (sorted, non-overlapping)."""

    global_text: str
    segments: tuple[SegmentSpec, ...] = ()
    negative: NegativePrompts | None = None
    duration_s: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        validate_segments(self.segments)
        if self.duration_s is not None and self.duration_s <= 0:
            raise ValidationError("duration_s must be positive when given")

    def end_time(self) -> float | None:
        """Explicit duration if present, else the last segment's end."""
        if self.duration_s is not None:
            return self.duration_s
        if self.segments:
            return max(s.t_e for s in self.segments)
        return None


def prompt_spec_from_json(obj) -> PromptSpec:
    """Accepts parsed JSON or a JSON string:
    {"global": str, "segments": [{"start_s", "end_s", "text", "kind"?}, ...],
     "negative": {"global": str, "segment": str}?, "duration_s"?: number}."""
    if isinstance(obj, str):
        obj = json.loads(obj)
    segments = tuple(
        SegmentSpec(
            t_s=float(s["start_s"]),
            t_e=float(s["end_s"]),
            text=s["text"],
            kind=s.get("kind", LYRIC),
        )
        for s in obj.get("segments", [])
    )
    negative = None
    if obj.get("negative") is not None:
        negative = NegativePrompts(
            global_text=obj["negative"]["global"], segment_text=obj["negative"]["segment"]
        )
    duration = obj.get("duration_s")
    return PromptSpec(
        global_text=obj["global"],
        segments=segments,
        negative=negative,
        duration_s=float(duration) if duration is not None else None,
    )


def prompt_spec_to_json(spec: PromptSpec) -> dict:
    out: dict = {
        "global": spec.global_text,
        "segments": [
            {"start_s": s.t_s, "end_s": s.t_e, "text": s.text, "kind": s.kind}
            for s in spec.segments
        ],
    }
    if spec.negative is not None:
        out["negative"] = {
            "global": spec.negative.global_text,
            "segment": spec.negative.segment_text,
        }
    if spec.duration_s is not None:
        out["duration_s"] = spec.duration_s
    return out


# -----------------------------------------------------------------------------
# Prompt broadcasting (global across all frames, segments into their windows)
# -----------------------------------------------------------------------------


def broadcast_prompt_halves(
    spec: PromptSpec,
    T: int,
    f_g: TextEmbedder,
    f_l: TextEmbedder,
    frame_rate: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Pre-projection halves: E_g repeats the global vector on every frame;
    E_l starts at zeros and each segment's vector fills its frame window.
    Frames covered by no segment keep the zero row."""
    if T < 1:
        raise ContractError("T must be >= 1")
    e_g = np.tile(f_g.embed(spec.global_text), (T, 1))
    e_l = np.zeros((T, f_l.dimension))
    for seg in spec.segments:
        j_s = time_to_frame(seg.t_s, frame_rate)
        j_e = time_to_frame(seg.t_e, frame_rate)
        if j_e > T:
            raise ContractError(
                f"segment [{seg.t_s}, {seg.t_e})s maps to frames [{j_s}, {j_e}) outside [0, {T})"
            )
        e_l[j_s:j_e] = f_l.embed(seg.text)
    return e_g, e_l


def encode_prompts(
    spec: PromptSpec,
    T: int,
    f_g: TextEmbedder,
    f_l: TextEmbedder,
    out_proj: OutputProjection,
    frame_rate: float,
    drop_global: bool = False,
    drop_segment: bool = False,
) -> Tensor:
    """Broadcast, concatenate, project: the (T, d_text) text conditioning."""
    e_g, e_l = broadcast_prompt_halves(spec, T, f_g, f_l, frame_rate)
    if drop_global:
        e_g = np.zeros_like(e_g)
    if drop_segment:
        e_l = np.zeros_like(e_l)
    return out_proj(Tensor(np.concatenate([e_g, e_l], axis=1)))


# -----------------------------------------------------------------------------
# Lyric alignment
# -----------------------------------------------------------------------------


def lyric_tokens(text: str) -> list[str]:
    """CJK characters are single tokens; other runs split on whitespace."""
    from .durations import _is_cjk

    tokens: list[str] = []
    buf: list[str] = []

    def flush():
        if buf:
            tokens.extend("".join(buf).split())
            buf.clear()

    for ch in text:
        if _is_cjk(ch):
            flush()
            tokens.append(ch)
        else:
            buf.append(ch)
    flush()
    return tokens


def encode_lyrics(
    doc: LrcDocument | None,
    lyric_embedder: TextEmbedder,
    T: int,
    frame_rate: float,
) -> tuple[np.ndarray, int]:
    """Place each line's token embeddings one-per-frame, left-aligned at the
    line's onset frame and clipped at the next line's onset (or T). Unfilled
    frames stay zero. Returns (E_lyrics, truncated-token count)."""
    e = np.zeros((T, lyric_embedder.dimension))
    truncated = 0
    if doc is None or not doc.lines:
        return e, truncated
    starts = [time_to_frame(line.timestamp, frame_rate) for line in doc.lines]
    if any(s >= T for s in starts):
        raise ContractError("a lyric line's onset maps outside [0, T)")
    for i, line in enumerate(doc.lines):
        window_end = starts[i + 1] if i + 1 < len(starts) else T
        tokens = lyric_tokens(line.text)
        room = max(0, window_end - starts[i])
        for k, tok in enumerate(tokens[:room]):
            e[starts[i] + k] = lyric_embedder.embed(tok)
        truncated += max(0, len(tokens) - room)
    return e, truncated


# -----------------------------------------------------------------------------
# The assembled conditioning bundle
# -----------------------------------------------------------------------------


@dataclass
class ConditioningBundle:
    """Everything the velocity model consumes for one sample.

    e_text/e_lyrics are realized from the raw ingredients below so dropout
    can re-realize them; e_audio (the x_t frames) and e_t are filled in per
    forward pass. A dropped component's ingredient is zeroed wholesale.
    """

    e_text: Tensor
    e_lyrics: Tensor
    e_audio: Tensor | None
    e_t: Tensor | None
    drop_global: bool
    drop_segment: bool
    drop_lyrics: bool
    global_half: np.ndarray = field(repr=False)
    segment_half: np.ndarray = field(repr=False)
    lyric_frames: np.ndarray = field(repr=False)
    out_proj: OutputProjection = field(repr=False)
    windows: tuple[SegmentWindow, ...] = ()

    @property
    def T(self) -> int:
        return self.e_text.data.shape[0]


def _realize_bundle(
    global_half: np.ndarray,
    segment_half: np.ndarray,
    lyric_frames: np.ndarray,
    out_proj: OutputProjection,
    windows: tuple[SegmentWindow, ...],
    drop_global: bool,
    drop_segment: bool,
    drop_lyrics: bool,
) -> ConditioningBundle:
    e_g = np.zeros_like(global_half) if drop_global else global_half
    e_l = np.zeros_like(segment_half) if drop_segment else segment_half
    e_text = out_proj(Tensor(np.concatenate([e_g, e_l], axis=1)))
    lyr = np.zeros_like(lyric_frames) if drop_lyrics else lyric_frames
    return ConditioningBundle(
        e_text=e_text,
        e_lyrics=Tensor(lyr),
        e_audio=None,
        e_t=None,
        drop_global=drop_global,
        drop_segment=drop_segment,
        drop_lyrics=drop_lyrics,
        global_half=global_half,
        segment_half=segment_half,
        lyric_frames=lyric_frames,
        out_proj=out_proj,
        windows=windows,
    )


def apply_condition_dropout(
    bundle: ConditioningBundle,
    p_global: float,
    p_segment: float,
    rng: np.random.Generator,
    p_lyrics: float = 0.0,
) -> ConditioningBundle:
    """Independently drop the global half, the segment half, and the lyric
    frames with the given probabilities (draws in that fixed order). Already
    dropped components stay dropped."""
    for p in (p_global, p_segment, p_lyrics):
        if not (0.0 <= p <= 1.0):
            raise ContractError(f"dropout probability {p} outside [0, 1]")
    drop_g = bundle.drop_global or bool(rng.random() < p_global)
    drop_s = bundle.drop_segment or bool(rng.random() < p_segment)
    drop_l = bundle.drop_lyrics or bool(rng.random() < p_lyrics)
    if (drop_g, drop_s, drop_l) == (bundle.drop_global, bundle.drop_segment, bundle.drop_lyrics):
        return bundle
    return _realize_bundle(
        bundle.global_half,
        bundle.segment_half,
        bundle.lyric_frames,
        bundle.out_proj,
        bundle.windows,
        drop_g,
        drop_s,
        drop_l,
    )


def assemble_input(bundle: ConditioningBundle) -> Tensor:
    """Channel concat in fixed order: (E_text, E_lyrics, E_audio, E_t)."""
    if bundle.e_audio is None or bundle.e_t is None:
        raise ContractError("bundle is missing e_audio/e_t; fill them before assembling")
    return concat_channels([bundle.e_text, bundle.e_lyrics, bundle.e_audio, bundle.e_t])


class ConditioningEncoder:
    """Bundles the embedders, projection, and frame rate used for encoding."""

    def __init__(
        self,
        global_embedder: TextEmbedder,
        segment_embedder: TextEmbedder,
        lyric_embedder: TextEmbedder,
        out_proj: OutputProjection,
        frame_rate: float,
    ):
        if frame_rate <= 0:
            raise ContractError("frame_rate must be positive")
        self.global_embedder = global_embedder
        self.segment_embedder = segment_embedder
        self.lyric_embedder = lyric_embedder
        self.out_proj = out_proj
        self.frame_rate = frame_rate

    @property
    def d_text(self) -> int:
        return self.out_proj.d_out

    @property
    def d_lyrics(self) -> int:
        return self.lyric_embedder.dimension

    def encode(
        self,
        spec: PromptSpec,
        doc: LrcDocument | None,
        T: int,
        drop_global: bool = False,
        drop_segment: bool = False,
        drop_lyrics: bool = False,
    ) -> ConditioningBundle:
        e_g, e_l = broadcast_prompt_halves(
            spec, T, self.global_embedder, self.segment_embedder, self.frame_rate
        )
        lyr, _ = encode_lyrics(doc, self.lyric_embedder, T, self.frame_rate)
        windows = tuple(windows_from_segments(spec.segments, self.frame_rate, T))
        return _realize_bundle(e_g, e_l, lyr, self.out_proj, windows,
                               drop_global, drop_segment, drop_lyrics)

    def named_parameters(self, prefix: str = "conditioning") -> list[tuple[str, Tensor]]:
        return self.out_proj.named_parameters(f"{prefix}.proj")
