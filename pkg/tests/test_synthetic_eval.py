import dataclasses

import numpy as np
import pytest

from songflow.conditioning import PromptSpec
from songflow.errors import ContractError, ValidationError
from songflow.evaluate import (
    PatternOracleScorer,
    ab_accuracy,
    duration_mae,
    global_alignment_score,
    segment_alignment_score,
    validate_report,
)
from songflow.lrc import BOUNDARY, LYRIC, LrcDocument, LrcLine, SegmentSpec, windows_from_segments
from songflow.synthetic import (
    SyntheticDataset,
    SyntheticTaskSpec,
    default_task,
    pattern_trace,
    sample_prompt,
    synth_sample,
)


def _noiseless_task():
    return default_task(noise_sigma=0.0)


def _spec(task, entries):
    """entries: list of (start_frame, end_frame, text)."""
    segments = tuple(
        SegmentSpec(ws / task.frame_rate, we / task.frame_rate, text) for ws, we, text in entries
    )
    return PromptSpec(global_text="ember", segments=segments, duration_s=task.duration)


# -----------------------------------------------------------------------------
# synthetic task
# -----------------------------------------------------------------------------


def test_task_validation():
    with pytest.raises(ValidationError):
        SyntheticTaskSpec(
            T=8, d_audio=2, frame_rate=4.0, global_vocab={}, segment_vocab={"p": (1.0, 4)}
        )
    with pytest.raises(ValidationError):
        SyntheticTaskSpec(
            T=8,
            d_audio=2,
            frame_rate=4.0,
            global_vocab={"g": np.zeros(2)},
            segment_vocab={"p": (1.0, 1)},
        )


def test_noiseless_sample_without_segments_is_constant_offset(rng):
    task = _noiseless_task()
    spec = PromptSpec(global_text="ember", duration_s=task.duration)
    x = synth_sample(task, spec, rng)
    assert np.allclose(x, np.tile(task.global_vocab["ember"], (task.T, 1)))


def test_pattern_repeats_exactly_over_its_period(rng):
    task = _noiseless_task()
    text = "wave"  # period 4
    spec = _spec(task, [(0, 8, text)])
    x = synth_sample(task, spec, rng)
    window = x[:8] - task.global_vocab["ember"]
    assert np.allclose(window[:4], window[4:8], atol=1e-12)
    amp, period = task.segment_vocab[text]
    assert period == 4
    assert np.allclose(window[:, 0], pattern_trace(task, text, 8), atol=1e-12)


def test_changing_segment_text_changes_only_its_window(rng):
    task = _noiseless_task()
    spec_a = _spec(task, [(0, 16, "pulse"), (16, 32, "wave")])
    spec_b = _spec(task, [(0, 16, "pulse"), (16, 32, "drift")])
    xa = synth_sample(task, spec_a, rng)
    xb = synth_sample(task, spec_b, rng)
    assert np.array_equal(xa[:16], xb[:16])
    assert np.array_equal(xa[32:], xb[32:])
    assert not np.allclose(xa[16:32], xb[16:32])


def test_unknown_text_is_contract_error(rng):
    task = _noiseless_task()
    with pytest.raises(ContractError):
        synth_sample(task, PromptSpec(global_text="unknown", duration_s=task.duration), rng)
    with pytest.raises(ContractError):
        synth_sample(task, _spec(task, [(0, 8, "unknown-pattern")]), rng)


def test_sample_prompt_layouts_are_valid(rng):
    task = default_task()
    for _ in range(50):
        spec, doc = sample_prompt(task, rng)
        assert spec.segments
        assert spec.global_text in task.global_vocab
        for seg in spec.segments:
            assert seg.text in task.segment_vocab
        assert doc.total_duration == task.duration
        synth_sample(task, spec, rng)  # must be constructible


def test_dataset_draw_is_deterministic():
    task = default_task()
    a = SyntheticDataset(task).draw(np.random.default_rng(3), 4)
    b = SyntheticDataset(task).draw(np.random.default_rng(3), 4)
    for ea, eb in zip(a.examples, b.examples):
        assert ea.id == eb.id
        assert np.array_equal(ea.x1, eb.x1)
        assert ea.spec == eb.spec


# -----------------------------------------------------------------------------
# oracle scorer and alignment metrics
# -----------------------------------------------------------------------------


def test_groundtruth_segments_score_one(rng):
    task = _noiseless_task()
    spec = _spec(task, [(0, 20, "pulse"), (20, 44, "shimmer"), (44, 64, "hum")])
    x = synth_sample(task, spec, rng)
    windows = windows_from_segments(spec.segments, task.frame_rate, task.T)
    scorer = PatternOracleScorer(task)
    per, mean = segment_alignment_score(x, spec, windows, scorer)
    assert all(p == pytest.approx(1.0, abs=1e-9) for p in per)
    assert mean == pytest.approx(1.0, abs=1e-9)


def test_single_segment_mean_equals_its_score(rng):
    task = _noiseless_task()
    spec = _spec(task, [(0, 32, "drift")])
    x = synth_sample(task, spec, rng)
    windows = windows_from_segments(spec.segments, task.frame_rate, task.T)
    per, mean = segment_alignment_score(x, spec, windows, PatternOracleScorer(task))
    assert len(per) == 1 and mean == per[0]


def test_shuffled_patterns_score_lower(rng):
    task = _noiseless_task()
    layout = [(0, 20, "pulse"), (20, 44, "wave"), (44, 64, "drift")]
    spec = _spec(task, layout)
    x = synth_sample(task, spec, rng)
    windows = windows_from_segments(spec.segments, task.frame_rate, task.T)
    scorer = PatternOracleScorer(task)
    _, truth_mean = segment_alignment_score(x, spec, windows, scorer)
    shuffled = _spec(task, [(0, 20, "wave"), (20, 44, "drift"), (44, 64, "pulse")])
    _, shuffled_mean = segment_alignment_score(x, shuffled, windows, scorer)
    assert shuffled_mean < truth_mean


def test_mean_is_arithmetic_mean_bit_exactly(rng):
    task = _noiseless_task()
    spec = _spec(task, [(0, 20, "pulse"), (20, 44, "wave"), (44, 64, "drift")])
    x = synth_sample(task, spec, rng)
    windows = windows_from_segments(spec.segments, task.frame_rate, task.T)
    per, mean = segment_alignment_score(x, spec, windows, PatternOracleScorer(task))
    assert mean == sum(per) / len(per)


def test_boundary_segments_excluded_by_default(rng):
    task = _noiseless_task()
    segments = (
        SegmentSpec(0.0, 0.5, "start-marker", kind=BOUNDARY),
        SegmentSpec(0.5, 8.0, "pulse", kind=LYRIC),
    )
    spec = PromptSpec(global_text="ember", segments=segments, duration_s=task.duration)
    windows = windows_from_segments(spec.segments, task.frame_rate, task.T)
    x = np.zeros((task.T, task.d_audio))
    x[2:32] += pattern_trace(task, "pulse", 30)[:, None]

    class Tolerant(PatternOracleScorer):
        def score(self, latent, text):
            if text == "start-marker":
                raise AssertionError("boundary segment must be skipped")
            return super().score(latent, text)

    per, mean = segment_alignment_score(x, spec, windows, Tolerant(task))
    assert len(per) == 1


def test_empty_segment_list_is_undefined_mean(rng):
    task = _noiseless_task()
    spec = PromptSpec(global_text="ember", duration_s=task.duration)
    with pytest.raises(ContractError):
        segment_alignment_score(np.zeros((task.T, task.d_audio)), spec, [], PatternOracleScorer(task))


def test_global_alignment_self_is_max(rng):
    task = _noiseless_task()
    scorer = PatternOracleScorer(task)
    for text in task.global_vocab:
        spec = PromptSpec(global_text=text, duration_s=task.duration)
        x = synth_sample(task, spec, rng)
        own = global_alignment_score(x, text, scorer)
        others = [global_alignment_score(x, o, scorer) for o in task.global_vocab if o != text]
        assert own == pytest.approx(1.0, abs=1e-9)
        assert all(own > other for other in others)
        assert all(-1.0 <= s <= 1.0 for s in [own, *others])


# -----------------------------------------------------------------------------
# ab accuracy and duration MAE
# -----------------------------------------------------------------------------


def test_ab_accuracy_examples():
    assert ab_accuracy([("A", "A"), ("B", "B")]) == 1.0
    alternating = [("A", "A"), ("A", "B")] * 5
    assert ab_accuracy(alternating) == 0.5
    with pytest.raises(ContractError):
        ab_accuracy([])
    with pytest.raises(ContractError):
        ab_accuracy([("A", "X")])


def test_ab_accuracy_random_judge_near_half():
    rng = np.random.default_rng(77)
    judgments = [
        (("A", "B")[int(rng.integers(0, 2))], ("A", "B")[int(rng.integers(0, 2))])
        for _ in range(10_000)
    ]
    acc = ab_accuracy(judgments)
    assert 0.45 <= acc <= 0.55
    assert 0.0 <= acc <= 1.0


def _doc(onsets, texts=None, total=100.0):
    texts = texts or [f"line {i}" for i in range(len(onsets))]
    return LrcDocument(
        lines=tuple(LrcLine(float(t), s) for t, s in zip(onsets, texts)), total_duration=total
    )


def test_duration_mae_identity_is_zero():
    doc = _doc([1.0, 5.0, 9.0])
    assert duration_mae(doc, doc) == 0.0


def test_duration_mae_uniform_shift():
    truth = _doc([1.0, 5.0, 9.0])
    shifted = _doc([2.0, 6.0, 10.0])
    assert duration_mae(shifted, truth) == pytest.approx(1.0)


def test_duration_mae_matches_brute_force(rng):
    for _ in range(30):
        n = int(rng.integers(1, 10))
        onsets = np.sort(rng.uniform(0, 90, size=n))
        noise = rng.normal(0, 2.0, size=n)
        truth = _doc(onsets)
        pred = _doc(np.sort(np.clip(onsets + noise, 0, 99.0)))
        got = duration_mae(pred, truth)
        expected = float(
            np.mean([abs(a.timestamp - b.timestamp) for a, b in zip(pred.lines, truth.lines)])
        )
        assert got == pytest.approx(expected, abs=1e-12)


def test_duration_mae_contract_errors():
    with pytest.raises(ContractError):
        duration_mae(_doc([1.0]), _doc([1.0, 2.0]))
    with pytest.raises(ContractError):
        duration_mae(_doc([1.0], texts=["one"]), _doc([1.0], texts=["different"]))


def test_validate_report():
    good = {
        "samples": [
            {
                "global_alignment": 0.5,
                "segment_alignment": {"per_segment": [0.4], "mean": 0.4},
            }
        ],
        "aggregate": {"global_alignment_mean": 0.5, "segment_alignment_mean": 0.4},
    }
    validate_report(good)
    with pytest.raises(ContractError):
        validate_report({"samples": []})
    with pytest.raises(ContractError):
        validate_report({"samples": [{}], "aggregate": {}})
