import numpy as np
import pytest

import songflow.flow as flow_mod
from conftest import fd_max_rel_error
from songflow.config import load_config
from songflow.errors import ContractError, DimensionError, NumericAbort
from songflow.flow import (
    FixedDataset,
    TrainBatch,
    TrainConfig,
    TrainExample,
    cfm_loss,
    interpolate,
    target_velocity,
    train,
)
from songflow.synthetic import SyntheticDataset
from songflow.system import build_song_model
from songflow.tensor import Tensor


def _tiny_overrides(steps=5, batch=2):
    return [
        "model.n_blocks=1",
        "model.model_width=8",
        "model.n_heads=2",
        "model.d_t=4",
        "conditioning.d_global=4",
        "conditioning.d_segment=4",
        "conditioning.d_text=4",
        "conditioning.d_lyrics=4",
        "task.T=12",
        "task.d_audio=2",
        "task.min_width=4",
        f"train.steps={steps}",
        f"train.batch_size={batch}",
    ]


def _tiny_setup(steps=5, batch=2):
    cfg = load_config(overrides=_tiny_overrides(steps, batch))
    system = build_song_model(cfg)
    dataset = SyntheticDataset(cfg.task_spec(), max_segments=2, min_width=4)
    return cfg, system, dataset


def test_interpolate_endpoints_exact(rng):
    x0 = rng.standard_normal((5, 3))
    x1 = rng.standard_normal((5, 3))
    assert np.array_equal(interpolate(x0, x1, 0.0), x0)
    assert np.array_equal(interpolate(x0, x1, 1.0), x1)


def test_interpolate_midpoint_constant():
    x0 = np.zeros((4, 2))
    x1 = np.full((4, 2), 2.0)
    assert np.array_equal(interpolate(x0, x1, 0.5), np.ones((4, 2)))


def test_interpolate_contracts():
    with pytest.raises(DimensionError):
        interpolate(np.zeros((2, 2)), np.zeros((3, 2)), 0.5)
    with pytest.raises(ContractError):
        interpolate(np.zeros((2, 2)), np.zeros((2, 2)), 1.5)


def test_interpolate_is_affine_in_t(rng):
    x0 = rng.standard_normal((6, 2))
    x1 = rng.standard_normal((6, 2))
    for _ in range(20):
        a, b = sorted(rng.uniform(0, 1, size=2))
        mid = interpolate(x0, x1, (a + b) / 2)
        avg = (interpolate(x0, x1, a) + interpolate(x0, x1, b)) / 2
        assert np.abs(mid - avg).max() < 1e-12


def test_target_velocity_examples(rng):
    x = rng.standard_normal((3, 3))
    assert np.array_equal(target_velocity(x, x), np.zeros_like(x))
    y = rng.standard_normal((3, 3))
    assert np.array_equal(target_velocity(np.zeros_like(y), y), y)


def test_interpolation_identity(rng):
    x0 = rng.standard_normal((4, 2))
    x1 = rng.standard_normal((4, 2))
    for t in rng.uniform(0, 1, size=10):
        lhs = interpolate(x0, x1, float(t)) + (1.0 - t) * target_velocity(x0, x1)
        assert np.abs(lhs - x1).max() < 1e-12


class _OracleModel:
    """Always returns the true displacement; the loss must be exactly zero."""

    def __init__(self):
        self.x0 = None
        self.x1 = None

    def forward(self, x_t, cond, t):
        return Tensor(self.x1 - self.x0)


def test_cfm_loss_zero_for_oracle_model(rng):
    cfg, system, dataset = _tiny_setup()
    batch = dataset.draw(rng, 2)

    class Oracle:
        def forward(self, x_t, cond, t):
            # x_t = (1-t) x0 + t x1  =>  x1 - x0 = (x1 - x_t) / (1 - t)
            ex = self._current
            x0 = (x_t.data - t * ex.x1) / (1.0 - t) if t < 1.0 else None
            return Tensor(ex.x1 - x0)

    oracle = Oracle()
    total = 0.0
    for ex in batch.examples:
        oracle._current = ex
        single = TrainBatch((ex,))
        loss = cfm_loss(oracle, system.encoder, single, np.random.default_rng(7))
        total += float(loss.data)
    assert total < 1e-18


def test_cfm_loss_of_zero_model_matches_variance_sum():
    """v = 0 and unit-variance x1 make the loss E||x1 - x0||^2 / N = 2."""
    cfg, system, _ = _tiny_setup()
    rng = np.random.default_rng(5)
    shape = (cfg.task.T, cfg.task.d_audio)
    examples = [
        TrainExample(
            id=f"u{i}",
            spec=_unit_spec(cfg),
            doc=None,
            x1=rng.standard_normal(shape),
        )
        for i in range(1000)
    ]

    class ZeroModel:
        def forward(self, x_t, cond, t):
            return Tensor(np.zeros_like(x_t.data))

    loss = cfm_loss(ZeroModel(), system.encoder, TrainBatch(tuple(examples)),
                    np.random.default_rng(11))
    assert abs(float(loss.data) - 2.0) < 0.3
    assert float(loss.data) >= 0.0


def _unit_spec(cfg):
    from songflow.conditioning import PromptSpec

    return PromptSpec(global_text="ember")


def test_cfm_loss_gradient_matches_finite_differences(rng):
    cfg, system, dataset = _tiny_setup()
    batch = dataset.draw(rng, 1)
    params = [t for _, t in system.named_parameters()]

    def build_loss():
        return cfm_loss(
            system.model,
            system.encoder,
            batch,
            np.random.default_rng(21),  # frozen (t, x0, dropout) draw
            p_drop_global=0.5,
            p_drop_segment=0.5,
        )

    assert fd_max_rel_error(build_loss, params) < 1e-3


def test_train_requires_at_least_one_step():
    with pytest.raises(ContractError):
        TrainConfig(steps=0)


def test_train_is_deterministic(tmp_path):
    a_dir, b_dir = tmp_path / "a", tmp_path / "b"
    a_dir.mkdir(), b_dir.mkdir()
    for out in (a_dir, b_dir):
        cfg, system, dataset = _tiny_setup(steps=5, batch=2)
        train(system, dataset, cfg.train, checkpoint_dir=out)
    assert (a_dir / "checkpoint.json").read_bytes() == (b_dir / "checkpoint.json").read_bytes()


def test_train_reduces_loss_and_logs(tmp_path):
    cfg, system, dataset = _tiny_setup(steps=60, batch=4)
    log = tmp_path / "log.jsonl"
    report = train(system, dataset, cfg.train, log_path=log)
    assert report.steps == 60
    first, last = report.smoothed(k=15)
    assert last < first
    import json

    lines = [json.loads(l) for l in log.read_text().splitlines()]
    assert len(lines) == 60
    assert set(lines[0]) == {"step", "loss", "wall_ms"}


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_train_aborts_on_nan_with_diagnostics():
    cfg, system, dataset = _tiny_setup(steps=3, batch=2)

    class PoisonedDataset:
        def __init__(self, inner):
            self.inner = inner

        def draw(self, rng, n):
            batch = self.inner.draw(rng, n)
            bad = TrainExample(
                id="poison", spec=batch.examples[0].spec, doc=batch.examples[0].doc,
                x1=batch.examples[0].x1 * 1e200,
            )
            return TrainBatch((bad,) + batch.examples[1:])

    with pytest.raises(NumericAbort) as err:
        train(system, PoisonedDataset(dataset), cfg.train)
    assert err.value.step == 0
    assert "poison" in err.value.batch_ids


def test_dropout_frequency_during_training(monkeypatch):
    cfg, system, dataset = _tiny_setup(steps=2500, batch=2)
    observed = []
    real = flow_mod.apply_condition_dropout

    def spy(bundle, p_g, p_l, rng, p_lyrics=0.0):
        out = real(bundle, p_g, p_l, rng, p_lyrics=p_lyrics)
        observed.append((out.drop_global, out.drop_segment))
        return out

    monkeypatch.setattr(flow_mod, "apply_condition_dropout", spy)
    train(system, dataset, cfg.train)
    flags = np.array(observed, dtype=float)
    assert flags.shape[0] == 2500 * 2
    assert abs(flags[:, 0].mean() - cfg.train.p_drop_global) <= 0.02
    assert abs(flags[:, 1].mean() - cfg.train.p_drop_segment) <= 0.02
