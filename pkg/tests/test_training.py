import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ctpnet.data import NormStats, RawSeries, make_windows, stack_windows
from ctpnet.errors import ConfigInvalid, DataEmpty, Diverged, ParseError, ShapeMismatch
from ctpnet.model import CTPNet, CTPNetConfig
from ctpnet.synthetic import seasonal_series
from ctpnet.tensor import Parameter, backward
from ctpnet.training import (
    Adam,
    TrainConfig,
    adam_step,
    evaluate,
    l1_loss,
    load_checkpoint,
    mae,
    mse,
    save_checkpoint,
    train,
)

TINY = dict(n_channels=2, L_in=8, L_out=8, P=2, W=6, D=4, H_c=2, H_b=2)


def tiny_model(seed=0, **kw):
    return CTPNet(CTPNetConfig(**{**TINY, **kw}), seed=seed)


@pytest.fixture
def windows():
    s = seasonal_series(120, 2, periods=(8,), noise=0.05, seed=1)
    w = make_windows(s, 8, 8)
    return w[:60], w[60:80], w[80:]


class TestLossAndMetrics:
    def test_l1(self):
        assert l1_loss(np.array([1.0, 2.0]), np.array([1.0, 3.0])).item() == 0.5

    def test_l1_zero(self, rng):
        x = rng.normal(size=5)
        assert l1_loss(x, x).item() == 0.0

    def test_l1_gradient_is_sign(self):
        p = Parameter([2.0])
        backward(l1_loss(p, np.array([1.0])))
        assert p.grad.tolist() == [1.0]

    def test_l1_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            l1_loss(np.zeros(2), np.zeros(3))

    def test_metrics(self):
        assert mse([1.0, 3.0], [0.0, 0.0]) == 5.0
        assert mae([1.0, -3.0], [0.0, 0.0]) == 2.0

    @settings(max_examples=50, deadline=None)
    @given(hnp.arrays(np.float64, st.integers(1, 30), elements=st.floats(-1e3, 1e3)))
    def test_jensen(self, err):
        assert mae(err, np.zeros_like(err)) ** 2 <= mse(err, np.zeros_like(err)) * (1 + 1e-12) + 1e-300


class TestAdam:
    def test_first_step_is_signed_lr(self):
        p = [np.array([1.0, -2.0, 3.0])]
        adam_step(p, [np.array([0.5, -4.0, 1e-3])], {}, lr=0.1)
        np.testing.assert_allclose(p[0], [0.9, -1.9, 2.9], atol=1e-6)

    def test_zero_gradient_no_move(self):
        p = [np.array([1.0, 2.0])]
        adam_step(p, [np.zeros(2)], {}, lr=0.1)
        assert p[0].tolist() == [1.0, 2.0]

    def test_zero_lr_bit_identical(self, rng):
        w = rng.normal(size=4)
        p = [w.copy()]
        state = {}
        for _ in range(3):
            adam_step(p, [rng.normal(size=4)], state, lr=0.0)
        assert np.array_equal(p[0], w)

    def test_minimises_quadratic(self):
        w = Parameter([3.0, -2.0], "w")
        opt = Adam([w], lr=0.1)
        start = float((w.data**2).sum())
        for _ in range(50):
            opt.zero_grad()
            backward((w * w).sum())
            opt.step()
        assert float((w.data**2).sum()) < start * 0.1

    def test_bias_correction_state(self):
        state = {}
        adam_step([np.zeros(1)], [np.ones(1)], state)
        adam_step([np.zeros(1)], [np.ones(1)], state)
        assert state["step"] == 2


class TestTrainConfig:
    @pytest.mark.parametrize("kw", [dict(lr=-1), dict(batch_size=0), dict(patience=40), dict(betas=(1.0, 0.9)),
                                    dict(loss="l2"), dict(eps=0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigInvalid):
            TrainConfig(**kw).validate()

    def test_from_dict_ignores_model_keys(self):
        c = TrainConfig.from_dict({"lr": 0.01, "betas": [0.8, 0.99], "D": 5})
        assert c.lr == 0.01 and c.betas == (0.8, 0.99)


class TestTrain:
    def test_deterministic(self, windows):
        cfg = TrainConfig(max_epochs=3, patience=3, batch_size=16, seed=7)
        runs = []
        for _ in range(2):
            model = tiny_model(seed=7)
            record = train(model, windows[0], windows[1], cfg, windows[2])
            runs.append((record.train_losses, record.val_losses, record.test, model.state_dict()))
        assert runs[0][:3] == runs[1][:3]
        assert all(np.array_equal(runs[0][3][k], runs[1][3][k]) for k in runs[0][3])

    def test_zero_lr_stops_after_patience(self, windows):
        model = tiny_model()
        before = model.state_dict()
        record = train(model, windows[0], windows[1], TrainConfig(lr=0.0, max_epochs=10, patience=1))
        assert record.epochs == 2 and record.best_epoch == 1
        assert all(np.array_equal(before[k], v) for k, v in model.state_dict().items())

    def test_restores_best_weights(self, windows):
        model = tiny_model()
        record = train(model, windows[0], windows[1], TrainConfig(lr=0.05, max_epochs=6, patience=6, batch_size=8))
        best = min(record.val_losses)
        assert record.val_losses[record.best_epoch - 1] == best
        assert evaluate(model, windows[1]).mae == pytest.approx(best, abs=1e-12)

    def test_loss_decreases(self, windows):
        record = train(tiny_model(), windows[0], windows[1], TrainConfig(lr=1e-2, max_epochs=8, patience=8, batch_size=8))
        assert record.train_losses[-1] < record.train_losses[0]

    def test_empty(self, windows):
        with pytest.raises(DataEmpty):
            train(tiny_model(), [], windows[1])
        with pytest.raises(DataEmpty):
            train(tiny_model(), windows[0], [])

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence(self, windows):
        model = tiny_model()
        with pytest.raises(Diverged) as info:
            train(model, windows[0], windows[1], TrainConfig(lr=1e300, max_epochs=3, patience=1, batch_size=8))
        assert info.value.record is not None and info.value.record.status == "diverged"


class MeanModel:
    def predict(self, x, t):
        return np.zeros(x.shape[:2] + (8,))


class TestEvaluate:
    def test_zero_forecast_on_white_noise(self):
        values = np.random.default_rng(0).normal(size=(3, 4000))
        metrics = evaluate(MeanModel(), make_windows(RawSeries(values, ["a", "b", "c"]), 8, 8, stride=8))
        assert metrics.mse == pytest.approx(1.0, abs=0.05)
        assert metrics.mae == pytest.approx(np.sqrt(2 / np.pi), abs=0.03)

    def test_counts_every_scalar(self, windows):
        metrics = evaluate(tiny_model(), windows[2])
        assert metrics.n == len(windows[2]) * 2 * 8

    def test_order_and_batch_invariance(self, windows):
        model = tiny_model()
        a = evaluate(model, windows[2], batch_size=3)
        b = evaluate(model, windows[2][::-1], batch_size=100)
        assert a.mse == pytest.approx(b.mse, rel=1e-12) and a.mae == pytest.approx(b.mae, rel=1e-12)

    def test_matches_direct_computation(self, windows):
        model = tiny_model()
        x, y, t = stack_windows(windows[2])
        pred = model.predict(x, t)
        metrics = evaluate(model, windows[2])
        assert metrics.mse == pytest.approx(mse(pred, y), rel=1e-12)

    def test_empty(self):
        with pytest.raises(DataEmpty):
            evaluate(tiny_model(), [])


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        model = tiny_model(seed=3)
        norm = NormStats(rng.normal(size=2), rng.uniform(1, 2, size=2))
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, norm, extra={"dataset": "toy"})
        loaded, norm2, extra = load_checkpoint(path)
        x = rng.normal(size=(2, 2, 8))
        assert np.array_equal(loaded.predict(x, [0, 5]), model.predict(x, [0, 5]))
        assert np.array_equal(norm2.mean, norm.mean) and np.array_equal(norm2.std, norm.std)
        assert extra == {"dataset": "toy"}
        assert loaded.config == model.config

    def test_ablated_round_trip(self, tmp_path):
        model = tiny_model(ablate_i1=True, ablate_i3=True)
        save_checkpoint(tmp_path / "m.ckpt", model)
        loaded, norm, _ = load_checkpoint(tmp_path / "m.ckpt")
        assert norm is None and loaded.crl is None and loaded.prl == []

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.ckpt").write_bytes(b"not a checkpoint")
        with pytest.raises(ParseError):
            load_checkpoint(tmp_path / "x.ckpt")
