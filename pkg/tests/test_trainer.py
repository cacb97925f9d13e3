import numpy as np
import pytest

from tvnet.checkpoint import CheckpointError, from_bytes, load_checkpoint, save_checkpoint, to_bytes
from tvnet.config import REFERENCE_SEEDS, TaskConfig
from tvnet.data import gen_mask, split_normalize, sum_of_sines
from tvnet.embedding import ConfigError
from tvnet.tensor import Tensor
from tvnet.trainer import (AdamState, TrainingDiverged, _Task, adam_step, build_model, evaluate, evaluate_loss,
                           train)


def small_config(**kw):
    values = dict(c_m=8, n_blocks=2, patch_len=8, seq_len=32, horizon=8, lr=1e-3, epochs=3, batch_size=32,
                  seed=0, stride=4)
    values.update(kw)
    return TaskConfig.for_task("long_forecast", **values)


@pytest.fixture(scope="module")
def bundle():
    return split_normalize(sum_of_sines(600, n_vars=2, noise=0.05, seed=3), (0.7, 0.1, 0.2))


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        p.grad = np.zeros(2)
        adam_step({"p": p}, AdamState(), 0.1)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_quadratic_descent(self):
        # reference trajectory of f(w) = w^2 from an independent Adam implementation (float64)
        frozen = {1: 0.9000000005, 10: 0.07624915560691209, 11: 0.005131501948057088,
                  12: -0.05893789063004737, 50: -0.004818223222661105}
        w = Tensor(np.array([1.0]), requires_grad=True)
        state, path = AdamState(), [1.0]
        for _ in range(50):
            w.grad = 2 * w.data
            adam_step({"w": w}, state, 0.1)
            path.append(float(w.data[0]))
        for step, value in frozen.items():
            assert path[step] == pytest.approx(value, rel=1e-9, abs=1e-12)
        # monotone until the momentum carries w past the minimum
        first_cross = next(i for i, v in enumerate(path) if v < 0)
        assert all(b < a for a, b in zip(path[:first_cross], path[1:first_cross]))
        assert abs(path[-1]) < 0.01

    def test_first_step_is_lr_times_sign(self):
        p = Tensor(np.array([0.0, 0.0, 0.0]), requires_grad=True)
        p.grad = np.array([3.0, -0.5, 1e-3])
        adam_step({"p": p}, AdamState(), 0.01)
        np.testing.assert_allclose(p.data, [-0.01, 0.01, -0.01], rtol=1e-4)

    def test_step_invariant_to_loss_scale(self):
        outs = []
        for c in (1.0, 1000.0):
            p = Tensor(np.array([0.3, -0.7]), requires_grad=True)
            p.grad = c * np.array([0.2, 0.4])
            adam_step({"p": p}, AdamState(), 0.05)
            outs.append(p.data)
        np.testing.assert_allclose(outs[0], outs[1], rtol=1e-6)

    def test_non_finite_gradient_aborts(self):
        p = Tensor(np.zeros(3), requires_grad=True)
        p.grad = np.array([0.0, np.nan, 1.0])
        with pytest.raises(FloatingPointError, match=r"p at \[1\]"):
            adam_step({"p": p}, AdamState(), 0.1)
        np.testing.assert_array_equal(p.data, 0.0)


class TestConfig:
    def test_defaults(self):
        lt = TaskConfig.for_task("long_forecast")
        assert (lt.kernel_size, lt.n_blocks, lt.c_m, lt.patch_len, lt.lr, lt.loss, lt.batch_size, lt.epochs) == (
            3, 3, 64, 24, 1e-4, "mse", 32, 10)
        st = TaskConfig.for_task("short_forecast")
        assert (st.patch_len, st.lr, st.loss, st.batch_size) == (8, 1e-3, "smape", 16)
        im = TaskConfig.for_task("imputation")
        assert (im.patch_len, im.lr, im.loss, im.batch_size) == (1, 1e-3, "mse", 16)
        cl = TaskConfig.for_task("classification")
        assert (cl.epochs, cl.loss, cl.c_m, cl.d_max) == (30, "cross_entropy", None, 64)
        an = TaskConfig.for_task("anomaly")
        assert (an.n_blocks, an.patch_len, an.batch_size, an.lr, an.d_max) == (5, 8, 128, 1e-4, 128)
        assert lt.seed == 2024 and 2024 in REFERENCE_SEEDS

    def test_strict_parsing(self, tmp_path):
        with pytest.raises(ConfigError, match="lerning_rate"):
            TaskConfig.from_dict({"lerning_rate": 0.1})
        path = tmp_path / "c.json"
        path.write_text('{"task": "short_forecast", "horizon": 12}')
        assert TaskConfig.from_json(path).seq_len == 24
        path.write_text("[1, 2]")
        with pytest.raises(ConfigError):
            TaskConfig.from_json(path)

    @pytest.mark.parametrize("bad", [dict(kernel_size=2), dict(patch_len=3), dict(task="nope"), dict(loss="l1"),
                                     dict(dtype="float16"), dict(horizon=0)])
    def test_validation(self, bad):
        with pytest.raises(ConfigError):
            TaskConfig.from_dict({**small_config().to_dict(), **bad})


class TestTraining:
    def test_lr_zero_keeps_init(self, bundle):
        cfg = small_config(lr=0.0, epochs=2, patience=5)
        model0 = build_model(cfg, bundle)
        init = model0.state_dict()
        model, history = train(cfg, bundle)
        assert history[0]["val_loss"] == history[1]["val_loss"]
        for name, arr in model.state_dict().items():
            if "running" not in name:
                np.testing.assert_array_equal(arr, init[name])

    def test_train_loss_decreases(self):
        data = split_normalize(sum_of_sines(2000, seed=0), (0.7, 0.1, 0.2))
        cfg = small_config(c_m=32, seq_len=96, horizon=96, patch_len=24, epochs=5, patience=5, stride=8)
        _, history = train(cfg, data)
        losses = [h["train_loss"] for h in history]
        assert len(losses) == 5 and all(b < a for a, b in zip(losses, losses[1:]))

    def test_bit_identical_history(self, bundle):
        cfg = small_config()
        m1, h1 = train(cfg, bundle)
        m2, h2 = train(cfg, bundle)
        assert h1 == h2
        assert to_bytes(m1) == to_bytes(m2)

    def test_best_checkpoint_returned(self, bundle):
        cfg = small_config(epochs=6, lr=3e-2, patience=2)
        model, history = train(cfg, bundle)
        best = min(h["val_loss"] for h in history)
        assert model.best_val_loss == best
        assert evaluate_loss(model, bundle, cfg, "val") == pytest.approx(best, rel=1e-12)

    def test_early_stopping_patience(self, bundle):
        cfg = small_config(epochs=50, lr=0.0, patience=3)
        _, history = train(cfg, bundle)
        assert len(history) == 4  # best at epoch 0, then 3 stale epochs

    @pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
    def test_divergence_reports_last_good_state(self, bundle):
        cfg = small_config(lr=1e300, epochs=3)
        with pytest.raises(TrainingDiverged) as info:
            train(cfg, bundle)
        assert info.value.last_good_state is not None
        assert all(np.all(np.isfinite(v)) for v in info.value.last_good_state.values())

    def test_evaluate_metrics(self, bundle):
        cfg = small_config(epochs=1)
        model, _ = train(cfg, bundle)
        out = evaluate(model, bundle, cfg, "test")
        assert set(out) == {"mse", "mae", "count"} and out["count"] > 0

    def test_short_term_reports_owa(self):
        data = split_normalize(sum_of_sines(800, periods=(4.0,), amplitudes=(1.0,), seed=1) + 5.0)
        cfg = TaskConfig.for_task("short_forecast", c_m=8, n_blocks=1, horizon=12, epochs=1, period=4, seed=0,
                                  stride=4)
        model, _ = train(cfg, data)
        out = evaluate(model, data, cfg, "test")
        for key in ("smape", "mase", "owa", "smape_naive2", "mase_naive2"):
            assert np.isfinite(out[key])

    def test_imputation_loss_ignores_unmasked(self):
        data = split_normalize(sum_of_sines(400, n_vars=3, seed=2))
        cfg = TaskConfig.for_task("imputation", c_m=8, n_blocks=1, seq_len=16, epochs=1, seed=0)
        model = build_model(cfg, data)
        x = np.random.default_rng(0).standard_normal((2, 16, 3))
        target = Tensor(x.copy(), requires_grad=True)
        mask = gen_mask(x.shape, 0.25, 0)
        model.zero_grad()
        loss = _Task(cfg).loss(model, x, target, mask)
        loss.backward()
        assert np.all(target.grad[~mask] == 0.0)


class TestCheckpoint:
    def test_roundtrip_idempotent(self, bundle, tmp_path):
        cfg = small_config(epochs=1)
        model, _ = train(cfg, bundle)
        save_checkpoint(model, tmp_path / "a.ckpt")
        loaded = load_checkpoint(tmp_path / "a.ckpt")
        save_checkpoint(loaded, tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
        for k, v in model.state_dict().items():
            np.testing.assert_array_equal(loaded.state_dict()[k], v)
        assert loaded.best_val_loss == model.best_val_loss

    def test_truncated_payload_names_tensor(self, bundle):
        model = build_model(small_config(), bundle)
        last = list(model.state_dict())[-1]
        blob = to_bytes(model)
        with pytest.raises(CheckpointError, match=f"tensor {last}: payload truncated"):
            from_bytes(blob[:-3])

    def test_length_mismatch_names_tensor(self, bundle):
        blob = to_bytes(build_model(small_config(), bundle)).decode("latin-1")
        line = next(l for l in blob.split("\n") if l.startswith("tensor embed.b_feat"))
        parts = line.split()
        parts[-1] = str(int(parts[-1]) + 8)
        with pytest.raises(CheckpointError, match="embed.b_feat"):
            from_bytes(blob.replace(line, " ".join(parts)).encode("latin-1"))

    def test_garbage(self):
        with pytest.raises(CheckpointError):
            from_bytes(b"not a checkpoint")

    def test_float32_replay_of_val_loss(self, bundle, tmp_path):
        cfg = small_config(dtype="float32", epochs=2)
        model, _ = train(cfg, bundle)
        save_checkpoint(model, tmp_path / "m.ckpt")
        loaded = load_checkpoint(tmp_path / "m.ckpt")
        assert loaded.parameters()["blocks.0.W_b"].data.dtype == np.float32
        assert abs(evaluate_loss(loaded, bundle, cfg, "val") - model.best_val_loss) <= 1e-6
