import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tvnet.config import TaskConfig, size_channels
from tvnet.data import ClassificationSet
from tvnet.embedding import ConfigError
from tvnet.heads import (HeadParams, anomaly_pipeline, anomaly_threshold, classification_head, forecast_head,
                         imputation_head, reconstruction_scores)
from tvnet.model import TVNet
from tvnet.tensor import Tensor
from tvnet.trainer import evaluate, train


def bias_free(kind, rng, **kw):
    return HeadParams.init(kind, rng=rng, bias=False, **kw)


def test_forecast_head_identity():
    x = np.random.default_rng(0).standard_normal((2, 5, 3))
    head = HeadParams("forecast", Tensor(np.eye(5)), None, Tensor(np.eye(3)), None)
    np.testing.assert_array_equal(forecast_head(Tensor(x), head).data, x)


def test_forecast_head_mean_example():
    x = np.array([[[1.0, 10.0], [3.0, 20.0]]])
    head = HeadParams("forecast", Tensor([[0.5], [0.5]]), None, Tensor(np.eye(2)), None)
    np.testing.assert_allclose(forecast_head(Tensor(x), head).data, [[[2.0, 15.0]]])


def test_forecast_head_shape_and_mismatch():
    rng = np.random.default_rng(1)
    head = HeadParams.init("forecast", seq_len=96, c_m=8, rng=rng, horizon=192, c_out=7)
    assert forecast_head(Tensor(np.zeros((2, 96, 8))), head).shape == (2, 192, 7)
    with pytest.raises(ValueError):
        forecast_head(Tensor(np.zeros((2, 48, 8))), head)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
def test_forecast_head_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    head = bias_free("forecast", rng, seq_len=6, c_m=3, horizon=4, c_out=2)
    x, y = rng.standard_normal((2, 2, 6, 3))
    lhs = forecast_head(Tensor(a * x + b * y), head).data
    rhs = a * forecast_head(Tensor(x), head).data + b * forecast_head(Tensor(y), head).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_imputation_head_is_per_token():
    rng = np.random.default_rng(2)
    head = HeadParams.init("imputation", seq_len=4, c_m=3, rng=rng, c_out=2)
    x = rng.standard_normal((1, 4, 3))
    out = imputation_head(Tensor(x), head).data
    np.testing.assert_allclose(out[0], x[0] @ head.channel_w.data + head.channel_b.data)


def test_imputation_requires_unit_patch():
    with pytest.raises(ConfigError):
        TaskConfig.for_task("imputation", patch_len=8)


def test_classification_logits_permute_with_columns():
    rng = np.random.default_rng(3)
    head = HeadParams.init("classification", seq_len=4, c_m=2, rng=rng, num_classes=5)
    x = Tensor(rng.standard_normal((3, 4, 2)))
    perm = rng.permutation(5)
    swapped = HeadParams("classification", class_w=Tensor(head.class_w.data[:, perm]),
                         class_b=Tensor(head.class_b.data[perm]))
    np.testing.assert_allclose(classification_head(x, swapped).data, classification_head(x, head).data[:, perm])


def test_size_channels_examples():
    assert size_channels(7) == 32
    assert size_channels(144) == 64
    assert size_channels(144, 32, 128) == 128
    assert TaskConfig.for_task("anomaly").channels_for(38) == 32


def test_separable_classification_reaches_full_train_accuracy():
    rng = np.random.default_rng(4)

    def make(n):
        y = rng.integers(0, 2, n)
        t = np.arange(16)
        x = np.stack([np.sin(t / 2.0 + np.pi * k)[:, None] + 0.1 * rng.standard_normal((16, 2)) for k in y])
        return x, y

    data = ClassificationSet.from_arrays(*make(32), *make(16), *make(16))
    config = TaskConfig.for_task("classification", epochs=30, seed=0, patience=30)
    model, _ = train(config, data)
    assert model.c_m == 32
    assert evaluate(model, data, config, "train")["accuracy"] == 1.0


class _Echo:
    """Perfect reconstructor."""
    seq_len = 8

    def predict(self, x):
        return x


class _Zero:
    seq_len = 8

    def predict(self, x):
        return np.zeros_like(x)


def test_perfect_reconstruction_flags_nothing():
    series = np.random.default_rng(5).standard_normal((30, 2))
    res = anomaly_pipeline(series, _Echo(), [series], 0.01)
    assert np.all(res.scores == 0) and not res.labels.any()


def test_reconstruction_scores_cover_every_step():
    series = np.arange(20.0).reshape(20, 1)
    scores = reconstruction_scores(_Zero(), series)
    np.testing.assert_array_equal(scores, series[:, 0] ** 2)
    with pytest.raises(ValueError):
        reconstruction_scores(_Zero(), series[:5])


def test_threshold_quantile_and_empty():
    assert anomaly_threshold(np.arange(101.0), 0.01) == pytest.approx(99.0)
    with pytest.raises(ValueError):
        anomaly_threshold(np.array([]), 0.01)
    with pytest.raises(ValueError):
        anomaly_pipeline(np.zeros((8, 1)), _Echo(), [], 0.01)


def test_labels_monotone_in_ratio():
    rng = np.random.default_rng(6)
    series = rng.standard_normal((64, 1))
    calib = [rng.standard_normal((64, 1))]
    prev = None
    for ratio in (0.01, 0.05, 0.2, 0.5):
        labels = anomaly_pipeline(series, _Zero(), calib, ratio).labels
        if prev is not None:
            assert np.all(labels[prev])
        prev = labels


def test_single_spike_flagged_by_trained_model():
    from tvnet.data import sum_of_sines, split_normalize
    clean = sum_of_sines(1200, seed=1)
    bundle = split_normalize(clean, (0.7, 0.1, 0.2))
    config = TaskConfig.for_task("anomaly", c_m=16, n_blocks=1, lr=1e-3, epochs=4, stride=4, seed=0)
    model, _ = train(config, bundle)
    test = bundle.segment("test").copy()
    test[100] += 6.0
    res = anomaly_pipeline(test, model, [bundle.segment("train"), bundle.segment("val")], 0.01)
    assert res.labels[100]
    assert res.scores.argmax() == 100


def test_model_parameter_names_are_stable():
    cfg = TaskConfig.for_task("long_forecast", c_m=4, n_blocks=2, seq_len=48, horizon=24)
    names = list(TVNet(cfg, 3).parameters())
    assert names[:2] == ["embed.W_feat", "embed.b_feat"]
    assert "blocks.1.W_b" in names and names[-1] == "head.channel_b"


def test_instance_norm_is_affine_equivariant():
    cfg = TaskConfig.for_task("long_forecast", c_m=4, n_blocks=1, seq_len=48, horizon=24, instance_norm=True)
    model = TVNet(cfg, 3)
    x = np.random.default_rng(7).standard_normal((2, 48, 3)) * 10
    np.testing.assert_allclose(model.predict(x * 3 - 50), model.predict(x) * 3 - 50, rtol=1e-6, atol=1e-6)
    assert TaskConfig.for_task("long_forecast").instance_norm
    assert not TaskConfig.for_task("short_forecast", horizon=6).instance_norm
