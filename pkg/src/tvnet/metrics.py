"""Evaluation metrics (numpy) and differentiable training losses (Tensor)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor


class UndefinedMetricError(ValueError):
    pass


@dataclass
class MetricReport:
    name: str
    value: float
    count: int
    tags: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise UndefinedMetricError(f"{self.name} is not finite")
        if self.count <= 0:
            raise UndefinedMetricError(f"{self.name} computed on an empty sample")

    def to_dict(self) -> dict:
        return {"name": self.name, "value": float(self.value), "count": int(self.count), "tags": dict(self.tags)}


def _pair(pred, actual):
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    actual = np.asarray(actual, dtype=np.float64).reshape(-1)
    if pred.shape != actual.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {actual.shape}")
    if pred.size == 0:
        raise UndefinedMetricError("metric of an empty input")
    return pred, actual


def mse(pred, actual) -> float:
    pred, actual = _pair(pred, actual)
    return float(np.mean((pred - actual) ** 2))


def mae(pred, actual) -> float:
    pred, actual = _pair(pred, actual)
    return float(np.mean(np.abs(pred - actual)))


def smape(pred, actual) -> float:
    """Symmetric MAPE in [0, 200]; terms with |x| + |x_hat| == 0 contribute 0."""
    pred, actual = _pair(pred, actual)
    denom = np.abs(actual) + np.abs(pred)
    num = np.abs(actual - pred)
    ratio = np.divide(num, denom, out=np.zeros_like(num), where=denom > 0)
    return float(200.0 * ratio.mean())


def mase(pred, actual, insample, period: int) -> float:
    """MAE scaled by the in-sample seasonal-naive MAE at lag ``period``."""
    pred, actual = _pair(pred, actual)
    insample = np.asarray(insample, dtype=np.float64).reshape(-1)
    if period < 1 or insample.size <= period:
        raise UndefinedMetricError(f"in-sample length {insample.size} must exceed the period {period}")
    scale = np.mean(np.abs(insample[period:] - insample[:-period]))
    if scale == 0:
        raise UndefinedMetricError("MASE undefined: seasonal differences of the in-sample series are all zero")
    return float(np.mean(np.abs(actual - pred)) / scale)


def owa(smape_model: float, mase_model: float, smape_naive2: float, mase_naive2: float) -> float:
    if smape_naive2 <= 0 or mase_naive2 <= 0:
        raise UndefinedMetricError("OWA needs positive Naive2 reference errors")
    return 0.5 * (smape_model / smape_naive2 + mase_model / mase_naive2)


def _acf(x: np.ndarray, lag: int) -> float:
    d = x - x.mean()
    denom = float(d @ d)
    if denom == 0:
        return 0.0
    return float(d[:-lag] @ d[lag:] / denom)


def _centered_moving_average(x: np.ndarray, period: int) -> np.ndarray:
    """Trend with NaN at the edges; a 2 x period average for even periods."""
    n = len(x)
    trend = np.full(n, np.nan)
    if period % 2:
        h = period // 2
        for t in range(h, n - h):
            trend[t] = x[t - h:t + h + 1].mean()
    else:
        h = period // 2
        w = np.r_[0.5, np.ones(period - 1), 0.5] / period
        for t in range(h, n - h):
            trend[t] = w @ x[t - h:t + h + 1]
    return trend


def seasonal_indices(x: np.ndarray, period: int) -> np.ndarray:
    """Classical multiplicative seasonal indices (mean 1), indexed by t mod period."""
    trend = _centered_moving_average(x, period)
    ratio = x / trend
    idx = np.array([np.nanmean(ratio[pos::period]) for pos in range(period)])
    return idx / idx.mean()


def is_seasonal(x: np.ndarray, period: int) -> bool:
    """90% significance test on the lag-``period`` autocorrelation."""
    if period <= 1:
        return False
    return abs(_acf(x, period)) > 1.645 / np.sqrt(len(x))


def naive2_forecast(insample, period: int, horizon: int) -> np.ndarray:
    """Seasonally adjusted naive forecast (classical multiplicative decomposition when seasonal)."""
    x = np.asarray(insample, dtype=np.float64).reshape(-1)
    if len(x) < max(3 * period, 2):
        raise ValueError(f"Naive2 needs at least {max(3 * period, 2)} in-sample points, got {len(x)}")
    if is_seasonal(x, period):
        si = seasonal_indices(x, period)
        n = len(x)
        last = x[-1] / si[(n - 1) % period]
        future = np.arange(n, n + horizon) % period
        return last * si[future]
    return np.full(horizon, x[-1])


def prf1(pred_labels, true_labels) -> tuple:
    pred = np.asarray(pred_labels).astype(bool).reshape(-1)
    true = np.asarray(true_labels).astype(bool).reshape(-1)
    if pred.shape != true.shape:
        raise ValueError(f"label length mismatch: {pred.shape} vs {true.shape}")
    tp = int(np.sum(pred & true))
    precision = tp / int(pred.sum()) if pred.any() else 0.0
    recall = tp / int(true.sum()) if true.any() else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def accuracy(pred_classes, true_classes) -> float:
    pred = np.asarray(pred_classes).reshape(-1)
    true = np.asarray(true_classes).reshape(-1)
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {true.shape}")
    if pred.size == 0:
        raise UndefinedMetricError("accuracy of an empty input")
    return float(np.mean(pred == true))


# -- differentiable losses ------------------------------------------------------------

def mse_loss(pred: Tensor, target) -> Tensor:
    diff = pred - T.as_tensor(target)
    return (diff * diff).mean()


def masked_mse_loss(pred: Tensor, target, mask) -> Tensor:
    """MSE over positions where ``mask`` is true (the hidden entries)."""
    m = np.asarray(mask, dtype=pred.data.dtype)
    count = float(m.sum())
    if count == 0:
        raise UndefinedMetricError("masked loss with an empty mask")
    diff = (pred - T.as_tensor(target)) * Tensor(m)
    return (diff * diff).sum() * (1.0 / count)


def smape_loss(pred: Tensor, target, eps: float = 1e-8) -> Tensor:
    target = T.as_tensor(target)
    num = T.tabs(pred - target)
    denom = T.tabs(pred) + T.tabs(target) + eps
    return (num / denom).mean() * 200.0


def cross_entropy(logits: Tensor, classes) -> Tensor:
    classes = np.asarray(classes, dtype=np.int64).reshape(-1)
    logp = T.log_softmax(logits)
    picked = logp[np.arange(len(classes)), classes]
    return -picked.mean()


LOSSES = {"mse": mse_loss, "smape": smape_loss, "cross_entropy": cross_entropy}
