"""Task heads applied to the flattened [B, L, C_m] representation, plus anomaly scoring."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class HeadParams:
    kind: str  # "forecast" | "imputation" | "classification"
    temporal_w: Optional[Tensor] = None  # [L, T]
    temporal_b: Optional[Tensor] = None
    channel_w: Optional[Tensor] = None  # [C_m, C_out]
    channel_b: Optional[Tensor] = None
    class_w: Optional[Tensor] = None  # [L * C_m, K]
    class_b: Optional[Tensor] = None

    @classmethod
    def init(cls, kind: str, *, seq_len: int, c_m: int, rng: np.random.Generator, horizon: Optional[int] = None,
             c_out: Optional[int] = None, num_classes: Optional[int] = None, bias: bool = True) -> "HeadParams":
        def uniform(shape, fan_in, name):
            bound = 1.0 / np.sqrt(fan_in)
            return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)

        head = cls(kind)
        if kind == "forecast":
            head.temporal_w = uniform((seq_len, horizon), seq_len, "head.temporal_w")
            head.temporal_b = uniform((horizon,), seq_len, "head.temporal_b") if bias else None
        if kind in ("forecast", "imputation"):
            head.channel_w = uniform((c_m, c_out), c_m, "head.channel_w")
            head.channel_b = uniform((c_out,), c_m, "head.channel_b") if bias else None
        elif kind == "classification":
            head.class_w = uniform((seq_len * c_m, num_classes), seq_len * c_m, "head.class_w")
            head.class_b = uniform((num_classes,), seq_len * c_m, "head.class_b") if bias else None
        else:
            raise ValueError(f"unknown head kind {kind!r}")
        return head

    def parameters(self) -> dict:
        names = ("temporal_w", "temporal_b", "channel_w", "channel_b", "class_w", "class_b")
        return {f"head.{n}": getattr(self, n) for n in names if getattr(self, n) is not None}


def _channel_map(x: Tensor, weight: Tensor, bias: Optional[Tensor]) -> Tensor:
    B, L, cm = x.shape
    return T.linear(x.reshape(B * L, cm), weight, bias).reshape(B, L, weight.shape[1])


def forecast_head(xf: Tensor, head: HeadParams) -> Tensor:
    """[B, L, C_m] -> [B, T, C_out]: temporal map per feature channel, then channel projection."""
    B, L, cm = xf.shape
    if head.temporal_w.shape[0] != L:
        raise ValueError(f"forecast_head: expected {head.temporal_w.shape[0]} input steps, got {L}")
    horizon = head.temporal_w.shape[1]
    z = T.linear(xf.permute(0, 2, 1).reshape(B * cm, L), head.temporal_w, head.temporal_b)
    z = z.reshape(B, cm, horizon).permute(0, 2, 1)
    return _channel_map(z, head.channel_w, head.channel_b)


def imputation_head(xf: Tensor, head: HeadParams) -> Tensor:
    """[B, L, C_m] -> [B, L, C_out]: per-token channel projection only."""
    return _channel_map(xf, head.channel_w, head.channel_b)


def classification_head(xf: Tensor, head: HeadParams) -> Tensor:
    """[B, L, C_m] -> logits [B, K] through one affine map of the flattened window."""
    B, L, cm = xf.shape
    return T.linear(xf.reshape(B, L * cm), head.class_w, head.class_b)


# -- anomaly detection ------------------------------------------------------------

@dataclass
class AnomalyResult:
    scores: np.ndarray
    labels: np.ndarray
    threshold: float


def reconstruction_scores(model, series: np.ndarray) -> np.ndarray:
    """Per-timestep mean squared reconstruction error of a [T, C] series.

    The series is tiled with non-overlapping windows of the model's length;
    a final end-aligned window covers any remainder.
    """
    series = np.asarray(series, dtype=np.float64)
    L = model.seq_len
    n = series.shape[0]
    if n < L:
        raise ValueError(f"series of {n} steps is shorter than the model window {L}")
    starts = list(range(0, n - L + 1, L))
    if starts[-1] + L < n:
        starts.append(n - L)
    batch = np.stack([series[s:s + L] for s in starts])
    with T.no_grad():
        recon = model.predict(batch)
    err = ((recon - batch) ** 2).mean(axis=2)
    scores = np.empty(n)
    for s, e in zip(starts, err):
        scores[s:s + L] = e
    return scores


def anomaly_threshold(calibration_scores: np.ndarray, anomaly_ratio: float) -> float:
    scores = np.asarray(calibration_scores, dtype=np.float64).reshape(-1)
    if scores.size == 0:
        raise ValueError("anomaly threshold needs a non-empty calibration set")
    return float(np.quantile(scores, 1.0 - anomaly_ratio))


def anomaly_pipeline(series: np.ndarray, model, calibration: list, anomaly_ratio: float = 0.01) -> AnomalyResult:
    """Score ``series``, set the threshold from the pooled scores of the ``calibration`` series
    (train and validation segments) and flag timesteps scoring above it."""
    if not calibration:
        raise ValueError("anomaly pipeline needs at least one calibration series")
    pooled = np.concatenate([reconstruction_scores(model, c) for c in calibration])
    threshold = anomaly_threshold(pooled, anomaly_ratio)
    scores = reconstruction_scores(model, series)
    return AnomalyResult(scores, scores > threshold, threshold)
