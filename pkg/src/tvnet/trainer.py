"""Adam optimization, the epoch loop with early stopping, and evaluation."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import metrics as M
from . import tensor as T
from .config import TaskConfig
from .data import ClassificationSet, DatasetBundle, gen_mask, task_arrays
from .model import TVNet
from .tensor import Tensor

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, last_good_state: Optional[dict] = None, history: Optional[list] = None):
        super().__init__(message)
        self.last_good_state = last_good_state
        self.history = history or []


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update of every parameter that holds a gradient."""
    for name, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            bad = np.argwhere(~np.isfinite(p.grad))[0].tolist()
            raise FloatingPointError(f"non-finite gradient in {name} at {bad}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        if p.grad is None:
            continue
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = b1 * m + (1 - b1) * g
        v = b2 * state.v[name] + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# -- batches and losses ------------------------------------------------------------

class _Task:
    """Adapts one task family to (inputs, loss) for the loop."""

    def __init__(self, config: TaskConfig, data=None):
        self.config = config
        self.scale = None
        if config.loss == "smape" and isinstance(data, DatasetBundle):
            # SMAPE is scale-dependent, so it is taken on the original units
            self.scale = (data.mean, data.std)

    def _denorm(self, z):
        mean, std = self.scale
        if isinstance(z, Tensor):
            return z * Tensor(np.broadcast_to(std, z.shape)) + Tensor(np.broadcast_to(mean, z.shape))
        return z * std + mean

    def loss(self, model: TVNet, x: np.ndarray, y, mask=None) -> Tensor:
        cfg = self.config
        if cfg.task == "imputation":
            out = model(Tensor(np.where(mask, 0.0, x)))
            return M.masked_mse_loss(out, y, mask)
        out = model(Tensor(x))
        if cfg.task == "classification":
            return M.cross_entropy(out, y)
        if self.scale is not None:
            out, y = self._denorm(out), self._denorm(y)
        return M.LOSSES[cfg.loss](out, y)


def _split_arrays(data, config: TaskConfig, split: str):
    if isinstance(data, ClassificationSet):
        return data.x[split], data.y[split]
    return task_arrays(data, config, split)


def _dims(data, config: TaskConfig) -> dict:
    if isinstance(data, ClassificationSet):
        return dict(c_in=data.n_vars, num_classes=data.num_classes, seq_len=data.seq_len)
    return dict(c_in=data.n_vars, seq_len=config.seq_len)


def build_model(config: TaskConfig, data) -> TVNet:
    dims = _dims(data, config)
    return TVNet(config, dims.pop("c_in"), **dims)


_SPLIT_IDS = {"train": 0, "val": 1, "test": 2}


def _eval_masks(config: TaskConfig, shape, split: str) -> np.ndarray:
    # fixed per split so validation losses are comparable across epochs
    return gen_mask(shape, config.mask_ratio, np.random.SeedSequence([config.seed, _SPLIT_IDS[split]]))


def evaluate_loss(model: TVNet, data, config: TaskConfig, split: str, batch_size: int = 256) -> float:
    x, y = _split_arrays(data, config, split)
    if len(x) == 0:
        raise ValueError(f"split {split!r} is empty")
    task = _Task(config, data)
    mask = _eval_masks(config, x.shape, split) if config.task == "imputation" else None
    model.eval()
    total, weight = 0.0, 0.0
    with T.no_grad(), T.default_dtype(config.dtype):
        for s in range(0, len(x), batch_size):
            sl = slice(s, s + batch_size)
            if mask is not None:
                m = mask[sl]
                if not m.any():
                    continue
                loss = task.loss(model, x[sl], y[sl], m).item()
                w = float(m.sum())
            else:
                loss = task.loss(model, x[sl], y[sl]).item()
                w = float(len(x[sl]))
            total += loss * w
            weight += w
    model.train()
    return total / weight


def train(config: TaskConfig, data, model: Optional[TVNet] = None, verbose: bool = False) -> tuple:
    """Fit a model; returns (model restored to its best-validation state, history)."""
    model = model or build_model(config, data)
    x, y = _split_arrays(data, config, "train")
    if len(x) == 0:
        raise ValueError("empty training split")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    task = _Task(config, data)
    state = AdamState()
    params = model.parameters()
    history = []
    best_val, best_state, stale = np.inf, model.state_dict(), 0
    model.train()
    with T.default_dtype(config.dtype):
        for epoch in range(config.epochs):
            t0 = time.perf_counter()
            order = rng.permutation(len(x))
            losses = []
            for s in range(0, len(order), config.batch_size):
                idx = order[s:s + config.batch_size]
                mask = gen_mask(x[idx].shape, config.mask_ratio, rng) if config.task == "imputation" else None
                if mask is not None and not mask.any():
                    continue
                model.zero_grad()
                try:
                    loss = task.loss(model, x[idx], y[idx], mask)
                    loss.backward()
                    adam_step(params, state, config.lr)
                except FloatingPointError as exc:
                    model.load_state_dict(best_state)
                    raise TrainingDiverged(f"epoch {epoch}: {exc}", best_state, history) from exc
                losses.append(loss.item())
            val = evaluate_loss(model, data, config, "val")
            if not np.isfinite(val):
                model.load_state_dict(best_state)
                raise TrainingDiverged(f"epoch {epoch}: validation loss is not finite", best_state, history)
            history.append({"epoch": epoch, "train_loss": float(np.mean(losses)) if losses else float("nan"),
                            "val_loss": float(val)})
            if verbose:
                logger.info("epoch %d train %.6f val %.6f (%.1fs)", epoch, history[-1]["train_loss"], val,
                            time.perf_counter() - t0)
            if val < best_val - config.min_delta:
                best_val, best_state, stale = val, model.state_dict(), 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    model.load_state_dict(best_state)
    model.best_val_loss = best_val
    return model, history


def evaluate(model: TVNet, data, config: TaskConfig, split: str = "test") -> dict:
    """Task metrics on a split, in normalized units."""
    x, y = _split_arrays(data, config, split)
    if config.task == "classification":
        logits = _predict_batched(model, x)
        return {"accuracy": M.accuracy(logits.argmax(axis=1), y), "count": int(len(y))}
    if config.task == "imputation":
        mask = _eval_masks(config, x.shape, split)
        pred = _predict_batched(model, np.where(mask, 0.0, x))
        return {"mse": M.mse(pred[mask], x[mask]), "mae": M.mae(pred[mask], x[mask]), "count": int(mask.sum())}
    pred = _predict_batched(model, x)
    out = {"mse": M.mse(pred, y), "mae": M.mae(pred, y), "count": int(y.size)}
    if config.task == "short_forecast":
        out.update(short_term_scores(data.denormalize(pred), data.denormalize(y), data.denormalize(x),
                                     config.period))
    return out


def short_term_scores(pred: np.ndarray, actual: np.ndarray, insample: np.ndarray, period: int) -> dict:
    """SMAPE / MASE averaged over windows and variables, and OWA against Naive2."""
    s_model, m_model, s_naive, m_naive = [], [], [], []
    for w in range(pred.shape[0]):
        for c in range(pred.shape[2]):
            hist = insample[w, :, c]
            naive = M.naive2_forecast(hist, period, actual.shape[1])
            s_model.append(M.smape(pred[w, :, c], actual[w, :, c]))
            s_naive.append(M.smape(naive, actual[w, :, c]))
            m_model.append(M.mase(pred[w, :, c], actual[w, :, c], hist, period))
            m_naive.append(M.mase(naive, actual[w, :, c], hist, period))
    scores = {"smape": float(np.mean(s_model)), "mase": float(np.mean(m_model)),
              "smape_naive2": float(np.mean(s_naive)), "mase_naive2": float(np.mean(m_naive))}
    scores["owa"] = M.owa(scores["smape"], scores["mase"], scores["smape_naive2"], scores["mase_naive2"])
    return scores


def _predict_batched(model: TVNet, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    return np.concatenate([model.predict(x[s:s + batch_size]) for s in range(0, len(x), batch_size)])
