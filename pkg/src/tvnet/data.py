"""Dataset ingestion, chronological splits, window sampling, masks and noise injection."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .embedding import ConfigError

logger = logging.getLogger(__name__)


class DataFormatError(ValueError):
    pass


# -- CSV ---------------------------------------------------------------------------

def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path) -> np.ndarray:
    """Read a headered numeric CSV into a [T, C] matrix.

    A leading timestamp column is dropped when its first data cell does not
    parse as a number.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        rows = [(lineno, row) for lineno, row in enumerate(reader, start=2) if row]
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    width = len(header)
    skip_first = not _is_number(rows[0][1][0])
    out = np.empty((len(rows), width - int(skip_first)))
    for i, (lineno, row) in enumerate(rows):
        if len(row) != width:
            raise DataFormatError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
        cells = row[1:] if skip_first else row
        try:
            out[i] = [float(c) for c in cells]
        except ValueError:
            bad = next(c for c in cells if not _is_number(c))
            raise DataFormatError(f"{path}:{lineno}: non-numeric cell {bad!r}") from None
    return out


def save_csv(path, values: np.ndarray, columns: Optional[list] = None) -> None:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    columns = columns or [f"v{i}" for i in range(values.shape[1])]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        writer.writerows([[repr(float(v)) for v in row] for row in values])


@dataclass
class DatasetDescriptor:
    path: str
    ratio: tuple = (0.7, 0.1, 0.2)
    frequency: str = ""
    task_defaults: dict = field(default_factory=dict)

    @classmethod
    def from_json(cls, path) -> "DatasetDescriptor":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read dataset descriptor {path}: {exc}") from exc
        unknown = sorted(set(raw) - {"path", "ratio", "frequency", "task_defaults"})
        if unknown:
            raise ConfigError(f"unknown dataset descriptor keys: {unknown}")
        if "path" not in raw:
            raise ConfigError("dataset descriptor needs a 'path'")
        data_path = Path(raw["path"])
        if not data_path.is_absolute():
            data_path = path.parent / data_path
        return cls(str(data_path), tuple(raw.get("ratio", (0.7, 0.1, 0.2))), raw.get("frequency", ""),
                   dict(raw.get("task_defaults", {})))


# -- splitting and normalization --------------------------------------------------------

@dataclass(frozen=True)
class DatasetBundle:
    name: str
    raw: np.ndarray
    splits: dict  # split name -> (start, stop)
    mean: np.ndarray
    std: np.ndarray
    frequency: str = ""
    labels: Optional[np.ndarray] = None  # per-timestep anomaly labels when known

    def segment(self, split: str, normalized: bool = True) -> np.ndarray:
        start, stop = self.splits[split]
        seg = self.raw[start:stop]
        return self.normalize(seg) if normalized else seg.copy()

    def segment_labels(self, split: str) -> Optional[np.ndarray]:
        if self.labels is None:
            return None
        start, stop = self.splits[split]
        return self.labels[start:stop]

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        return z * self.std + self.mean

    @property
    def n_vars(self) -> int:
        return self.raw.shape[1]


def split_normalize(raw: np.ndarray, ratio=(0.7, 0.1, 0.2), name: str = "dataset", frequency: str = "",
                    labels: Optional[np.ndarray] = None) -> DatasetBundle:
    """Chronological train/val/test split; z-score statistics come from the train rows only."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim == 1:
        raw = raw[:, None]
    ratio = tuple(float(r) for r in ratio)
    if len(ratio) != 3 or min(ratio) < 0 or sum(ratio) > 1 + 1e-12:
        raise ConfigError(f"split ratio must be three non-negative numbers summing to <= 1, got {ratio}")
    n = raw.shape[0]
    n_train = int(round(n * ratio[0]))
    n_val = int(round(n * ratio[1]))
    n_test = min(int(round(n * ratio[2])), n - n_train - n_val)
    if n_train == 0:
        raise ConfigError("empty train split")
    splits = {"train": (0, n_train), "val": (n_train, n_train + n_val),
              "test": (n_train + n_val, n_train + n_val + n_test)}
    train = raw[:n_train]
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    flat = std == 0
    if flat.any():
        logger.warning("channels %s have zero variance in the train split; using std = 1", np.flatnonzero(flat))
        std = np.where(flat, 1.0, std)
    return DatasetBundle(name, raw, splits, mean, std, frequency, labels)


def load_bundle(descriptor: DatasetDescriptor) -> DatasetBundle:
    path = Path(descriptor.path)
    if not path.exists():
        raise ConfigError(f"dataset file not found: {path}")
    return split_normalize(load_csv(path), descriptor.ratio, path.stem, descriptor.frequency)


# -- windows ------------------------------------------------------------------------------

@dataclass
class WindowSample:
    x: np.ndarray
    y: object


def window_count(split_len: int, seq_len: int, horizon: int) -> int:
    return max(0, split_len - seq_len - horizon + 1)


def forecast_windows(segment: np.ndarray, seq_len: int, horizon: int, stride: int = 1) -> tuple:
    """Stacked stride-``stride`` (x, y) windows: x = seq_len steps, y = the next ``horizon`` steps."""
    n = window_count(len(segment), seq_len, horizon)
    if n == 0:
        raise ConfigError(f"split of {len(segment)} steps is too short for {seq_len} + {horizon}")
    view = sliding_window_view(segment, seq_len + horizon, axis=0)[::stride]  # [n, C, L+T]
    view = np.ascontiguousarray(view.transpose(0, 2, 1))
    return view[:, :seq_len], view[:, seq_len:]


def fixed_windows(segment: np.ndarray, seq_len: int, stride: int = 1) -> np.ndarray:
    if len(segment) < seq_len:
        raise ConfigError(f"split of {len(segment)} steps is too short for windows of {seq_len}")
    view = sliding_window_view(segment, seq_len, axis=0)[::stride]
    return np.ascontiguousarray(view.transpose(0, 2, 1))


def task_arrays(bundle: DatasetBundle, config, split: str) -> tuple:
    """Model-ready (x, y) arrays for one split; windows are truncated to a multiple of the patch."""
    seg = bundle.segment(split)
    L = config.effective_seq_len()
    if config.task in ("long_forecast", "short_forecast"):
        stride = config.stride if split == "train" else 1
        x, y = forecast_windows(seg, config.seq_len, config.horizon, stride)
        return x[:, -L:], y
    if config.task in ("imputation", "anomaly"):
        stride = config.stride if split == "train" else L
        x = fixed_windows(seg, config.seq_len, stride)[:, -L:]
        return x, x
    raise ConfigError(f"task {config.task!r} has no sliding-window sampler; use ClassificationSet")


def windows(bundle: DatasetBundle, config, split: str = "train") -> Iterator[WindowSample]:
    x, y = task_arrays(bundle, config, split)
    for xi, yi in zip(x, y):
        yield WindowSample(xi, yi)


@dataclass
class ClassificationSet:
    """Labelled fixed-length series, one sample each, normalized with train statistics."""

    x: dict  # split -> [n, L, C]
    y: dict  # split -> [n]
    num_classes: int

    @classmethod
    def from_arrays(cls, x_train, y_train, x_val, y_val, x_test, y_test) -> "ClassificationSet":
        mean = x_train.mean(axis=(0, 1))
        std = x_train.std(axis=(0, 1))
        std = np.where(std == 0, 1.0, std)
        norm = lambda a: (np.asarray(a, dtype=np.float64) - mean) / std  # noqa: E731
        ys = {k: np.asarray(v, dtype=np.int64) for k, v in (("train", y_train), ("val", y_val), ("test", y_test))}
        k = int(max(v.max() for v in ys.values())) + 1
        return cls({"train": norm(x_train), "val": norm(x_val), "test": norm(x_test)}, ys, k)

    @property
    def n_vars(self) -> int:
        return self.x["train"].shape[2]

    @property
    def seq_len(self) -> int:
        return self.x["train"].shape[1]


# -- masks and noise ----------------------------------------------------------------------

def gen_mask(shape, ratio: float, seed) -> np.ndarray:
    """Boolean mask with exactly round(ratio * size) randomly placed True (hidden) entries."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"mask ratio must lie in [0, 1), got {ratio}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    size = int(np.prod(shape))
    mask = np.zeros(size, dtype=bool)
    mask[rng.permutation(size)[:int(round(ratio * size))]] = True
    return mask.reshape(shape)


def inject_noise(x: np.ndarray, epsilon: float, seed) -> np.ndarray:
    """Perturb a random ``epsilon`` fraction of entries by U(-2|x|, 2|x|) additive noise."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    out = x.copy()
    if epsilon == 0:
        return out
    flat = out.reshape(-1)
    chosen = rng.permutation(flat.size)[:int(round(epsilon * flat.size))]
    span = 2.0 * np.abs(flat[chosen])
    flat[chosen] += rng.uniform(-1.0, 1.0, size=chosen.size) * span
    return out


# -- synthetic generators -------------------------------------------------------------------

def sum_of_sines(n: int, periods=(24.0, 60.0), amplitudes=(1.0, 0.5), n_vars: int = 1, noise: float = 0.0,
                 seed: int = 0) -> np.ndarray:
    """Sum of sinusoids; each variable gets its own phase offsets."""
    rng = np.random.default_rng(seed)
    t = np.arange(n)[:, None]
    out = np.zeros((n, n_vars))
    for period, amp in zip(periods, amplitudes):
        phase = rng.uniform(0, 2 * np.pi, size=n_vars)
        out += amp * np.sin(2 * np.pi * t / period + phase)
    if noise:
        out += noise * rng.standard_normal(out.shape)
    return out


def seasonal_multiplicative(n: int, period: int = 24, level: float = 10.0, trend: float = 0.0,
                            amplitude: float = 0.3, drift_period: Optional[float] = None, n_vars: int = 1,
                            noise: float = 0.0, seed: int = 0, level_sigma: float = 0.0,
                            level_rho: float = 0.98) -> np.ndarray:
    """Level * seasonal pattern, with an optional slowly drifting seasonal amplitude.

    ``level_sigma > 0`` makes the level wander: its log follows an AR(1) with coefficient
    ``level_rho`` and innovation scale ``level_sigma``, so the seasonal swing grows and
    shrinks with it.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n)[:, None]
    phase = rng.uniform(0, 2 * np.pi, size=n_vars)
    amp = amplitude
    if drift_period:
        amp = amplitude * (1.0 + 0.8 * np.sin(2 * np.pi * t / drift_period + phase))
    seasonal = 1.0 + amp * np.sin(2 * np.pi * t / period + phase)
    base = level + trend * t
    if level_sigma:
        eps = rng.standard_normal((n, n_vars)) * level_sigma
        log_level = np.zeros((n, n_vars))
        for i in range(1, n):
            log_level[i] = level_rho * log_level[i - 1] + eps[i]
        base = base * np.exp(log_level)
    out = base * seasonal
    if noise:
        out += noise * rng.standard_normal(out.shape)
    return out


def inject_spikes(x: np.ndarray, rate: float, magnitude: float, seed, min_gap: int = 10) -> tuple:
    """Add ±magnitude spikes at ``rate`` of the timesteps; returns (series, labels).

    Placement is stratified: the series is cut into blocks of 1/rate steps and
    each block receives one spike at a random offset at least ``min_gap // 2``
    from its edges, so every contiguous segment carries close to ``rate`` spikes.
    """
    if not 0.0 < rate < 1.0:
        raise ValueError(f"spike rate must lie in (0, 1), got {rate}")
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=np.float64)
    n = x.shape[0]
    block = int(round(1.0 / rate))
    margin = min_gap // 2
    if block <= 2 * margin:
        raise ValueError("spike rate too high for the requested gap")
    starts = np.arange(0, n - block + 1, block)
    where = starts + rng.integers(margin, block - margin, size=len(starts))
    labels = np.zeros(n, dtype=bool)
    labels[where] = True
    sign = rng.choice([-1.0, 1.0], size=len(where))
    if x.ndim == 1:
        x[where] += sign * magnitude
    else:
        x[where] += (sign * magnitude)[:, None]
    return x, labels
