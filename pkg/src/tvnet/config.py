"""Task configuration with per-task defaults and strict JSON parsing."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .embedding import ConfigError

TASKS = ("long_forecast", "short_forecast", "imputation", "classification", "anomaly")
LOSSES = ("mse", "smape", "cross_entropy")

# per-task defaults from the training hyper-parameter table
TASK_DEFAULTS = {
    "long_forecast": dict(c_m=64, patch_len=24, n_blocks=3, lr=1e-4, loss="mse", batch_size=32, epochs=10,
                          seq_len=96, horizon=96, instance_norm=True),
    "short_forecast": dict(c_m=64, patch_len=8, n_blocks=3, lr=1e-3, loss="smape", batch_size=16, epochs=10,
                           horizon=6),
    "imputation": dict(c_m=64, patch_len=1, n_blocks=3, lr=1e-3, loss="mse", batch_size=16, epochs=10,
                       seq_len=96, mask_ratio=0.25),
    "classification": dict(c_m=None, patch_len=1, n_blocks=3, lr=1e-3, loss="cross_entropy", batch_size=16,
                           epochs=30, d_max=64),
    "anomaly": dict(c_m=None, patch_len=8, n_blocks=5, lr=1e-4, loss="mse", batch_size=128, epochs=10,
                    seq_len=100, d_max=128),
}

REFERENCE_SEEDS = (1111, 333, 2023, 2024, 2025)


def size_channels(m: int, d_min: int = 32, d_max: int = 64) -> int:
    """Embedding width rule min(max(2^floor(log2 m), d_min), d_max)."""
    if m < 1:
        raise ConfigError(f"variable count must be positive, got {m}")
    return min(max(2 ** int(math.floor(math.log2(m))), d_min), d_max)


@dataclass
class TaskConfig:
    task: str = "long_forecast"
    c_m: Optional[int] = 64
    patch_len: int = 24
    kernel_size: int = 3
    n_blocks: int = 3
    lr: float = 1e-4
    loss: str = "mse"
    batch_size: int = 32
    epochs: int = 10
    seed: int = 2024
    use_dynamic: bool = True
    use_inter: bool = True
    seq_len: Optional[int] = None
    horizon: Optional[int] = None
    mask_ratio: float = 0.25
    anomaly_ratio: float = 0.01
    patience: int = 3
    min_delta: float = 0.0
    d_min: int = 32
    d_max: int = 64
    stride: int = 1
    period: int = 1
    dtype: str = "float64"
    instance_norm: bool = False  # per-window z-scoring around the network; on by default for long-term forecasting

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}; expected one of {LOSSES}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel size must be odd, got {self.kernel_size}")
        if self.patch_len < 1 or (self.patch_len > 1 and self.patch_len % 2):
            raise ConfigError(f"patch length must be 1 or even, got {self.patch_len}")
        if self.task == "imputation" and self.patch_len != 1:
            raise ConfigError("imputation requires patch_len == 1")
        if self.n_blocks < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("n_blocks/batch_size must be >= 1 and epochs >= 0")
        if self.lr < 0:
            raise ConfigError("learning rate must be non-negative")
        if not 0.0 <= self.mask_ratio < 1.0 or not 0.0 < self.anomaly_ratio < 1.0:
            raise ConfigError("mask_ratio must lie in [0, 1) and anomaly_ratio in (0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.task == "short_forecast" and self.seq_len is None and self.horizon:
            self.seq_len = 2 * self.horizon
        if self.task in ("long_forecast", "short_forecast") and not self.horizon:
            raise ConfigError("forecasting tasks need a positive horizon")

    @classmethod
    def for_task(cls, task: str, **overrides) -> "TaskConfig":
        if task not in TASKS:
            raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")
        values = dict(TASK_DEFAULTS[task], task=task)
        values.update(overrides)
        return cls.from_dict(values)

    @classmethod
    def from_dict(cls, values: dict) -> "TaskConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**values)

    @classmethod
    def from_json(cls, path) -> "TaskConfig":
        """Load a config file; missing keys take the defaults of its ``task``."""
        try:
            values = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.for_task(values.pop("task", "long_forecast"), **values)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "TaskConfig":
        return self.from_dict({**self.to_dict(), **changes})

    def channels_for(self, n_vars: int) -> int:
        return self.c_m if self.c_m is not None else size_channels(n_vars, self.d_min, self.d_max)

    def effective_seq_len(self, seq_len: Optional[int] = None) -> int:
        """Largest multiple of the patch length not exceeding the window (oldest steps dropped)."""
        L = seq_len if seq_len is not None else self.seq_len
        if not L:
            raise ConfigError("sequence length is not set")
        L = L - L % self.patch_len
        if L < self.patch_len:
            raise ConfigError(f"window of {L} steps is shorter than one patch ({self.patch_len})")
        return L
