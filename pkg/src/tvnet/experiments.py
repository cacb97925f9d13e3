"""Reusable experiment recipes: ablation grid, noise robustness, imputation and anomaly trials."""
from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Optional

import numpy as np

from . import metrics as M
from .config import TaskConfig
from .data import (DatasetBundle, inject_noise, inject_spikes, load_csv, seasonal_multiplicative, split_normalize,
                   sum_of_sines)
from .heads import anomaly_pipeline
from .trainer import evaluate, train

ETTH1_PATH = Path(__file__).resolve().parents[2] / "data" / "ETTh1.csv"

ABLATIONS = {
    "none": {},
    "no_inter": {"use_inter": False},
    "no_dynamic": {"use_dynamic": False},
}


def apply_ablation(config: TaskConfig, name: str) -> TaskConfig:
    if name not in ABLATIONS:
        raise ValueError(f"unknown ablation {name!r}; expected one of {sorted(ABLATIONS)}")
    return config.replace(**ABLATIONS[name]) if ABLATIONS[name] else config


# -- synthetic setups -----------------------------------------------------------------

def synthetic_forecast_config(**overrides) -> TaskConfig:
    """Small long-horizon config used on the synthetic forecasting tasks."""
    values = dict(c_m=32, n_blocks=2, lr=1e-3, epochs=200, seed=0, seq_len=96, horizon=96, patience=10,
                  instance_norm=False)
    values.update(overrides)
    return TaskConfig.for_task("long_forecast", **values)


def sines_bundle(n: int = 2000, noise: float = 0.0, n_vars: int = 1, seed: int = 0) -> DatasetBundle:
    return split_normalize(sum_of_sines(n, n_vars=n_vars, noise=noise, seed=seed), (0.7, 0.1, 0.2), "sines")


def seasonal_bundle(n: int = 3000, seed: int = 0, n_vars: int = 1, noise: float = 0.05) -> DatasetBundle:
    """Daily-period series whose seasonal amplitude drifts slowly, so the best kernel varies in time."""
    raw = seasonal_multiplicative(n, period=24, level=10.0, amplitude=0.3, drift_period=500.0, n_vars=n_vars,
                                  noise=noise, seed=seed)
    return split_normalize(raw, (0.7, 0.1, 0.2), "seasonal")


ETTH1_ROWS = 14400  # 20 months of hourly data; 6:2:2 of it gives the usual 12/4/4-month borders


def etth1_bundle(path=None, rows: Optional[int] = ETTH1_ROWS) -> DatasetBundle:
    """ETTh1 with a chronological 6:2:2 split and train-only normalization."""
    raw = load_csv(path or ETTH1_PATH)
    return split_normalize(raw[:rows] if rows else raw, (0.6, 0.2, 0.2), "ETTh1", "1h")


def etth1_config(**overrides) -> TaskConfig:
    """Default long-term config at input 96, horizon 96, 10 epochs."""
    values = dict(seq_len=96, horizon=96, epochs=10)
    values.update(overrides)
    return TaskConfig.for_task("long_forecast", **values)


# -- recipes ----------------------------------------------------------------------------

def ablation_grid(config: TaskConfig, bundle, variants=tuple(ABLATIONS)) -> dict:
    """Train every variant from the same seed and report its test metrics."""
    out = {}
    for name in variants:
        cfg = apply_ablation(config, name)
        model, history = train(cfg, bundle)
        out[name] = dict(evaluate(model, bundle, cfg, "test"), epochs=len(history),
                         best_val_loss=model.best_val_loss)
    return out


def noisy_bundle(bundle: DatasetBundle, epsilon: float, seed: int) -> DatasetBundle:
    """Perturb the training rows only; the clean train statistics are kept so MSEs stay comparable."""
    start, stop = bundle.splits["train"]
    raw = bundle.raw.copy()
    raw[start:stop] = inject_noise(raw[start:stop], epsilon, seed)
    return dataclasses.replace(bundle, raw=raw)


def robustness_run(config: TaskConfig, bundle: DatasetBundle, epsilon: float = 0.01, seed: int = 0) -> dict:
    clean_model, _ = train(config, bundle)
    clean = evaluate(clean_model, bundle, config, "test")["mse"]
    noisy_model, _ = train(config, noisy_bundle(bundle, epsilon, seed))
    noisy = evaluate(noisy_model, bundle, config, "test")["mse"]
    return {"epsilon": epsilon, "clean_mse": clean, "noisy_mse": noisy, "degradation": noisy / clean - 1.0}


def imputation_run(n: int = 3000, n_vars: int = 32, epochs: int = 10, seed: int = 0, **overrides) -> dict:
    """Masked reconstruction of phase-shifted sinusoids; returns test metrics on masked entries."""
    raw = sum_of_sines(n, periods=(24.0,), amplitudes=(1.0,), n_vars=n_vars, seed=seed)
    bundle = split_normalize(raw, (0.7, 0.1, 0.2), "sines")
    values = dict(c_m=32, epochs=epochs, seed=seed, patience=epochs)
    values.update(overrides)
    config = TaskConfig.for_task("imputation", **values)
    model, history = train(config, bundle)
    return dict(evaluate(model, bundle, config, "test"), epochs=len(history))


def anomaly_trial(seed: int, n: int = 4000, rate: float = 0.01, magnitude: float = 6.0,
                  config: Optional[TaskConfig] = None) -> dict:
    """Train a reconstruction model on a spiked series and score the test split."""
    clean = sum_of_sines(n, n_vars=1, seed=seed)
    series, labels = inject_spikes(clean, rate, magnitude, seed=seed + 10_000)
    bundle = split_normalize(series, (0.7, 0.1, 0.2), "spikes", labels=labels)
    config = config or TaskConfig.for_task("anomaly", c_m=32, n_blocks=2, lr=1e-3, epochs=10, seed=seed)
    config = config.replace(seed=seed, anomaly_ratio=rate)
    model, _ = train(config, bundle)
    result = anomaly_pipeline(bundle.segment("test"), model, [bundle.segment("train"), bundle.segment("val")],
                              config.anomaly_ratio)
    truth = bundle.segment_labels("test")
    precision, recall, f1 = M.prf1(result.labels, truth)
    return {"seed": seed, "precision": precision, "recall": recall, "f1": f1, "threshold": result.threshold,
            "flagged": int(result.labels.sum()), "true": int(truth.sum())}
