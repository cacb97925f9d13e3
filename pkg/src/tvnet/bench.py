"""Closed-form per-block cost accounting and an instrumented scaling harness."""
from __future__ import annotations

import csv
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import metrics as M
from . import tensor as T
from .config import TaskConfig
from .dynblock import BlockParams, block_forward
from .model import TVNet
from .tensor import Tensor


@dataclass
class CostReport:
    """Per-block FLOPs / parameter counts.

    ``flops_*`` and ``params_*`` entering the totals follow the closed forms;
    ``extra`` holds optional line items (bias and residual adds, the literal
    patch-count parameter term) that are reported but not summed.
    """

    flops_conv2d: int
    flops_alpha_gen: int
    flops_channel: int
    flops_multiply: int
    flops_total: int
    params_conv2d: int
    params_gen: int
    params_channel: int
    params_bias: int
    params_total: int
    config: dict
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def count_costs(c_m: int, k: int, L: int, N: int, P: int) -> CostReport:
    if N * P != L:
        raise ValueError(f"inconsistent shape: N * P = {N * P} != L = {L}")
    s, p2 = (1, 1) if P == 1 else (2, P // 2)
    flops_conv2d = c_m * c_m * k * k * N * s * p2
    flops_alpha_gen = c_m * N * s * p2  # patch pooling reads every element once
    flops_channel = c_m * c_m * 1 * N + c_m * c_m * 1
    flops_multiply = c_m * c_m * k * k * N
    params_conv2d = c_m * c_m * k * k
    params_gen = 0  # pooling layers carry no weights
    params_channel = c_m * c_m * 1 + c_m * c_m * 1
    params_bias = 5 * c_m  # conv2d bias, two conv1d biases, batch-norm scale and shift
    return CostReport(
        flops_conv2d=flops_conv2d,
        flops_alpha_gen=flops_alpha_gen,
        flops_channel=flops_channel,
        flops_multiply=flops_multiply,
        flops_total=flops_conv2d + flops_alpha_gen + flops_channel + flops_multiply,
        params_conv2d=params_conv2d,
        params_gen=params_gen,
        params_channel=params_channel,
        params_bias=params_bias,
        params_total=params_conv2d + params_gen + params_channel + params_bias,
        config=dict(c_m=c_m, k=k, L=L, N=N, P=P),
        extra=dict(
            flops_inter_pool=c_m * N,
            flops_bias=c_m * L + 2 * c_m * N + c_m,
            flops_residual=c_m * L,
            flops_output_scaling=c_m * L,
            params_gen_patch_term=c_m * N,
        ),
    )


def instrumented_block_counts(c_m: int, k: int, L: int, P: int, batch: int = 1, seed: int = 0) -> dict:
    """Run one block forward under the op counter and return its tallies."""
    rng = np.random.default_rng(seed)
    s, p2 = (1, 1) if P == 1 else (2, P // 2)
    block = BlockParams.init(c_m, k, rng)
    x = Tensor(rng.standard_normal((batch, c_m, L // P, s, p2)))
    with T.no_grad(), T.count_ops() as counter:
        block_forward(x, block)
    return dict(counter)


def block_param_count(c_m: int, k: int) -> int:
    block = BlockParams.init(c_m, k, np.random.default_rng(0))
    return sum(p.size for p in block.parameters().values())


def measure_scaling(seq_lens=(96, 192, 384, 768), c_m: int = 32, k: int = 3, patch_len: int = 24,
                    n_blocks: int = 2, c_in: int = 1, horizon: int = 96, batch: int = 8, trials: int = 5,
                    seed: int = 0) -> list:
    """Forward+backward timing and instrumented counts per input length."""
    rows = []
    for L in seq_lens:
        cfg = TaskConfig.for_task("long_forecast", c_m=c_m, kernel_size=k, patch_len=patch_len, n_blocks=n_blocks,
                                  seq_len=L, horizon=horizon, seed=seed)
        model = TVNet(cfg, c_in)
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((batch, L, c_in))
        y = rng.standard_normal((batch, horizon, c_in))
        times, counter = [], None
        for _ in range(trials):
            model.zero_grad()
            t0 = time.perf_counter()
            with T.count_ops() as c:
                loss = M.mse_loss(model(Tensor(x)), y)
                loss.backward()
            times.append((time.perf_counter() - t0) * 1e3)
            counter = c
        block_params = sum(p.size for b in model.blocks for p in b.parameters().values())
        rows.append(dict(L_in=L, flops=counter["conv2d_mac"], params=block_params,
                         ms=statistics.median(times), bytes=counter["activation_bytes"]))
    return rows


def write_scaling_csv(rows: list, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["L_in", "flops", "params", "ms", "bytes"])
        writer.writeheader()
        writer.writerows(rows)
