"""TVNet: 3D embedding, a stack of dynamic-convolution blocks and a task head."""
from __future__ import annotations

from typing import Optional

import numpy as np

from . import tensor as T
from .config import TaskConfig
from .dynblock import BlockParams, stack_forward
from .embedding import ConfigError, EmbeddingParams, embed3d, flatten_temporal
from .heads import HeadParams, classification_head, forecast_head, imputation_head
from .tensor import Tensor

HEAD_KIND = {
    "long_forecast": "forecast",
    "short_forecast": "forecast",
    "anomaly": "forecast",  # reconstruction: temporal map L -> L
    "imputation": "imputation",
    "classification": "classification",
}


class TVNet:
    def __init__(self, config: TaskConfig, c_in: int, *, c_out: Optional[int] = None,
                 num_classes: Optional[int] = None, seq_len: Optional[int] = None, seed: Optional[int] = None):
        self.config = config
        self.c_in = c_in
        self.c_out = c_out if c_out is not None else c_in
        self.num_classes = num_classes
        self.seq_len = config.effective_seq_len(seq_len)
        self.c_m = config.channels_for(c_in)
        kind = HEAD_KIND[config.task]
        if kind == "classification" and not num_classes:
            raise ConfigError("classification needs num_classes")
        horizon = config.horizon if kind == "forecast" and config.task != "anomaly" else self.seq_len
        self.horizon = horizon
        rng = np.random.default_rng(config.seed if seed is None else seed)
        with T.default_dtype(config.dtype):
            self.embedding = EmbeddingParams.init(c_in, self.c_m, config.patch_len, rng)
            self.blocks = [
                BlockParams.init(self.c_m, config.kernel_size, rng, use_dynamic=config.use_dynamic,
                                 use_inter=config.use_inter, prefix=f"blocks.{i}")
                for i in range(config.n_blocks)
            ]
            self.head = HeadParams.init(kind, seq_len=self.seq_len, c_m=self.c_m, rng=rng, horizon=horizon,
                                        c_out=self.c_out, num_classes=num_classes)
        self.training = True
        self.best_val_loss: Optional[float] = None

    # -- parameter access ---------------------------------------------------------
    def parameters(self) -> dict:
        params = dict(self.embedding.parameters())
        for block in self.blocks:
            params.update(block.parameters())
        params.update(self.head.parameters())
        return params

    def buffers(self) -> dict:
        bufs = {}
        for block in self.blocks:
            bufs.update(block.buffers())
        return bufs

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def state_dict(self) -> dict:
        state = {name: p.data.copy() for name, p in self.parameters().items()}
        state.update({name: b.copy() for name, b in self.buffers().items()})
        return state

    def load_state_dict(self, state: dict) -> None:
        params = self.parameters()
        expected = set(params) | set(self.buffers())
        if set(state) != expected:
            raise KeyError(f"state mismatch: missing {sorted(expected - set(state))}, "
                           f"unexpected {sorted(set(state) - expected)}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=p.data.dtype)
        for block in self.blocks:
            bn = block.intra_bn
            bn.running_mean = np.array(state[f"{block.prefix}.intra_bn.running_mean"], dtype=bn.running_mean.dtype)
            bn.running_var = np.array(state[f"{block.prefix}.intra_bn.running_var"], dtype=bn.running_var.dtype)

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def train(self) -> "TVNet":
        self.training = True
        return self

    def eval(self) -> "TVNet":
        self.training = False
        return self

    # -- forward --------------------------------------------------------------------
    def features(self, x: Tensor) -> Tensor:
        """[B, L, C] -> flattened block output [B, L, C_m]."""
        if x.ndim != 3 or x.shape[1] != self.seq_len or x.shape[2] != self.c_in:
            raise ValueError(f"expected input [B, {self.seq_len}, {self.c_in}], got {x.shape}")
        return flatten_temporal(stack_forward(embed3d(x, self.embedding), self.blocks, self.training))

    def forward(self, x: Tensor) -> Tensor:
        kind = self.head.kind
        if kind == "forecast" and self.config.instance_norm:
            return self._forecast_instance_norm(x)
        xf = self.features(x)
        if kind == "forecast":
            return forecast_head(xf, self.head)
        if kind == "imputation":
            return imputation_head(xf, self.head)
        return classification_head(xf, self.head)

    __call__ = forward

    def _forecast_instance_norm(self, x: Tensor, eps: float = 1e-5) -> Tensor:
        # statistics are treated as constants, as in the usual reversible-normalization recipe
        mu = x.data.mean(axis=1, keepdims=True)
        sd = np.sqrt(x.data.var(axis=1, keepdims=True) + eps)

        def const(stat, shape):
            return Tensor(np.broadcast_to(stat, shape).copy())

        out = forecast_head(self.features((x - const(mu, x.shape)) / const(sd, x.shape)), self.head)
        return out * const(sd, out.shape) + const(mu, out.shape)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Inference-mode forward on a numpy batch, without building a graph."""
        was_training = self.training
        self.eval()
        try:
            with T.no_grad(), T.default_dtype(self.config.dtype):
                return self.forward(Tensor(x)).data.astype(np.float64)
        finally:
            self.training = was_training
