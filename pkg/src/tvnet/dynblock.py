"""The 3D-block: per-(channel, patch) time-varying weights scaling a shared 2-D kernel.

For an input ``X`` of shape [B, C_m, N, S, P2] a block computes::

    v_intra = patch means of X                       [B, C_m, N]
    f_intra = relu(bn(conv1d_k1(v_intra)))
    v_inter = mean of v_intra over N                 [B, C_m, 1]
    f_inter = relu(conv1d_k1(v_inter))
    alpha   = 1 + f_intra + f_inter                  (broadcast over N)
    out     = alpha * (conv2d(W_b, patch) + b_b) + X

Each patch is convolved independently as a C_m-channel S x P2 image.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import BatchNormState, Tensor


@dataclass
class BlockParams:
    W_b: Tensor
    b_b: Tensor
    intra_w: Tensor
    intra_b: Tensor
    intra_bn: BatchNormState
    inter_w: Tensor
    inter_b: Tensor
    use_dynamic: bool = True
    use_inter: bool = True
    prefix: str = field(default="block", repr=False)

    @classmethod
    def init(cls, c_m: int, kernel_size: int, rng: np.random.Generator, *, use_dynamic: bool = True,
             use_inter: bool = True, prefix: str = "block") -> "BlockParams":
        if kernel_size % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {kernel_size}")
        bound = 1.0 / np.sqrt(c_m * kernel_size * kernel_size)

        def leaf(arr, name):
            return Tensor(arr, requires_grad=True, name=f"{prefix}.{name}")

        W_b = rng.uniform(-bound, bound, size=(c_m, c_m, kernel_size, kernel_size))
        b_b = rng.uniform(-bound, bound, size=(c_m,))
        # both generation branches output exactly zero on a fresh block, so alpha == 1: the inter path
        # has zero weights, the intra path a zero batch-norm scale over a normally initialized conv
        # (zero conv weights would leave batch norm dividing a vanishing variance by sqrt(eps))
        gen_bound = 1.0 / np.sqrt(c_m)
        intra_bn = BatchNormState(c_m)
        intra_bn.gamma.data = np.zeros(c_m)
        return cls(
            W_b=leaf(W_b, "W_b"),
            b_b=leaf(b_b, "b_b"),
            intra_w=leaf(rng.uniform(-gen_bound, gen_bound, size=(c_m, c_m, 1)), "intra_w"),
            intra_b=leaf(rng.uniform(-gen_bound, gen_bound, size=(c_m,)), "intra_b"),
            intra_bn=intra_bn,
            inter_w=leaf(np.zeros((c_m, c_m, 1)), "inter_w"),
            inter_b=leaf(np.zeros(c_m), "inter_b"),
            use_dynamic=use_dynamic,
            use_inter=use_inter,
            prefix=prefix,
        )

    @property
    def channels(self) -> int:
        return self.W_b.shape[0]

    @property
    def kernel_size(self) -> int:
        return self.W_b.shape[2]

    def parameters(self) -> dict:
        p = self.prefix
        return {
            f"{p}.W_b": self.W_b,
            f"{p}.b_b": self.b_b,
            f"{p}.intra_w": self.intra_w,
            f"{p}.intra_b": self.intra_b,
            f"{p}.intra_bn.gamma": self.intra_bn.gamma,
            f"{p}.intra_bn.beta": self.intra_bn.beta,
            f"{p}.inter_w": self.inter_w,
            f"{p}.inter_b": self.inter_b,
        }

    def buffers(self) -> dict:
        p = self.prefix
        return {
            f"{p}.intra_bn.running_mean": self.intra_bn.running_mean,
            f"{p}.intra_bn.running_var": self.intra_bn.running_var,
        }


def gen_alpha(x: Tensor, params: BlockParams, training: bool = True) -> Tensor:
    """Time-varying weights [B, C_m, N] for an X3D input."""
    B, cm, n = x.shape[:3]
    if cm != params.channels:
        raise ValueError(f"gen_alpha: input has {cm} channels, block expects {params.channels}")
    if not params.use_dynamic:
        return Tensor(np.ones((B, cm, n)))
    v_intra = T.adaptive_avg_pool_patches(x)
    # zero-initialized paths sit exactly at the ReLU kink; a unit right derivative lets them start learning
    f_intra = T.relu(T.batch_norm(T.conv1d(v_intra, params.intra_w, params.intra_b), params.intra_bn, training),
                     grad_at_zero=1.0)
    alpha = f_intra + 1.0
    if params.use_inter:
        v_inter = T.adaptive_avg_pool_global(v_intra)
        f_inter = T.relu(T.conv1d(v_inter, params.inter_w, params.inter_b), grad_at_zero=1.0)
        alpha = alpha + T.expand(f_inter, (B, cm, n))
    return alpha


def dynamic_conv(x: Tensor, alpha: Tensor, W_b: Tensor, b_b: Tensor) -> Tensor:
    """out[b, c, n] = alpha[b, c, n] * (conv2d(W_b, x[b, :, n]) + b_b[c])."""
    B, cm, n, s, p2 = x.shape
    if alpha.shape != (B, cm, n):
        raise ValueError(f"dynamic_conv: alpha shape {alpha.shape} != {(B, cm, n)}")
    patches = x.permute(0, 2, 1, 3, 4).reshape(B * n, cm, s, p2)
    y = T.conv2d(patches, W_b, b_b)
    y = y.reshape(B, n, cm, s, p2).permute(0, 2, 1, 3, 4)
    T._count("scale_mul", y.size)
    scale = T.expand(alpha.reshape(B, cm, n, 1, 1), y.shape)
    return y * scale


def block_forward(x: Tensor, params: BlockParams, training: bool = True) -> Tensor:
    alpha = gen_alpha(x, params, training)
    return dynamic_conv(x, alpha, params.W_b, params.b_b) + x


def stack_forward(x: Tensor, blocks: Sequence[BlockParams], training: bool = True) -> Tensor:
    if not blocks:
        raise ValueError("stack_forward needs at least one block")
    for block in blocks:
        x = block_forward(x, block, training)
    return x


def theorem_b1_oracle(instances, W_b: float) -> tuple:
    """Scalar fixed-vs-dynamic weight errors for pairs (x_i, y_i*).

    The fixed model solves least squares for one weight; the dynamic model
    picks alpha_i = y_i* / (W_b x_i) per instance.
    """
    pairs = np.asarray(instances, dtype=np.float64).reshape(-1, 2)
    xs, ys = pairs[:, 0], pairs[:, 1]
    if np.any(xs == 0):
        raise ValueError("theorem_b1_oracle: every x_i must be nonzero")
    if W_b == 0:
        raise ValueError("theorem_b1_oracle: W_b must be nonzero")
    W_f = float(xs @ ys / (xs @ xs))
    E_f = float(np.sum((W_f * xs - ys) ** 2))
    # exact rational arithmetic: alpha_i * W_b * x_i reproduces y_i* with no rounding
    w = Fraction(W_b)
    E_d = Fraction(0)
    for x, y in zip(xs.tolist(), ys.tolist()):
        alpha = Fraction(y) / (w * Fraction(x))
        E_d += (alpha * w * Fraction(x) - Fraction(y)) ** 2
    return E_f, float(E_d)
