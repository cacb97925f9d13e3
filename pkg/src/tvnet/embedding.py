"""3D embedding of a (batched) multivariate series and its inverse flattening.

Layout conventions::

    X          [B, L, C]
    embedded   [B, L, C_m]
    patches    [B, N, P, C_m]           N = L / P
    split      [B, N, 2, P/2, C_m]      axis 2: 0 = odd indices, 1 = even indices
    X3D        [B, C_m, N, S, P2]       S = 2, P2 = P/2 (S = P2 = 1 when P == 1)
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


class ConfigError(ValueError):
    """Raised for inconsistent model/data configuration."""


@dataclass
class EmbeddingParams:
    W_feat: Tensor  # [C, C_m]
    b_feat: Tensor  # [C_m]
    patch_len: int

    def __post_init__(self):
        if self.patch_len < 1 or (self.patch_len > 1 and self.patch_len % 2):
            raise ConfigError(f"patch length must be 1 or even, got {self.patch_len}")

    @classmethod
    def init(cls, c_in: int, c_m: int, patch_len: int, rng: np.random.Generator) -> "EmbeddingParams":
        bound = 1.0 / np.sqrt(c_in)
        W = Tensor(rng.uniform(-bound, bound, size=(c_in, c_m)), requires_grad=True, name="embed.W_feat")
        b = Tensor(rng.uniform(-bound, bound, size=(c_m,)), requires_grad=True, name="embed.b_feat")
        return cls(W, b, patch_len)

    @classmethod
    def identity(cls, c: int, patch_len: int) -> "EmbeddingParams":
        return cls(Tensor(np.eye(c)), Tensor(np.zeros(c)), patch_len)

    def parameters(self) -> dict:
        return {"embed.W_feat": self.W_feat, "embed.b_feat": self.b_feat}


def embed_features(x: Tensor, params: EmbeddingParams) -> Tensor:
    """Per-timestep affine projection C -> C_m; accepts [L, C] or [B, L, C]."""
    c = params.W_feat.shape[0]
    if x.shape[-1] != c:
        raise ValueError(f"embed_features: input has {x.shape[-1]} variables, projection expects {c}")
    lead = x.shape[:-1]
    flat = T.linear(x.reshape(-1, c), params.W_feat, params.b_feat)
    return flat.reshape(*lead, params.W_feat.shape[1])


def patchify(xp: Tensor, patch_len: int) -> Tensor:
    """[..., L, C_m] -> [..., N, P, C_m], non-overlapping windows in temporal order."""
    L, cm = xp.shape[-2:]
    if L % patch_len:
        raise ConfigError(f"sequence length {L} is not divisible by patch length {patch_len}")
    return xp.reshape(*xp.shape[:-2], L // patch_len, patch_len, cm)


def odd_even_split(patches: Tensor) -> Tensor:
    """[..., N, P, C_m] -> [..., N, 2, P/2, C_m] with the odd-index half first."""
    *lead, n, p, cm = patches.shape
    if p == 1:
        return patches.reshape(*lead, n, 1, 1, cm)
    if p % 2:
        raise ConfigError(f"odd-even split needs an even patch length, got {p}")
    # pairs[..., j, r] holds element 2j + r; reversing r puts odd (r=1) first
    pairs = patches.reshape(*lead, n, p // 2, 2, cm)
    pairs = pairs[..., ::-1, :]
    k = len(lead)
    return pairs.permute(*range(k), k, k + 2, k + 1, k + 3)


def embed3d(x: Tensor, params: EmbeddingParams) -> Tensor:
    """[B, L, C] -> X3D [B, C_m, N, S, P2]."""
    if x.ndim != 3:
        raise ValueError(f"embed3d expects [B, L, C], got {x.shape}")
    split = odd_even_split(patchify(embed_features(x, params), params.patch_len))
    return split.permute(0, 4, 1, 2, 3)


def flatten_temporal(x3d: Tensor) -> Tensor:
    """X3D [B, C_m, N, S, P2] -> [B, N*P, C_m] with rows in original temporal order."""
    B, cm, n, s, p2 = x3d.shape
    y = x3d.permute(0, 2, 4, 1, 3)  # [B, N, P2, C_m, S]
    if s == 2:
        y = y[..., ::-1]  # back to (even, odd) order within each pair
    y = y.permute(0, 1, 2, 4, 3)  # [B, N, P2, S, C_m]
    return y.reshape(B, n * p2 * s, cm)
