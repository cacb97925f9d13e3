"""Minimal dense tensor with reverse-mode differentiation.

Only the operations the TVNet model needs are provided. Binary elementwise
ops require identical shapes (or a Python scalar); broadcasting is done
explicitly with :func:`expand`.
"""
from __future__ import annotations

import contextlib
from collections import Counter
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_DTYPE = np.float64
_GRAD_ENABLED = True
_COUNTER: Optional[Counter] = None


class GradCheckError(RuntimeError):
    pass


def get_dtype():
    return _DTYPE


def set_dtype(dtype) -> None:
    """Switch the engine-wide float type (float64 for checking, float32 allowed for training)."""
    global _DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _DTYPE = dtype


@contextlib.contextmanager
def default_dtype(dtype):
    prev = _DTYPE
    set_dtype(dtype)
    try:
        yield
    finally:
        set_dtype(prev)


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def count_ops():
    """Collect multiply/add counts and activation bytes of every op run inside the block.

    Keys: ``conv2d_mac`` (padded-tap convention, what the kernel actually
    multiplies), ``conv2d_mac_inbounds``, ``conv1d_mac``, ``pool_add_patch``, ``pool_add_global``,
    ``scale_mul``, ``activation_bytes`` and ``op:<name>`` call counts.
    """
    global _COUNTER
    prev = _COUNTER
    _COUNTER = Counter()
    try:
        yield _COUNTER
    finally:
        _COUNTER = prev


def _count(key: str, n: int) -> None:
    if _COUNTER is not None:
        _COUNTER[key] += int(n)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=_DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._op = "leaf"

    # -- construction helpers -------------------------------------------------
    @staticmethod
    def _make(data: np.ndarray, parents: Sequence["Tensor"], backward: Callable, op: str) -> "Tensor":
        if not np.all(np.isfinite(data)):
            raise FloatingPointError(f"non-finite value produced by op '{op}'")
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.name = None
        out._op = op
        _count("op:" + op, 1)
        _count("activation_bytes", data.nbytes)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{tag})"

    # -- autodiff ---------------------------------------------------------------
    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Propagate adjoints to every ``requires_grad`` leaf (accumulated into ``.grad``)."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.shape:
            raise ValueError(f"seed gradient shape {grad.shape} != output shape {self.shape}")
        pending = {id(self): grad}
        for node in reversed(tape(self)):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient reaching op '{node._op}'")
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg

    # -- operators --------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)


def tape(output: Tensor) -> list:
    """Topologically ordered op record reachable from ``output`` (inputs before consumers)."""
    order, seen = [], set()
    stack = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float, np.integer, np.floating))


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape} (use expand() to broadcast)")


# -- elementwise ------------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    if _is_scalar(b):
        return Tensor._make(a.data + b, (a,), lambda g: (g,), "add_scalar")
    _same_shape(a, b, "add")
    return Tensor._make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b) -> Tensor:
    if _is_scalar(b):
        return Tensor._make(a.data - b, (a,), lambda g: (g,), "sub_scalar")
    _same_shape(a, b, "sub")
    return Tensor._make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def neg(a: Tensor) -> Tensor:
    return Tensor._make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a: Tensor, b) -> Tensor:
    if _is_scalar(b):
        return Tensor._make(a.data * b, (a,), lambda g: (g * b,), "mul_scalar")
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return Tensor._make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def div(a: Tensor, b) -> Tensor:
    if _is_scalar(b):
        return Tensor._make(a.data / b, (a,), lambda g: (g / b,), "div_scalar")
    _same_shape(a, b, "div")
    ad, bd = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad / bd
    return Tensor._make(out, (a, b), lambda g: (g / bd, -g * out / bd), "div")


def power(a: Tensor, exponent: float) -> Tensor:
    ad = a.data
    return Tensor._make(ad ** exponent, (a,), lambda g: (g * exponent * ad ** (exponent - 1),), "pow")


def tabs(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return Tensor._make(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ad)  # non-finite results are rejected by _make
    return Tensor._make(out, (a,), lambda g: (g / ad,), "log")


def relu(a: Tensor, grad_at_zero: float = 0.0) -> Tensor:
    """max(a, 0); the subgradient at exactly 0 is ``grad_at_zero`` (0 by default)."""
    pos = a.data > 0
    slope = pos + grad_at_zero * (a.data == 0) if grad_at_zero else pos
    return Tensor._make(np.where(pos, a.data, 0.0).astype(a.data.dtype), (a,), lambda g: (g * slope,), "relu")


# -- reductions and shape ops -------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._make(np.sum(a.data, axis=axes, keepdims=keepdims), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return mul(tsum(a, axes, keepdims), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def permute(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor._make(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                        lambda g: (g.transpose(inv),), "permute")


def expand(a: Tensor, shape) -> Tensor:
    """Broadcast size-1 axes of ``a`` to ``shape`` (same rank required)."""
    shape = tuple(shape)
    if len(shape) != a.ndim:
        raise ValueError(f"expand: rank mismatch {a.shape} -> {shape}")
    axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape)) if s != t)
    for i in axes:
        if a.shape[i] != 1:
            raise ValueError(f"expand: axis {i} has extent {a.shape[i]}, expected 1")
    return Tensor._make(np.broadcast_to(a.data, shape).copy(), (a,),
                        lambda g: (g.sum(axis=axes, keepdims=True),), "expand")


def getitem(a: Tensor, index) -> Tensor:
    shape, dtype = a.shape, a.data.dtype
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (int, slice, type(Ellipsis), type(None))) for i in parts)

    def backward(g):
        out = np.zeros(shape, dtype=dtype)
        if basic:
            out[index] += g
        else:
            np.add.at(out, index, g)
        return (out,)

    return Tensor._make(np.array(a.data[index]), (a,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


# -- linear algebra -------------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight + bias`` for x: [M, D_in], weight: [D_in, D_out]."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ValueError(f"linear: shape mismatch {x.shape} @ {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd
    if bias is not None:
        if bias.shape != (wd.shape[1],):
            raise ValueError(f"linear: bias shape {bias.shape} != ({wd.shape[1]},)")
        out = out + bias.data

    def backward(g):
        grads = (g @ wd.T, xd.T @ g)
        return grads + ((g.sum(axis=0),) if bias is not None else ())

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return Tensor._make(out, parents, backward, "linear")


def conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation over the last axis. x: [C_in, L] or [B, C_in, L]; weight: [C_out, C_in, k]."""
    if stride < 1 or padding < 0:
        raise ValueError("conv1d: stride must be >= 1 and padding >= 0")
    unbatched = x.ndim == 2
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 3 or weight.ndim != 3:
        raise ValueError(f"conv1d: expected [B, C_in, L] input and [C_out, C_in, k] weight, got {x.shape}, {weight.shape}")
    B, cin, L = xd.shape
    cout, wcin, k = weight.shape
    if wcin != cin:
        raise ValueError(f"conv1d: weight expects {wcin} input channels, input has {cin}")
    if L + 2 * padding < k:
        raise ValueError("conv1d: kernel larger than padded input")
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else xd
    lout = (L + 2 * padding - k) // stride + 1
    cols = sliding_window_view(xp, k, axis=2)[:, :, ::stride][:, :, :lout]  # [B, cin, lout, k]
    cols = np.ascontiguousarray(cols.transpose(0, 2, 1, 3)).reshape(B * lout, cin * k)
    wmat = weight.data.reshape(cout, cin * k)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    _count("conv1d_mac", B * lout * cout * cin * k)
    out = np.ascontiguousarray(out.reshape(B, lout, cout).transpose(0, 2, 1))

    def backward(g):
        gb = g[None] if unbatched else g
        gm = gb.transpose(0, 2, 1).reshape(B * lout, cout)
        dw = (gm.T @ cols).reshape(weight.shape)
        dcols = (gm @ wmat).reshape(B, lout, cin, k)
        dxp = np.zeros_like(xp)
        span = stride * (lout - 1) + 1
        for j in range(k):
            dxp[:, :, j:j + span:stride] += dcols[:, :, :, j].transpose(0, 2, 1)
        dx = dxp[:, :, padding:padding + L]
        if unbatched:
            dx = dx[0]
        grads = (dx, dw)
        return grads + ((gm.sum(axis=0),) if bias is not None else ())

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return Tensor._make(out[0] if unbatched else out, parents, backward, "conv1d")


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, padding: Optional[int] = None) -> Tensor:
    """Stride-1 2-D cross-correlation. x: [B, C_in, H, W]; weight: [C_out, C_in, k, k], odd k.

    ``padding`` defaults to ``k // 2`` (same-size output).
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d: expected 4-D input and weight, got {x.shape}, {weight.shape}")
    B, cin, H, W = x.shape
    cout, wcin, k, k2 = weight.shape
    if k != k2:
        raise ValueError("conv2d: only square kernels are supported")
    if k % 2 == 0:
        raise ValueError(f"conv2d: even kernel size {k} rejected")
    if wcin != cin:
        raise ValueError(f"conv2d: weight expects {wcin} input channels, input has {cin}")
    p = k // 2 if padding is None else padding
    if p < 0 or H + 2 * p < k or W + 2 * p < k:
        raise ValueError("conv2d: invalid padding for input size")
    xd = x.data
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd
    ho, wo = H + 2 * p - k + 1, W + 2 * p - k + 1
    cols = sliding_window_view(xp, (k, k), axis=(2, 3))  # [B, cin, ho, wo, k, k]
    cols = np.ascontiguousarray(cols.transpose(0, 2, 3, 1, 4, 5)).reshape(B * ho * wo, cin * k * k)
    wmat = weight.data.reshape(cout, cin * k * k)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    if _COUNTER is not None:
        _count("conv2d_mac", B * ho * wo * cout * cin * k * k)
        rows = [sum(0 <= i + dy - p < H for i in range(ho)) for dy in range(k)]
        cols_ok = [sum(0 <= j + dx - p < W for j in range(wo)) for dx in range(k)]
        _count("conv2d_mac_inbounds", B * cout * cin * sum(rows) * sum(cols_ok))
    out = np.ascontiguousarray(out.reshape(B, ho, wo, cout).transpose(0, 3, 1, 2))

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(B * ho * wo, cout)
        dw = (gm.T @ cols).reshape(weight.shape)
        dcols = (gm @ wmat).reshape(B, ho, wo, cin, k, k)
        dxp = np.zeros_like(xp)
        for dy in range(k):
            for dx in range(k):
                dxp[:, :, dy:dy + ho, dx:dx + wo] += dcols[:, :, :, :, dy, dx].transpose(0, 3, 1, 2)
        grads = (dxp[:, :, p:p + H, p:p + W], dw)
        return grads + ((gm.sum(axis=0),) if bias is not None else ())

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return Tensor._make(out, parents, backward, "conv2d")


# -- pooling ---------------------------------------------------------------------------

def adaptive_avg_pool_patches(x: Tensor) -> Tensor:
    """[B, C, N, S, P2] -> [B, C, N]: mean over each patch's S x P2 grid."""
    if x.ndim != 5 or min(x.shape) < 1:
        raise ValueError(f"adaptive_avg_pool_patches: expected non-empty 5-D input, got {x.shape}")
    _count("pool_add_patch", x.size)
    return mean(x, axis=(3, 4))


def adaptive_avg_pool_global(v: Tensor) -> Tensor:
    """[B, C, N] -> [B, C, 1]: mean over the patch axis."""
    if v.ndim != 3 or v.shape[2] < 1:
        raise ValueError(f"adaptive_avg_pool_global: expected [B, C, N] with N >= 1, got {v.shape}")
    _count("pool_add_global", v.size)
    return mean(v, axis=2, keepdims=True)


# -- normalization -------------------------------------------------------------------

class BatchNormState:
    """Per-channel batch-norm parameters (gamma, beta) and running statistics."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gamma = Tensor(np.ones(channels), requires_grad=True, name="gamma")
        self.beta = Tensor(np.zeros(channels), requires_grad=True, name="beta")
        self.running_mean = np.zeros(channels, dtype=_DTYPE)
        self.running_var = np.ones(channels, dtype=_DTYPE)
        self.eps = eps
        self.momentum = momentum


def batch_norm(v: Tensor, state: BatchNormState, training: bool = True) -> Tensor:
    """Normalize [B, C, N] per channel over the batch and N axes."""
    if v.ndim != 3:
        raise ValueError(f"batch_norm: expected [B, C, N], got {v.shape}")
    C = v.shape[1]
    if state.gamma.shape != (C,):
        raise ValueError(f"batch_norm: state has {state.gamma.shape[0]} channels, input has {C}")
    x = v.data
    n = x.shape[0] * x.shape[2]
    if training:
        mu = x.mean(axis=(0, 2))
        var = np.maximum(((x - mu[None, :, None]) ** 2).mean(axis=(0, 2)), 0.0)
        unbiased = var * n / (n - 1) if n > 1 else var
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu
        state.running_var = (1 - m) * state.running_var + m * unbiased
    else:
        mu = state.running_mean
        var = np.maximum(state.running_var, 0.0)
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x - mu[None, :, None]) * inv_std[None, :, None]
    gamma, beta = state.gamma.data, state.beta.data
    out = xhat * gamma[None, :, None] + beta[None, :, None]

    def backward(g):
        dgamma = (g * xhat).sum(axis=(0, 2))
        dbeta = g.sum(axis=(0, 2))
        dxhat = g * gamma[None, :, None]
        if training:
            dx = (inv_std[None, :, None] / n) * (
                n * dxhat
                - dxhat.sum(axis=(0, 2), keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=(0, 2), keepdims=True)
            )
        else:
            dx = dxhat * inv_std[None, :, None]
        return dx, dgamma, dbeta

    return Tensor._make(out.astype(x.dtype), (v, state.gamma, state.beta), backward, "batch_norm")


# -- losses helpers ------------------------------------------------------------------

def log_softmax(logits: Tensor) -> Tensor:
    """Stable log-softmax along the last axis."""
    z = logits.data
    shifted = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def backward(g):
        return (g - soft * g.sum(axis=-1, keepdims=True),)

    return Tensor._make(out, (logits,), backward, "log_softmax")


# -- gradient checking ---------------------------------------------------------------

def grad_check(f: Callable[[], Tensor], leaves: Iterable[Tensor], h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` rebuilds a scalar output from ``leaves`` on each call. Relative
    error per element is ``|a - n| / max(1, |a|, |n|)``.
    """
    leaves = list(leaves)
    for leaf in leaves:
        if leaf.data.dtype != np.float64:
            raise GradCheckError("grad_check requires float64 tensors")
        leaf.grad = None
    out = f()
    if out.size != 1:
        raise GradCheckError(f"grad_check needs a scalar function, got shape {out.shape}")
    out.backward()
    worst = 0.0
    for li, leaf in enumerate(leaves):
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        label = leaf.name or f"leaf[{li}]"
        flat = leaf.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + h
                fp = f().item()
                flat[i] = orig - h
                fm = f().item()
            flat[i] = orig
            numeric = (fp - fm) / (2 * h)
            a = analytic.reshape(-1)[i]
            idx = np.unravel_index(i, leaf.shape)
            if not (np.isfinite(a) and np.isfinite(numeric)):
                raise GradCheckError(f"non-finite gradient at {label}{list(idx)}: analytic={a}, numeric={numeric}")
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
