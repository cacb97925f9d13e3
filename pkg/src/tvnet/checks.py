"""Finite-difference gradient suite over every differentiable op and the full model."""
from __future__ import annotations

import numpy as np

from . import metrics as M
from . import tensor as T
from .config import TaskConfig
from .dynblock import BlockParams, block_forward
from .embedding import EmbeddingParams, embed3d, embed_features
from .model import TVNet
from .tensor import BatchNormState, Tensor, grad_check


def _leaf(rng, *shape, low=None):
    data = rng.standard_normal(shape) if low is None else rng.uniform(low, low + 1.0, size=shape)
    return Tensor(data, requires_grad=True)


def _weighted(out: Tensor, rng) -> Tensor:
    # random projection keeps every output element in the check
    w = Tensor(rng.standard_normal(out.shape))
    return (out * w).sum()


def _randomize_generation(block: BlockParams, rng, scale: float = 0.5) -> None:
    # moves every ReLU input off the kink that a fresh block sits on
    for p in (block.intra_w, block.intra_b, block.inter_w, block.inter_b, block.intra_bn.beta):
        p.data = rng.standard_normal(p.shape) * scale
    block.intra_bn.gamma.data = rng.uniform(0.5, 1.5, block.channels)


def gradient_suite(seed: int = 0, h: float = 1e-5) -> dict:
    """Return {check name: max relative error}; all checks run in float64."""
    results = {}
    with T.default_dtype(np.float64):
        rng = np.random.default_rng(seed)
        a, b = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
        pos = _leaf(rng, 3, 4, low=0.5)

        def check(name, fn, leaves):
            results[name] = grad_check(lambda: _weighted(fn(), np.random.default_rng(seed + len(name))), leaves, h)

        check("add", lambda: a + b, [a, b])
        check("sub", lambda: a - b, [a, b])
        check("mul", lambda: a * b, [a, b])
        check("div", lambda: a / pos, [a, pos])
        check("pow", lambda: pos ** 3, [pos])
        check("abs", lambda: T.tabs(a), [a])
        check("exp", lambda: T.exp(a), [a])
        check("log", lambda: T.log(pos), [pos])
        check("relu", lambda: T.relu(a), [a])
        check("sum", lambda: a.sum(axis=1, keepdims=True), [a])
        check("mean", lambda: a.mean(axis=0), [a])
        check("reshape_permute", lambda: a.reshape(2, 6).permute(1, 0), [a])
        c = _leaf(rng, 3, 1)
        check("expand", lambda: T.expand(c, (3, 4)), [c])
        check("getitem", lambda: a[:, ::-1], [a])
        check("concat", lambda: T.concat([a, b], axis=1), [a, b])
        x, w, bias = _leaf(rng, 5, 3), _leaf(rng, 3, 2), _leaf(rng, 2)
        check("linear", lambda: T.linear(x, w, bias), [x, w, bias])
        x1, w1, b1 = _leaf(rng, 2, 3, 7), _leaf(rng, 4, 3, 3), _leaf(rng, 4)
        check("conv1d", lambda: T.conv1d(x1, w1, b1, stride=2, padding=1), [x1, w1, b1])
        x2, w2, b2 = _leaf(rng, 2, 3, 2, 4), _leaf(rng, 2, 3, 3, 3), _leaf(rng, 2)
        check("conv2d", lambda: T.conv2d(x2, w2, b2), [x2, w2, b2])
        x5 = _leaf(rng, 2, 3, 2, 2, 3)
        check("pool_patches", lambda: T.adaptive_avg_pool_patches(x5), [x5])
        v = _leaf(rng, 2, 3, 4)
        check("pool_global", lambda: T.adaptive_avg_pool_global(v), [v])
        bn = BatchNormState(3)
        bn.gamma.data = rng.uniform(0.5, 1.5, 3)
        bn.beta.data = rng.standard_normal(3)
        check("batch_norm_train", lambda: T.batch_norm(v, bn, True), [v, bn.gamma, bn.beta])
        bn.running_mean, bn.running_var = rng.standard_normal(3), rng.uniform(0.5, 2.0, 3)
        check("batch_norm_eval", lambda: T.batch_norm(v, bn, False), [v, bn.gamma, bn.beta])
        logits = _leaf(rng, 4, 5)
        check("log_softmax", lambda: T.log_softmax(logits), [logits])

        target = rng.standard_normal((3, 4))
        results["mse_loss"] = grad_check(lambda: M.mse_loss(a, target), [a], h)
        results["smape_loss"] = grad_check(lambda: M.smape_loss(pos, target + 3.0), [pos], h)
        classes = rng.integers(0, 5, size=4)
        results["cross_entropy"] = grad_check(lambda: M.cross_entropy(logits, classes), [logits], h)
        mask = rng.random((3, 4)) < 0.4
        mask[0, 0] = True
        results["masked_mse_loss"] = grad_check(lambda: M.masked_mse_loss(a, target, mask), [a], h)

        emb = EmbeddingParams.init(2, 3, 4, rng)
        xs = Tensor(rng.standard_normal((2, 8, 2)))
        results["embed_features"] = grad_check(lambda: _weighted(embed_features(xs, emb), np.random.default_rng(1)),
                                               [emb.W_feat, emb.b_feat], h)
        results["embed3d"] = grad_check(lambda: _weighted(embed3d(xs, emb), np.random.default_rng(2)),
                                        [emb.W_feat, emb.b_feat], h)

        block = BlockParams.init(3, 3, rng)
        _randomize_generation(block, rng)
        xb = _leaf(rng, 1, 3, 2, 2, 4)
        target_b = rng.standard_normal(xb.shape)
        results["block_forward"] = grad_check(lambda: M.mse_loss(block_forward(xb, block), target_b),
                                              [xb] + list(block.parameters().values()), h)

        cfg = TaskConfig.for_task("long_forecast", c_m=3, patch_len=4, n_blocks=3, seq_len=8, horizon=4, seed=seed)
        model = TVNet(cfg, 2)
        for blk in model.blocks:
            _randomize_generation(blk, rng)
        xm = rng.standard_normal((2, 8, 2))
        ym = rng.standard_normal((2, 4, 2))
        results["tvnet_3_blocks"] = grad_check(lambda: M.mse_loss(model(Tensor(xm)), ym),
                                               list(model.parameters().values()), h)
    return results
