from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tvnet import tensor as T
from tvnet.dynblock import BlockParams, block_forward, dynamic_conv, gen_alpha, stack_forward, theorem_b1_oracle
from tvnet.tensor import Tensor, grad_check


def random_generation(block, rng, scale=0.7):
    for p in (block.intra_w, block.intra_b, block.inter_w, block.inter_b):
        p.data = rng.standard_normal(p.shape) * scale
    block.intra_bn.gamma.data = rng.uniform(0.5, 1.5, block.channels)
    block.intra_bn.beta.data = rng.standard_normal(block.channels)


def static_block_reference(x, W_b, b_b):
    """Per-patch conv2d plus residual, without any alpha machinery."""
    B, cm, n, s, p2 = x.shape
    out = np.empty_like(x)
    for bi in range(B):
        for ni in range(n):
            patch = Tensor(x[bi:bi + 1, :, ni])
            out[bi, :, ni] = T.conv2d(patch, Tensor(W_b), Tensor(b_b)).data[0]
    return out + x


@pytest.fixture
def rng():
    return np.random.default_rng(11)


def test_fresh_block_alpha_is_one(rng):
    block = BlockParams.init(4, 3, rng)
    for _ in range(20):
        x = Tensor(rng.standard_normal((2, 4, 3, 2, 2)) * 10)
        assert np.array_equal(gen_alpha(x, block).data, np.ones((2, 4, 3)))


def test_use_dynamic_false_ignores_weights(rng):
    block = BlockParams.init(3, 3, rng, use_dynamic=False)
    random_generation(block, rng)
    x = Tensor(rng.standard_normal((2, 3, 4, 2, 3)))
    np.testing.assert_array_equal(gen_alpha(x, block).data, 1.0)


def test_alpha_matches_hand_pipeline(rng):
    block = BlockParams.init(3, 3, rng)
    random_generation(block, rng)
    x = rng.standard_normal((4, 3, 5, 2, 3))
    alpha = gen_alpha(Tensor(x), block).data

    v_intra = x.mean(axis=(3, 4))
    z = np.einsum("oc,bcn->bon", block.intra_w.data[:, :, 0], v_intra) + block.intra_b.data[None, :, None]
    mu, var = z.mean(axis=(0, 2)), z.var(axis=(0, 2))
    bn = (z - mu[None, :, None]) / np.sqrt(var[None, :, None] + 1e-5)
    bn = bn * block.intra_bn.gamma.data[None, :, None] + block.intra_bn.beta.data[None, :, None]
    f_intra = np.maximum(bn, 0)
    v_inter = v_intra.mean(axis=2)
    f_inter = np.maximum(v_inter @ block.inter_w.data[:, :, 0].T + block.inter_b.data, 0)
    ref = 1 + f_intra + f_inter[:, :, None]
    np.testing.assert_allclose(alpha, ref, atol=1e-12)
    assert np.all(alpha >= 1)


def test_use_inter_false_drops_inter_term(rng):
    block = BlockParams.init(3, 3, rng)
    random_generation(block, rng)
    x = Tensor(rng.standard_normal((2, 3, 4, 2, 2)))
    full = gen_alpha(x, block).data
    block.use_inter = False
    no_inter = gen_alpha(x, block).data
    block.inter_w.data[:] = 0
    block.inter_b.data[:] = 0
    block.use_inter = True
    np.testing.assert_allclose(gen_alpha(x, block).data, no_inter, atol=1e-14)
    assert not np.allclose(full, no_inter)


def test_dynamic_conv_alpha_one_is_plain_conv(rng):
    block = BlockParams.init(3, 3, rng)
    x = rng.standard_normal((2, 3, 4, 2, 3))
    out = dynamic_conv(Tensor(x), Tensor(np.ones((2, 3, 4))), block.W_b, block.b_b).data
    ref = static_block_reference(x, block.W_b.data, block.b_b.data) - x
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_dynamic_conv_scales_single_slice(rng):
    block = BlockParams.init(3, 3, rng)
    x = Tensor(rng.standard_normal((1, 3, 4, 2, 2)))
    alpha = np.ones((1, 3, 4))
    base = dynamic_conv(x, Tensor(alpha), block.W_b, block.b_b).data
    alpha[0, 1, 2] = 2.0
    out = dynamic_conv(x, Tensor(alpha), block.W_b, block.b_b).data
    expected = base.copy()
    expected[0, 1, 2] *= 2.0
    np.testing.assert_array_equal(out, expected)


def test_dynamic_conv_scalar_hand_case():
    x = Tensor(np.array([3.0, -2.0]).reshape(1, 1, 2, 1, 1))
    alpha = Tensor(np.array([[[2.0, 0.5]]]))
    out = dynamic_conv(x, alpha, Tensor(np.full((1, 1, 1, 1), 1.5)), Tensor([0.25])).data.ravel()
    np.testing.assert_allclose(out, [2.0 * (1.5 * 3 + 0.25), 0.5 * (1.5 * -2 + 0.25)])


def test_dynamic_conv_rejects_even_kernel(rng):
    x = Tensor(rng.standard_normal((1, 2, 2, 2, 2)))
    with pytest.raises(ValueError, match="even"):
        dynamic_conv(x, Tensor(np.ones((1, 2, 2))), Tensor(np.ones((2, 2, 2, 2))), Tensor(np.zeros(2)))


def test_zero_alpha_removes_patch_contribution(rng):
    block = BlockParams.init(2, 3, rng)
    x = rng.standard_normal((1, 2, 3, 2, 2))
    alpha = np.ones((1, 2, 3))
    alpha[0, :, 1] = 0.0
    out = dynamic_conv(Tensor(x), Tensor(alpha), block.W_b, block.b_b).data
    np.testing.assert_array_equal(out[0, :, 1], 0.0)
    assert np.all(out[0, :, 0] != 0)


def test_all_zero_block_is_identity(rng):
    block = BlockParams.init(3, 3, rng)
    block.W_b.data[:] = 0
    block.b_b.data[:] = 0
    x = rng.standard_normal((2, 3, 2, 2, 4))
    np.testing.assert_array_equal(block_forward(Tensor(x), block).data, x)
    np.testing.assert_array_equal(stack_forward(Tensor(x), [block, block]).data, x)


def test_fresh_block_is_static_conv_plus_residual(rng):
    block = BlockParams.init(4, 3, rng)
    x = rng.standard_normal((2, 4, 3, 2, 4))
    out = block_forward(Tensor(x), block).data
    np.testing.assert_allclose(out, static_block_reference(x, block.W_b.data, block.b_b.data), atol=1e-12)


def test_three_fresh_blocks_equal_static_stack(rng):
    blocks = [BlockParams.init(3, 3, rng) for _ in range(3)]
    x = rng.standard_normal((1, 3, 2, 2, 3))
    ref = x
    for b in blocks:
        ref = static_block_reference(ref, b.W_b.data, b.b_b.data)
    np.testing.assert_allclose(stack_forward(Tensor(x), blocks).data, ref, atol=1e-12)


def test_stack_needs_blocks():
    with pytest.raises(ValueError):
        stack_forward(Tensor(np.zeros((1, 1, 1, 1, 1))), [])


def test_block_gradients(rng):
    block = BlockParams.init(3, 3, rng)
    random_generation(block, rng, 0.5)
    x = Tensor(rng.standard_normal((2, 3, 2, 2, 2)), requires_grad=True)
    leaves = [x] + list(block.parameters().values())
    assert grad_check(lambda: (block_forward(x, block) ** 2).sum(), leaves) < 1e-4


def test_init_bounds_and_zero_paths(rng):
    block = BlockParams.init(8, 3, rng)
    bound = 1 / np.sqrt(8 * 9)
    assert np.abs(block.W_b.data).max() <= bound
    for p in (block.inter_w, block.inter_b, block.intra_bn.gamma, block.intra_bn.beta):
        assert not p.data.any()
    assert np.abs(block.intra_w.data).max() <= 1 / np.sqrt(8) and block.intra_w.data.any()


def test_fresh_generation_paths_receive_gradient(rng):
    # alpha == 1 at init, yet the zero weights must not be a stationary point
    block = BlockParams.init(3, 3, rng)
    x = Tensor(rng.standard_normal((4, 3, 3, 2, 2)))
    (block_forward(x, block) ** 2).sum().backward()
    for p in (block.intra_bn.gamma, block.intra_bn.beta, block.inter_w, block.inter_b):
        assert np.abs(p.grad).max() > 0, p.name


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.sampled_from([(1, 1), (2, 1), (2, 3)]), st.sampled_from([1, 3, 5]),
       st.integers(0, 10_000))
def test_shape_preserved(cm, n, grid, k, seed):
    rng = np.random.default_rng(seed)
    block = BlockParams.init(cm, k, rng)
    random_generation(block, rng)
    x = Tensor(rng.standard_normal((2, cm, n) + grid))
    assert block_forward(x, block).shape == x.shape


class TestTheoremOracle:
    def test_hand_example(self):
        E_f, E_d = theorem_b1_oracle([(1.0, 1.0), (2.0, 1.0)], 0.7)
        assert E_f == pytest.approx(0.2, abs=1e-15)
        assert E_d == 0.0

    def test_collinear(self):
        E_f, E_d = theorem_b1_oracle([(1.0, 3.0), (-2.0, -6.0), (0.5, 1.5)], 2.0)
        assert E_f == pytest.approx(0.0, abs=1e-24) and E_d == 0.0

    def test_preconditions(self):
        with pytest.raises(ValueError):
            theorem_b1_oracle([(0.0, 1.0)], 1.0)
        with pytest.raises(ValueError):
            theorem_b1_oracle([(1.0, 1.0)], 0.0)

    def test_random_instances_against_brute_force(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            x = rng.uniform(0.5, 2.0, 4) * rng.choice([-1, 1], 4)
            y = rng.standard_normal(4)
            E_f, E_d = theorem_b1_oracle(np.column_stack([x, y]), float(rng.uniform(0.1, 3)))
            # brute-force scan of the fixed weight, refined around the best grid point
            grid = np.linspace(-10, 10, 20001)
            errs = ((grid[:, None] * x - y) ** 2).sum(axis=1)
            w0 = grid[errs.argmin()]
            fine = np.linspace(w0 - 1e-3, w0 + 1e-3, 20001)
            brute = ((fine[:, None] * x - y) ** 2).sum(axis=1).min()
            assert E_f == pytest.approx(brute, rel=1e-9, abs=1e-12)
            assert E_d == 0.0 < E_f

    def test_dynamic_exact_in_rationals(self):
        x, y, w = 3.0, 1.0, 0.1
        alpha = Fraction(y) / (Fraction(w) * Fraction(x))
        assert alpha * Fraction(w) * Fraction(x) == Fraction(y)
