import csv

import pytest

from tvnet import bench

CONFIGS = [(64, 3, 96, 24), (32, 3, 96, 8), (16, 5, 48, 12), (8, 1, 8, 1), (64, 3, 192, 24)]


def test_reference_example():
    r = bench.count_costs(64, 3, 96, 4, 24)
    assert r.flops_conv2d == 64 * 64 * 9 * 96 == 3_538_944
    assert r.params_conv2d == 36_864
    assert r.flops_multiply == 64 * 64 * 9 * 4
    assert r.flops_alpha_gen == 64 * 96
    assert r.flops_channel == 64 * 64 * 4 + 64 * 64


def test_totals_are_sums():
    for c_m, k, L, P in CONFIGS:
        r = bench.count_costs(c_m, k, L, L // P, P)
        assert r.flops_total == r.flops_conv2d + r.flops_alpha_gen + r.flops_channel + r.flops_multiply
        assert r.params_total == r.params_conv2d + r.params_gen + r.params_channel + r.params_bias


def test_inconsistent_shape():
    with pytest.raises(ValueError, match="inconsistent"):
        bench.count_costs(8, 3, 96, 5, 24)


@pytest.mark.parametrize("c_m,k,L,P", CONFIGS)
def test_instrumented_counts_match_closed_form(c_m, k, L, P):
    r = bench.count_costs(c_m, k, L, L // P, P)
    counts = bench.instrumented_block_counts(c_m, k, L, P)
    assert counts["conv2d_mac"] == r.flops_conv2d
    assert counts["conv1d_mac"] == r.flops_channel
    assert counts["pool_add_patch"] == r.flops_alpha_gen
    assert counts["pool_add_global"] == r.extra["flops_inter_pool"]
    assert counts["conv2d_mac_inbounds"] <= counts["conv2d_mac"]
    assert bench.block_param_count(c_m, k) == r.params_total


def test_doubling_L():
    a = bench.count_costs(64, 3, 96, 4, 24)
    b = bench.count_costs(64, 3, 192, 8, 24)
    assert b.flops_conv2d == 2 * a.flops_conv2d
    assert b.params_conv2d == a.params_conv2d and b.params_total == a.params_total


def test_scaling_harness(tmp_path):
    rows = bench.measure_scaling((48, 96, 192), c_m=8, patch_len=24, n_blocks=1, horizon=24, batch=2, trials=5)
    flops = [r["flops"] for r in rows]
    assert flops[1] == 2 * flops[0] and flops[2] == 2 * flops[1]
    assert len({r["params"] for r in rows}) == 1
    b = [r["bytes"] for r in rows]
    # activations are linear in L with a fixed offset from the L-independent head and pooling terms
    assert b[2] - b[1] == pytest.approx(2 * (b[1] - b[0]), rel=0.05)
    bench.write_scaling_csv(rows, tmp_path / "s.csv")
    with open(tmp_path / "s.csv") as fh:
        got = list(csv.DictReader(fh))
    assert [int(r["L_in"]) for r in got] == [48, 96, 192]
    assert list(got[0]) == ["L_in", "flops", "params", "ms", "bytes"]
