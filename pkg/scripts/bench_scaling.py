"""Closed-form block costs plus measured time, bytes and FLOP proxy as the input length grows."""
import argparse
import json

from tvnet import bench


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seq-lens", default="96,192,384,768,1536")
    parser.add_argument("--c-m", type=int, default=64)
    parser.add_argument("--patch-len", type=int, default=24)
    parser.add_argument("--trials", type=int, default=5)
    parser.add_argument("--csv", default=None)
    args = parser.parse_args()

    seq_lens = [int(s) for s in args.seq_lens.split(",")]
    for L in seq_lens:
        report = bench.count_costs(args.c_m, 3, L, L // args.patch_len, args.patch_len)
        print(json.dumps({"L": L, "flops_total": report.flops_total, "params_total": report.params_total}))
    rows = bench.measure_scaling(seq_lens, c_m=args.c_m, patch_len=args.patch_len, trials=args.trials)
    print(f"{'L_in':>6} {'flops':>12} {'params':>8} {'ms':>9} {'bytes':>12}")
    for r in rows:
        print(f"{r['L_in']:>6} {r['flops']:>12} {r['params']:>8} {r['ms']:>9.2f} {r['bytes']:>12}")
    if args.csv:
        bench.write_scaling_csv(rows, args.csv)


if __name__ == "__main__":
    main()
