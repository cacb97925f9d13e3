"""Full model vs no-inter-pool vs no-dynamic on the synthetic seasonal series (or ETTh1 with --etth1)."""
import argparse
import json

from tvnet.experiments import ablation_grid, etth1_bundle, etth1_config, seasonal_bundle, synthetic_forecast_config


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--etth1", action="store_true")
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if args.etth1:
        config, bundle = etth1_config(seed=args.seed), etth1_bundle()
    else:
        config, bundle = synthetic_forecast_config(seed=args.seed), seasonal_bundle(seed=args.seed)
    if args.epochs:
        config = config.replace(epochs=args.epochs)
    grid = ablation_grid(config, bundle)
    full = grid["none"]["mse"]
    for name, row in grid.items():
        row["relative_to_full"] = row["mse"] / full - 1.0
    print(json.dumps(grid, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
