"""Desk-scale ETTh1 spot check: input 96, horizon 96, default long-term config, 10 epochs."""
import argparse
import json
import logging
import time

from tvnet.experiments import apply_ablation, etth1_bundle, etth1_config
from tvnet.trainer import evaluate, train


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data", default=None, help="path to ETTh1.csv (defaults to the shipped copy)")
    parser.add_argument("--epochs", type=int, default=10)
    parser.add_argument("--seed", type=int, default=2024)
    parser.add_argument("--ablation", default="none")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    bundle = etth1_bundle(args.data)
    config = apply_ablation(etth1_config(epochs=args.epochs, seed=args.seed), args.ablation)
    start = time.perf_counter()
    model, history = train(config, bundle, verbose=True)
    result = evaluate(model, bundle, config, "test")
    result.update(epochs=len(history), minutes=(time.perf_counter() - start) / 60, ablation=args.ablation)
    print(json.dumps(result, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
