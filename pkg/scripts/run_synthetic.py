"""Synthetic experiments: forecasting convergence, imputation, anomaly trials and noise robustness."""
import argparse
import json
import time

import numpy as np

from tvnet.experiments import (anomaly_trial, imputation_run, robustness_run, sines_bundle,
                               synthetic_forecast_config)
from tvnet.trainer import evaluate, train


def forecast(args):
    config, bundle = synthetic_forecast_config(seed=args.seed), sines_bundle()
    model, history = train(config, bundle)
    return dict(evaluate(model, bundle, config, "test"), epochs=len(history))


def anomaly(args):
    f1 = [anomaly_trial(seed)["f1"] for seed in range(args.trials)]
    return {"mean_f1": float(np.mean(f1)), "min_f1": float(np.min(f1)), "trials": args.trials}


EXPERIMENTS = {
    "forecast": forecast,
    "imputation": lambda args: imputation_run(seed=args.seed),
    "anomaly": anomaly,
    "robustness": lambda args: robustness_run(synthetic_forecast_config(seed=args.seed), sines_bundle(noise=0.1),
                                              epsilon=args.epsilon),
}


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("experiment", choices=sorted(EXPERIMENTS))
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--trials", type=int, default=20)
    parser.add_argument("--epsilon", type=float, default=0.01)
    args = parser.parse_args()
    start = time.perf_counter()
    result = EXPERIMENTS[args.experiment](args)
    result["seconds"] = time.perf_counter() - start
    print(json.dumps(result, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
