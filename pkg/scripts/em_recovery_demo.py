#!/usr/bin/env python3
"""Sample a known two-component mixture and show what EM recovers."""

import argparse

import numpy as np

from mixmap.gmm import EmConfig, fit_gmm_em


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--samples", type=int, default=20_000)
    args = ap.parse_args()

    true_w, true_mu, true_sd = (0.3, 0.7), (0.0, 5.0), (1.0, 0.5)
    rng = np.random.default_rng(args.seed)
    pick = rng.random(args.samples) >= true_w[0]
    x = np.where(
        pick,
        rng.normal(true_mu[1], true_sd[1], args.samples),
        rng.normal(true_mu[0], true_sd[0], args.samples),
    )
    model = fit_gmm_em(x, EmConfig(k=2))
    print(f"converged={model.converged} after {model.iterations_run} iterations")
    print(f"{'':10s}{'weight':>10s}{'mean':>10s}{'sd':>10s}")
    for label, w, mu, sd in (
        ("true", true_w, true_mu, true_sd),
        ("fitted", model.weights, model.means, np.sqrt(model.variances)),
    ):
        for j in range(2):
            print(f"{label:10s}{w[j]:10.4f}{mu[j]:10.4f}{sd[j]:10.4f}")


if __name__ == "__main__":
    main()
