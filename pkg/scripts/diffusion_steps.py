"""DDIM step-count sweep against the 100-step endpoint for the Gaussian oracle.

Also prints the closed-form prediction: each eta=0 step scales the
standardised residual x - sqrt(abar) mu by cos(phi_prev - phi), abar = cos^2 phi.
"""

import argparse

import numpy as np

from flowact import diffusion as dif


def predicted_gain(sched, ts):
    phi = [np.arccos(min(1.0, np.sqrt(sched.alpha_bar(t)))) for t in list(ts) + [-1]]
    return float(np.prod(np.cos(np.diff(phi))))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--samples", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    sched = dif.cosine_schedule(100)
    den = dif.GaussianOracleDenoiser(1.0, 1.0, sched)
    xT = np.random.default_rng(args.seed).standard_normal(args.samples)
    full = dif.ddim_sample(xT, den, sched)
    y = xT - np.sqrt(sched.alpha_bar(99)) * 1.0
    print(f"{'steps':>5s} {'rel diff vs 100':>16s} {'predicted':>10s}")
    g_full = predicted_gain(sched, dif.ddim_timesteps(100, 100))
    for k in (5, 10, 20, 50, 100):
        few = dif.ddim_sample(xT, den, sched, steps=k)
        rel = np.linalg.norm(few - full) / np.linalg.norm(full)
        g = predicted_gain(sched, dif.ddim_timesteps(100, k))
        print(f"{k:5d} {rel:16.3e} {abs(g - g_full) * np.linalg.norm(y) / np.linalg.norm(full):10.3e}")


if __name__ == "__main__":
    main()
