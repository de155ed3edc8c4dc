"""Time the rigid solver over seeded random scenes and report pose errors."""

import argparse
import time

import numpy as np

from flowact import simulator as sim
from flowact.geometry import pose_errors
from flowact.rigid_solver import track_and_solve


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenes", type=int, default=200)
    ap.add_argument("--ransac", action="store_true")
    args = ap.parse_args()
    t0 = time.perf_counter()
    errs = []
    for s in range(args.scenes):
        _, T, sc = sim.random_rigid_scene(np.random.default_rng(s))
        res = track_and_solve(sc.K, sim.render_depth(sc, 0), sim.render_mask(sc, 0), sim.render_flows(sc), seed=s, use_ransac=args.ransac)
        errs.append(pose_errors(res.poses[-1], T))
    e = np.array(errs)
    dt = time.perf_counter() - t0
    print(f"{args.scenes} scenes in {dt:.1f} s ({1e3 * dt / args.scenes:.1f} ms each)")
    for name, col in (("rotation [rad]", e[:, 0]), ("translation [m]", e[:, 1])):
        print(f"{name:16s} median {np.median(col):.2e}  p99 {np.percentile(col, 99):.2e}  max {col.max():.2e}")


if __name__ == "__main__":
    main()
