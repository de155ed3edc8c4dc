"""Run seeded closed-loop navigation episodes and print per-episode outcomes."""

import argparse

import numpy as np

from flowact import simulator as sim
from flowact.nav_mapper import run_world_episode


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--episodes", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    ok = 0
    for i in range(args.episodes):
        world = sim.make_nav_world(np.random.default_rng([args.seed, i]))
        start = world.distance_to_target()
        r = run_world_episode(world, seed=i)
        ok += r.success
        print(f"episode {i:3d}: start {start:.2f} m  final {r.final_distance:.2f} m  steps {r.steps:3d}  replans {r.replans:2d}  {'ok' if r.success else 'FAIL'}")
    print(f"success {ok}/{args.episodes}")


if __name__ == "__main__":
    main()
