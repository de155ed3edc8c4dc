"""Command-line entry point.

    flowact simulate pick --out fx/pick
    flowact plan --fixture fx/pick --out runs/pick
    flowact nav --fixture fx/nav3 --out runs/nav3
    flowact nav --world --episodes 50 --workers 4 --out runs/world

Relative output paths resolve under $FLOWACT_OUTPUT_ROOT when it is set;
$FLOWACT_WORKERS sets the default pool size. Failures exit with the error
class's own code and a one-line diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import diffusion as dif
from . import simulator as sim
from .config import PipelineConfig
from .errors import ConfigError, DimensionMismatch, EmptyMask, FlowActError, MissingInput, NoValidDepth
from .flowio import atomic_write_bytes, read_depth_pgm, read_flow, read_paired
from .geometry import CameraIntrinsics
from .manip_planner import SubgoalPlan, plan_from_observation
from .nav_mapper import NavAction, NavThresholds, run_nav_episode, run_world_episode
from .rigid_solver import track_and_solve
from .viz import quiver_svg, render_plan_image, write_ppm


def _out_dir(path) -> Path:
    p = Path(path)
    root = os.environ.get("FLOWACT_OUTPUT_ROOT")
    if root and not p.is_absolute():
        p = Path(root) / p
    p.mkdir(parents=True, exist_ok=True)
    return p


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get("FLOWACT_WORKERS", "1")))
    except ValueError:
        raise ConfigError(f"FLOWACT_WORKERS is not an integer: {os.environ['FLOWACT_WORKERS']!r}") from None


def write_json(path, obj) -> None:
    atomic_write_bytes(path, (json.dumps(obj, indent=1, sort_keys=True) + "\n").encode())


# ---------------------------------------------------------------------------
# configuration


def _fixture_fields(directory) -> dict:
    d = Path(directory)
    meta_path = d / "scene.json"
    if not meta_path.is_file():
        raise MissingInput(f"fixture has no scene.json: {meta_path}")
    meta = json.loads(meta_path.read_text())
    K = meta["intrinsics"]
    return {
        "flows": [str(p) for p in sorted(d.glob("flow_*.flo"))],
        "depth": str(d / "frame_000.pgm"),
        "mask": str(d / "mask.pgm"),
        "intrinsics": [K["fx"], K["fy"], K["cx"], K["cy"]],
    }


def build_config(args, mode: str) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig(mode=mode)
    over = {"mode": mode}
    if args.fixture:
        over.update(_fixture_fields(args.fixture))
    for name in ("flows", "depth", "mask", "intrinsics", "seed", "up", "contact_method"):
        v = getattr(args, name, None)
        if v is not None:
            over[name] = list(v) if isinstance(v, (list, tuple)) else v
    if getattr(args, "no_ransac", False):
        over["use_ransac"] = False
    for name in ("num_points", "lift_threshold", "ransac_tol", "ransac_iters", "replan_inlier_fraction", "flow_mask_threshold"):
        v = getattr(args, name, None)
        if v is not None:
            over[name] = v
    cfg = cfg.with_overrides(**over)
    cfg.output = str(args.out)
    cfg.validate(check_files=True)
    return cfg


def _culprit(exc: FlowActError, cfg: PipelineConfig) -> str | None:
    """Input file most likely responsible for a pipeline error."""
    if isinstance(exc, EmptyMask):
        return cfg.mask
    if isinstance(exc, NoValidDepth):
        return cfg.depth
    if isinstance(exc, DimensionMismatch):
        return None  # message already names both files
    if cfg.flows and not isinstance(exc, (MissingInput, ConfigError)):
        return ", ".join(cfg.flows) if len(cfg.flows) <= 2 else f"{cfg.flows[0]} .. {cfg.flows[-1]}"
    return None


def _echo_config(cfg: PipelineConfig, out: Path) -> None:
    write_json(out / "effective_config.json", cfg.to_dict())


def _load_inputs(cfg: PipelineConfig, need_mask: bool):
    return read_paired(cfg.flows, cfg.depth, cfg.mask if need_mask else None)


# ---------------------------------------------------------------------------
# pipelines


def run_solve(cfg: PipelineConfig, out: Path):
    flows, depth, mask = _load_inputs(cfg, True)
    th = cfg.thresholds
    traj = track_and_solve(
        CameraIntrinsics(*cfg.intrinsics), depth, mask, flows, seed=cfg.seed, n_points=th.num_points,
        use_ransac=cfg.use_ransac, ransac_tol=th.ransac_tol, ransac_iters=th.ransac_iters,
        replan_fraction=th.replan_inlier_fraction,
    )
    atomic_write_bytes(out / "trajectory.json", (traj.to_json() + "\n").encode())
    return traj


def run_manip_pipeline(cfg: PipelineConfig, out: Path) -> SubgoalPlan:
    flows, depth, mask = _load_inputs(cfg, True)
    th = cfg.thresholds
    K = CameraIntrinsics(*cfg.intrinsics)
    plan, traj = plan_from_observation(
        K, depth, mask, flows, seed=cfg.seed, n_points=th.num_points, lift_threshold=th.lift_threshold,
        standoff=th.push_standoff, up=cfg.up, contact_method=cfg.contact_method, use_ransac=cfg.use_ransac,
        ransac_tol=th.ransac_tol, ransac_iters=th.ransac_iters, replan_fraction=th.replan_inlier_fraction,
    )
    atomic_write_bytes(out / "plan.json", (plan.to_json() + "\n").encode())
    atomic_write_bytes(out / "trajectory.json", (traj.to_json() + "\n").encode())
    return plan


def _nav_thresholds(cfg: PipelineConfig) -> NavThresholds:
    th = cfg.thresholds
    return NavThresholds(
        probe_distance=th.probe_distance, done_eps=th.done_eps, forward_max_lateral=th.forward_max_lateral,
        flow_mask_threshold=th.flow_mask_threshold, num_points=th.num_points, replan_fraction=th.replan_inlier_fraction,
    )


def run_nav_pipeline(cfg: PipelineConfig, out: Path) -> list[str]:
    flows, depth, _ = _load_inputs(cfg, False)
    ep = run_nav_episode(flows, depth, CameraIntrinsics(*cfg.intrinsics), _nav_thresholds(cfg), seed=cfg.seed)
    actions = ep.as_strings()
    write_json(out / "actions.json", {"schema": "flowact.nav_actions/1", "actions": actions})
    return actions


def _world_episode(job):
    seed, index, th = job
    world = sim.make_nav_world(np.random.default_rng([seed, index]))
    r = run_world_episode(world, th, seed=[seed, index])
    return {
        "episode": index,
        "success": r.success,
        "final_distance": round(r.final_distance, 9),
        "steps": r.steps,
        "replans": r.replans,
        "actions": [str(a) for a in r.actions],
    }


def run_world(episodes: int, seed: int, workers: int, th: NavThresholds = NavThresholds()) -> dict:
    jobs = [(seed, i, th) for i in range(episodes)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_world_episode, jobs))
    else:
        results = [_world_episode(j) for j in jobs]
    n_ok = sum(r["success"] for r in results)
    return {
        "schema": "flowact.nav_world/1",
        "seed": seed,
        "episodes": results,
        "success_count": n_ok,
        "success_rate": n_ok / max(episodes, 1),
    }


# ---------------------------------------------------------------------------
# simulate


SIM_KINDS = ("pick", "push", "translate", "random-rigid", "random-camera", "nav-forward", "nav-turn", "nav-zero", "nav-dropout")


def simulate_scene(kind: str, seed: int = 0):
    """Scene for a named fixture kind; returns (scene, extra metadata)."""
    F, L, R, D = NavAction.MOVE_FORWARD, NavAction.ROTATE_LEFT, NavAction.ROTATE_RIGHT, NavAction.DONE
    if kind == "pick":
        sc = sim.pick_place_scene()
        poses = sc.objects[0].poses
        end = poses[-1].compose(poses[0].inverse()).translation
        return sc, {"scripted_endpoint_offset": [float(v) for v in end]}
    if kind == "push":
        return sim.push_scene(), {}
    if kind == "translate":
        return sim.translation_scene([0.01, 0.005, 0.0]), {}
    if kind == "random-rigid":
        return sim.random_rigid_scene(np.random.default_rng(seed))[2], {}
    if kind == "random-camera":
        return sim.random_camera_scene(np.random.default_rng(seed))[2], {}
    scripts = {
        "nav-forward": [F, F, F, D],
        "nav-turn": [L, D],
        "nav-zero": [D],
        # two 30 degree turns leave under 10% of a 65 degree view in common
        "nav-dropout": [L, L, L, D],
    }
    if kind in scripts:
        world = sim.scripted_nav_world(seed)
        return sim.expert_scene(world, scripts[kind]), {"script": [str(a) for a in scripts[kind]]}
    raise ConfigError(f"unknown simulate kind {kind!r}; choose from {', '.join(SIM_KINDS)}")


# ---------------------------------------------------------------------------
# diffusion demo


def diffusion_demo(samples: int = 10_000, steps: int = 10, seed: int = 0, mean: float = 1.0, std: float = 1.0, timesteps: int = 100) -> dict:
    sched = dif.cosine_schedule(timesteps)
    oracle = dif.GaussianOracleDenoiser(mean, std, sched)
    x = dif.ddpm_sample((samples,), oracle, sched, np.random.default_rng(seed))
    xT = np.random.default_rng(seed + 1).standard_normal(samples)
    full = dif.ddim_sample(xT, oracle, sched)
    few = dif.ddim_sample(xT, oracle, sched, steps=steps)
    rel = np.abs(few - full) / np.maximum(np.abs(full), 1e-12)
    return {
        "schema": "flowact.diffusion_demo/1",
        "seed": seed,
        "data_mean": mean,
        "data_std": std,
        "ddpm_mean": float(x.mean()),
        "ddpm_var": float(x.var(ddof=1)),
        "ddpm_mean_z": float((x.mean() - mean) / (x.std(ddof=1) / np.sqrt(samples))),
        "ddpm_var_ratio": float(x.var(ddof=1) / std**2),
        "ddim_steps": steps,
        "ddim_full_mean": float(full.mean()),
        "ddim_few_mean": float(few.mean()),
        "ddim_endpoint_rel_median": float(np.median(rel)),
        "ddim_endpoint_rel_max": float(rel.max()),
    }


# ---------------------------------------------------------------------------
# argument parsing


def _add_inputs(p: argparse.ArgumentParser, mask: bool = True) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--fixture", help="simulator fixture directory (fills flows, depth, mask, intrinsics)")
    p.add_argument("--flows", nargs="+", help=".flo files, one per adjacent frame pair")
    p.add_argument("--depth", help="first-frame depth PGM (16-bit millimetres)")
    if mask:
        p.add_argument("--mask", help="object mask PGM")
    p.add_argument("--intrinsics", nargs=4, type=float, metavar=("FX", "FY", "CX", "CY"))
    p.add_argument("--seed", type=int)
    p.add_argument("--num-points", type=int, dest="num_points")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flowact", description="Actions from dense correspondences: solve, plan, navigate, simulate.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    for name, help_ in (("solve", "object trajectory from flows, depth and mask"), ("plan", "subgoal plan (grasp or push)")):
        p = sub.add_parser(name, help=help_)
        _add_inputs(p)
        p.add_argument("--no-ransac", action="store_true", help="keep every in-bounds track")
        p.add_argument("--ransac-tol", type=float, dest="ransac_tol")
        p.add_argument("--ransac-iters", type=int, dest="ransac_iters")
        p.add_argument("--replan-fraction", type=float, dest="replan_inlier_fraction")
        if name == "plan":
            p.add_argument("--lift-threshold", type=float, dest="lift_threshold")
            p.add_argument("--up", nargs=3, type=float, help="world up axis in camera coordinates")
            p.add_argument("--contact", choices=("centroid", "sample"), dest="contact_method")
            p.add_argument("--viz", action="store_true", help="also write plan.ppm")

    p = sub.add_parser("nav", help="navigation actions from flows, or the closed-loop simulator with --world")
    _add_inputs(p, mask=False)
    p.add_argument("--flow-threshold", type=float, dest="flow_mask_threshold")
    p.add_argument("--replan-fraction", type=float, dest="replan_inlier_fraction")
    p.add_argument("--follow", action="store_true", help="print one action per line")
    p.add_argument("--world", action="store_true", help="run seeded closed-loop episodes instead of reading files")
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("simulate", help="write a synthetic fixture (depth, flows, mask, scene.json)")
    p.add_argument("kind", choices=SIM_KINDS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("diffuse-demo", help="sampler statistics against an analytic Gaussian denoiser")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("viz", help="render a plan over its depth image")
    p.add_argument("--plan", required=True)
    p.add_argument("--depth", required=True)
    p.add_argument("--intrinsics", nargs=4, type=float, required=True, metavar=("FX", "FY", "CX", "CY"))
    p.add_argument("--flow", help="optional .flo drawn as a quiver")
    p.add_argument("--current", type=int, default=0, help="index of the current subgoal")
    p.add_argument("--step", type=int, default=8, help="quiver decimation in pixels")
    p.add_argument("--svg", action="store_true", help="also write quiver.svg")
    p.add_argument("--out", required=True)
    return ap


def _run(args) -> int:
    out = _out_dir(args.out)
    if args.cmd == "simulate":
        scene, extra = simulate_scene(args.kind, args.seed)
        extra["seed"] = args.seed
        sim.write_fixture(out, scene, kind=args.kind, extra=extra)
        print(out)
        return 0
    if args.cmd == "diffuse-demo":
        stats = diffusion_demo(args.samples, args.steps, args.seed)
        write_json(out / "diffusion_demo.json", stats)
        print(json.dumps(stats, indent=1, sort_keys=True))
        return 0
    if args.cmd == "viz":
        for p in (args.plan, args.depth, args.flow):
            if p is not None and not Path(p).is_file():
                raise MissingInput(f"input file not found: {p}")
        plan = SubgoalPlan.from_dict(json.loads(Path(args.plan).read_text()))
        flow = read_flow(args.flow) if args.flow else None
        img = render_plan_image(read_depth_pgm(args.depth), CameraIntrinsics(*args.intrinsics), plan.subgoals, args.current, flow, args.step)
        write_ppm(out / "plan.ppm", img)
        if args.svg and flow is not None:
            atomic_write_bytes(out / "quiver.svg", quiver_svg(flow, args.step).encode())
        return 0
    if args.cmd == "nav" and args.world:
        workers = args.workers if args.workers is not None else _default_workers()
        seed = args.seed if args.seed is not None else 0
        report = run_world(args.episodes, seed, workers)
        write_json(out / "nav_world.json", report)
        print(f"success {report['success_count']}/{args.episodes}")
        return 0

    cfg = build_config(args, "nav" if args.cmd == "nav" else "manip")
    _echo_config(cfg, out)
    try:
        if args.cmd == "solve":
            traj = run_solve(cfg, out)
            print(f"solved {len(traj.poses)} increments")
        elif args.cmd == "plan":
            plan = run_manip_pipeline(cfg, out)
            if args.viz:
                K = CameraIntrinsics(*cfg.intrinsics)
                write_ppm(out / "plan.ppm", render_plan_image(read_depth_pgm(cfg.depth), K, plan.subgoals, 0, read_flow(cfg.flows[0])))
            print(plan.mode)
        else:
            actions = run_nav_pipeline(cfg, out)
            print("\n".join(actions) if args.follow else json.dumps(actions))
    except FlowActError as exc:
        culprit = _culprit(exc, cfg)
        if culprit:
            exc.args = (f"{exc} [input: {culprit}]",)
        raise
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except FlowActError as exc:
        print(f"flowact {args.cmd}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"flowact {args.cmd}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
