import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from flowact import cli
from flowact.config import PipelineConfig, Thresholds
from flowact.errors import ConfigError, MissingInput
from flowact.flowio import DepthImage, FlowField
from flowact.geometry import CameraIntrinsics
from flowact.viz import CURRENT_COLOR, NEXT_COLOR, encode_ppm, quiver_svg, render_plan_image

DATA = Path(__file__).parent / "data"


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def fixtures(tmp_path_factory):
    root = tmp_path_factory.mktemp("fx")
    for kind in ("pick", "push", "nav-forward", "nav-zero", "nav-dropout"):
        assert run("simulate", kind, "--out", root / kind) == 0
    return root


def tree_bytes(d: Path) -> dict:
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_default_config_matches_reference():
    assert PipelineConfig(output="out").to_json() + "\n" == (DATA / "default_config.json").read_text()


def test_default_thresholds():
    th = Thresholds()
    expect = dict(num_points=500, lift_threshold=0.10, push_standoff=0.10, replan_window=15, replan_min_motion=0.001,
                  forward_max_lateral=0.25, done_eps=0.001, probe_distance=1.0, replan_inlier_fraction=0.10,
                  video_frames=8, diffusion_timesteps=100, min_snr_gamma=5.0, ema_decay=0.999)
    assert {k: getattr(th, k) for k in expect} == expect


def test_config_load_and_override(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 4, "thresholds": {"lift_threshold": 0.2}}))
    cfg = PipelineConfig.load(p).with_overrides(seed=9, ransac_tol=1.5, depth=None)
    assert cfg.seed == 9 and cfg.thresholds.lift_threshold == 0.2 and cfg.thresholds.ransac_tol == 1.5
    p.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(ConfigError):
        PipelineConfig.load(p)
    with pytest.raises(MissingInput):
        PipelineConfig.load(tmp_path / "none.json")
    with pytest.raises(ConfigError):
        Thresholds(done_eps=-1).validate()


def test_exit_codes_partition_error_classes():
    from flowact import errors

    leaves = [c for c in vars(errors).values() if isinstance(c, type) and issubclass(c, errors.FlowActError) and c is not errors.FlowActError]
    codes = [c.exit_code for c in leaves]
    assert len(codes) == len(set(codes)) and all(c not in (0, 1, 2) for c in codes)


def test_plan_pick_and_push(fixtures, tmp_path):
    assert run("plan", "--fixture", fixtures / "pick", "--out", tmp_path / "pick") == 0
    plan = json.loads((tmp_path / "pick" / "plan.json").read_text())
    meta = json.loads((fixtures / "pick" / "scene.json").read_text())
    assert plan["mode"] == "Grasp" and "approach" not in plan
    final = np.array(plan["subgoals"][-1])
    truth = np.array(plan["contact"]) + meta["scripted_endpoint_offset"]
    assert np.linalg.norm(final - truth) < 1e-3
    assert run("plan", "--fixture", fixtures / "push", "--out", tmp_path / "push") == 0
    plan = json.loads((tmp_path / "push" / "plan.json").read_text())
    assert plan["mode"] == "Push"
    c, a = np.array(plan["contact"]), np.array(plan["approach"])
    assert abs(np.linalg.norm(a - c) - 0.10) < 1e-12
    assert (tmp_path / "push" / "effective_config.json").is_file()
    assert json.loads((tmp_path / "push" / "trajectory.json").read_text())["schema"] == "flowact.trajectory/1"


def test_missing_mask_diagnostic(fixtures, tmp_path, capsys):
    code = run("plan", "--fixture", fixtures / "pick", "--mask", tmp_path / "absent.pgm", "--out", tmp_path / "o")
    assert code == MissingInput.exit_code
    assert "absent.pgm" in capsys.readouterr().err


def test_empty_mask_names_mask_file(fixtures, tmp_path, capsys):
    from flowact.errors import EmptyMask
    from flowact.flowio import MaskImage, write_mask_pgm

    write_mask_pgm(tmp_path / "empty.pgm", MaskImage(np.zeros((240, 320), bool)))
    code = run("plan", "--fixture", fixtures / "pick", "--mask", tmp_path / "empty.pgm", "--out", tmp_path / "o")
    assert code == EmptyMask.exit_code
    assert "empty.pgm" in capsys.readouterr().err


def test_nav_fixtures(fixtures, tmp_path, capsys):
    expect = {
        "nav-zero": ["Done"],
        "nav-forward": ["MoveForward"] * 3 + ["Done"],
    }
    for kind, acts in expect.items():
        assert run("nav", "--fixture", fixtures / kind, "--out", tmp_path / kind) == 0
        assert json.loads((tmp_path / kind / "actions.json").read_text())["actions"] == acts
    capsys.readouterr()
    assert run("nav", "--fixture", fixtures / "nav-dropout", "--out", tmp_path / "d", "--follow") == 0
    lines = capsys.readouterr().out.split()
    assert "ReplanNeeded" in lines


def test_cli_byte_reproducible(fixtures, tmp_path):
    out = tmp_path / "r"
    snapshots = []
    for _ in range(2):
        assert run("plan", "--fixture", fixtures / "push", "--out", out, "--viz") == 0
        assert run("nav", "--fixture", fixtures / "nav-forward", "--out", out / "nav") == 0
        snapshots.append(tree_bytes(out))
    assert snapshots[0] == snapshots[1]


def test_output_root_env(fixtures, tmp_path, monkeypatch):
    monkeypatch.setenv("FLOWACT_OUTPUT_ROOT", str(tmp_path / "root"))
    assert run("nav", "--fixture", fixtures / "nav-zero", "--out", "rel") == 0
    assert (tmp_path / "root" / "rel" / "actions.json").is_file()


def test_world_mode_with_workers(tmp_path, monkeypatch):
    monkeypatch.setenv("FLOWACT_WORKERS", "2")
    assert run("nav", "--world", "--episodes", 2, "--seed", 3, "--out", tmp_path / "a") == 0
    monkeypatch.setenv("FLOWACT_WORKERS", "1")
    assert run("nav", "--world", "--episodes", 2, "--seed", 3, "--out", tmp_path / "b") == 0
    a, b = (tmp_path / "a" / "nav_world.json").read_bytes(), (tmp_path / "b" / "nav_world.json").read_bytes()
    assert a == b
    assert json.loads(a)["schema"] == "flowact.nav_world/1"


def test_diffuse_demo(tmp_path):
    assert run("diffuse-demo", "--samples", 500, "--out", tmp_path) == 0
    d = json.loads((tmp_path / "diffusion_demo.json").read_text())
    assert d["schema"] == "flowact.diffusion_demo/1" and abs(d["ddpm_mean_z"]) < 4


def test_viz_command(fixtures, tmp_path):
    assert run("plan", "--fixture", fixtures / "pick", "--out", tmp_path / "p") == 0
    args = ["viz", "--plan", tmp_path / "p" / "plan.json", "--depth", fixtures / "pick" / "frame_000.pgm",
            "--intrinsics", 300, 300, 160, 120, "--flow", fixtures / "pick" / "flow_000.flo", "--svg"]
    assert run(*args, "--out", tmp_path / "v1") == 0
    assert run(*args, "--out", tmp_path / "v2") == 0
    assert tree_bytes(tmp_path / "v1") == tree_bytes(tmp_path / "v2")
    assert (tmp_path / "v1" / "plan.ppm").read_bytes().startswith(b"P6\n320 240\n255\n")


def test_viz_markers():
    K = CameraIntrinsics(100.0, 100.0, 64.0, 64.0)
    depth = DepthImage(np.full((128, 128), 2.0))
    bare = render_plan_image(depth, K, [])
    from flowact.viz import depth_background, draw_legend

    ref = depth_background(depth)
    draw_legend(ref)
    assert np.array_equal(bare, ref)
    img = render_plan_image(depth, K, [np.array([0, 0, 2.0]), np.array([0.5, 0, 2.0])])
    assert tuple(img[64, 64]) == CURRENT_COLOR
    assert tuple(img[64, 89]) == NEXT_COLOR
    assert encode_ppm(img) == encode_ppm(render_plan_image(depth, K, [np.array([0, 0, 2.0]), np.array([0.5, 0, 2.0])]))
    f = FlowField(np.full((16, 16, 2), 1.0, np.float32))
    assert quiver_svg(f, step=8).count("<line") == 4


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "flowact", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "simulate" in r.stdout
    r = subprocess.run([sys.executable, "-m", "flowact", "simulate", "bogus", "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 2  # argparse rejects unknown kinds
