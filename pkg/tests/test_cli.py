import json
import subprocess
import sys

import numpy as np
import pytest

from normint.cli import main


def run_cli(args):
    return main(list(args))


def synth_scene(tmp_path, scene="sphere", size=48, extra=()):
    out = tmp_path / "n.npy"
    mask = tmp_path / "m.png"
    gt = tmp_path / "gt.npz"
    rc = run_cli(["synth", "--scene", scene, "--size", str(size),
                  "--out", str(out), "--mask-out", str(mask),
                  "--gt-out", str(gt), *extra])
    assert rc == 0
    return out, mask, gt


def test_synth_then_integrate_roundtrip(tmp_path):
    out, mask, gt = synth_scene(tmp_path)
    obj = tmp_path / "surf.obj"
    report = tmp_path / "report.json"
    rc = run_cli(["integrate", "--input", str(out), "--mask", str(mask),
                  "--encoding", "f32", "--camera", "ortho",
                  "--vertices", "150", "--output", str(obj),
                  "--gt", str(gt), "--report", str(report)])
    assert rc == 0
    assert obj.exists()
    payload = json.loads(report.read_text())
    assert payload["rmse"] < 1.0
    assert payload["vertices"] <= 400


def test_plane_vertex_budget(tmp_path):
    out, mask, gt = synth_scene(tmp_path, scene="plane", size=32)
    obj = tmp_path / "plane.obj"
    rc = run_cli(["integrate", "--input", str(out), "--camera", "ortho",
                  "--vertices", "100", "--output", str(obj)])
    assert rc == 0
    nv = sum(1 for ln in obj.read_text().splitlines() if ln.startswith("v "))
    # Full-rect plane: straight boundary decimates to near the target; the
    # four rectangle corners stay locked.
    assert nv <= 102 + 4


def test_missing_input_exits_1(tmp_path, capsys):
    rc = run_cli(["integrate", "--input", str(tmp_path / "nope.npy"),
                  "--vertices", "100"])
    assert rc == 1


def test_both_controls_exit_2(tmp_path):
    out, mask, gt = synth_scene(tmp_path, size=16)
    with pytest.raises(SystemExit) as exc:
        run_cli(["integrate", "--input", str(out), "--threshold", "5",
                 "--vertices", "100"])
    assert exc.value.code == 2


def test_neither_control_exit_2(tmp_path):
    out, mask, gt = synth_scene(tmp_path, size=16)
    with pytest.raises(SystemExit) as exc:
        run_cli(["integrate", "--input", str(out)])
    assert exc.value.code == 2


def test_mesh_only_outputs_2d_mesh(tmp_path):
    out, mask, gt = synth_scene(tmp_path, size=32)
    mesh2d = tmp_path / "mesh.obj"
    svg = tmp_path / "mesh.svg"
    rc = run_cli(["mesh-only", "--input", str(out), "--mask", str(mask),
                  "--vertices", "80", "--mesh-obj-2d", str(mesh2d),
                  "--svg", str(svg)])
    assert rc == 0
    assert mesh2d.exists() and svg.exists()
    assert "<svg" in svg.read_text()[:200]


def test_sweep_noise_csv_rows(tmp_path):
    outdir = tmp_path / "sweep"
    rc = run_cli(["sweep-noise", "--scene", "sphere", "--size", "40",
                  "--sigmas", "0,3,10", "--vertices", "80",
                  "--iterations", "2", "--outdir", str(outdir)])
    assert rc == 0
    lines = (outdir / "sweep-noise.csv").read_text().strip().splitlines()
    assert len(lines) == 4  # header + 3 rows


def test_empty_sweep_list_exit_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run_cli(["sweep-noise", "--sigmas", "", "--outdir", str(tmp_path)])
    assert exc.value.code == 2


def test_sweep_threshold_vertex_counts_decrease(tmp_path):
    outdir = tmp_path / "sweep"
    rc = run_cli(["sweep-threshold", "--scene", "sphere", "--size", "40",
                  "--thresholds", "2,64,2048", "--outdir", str(outdir)])
    assert rc == 0
    lines = (outdir / "sweep-threshold.csv").read_text().strip().splitlines()
    header = lines[0].split(",")
    vcol = header.index("vertices")
    counts = [int(ln.split(",")[vcol]) for ln in lines[1:]]
    assert counts[0] > counts[1] > counts[2]


def test_determinism_byte_identical_obj(tmp_path):
    out, mask, gt = synth_scene(tmp_path, size=40)
    objs = []
    for k in range(2):
        obj = tmp_path / f"det{k}.obj"
        rc = run_cli(["integrate", "--input", str(out), "--mask", str(mask),
                      "--vertices", "120", "--seed", "7",
                      "--output", str(obj)])
        assert rc == 0
        objs.append(obj.read_bytes())
    assert objs[0] == objs[1]


def test_console_script_entrypoint():
    proc = subprocess.run([sys.executable, "-m", "normint.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "integrate" in proc.stdout
