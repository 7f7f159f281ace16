import numpy as np
import pytest

import normint as ni
from normint import evaluate as ev
from conftest import flat_normal_map


def test_align_gauge_orthographic_offset(ortho):
    gt = np.array([1.0, 2.0, 3.0, 4.0])
    pred = gt + 5.0
    assert np.allclose(ev.align_gauge(pred, gt, ortho), gt)


def test_align_gauge_perspective_scale():
    cam = ni.Camera.perspective(10, 10, 0, 0)
    gt = np.array([1.0, 2.0, 3.0])
    pred = 2.0 * gt
    assert np.allclose(ev.align_gauge(pred, gt, cam), gt)


def test_align_gauge_reduces_residual(ortho):
    rng = np.random.default_rng(0)
    gt = rng.normal(size=50)
    pred = rng.normal(size=50)
    aligned = ev.align_gauge(pred, gt, ortho)
    assert np.sum((aligned - gt) ** 2) <= np.sum((pred - gt) ** 2) + 1e-12


def test_align_gauge_degenerate_perspective():
    cam = ni.Camera.perspective(10, 10, 0, 0)
    with pytest.raises(ni.DegenerateFit):
        ev.align_gauge(np.zeros(4), np.ones(4), cam)


def _plane_report(ortho, size=32):
    nm, gt = ni.synthesize(ni.Plane(a=-0.5, b=0.25), size, size, ortho)
    mesh = ni.ScreenMesh.from_mask(nm)
    ni.rasterize(mesh, nm, ortho)
    dm, _ = ni.integrate_mesh(mesh, nm, ortho)
    return ni.surface_error(dm, gt, ortho), gt, dm


def test_surface_error_plane_exact(ortho):
    report, _, _ = _plane_report(ortho)
    assert report.rmse < 1e-6 * 32
    assert report.mae_deg < 1e-3


def test_surface_error_offset_invariant(ortho):
    report, gt, dm = _plane_report(ortho)
    dm2 = ni.unproject(dm.mesh, dm.z + 123.0, dm.cam, dm.vertex_ids)
    report2 = ni.surface_error(dm2, gt, dm.cam)
    assert np.isclose(report.rmse, report2.rmse, atol=1e-9)


def test_surface_error_compression_ratio(ortho):
    report, gt, dm = _plane_report(ortho)
    fg = int(np.count_nonzero(gt.mask))
    assert np.isclose(report.compression_ratio,
                      1.0 - report.vertex_count / fg)


def test_error_map_written(tmp_path, ortho):
    report, _, _ = _plane_report(ortho)
    path = tmp_path / "err.png"
    ev.write_error_map(report, path)
    assert path.stat().st_size > 0


def test_coverage_error_on_partial_mesh(ortho):
    nm, gt = ni.synthesize(ni.Plane(), 16, 16, ortho)
    # Mesh only half of the mask.
    half = nm.mask.copy()
    half[:, 8:] = False
    nm_half = ni.NormalMap(nm.normals, half)
    mesh = ni.ScreenMesh.from_mask(nm_half)
    ni.rasterize(mesh, nm_half, ortho)
    dm, _ = ni.integrate_mesh(mesh, nm_half, ortho)
    with pytest.raises(ni.CoverageError):
        ni.surface_error(dm, gt, ortho)


def test_csv_output(tmp_path):
    reports = [
        ev.EvalReport(1.0, 0.5, 2.0, 100, 0.9, {"remesh": 12.0}, "a"),
        ev.EvalReport(2.0, 1.0, 3.0, 50, 0.95, {"remesh": 8.0}, "b"),
    ]
    path = tmp_path / "table.csv"
    ev.write_csv(reports, path)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 3
    assert lines[0].startswith("label,rmse,made,mae_deg")


def test_sweep_rows_and_failure_capture(ortho):
    size = 32
    desc = ni.SphereCap(size / 2, size / 2, 0.45 * size, depth=size / 2,
                        cap_angle_deg=60.0)
    cfg = ni.RemeshConfig.with_vertex_target(60, iterations=2)
    reports = ev.sweep("noise", [0.0, 5.0], desc, size, ortho, cfg, seed=3)
    assert len(reports) == 2
    assert all(np.isfinite(r.rmse) for r in reports)
    # Unknown scene size (descriptor off-image) must be captured, not raised.
    bad = ni.SphereCap(-500.0, -500.0, 4.0)
    reports = ev.sweep("noise", [0.0], bad, size, ortho, cfg)
    assert "FAILED" in reports[0].label
