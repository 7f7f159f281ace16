import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import normint as ni
from normint import camera as cam_mod
from normint._kernels import _clamped_jacobian


def test_ray_orthographic_is_ez():
    cam = ni.Camera.orthographic()
    assert np.allclose(ni.ray(cam, [17.0, 300.0]), [0, 0, 1])


def test_ray_perspective_principal_point():
    cam = ni.Camera.perspective(100, 100, 50, 50)
    assert np.allclose(ni.ray(cam, [50.0, 50.0]), [0, 0, 1])


def test_ray_perspective_off_axis():
    cam = ni.Camera.perspective(100, 100, 50, 50)
    expected = np.array([1.0, 0.0, 1.0]) / math.sqrt(2)
    assert np.allclose(ni.ray(cam, [150.0, 50.0]), expected)


def test_ray_positive_z_inside_image():
    cam = ni.Camera.perspective(80, 120, 64, 48)
    pts = cam_mod.pixel_center_grid(128, 96).reshape(-1, 2)
    assert np.all(ni.ray(cam, pts)[:, 2] > 0)


def test_integration_constant():
    assert ni.integration_constant(ni.Camera.orthographic()) == (1.0, 1.0)
    assert ni.integration_constant(ni.Camera.perspective(200, 100, 0, 0)) == \
        (0.005, 0.01)
    assert ni.integration_constant(ni.Camera.perspective(1, 1, 0, 0)) == \
        (1.0, 1.0)


def test_jacobian_orthographic_frontal():
    cam = ni.Camera.orthographic()
    J = ni.jacobian_from_normal(cam, [0.0, 0.0, 1.0], [3.0, 4.0])
    assert np.allclose(J, [[1, 0], [0, 1], [0, 0]])


def test_jacobian_orthographic_slanted():
    cam = ni.Camera.orthographic()
    n = np.array([1.0, 0.0, 1.0]) / math.sqrt(2)
    J = ni.jacobian_from_normal(cam, n, [0.0, 0.0])
    assert np.allclose(J[:, 0], [1, 0, -1])
    assert np.allclose(J[:, 1], [0, 1, 0])
    assert abs(n @ J[:, 0]) < 1e-10
    assert abs(n @ J[:, 1]) < 1e-10


def test_jacobian_perspective_principal_point():
    cam = ni.Camera.perspective(1, 1, 0, 0)
    J = ni.jacobian_from_normal(cam, [0.0, 0.0, 1.0], [0.0, 0.0])
    assert np.allclose(J[:, 0], [1, 0, 0], atol=1e-12)
    assert np.allclose(J[:, 1], [0, 1, 0], atol=1e-12)


def test_jacobian_columns_orthogonal_to_normal():
    rng = np.random.default_rng(0)
    for cam in (ni.Camera.orthographic(), ni.Camera.perspective(90, 110, 40, 60)):
        n = rng.normal(size=(200, 3)) * 0.4
        n[:, 2] = 1.0
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        u = rng.uniform(0, 80, size=(200, 2))
        J = ni.jacobian_from_normal(cam, n, u, clamp=True)
        dots = np.einsum("pi,pik->pk", n, J)
        assert np.max(np.abs(dots)) < 1e-10


def test_jacobian_orthographic_independent_of_position():
    cam = ni.Camera.orthographic()
    n = np.array([0.3, -0.2, 1.0])
    n /= np.linalg.norm(n)
    J1 = ni.jacobian_from_normal(cam, n, [0.0, 0.0])
    J2 = ni.jacobian_from_normal(cam, n, [500.0, 123.0])
    assert np.array_equal(J1, J2)


def test_orthographic_area_factor_at_least_one():
    rng = np.random.default_rng(1)
    cam = ni.Camera.orthographic()
    n = rng.normal(size=(500, 3)) * 0.6
    n[:, 2] = 1.0
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    J = ni.jacobian_from_normal(cam, n, np.zeros((500, 2)), clamp=True)
    assert np.all(cam_mod.area_factor(J) >= 1.0 - 1e-12)


def test_grazing_normal_raises_without_clamp():
    cam = ni.Camera.orthographic()
    n = np.array([1.0, 0.0, 0.01])
    n /= np.linalg.norm(n)
    with pytest.raises(ni.SlantError):
        ni.jacobian_from_normal(cam, n, [0.0, 0.0])
    # Clamped variant stays finite and the clamped normal meets the floor.
    J = ni.jacobian_from_normal(cam, n, [0.0, 0.0], clamp=True)
    assert np.all(np.isfinite(J))


@given(st.floats(-0.95, 0.95), st.floats(-0.95, 0.95),
       st.floats(0.02, 1.0))
@settings(max_examples=60, deadline=None)
def test_clamp_slant_reaches_floor(nx, ny, nz):
    n = np.array([nx, ny, nz])
    n /= np.linalg.norm(n)
    r = np.array([0.0, 0.0, 1.0])
    c = cam_mod.clamp_slant(n, r)
    assert np.isclose(np.linalg.norm(c), 1.0)
    assert c @ r >= cam_mod.EPS_SLANT - 1e-12


def test_kernel_jacobian_matches_reference():
    """The scalar kernel twin must agree with the vectorised implementation."""
    rng = np.random.default_rng(2)
    cams = [ni.Camera.orthographic(), ni.Camera.perspective(75, 95, 33, 44)]
    for cam in cams:
        for _ in range(50):
            n = rng.normal(size=3)
            n[2] = abs(n[2]) + 0.05
            n /= np.linalg.norm(n)
            u = rng.uniform(0, 100, size=2)
            ref = ni.jacobian_from_normal(cam, n, u, clamp=True)
            j = _clamped_jacobian(cam.kind, cam.fx, cam.fy, cam.cx, cam.cy,
                                  n[0], n[1], n[2], u[0], u[1])
            got = np.array([[j[0], j[1]], [j[2], j[3]], [j[4], j[5]]])
            assert np.allclose(got, ref, atol=1e-12)
