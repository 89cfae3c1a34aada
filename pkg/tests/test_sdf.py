import numpy as np
import pytest

from crosstouch import sdf
from crosstouch.geometry import RigidTransform, rotation_about


def _shapes():
    pose = RigidTransform(rotation_about((1, 1, 0), 30.0), (1.0, -2.0, 3.0))
    return [
        sdf.Sphere(2.0),
        sdf.Box((1.0, 2.0, 0.5)),
        sdf.Cylinder(1.5, 2.0),
        sdf.Capsule(0.8, 1.5),
        sdf.Sphere(2.0, pose=pose),
        sdf.Union([sdf.Sphere(1.0), sdf.Box((0.5, 0.5, 2.0))]),
        sdf.Intersection([sdf.Sphere(2.0), sdf.Box((1.5, 1.5, 1.5))]),
        sdf.SmoothUnion([sdf.Sphere(1.0), sdf.Sphere(1.0, pose=RigidTransform(np.eye(3), (1.5, 0, 0)))], k=0.5),
    ]


def test_sign_convention():
    s = sdf.Sphere(2.0)
    assert s.evaluate([[0, 0, 0]])[0] == pytest.approx(-2.0)
    assert s.evaluate([[2, 0, 0]])[0] == pytest.approx(0.0, abs=1e-12)
    assert s.evaluate([[5, 0, 0]])[0] == pytest.approx(3.0)
    b = sdf.Box((1.0, 1.0, 1.0))
    assert b.evaluate([[0, 0, 0]])[0] == pytest.approx(-1.0)
    assert b.evaluate([[3.0, 0, 0]])[0] == pytest.approx(2.0)
    assert b.evaluate([[2.0, 2.0, 0.0]])[0] == pytest.approx(np.sqrt(2.0))


def test_cylinder_and_capsule_distances():
    c = sdf.Cylinder(1.0, 2.0)
    assert c.evaluate([[0, 0, 0]])[0] == pytest.approx(-1.0)
    assert c.evaluate([[0, 0, 3.0]])[0] == pytest.approx(1.0)
    assert c.evaluate([[2.0, 0, 3.0]])[0] == pytest.approx(np.sqrt(2.0))
    cap = sdf.Capsule(0.5, 1.0)
    assert cap.evaluate([[0, 0, 1.5]])[0] == pytest.approx(0.0, abs=1e-12)
    assert cap.evaluate([[0, 0, 0]])[0] == pytest.approx(-0.5)


def test_finite_everywhere_and_gradient_unit_norm():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-4, 4, (200, 3))
    for shape in _shapes():
        d = shape.evaluate(pts)
        assert np.isfinite(d).all()
        away = pts[np.abs(d) > 0.3]  # keep clear of edges/kinks
        g = shape.gradient(away)
        norms = np.linalg.norm(g, axis=1)
        assert (np.abs(norms - 1.0) < 0.05).mean() > 0.9


def test_posed_shape_matches_manual_transform():
    rng = np.random.default_rng(1)
    pose = RigidTransform(rotation_about((0, 1, 0), 45.0), (2.0, 0.0, -1.0))
    base = sdf.Box((1.0, 0.5, 2.0))
    posed = sdf.Posed(base, pose)
    pts = rng.uniform(-4, 4, (50, 3))
    np.testing.assert_allclose(posed.evaluate(pts), base.evaluate(pose.inverse().apply(pts)), atol=1e-12)


def test_surface_points_lie_on_surface():
    for shape in (sdf.Sphere(2.0), sdf.Box((1.0, 1.0, 1.0)),
                  sdf.Union([sdf.Sphere(1.0), sdf.Sphere(1.0, pose=RigidTransform(np.eye(3), (1.2, 0, 0)))])):
        pts = shape.surface_points(100, seed=3)
        assert len(pts) == 100
        assert np.abs(shape.evaluate(pts)).max() < 1e-5


def test_surface_points_min_z_filter():
    s = sdf.Sphere(3.0, pose=RigidTransform(np.eye(3), (0, 0, -3.0)))
    pts = s.surface_points(80, seed=4, min_z=-1.0)
    assert (pts[:, 2] >= -1.0 - 1e-9).all()


def test_bounding_radius():
    assert sdf.Sphere(2.0).bounding_radius() == pytest.approx(2.0)
    posed = sdf.Sphere(1.0, pose=RigidTransform(np.eye(3), (3.0, 0, 0)))
    assert posed.bounding_radius() == pytest.approx(4.0)
    assert np.isinf(sdf.HalfSpace((0, 0, 1)).bounding_radius())


def test_halfspace_sign():
    h = sdf.HalfSpace((0, 0, 1), offset=2.0)
    assert h.evaluate([[0, 0, 0]])[0] == pytest.approx(-2.0)
    assert h.evaluate([[0, 0, 5.0]])[0] == pytest.approx(3.0)
