"""Signed distance primitives and combinators, in mm.

Used for indenter geometry (rendering, model-cloud sampling) and for each
sensor's sensing-volume membership test during depth adaptation. Negative
inside, positive outside, zero on the surface.
"""

import numpy as np

from .geometry import RigidTransform


class SdfShape:
    """Base: subclasses implement _distance(points) in the shape-local frame."""

    def __init__(self, pose=None):
        self.pose = pose or RigidTransform.identity()

    def evaluate(self, points):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        local = self.pose.inverse().apply(points)
        d = self._distance(local)
        if not np.isfinite(d).all():
            raise ValueError(f"{type(self).__name__} produced non-finite distances")
        return d

    def gradient(self, points, h=1e-4):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        g = np.zeros_like(points)
        for ax in range(3):
            dp = np.zeros(3)
            dp[ax] = h
            g[:, ax] = (self.evaluate(points + dp) - self.evaluate(points - dp)) / (2 * h)
        return g

    def bounding_radius(self):
        """Radius of a sphere at the parent-frame origin containing the shape."""
        return self._local_radius() + np.linalg.norm(self.pose.translation)

    def _local_radius(self):
        raise NotImplementedError

    def surface_points(self, n, seed=0, min_z=None):
        """Sample ~n points on the surface by Newton projection along the
        SDF gradient; optionally keep only points with parent-frame z >= min_z
        (the tip region that can actually reach a membrane)."""
        rng = np.random.default_rng(seed)
        r = self._local_radius()
        pts = np.empty((0, 3))
        for _ in range(40):
            cand = rng.uniform(-r, r, size=(4 * n, 3))
            for _ in range(12):
                d = self._distance(cand)
                g = np.zeros_like(cand)
                for ax in range(3):
                    dp = np.zeros(3)
                    dp[ax] = 1e-5
                    g[:, ax] = (self._distance(cand + dp) - self._distance(cand - dp)) / 2e-5
                norm = np.linalg.norm(g, axis=1, keepdims=True)
                norm[norm < 1e-12] = 1.0
                cand = cand - d[:, None] * g / norm
            keep = np.abs(self._distance(cand)) < 1e-6
            posed = self.pose.apply(cand[keep])
            if min_z is not None:
                posed = posed[posed[:, 2] >= min_z]
            pts = np.vstack([pts, posed])
            if len(pts) >= n:
                break
        if len(pts) == 0:
            raise ValueError("surface sampling produced no points")
        return pts[:n]


class Sphere(SdfShape):
    def __init__(self, radius, pose=None):
        super().__init__(pose)
        self.radius = float(radius)

    def _distance(self, p):
        return np.linalg.norm(p, axis=1) - self.radius

    def _local_radius(self):
        return self.radius


class Box(SdfShape):
    def __init__(self, half_extents, pose=None):
        super().__init__(pose)
        self.half_extents = np.asarray(half_extents, dtype=np.float64)

    def _distance(self, p):
        q = np.abs(p) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + inside

    def _local_radius(self):
        return float(np.linalg.norm(self.half_extents))


class Cylinder(SdfShape):
    """Capped cylinder along local z."""

    def __init__(self, radius, half_height, pose=None):
        super().__init__(pose)
        self.radius = float(radius)
        self.half_height = float(half_height)

    def _distance(self, p):
        dr = np.hypot(p[:, 0], p[:, 1]) - self.radius
        dz = np.abs(p[:, 2]) - self.half_height
        outside = np.hypot(np.maximum(dr, 0.0), np.maximum(dz, 0.0))
        inside = np.minimum(np.maximum(dr, dz), 0.0)
        return outside + inside

    def _local_radius(self):
        return float(np.hypot(self.radius, self.half_height))


class Capsule(SdfShape):
    """Capsule along local z, segment from -half_length to +half_length."""

    def __init__(self, radius, half_length, pose=None):
        super().__init__(pose)
        self.radius = float(radius)
        self.half_length = float(half_length)

    def _distance(self, p):
        q = p.copy()
        q[:, 2] -= np.clip(q[:, 2], -self.half_length, self.half_length)
        return np.linalg.norm(q, axis=1) - self.radius

    def _local_radius(self):
        return self.half_length + self.radius


class HalfSpace(SdfShape):
    """Points with normal . p <= offset are inside. Unbounded."""

    def __init__(self, normal, offset=0.0, pose=None):
        super().__init__(pose)
        n = np.asarray(normal, dtype=np.float64)
        self.normal = n / np.linalg.norm(n)
        self.offset = float(offset)

    def _distance(self, p):
        return p @ self.normal - self.offset

    def _local_radius(self):
        return np.inf


class Union(SdfShape):
    def __init__(self, shapes, pose=None):
        super().__init__(pose)
        self.shapes = list(shapes)

    def _distance(self, p):
        return np.min([s.evaluate(p) for s in self.shapes], axis=0)

    def _local_radius(self):
        return max(s.bounding_radius() for s in self.shapes)


class Intersection(SdfShape):
    def __init__(self, shapes, pose=None):
        super().__init__(pose)
        self.shapes = list(shapes)

    def _distance(self, p):
        return np.max([s.evaluate(p) for s in self.shapes], axis=0)

    def _local_radius(self):
        return min(s.bounding_radius() for s in self.shapes)


class Posed(SdfShape):
    """An existing shape re-expressed under an additional pose."""

    def __init__(self, shape, pose):
        super().__init__(pose)
        self.shape = shape

    def _distance(self, p):
        return self.shape.evaluate(p)

    def _local_radius(self):
        return self.shape.bounding_radius()


class SmoothUnion(SdfShape):
    """Polynomial smooth-min blend with smoothing width k (mm)."""

    def __init__(self, shapes, k=1.0, pose=None):
        super().__init__(pose)
        self.shapes = list(shapes)
        self.k = float(k)

    def _distance(self, p):
        d = self.shapes[0].evaluate(p)
        for s in self.shapes[1:]:
            b = s.evaluate(p)
            h = np.clip(0.5 + 0.5 * (b - d) / self.k, 0.0, 1.0)
            d = b * (1.0 - h) + d * h - self.k * h * (1.0 - h)
        return d

    def _local_radius(self):
        return max(s.bounding_radius() for s in self.shapes)
