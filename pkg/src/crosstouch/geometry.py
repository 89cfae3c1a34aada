"""Pinhole/SE(3) geometry and depth adaptation.

Depth adaptation converts a source-sensor depth map into the equivalent
target-sensor depth map and contact mask: back-project masked pixels,
transform source->alignment->target, re-project into the target camera,
and test target membrane membership with its sensing-volume SDF.

All units are mm; depth value 0 is the reserved "no measurement" sentinel.
"""

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self):
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if np.abs(r.T @ r - np.eye(3)).max() > ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation determinant must be +1")

    @staticmethod
    def identity():
        return RigidTransform(np.eye(3), np.zeros(3))

    def inverse(self):
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def is_valid(self, tol=ORTHO_TOL):
        r = self.rotation
        return (
            np.abs(r.T @ r - np.eye(3)).max() <= tol
            and abs(np.linalg.det(r) - 1.0) <= tol
        )


def compose(a, b):
    """Transform equal to applying b first, then a."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def rotation_about(axis, angle_deg):
    """Rotation matrix about a (3,) axis by angle in degrees (Rodrigues)."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    th = np.deg2rad(angle_deg)
    kx, ky, kz = axis
    k = np.array([[0, -kz, ky], [kz, 0, -kx], [-ky, kx, 0]])
    return np.eye(3) + np.sin(th) * k + (1 - np.cos(th)) * (k @ k)


def quat_from_rotation(r):
    """Unit quaternion (w, x, y, z) from a rotation matrix."""
    tr = np.trace(r)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array(
            [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        )
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
        q = np.array(
            [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        )
    elif r[1, 1] > r[2, 2]:
        s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
        q = np.array(
            [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
        q = np.array(
            [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
        )
    return q / np.linalg.norm(q)


def rotation_from_quat(q):
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass
class DepthMap:
    """H x W metric depth in mm along camera +z; 0 marks missing pixels."""

    values: np.ndarray
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        h, w = self.values.shape
        if (h, w) != (self.intrinsics.height, self.intrinsics.width):
            raise ValueError(
                f"depth shape {self.values.shape} does not match intrinsics "
                f"{(self.intrinsics.height, self.intrinsics.width)}"
            )
        if (self.values < 0).any():
            raise ValueError("depth values must be >= 0")


@dataclass
class ContactMask:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if not np.isin(self.values, (0, 1)).all():
            raise ValueError("mask values must be 0 or 1")
        self.values = self.values.astype(np.uint8)


@dataclass
class PointCloud:
    """N x 3 points in mm, tagged with the frame they are expressed in."""

    points: np.ndarray
    frame: str = "sensor"
    dropped: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(self.points).all():
            raise ValueError("point cloud contains non-finite coordinates")

    def __len__(self):
        return self.points.shape[0]


def back_project(depth, mask):
    """One 3D point per masked pixel: p = D(u,v) * K^-1 (u, v, 1)^T.

    Row-major order over the masked set; masked pixels with depth 0 are
    omitted and tallied on the returned cloud.
    """
    if depth.values.shape != mask.values.shape:
        raise ValueError(
            f"depth shape {depth.values.shape} != mask shape {mask.values.shape}"
        )
    k = depth.intrinsics
    vv, uu = np.nonzero(mask.values)
    d = depth.values[vv, uu]
    good = d > 0
    dropped = int((~good).sum())
    if dropped:
        log.warning("back_project: %d masked pixels had no depth measurement", dropped)
    u, v, d = uu[good], vv[good], d[good]
    pts = np.stack([(u - k.cx) / k.fx * d, (v - k.cy) / k.fy * d, d], axis=1)
    return PointCloud(pts, dropped=dropped)


def transform_cloud(cloud, t):
    return PointCloud(t.apply(cloud.points), frame=cloud.frame, dropped=cloud.dropped)


def project_cloud(cloud, k):
    """Splat points onto the target pixel grid; nearest pixel, smallest Z wins.

    Out-of-bounds and Z <= 0 points are dropped (tallied via the logger).
    """
    depth = np.zeros((k.height, k.width), dtype=np.float64)
    pts = cloud.points
    if len(pts) == 0:
        return DepthMap(depth, k)
    z = pts[:, 2]
    front = z > 0
    u = np.full(len(pts), -1.0)
    v = np.full(len(pts), -1.0)
    u[front] = np.round(k.fx * pts[front, 0] / z[front] + k.cx)
    v[front] = np.round(k.fy * pts[front, 1] / z[front] + k.cy)
    inside = front & (u >= 0) & (u < k.width) & (v >= 0) & (v < k.height)
    dropped = int((~inside).sum())
    if dropped:
        log.debug("project_cloud: %d points outside the target frustum", dropped)
    u, v, z = u[inside].astype(int), v[inside].astype(int), z[inside]
    # closest surface wins on collisions: process in decreasing Z so the
    # smallest depth is written last
    order = np.argsort(-z, kind="stable")
    depth[v[order], u[order]] = z[order]
    return DepthMap(depth, k)


def contact_mask_from_sdf(cloud, membrane, k):
    """Mask = 1 at pixels receiving a projected point inside the membrane
    sensing volume (SDF <= 0)."""
    mask = np.zeros((k.height, k.width), dtype=np.uint8)
    pts = cloud.points
    if len(pts) == 0:
        return ContactMask(mask)
    sd = membrane.evaluate(pts)
    z = pts[:, 2]
    keep = (sd <= 0) & (z > 0)
    pts = pts[keep]
    if len(pts) == 0:
        return ContactMask(mask)
    u = np.round(k.fx * pts[:, 0] / pts[:, 2] + k.cx)
    v = np.round(k.fy * pts[:, 1] / pts[:, 2] + k.cy)
    inside = (u >= 0) & (u < k.width) & (v >= 0) & (v < k.height)
    mask[v[inside].astype(int), u[inside].astype(int)] = 1
    return ContactMask(mask)


def adapt_depth(depth_s, mask_s, src, dst):
    """Source depth/mask -> (target depth, target mask) via the alignment frame.

    src/dst are SensorSpec-like objects exposing t_sensor_to_align,
    intrinsics, and membrane.
    """
    cloud_s = back_project(depth_s, mask_s)
    t_s_to_t = compose(dst.t_sensor_to_align.inverse(), src.t_sensor_to_align)
    cloud_t = transform_cloud(cloud_s, t_s_to_t)
    depth_t = project_cloud(cloud_t, dst.intrinsics)
    mask_t = contact_mask_from_sdf(cloud_t, dst.membrane, dst.intrinsics)
    if not depth_t.values.any():
        log.warning("adapt_depth: no source point landed in the target view")
    return depth_t, mask_t
