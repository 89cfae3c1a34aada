"""Synthetic paired tactile data: parameterized sensors pressed by SDF
indenters, rendered to (tactile image, depth map, contact mask, pose).

Sensor frame: camera at the origin looking along +z, undeformed membrane
plane at z = gel_plane_z. The alignment frame sits at the membrane center
with z pointing back into the sensor; paired samples share one indenter
pose expressed in that frame.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import sdf
from .geometry import (
    CameraIntrinsics,
    ContactMask,
    DepthMap,
    RigidTransform,
    compose,
    rotation_about,
)


@dataclass
class TactileImage:
    """C x H x W image in [-1, 1]; 1 channel for depth-style sensors, 3 for gel RGB."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3 or self.values.shape[0] not in (1, 3):
            raise ValueError(f"tactile image must be (1|3, H, W), got {self.values.shape}")
        if self.values.min() < -1.0 - 1e-6 or self.values.max() > 1.0 + 1e-6:
            raise ValueError("tactile values must lie in [-1, 1]")

    @property
    def channels(self):
        return self.values.shape[0]


@dataclass
class SensorSpec:
    name: str
    intrinsics: CameraIntrinsics
    t_sensor_to_align: RigidTransform
    membrane: sdf.SdfShape
    gel_plane_z: float
    max_indent: float
    resolution_ppmm: float
    render_style: str  # "bubble-depth" | "gel-rgb"
    channels: int
    noise_sigma: float = 0.01
    blur_sigma: float = 1.0
    contact_eps: float = 0.01
    light_azimuth_offset_deg: float = 0.0
    ambient: float = 0.25

    def __post_init__(self):
        if self.resolution_ppmm <= 0 or self.max_indent <= 0:
            raise ValueError("resolution_ppmm and max_indent must be positive")
        expected = {"bubble-depth": 1, "gel-rgb": 3}.get(self.render_style)
        if expected is None:
            raise ValueError(f"unknown render style {self.render_style!r}")
        if self.channels != expected:
            raise ValueError(
                f"{self.render_style} renders {expected} channel(s), spec says {self.channels}"
            )

    @property
    def depth_min(self):
        return self.gel_plane_z - self.max_indent

    @property
    def depth_max(self):
        return self.gel_plane_z


@dataclass
class GridSpec:
    extent_x_mm: float = 10.0
    extent_y_mm: float = 10.0
    max_tilt_deg: float = 45.0
    samples_per_indenter: int = 60
    press_min_mm: float = 0.5
    press_max_mm: float = 2.5


@dataclass
class IndenterSet:
    shapes: list  # [(name, SdfShape)]
    grid: GridSpec = field(default_factory=GridSpec)

    def __post_init__(self):
        if not self.shapes:
            raise ValueError("indenter set is empty")
        for name, shape in self.shapes:
            if not np.isfinite(shape.bounding_radius()):
                raise ValueError(f"indenter {name!r} is unbounded")


@dataclass
class TouchSample:
    tactile: TactileImage
    depth: DepthMap
    mask: ContactMask
    indenter_id: str
    pose: RigidTransform  # indenter -> alignment frame
    sensor_name: str
    seed: int


def make_sensor(
    name,
    image_size=64,
    resolution_ppmm=2.36,
    gel_plane_z=60.0,
    max_indent=4.0,
    render_style="bubble-depth",
    rotate_180=False,
    **kwargs,
):
    """Build a consistent SensorSpec: fx = ppmm * gel_plane_z so the stated
    pixels-per-mm holds on the membrane plane."""
    f = resolution_ppmm * gel_plane_z
    intr = CameraIntrinsics(
        fx=f, fy=f, cx=image_size / 2.0, cy=image_size / 2.0, width=image_size, height=image_size
    )
    r = np.diag([1.0, -1.0, -1.0])
    if rotate_180:
        # the paired-rig convention: one sensor's image is rotated 180 degrees
        # for grasp-frame alignment, carried here as a z-rotation in the pose
        r = rotation_about((0, 0, 1), 180.0) @ r
    t_s_to_a = RigidTransform(r, r @ np.array([0.0, 0.0, -gel_plane_z]))
    half_w = image_size / (2.0 * resolution_ppmm)
    slab_h = max_indent + 0.5
    membrane = sdf.Box(
        (half_w, half_w, slab_h / 2.0),
        pose=RigidTransform(np.eye(3), (0.0, 0.0, gel_plane_z - slab_h / 2.0)),
    )
    channels = 1 if render_style == "bubble-depth" else 3
    return SensorSpec(
        name=name,
        intrinsics=intr,
        t_sensor_to_align=t_s_to_a,
        membrane=membrane,
        gel_plane_z=gel_plane_z,
        max_indent=max_indent,
        resolution_ppmm=resolution_ppmm,
        render_style=render_style,
        channels=channels,
        **kwargs,
    )


def bubble_like(image_size=64):
    return make_sensor(
        "bubble-like",
        image_size=image_size,
        resolution_ppmm=2.36,
        gel_plane_z=60.0,
        max_indent=4.0,
        render_style="bubble-depth",
    )


def gelslim_like(image_size=64):
    return make_sensor(
        "gelslim-like",
        image_size=image_size,
        resolution_ppmm=23.72,
        gel_plane_z=10.0,
        max_indent=1.5,
        render_style="gel-rgb",
        rotate_180=True,
    )


def gelslim_desk(image_size=64):
    """Desk-scale GelSlim stand-in: the native 23.72 px/mm pad covers only
    2.7 mm at 64 px, too little overlap with a bubble view for training, so
    the benchmark variant keeps the finer-but-smaller character at 5.93 px/mm."""
    return make_sensor(
        "gelslim-desk",
        image_size=image_size,
        resolution_ppmm=5.93,
        gel_plane_z=10.0,
        max_indent=1.5,
        render_style="gel-rgb",
        rotate_180=True,
    )


def digit_like(image_size=64):
    return make_sensor(
        "digit-like",
        image_size=image_size,
        resolution_ppmm=10.0,
        gel_plane_z=12.0,
        max_indent=1.2,
        render_style="gel-rgb",
        light_azimuth_offset_deg=60.0,
        ambient=0.35,
    )


def sensor_by_name(name, image_size=64):
    table = {
        "bubble-like": bubble_like,
        "gelslim-like": gelslim_like,
        "gelslim-desk": gelslim_desk,
        "digit-like": digit_like,
    }
    if name not in table:
        raise ValueError(f"unknown sensor {name!r}; known: {sorted(table)}")
    return table[name](image_size=image_size)


def _at(x=0.0, y=0.0, z=0.0, rot=None):
    return RigidTransform(np.eye(3) if rot is None else rot, (x, y, z))


def default_indenters(scale=1.0, grid=None):
    """12 indenters spanning flat, curved, and angled profiles. Each shape's
    contact apex sits at its local origin with the body extending toward -z."""
    s = scale
    shapes = [
        ("sphere-small", sdf.Sphere(3.0 * s, pose=_at(z=-3.0 * s))),
        ("sphere-large", sdf.Sphere(7.0 * s, pose=_at(z=-7.0 * s))),
        ("flat-square", sdf.Box((5.0 * s, 5.0 * s, 4.0 * s), pose=_at(z=-4.0 * s))),
        ("flat-bar", sdf.Box((7.0 * s, 2.0 * s, 4.0 * s), pose=_at(z=-4.0 * s))),
        ("cylinder-flat", sdf.Cylinder(4.0 * s, 4.0 * s, pose=_at(z=-4.0 * s))),
        (
            "cylinder-side",
            sdf.Cylinder(
                2.5 * s, 6.0 * s, pose=RigidTransform(rotation_about((0, 1, 0), 90.0), (0, 0, -2.5 * s))
            ),
        ),
        (
            "capsule-side",
            sdf.Capsule(
                2.0 * s, 5.0 * s, pose=RigidTransform(rotation_about((1, 0, 0), 90.0), (0, 0, -2.0 * s))
            ),
        ),
        (
            "wedge",
            sdf.Box(
                (4.0 * s, 4.0 * s, 4.0 * s),
                pose=RigidTransform(rotation_about((1, 0, 0), 45.0), (0, 0, -4.0 * np.sqrt(2.0) * s)),
            ),
        ),
        (
            "cross",
            sdf.Union(
                [
                    sdf.Box((6.0 * s, 1.6 * s, 3.0 * s)),
                    sdf.Box((1.6 * s, 6.0 * s, 3.0 * s)),
                ],
                pose=_at(z=-3.0 * s),
            ),
        ),
        (
            "ell",
            sdf.Union(
                [
                    sdf.Box((5.0 * s, 1.8 * s, 3.0 * s), pose=_at(y=-2.5 * s)),
                    sdf.Box((1.8 * s, 4.0 * s, 3.0 * s), pose=_at(x=-3.2 * s, y=2.0 * s)),
                ],
                pose=_at(z=-3.0 * s),
            ),
        ),
        (
            "three-dots",
            sdf.Union(
                [
                    sdf.Sphere(1.8 * s, pose=_at(x=-3.5 * s, y=-2.0 * s)),
                    sdf.Sphere(1.8 * s, pose=_at(x=3.5 * s, y=-2.0 * s)),
                    sdf.Sphere(1.8 * s, pose=_at(y=4.0 * s)),
                ],
                pose=_at(z=-1.8 * s),
            ),
        ),
        (
            "blob",
            sdf.SmoothUnion(
                [
                    sdf.Sphere(3.0 * s, pose=_at(x=-2.0 * s)),
                    sdf.Sphere(2.2 * s, pose=_at(x=2.5 * s, y=1.0 * s)),
                ],
                k=1.5 * s,
                pose=_at(z=-3.2 * s),
            ),
        ),
    ]
    return IndenterSet(shapes, grid or GridSpec())


def unseen_indenters(scale=1.0, grid=None):
    """Held-out tools with geometry distinct from the training set."""
    s = scale
    shapes = [
        (
            "tee",
            sdf.Union(
                [
                    sdf.Box((6.0 * s, 1.5 * s, 3.0 * s), pose=_at(y=3.0 * s)),
                    sdf.Box((1.5 * s, 4.5 * s, 3.0 * s), pose=_at(y=-2.0 * s)),
                ],
                pose=_at(z=-3.0 * s),
            ),
        ),
        (
            # two unequal flat pads at different heights: asymmetric footprint
            "step",
            sdf.Union(
                [
                    sdf.Box((3.0 * s, 2.2 * s, 3.0 * s), pose=_at(x=-2.5 * s)),
                    sdf.Box((2.0 * s, 1.4 * s, 3.0 * s), pose=_at(x=3.2 * s, y=1.5 * s, z=-0.8 * s)),
                ],
                pose=_at(z=-3.0 * s),
            ),
        ),
        (
            "notch-bar",
            sdf.Union(
                [
                    sdf.Box((6.5 * s, 2.2 * s, 2.5 * s)),
                    sdf.Box((1.4 * s, 1.4 * s, 1.2 * s), pose=_at(x=3.0 * s, y=2.8 * s, z=-1.0 * s)),
                ],
                pose=_at(z=-2.5 * s),
            ),
        ),
    ]
    return IndenterSet(shapes, grid or GridSpec())


def render_contact_depth(spec, indenter, pose):
    """Sphere-trace the posed indenter along each pixel ray, then imprint it
    into the membrane plane with penetration clamped to max_indent.

    pose places the indenter in the alignment frame; depth is returned in
    the sensor camera frame.
    """
    if not np.isfinite(indenter.bounding_radius()):
        raise ValueError("indenter SDF is unbounded")
    k = spec.intrinsics
    t_i_to_cam = compose(spec.t_sensor_to_align.inverse(), pose)
    shape = sdf.Posed(indenter, t_i_to_cam)

    u, v = np.meshgrid(np.arange(k.width), np.arange(k.height))
    dirs = np.stack(
        [(u.ravel() - k.cx) / k.fx, (v.ravel() - k.cy) / k.fy, np.ones(u.size)], axis=1
    )
    dir_norm = np.linalg.norm(dirs, axis=1)

    z_limit = spec.gel_plane_z + 0.25
    z = np.zeros(u.size)
    active = np.ones(u.size, dtype=bool)
    hit = np.zeros(u.size, dtype=bool)
    for _ in range(96):
        if not active.any():
            break
        p = dirs[active] * z[active, None]
        d = shape.evaluate(p)
        converged = d < 1e-4
        idx = np.nonzero(active)[0]
        hit[idx[converged]] = True
        z[idx] += np.maximum(d, 0.0) / dir_norm[idx]
        still = ~converged & (z[idx] <= z_limit)
        active[idx] = still

    z_hit = np.where(hit, z, np.inf).reshape(k.height, k.width)
    penetration = np.clip(spec.gel_plane_z - z_hit, 0.0, spec.max_indent)
    penetration[~np.isfinite(z_hit)] = 0.0

    if spec.blur_sigma > 0:
        blurred = ndimage.gaussian_filter(penetration, spec.blur_sigma)
        # compliance smoothing stays confined to the true imprint so the
        # mask/depth invariant (contact <=> depth below the rest plane) holds
        penetration = np.where(penetration > 0, blurred, 0.0)
    mask = penetration > spec.contact_eps
    penetration[~mask] = 0.0

    depth = spec.gel_plane_z - penetration
    return DepthMap(depth, k), ContactMask(mask.astype(np.uint8))


_DOT_SPACING = 8
_DOT_RADIUS = 1.2
_DOT_GAIN = 0.35


def _marker_dots(h, w):
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    cy = (yy - _DOT_SPACING // 2) % _DOT_SPACING - _DOT_SPACING // 2
    cx = (xx - _DOT_SPACING // 2) % _DOT_SPACING - _DOT_SPACING // 2
    return (cy * cy + cx * cx) <= _DOT_RADIUS * _DOT_RADIUS


def render_tactile(spec, depth, mask, seed=0):
    """Depth/mask -> sensor image in [-1, 1]; deterministic for a given seed."""
    if depth.values.shape != (spec.intrinsics.height, spec.intrinsics.width):
        raise ValueError("depth shape does not match the sensor spec")
    rng = np.random.default_rng(seed)
    if spec.render_style == "bubble-depth":
        # depth normalized so -1 is the deepest press and +1 the resting
        # membrane; the generation post-processing inverts this exact map
        v = 2.0 * (depth.values - spec.depth_min) / spec.max_indent - 1.0
        img = v[None, :, :]
    else:
        gy, gx = np.gradient(depth.values)
        mag = np.hypot(gx, gy)
        theta = np.arctan2(gy, gx)
        sat = mag / (mag + 0.08)  # saturating gradient response
        img = np.empty((3, *depth.values.shape))
        for c, az in enumerate((0.0, 120.0, 240.0)):
            a = np.deg2rad(az + spec.light_azimuth_offset_deg)
            lambert = np.maximum(0.0, np.cos(theta - a))
            shade = spec.ambient + (1.0 - spec.ambient) * lambert * sat
            img[c] = shade
        img[:, _marker_dots(*depth.values.shape)] *= _DOT_GAIN
        img = 2.0 * np.clip(img, 0.0, 1.0) - 1.0
    if spec.noise_sigma > 0:
        img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape)
    return TactileImage(np.clip(img, -1.0, 1.0).astype(np.float32))


def undeformed_reference(spec):
    """Noise-free rendering of the resting membrane (used for difference images)."""
    from dataclasses import replace

    quiet = replace(spec, noise_sigma=0.0)
    k = spec.intrinsics
    depth = DepthMap(np.full((k.height, k.width), spec.gel_plane_z), k)
    mask = ContactMask(np.zeros((k.height, k.width), dtype=np.uint8))
    return render_tactile(quiet, depth, mask, seed=0)


def sample_pose(grid, rng):
    """Uniform pose from the sampling grid: translation within the extent,
    tilt about a random horizontal axis and spin about z, press depth from
    the configured range."""
    tx = rng.uniform(-grid.extent_x_mm / 2, grid.extent_x_mm / 2)
    ty = rng.uniform(-grid.extent_y_mm / 2, grid.extent_y_mm / 2)
    press = rng.uniform(grid.press_min_mm, grid.press_max_mm)
    az = rng.uniform(0.0, 2 * np.pi)
    tilt = rng.uniform(0.0, grid.max_tilt_deg)
    spin = rng.uniform(-grid.max_tilt_deg, grid.max_tilt_deg)
    r = rotation_about((0, 0, 1), spin) @ rotation_about((np.cos(az), np.sin(az), 0.0), tilt)
    return RigidTransform(r, (tx, ty, press))


def generate_dataset(spec_src, spec_dst, indenters, seed=0):
    """Paired samples: for every indenter and grid draw, render both sensors
    at the identical alignment-frame pose. Per-sample seeds are seed ^ index,
    so generation is order-independent and reproducible."""
    pairs = []
    index = 0
    for name, shape in indenters.shapes:
        for _ in range(indenters.grid.samples_per_indenter):
            sample_seed = seed ^ index
            rng = np.random.default_rng(sample_seed)
            pose = sample_pose(indenters.grid, rng)
            sample_pair = []
            for spec in (spec_src, spec_dst):
                d, m = render_contact_depth(spec, shape, pose)
                img = render_tactile(spec, d, m, seed=sample_seed)
                sample_pair.append(
                    TouchSample(
                        tactile=img,
                        depth=d,
                        mask=m,
                        indenter_id=name,
                        pose=pose,
                        sensor_name=spec.name,
                        seed=sample_seed,
                    )
                )
            pairs.append(tuple(sample_pair))
            index += 1
    return pairs
