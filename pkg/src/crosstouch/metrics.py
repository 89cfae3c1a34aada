"""Evaluation: PSNR/SSIM image metrics, point-to-point ICP with an SVD
rigid fit, pose errors, and the translation benchmark harness."""

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .geometry import PointCloud, RigidTransform, back_project

log = logging.getLogger(__name__)

BRUTE_FORCE_LIMIT = 512


def psnr(a, b, peak=2.0):
    """10 log10(peak^2 / MSE); returns +inf when the images are identical."""
    a = np.asarray(a.values if hasattr(a, "values") else a, dtype=np.float64)
    b = np.asarray(b.values if hasattr(b, "values") else b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_kernel1d(window, sigma):
    r = np.arange(window) - (window - 1) / 2.0
    k = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return k / k.sum()


def _local_mean(img, kernel):
    tmp = ndimage.correlate1d(img, kernel, axis=0, mode="constant")
    return ndimage.correlate1d(tmp, kernel, axis=1, mode="constant")


def ssim(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03, peak=2.0):
    """Mean local SSIM with a Gaussian window; channels are averaged."""
    a = np.asarray(a.values if hasattr(a, "values") else a, dtype=np.float64)
    b = np.asarray(b.values if hasattr(b, "values") else b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if min(a.shape[1], a.shape[2]) < window:
        raise ValueError(f"images must be at least {window} pixels per side")
    kern = _gaussian_kernel1d(window, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    half = window // 2
    vals = []
    for ca, cb in zip(a, b):
        mu_a = _local_mean(ca, kern)
        mu_b = _local_mean(cb, kern)
        saa = _local_mean(ca * ca, kern) - mu_a * mu_a
        sbb = _local_mean(cb * cb, kern) - mu_b * mu_b
        sab = _local_mean(ca * cb, kern) - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
        den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
        smap = num / den
        vals.append(smap[half:-half, half:-half].mean())  # valid region only
    return float(np.mean(vals))


def depth_to_cloud(depth, mask):
    return back_project(depth, mask)


def _nearest(src, target, tree):
    if tree is not None:
        dist, idx = tree.query(src, k=1)
        return dist, idx
    # brute force below the k-d tree cutoff; doubles as the oracle path
    d2 = ((src[:, None, :] - target[None, :, :]) ** 2).sum(axis=2)
    idx = d2.argmin(axis=1)
    return np.sqrt(d2[np.arange(len(src)), idx]), idx


def _fit_rigid(src, dst):
    """Closed-form least-squares rigid transform src -> dst (Kabsch).

    Rank-2 (planar) covariances are fine: the determinant correction pins
    the remaining axis. Rank deficiency below 2 (line or point clouds)
    leaves the rotation genuinely ambiguous and is flagged.
    """
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    sv = np.linalg.svd(h)
    u, vt = sv[0], sv[2]
    smax = sv[1].max()
    if smax <= 0 or (sv[1] > 1e-9 * smax).sum() < 2:
        raise ValueError("degenerate geometry: correspondence covariance rank < 2")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(r, cd - r @ cs)


def icp(source, target, init=None, max_iter=100, tol=1e-10):
    """Point-to-point ICP returning (target-from-source transform, RMS residual).

    Nearest neighbours from a k-d tree (exact), switching to brute force for
    small targets; the RMS residual is asserted non-increasing.
    """
    src0 = source.points if isinstance(source, PointCloud) else np.asarray(source, dtype=np.float64)
    dst = target.points if isinstance(target, PointCloud) else np.asarray(target, dtype=np.float64)
    if len(src0) == 0 or len(dst) == 0:
        raise ValueError("icp requires non-empty clouds")
    tree = cKDTree(dst) if len(dst) >= BRUTE_FORCE_LIMIT else None
    t = init or RigidTransform.identity()
    src = t.apply(src0)
    prev = None
    residual = None
    for _ in range(max_iter):
        dist, idx = _nearest(src, dst, tree)
        residual = float(np.sqrt((dist**2).mean()))
        assert prev is None or residual <= prev + 1e-9, "ICP residual increased"
        if prev is not None and prev - residual < tol:
            break
        prev = residual
        step = _fit_rigid(src, dst[idx])
        t = RigidTransform(step.rotation @ t.rotation, step.rotation @ t.translation + step.translation)
        src = t.apply(src0)
    return t, residual


@dataclass
class PoseError:
    translation_mm: float
    angle_deg: float

    def __post_init__(self):
        if self.translation_mm < 0 or self.angle_deg < 0:
            raise ValueError("pose errors are non-negative")


def pose_error(estimate, truth):
    """Translation error ||t_e - t_t||; angular error = geodesic angle of
    R_e R_t^T in degrees."""
    dt = float(np.linalg.norm(estimate.translation - truth.translation))
    r = estimate.rotation @ truth.rotation.T
    cos = (np.trace(r) - 1.0) / 2.0
    ang = float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))
    return PoseError(dt, ang)


@dataclass
class SampleRecord:
    sample_id: str
    indenter_id: str
    psnr_db: float
    ssim: float
    translation_mm: float
    angle_deg: float


@dataclass
class MetricReport:
    transfer: str
    model: str
    records: list = field(default_factory=list)
    skipped: int = 0

    def _agg(self, key):
        vals = np.array([getattr(r, key) for r in self.records], dtype=np.float64)
        vals = vals[~np.isnan(vals)]  # pose entries are NaN where no reference exists
        if len(vals) == 0:
            return math.nan, math.nan
        if np.isinf(vals).any():
            return math.inf, math.nan
        return float(vals.mean()), float(vals.std())

    def summary(self):
        out = {"transfer": self.transfer, "model": self.model, "count": len(self.records),
               "skipped": self.skipped}
        for key in ("psnr_db", "ssim", "translation_mm", "angle_deg"):
            mean, std = self._agg(key)
            out[key] = {"mean": mean, "std": std}
        return out

    def to_json(self):
        return json.dumps(
            {
                "summary": self.summary(),
                "records": [vars(r) for r in self.records],
            },
            sort_keys=True,
            indent=1,
        )


def estimate_pose(observed_cloud, reference_cloud, init=None):
    """Indenter pose from an observed contact cloud in the alignment frame.

    The partial observation registers onto the full model cloud (every
    observed point has a true counterpart); the inverse of that alignment
    is the indenter pose."""
    t, residual = icp(observed_cloud, reference_cloud, init=init)
    return t.inverse(), residual


def evaluate_translation(test_pairs, translator, reference_clouds, image_to_cloud, peak=2.0):
    """Run a translator over test pairs and report image + pose metrics.

    test_pairs: iterable of dicts with keys source (CxHxW), target (CxHxW),
        pose (RigidTransform), indenter_id, sample_id.
    translator: source image -> generated target image (CxHxW in [-1,1]).
    reference_clouds: indenter_id -> model PointCloud (indenter-local frame).
        Pose errors are computed only for indenters present here (shapes with
        a continuous symmetry have no observable pose and carry NaN).
    image_to_cloud: generated target image -> PointCloud in the alignment
        frame (the sensor-specific conversion chain).
    """
    records = []
    skipped = 0
    for pair in test_pairs:
        try:
            gen = translator(pair["source"])
            p = psnr(gen, pair["target"], peak=peak)
            s = ssim(gen, pair["target"], peak=peak)
            trans_err = ang_err = math.nan
            if pair["indenter_id"] in reference_clouds:
                cloud = image_to_cloud(gen)
                est, _ = estimate_pose(cloud, reference_clouds[pair["indenter_id"]])
                err = pose_error(est, pair["pose"])
                trans_err, ang_err = err.translation_mm, err.angle_deg
            records.append(
                SampleRecord(
                    sample_id=pair["sample_id"],
                    indenter_id=pair["indenter_id"],
                    psnr_db=p,
                    ssim=s,
                    translation_mm=trans_err,
                    angle_deg=ang_err,
                )
            )
        except (ValueError, AssertionError) as e:
            log.warning("sample %s skipped: %s", pair.get("sample_id"), e)
            skipped += 1
    report = MetricReport(transfer="", model="", records=records, skipped=skipped)
    return report


TABLE_COLUMNS = ("Transfer", "Model", "PSNR", "SSIM", "Trans.", "Theta")


def format_table(reports):
    """Aligned plain-text table, one row per report: mean +/- std columns."""
    rows = [TABLE_COLUMNS]
    for rep in reports:
        s = rep.summary()

        def ms(key, digits=2):
            m, sd = s[key]["mean"], s[key]["std"]
            if math.isinf(m):
                return "inf"
            if math.isnan(m):
                return "-"
            return f"{m:.{digits}f} +- {sd:.{digits}f}"

        rows.append((rep.transfer, rep.model, ms("psnr_db"), ms("ssim"), ms("translation_mm"), ms("angle_deg")))
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(TABLE_COLUMNS))]
    lines = []
    for i, row in enumerate(rows):
        lines.append(" | ".join(str(c).ljust(w) for c, w in zip(row, widths)))
        if i == 0:
            lines.append("-+-".join("-" * w for w in widths))
    return "\n".join(lines)
