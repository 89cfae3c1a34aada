"""End-to-end orchestration: dataset synthesis into containers, training
data preparation for each model, the T2T / T2D2 / VQ-VAE translation paths,
and the evaluation harness that produces the metric reports."""

import logging
import math
import os

import numpy as np

from . import container, metrics
from .depthnet import DepthTrainConfig, predict_depth, train_depthnet
from .generative import (
    BubbleNormStats,
    DiffusionConfig,
    channel_average,
    renormalize,
    sample,
    tile_channels,
    to_depth_mm,
    train_denoiser,
)
from .geometry import ContactMask, DepthMap, adapt_depth, back_project, transform_cloud
from .metrics import evaluate_translation
from .sensorsim import (
    GridSpec,
    IndenterSet,
    default_indenters,
    generate_dataset,
    sensor_by_name,
    undeformed_reference,
    unseen_indenters,
)
from .vqvae import VqVaeConfig, train_vqvae

log = logging.getLogger(__name__)

GRASP_SEED_OFFSET = 10_000
TOOL_SEED_OFFSET = 20_000


def build_sensors(cfg):
    return (
        sensor_by_name(cfg.sensors.src, image_size=cfg.image_size),
        sensor_by_name(cfg.sensors.dst, image_size=cfg.image_size),
    )


def _grid(cfg, samples_per_indenter, max_tilt=None):
    d = cfg.dataset
    return GridSpec(
        extent_x_mm=d.extent_x_mm,
        extent_y_mm=d.extent_y_mm,
        max_tilt_deg=d.max_tilt_deg if max_tilt is None else max_tilt,
        samples_per_indenter=samples_per_indenter,
        press_min_mm=d.press_min_mm,
        press_max_mm=d.press_max_mm,
    )


def indenters_for(cfg, kind):
    """train: the 12-indenter training set; grasps: same shapes, new poses;
    tools: held-out shapes. Eval grids stay within the ICP basin tilt."""
    if kind == "train":
        grid = _grid(cfg, cfg.dataset.samples_per_indenter)
        full = default_indenters(grid=grid)
        return IndenterSet(full.shapes[: cfg.dataset.indenter_count], grid)
    if kind == "grasps":
        base = default_indenters()
        per = max(1, math.ceil(cfg.eval.grasp_samples / cfg.dataset.indenter_count))
        grid = _grid(cfg, per, max_tilt=min(cfg.dataset.max_tilt_deg, cfg.eval.max_tilt_deg))
        return IndenterSet(base.shapes[: cfg.dataset.indenter_count], grid)
    if kind == "tools":
        grid = _grid(
            cfg,
            cfg.eval.tool_samples_per_indenter,
            max_tilt=min(cfg.dataset.max_tilt_deg, cfg.eval.max_tilt_deg),
        )
        return IndenterSet(unseen_indenters().shapes, grid)
    raise ValueError(f"unknown dataset kind {kind!r}")


def seed_for(cfg, kind):
    return {
        "train": cfg.seed,
        "grasps": cfg.seed + GRASP_SEED_OFFSET,
        "tools": cfg.seed + TOOL_SEED_OFFSET,
    }[kind]


def generate_container(cfg, out_dir, kind="train"):
    """Render the paired dataset for `kind` and write it as a container.
    Returns (pairs written, samples per indenter)."""
    src_spec, dst_spec = build_sensors(cfg)
    ind = indenters_for(cfg, kind)
    pairs = generate_dataset(src_spec, dst_spec, ind, seed=seed_for(cfg, kind))
    meta = {
        "kind": kind,
        "seed": seed_for(cfg, kind),
        "image_size": cfg.image_size,
        "sensors": {"src": cfg.sensors.src, "dst": cfg.sensors.dst},
        "indenters": [name for name, _ in ind.shapes],
        "samples_per_indenter": ind.grid.samples_per_indenter,
    }
    with container.DatasetWriter(out_dir, meta=meta) as w:
        for i, (s, d) in enumerate(pairs):
            w.add_sample(f"{kind}-{i:05d}", s)
            w.add_sample(f"{kind}-{i:05d}", d)
    return len(pairs), ind.grid.samples_per_indenter


def load_pairs(data_dir, cfg):
    """Read a paired container back into (src TouchSamples, dst TouchSamples)."""
    src_spec, dst_spec = build_sensors(cfg)
    reader = container.DatasetReader(data_dir)
    by_sensor = {src_spec.name: [], dst_spec.name: []}
    for rec in reader.records:
        spec = src_spec if rec["sensor"] == src_spec.name else dst_spec
        by_sensor[rec["sensor"]].append(reader.sample(rec, spec.intrinsics))
    reader.close()
    src_list, dst_list = by_sensor[src_spec.name], by_sensor[dst_spec.name]
    if len(src_list) != len(dst_list):
        raise ValueError("container does not hold matched sensor pairs")
    return src_list, dst_list


def depth_cond_channels(depth_values, mask_values, spec):
    """Conditioning channels for depth-conditioned generation, in [-1, 1]:
    normalized penetration (0 where unmeasured) and the contact mask."""
    d = np.asarray(depth_values, dtype=np.float64)
    pen = np.where(d > 0, (spec.gel_plane_z - d) / spec.max_indent, 0.0)
    pen = np.clip(pen, 0.0, 1.0)
    m = np.asarray(mask_values, dtype=np.float64)
    return np.stack([2.0 * pen - 1.0, 2.0 * m - 1.0]).astype(np.float32)


def t2t_training_pairs(src_samples, dst_samples):
    return [
        (s.tactile.values, tile_channels(d.tactile))
        for s, d in zip(src_samples, dst_samples)
    ]


def d2t_training_pairs(dst_samples, dst_spec):
    """Depth-conditioned pairs from the target sensor alone (no paired touch)."""
    return [
        (depth_cond_channels(d.depth.values, d.mask.values, dst_spec), tile_channels(d.tactile))
        for d in dst_samples
    ]


def vq_training_pairs(src_samples, dst_samples, src_spec, dst_spec):
    """Difference-image pairs: (deformed - undeformed) / 2, in [-1, 1]."""
    src_ref = undeformed_reference(src_spec).values
    dst_ref = undeformed_reference(dst_spec).values
    return [
        ((s.tactile.values - src_ref) * 0.5, (d.tactile.values - dst_ref) * 0.5)
        for s, d in zip(src_samples, dst_samples)
    ]


def t2t_translate(model, sources, seed=1):
    """Batched T2T: source images -> 1-channel generated targets in [-1, 1]."""
    gen = sample(model, np.stack(sources), seed=seed)
    return [channel_average(g) for g in gen]


def t2d2_translate(depth_model, d2t_model, sources, src_spec, dst_spec, seed=1):
    """Full two-stage path, batched over the diffusion stage. Returns
    (1-channel generated targets, adapted depth maps, adapted masks)."""
    conds, adapted = [], []
    for src_img in sources:
        d_s, m_s = predict_depth(depth_model, src_img, src_spec.intrinsics)
        d_t, m_t = adapt_depth(d_s, m_s, src_spec, dst_spec)
        conds.append(depth_cond_channels(d_t.values, m_t.values, dst_spec))
        adapted.append((d_t, m_t))
    gen = sample(d2t_model, np.stack(conds), seed=seed)
    return [channel_average(g) for g in gen], adapted


def d2t_translate(d2t_model, depth_maps, masks, dst_spec, seed=1):
    """Stage-isolation mode: depth-conditioned generation from given depth
    maps (bypassing the depth estimator)."""
    conds = [
        depth_cond_channels(d.values if hasattr(d, "values") else d,
                            m.values if hasattr(m, "values") else m, dst_spec)
        for d, m in zip(depth_maps, masks)
    ]
    gen = sample(d2t_model, np.stack(conds), seed=seed)
    return [channel_average(g) for g in gen]


def vq_translate(model, sources, src_spec, dst_spec):
    src_ref = undeformed_reference(src_spec).values
    dst_ref = undeformed_reference(dst_spec).values
    diffs = np.stack([(s - src_ref) * 0.5 for s in sources])
    recon, _ = model.reconstruct(diffs)
    return [np.clip(r * 2.0 + dst_ref, -1.0, 1.0).astype(np.float32).squeeze() for r in recon]


def identity_stats(dst_spec, depth_min, depth_max):
    """Stats whose renormalization step is the identity (GT rows, baselines)."""
    return BubbleNormStats(
        depth_min=depth_min, depth_max=depth_max, gen_mean=0.0, gen_std=1.0, gt_mean=0.0, gt_std=1.0
    )


def stats_from_outputs(outputs, gt_images, depth_min, depth_max):
    """BubbleNormStats from precomputed 1-channel generated/GT images."""
    gen_mm = np.stack([to_depth_mm(np.asarray(o).squeeze(), depth_min, depth_max) for o in outputs])
    gt_mm = np.stack([to_depth_mm(np.asarray(g).squeeze(), depth_min, depth_max) for g in gt_images])
    return BubbleNormStats(
        depth_min=float(depth_min),
        depth_max=float(depth_max),
        gen_mean=float(gen_mm.mean()),
        gen_std=float(gen_mm.std()),
        gt_mean=float(gt_mm.mean()),
        gt_std=float(gt_mm.std()),
    )


def bubble_image_to_cloud(img_1ch, stats, dst_spec, contact_thresh_mm):
    """Generated bubble image -> metric contact cloud in the alignment frame.
    Contact pixels are those measurably below the resting membrane depth."""
    mm = renormalize(to_depth_mm(np.asarray(img_1ch).squeeze(), stats.depth_min, stats.depth_max), stats)
    mm = np.maximum(mm, 0.0)
    mask = (mm < stats.depth_max - contact_thresh_mm).astype(np.uint8)
    cloud = back_project(DepthMap(mm, dst_spec.intrinsics), ContactMask(mask))
    return transform_cloud(cloud, dst_spec.t_sensor_to_align)


# indenters whose pose is observable from a contact patch: shapes with a
# continuous symmetry (spheres, cylinders about their axis, the blob) are
# excluded from the pose metric because any rotation about the symmetry
# axis fits the observation equally well
POSE_OBSERVABLE = {
    "flat-square",
    "flat-bar",
    "cross",
    "ell",
    "three-dots",
    "tee",
    "step",
    "notch-bar",
}


def reference_clouds(indenter_set, cfg):
    """Model clouds for the pose metric: surface points on each
    pose-observable indenter's reachable tip region, indenter-local frame."""
    margin = cfg.dataset.press_max_mm + 1.0
    return {
        name: shape.surface_points(cfg.eval.reference_points, seed=7, min_z=-margin)
        for name, shape in indenter_set.shapes
        if name in POSE_OBSERVABLE
    }


def eval_pairs_from_samples(src_samples, dst_samples):
    """Evaluation records: raw source image, 1-channel GT target image, pose."""
    pairs = []
    for i, (s, d) in enumerate(zip(src_samples, dst_samples)):
        pairs.append(
            {
                "sample_id": f"{d.indenter_id}-{i:04d}",
                "indenter_id": d.indenter_id,
                "source": s.tactile.values,
                "target": d.tactile.values.squeeze(),
                "pose": s.pose,
            }
        )
    return pairs


def run_report(name, transfer, pairs, outputs, stats, refs, dst_spec, cfg):
    """Metric report for precomputed translator outputs."""
    outputs_iter = iter(outputs)
    translator = lambda _src: next(outputs_iter)  # noqa: E731  (precomputed lookup)
    report = evaluate_translation(
        pairs,
        translator,
        refs,
        lambda img: bubble_image_to_cloud(img, stats, dst_spec, cfg.eval.contact_thresh_mm),
    )
    report.model = name
    report.transfer = transfer
    return report


class BenchmarkArtifacts:
    """Filenames inside a benchmark working directory."""

    def __init__(self, workdir):
        self.workdir = workdir
        self.train_dir = os.path.join(workdir, "train")
        self.grasps_dir = os.path.join(workdir, "eval_grasps")
        self.tools_dir = os.path.join(workdir, "eval_tools")
        self.depth_ckpt = os.path.join(workdir, "depth.ct")
        self.t2t_ckpt = os.path.join(workdir, "t2t.ct")
        self.d2t_ckpt = os.path.join(workdir, "d2t.ct")
        self.vq_ckpt = os.path.join(workdir, "vqvae.ct")
        self.t2t_stats = os.path.join(workdir, "t2t.stats.json")
        self.d2t_stats = os.path.join(workdir, "d2t.stats.json")
        self.vq_stats = os.path.join(workdir, "vq.stats.json")
        self.report_json = os.path.join(workdir, "report.json")
        self.table_txt = os.path.join(workdir, "table.txt")
        self.scatter_svg = os.path.join(workdir, "pose_scatter.svg")
        self.logs_dir = os.path.join(workdir, "logs")

    def log(self, name):
        os.makedirs(self.logs_dir, exist_ok=True)
        return os.path.join(self.logs_dir, name)


def diffusion_config(cfg):
    d = cfg.diffusion
    return DiffusionConfig(
        train_steps=d.train_steps,
        sample_steps=d.sample_steps,
        beta_start=d.beta_start,
        beta_end=d.beta_end,
        guidance_scale=d.guidance_scale,
        cond_drop_prob=d.cond_drop_prob,
        epochs=d.epochs,
        batch_size=d.batch_size,
        lr=d.lr,
        base_width=d.base_width,
    )


def depth_config(cfg):
    d = cfg.depth
    return DepthTrainConfig(
        epochs=d.epochs,
        batch_size=d.batch_size,
        lr=d.lr,
        lam=d.lam,
        w_mask=d.w_mask,
        base_width=d.base_width,
    )


def vq_config(cfg):
    v = cfg.vqvae
    return VqVaeConfig(
        codebook_size=v.codebook_size,
        embed_dim=v.embed_dim,
        width=v.width,
        commitment_weight=v.commitment_weight,
        epochs=v.epochs,
        batch_size=v.batch_size,
        lr=v.lr,
    )


def train_all(cfg, art):
    """Train the four benchmark models from the train container and save
    checkpoints + norm stats into the working directory."""
    src_spec, dst_spec = build_sensors(cfg)
    src_tr, dst_tr = load_pairs(art.train_dir, cfg)

    log.info("training depth estimator on %s", src_spec.name)
    depth_model, _ = train_depthnet(
        src_tr, depth_config(cfg), seed=cfg.seed, log_path=art.log("depth.jsonl")
    )
    depth_model.save(art.depth_ckpt)

    dcfg = diffusion_config(cfg)
    log.info("training T2T denoiser (%s -> %s)", src_spec.name, dst_spec.name)
    t2t_model, _ = train_denoiser(
        t2t_training_pairs(src_tr, dst_tr),
        dcfg,
        cond_kind="touch",
        seed=cfg.seed,
        log_path=art.log("t2t.jsonl"),
        extra={"src_sensor": src_spec.name, "dst_sensor": dst_spec.name},
    )
    t2t_model.save(art.t2t_ckpt)

    log.info("training D2T denoiser (depth -> %s)", dst_spec.name)
    d2t_model, _ = train_denoiser(
        d2t_training_pairs(dst_tr, dst_spec),
        dcfg,
        cond_kind="depth",
        seed=cfg.seed,
        log_path=art.log("d2t.jsonl"),
        extra={"src_sensor": src_spec.name, "dst_sensor": dst_spec.name},
    )
    d2t_model.save(art.d2t_ckpt)

    log.info("training VQ-VAE baseline")
    vq_model, _ = train_vqvae(
        vq_training_pairs(src_tr, dst_tr, src_spec, dst_spec),
        vq_config(cfg),
        seed=cfg.seed,
        log_path=art.log("vqvae.jsonl"),
    )
    vq_model.save(art.vq_ckpt)

    compute_norm_stats(cfg, art, depth_model, t2t_model, d2t_model, vq_model, src_tr, dst_tr)
    return depth_model, t2t_model, d2t_model, vq_model


def compute_norm_stats(cfg, art, depth_model, t2t_model, d2t_model, vq_model, src_tr, dst_tr):
    """Generated-vs-GT renormalization stats over a training subset, per
    translator, saved alongside the checkpoints."""
    src_spec, dst_spec = build_sensors(cfg)
    n = min(cfg.eval.stats_samples, len(src_tr))
    rng = np.random.default_rng(cfg.seed + 99)
    idx = rng.choice(len(src_tr), size=n, replace=False)
    subset_src = [src_tr[i].tactile.values for i in idx]
    gt_1ch = [dst_tr[i].tactile.values.squeeze() for i in idx]
    dmin, dmax = dst_spec.depth_min, dst_spec.depth_max

    log.info("sampling %d training images for T2T stats", n)
    t2t_out = t2t_translate(t2t_model, subset_src, seed=cfg.seed + 5)
    stats_from_outputs(t2t_out, gt_1ch, dmin, dmax).save(art.t2t_stats)

    log.info("sampling %d training images for T2D2 stats", n)
    d2t_out, _ = t2d2_translate(
        depth_model, d2t_model, subset_src, src_spec, dst_spec, seed=cfg.seed + 6
    )
    stats_from_outputs(d2t_out, gt_1ch, dmin, dmax).save(art.d2t_stats)

    vq_out = vq_translate(vq_model, subset_src, src_spec, dst_spec)
    stats_from_outputs(vq_out, gt_1ch, dmin, dmax).save(art.vq_stats)


def evaluate_benchmark(cfg, art, depth_model, t2t_model, d2t_model, vq_model):
    """Translate and score both evaluation sets with every model plus the
    ground-truth floor row. Returns the list of MetricReports."""
    src_spec, dst_spec = build_sensors(cfg)
    transfer = f"{src_spec.name} -> {dst_spec.name}"
    refs = {}
    for kind in ("grasps", "tools"):
        refs.update(reference_clouds(indenters_for(cfg, kind), cfg))
    stats = {
        "T2T": BubbleNormStats.load(art.t2t_stats),
        "T2D2": BubbleNormStats.load(art.d2t_stats),
        "VQ-VAE": BubbleNormStats.load(art.vq_stats),
        "GT": identity_stats(dst_spec, dst_spec.depth_min, dst_spec.depth_max),
    }
    reports = []
    for kind, data_dir in (("grasps", art.grasps_dir), ("tools", art.tools_dir)):
        src_ev, dst_ev = load_pairs(data_dir, cfg)
        pairs = eval_pairs_from_samples(src_ev, dst_ev)
        sources = [p["source"] for p in pairs]
        set_name = f"{transfer} [{kind}]"

        outputs = {"GT": [p["target"] for p in pairs]}
        log.info("T2T sampling %d %s images", len(pairs), kind)
        outputs["T2T"] = t2t_translate(t2t_model, sources, seed=cfg.seed + 11)
        log.info("T2D2 sampling %d %s images", len(pairs), kind)
        outputs["T2D2"], _ = t2d2_translate(
            depth_model, d2t_model, sources, src_spec, dst_spec, seed=cfg.seed + 12
        )
        outputs["VQ-VAE"] = vq_translate(vq_model, sources, src_spec, dst_spec)

        for name in ("GT", "T2T", "T2D2", "VQ-VAE"):
            rep = run_report(name, set_name, pairs, outputs[name], stats[name], refs, dst_spec, cfg)
            log.info("%s %s: %s", set_name, name, rep.summary())
            reports.append(rep)
    return reports


def mean_image_baseline(cfg, art):
    """PSNR of the constant mean-target-image predictor on the grasps set."""
    _, dst_tr = load_pairs(art.train_dir, cfg)
    mean_img = np.mean([d.tactile.values.squeeze() for d in dst_tr], axis=0)
    src_ev, dst_ev = load_pairs(art.grasps_dir, cfg)
    vals = [metrics.psnr(mean_img, d.tactile.values.squeeze()) for d in dst_ev]
    return float(np.mean(vals)), mean_img


def write_reports(reports, art):
    import json

    from .plots import pose_scatter_svg

    with open(art.report_json, "w") as f:
        json.dump(
            [json.loads(r.to_json()) for r in reports], f, sort_keys=True, indent=1
        )
    table = metrics.format_table(reports)
    with open(art.table_txt, "w") as f:
        f.write(table + "\n")
    series = [
        (f"{r.model} {r.transfer.split('[')[-1].rstrip(']')}",
         [(rec.translation_mm, rec.angle_deg) for rec in r.records])
        for r in reports
        if r.model != "GT"
    ]
    with open(art.scatter_svg, "w") as f:
        f.write(pose_scatter_svg(series))
    return table
