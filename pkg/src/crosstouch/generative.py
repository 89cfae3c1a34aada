"""Conditional denoising diffusion for touch translation: epsilon-prediction
training with conditioning dropout, classifier-free guided ancestral
sampling, and the post-processing chain that turns generated bubble images
back into metric depth.
"""

import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from .depthnet import TrainingDiverged, _restore, _snapshot
from .geometry import DepthMap
from .models import Denoiser, build_denoiser
from .nn import AdamState, NumericsError, Tensor, adam_step, no_grad, ops, zero_grads
from .nn.serialize import load_checkpoint, save_checkpoint


@dataclass
class DiffusionConfig:
    train_steps: int = 1000
    sample_steps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    guidance_scale: float = 2.54
    cond_drop_prob: float = 0.1
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3  # desk-scale override of the 1e-5 base default
    base_width: int = 32

    def __post_init__(self):
        betas = self.betas()
        # zeros are tolerated so degenerate (noise-free) schedules can be
        # exercised; the default schedule is strictly inside (0, 1)
        if (betas < 0).any() or (betas >= 1).any():
            raise ValueError("betas must lie in [0, 1)")
        if (np.diff(betas) < 0).any():
            raise ValueError("beta schedule must be non-decreasing")
        if not 0 < self.sample_steps <= self.train_steps:
            raise ValueError("sample_steps must be in [1, train_steps]")
        if self.guidance_scale < 0:
            raise ValueError("guidance scale must be >= 0")

    def betas(self):
        return np.linspace(self.beta_start, self.beta_end, self.train_steps, dtype=np.float64)

    def alpha_bar(self):
        return np.cumprod(1.0 - self.betas())


def q_sample(x0, t, eps, alpha_bar):
    """Forward diffusion: x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.

    t is 1-indexed; accepts a scalar or one value per batch row.
    """
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    t = np.asarray(t, dtype=int)
    if (t < 1).any() or (t > len(alpha_bar)).any():
        raise ValueError(f"t must be within [1, {len(alpha_bar)}]")
    ab = alpha_bar[t - 1]
    if t.ndim > 0:
        ab = ab.reshape(t.shape + (1,) * (x0.ndim - t.ndim))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def guide(eps_cond, eps_uncond, scale):
    """Classifier-free guidance; bit-exact at the identity scales 0 and 1."""
    if scale == 1.0:
        return eps_cond
    if scale == 0.0:
        return eps_uncond
    return eps_uncond + scale * (eps_cond - eps_uncond)


class DenoiserModel:
    def __init__(self, net, config, step=0, extra=None):
        self.net = net
        self.config = config
        self.step = step
        self.extra = extra or {}

    def save(self, path):
        save_checkpoint(
            path,
            self.net.arch(),
            self.net.named_params(),
            step=self.step,
            extra={"diffusion": asdict(self.config), **self.extra},
        )

    @staticmethod
    def load(path):
        header, arrays = load_checkpoint(path)
        net = build_denoiser(header["arch"])
        for name, p in net.named_params():
            p.data = arrays[name].copy()
        extras = dict(header["extra"])
        cfg = DiffusionConfig(**extras.pop("diffusion"))
        return DenoiserModel(net, cfg, step=header["step"], extra=extras)


def train_denoiser(pairs, config=None, cond_kind="touch", seed=0, log_path=None, model=None, extra=None):
    """pairs: list of (cond CxHxW, target CxHxW) arrays in [-1, 1].

    Epsilon-prediction MSE; conditioning rows drop to the learned null
    embedding with cond_drop_prob so guided sampling is possible later.
    """
    config = config or DiffusionConfig()
    cond = np.stack([c for c, _ in pairs]).astype(np.float32)
    target = np.stack([t for _, t in pairs]).astype(np.float32)
    if model is None:
        net = Denoiser(
            np.random.default_rng(seed),
            target_channels=target.shape[1],
            cond_channels=cond.shape[1],
            cond_kind=cond_kind,
            base=config.base_width,
        )
        model = DenoiserModel(net, config, extra=extra)
    alpha_bar = config.alpha_bar()
    params = model.net.params()
    opt = AdamState(params, lr=config.lr)
    opt.step_count = model.step
    rng = np.random.default_rng(seed + 1)
    n = len(pairs)
    logs = []
    snap = _snapshot(params)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        t0 = time.monotonic()
        ep_loss, batches = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            b = len(idx)
            t = rng.integers(1, config.train_steps + 1, size=b)
            eps = rng.standard_normal((b, *target.shape[1:])).astype(np.float32)
            xt = q_sample(target[idx], t, eps, alpha_bar).astype(np.float32)
            drop = rng.random(b) < config.cond_drop_prob
            try:
                zero_grads(params)
                pred = model.net(Tensor(xt), Tensor(cond[idx]), t, drop_mask=drop)
                loss = ops.tmean(ops.square(ops.sub(pred, Tensor(eps))))
                loss.backward()
            except NumericsError as e:
                _restore(params, snap)
                raise TrainingDiverged(f"loss diverged at epoch {epoch}: {e}", model) from e
            adam_step(opt, params)
            snap = _snapshot(params)
            ep_loss += loss.item()
            batches += 1
            model.step += 1
        logs.append(
            {"epoch": epoch, "mse": ep_loss / batches, "wallclock": time.monotonic() - t0}
        )
    if log_path:
        with open(log_path, "a") as f:
            for rec in logs:
                f.write(json.dumps(rec) + "\n")
    return model, logs


def sample(model, cond, config=None, seed=0):
    """Ancestral DDPM sampling on an evenly spaced timestep subsequence with
    classifier-free guidance. cond: (N, C, H, W). Deterministic per seed;
    output clamped to [-1, 1].
    """
    config = config or model.config
    cond = np.asarray(cond, dtype=np.float32)
    if cond.ndim == 3:
        cond = cond[None]
    n, _, h, w = cond.shape
    tc = model.net.target_channels
    alpha_bar = config.alpha_bar()
    taus = np.unique(np.linspace(1, config.train_steps, config.sample_steps).round().astype(int))
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, tc, h, w)).astype(np.float32)
    s = config.guidance_scale
    with no_grad():
        feat_c = model.net.cond_features(Tensor(cond))
        feat_u = model.net.null_features(n, h, w) if s != 1.0 else None
        for i in range(len(taus) - 1, -1, -1):
            t = int(taus[i])
            ab_t = alpha_bar[t - 1]
            ab_prev = alpha_bar[taus[i - 1] - 1] if i > 0 else 1.0
            xt = Tensor(x)
            tvec = np.full(n, t)
            eps_c = model.net.unet(xt, feat_c, tvec).data if s != 0.0 else None
            eps_u = model.net.unet(xt, feat_u, tvec).data if s != 1.0 else None
            eps_hat = guide(eps_c, eps_u, s)
            if 1.0 - ab_t < 1e-12:
                # degenerate (noise-free) schedule: x_t already equals x0
                x0 = np.clip(x, -1.0, 1.0)
                x = x0
                continue
            x0 = (x - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
            x0 = np.clip(x0, -1.0, 1.0)
            if i == 0:
                x = x0.astype(np.float32)
                break
            alpha_step = ab_t / ab_prev
            beta_step = 1.0 - alpha_step
            denom = 1.0 - ab_t
            mean = (
                np.sqrt(ab_prev) * beta_step / denom * x0
                + np.sqrt(alpha_step) * (1.0 - ab_prev) / denom * x
            )
            var = beta_step * (1.0 - ab_prev) / denom
            noise = rng.standard_normal(x.shape) if var > 0 else 0.0
            x = (mean + np.sqrt(max(var, 0.0)) * noise).astype(np.float32)
    return np.clip(x, -1.0, 1.0)


@dataclass
class BubbleNormStats:
    """Depth-range constants plus the generated-vs-ground-truth first and
    second moments used by the final renormalization step."""

    depth_min: float
    depth_max: float
    gen_mean: float
    gen_std: float
    gt_mean: float
    gt_std: float

    def __post_init__(self):
        if self.depth_max <= self.depth_min:
            raise ValueError("depth_max must exceed depth_min")
        if self.gen_std <= 0 or self.gt_std <= 0:
            raise ValueError("standard deviations must be positive")

    def save(self, path):
        with open(path, "w") as f:
            json.dump(asdict(self), f, sort_keys=True, indent=1)

    @staticmethod
    def load(path):
        with open(path) as f:
            return BubbleNormStats(**json.load(f))


def channel_average(generated):
    """Post-processing step 1: collapse the tiled 3-channel output."""
    values = generated.values if hasattr(generated, "values") else np.asarray(generated)
    if values.ndim != 3 or values.shape[0] != 3:
        raise ValueError(f"expected a 3-channel generated image, got {values.shape}")
    return values.mean(axis=0)


def to_depth_mm(img, depth_min, depth_max):
    """Post-processing step 2: map [-1, 1] onto the training depth range."""
    return depth_min + (np.asarray(img, dtype=np.float64) + 1.0) * 0.5 * (depth_max - depth_min)


def renormalize(img, stats):
    """Post-processing step 3: move generated-set statistics onto the
    ground-truth mean/std."""
    if stats.gen_std == 0:
        raise ValueError("generated std is zero")
    return (np.asarray(img, dtype=np.float64) - stats.gen_mean) * (
        stats.gt_std / stats.gen_std
    ) + stats.gt_mean


def postprocess_bubble(generated, stats, intrinsics=None):
    """Full chain: average channels, map to mm, renormalize. Returns a
    DepthMap when intrinsics are given, else the raw mm array."""
    mm = renormalize(to_depth_mm(channel_average(generated), stats.depth_min, stats.depth_max), stats)
    mm = np.maximum(mm, 0.0)
    if intrinsics is None:
        return mm
    return DepthMap(mm, intrinsics)


def compute_bubble_stats(model, conds, gt_targets, depth_min, depth_max, seed=0):
    """Sample the generator over (a subset of) the training set and record
    the mean/std of generated and ground-truth images in mm space."""
    gen = sample(model, conds, seed=seed)
    gen_mm = np.stack([to_depth_mm(channel_average(g), depth_min, depth_max) for g in gen])
    gt_mm = np.stack([to_depth_mm(channel_average(g), depth_min, depth_max) for g in gt_targets])
    return BubbleNormStats(
        depth_min=float(depth_min),
        depth_max=float(depth_max),
        gen_mean=float(gen_mm.mean()),
        gen_std=float(gen_mm.std()),
        gt_mean=float(gt_mm.mean()),
        gt_std=float(gt_mm.std()),
    )


def tile_channels(img):
    """Channel inflation for 1-channel targets: tile to 3 channels."""
    values = img.values if hasattr(img, "values") else np.asarray(img)
    if values.shape[0] == 1:
        return np.repeat(values, 3, axis=0)
    return values
