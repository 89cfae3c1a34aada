"""Tactile -> (depth, contact mask) estimation: scale-invariant log loss on
metric depth plus binary cross entropy on the contact mask, trained jointly.
"""

import json
import time
from dataclasses import dataclass

import numpy as np

from .geometry import ContactMask, DepthMap
from .models import DepthNet, build_depthnet
from .nn import AdamState, NumericsError, Tensor, adam_step, no_grad, ops, zero_grads
from .nn.serialize import load_checkpoint, save_checkpoint


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; carries the last finite model state."""

    def __init__(self, msg, model=None):
        super().__init__(msg)
        self.model = model


def _values(x):
    if isinstance(x, DepthMap):
        return x.values
    if isinstance(x, ContactMask):
        return x.values
    if isinstance(x, Tensor):
        return x
    return np.asarray(x)


def silog_loss(pred, gt, lam=0.5, valid=None):
    """Scale-invariant log loss: sqrt(mean(d^2) - lam * mean(d)^2) over valid
    pixels with d = log(gt) - log(pred). Differentiable when pred is a Tensor.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    pred = _values(pred)
    gt_v = np.asarray(_values(gt), dtype=np.float64)
    pred_t = pred if isinstance(pred, Tensor) else Tensor(np.asarray(pred))
    if pred_t.shape != gt_v.shape:
        raise ValueError(f"pred shape {pred_t.shape} != gt shape {gt_v.shape}")
    if valid is None:
        m = np.ones(gt_v.shape)
    else:
        m = np.asarray(_values(valid), dtype=np.float64)
        if m.shape != gt_v.shape:
            raise ValueError(f"valid mask shape {m.shape} != gt shape {gt_v.shape}")
    n = m.sum()
    if n == 0:
        raise ValueError("empty valid set")
    if ((gt_v <= 0) & (m > 0)).any() or ((pred_t.data <= 0) & (m > 0)).any():
        raise ValueError("depths must be positive on valid pixels")

    m = m.astype(pred_t.dtype)
    mt = Tensor(m)
    inv_fill = Tensor((1.0 - m).astype(pred_t.dtype))
    # masked-out entries are replaced by 1 before the log so they contribute
    # exactly zero and leak no gradient
    safe_pred = ops.add(ops.mul(pred_t, mt), inv_fill)
    log_gt = np.where(m > 0, np.log(gt_v), 0.0).astype(pred_t.dtype)
    d = ops.mul(ops.sub(Tensor(log_gt), ops.log(safe_pred)), mt)
    s1 = ops.mul(ops.tsum(d), Tensor(np.asarray(1.0 / n, dtype=pred_t.dtype)))
    s2 = ops.mul(ops.tsum(ops.square(d)), Tensor(np.asarray(1.0 / n, dtype=pred_t.dtype)))
    inside = ops.sub(s2, ops.mul(Tensor(np.asarray(lam, dtype=pred_t.dtype)), ops.square(s1)))
    return ops.sqrt(ops.relu(inside))


def bce_mask_loss(pred, gt):
    """Mean binary cross entropy; pred is clamped into (1e-7, 1 - 1e-7)."""
    pred_t = pred if isinstance(pred, Tensor) else Tensor(np.asarray(pred))
    gt_v = np.asarray(_values(gt), dtype=pred_t.dtype)
    if pred_t.shape != gt_v.shape:
        raise ValueError(f"pred shape {pred_t.shape} != gt shape {gt_v.shape}")
    p = ops.clamp(pred_t, 1e-7, 1.0 - 1e-7)
    gt_t = Tensor(gt_v)
    one = Tensor(np.ones_like(gt_v))
    term = ops.add(
        ops.mul(gt_t, ops.log(p)), ops.mul(ops.sub(one, gt_t), ops.log(ops.sub(one, p)))
    )
    return ops.neg(ops.tmean(term))


@dataclass
class DepthTrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3  # desk-scale override of the 1e-5 base default
    lam: float = 0.5
    w_mask: float = 1.0
    base_width: int = 24


class DepthNetModel:
    """Trained estimator plus the normalization constants that map the
    softplus head back to mm."""

    def __init__(self, net, depth_min, depth_max, sensor_name, step=0):
        self.net = net
        self.depth_min = float(depth_min)
        self.depth_max = float(depth_max)
        self.sensor_name = sensor_name
        self.step = step

    def forward_mm(self, batch):
        depth_norm, mask_logit = self.net(batch)
        scale = Tensor(np.asarray(self.depth_max - self.depth_min, dtype=np.float32))
        offset = Tensor(np.asarray(self.depth_min, dtype=np.float32))
        return ops.add(ops.mul(depth_norm, scale), offset), mask_logit

    def save(self, path):
        save_checkpoint(
            path,
            self.net.arch(),
            self.net.named_params(),
            step=self.step,
            extra={
                "depth_min": self.depth_min,
                "depth_max": self.depth_max,
                "sensor": self.sensor_name,
            },
        )

    @staticmethod
    def load(path):
        header, arrays = load_checkpoint(path)
        net = build_depthnet(header["arch"])
        for name, p in net.named_params():
            p.data = arrays[name].copy()
        extra = header["extra"]
        return DepthNetModel(
            net, extra["depth_min"], extra["depth_max"], extra["sensor"], step=header["step"]
        )


def _snapshot(params):
    return [p.data.copy() for p in params]


def _restore(params, snap):
    for p, s in zip(params, snap):
        p.data = s.copy()


def train_depthnet(samples, config=None, seed=0, log_path=None, model=None):
    """Train on TouchSamples from one sensor. Deterministic for a given seed;
    aborts with the last finite state if the loss diverges."""
    config = config or DepthTrainConfig()
    x = np.stack([s.tactile.values for s in samples]).astype(np.float32)
    gt_depth = np.stack([s.depth.values for s in samples])[:, None].astype(np.float32)
    gt_mask = np.stack([s.mask.values for s in samples])[:, None].astype(np.float32)
    if model is None:
        rng_init = np.random.default_rng(seed)
        net = DepthNet(rng_init, x.shape[1], base=config.base_width)
        model = DepthNetModel(net, gt_depth.min(), gt_depth.max(), samples[0].sensor_name)
    params = model.net.params()
    opt = AdamState(params, lr=config.lr)
    opt.step_count = model.step
    rng = np.random.default_rng(seed + 1)
    logs = []
    n = len(samples)
    snap = _snapshot(params)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        t0 = time.monotonic()
        ep_silog, ep_bce, batches = 0.0, 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            try:
                zero_grads(params)
                pred_mm, mask_logit = model.forward_mm(Tensor(x[idx]))
                l_silog = silog_loss(pred_mm, gt_depth[idx], lam=config.lam)
                l_bce = bce_mask_loss(ops.sigmoid(mask_logit), gt_mask[idx])
                loss = ops.add(l_silog, ops.mul(Tensor(np.float32(config.w_mask)), l_bce))
                loss.backward()
            except NumericsError as e:
                _restore(params, snap)
                raise TrainingDiverged(f"loss diverged at epoch {epoch}: {e}", model) from e
            adam_step(opt, params)
            snap = _snapshot(params)
            ep_silog += l_silog.item()
            ep_bce += l_bce.item()
            batches += 1
            model.step += 1
        logs.append(
            {
                "epoch": epoch,
                "silog": ep_silog / batches,
                "bce": ep_bce / batches,
                "wallclock": time.monotonic() - t0,
            }
        )
    if log_path:
        with open(log_path, "a") as f:
            for rec in logs:
                f.write(json.dumps(rec) + "\n")
    return model, logs


def predict_depth(model, tactile, intrinsics):
    """TactileImage -> (DepthMap in mm, ContactMask). Pure and deterministic."""
    values = tactile.values if hasattr(tactile, "values") else np.asarray(tactile)
    if values.ndim != 3:
        raise ValueError(f"expected (C, H, W) tactile image, got {values.shape}")
    if values.shape[0] != model.net.in_channels:
        raise ValueError(
            f"model expects {model.net.in_channels} channel(s), image has {values.shape[0]}"
        )
    with no_grad():
        pred_mm, mask_logit = model.forward_mm(Tensor(values[None].astype(np.float32)))
    depth = pred_mm.data[0, 0].astype(np.float64)
    mask = (mask_logit.data[0, 0] > 0.0).astype(np.uint8)  # sigmoid > 0.5
    return DepthMap(np.maximum(depth, 0.0), intrinsics), ContactMask(mask)
