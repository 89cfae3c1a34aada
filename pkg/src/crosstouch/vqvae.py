"""VQ-VAE baseline for cross-sensor style transfer on difference images:
CNN encoder, nearest-codebook quantization with a straight-through gradient,
CNN decoder trained with reconstruction MSE plus the usual VQ losses.
"""

import json
import logging
import time
from dataclasses import dataclass

import numpy as np

from .depthnet import TrainingDiverged, _restore, _snapshot
from .models import VqDecoder, VqEncoder
from .nn import AdamState, NumericsError, Tensor, adam_step, no_grad, ops, zero_grads
from .nn.serialize import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)


@dataclass
class VqVaeConfig:
    codebook_size: int = 64
    embed_dim: int = 16
    width: int = 32
    commitment_weight: float = 0.25
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3


def vq_quantize(z, codebook):
    """Nearest codebook vector per spatial location (L2, ties to the lowest
    index). Returns (straight-through z_q, indices, codebook loss, commitment loss).

    z: Tensor (N, D, H, W); codebook: Tensor (K, D).
    """
    if codebook.shape[0] == 0:
        raise ValueError("codebook is empty")
    if z.shape[1] != codebook.shape[1]:
        raise ValueError(f"feature dim {z.shape[1]} != codebook dim {codebook.shape[1]}")
    n, d, h, w = z.shape
    zf = ops.reshape(ops.permute(z, (0, 2, 3, 1)), (n * h * w, d))
    dist = (
        (zf.data**2).sum(axis=1, keepdims=True)
        - 2.0 * zf.data @ codebook.data.T
        + (codebook.data**2).sum(axis=1)[None, :]
    )
    indices = dist.argmin(axis=1)  # argmin takes the first (lowest) index on ties
    onehot = np.zeros((n * h * w, codebook.shape[0]), dtype=codebook.dtype)
    onehot[np.arange(n * h * w), indices] = 1.0
    selected = ops.linear(Tensor(onehot), codebook)  # rows of the codebook, differentiable
    codebook_loss = ops.tmean(ops.square(ops.sub(selected, zf.detach())))
    commitment_loss = ops.tmean(ops.square(ops.sub(zf, selected.detach())))
    # straight-through: forward uses the quantized values, gradient passes to z
    zq = ops.add(zf, Tensor(selected.data - zf.data))
    zq = ops.permute(ops.reshape(zq, (n, h, w, d)), (0, 3, 1, 2))
    return zq, indices.reshape(n, h, w), codebook_loss, commitment_loss


class VqVaeModel:
    def __init__(self, encoder, decoder, codebook, config, in_channels, out_channels, step=0):
        self.encoder = encoder
        self.decoder = decoder
        self.codebook = codebook
        self.config = config
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.step = step

    def params(self):
        return self.encoder.params() + self.decoder.params() + [self.codebook]

    def named_params(self):
        return (
            self.encoder.named_params("enc")
            + self.decoder.named_params("dec")
            + [("codebook", self.codebook)]
        )

    def forward(self, x):
        z = self.encoder(x)
        zq, indices, cb_loss, commit_loss = vq_quantize(z, self.codebook)
        recon = self.decoder(zq)
        return recon, indices, cb_loss, commit_loss

    def reconstruct(self, x):
        with no_grad():
            recon, indices, _, _ = self.forward(Tensor(np.asarray(x, dtype=np.float32)))
        return recon.data, indices

    def save(self, path):
        arch = {
            "kind": "vqvae",
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "codebook_size": self.config.codebook_size,
            "embed_dim": self.config.embed_dim,
            "width": self.config.width,
        }
        save_checkpoint(
            path,
            arch,
            self.named_params(),
            step=self.step,
            extra={"commitment_weight": self.config.commitment_weight},
        )

    @staticmethod
    def load(path):
        header, arrays = load_checkpoint(path)
        arch = header["arch"]
        cfg = VqVaeConfig(
            codebook_size=arch["codebook_size"],
            embed_dim=arch["embed_dim"],
            width=arch["width"],
            commitment_weight=header["extra"]["commitment_weight"],
        )
        model = build_vqvae(arch["in_channels"], arch["out_channels"], cfg)
        for name, p in model.named_params():
            p.data = arrays[name].copy()
        model.step = header["step"]
        return model


def build_vqvae(in_channels, out_channels, config, seed=0):
    rng = np.random.default_rng(seed)
    enc = VqEncoder(rng, in_channels, config.width, config.embed_dim)
    dec = VqDecoder(rng, out_channels, config.width, config.embed_dim)
    codebook = Tensor(
        (rng.standard_normal((config.codebook_size, config.embed_dim)) * 0.5).astype(np.float32),
        requires_grad=True,
    )
    return VqVaeModel(enc, dec, codebook, config, in_channels, out_channels)


def train_vqvae(pairs, config=None, seed=0, log_path=None, model=None):
    """pairs: list of (source difference image, target difference image).
    Warns if the codebook collapses to a single active code for a full epoch.
    """
    config = config or VqVaeConfig()
    src = np.stack([s for s, _ in pairs]).astype(np.float32)
    dst = np.stack([t for _, t in pairs]).astype(np.float32)
    if model is None:
        model = build_vqvae(src.shape[1], dst.shape[1], config, seed=seed)
    params = model.params()
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
        active = set()
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            try:
                zero_grads(params)
                recon, indices, cb_loss, commit_loss = model.forward(Tensor(src[idx]))
                mse = ops.tmean(ops.square(ops.sub(recon, Tensor(dst[idx]))))
                loss = ops.add(
                    mse,
                    ops.add(
                        cb_loss,
                        ops.mul(Tensor(np.float32(config.commitment_weight)), commit_loss),
                    ),
                )
                loss.backward()
            except NumericsError as e:
                _restore(params, snap)
                raise TrainingDiverged(f"loss diverged at epoch {epoch}: {e}", model) from e
            adam_step(opt, params)
            snap = _snapshot(params)
            active.update(np.unique(indices).tolist())
            ep_loss += loss.item()
            batches += 1
            model.step += 1
        if len(active) <= 1:
            log.warning("vq-vae codebook collapsed to %d active code(s) in epoch %d", len(active), epoch)
        logs.append(
            {
                "epoch": epoch,
                "loss": ep_loss / batches,
                "active_codes": len(active),
                "wallclock": time.monotonic() - t0,
            }
        )
    if log_path:
        with open(log_path, "a") as f:
            for rec in logs:
                f.write(json.dumps(rec) + "\n")
    return model, logs
