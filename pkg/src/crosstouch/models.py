"""Network architectures: the denoising UNet with spatial conditioning,
the depth/mask estimator, and the VQ-VAE encoder/decoder.

All are deliberately small (2 down/up levels, base width 32) so full
training runs on a CPU in minutes.
"""

import numpy as np

from .nn import ops
from .nn.modules import Conv2d, ConvTranspose2d, GroupNorm, Linear, Module
from .nn.tensor import Tensor

TIME_EMB_DIM = 64
TIME_HIDDEN = 128


class ResBlock(Module):
    def __init__(self, rng, cin, cout, temb_dim=None):
        self.norm1 = GroupNorm(cin)
        self.conv1 = Conv2d(rng, cin, cout)
        self.norm2 = GroupNorm(cout)
        self.conv2 = Conv2d(rng, cout, cout)
        self.time_proj = Linear(rng, temb_dim, cout) if temb_dim else None
        self.skip = Conv2d(rng, cin, cout) if cin != cout else None

    def __call__(self, x, temb=None):
        h = self.conv1(ops.silu(self.norm1(x)))
        if self.time_proj is not None and temb is not None:
            bias = self.time_proj(ops.silu(temb))
            h = ops.add(h, ops.reshape(bias, (*bias.shape, 1, 1)))
        h = self.conv2(ops.silu(self.norm2(h)))
        return ops.add(h, self.skip(x) if self.skip else x)


class CondEncoder(Module):
    """4-block conv encoder mapping the conditioning image to a spatial
    feature map at input resolution."""

    def __init__(self, rng, cin, feat=8, width=16):
        self.c1 = Conv2d(rng, cin, width)
        self.c2 = Conv2d(rng, width, width)
        self.c3 = Conv2d(rng, width, width)
        self.c4 = Conv2d(rng, width, feat)
        self.feat = feat

    def __call__(self, x):
        h = ops.silu(self.c1(x))
        h = ops.silu(self.c2(h))
        h = ops.silu(self.c3(h))
        return self.c4(h)


class UNet(Module):
    """Denoiser: concat(noisy target, conditioning features) -> noise estimate.

    Widths (32, 64, 96) at full/half/quarter resolution; timestep embedding
    added per residual block.
    """

    def __init__(self, rng, target_channels, cond_feat, base=32):
        w1, w2, w3 = base, base * 2, base * 3
        self.t1 = Linear(rng, TIME_EMB_DIM, TIME_HIDDEN)
        self.t2 = Linear(rng, TIME_HIDDEN, TIME_HIDDEN)
        self.stem = Conv2d(rng, target_channels + cond_feat, w1)
        self.rb_down1 = ResBlock(rng, w1, w1, TIME_HIDDEN)
        self.down1 = Conv2d(rng, w1, w2, stride=2)
        self.rb_down2 = ResBlock(rng, w2, w2, TIME_HIDDEN)
        self.down2 = Conv2d(rng, w2, w3, stride=2)
        self.rb_mid = ResBlock(rng, w3, w3, TIME_HIDDEN)
        self.up1 = ConvTranspose2d(rng, w3, w2)
        self.rb_up1 = ResBlock(rng, w2, w2, TIME_HIDDEN)
        self.up2 = ConvTranspose2d(rng, w2, w1)
        self.rb_up2 = ResBlock(rng, w1, w1, TIME_HIDDEN)
        self.out_norm = GroupNorm(w1)
        self.out_conv = Conv2d(rng, w1, target_channels)

    def __call__(self, x, cond_feat, t):
        temb = self.t2(ops.silu(self.t1(ops.timestep_embedding(t, TIME_EMB_DIM))))
        h = self.stem(ops.concat([x, cond_feat], axis=1))
        s1 = self.rb_down1(h, temb)
        s2 = self.rb_down2(self.down1(s1), temb)
        m = self.rb_mid(self.down2(s2), temb)
        u1 = self.rb_up1(ops.add(self.up1(m), s2), temb)
        u2 = self.rb_up2(ops.add(self.up2(u1), s1), temb)
        return self.out_conv(ops.silu(self.out_norm(u2)))


class Denoiser(Module):
    """UNet plus conditioning encoder and the learned null embedding used
    when conditioning is dropped for classifier-free guidance."""

    def __init__(self, rng, target_channels, cond_channels, cond_kind, base=32, cond_feat=8):
        self.encoder = CondEncoder(rng, cond_channels, feat=cond_feat)
        self.unet = UNet(rng, target_channels, cond_feat, base=base)
        self.null_embed = Tensor(
            np.zeros((1, cond_feat, 1, 1), dtype=np.float32), requires_grad=True
        )
        self.cond_kind = cond_kind  # "touch" | "depth"
        self.target_channels = target_channels
        self.cond_channels = cond_channels
        self.base = base
        self.cond_feat = cond_feat

    def cond_features(self, cond, drop_mask=None):
        """Encode conditioning; rows flagged in drop_mask are replaced by the
        null embedding (broadcast over space)."""
        feat = self.encoder(cond)
        if drop_mask is not None and drop_mask.any():
            keep = (~drop_mask).astype(np.float32)[:, None, None, None]
            kept = ops.mul(feat, Tensor(keep))
            null = ops.mul(self.null_embed, Tensor(1.0 - keep))
            feat = ops.add(kept, null)
        return feat

    def null_features(self, n, h, w):
        ones = Tensor(np.ones((n, 1, h, w), dtype=np.float32))
        return ops.mul(self.null_embed, ones)

    def __call__(self, x, cond, t, drop_mask=None):
        return self.unet(x, self.cond_features(cond, drop_mask), t)

    def arch(self):
        return {
            "kind": "denoiser",
            "target_channels": self.target_channels,
            "cond_channels": self.cond_channels,
            "cond_kind": self.cond_kind,
            "base": self.base,
            "cond_feat": self.cond_feat,
        }


def build_denoiser(arch, seed=0):
    rng = np.random.default_rng(seed)
    return Denoiser(
        rng,
        arch["target_channels"],
        arch["cond_channels"],
        arch["cond_kind"],
        base=arch.get("base", 32),
        cond_feat=arch.get("cond_feat", 8),
    )


class DepthNet(Module):
    """Encoder-decoder over a tactile image with two heads: softplus depth
    (normalized units, rescaled to mm by the caller) and sigmoid contact logits."""

    def __init__(self, rng, in_channels, base=24):
        w1, w2, w3 = base, base * 2, base * 3
        self.stem = Conv2d(rng, in_channels, w1)
        self.rb1 = ResBlock(rng, w1, w1)
        self.down1 = Conv2d(rng, w1, w2, stride=2)
        self.rb2 = ResBlock(rng, w2, w2)
        self.down2 = Conv2d(rng, w2, w3, stride=2)
        self.rb_mid = ResBlock(rng, w3, w3)
        self.up1 = ConvTranspose2d(rng, w3, w2)
        self.rb3 = ResBlock(rng, w2, w2)
        self.up2 = ConvTranspose2d(rng, w2, w1)
        self.rb4 = ResBlock(rng, w1, w1)
        self.depth_head = Conv2d(rng, w1, 1)
        self.mask_head = Conv2d(rng, w1, 1)
        self.in_channels = in_channels
        self.base = base

    def __call__(self, x):
        s1 = self.rb1(self.stem(x))
        s2 = self.rb2(self.down1(s1))
        m = self.rb_mid(self.down2(s2))
        u1 = self.rb3(ops.add(self.up1(m), s2))
        # the mask head reads the same high-resolution decoder features
        u2 = self.rb4(ops.add(self.up2(u1), s1))
        depth_norm = ops.softplus(self.depth_head(u2))
        mask_logit = self.mask_head(u2)
        return depth_norm, mask_logit

    def arch(self):
        return {"kind": "depthnet", "in_channels": self.in_channels, "base": self.base}


def build_depthnet(arch, seed=0):
    rng = np.random.default_rng(seed)
    return DepthNet(rng, arch["in_channels"], base=arch.get("base", 24))


class VqEncoder(Module):
    def __init__(self, rng, cin, width, dim):
        self.c1 = Conv2d(rng, cin, width, stride=2)
        self.c2 = Conv2d(rng, width, width, stride=2)
        self.rb = ResBlock(rng, width, width)
        self.proj = Conv2d(rng, width, dim)

    def __call__(self, x):
        h = ops.silu(self.c1(x))
        h = ops.silu(self.c2(h))
        return self.proj(self.rb(h))


class VqDecoder(Module):
    def __init__(self, rng, cout, width, dim):
        self.proj = Conv2d(rng, dim, width)
        self.rb = ResBlock(rng, width, width)
        self.u1 = ConvTranspose2d(rng, width, width)
        self.c1 = Conv2d(rng, width, width)
        self.u2 = ConvTranspose2d(rng, width, width)
        self.c2 = Conv2d(rng, width, cout)

    def __call__(self, z):
        h = self.rb(self.proj(z))
        h = ops.silu(self.c1(self.u1(h)))
        return self.c2(self.u2(h))
