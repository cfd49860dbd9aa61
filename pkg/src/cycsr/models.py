"""The four networks: SR generator, LR generator, and their discriminators.

The SR generator is a residual denoiser wrapped around a fixed bicubic
upsampler: the trunk estimates a structured-noise image at the target
resolution, a trainable projection clamps that estimate onto an l2 ball
whose radius tracks the per-image noise level, and the result is subtracted
from the upsampled input before clipping to [0, 1].

The LR generator maps an SR estimate back down by 4x so a cycle-consistency
term can compare it against the original input. Both discriminators emit
raw logits (sigmoid lives in the loss): the HR one pools to a single scalar,
the LR one keeps a spatial logit map.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import torch
import torch.nn as nn

from .resample import upsample_torch

# trainable-parameter total reported for the full-scale SR generator in the
# original experiments; the exact count here is 379,589
FULL_SCALE_PARAM_REFERENCE = 380_000


def _pad_conv(in_ch, out_ch, kernel, stride=1):
    """Reflection padding followed by a conv, preserving dims at stride 1."""
    return [nn.ReflectionPad2d(kernel // 2), nn.Conv2d(in_ch, out_ch, kernel, stride=stride)]


class PreActResBlock(nn.Module):
    """Residual block with two pre-activation convs (PReLU, per-channel)."""

    def __init__(self, channels: int, kernel: int = 3):
        super().__init__()
        self.body = nn.Sequential(
            nn.PReLU(channels),
            *_pad_conv(channels, channels, kernel),
            nn.PReLU(channels),
            *_pad_conv(channels, channels, kernel),
        )

    def forward(self, x):
        return x + self.body(x)


class BallProjection(nn.Module):
    """Euclidean projection of a residual image onto a noise-scaled l2 ball.

    The radius for image i is alpha * (sigma_hat_i / 255) * sqrt(N) where N
    is the element count of one residual image and alpha is a trainable
    scalar kept nonnegative. Inside the ball the input passes through
    unchanged; outside it is rescaled onto the surface, which makes the map
    idempotent.
    """

    def __init__(self, alpha_init: float = 1.0):
        super().__init__()
        self.alpha = nn.Parameter(torch.tensor(float(alpha_init)))

    def forward(self, z, sigma_hat):
        b = z.shape[0]
        n = z[0].numel()
        sigma_hat = torch.as_tensor(sigma_hat, dtype=z.dtype, device=z.device).reshape(b)
        alpha = self.alpha.clamp(min=0.0)
        radius = alpha * (sigma_hat / 255.0) * (float(n) ** 0.5)
        norm = z.reshape(b, -1).norm(dim=1)
        denom = torch.maximum(norm, radius)
        scale = torch.where(denom > 0, radius / torch.clamp(denom, min=1e-30), torch.zeros_like(denom))
        return z * scale.reshape(b, 1, 1, 1)


@dataclass(frozen=True)
class GSRConfig:
    feat_maps: int = 64
    enc_dec_kernel: int = 5
    resblocks: int = 5
    resblock_kernel: int = 3
    scale: int = 4
    alpha_init: float = 1.0

    def __post_init__(self):
        if self.scale not in (1, 2, 4):
            raise ValueError(f"scale must be 1, 2 or 4; got {self.scale}")

    @staticmethod
    def tiny(scale: int = 4) -> "GSRConfig":
        return GSRConfig(feat_maps=16, resblocks=2, scale=scale)


class SRGenerator(nn.Module):
    """Residual SR network: upsample, encode, refine, project, subtract, clip.

    ``sigma_hat`` is a per-image noise level in 8-bit units, a non-trainable
    side input (scalar or length-B sequence/tensor). With all trunk weights
    zeroed the output reduces to the clipped bicubic upsample of the input.
    """

    def __init__(self, cfg: GSRConfig = GSRConfig()):
        super().__init__()
        self.cfg = cfg
        f, k = cfg.feat_maps, cfg.enc_dec_kernel
        self.encoder = nn.Sequential(*_pad_conv(3, f, k))
        self.resnet = nn.Sequential(
            *[PreActResBlock(f, cfg.resblock_kernel) for _ in range(cfg.resblocks)]
        )
        self.decoder = nn.Sequential(*_pad_conv(f, 3, k))
        self.projection = BallProjection(cfg.alpha_init)

    def forward(self, lr, sigma_hat):
        if lr.ndim != 4 or lr.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) input, got {tuple(lr.shape)}")
        up = upsample_torch(lr, self.cfg.scale)
        z = self.decoder(self.resnet(self.encoder(up)))
        residual = self.projection(z, sigma_hat)
        return torch.clamp(up - residual, 0.0, 1.0)


@dataclass(frozen=True)
class GLRConfig:
    feat_maps: int = 64
    resblocks: int = 6
    kernel: int = 3
    scale: int = 4  # fixed by the two stride-2 head convs

    @staticmethod
    def tiny() -> "GLRConfig":
        return GLRConfig(feat_maps=16, resblocks=2)


class LRGenerator(nn.Module):
    """Downsampling generator: 3 head convs (stride 2 in the 2nd and 3rd),
    a residual trunk, 3 tail convs, output clipped to [0, 1]."""

    def __init__(self, cfg: GLRConfig = GLRConfig()):
        super().__init__()
        self.cfg = cfg
        f, k = cfg.feat_maps, cfg.kernel
        self.head = nn.Sequential(
            *_pad_conv(3, f, k),
            *_pad_conv(f, f, k, stride=2),
            *_pad_conv(f, f, k, stride=2),
        )
        self.resnet = nn.Sequential(*[PreActResBlock(f, k) for _ in range(cfg.resblocks)])
        self.tail = nn.Sequential(
            *_pad_conv(f, f, k),
            *_pad_conv(f, f, k),
            *_pad_conv(f, 3, k),
        )

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) input, got {tuple(x.shape)}")
        h, w = x.shape[-2], x.shape[-1]
        if h % self.cfg.scale or w % self.cfg.scale:
            raise ValueError(f"dims {(h, w)} not divisible by {self.cfg.scale}")
        out = self.tail(self.resnet(self.head(x)))
        return torch.clamp(out, 0.0, 1.0)


# channel plan of the 10-layer HR discriminator trunk
DX_CHANNELS = (64, 64, 128, 128, 256, 256, 512, 512, 512, 512)
DX_CHANNELS_TINY = (16, 16, 16, 16, 32, 32, 32, 32, 32, 32)


class HRDiscriminator(nn.Module):
    """10-conv critic on HR images: 3x3 stride-1 and 4x4 stride-2 layers
    alternate while channels grow 64 to 512; batch norm after every conv but
    the first; global average pooling and a linear map to one logit."""

    def __init__(self, channels=DX_CHANNELS):
        super().__init__()
        if len(channels) != 10:
            raise ValueError(f"expected 10 channel entries, got {len(channels)}")
        layers = []
        in_ch = 3
        for i, out_ch in enumerate(channels):
            if i % 2 == 0:
                layers.append(nn.Conv2d(in_ch, out_ch, 3, stride=1, padding=1))
            else:
                layers.append(nn.Conv2d(in_ch, out_ch, 4, stride=2, padding=1))
            if i > 0:
                layers.append(nn.BatchNorm2d(out_ch))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            in_ch = out_ch
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(in_ch, 1)

    def forward(self, x):
        feat = self.pool(self.features(x)).flatten(1)
        return self.head(feat).squeeze(1)


class LRDiscriminator(nn.Module):
    """Patch critic on LR images: three 5x5 stride-2 convs (64, 128, 256)
    with batch norm and leaky rectification, then a raw 5x5 conv to a one
    channel logit map."""

    def __init__(self, base: int = 64):
        super().__init__()
        chans = (base, base * 2, base * 4)
        layers = []
        in_ch = 3
        for out_ch in chans:
            layers += [
                nn.Conv2d(in_ch, out_ch, 5, stride=2, padding=2),
                nn.BatchNorm2d(out_ch),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            in_ch = out_ch
        layers.append(nn.Conv2d(in_ch, 1, 5, stride=1, padding=2))
        self.features = nn.Sequential(*layers)

    def forward(self, x):
        return self.features(x)


def count_parameters(module: nn.Module) -> int:
    """Number of trainable scalars in a module."""
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def parameter_hash(module: nn.Module) -> str:
    """sha256 over the trainable parameters in name order (detachment copy)."""
    h = hashlib.sha256()
    for name, p in sorted(module.named_parameters()):
        if p.requires_grad:
            h.update(name.encode())
            h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def build_networks(tiny: bool = False, scale: int = 4):
    """Construct all four networks with the current torch RNG state."""
    if tiny:
        return {
            "gsr": SRGenerator(GSRConfig.tiny(scale)),
            "dx": HRDiscriminator(DX_CHANNELS_TINY),
            "glr": LRGenerator(GLRConfig.tiny()),
            "dy": LRDiscriminator(base=16),
        }
    return {
        "gsr": SRGenerator(GSRConfig(scale=scale)),
        "dx": HRDiscriminator(),
        "glr": LRGenerator(),
        "dy": LRDiscriminator(),
    }
