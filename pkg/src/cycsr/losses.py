"""Training objectives: relativistic adversarial, fidelity and cycle terms.

Every function takes batched (B, C, H, W) torch tensors and returns a scalar
tensor, differentiable end to end. The composite generator objective is a
weighted sum of seven terms; weights come from named presets or explicit
values, and the per-term breakdown is returned unweighted for logging.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import torch
import torch.nn as nn
import torch.nn.functional as F

from .metrics import ms_ssim_torch, ssim_torch

TERM_NAMES = ("l_per", "l_gan", "l_tv", "l_l1", "l_cyc", "l_ssim", "l_msssim")


class FeatureExtractorUnavailable(RuntimeError):
    """Raised when a requested feature network cannot be constructed offline."""


class FrozenConvFeatures(nn.Module):
    """Deterministic fallback feature network for the perceptual term.

    Three stride-2 conv stages (3 -> 16 -> 32 -> 64 channels, 3x3 kernels)
    with leaky rectification. Weights are drawn once from a fixed-seed
    generator: each conv weight is gaussian with std sqrt(2 / fan_in) from
    torch.Generator(seed=0) in layer order, biases zero. All parameters are
    frozen; gradients still flow to the inputs.
    """

    STAGE_CHANNELS = (16, 32, 64)

    def __init__(self):
        super().__init__()
        gen = torch.Generator().manual_seed(0)
        layers = []
        in_ch = 3
        for out_ch in self.STAGE_CHANNELS:
            conv = nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1)
            fan_in = in_ch * 9
            with torch.no_grad():
                conv.weight.copy_(
                    torch.randn(conv.weight.shape, generator=gen) * (2.0 / fan_in) ** 0.5
                )
                conv.bias.zero_()
            layers += [conv, nn.LeakyReLU(0.2)]
            in_ch = out_ch
        self.stages = nn.Sequential(*layers)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x):
        return self.stages(x)


def make_feature_extractor(kind: str = "fallback"):
    """Build the feature network for the perceptual term.

    "fallback" is the frozen conv stack above and always works. "vgg19"
    builds the deep classifier features (truncated before the last conv's
    activation) when pretrained weights are already cached locally; it never
    downloads, and raises FeatureExtractorUnavailable with a pointer to the
    fallback otherwise.
    """
    if kind == "fallback":
        return FrozenConvFeatures()
    if kind == "vgg19":
        try:
            import torchvision

            weights = torchvision.models.VGG19_Weights.IMAGENET1K_V1
            # refuse to touch the network: only use an existing local cache
            import os

            hub_dir = torch.hub.get_dir()
            cached = os.path.join(hub_dir, "checkpoints", weights.url.rsplit("/", 1)[-1])
            if not os.path.exists(cached):
                raise FileNotFoundError(cached)
            vgg = torchvision.models.vgg19(weights=weights)
        except Exception as exc:
            raise FeatureExtractorUnavailable(
                "vgg19 feature weights are not available locally; "
                "pass kind='fallback' to use the built-in frozen extractor"
            ) from exc
        features = vgg.features[:35].eval()
        for p in features.parameters():
            p.requires_grad_(False)
        return features
    raise ValueError(f"unknown feature extractor kind {kind!r}")


def perceptual_loss(sr, hr, feature_extractor):
    """Mean absolute distance between feature maps of the two batches.

    With the identity as extractor this reduces to content_l1_loss.
    """
    return torch.mean(torch.abs(feature_extractor(sr) - feature_extractor(hr)))


def content_l1_loss(sr, hr):
    """Mean absolute error over batch and elements."""
    return torch.mean(torch.abs(sr - hr))


def cyclic_loss(lr_rec, lr):
    """Mean absolute error between the reconstructed and original inputs."""
    return torch.mean(torch.abs(lr_rec - lr))


def _forward_diffs(x):
    dh = x[..., 1:, :] - x[..., :-1, :]
    dw = x[..., :, 1:] - x[..., :, :-1]
    return dh, dw


def tv_loss(sr, hr):
    """Mean absolute gap between the forward-difference fields of sr and hr.

    Differences are taken over the valid region only (no wrap or padding);
    the vertical and horizontal maps are averaged element-wise and summed.
    """
    sh, sw = _forward_diffs(sr)
    hh, hw = _forward_diffs(hr)
    return torch.mean(torch.abs(sh - hh)) + torch.mean(torch.abs(sw - hw))


def _softplus_mean(x):
    return F.softplus(x).mean()


def ragan_generator_loss(c_real, c_fake):
    """Relativistic average GAN loss for the generator, from raw logits.

    Logit tensors of any shape are flattened; for patch critics this folds
    batch and spatial positions into one expectation. Stabilized via
    softplus, equal to 2 ln 2 when every logit on both sides shares one value.
    """
    c_real = c_real.flatten()
    c_fake = c_fake.flatten()
    return _softplus_mean(c_real - c_fake.mean()) + _softplus_mean(c_real.mean() - c_fake)


def ragan_discriminator_loss(c_real, c_fake):
    """Mirror image of the generator loss; decays to 0 as the critic wins."""
    c_real = c_real.flatten()
    c_fake = c_fake.flatten()
    return _softplus_mean(c_fake.mean() - c_real) + _softplus_mean(c_fake - c_real.mean())


def ssim_loss(sr, hr):
    """1 - mean SSIM; zero for identical batches, at most 2."""
    return 1.0 - ssim_torch(sr, hr).mean()


def ms_ssim_loss(sr, hr):
    """1 - mean multi-scale SSIM (scale count adapts to the input size)."""
    return 1.0 - ms_ssim_torch(sr, hr).mean()


@dataclass(frozen=True)
class LossWeights:
    """Coefficients of the composite generator objective."""

    w_per: float = 0.0
    w_gan: float = 0.0
    w_tv: float = 0.0
    w_l1: float = 0.0
    w_cyc: float = 0.0
    w_ssim: float = 0.0
    w_msssim: float = 0.0

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def scaled(self, factor: float) -> "LossWeights":
        return LossWeights(**{k: v * factor for k, v in self.as_dict().items()})


# preset ids are part of the CLI contract
PRESETS = {
    # perceptual preset: feature, adversarial, gradient, content, cycle
    "eq3": LossWeights(w_per=1.0, w_gan=1.0, w_tv=1.0, w_l1=10.0, w_cyc=10.0),
    # structural preset: swaps the feature term for the two SSIM terms
    "eq10": LossWeights(w_gan=1.0, w_tv=1.0, w_l1=10.0, w_cyc=10.0, w_ssim=1.0, w_msssim=1.0),
}


def preset_weights(name: str) -> LossWeights:
    if name not in PRESETS:
        raise ValueError(f"unknown loss preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name]


def combine_terms(terms: dict, weights: LossWeights):
    """Weighted sum of a term dict; linear in the weights by construction."""
    w = weights.as_dict()
    total = None
    for name in TERM_NAMES:
        contrib = w["w" + name[1:]] * terms[name]
        total = contrib if total is None else total + contrib
    return total


def composite_generator_loss(
    sr,
    hr,
    weights: LossWeights,
    *,
    lr=None,
    lr_rec=None,
    hr_real_logits=None,
    hr_fake_logits=None,
    lr_real_logits=None,
    lr_fake_logits=None,
    feature_extractor=None,
):
    """Full generator objective. Returns (total, breakdown).

    ``breakdown`` maps term names to unweighted float values plus "total";
    the returned total is a scalar tensor for backprop. Terms with zero
    weight are skipped (reported as 0.0). The adversarial term needs the HR
    critic logits and, when the cycle branch supplies LR logits as well,
    adds the LR-side relativistic loss into the same term. The cycle term
    needs lr and lr_rec; the feature term needs an extractor.
    """
    zero = sr.new_zeros(())
    terms = {name: zero for name in TERM_NAMES}
    w = weights

    if w.w_per != 0.0:
        if feature_extractor is None:
            raise ValueError("feature term has nonzero weight but no feature_extractor given")
        terms["l_per"] = perceptual_loss(sr, hr, feature_extractor)
    if w.w_gan != 0.0:
        if hr_real_logits is None or hr_fake_logits is None:
            raise ValueError("adversarial term has nonzero weight but HR critic logits are missing")
        gan = ragan_generator_loss(hr_real_logits, hr_fake_logits)
        if lr_real_logits is not None and lr_fake_logits is not None:
            gan = gan + ragan_generator_loss(lr_real_logits, lr_fake_logits)
        terms["l_gan"] = gan
    if w.w_tv != 0.0:
        terms["l_tv"] = tv_loss(sr, hr)
    if w.w_l1 != 0.0:
        terms["l_l1"] = content_l1_loss(sr, hr)
    if w.w_cyc != 0.0 and lr_rec is not None:
        if lr is None:
            raise ValueError("cycle term has lr_rec but no lr")
        terms["l_cyc"] = cyclic_loss(lr_rec, lr)
    if w.w_ssim != 0.0:
        terms["l_ssim"] = ssim_loss(sr, hr)
    if w.w_msssim != 0.0:
        terms["l_msssim"] = ms_ssim_loss(sr, hr)

    total = combine_terms(terms, weights)
    breakdown = {name: float(value.detach()) for name, value in terms.items()}
    breakdown["total"] = float(total.detach())
    return total, breakdown
