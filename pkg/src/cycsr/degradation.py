"""Synthetic degradation pipeline: downsample, sensor noise, JPEG.

The chain is fixed as anti-aliased bicubic downsampling, then additive
gaussian noise in the float domain, then optional JPEG compression. Noise
levels are quoted in 8-bit units (a sigma of 8 means a standard deviation
of 8/255 on the unit-range image). Every stage is deterministic given the
spec's seed.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage

from .imaging import list_pngs, load_image, save_image, validate_image
from .resample import resize

MANIFEST_FIELDS = ("hr_path", "lr_path", "scale", "sigma", "jpeg_q", "seed")


@dataclass(frozen=True)
class DegradationSpec:
    """Parameters of one degradation run.

    jpeg_quality is None for no compression, else an integer in [1, 100].
    """

    scale: int = 4
    noise_sigma: float = 0.0
    jpeg_quality: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.scale not in (1, 2, 3, 4):
            raise ValueError(f"scale must be one of 1, 2, 3, 4; got {self.scale}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.jpeg_quality is not None and not (1 <= int(self.jpeg_quality) <= 100):
            raise ValueError(f"jpeg_quality must be in [1, 100] or None, got {self.jpeg_quality}")


def bicubic_downsample(img: np.ndarray, scale: int) -> np.ndarray:
    """Anti-aliased bicubic downsample by an integer factor.

    Requires H and W divisible by scale. Linear, unclipped: slight over- and
    undershoot around edges is left to the caller, and input outside [0, 1]
    is accepted (the op is used on pre-clip intermediates too).
    """
    validate_image(img, check_range=False)
    _, h, w = img.shape
    if h % scale or w % scale:
        raise ValueError(f"dims {(h, w)} not divisible by scale {scale}")
    if scale == 1:
        return img.copy()
    return resize(img, h // scale, w // scale)


def add_sensor_noise(img: np.ndarray, sigma: float, rng) -> np.ndarray:
    """Add iid gaussian noise with std sigma/255, then clip to [0, 1].

    sigma = 0 returns the input unchanged without consuming randomness.
    ``rng`` is an int seed or numpy Generator.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return img.copy()
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    noise = rng.normal(0.0, sigma / 255.0, size=img.shape)
    return np.clip(img.astype(np.float64) + noise, 0.0, 1.0).astype(img.dtype)


def jpeg_compress(img: np.ndarray, quality: int) -> np.ndarray:
    """Round-trip an image through the JPEG codec at the given quality.

    Input is clipped and quantized to 8 bits on the way in (the codec works
    on bytes); the decoded result comes back as float in [0, 1].
    """
    if not (1 <= int(quality) <= 100):
        raise ValueError(f"quality must be in [1, 100], got {quality}")
    arr = np.clip(img.astype(np.float64), 0.0, 1.0)
    q8 = np.round(arr * 255.0).astype(np.uint8)
    if q8.shape[0] == 1:
        pil = PILImage.fromarray(q8[0], mode="L")
    else:
        pil = PILImage.fromarray(q8.transpose(1, 2, 0), mode="RGB")
    buf = io.BytesIO()
    pil.save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    with PILImage.open(buf) as decoded:
        out = np.asarray(decoded.convert(pil.mode), dtype=np.uint8)
    if out.ndim == 2:
        out = out[None, :, :]
    else:
        out = out.transpose(2, 0, 1)
    return (out.astype(np.float64) / 255.0).astype(img.dtype)


def degrade(hr: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Apply the full chain to one HR image, returning the LR counterpart."""
    validate_image(hr, "hr")
    out = bicubic_downsample(hr, spec.scale)
    out = np.clip(out, 0.0, 1.0)
    out = add_sensor_noise(out, spec.noise_sigma, np.random.default_rng(spec.seed))
    if spec.jpeg_quality is not None:
        out = jpeg_compress(out, spec.jpeg_quality)
    return out.astype(np.float32)


def degrade_directory(hr_dir, out_dir, spec: DegradationSpec):
    """Degrade every PNG in hr_dir into out_dir, writing a manifest.

    Output files are named ``{stem}_lr.png``. Each image gets its own seed,
    spec.seed + index in sorted filename order, recorded in the manifest so
    any row can be reproduced in isolation. Returns the manifest rows.
    """
    names = list_pngs(hr_dir)
    if not names:
        raise FileNotFoundError(f"no .png files in {hr_dir}")
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for i, name in enumerate(names):
        hr_path = os.path.join(hr_dir, name)
        stem = os.path.splitext(name)[0]
        lr_path = os.path.join(out_dir, f"{stem}_lr.png")
        file_spec = DegradationSpec(
            scale=spec.scale,
            noise_sigma=spec.noise_sigma,
            jpeg_quality=spec.jpeg_quality,
            seed=spec.seed + i,
        )
        lr = degrade(load_image(hr_path), file_spec)
        save_image(lr, lr_path)
        rows.append(
            {
                "hr_path": hr_path,
                "lr_path": lr_path,
                "scale": spec.scale,
                "sigma": spec.noise_sigma,
                "jpeg_q": "off" if spec.jpeg_quality is None else int(spec.jpeg_quality),
                "seed": file_spec.seed,
            }
        )
    manifest_path = os.path.join(out_dir, "manifest.csv")
    with open(manifest_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=MANIFEST_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    return rows
