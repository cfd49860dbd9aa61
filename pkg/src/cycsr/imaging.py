"""Image tensors, PNG I/O, geometric transforms and patch extraction.

An image is a float32 numpy array of shape (C, H, W) with values in [0, 1]
and C in {1, 3}. Files on disk are 8-bit PNGs; quantization is round(v * 255)
on save and v / 255 on load, so save(load(p)) reproduces p byte for byte.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage


class UnsupportedImageError(ValueError):
    """Raised for non-PNG files and bit depths other than 8-bit."""


def validate_image(arr, name: str = "image", check_range: bool = True):
    """Check the (C, H, W) float [0, 1] contract; raises ValueError.

    ``check_range=False`` skips the [0, 1] bound for linear intermediates
    that are clipped later (pre-clip resampling output and the like).
    """
    if not isinstance(arr, np.ndarray):
        raise ValueError(f"{name}: expected numpy array, got {type(arr).__name__}")
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise ValueError(f"{name}: expected shape (1|3, H, W), got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.floating):
        raise ValueError(f"{name}: expected float dtype, got {arr.dtype}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name}: contains non-finite values")
    if check_range and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(
            f"{name}: values outside [0, 1] (min {arr.min():.4g}, max {arr.max():.4g}); "
            "clip before passing"
        )


def load_image(path) -> np.ndarray:
    """Load an 8-bit RGB or grayscale PNG as float32 (C, H, W) in [0, 1].

    Raises FileNotFoundError for missing files and UnsupportedImageError for
    other formats or bit depths.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with PILImage.open(path) as img:
        if img.format != "PNG":
            raise UnsupportedImageError(f"{path}: only PNG input is supported, got {img.format}")
        if img.mode not in ("RGB", "L"):
            # covers palette, RGBA, and 16-bit integer modes
            raise UnsupportedImageError(
                f"{path}: only 8-bit RGB or grayscale PNGs are supported, got mode {img.mode}"
            )
        arr = np.asarray(img, dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    else:
        arr = arr.transpose(2, 0, 1)
    return (arr.astype(np.float32)) / 255.0


def save_image(arr, path):
    """Write an image to disk as an 8-bit PNG, quantizing with round(v * 255).

    The caller must pass values already inside [0, 1]; out-of-range input is
    an error rather than a silent clip.
    """
    validate_image(arr, name=str(path))
    q = np.round(arr.astype(np.float64) * 255.0).astype(np.uint8)
    if q.shape[0] == 1:
        pil = PILImage.fromarray(q[0], mode="L")
    else:
        pil = PILImage.fromarray(q.transpose(1, 2, 0), mode="RGB")
    pil.save(path, format="PNG")


def image_to_bytes(arr) -> bytes:
    """PNG-encode an image and return the file bytes (used by determinism tests)."""
    validate_image(arr)
    buf = io.BytesIO()
    q = np.round(arr.astype(np.float64) * 255.0).astype(np.uint8)
    if q.shape[0] == 1:
        PILImage.fromarray(q[0], mode="L").save(buf, format="PNG")
    else:
        PILImage.fromarray(q.transpose(1, 2, 0), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


@dataclass(frozen=True)
class GeomTransform:
    """One of the 8 axis-aligned symmetries of the image plane.

    ``rotation`` counts quarter turns counterclockwise (0..3), applied first;
    ``hflip`` mirrors along the width axis afterwards.
    """

    rotation: int = 0
    hflip: bool = False

    def __post_init__(self):
        if self.rotation not in (0, 1, 2, 3):
            raise ValueError(f"rotation must be in 0..3, got {self.rotation}")

    def inverse(self) -> "GeomTransform":
        # flip-after-rotation elements are their own inverse; pure rotations
        # invert by rotating the remaining quarter turns
        if self.hflip:
            return self
        return GeomTransform(rotation=(4 - self.rotation) % 4, hflip=False)


ALL_TRANSFORMS = tuple(
    GeomTransform(rotation=r, hflip=f) for f in (False, True) for r in range(4)
)

IDENTITY_TRANSFORM = GeomTransform()


def apply_transform(arr: np.ndarray, t: GeomTransform) -> np.ndarray:
    """Apply a GeomTransform to a (C, H, W) array; returns a contiguous copy."""
    out = arr
    if t.rotation:
        out = np.rot90(out, k=t.rotation, axes=(1, 2))
    if t.hflip:
        out = out[:, :, ::-1]
    return np.ascontiguousarray(out)


def apply_transform_torch(x, t: GeomTransform):
    """Same symmetry on a (B, C, H, W) torch tensor (differentiable)."""
    import torch

    out = x
    if t.rotation:
        out = torch.rot90(out, k=t.rotation, dims=(2, 3))
    if t.hflip:
        out = torch.flip(out, dims=(3,))
    return out


def extract_patch_pair(hr, lr, lr_patch: int, scale: int, rng):
    """Cut an aligned (lr_patch, scale * lr_patch) patch pair at a uniform offset.

    ``rng`` is an int seed or a numpy Generator. Offsets are drawn on the LR
    grid and scaled up for the HR crop, so the pair stays pixel-aligned.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    _, lh, lw = lr.shape
    _, hh, hw = hr.shape
    if hh != lh * scale or hw != lw * scale:
        raise ValueError(
            f"pair shapes disagree with scale {scale}: hr {hr.shape[1:]} vs lr {lr.shape[1:]}"
        )
    if lr_patch > lh or lr_patch > lw:
        raise ValueError(f"patch size {lr_patch} exceeds LR dims {(lh, lw)}")
    oy = int(rng.integers(0, lh - lr_patch + 1))
    ox = int(rng.integers(0, lw - lr_patch + 1))
    lr_crop = lr[:, oy : oy + lr_patch, ox : ox + lr_patch].copy()
    hy, hx, hp = oy * scale, ox * scale, lr_patch * scale
    hr_crop = hr[:, hy : hy + hp, hx : hx + hp].copy()
    return lr_crop, hr_crop


def list_pngs(directory):
    """Sorted basenames of the .png files in a directory."""
    names = [n for n in os.listdir(directory) if n.lower().endswith(".png")]
    return sorted(names)
