"""Separable bicubic resampling as explicit weight matrices.

One kernel convention for the whole package: the two-piece cubic with
a = -0.5. Downsampling stretches the kernel by the scale factor so it
anti-aliases; upsampling uses the unit-width kernel. Borders replicate the
edge sample (out-of-range taps fold onto the nearest pixel) and every output
row of weights is normalized to sum to 1, so constants pass through exactly
and the whole resize is a linear map.

Materializing the per-axis weight matrices keeps the operation easy to test
against a dense convolution oracle and makes the same code usable from numpy
(degradation pipeline) and torch (inside the SR generator, where gradients
flow through a constant matrix multiply).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

_A = -0.5


def cubic_kernel(t, a: float = _A):
    """The piecewise cubic interpolation kernel, vectorized over t."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    out = np.zeros_like(t)
    near = t <= 1.0
    far = (t > 1.0) & (t < 2.0)
    out[near] = (a + 2.0) * t[near] ** 3 - (a + 3.0) * t[near] ** 2 + 1.0
    out[far] = a * t[far] ** 3 - 5.0 * a * t[far] ** 2 + 8.0 * a * t[far] - 4.0 * a
    return out


@lru_cache(maxsize=256)
def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) float64 matrix resampling one axis from n_in to n_out.

    Output sample j sits at continuous input coordinate (j + 0.5) * step - 0.5
    with step = n_in / n_out. When step > 1 the kernel support is stretched by
    step (anti-aliasing); otherwise it has the unit support of plain bicubic
    interpolation.
    """
    if n_in < 1 or n_out < 1:
        raise ValueError(f"invalid axis sizes {n_in} -> {n_out}")
    step = n_in / n_out
    stretch = max(step, 1.0)
    support = 2.0 * stretch
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    for j in range(n_out):
        center = (j + 0.5) * step - 0.5
        lo = int(np.floor(center - support)) + 1
        hi = int(np.floor(center + support))
        taps = np.arange(lo, hi + 1)
        weights = cubic_kernel((taps - center) / stretch)
        cols = np.clip(taps, 0, n_in - 1)
        for c, w in zip(cols, weights):
            mat[j, c] += w
        s = mat[j].sum()
        if s == 0.0:
            raise RuntimeError(f"degenerate kernel row at output {j}")
        mat[j] /= s
    mat.setflags(write=False)
    return mat


def resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resample a (C, H, W) float array to (C, out_h, out_w).

    Purely linear; no clipping. Output dtype follows the input.
    """
    c, h, w = arr.shape
    mh = resize_matrix(h, out_h)
    mw = resize_matrix(w, out_w)
    out = mh @ arr.astype(np.float64) @ mw.T
    return out.astype(arr.dtype)


def upsample_torch(x, scale: int):
    """Bicubic upsample of a (B, C, H, W) torch tensor by an integer factor.

    Uses the same weight matrices as the numpy path, applied as constant
    matrix multiplies so autograd passes through. scale = 1 is the identity.
    """
    import torch

    if scale == 1:
        return x
    _, _, h, w = x.shape
    mh = torch.from_numpy(resize_matrix(h, h * scale).copy()).to(x.dtype)
    mw = torch.from_numpy(resize_matrix(w, w * scale).copy()).to(x.dtype)
    return mh @ x @ mw.T
