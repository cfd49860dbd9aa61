"""Applying a trained SR generator: single pass and 8-way self-ensemble."""

from __future__ import annotations

import os

import numpy as np
import torch

from . import checkpoint as ckpt
from .imaging import (
    ALL_TRANSFORMS,
    apply_transform,
    list_pngs,
    load_image,
    save_image,
    validate_image,
)
from .models import GSRConfig, SRGenerator
from .training import estimate_noise_sigma


def load_sr_generator(path) -> SRGenerator:
    """Rebuild the SR generator from a training checkpoint, in eval mode."""
    meta, tensors = ckpt.load_checkpoint(path)
    cfg = meta.get("train_config", {})
    gsr_cfg = GSRConfig.tiny(cfg.get("scale", 4)) if cfg.get("tiny") else GSRConfig(scale=cfg.get("scale", 4))
    model = SRGenerator(gsr_cfg)
    ckpt.load_module_tensors(model, "model.gsr", tensors)
    model.eval()
    return model


def super_resolve(lr: np.ndarray, model: SRGenerator, sigma_hat: float | None = None) -> np.ndarray:
    """Upscale one (C, H, W) image; any H, W >= 3 is accepted.

    Grayscale input is expanded to three channels for the network and
    reduced back afterwards. The noise level is estimated from the input
    unless given explicitly.
    """
    validate_image(lr, "lr")
    gray = lr.shape[0] == 1
    rgb = np.repeat(lr, 3, axis=0) if gray else lr
    if sigma_hat is None:
        sigma_hat = estimate_noise_sigma(rgb)
    with torch.no_grad():
        y = torch.from_numpy(np.ascontiguousarray(rgb)).float().unsqueeze(0)
        sr = model(y, [sigma_hat])[0].numpy()
    if gray:
        sr = sr.mean(axis=0, keepdims=True)
    return sr.astype(np.float32)


def super_resolve_ensemble(lr: np.ndarray, model: SRGenerator) -> np.ndarray:
    """Average the SR results over the 8 axis-aligned symmetries.

    Each variant of the input goes through the network, is mapped back by
    the inverse transform, and the branches are averaged in float before a
    final clip. The branch order is fixed, so the reduction is deterministic.
    """
    validate_image(lr, "lr")
    branches = []
    for t in ALL_TRANSFORMS:
        variant = apply_transform(lr, t)
        sr_t = super_resolve(variant, model)
        branches.append(apply_transform(sr_t, t.inverse()).astype(np.float64))
    out = np.mean(np.stack(branches), axis=0)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _output_name(in_name: str) -> str:
    stem = os.path.splitext(in_name)[0]
    if stem.endswith("_lr"):
        stem = stem[: -len("_lr")]
    return stem + ".png"


def infer_path(in_path, out_path, model, ensemble: bool = False):
    """Super-resolve one PNG file to another."""
    lr = load_image(in_path)
    sr = super_resolve_ensemble(lr, model) if ensemble else super_resolve(lr, model)
    save_image(sr, out_path)


def infer_directory(in_dir, out_dir, model, ensemble: bool = False):
    """Super-resolve every PNG in a directory.

    Output names drop a trailing ``_lr`` so results line up with the source
    images they were degraded from. Returns the list of files written.
    """
    names = list_pngs(in_dir)
    if not names:
        raise FileNotFoundError(f"no .png files in {in_dir}")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name in names:
        out_path = os.path.join(out_dir, _output_name(name))
        infer_path(os.path.join(in_dir, name), out_path, model, ensemble=ensemble)
        written.append(out_path)
    return written
