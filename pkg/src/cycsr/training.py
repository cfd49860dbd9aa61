"""Training loop: alternating critic/generator updates, schedule, resume.

Each iteration samples a fresh batch of aligned patch pairs with an RNG
keyed by (seed, iteration), so a run is bit-reproducible and a resumed run
continues the exact same sample stream. Critics update first on detached
generator outputs, then both generators update on the composite objective.
All four networks share one Adam recipe and one step-decay schedule.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch
from scipy.signal import convolve2d

from . import checkpoint as ckpt
from .imaging import extract_patch_pair, list_pngs, load_image
from .losses import (
    LossWeights,
    composite_generator_loss,
    make_feature_extractor,
    preset_weights,
    ragan_discriminator_loss,
)
from .metrics import psnr as psnr_metric
from .metrics import ssim as ssim_metric
from .models import build_networks, count_parameters, parameter_hash

LOSS_CSV_FIELDS = ("iter", "l_per", "l_gan", "l_tv", "l_l1", "l_cyc", "l_ssim", "l_msssim", "total")

# second-order high-pass kernel for the noise estimator; dividing the
# response by the root of the squared weight sum makes its std equal the
# noise std for iid gaussian input
_HIGHPASS = np.array([[1.0, -2.0, 1.0], [-2.0, 4.0, -2.0], [1.0, -2.0, 1.0]])
_HIGHPASS_NORM = float(np.sqrt((_HIGHPASS ** 2).sum()))

SIGMA_MAX = 50.0
_MAD_TO_STD = 0.6745


def estimate_noise_sigma(img: np.ndarray) -> float:
    """Robust per-image noise level in 8-bit units, clamped to [0, 50].

    Median absolute deviation of the normalized high-pass response, pooled
    over all channels, scaled to the gaussian std. Insensitive to constant
    offsets and linear ramps (the kernel annihilates both).
    """
    if img.ndim != 3:
        raise ValueError(f"expected (C, H, W), got {img.shape}")
    responses = [
        convolve2d(img[c].astype(np.float64), _HIGHPASS, mode="valid") / _HIGHPASS_NORM
        for c in range(img.shape[0])
    ]
    d = np.concatenate([r.ravel() for r in responses])
    sigma = float(np.median(np.abs(d)) / _MAD_TO_STD * 255.0)
    return min(max(sigma, 0.0), SIGMA_MAX)


def estimate_noise_sigma_batch(y) -> list:
    """Noise levels for a (B, C, H, W) tensor, one float per image."""
    arr = y.detach().cpu().numpy()
    return [estimate_noise_sigma(arr[i]) for i in range(arr.shape[0])]


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run depends on; YAML keys mirror these names."""

    scale: int = 4
    tiny: bool = False
    cyclic_path: bool = True
    preset: str = "eq3"
    batch_size: int = 16
    lr_patch: int = 32
    total_iters: int = 51000
    base_lr: float = 1e-4
    lr_factor: float = 0.5
    milestones: tuple = (5000, 10000, 20000, 30000)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 5000
    feature_extractor: str = "fallback"

    def __post_init__(self):
        if self.batch_size < 1 or self.lr_patch < 4 or self.total_iters < 1:
            raise ValueError("batch_size, lr_patch and total_iters must be positive")
        if self.scale not in (1, 2, 4):
            raise ValueError(f"scale must be 1, 2 or 4; got {self.scale}")
        if self.cyclic_path and self.scale != 4:
            raise ValueError("the cyclic path fixes the scale at 4")
        preset_weights(self.preset)
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))

    @staticmethod
    def desk(**overrides) -> "TrainConfig":
        """Small preset that trains in minutes on a CPU."""
        base = dict(
            tiny=True,
            batch_size=4,
            lr_patch=16,
            total_iters=200,
            log_every=5,
            checkpoint_every=100,
        )
        base.update(overrides)
        return TrainConfig(**base)


def load_train_config(path=None, overrides: dict | None = None) -> TrainConfig:
    """Build a config from an optional YAML file plus override values.

    The file must be a flat mapping whose keys are TrainConfig field names;
    overrides (typically CLI flags) win over file values.
    """
    import yaml

    values: dict = {}
    if path is not None:
        with open(path) as f:
            loaded = yaml.safe_load(f) or {}
        if not isinstance(loaded, dict):
            raise ValueError(f"{path}: expected a flat key-value mapping")
        values.update(loaded)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    valid = set(TrainConfig.__dataclass_fields__)
    unknown = set(values) - valid
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)}; valid keys: {sorted(valid)}")
    if "milestones" in values:
        values["milestones"] = tuple(int(m) for m in values["milestones"])
    return TrainConfig(**values)


def lr_at(config: TrainConfig, iteration: int) -> float:
    """Step-decay schedule: the base rate halves as each milestone is reached."""
    passed = sum(1 for m in config.milestones if iteration >= m)
    return config.base_lr * config.lr_factor ** passed


@dataclass
class TrainState:
    iteration: int = 0
    current_lr: float = 0.0
    best_total: float = math.inf
    best_iteration: int = -1
    smoothed_total: float = math.nan


NETWORK_NAMES = ("gsr", "dx", "glr", "dy")


class TrainSession:
    """Live training state: the four networks, their optimizers, weights."""

    def __init__(self, config: TrainConfig, networks, optimizers, state: TrainState):
        self.config = config
        self.networks = networks
        self.optimizers = optimizers
        self.state = state
        self.weights: LossWeights = preset_weights(config.preset)
        self._phi = None

    @property
    def feature_extractor(self):
        if self._phi is None and self.weights.w_per != 0.0:
            self._phi = make_feature_extractor(self.config.feature_extractor)
        return self._phi

    @staticmethod
    def create(config: TrainConfig) -> "TrainSession":
        torch.manual_seed(config.seed)
        networks = build_networks(tiny=config.tiny, scale=config.scale)
        optimizers = {
            name: torch.optim.Adam(
                net.parameters(),
                lr=config.base_lr,
                betas=(config.adam_beta1, config.adam_beta2),
                eps=config.adam_eps,
                weight_decay=0.0,
            )
            for name, net in networks.items()
        }
        return TrainSession(config, networks, optimizers, TrainState())

    # ---- persistence ----

    def save(self, path):
        tensors = {}
        for name, net in self.networks.items():
            tensors.update(ckpt.module_tensors(net, f"model.{name}"))
        for name, net in self.networks.items():
            opt = self.optimizers[name]
            for pname, p in net.named_parameters():
                st = opt.state.get(p)
                if not st:
                    continue
                key = f"optim.{name}.{pname}"
                tensors[key + ".exp_avg"] = st["exp_avg"].detach().cpu().numpy()
                tensors[key + ".exp_avg_sq"] = st["exp_avg_sq"].detach().cpu().numpy()
                tensors[key + ".step"] = np.asarray(float(st["step"]), dtype=np.float64)
        meta = {
            "kind": "train-session",
            "train_config": asdict(self.config),
            "state": asdict(self.state),
        }
        ckpt.save_checkpoint(path, meta, tensors)

    @staticmethod
    def load(path) -> "TrainSession":
        meta, tensors = ckpt.load_checkpoint(path)
        if meta.get("kind") != "train-session":
            raise ckpt.CheckpointError(f"{path}: not a training checkpoint")
        config = TrainConfig(**{**meta["train_config"], "milestones": tuple(meta["train_config"]["milestones"])})
        session = TrainSession.create(config)
        for name, net in session.networks.items():
            ckpt.load_module_tensors(net, f"model.{name}", tensors)
        for name, net in session.networks.items():
            opt = session.optimizers[name]
            for pname, p in net.named_parameters():
                key = f"optim.{name}.{pname}"
                if key + ".exp_avg" in tensors:
                    opt.state[p] = {
                        "step": torch.tensor(float(tensors[key + ".step"]), dtype=torch.float32),
                        "exp_avg": torch.from_numpy(tensors[key + ".exp_avg"].copy()),
                        "exp_avg_sq": torch.from_numpy(tensors[key + ".exp_avg_sq"].copy()),
                    }
        st = meta["state"]
        session.state = TrainState(**st)
        return session


def _set_lr(optimizers, value):
    for opt in optimizers.values():
        for group in opt.param_groups:
            group["lr"] = value


def train_step(session: TrainSession, y, x) -> dict:
    """One alternating update on a batch (y: LR, x: HR). Returns the loss
    breakdown. Raises RuntimeError with the full breakdown if any term goes
    non-finite."""
    cfg = session.config
    state = session.state
    weights = session.weights
    nets = session.networks
    opts = session.optimizers

    lr_now = lr_at(cfg, state.iteration)
    _set_lr(opts, lr_now)

    sigma_hat = estimate_noise_sigma_batch(y)
    sr = nets["gsr"](y, sigma_hat)
    lr_rec = nets["glr"](sr) if cfg.cyclic_path else None
    adversarial = weights.w_gan != 0.0

    if adversarial:
        # critics first, on detached generator outputs
        opts["dx"].zero_grad()
        dx_loss = ragan_discriminator_loss(nets["dx"](x), nets["dx"](sr.detach()))
        dx_loss.backward()
        opts["dx"].step()
        if cfg.cyclic_path:
            opts["dy"].zero_grad()
            dy_loss = ragan_discriminator_loss(nets["dy"](y), nets["dy"](lr_rec.detach()))
            dy_loss.backward()
            opts["dy"].step()

    opts["gsr"].zero_grad()
    opts["glr"].zero_grad()
    gan_kwargs = {}
    if adversarial:
        gan_kwargs["hr_real_logits"] = nets["dx"](x)
        gan_kwargs["hr_fake_logits"] = nets["dx"](sr)
        if cfg.cyclic_path:
            gan_kwargs["lr_real_logits"] = nets["dy"](y)
            gan_kwargs["lr_fake_logits"] = nets["dy"](lr_rec)
    total, breakdown = composite_generator_loss(
        sr,
        x,
        weights,
        lr=y,
        lr_rec=lr_rec,
        feature_extractor=session.feature_extractor if weights.w_per != 0.0 else None,
        **gan_kwargs,
    )
    if not all(math.isfinite(v) for v in breakdown.values()):
        raise RuntimeError(f"non-finite loss at iteration {state.iteration}: {breakdown}")
    if total.requires_grad:
        total.backward()
        opts["gsr"].step()
        if cfg.cyclic_path:
            opts["glr"].step()

    state.current_lr = lr_now
    if math.isnan(state.smoothed_total):
        state.smoothed_total = breakdown["total"]
    else:
        state.smoothed_total = 0.9 * state.smoothed_total + 0.1 * breakdown["total"]
    if state.smoothed_total < state.best_total:
        state.best_total = state.smoothed_total
        state.best_iteration = state.iteration
    state.iteration += 1
    return breakdown


# ---- data handling ----


def load_pairs(hr_dir, lr_dir, scale: int):
    """Load aligned (hr, lr) image pairs from two directories.

    For hr file ``{stem}.png`` the LR counterpart is ``{stem}_lr.png`` or,
    failing that, the identical name. Shapes must agree with the scale.
    """
    names = list_pngs(hr_dir)
    if not names:
        raise FileNotFoundError(f"no .png files in {hr_dir}")
    pairs = []
    for name in names:
        stem = os.path.splitext(name)[0]
        candidates = [os.path.join(lr_dir, f"{stem}_lr.png"), os.path.join(lr_dir, name)]
        lr_path = next((p for p in candidates if os.path.exists(p)), None)
        if lr_path is None:
            raise FileNotFoundError(f"no LR counterpart for {name} in {lr_dir}")
        hr = load_image(os.path.join(hr_dir, name))
        lr = load_image(lr_path)
        if hr.shape[1] != lr.shape[1] * scale or hr.shape[2] != lr.shape[2] * scale:
            raise ValueError(
                f"{name}: hr {hr.shape[1:]} is not {scale}x the lr {lr.shape[1:]}"
            )
        pairs.append({"name": stem, "hr": hr, "lr": lr})
    return pairs


def sample_batch(pairs, config: TrainConfig, iteration: int):
    """Draw one batch of patch pairs; fully determined by (seed, iteration)."""
    rng = np.random.default_rng([config.seed, iteration])
    idx = rng.integers(0, len(pairs), size=config.batch_size)
    lrs, hrs = [], []
    for i in idx:
        lr_c, hr_c = extract_patch_pair(
            pairs[i]["hr"], pairs[i]["lr"], config.lr_patch, config.scale, rng
        )
        lrs.append(lr_c)
        hrs.append(hr_c)
    y = torch.from_numpy(np.stack(lrs)).float()
    x = torch.from_numpy(np.stack(hrs)).float()
    return y, x


# ---- the driver ----


def train(config: TrainConfig, hr_dir, lr_dir, out_dir, resume=None, quiet=False):
    """Run (or resume) a full training; returns (final_ckpt_path, csv_path).

    Writes ``loss_log.csv`` (one row per log interval), periodic checkpoints
    at every checkpoint_every iterations and at schedule milestones, and
    ``ckpt_final.ckpt`` at the end.
    """
    os.makedirs(out_dir, exist_ok=True)
    pairs = load_pairs(hr_dir, lr_dir, config.scale)
    if resume is not None:
        session = TrainSession.load(resume)
        # extending the iteration budget is allowed; anything else must match
        if replace(session.config, total_iters=config.total_iters) != config:
            raise ValueError("resume checkpoint was written with a different config")
        session.config = config
    else:
        session = TrainSession.create(config)

    csv_path = os.path.join(out_dir, "loss_log.csv")
    mode = "a" if resume is not None and os.path.exists(csv_path) else "w"
    with open(csv_path, mode, newline="") as csv_file:
        writer = csv.DictWriter(csv_file, fieldnames=LOSS_CSV_FIELDS)
        if mode == "w":
            writer.writeheader()
        while session.state.iteration < config.total_iters:
            i = session.state.iteration
            y, x = sample_batch(pairs, config, i)
            breakdown = train_step(session, y, x)
            if i % config.log_every == 0 or i == config.total_iters - 1:
                row = {"iter": i}
                row.update({k: f"{v:.6f}" for k, v in breakdown.items()})
                writer.writerow(row)
                csv_file.flush()
                if not quiet:
                    print(
                        f"iter={i} lr={session.state.current_lr:g} total={breakdown['total']:.4f}",
                        flush=True,
                    )
            done = session.state.iteration
            if done % config.checkpoint_every == 0 or done in config.milestones:
                if done < config.total_iters:
                    session.save(os.path.join(out_dir, f"ckpt_{done:06d}.ckpt"))

    final_path = os.path.join(out_dir, "ckpt_final.ckpt")
    session.save(final_path)
    return final_path, csv_path


# ---- ablation harness ----

STRUCTURE_STRINGS = {
    False: "lr -> sr_generator -> sr",
    True: "lr -> sr_generator -> sr -> lr_generator -> lr_rec",
}

# improvement observed for the cyclic variant at full training scale,
# recorded for context next to desk-scale numbers (not asserted)
FULL_SCALE_DELTA_PSNR = 1.34
FULL_SCALE_DELTA_SSIM = 0.06


@dataclass
class AblationRow:
    label: str
    cyclic: bool
    structure: str
    optimized_networks: list
    optimized_params: int
    sr_generator_params: int
    psnr: float
    ssim: float


@dataclass
class AblationReport:
    rows: list = field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(
                [
                    "label",
                    "cyclic",
                    "structure",
                    "optimized_networks",
                    "optimized_params",
                    "sr_generator_params",
                    "psnr",
                    "ssim",
                ]
            )
            for r in self.rows:
                writer.writerow(
                    [
                        r.label,
                        int(r.cyclic),
                        r.structure,
                        "+".join(r.optimized_networks),
                        r.optimized_params,
                        r.sr_generator_params,
                        f"{r.psnr:.4f}",
                        f"{r.ssim:.4f}",
                    ]
                )

    def format_table(self) -> str:
        lines = [
            "label      cyclic  psnr_db  ssim    params(opt)  structure",
        ]
        for r in self.rows:
            lines.append(
                f"{r.label:<9}  {'yes' if r.cyclic else 'no ':<6}  {r.psnr:7.3f}  {r.ssim:.4f}  "
                f"{r.optimized_params:>10}  {r.structure}"
            )
        if len(self.rows) == 2:
            d_psnr = self.rows[1].psnr - self.rows[0].psnr
            d_ssim = self.rows[1].ssim - self.rows[0].ssim
            lines.append(
                f"delta (cyclic - no_cycle): {d_psnr:+.3f} dB / {d_ssim:+.4f} ssim "
                f"(full-scale reference: {FULL_SCALE_DELTA_PSNR:+.2f} dB / {FULL_SCALE_DELTA_SSIM:+.2f})"
            )
        return "\n".join(lines)


def _evaluate_session(session: TrainSession, pairs) -> tuple:
    gsr = session.networks["gsr"].eval()
    ps, ss = [], []
    with torch.no_grad():
        for pair in pairs:
            y = torch.from_numpy(pair["lr"]).float().unsqueeze(0)
            sr = gsr(y, [estimate_noise_sigma(pair["lr"])])[0].numpy()
            ps.append(psnr_metric(sr, pair["hr"]))
            ss.append(ssim_metric(sr, pair["hr"]))
    gsr.train()
    finite = [p for p in ps if math.isfinite(p)]
    return (float(np.mean(finite)) if finite else math.inf), float(np.mean(ss))


def run_ablation(config: TrainConfig, hr_dir, lr_dir, out_dir, quiet=True) -> AblationReport:
    """Train the no-cycle and cyclic variants under identical budgets.

    Both variants build all four networks from the same seed; which of them
    actually optimize is verified by hashing trainable parameters before and
    after. Metrics are measured on the training pairs (desk-scale harness).
    """
    report = AblationReport()
    pairs = load_pairs(hr_dir, lr_dir, config.scale)
    for label, cyclic in (("no_cycle", False), ("cyclic", True)):
        cfg = replace(config, cyclic_path=cyclic)
        variant_dir = os.path.join(out_dir, label)
        os.makedirs(variant_dir, exist_ok=True)
        session = TrainSession.create(cfg)
        before = {name: parameter_hash(net) for name, net in session.networks.items()}
        while session.state.iteration < cfg.total_iters:
            y, x = sample_batch(pairs, cfg, session.state.iteration)
            breakdown = train_step(session, y, x)
            if not quiet and session.state.iteration % cfg.log_every == 0:
                print(f"[{label}] iter={session.state.iteration} total={breakdown['total']:.4f}")
        session.save(os.path.join(variant_dir, "ckpt_final.ckpt"))
        after = {name: parameter_hash(net) for name, net in session.networks.items()}
        changed = [name for name in NETWORK_NAMES if before[name] != after[name]]
        mean_psnr, mean_ssim = _evaluate_session(session, pairs)
        report.rows.append(
            AblationRow(
                label=label,
                cyclic=cyclic,
                structure=STRUCTURE_STRINGS[cyclic],
                optimized_networks=changed,
                optimized_params=sum(
                    count_parameters(session.networks[name]) for name in changed
                ),
                sr_generator_params=count_parameters(session.networks["gsr"]),
                psnr=mean_psnr,
                ssim=mean_ssim,
            )
        )
    report.to_csv(os.path.join(out_dir, "ablation.csv"))
    return report
