"""Training loop and end-to-end generation with collaborative noise priors.

Training minimizes the sigma-space objective with conditioning on (noise
level, trajectory start point) and random condition drop. Generation builds
the noise prior per ablation, runs the deterministic sampler with
classifier-free guidance, inverts the dataset affine, and snaps back to the
grid. Both are pure functions of their seeds.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import Checkpoint
from .city import CityGenConfig
from .core import (
    FlowMatrix,
    GridCity,
    TrajectoryDataset,
    loc_to_coord,
    snap_to_grid,
)
from .denoiser import DenoiserConfig, ParamStore, apply_net, guided_eps, init_params
from .diffusion import (
    EdmConfig,
    VpSchedule,
    edm_coefficients,
    make_vp_schedule,
    sample_sigmas,
    sub_schedule,
)
from .epr import EprParams
from .errors import ConfigError, NumericError
from .noise_prior import MoveProfile, build_noise_prior, moving_probability

ABLATIONS = ("full", "no_prior", "no_fusion")


@dataclass(frozen=True)
class TrainConfig:
    # desk defaults sized for a single fast CPU core (~160 s/epoch at the
    # default scale, holdout loss plateaus around epoch 10); larger budgets
    # are plain config changes
    epochs: int = 10
    batch_size: int = 256
    learning_rate: float = 5e-4
    weight_decay: float = 0.03
    optimizer: str = "adam"  # "adam" | "sgd" (momentum SGD)
    momentum: float = 0.9
    patience: int = 3
    holdout_eval_size: int = 512

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class DiffusionConfig:
    k_train: int = 500
    beta_min: float = 1e-4
    beta_max: float = 0.02
    n_sample_steps: int = 50

    def __post_init__(self):
        if self.k_train % self.n_sample_steps:
            raise ValueError("n_sample_steps must divide k_train")


@dataclass(frozen=True)
class GenerateConfig:
    n: int = 1024
    ablation: str = "full"
    guidance: float = 3.0
    chunk: int = 256

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")


@dataclass
class RunConfig:
    seed: int = 0
    n_train: int = 20_000
    n_holdout: int = 5_000
    city: CityGenConfig = field(default_factory=CityGenConfig)
    epr: EprParams = field(default_factory=EprParams)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    edm: EdmConfig = field(default_factory=EdmConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    generate: GenerateConfig = field(default_factory=GenerateConfig)


# ---------------------------------------------------------------------------
# optimizers: momentum SGD and Adam, both with decoupled weight decay and a
# one-cycle learning-rate policy (linear warmup, cosine decay)
# ---------------------------------------------------------------------------


def one_cycle_lr(step: int, total_steps: int, peak: float, warmup_frac: float = 0.1) -> float:
    warm = max(1, int(total_steps * warmup_frac))
    if step < warm:
        return peak * (step + 1) / warm
    frac = (step - warm) / max(1, total_steps - warm)
    return peak * (0.01 + 0.99 * 0.5 * (1.0 + np.cos(np.pi * frac)))


class _Optimizer:
    def __init__(self, params: ParamStore, cfg: TrainConfig, total_steps: int):
        self.params = params
        self.cfg = cfg
        self.total_steps = total_steps
        self.step_count = 0
        self.state = {
            name: {"m": np.zeros_like(a), "v": np.zeros_like(a)}
            for name, a in params.arrays.items()
        }

    def step(self, grads: dict[str, np.ndarray]) -> float:
        cfg = self.cfg
        lr = one_cycle_lr(self.step_count, self.total_steps, cfg.learning_rate)
        self.step_count += 1
        for name, a in self.params.arrays.items():
            g = grads[name].astype(a.dtype)
            st = self.state[name]
            if cfg.optimizer == "sgd":
                st["m"] = cfg.momentum * st["m"] + g
                update = lr * st["m"]
            else:
                b1, b2, eps = 0.9, 0.999, 1e-8
                st["m"] = b1 * st["m"] + (1 - b1) * g
                st["v"] = b2 * st["v"] + (1 - b2) * g * g
                mh = st["m"] / (1 - b1**self.step_count)
                vh = st["v"] / (1 - b2**self.step_count)
                update = lr * mh / (np.sqrt(vh) + eps)
            a -= update + lr * cfg.weight_decay * a
        return lr


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _batch_loss_builder(x0, starts, null_mask, sig, eps, den_cfg, edm):
    """Closure computing the preconditioned squared-error loss as a Tensor."""
    x_noisy = x0 + eps
    c_in, c_skip, c_out, c_noise = edm_coefficients(sig, edm.sigma_data)
    skip_term = c_skip[:, None, None] * x_noisy

    def build(tensors):
        f = apply_net(tensors, x_noisy * c_in[:, None, None], c_noise, starts, null_mask, den_cfg)
        d = f * c_out[:, None, None].astype(f.dtype) + skip_term.astype(f.dtype)
        diff = d - x0.astype(f.dtype)
        return (diff * diff).sum() * (1.0 / x0.shape[0])

    return build


def batch_edm_loss(
    params: ParamStore,
    x0: np.ndarray,
    starts: np.ndarray,
    den_cfg: DenoiserConfig,
    edm: EdmConfig,
    rng: np.random.Generator,
    cond_drop: float = 0.0,
) -> tuple[float, dict | None]:
    """Draw (sigma, eps, condition drops) and evaluate loss plus gradients."""
    from .denoiser import backward

    bsz = x0.shape[0]
    sig = sample_sigmas(rng, bsz, edm)
    eps = rng.standard_normal(x0.shape) * sig[:, None, None]
    null_mask = (rng.random(bsz) < cond_drop).astype(np.float64)
    builder = _batch_loss_builder(x0, starts, null_mask, sig, eps, den_cfg, edm)
    return backward(params, builder)


def eval_edm_loss(
    params: ParamStore,
    x0: np.ndarray,
    starts: np.ndarray,
    den_cfg: DenoiserConfig,
    edm: EdmConfig,
    seed: int,
) -> float:
    """Fixed-noise evaluation loss (same draws each call, so epochs compare)."""
    rng = np.random.default_rng(seed)
    bsz = x0.shape[0]
    sig = sample_sigmas(rng, bsz, edm)
    eps = rng.standard_normal(x0.shape) * sig[:, None, None]
    builder = _batch_loss_builder(x0, starts, np.zeros(bsz), sig, eps, den_cfg, edm)
    loss = builder(params.freeze())
    return float(loss.data)


def train(
    cfg: RunConfig,
    train_ds: TrajectoryDataset,
    holdout_ds: TrajectoryDataset | None = None,
    log_fn=None,
) -> tuple[Checkpoint, dict]:
    """Fit the denoiser; returns (checkpoint, history).

    History records per-epoch mean training loss and the fixed-noise holdout
    loss used for early stopping (patience from the config). Deterministic
    in reproducible mode: all draws derive from cfg.seed.
    """
    t_start = time.time()
    den_cfg, edm = cfg.denoiser, cfg.edm
    if train_ds.affine is None:
        raise ConfigError("train dataset must carry a fitted affine")
    sched = make_vp_schedule(cfg.diffusion.k_train, cfg.diffusion.beta_min, cfg.diffusion.beta_max)
    params = init_params(den_cfg, cfg.seed, dtype=np.float32)

    x_all = train_ds.to_model_units()
    starts_all = x_all[:, 0, :].copy()
    n = x_all.shape[0]
    steps_per_epoch = max(1, n // cfg.train.batch_size)
    total_steps = cfg.train.epochs * steps_per_epoch
    opt = _Optimizer(params, cfg.train, total_steps)

    if holdout_ds is not None:
        hx = holdout_ds.to_model_units()[: cfg.train.holdout_eval_size]
        hstarts = hx[:, 0, :].copy()
    history = {"train_loss": [], "holdout_loss": [], "lr": []}
    best = np.inf
    best_params = params.copy()
    bad_epochs = 0
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(1,)))
    for epoch in range(cfg.train.epochs):
        perm = rng.permutation(n)
        losses = []
        for s in range(steps_per_epoch):
            idx = perm[s * cfg.train.batch_size : (s + 1) * cfg.train.batch_size]
            loss, grads = batch_edm_loss(
                params, x_all[idx], starts_all[idx], den_cfg, edm, rng, den_cfg.cond_drop_prob
            )
            if not np.isfinite(loss):
                raise NumericError(
                    f"training diverged at epoch {epoch} step {s}: loss={loss}"
                )
            lr = opt.step(grads)
            losses.append(loss)
        history["train_loss"].append(float(np.mean(losses)))
        history["lr"].append(lr)
        if holdout_ds is not None:
            hloss = eval_edm_loss(params, hx, hstarts, den_cfg, edm, seed=cfg.seed + 17)
            history["holdout_loss"].append(hloss)
            if hloss < best - 1e-12:
                best, best_params, bad_epochs = hloss, params.copy(), 0
            else:
                bad_epochs += 1
            if bad_epochs > cfg.train.patience:
                break
        if log_fn:
            log_fn(epoch, history)
    final = best_params if holdout_ds is not None else params
    final.check_finite()
    history["wall_seconds"] = round(time.time() - t_start, 3)
    # the in-checkpoint manifest holds only deterministic fields so identical
    # runs produce byte-identical checkpoints
    manifest = {
        "seed": cfg.seed,
        "epochs_run": len(history["train_loss"]),
        "train_loss": history["train_loss"],
        "holdout_loss": history["holdout_loss"],
        "n_train": n,
        "optimizer": cfg.train.optimizer,
        "schedule_hash": sched.content_hash(),
    }
    ckpt = Checkpoint(final, den_cfg, sched, edm, train_ds.affine, manifest)
    return ckpt, history


# ---------------------------------------------------------------------------
# generation (Algorithm: prior sampling, then deterministic denoising)
# ---------------------------------------------------------------------------


def make_guided_eps_fn(ckpt: Checkpoint, sched: VpSchedule, starts_xy: np.ndarray | None, w: float):
    """eps_fn(x_vp, k) evaluating the denoiser through the sigma bridge with
    classifier-free guidance scale w (w = 1 is the pure conditional model)."""

    def eps_fn(x, k):
        a = sched.alpha_bar_at(k)
        sigma = sched.sigma_at(k)
        x_ve = x / np.sqrt(a)
        return guided_eps(ckpt.params, ckpt.denoiser_cfg, x_ve, sigma, starts_xy, w, ckpt.edm)

    return eps_fn


def _chunk_seed(seed: int, chunk_index: int) -> int:
    return int(
        np.random.SeedSequence(entropy=seed, spawn_key=(11, chunk_index)).generate_state(1)[0]
    )


def generate(
    ckpt: Checkpoint,
    city: GridCity,
    flows: FlowMatrix,
    epr: EprParams,
    n: int,
    ablation: str = "full",
    seed: int = 0,
    profile: MoveProfile | None = None,
    train_ds: TrajectoryDataset | None = None,
    guidance: float | None = None,
    n_steps: int | None = None,
    chunk: int = 256,
) -> TrajectoryDataset:
    """Generate n trajectories; pure function of (checkpoint, world, seed,
    ablation). The move profile defaults to the one measured from the
    training dataset (pass either ``profile`` or ``train_ds``)."""
    from .diffusion import ddim_sample

    if n <= 0:
        raise ConfigError("generate: n must be positive")
    if ablation not in ABLATIONS:
        raise ConfigError(f"generate: unknown ablation {ablation!r}")
    if profile is None:
        if train_ds is None:
            raise ConfigError("generate: need a move profile or the training dataset")
        profile = moving_probability(train_ds)
    w = ckpt.denoiser_cfg.guidance_scale if guidance is None else guidance
    steps = n_steps or 50
    sched_s = sub_schedule(ckpt.schedule, steps)
    traj_len = ckpt.denoiser_cfg.traj_len

    def inversion_eps_factory(start_cells):
        # inversion runs at w=1, conditioned on the sequences' own homes
        sxy = ckpt.affine.to_model(loc_to_coord(city, start_cells))
        return make_guided_eps_fn(ckpt, sched_s, sxy, 1.0)

    sizes = [chunk] * (n // chunk) + ([n % chunk] if n % chunk else [])
    if sizes[-1] == 1 and ablation != "no_prior":
        if len(sizes) > 1:
            sizes[-2] -= 1
            sizes[-1] = 2
        else:
            raise ConfigError("generate: rhythmic normalization needs batches of >= 2")
    out = []
    for c_idx, bsz in enumerate(sizes):
        cseed = _chunk_seed(seed, c_idx)
        prior, start_cells = build_noise_prior(
            city, flows, epr, inversion_eps_factory, sched_s, bsz, cseed,
            profile, ckpt.affine, ablation, traj_len,
        )
        starts_xy = ckpt.affine.to_model(loc_to_coord(city, start_cells))
        eps_fn = make_guided_eps_fn(ckpt, sched_s, starts_xy, w)
        x0 = ddim_sample(eps_fn, prior.z, sched_s)
        out.append(snap_to_grid(city, x0, ckpt.affine))
    locs = np.concatenate(out, axis=0)
    return TrajectoryDataset(city, locs, "generated", ckpt.affine)
