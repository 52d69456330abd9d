"""Trainable trajectory denoiser: a 1D UNet over the time axis.

Layout is channel-last (B, T, C). Encoder stages run kernel-3 residual
blocks and halve T between stages with the channel multipliers; a single-head
self-attention over time sits at the bottleneck; the decoder mirrors the
encoder with skip concatenation. The noise level enters through sinusoidal
frequency bands -> MLP; the trajectory start point through a learned affine,
replaced by a learned null vector when the condition is dropped.

The network computes the raw prediction F; the EDM preconditioning wrapper
and the eps-parameterization bridge live in :func:`denoised_estimate` /
:func:`guided_eps`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .diffusion import EdmConfig, edm_coefficients
from .errors import NumericError


@dataclass(frozen=True)
class DenoiserConfig:
    traj_len: int = 48
    channels: int = 2
    hidden_dim: int = 64
    channel_mult: tuple = (1, 2, 2, 2)
    blocks_per_stage: int = 2
    freq_bands: int = 64
    cond_drop_prob: float = 0.1
    guidance_scale: float = 3.0
    norm_groups: int = 8
    channel_mult_emb: int = 4
    channels_per_head: int = 64  # recorded; attention is single-head at the bottleneck

    def __post_init__(self):
        factor = 2 ** (len(self.channel_mult) - 1)
        if self.traj_len % factor:
            raise ValueError(
                f"traj_len {self.traj_len} must be divisible by {factor} "
                f"(2**(len(channel_mult)-1))"
            )
        for m in self.channel_mult:
            if (self.hidden_dim * m) % self.norm_groups:
                raise ValueError("stage channels must be divisible by norm_groups")
        if not 0 <= self.cond_drop_prob < 1:
            raise ValueError("cond_drop_prob must be in [0, 1)")

    @property
    def stage_channels(self) -> tuple:
        return tuple(self.hidden_dim * m for m in self.channel_mult)

    @property
    def emb_dim(self) -> int:
        return self.hidden_dim * self.channel_mult_emb

    def to_json(self) -> dict:
        return {
            "traj_len": self.traj_len,
            "channels": self.channels,
            "hidden_dim": self.hidden_dim,
            "channel_mult": list(self.channel_mult),
            "blocks_per_stage": self.blocks_per_stage,
            "freq_bands": self.freq_bands,
            "cond_drop_prob": self.cond_drop_prob,
            "guidance_scale": self.guidance_scale,
            "norm_groups": self.norm_groups,
            "channel_mult_emb": self.channel_mult_emb,
            "channels_per_head": self.channels_per_head,
        }

    @classmethod
    def from_json(cls, d: dict) -> "DenoiserConfig":
        d = dict(d)
        d["channel_mult"] = tuple(d["channel_mult"])
        return cls(**d)


def desk_config() -> DenoiserConfig:
    """CI-default scale: hidden 64 instead of the full-scale 128."""
    return DenoiserConfig(hidden_dim=64)


def full_scale_config() -> DenoiserConfig:
    return DenoiserConfig(hidden_dim=128)


def tiny_config() -> DenoiserConfig:
    """Small enough for exhaustive finite-difference gradient checks."""
    return DenoiserConfig(
        traj_len=8,
        hidden_dim=8,
        channel_mult=(1, 2),
        blocks_per_stage=1,
        freq_bands=4,
        norm_groups=4,
        channel_mult_emb=2,
    )


@dataclass(frozen=True)
class Condition:
    """Single-sample conditioning: noise level sigma, start coordinate of the
    trajectory (model units), and the null-condition flag."""

    sigma: float
    start: np.ndarray | None = None
    null: bool = False


class ParamStore:
    """Named flat float arrays; iteration order is fixed at init time."""

    def __init__(self, arrays: dict[str, np.ndarray], seed=None):
        self.arrays = dict(arrays)
        self.seed = seed

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def names(self) -> list[str]:
        return list(self.arrays)

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays.values())

    @property
    def dtype(self):
        return next(iter(self.arrays.values())).dtype

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self.arrays.items()}, self.seed)

    def astype(self, dtype) -> "ParamStore":
        return ParamStore({k: v.astype(dtype) for k, v in self.arrays.items()}, self.seed)

    def check_finite(self) -> None:
        for k, v in self.arrays.items():
            if not np.all(np.isfinite(v)):
                raise NumericError(f"non-finite parameters in {k}")

    def lift(self) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=True) for k, v in self.arrays.items()}

    def freeze(self) -> dict[str, Tensor]:
        return {k: Tensor(v) for k, v in self.arrays.items()}


def _stage_plan(cfg: DenoiserConfig):
    chs = cfg.stage_channels
    levels = len(chs)
    return chs, levels


def init_params(cfg: DenoiserConfig, seed: int, dtype=np.float32) -> ParamStore:
    """Fan-in-scaled Gaussian init; the output head is zero-initialized so the
    raw prediction is exactly 0 before training."""
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}

    def dense(name, fan_in, fan_out, zero=False):
        if zero:
            arrays[f"{name}.w"] = np.zeros((fan_in, fan_out), dtype=dtype)
        else:
            arrays[f"{name}.w"] = (
                rng.normal(0.0, fan_in**-0.5, (fan_in, fan_out)).astype(dtype)
            )
        arrays[f"{name}.b"] = np.zeros(fan_out, dtype=dtype)

    def norm(name, ch):
        arrays[f"{name}.g"] = np.ones(ch, dtype=dtype)
        arrays[f"{name}.b"] = np.zeros(ch, dtype=dtype)

    def res_block(name, c_in, c_out):
        norm(f"{name}.norm1", c_in)
        dense(f"{name}.conv1", 3 * c_in, c_out)
        dense(f"{name}.emb", cfg.emb_dim, c_out)
        norm(f"{name}.norm2", c_out)
        # zero-init the closing conv so every block starts as the identity
        dense(f"{name}.conv2", 3 * c_out, c_out, zero=True)
        if c_in != c_out:
            dense(f"{name}.skip", c_in, c_out)

    emb = cfg.emb_dim
    dense("emb.mlp1", 2 * cfg.freq_bands, emb)
    dense("emb.mlp2", emb, emb)
    dense("emb.start", 2, emb)
    arrays["emb.null"] = np.zeros(emb, dtype=dtype)

    chs, levels = _stage_plan(cfg)
    dense("stem", 3 * cfg.channels, chs[0])
    for lv in range(levels):
        for i in range(cfg.blocks_per_stage):
            res_block(f"enc{lv}.b{i}", chs[lv], chs[lv])
        if lv < levels - 1:
            dense(f"down{lv}", 3 * chs[lv], chs[lv + 1])
    res_block("mid.b0", chs[-1], chs[-1])
    norm("mid.attn.norm", chs[-1])
    for nm in ("q", "k", "v"):
        dense(f"mid.attn.{nm}", chs[-1], chs[-1])
    dense("mid.attn.proj", chs[-1], chs[-1], zero=True)
    res_block("mid.b1", chs[-1], chs[-1])
    for lv in reversed(range(levels)):
        for i in range(cfg.blocks_per_stage):
            res_block(f"dec{lv}.b{i}", 2 * chs[lv], chs[lv])
        if lv > 0:
            dense(f"up{lv}", 3 * chs[lv], chs[lv - 1])
    norm("out.norm", chs[0])
    dense("out", 3 * chs[0], cfg.channels, zero=True)
    return ParamStore(arrays, seed)


# ---------------------------------------------------------------------------
# network application (works on Tensor stores, with or without gradients)
# ---------------------------------------------------------------------------


def _group_norm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int) -> Tensor:
    return ad.group_norm(x, gamma, beta, groups)


def _dense(p, name, x: Tensor) -> Tensor:
    return x @ p[f"{name}.w"] + p[f"{name}.b"]


def _conv(p, name, x: Tensor) -> Tensor:
    return ad.conv1d_k3(x, p[f"{name}.w"], p[f"{name}.b"])


def _res_block(p, name, x: Tensor, emb: Tensor, groups: int) -> Tensor:
    c_in = x.shape[-1]
    h = _conv(p, f"{name}.conv1", ad.silu(_group_norm(x, p[f"{name}.norm1.g"], p[f"{name}.norm1.b"], groups)))
    h = h + _dense(p, f"{name}.emb", ad.silu(emb)).reshape(emb.shape[0], 1, h.shape[-1])
    h = _conv(p, f"{name}.conv2", ad.silu(_group_norm(h, p[f"{name}.norm2.g"], p[f"{name}.norm2.b"], groups)))
    if c_in != h.shape[-1]:
        x = _dense(p, f"{name}.skip", x)
    return x + h


def _attention(p, x: Tensor, groups: int) -> Tensor:
    c = x.shape[-1]
    xn = _group_norm(x, p["mid.attn.norm.g"], p["mid.attn.norm.b"], groups)
    q = _dense(p, "mid.attn.q", xn)
    k = _dense(p, "mid.attn.k", xn)
    v = _dense(p, "mid.attn.v", xn)
    scores = (q @ k.transpose(0, 2, 1)) * (float(c) ** -0.5)
    attn = ad.softmax(scores, axis=-1)
    out = attn @ v
    return x + _dense(p, "mid.attn.proj", out)


def _freq_embedding(c_noise: np.ndarray, bands: int, dtype) -> np.ndarray:
    # geometric frequencies spanning ~3 decades over the c_noise range
    freqs = np.exp(np.linspace(np.log(1.0), np.log(1000.0), bands))
    arg = c_noise[:, None] * freqs[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1).astype(dtype)


def apply_net(
    p: dict[str, Tensor],
    x,
    c_noise: np.ndarray,
    start: np.ndarray | None,
    null_mask: np.ndarray,
    cfg: DenoiserConfig,
) -> Tensor:
    """Raw prediction F of the UNet. ``x`` is (B, T, C); ``c_noise`` (B,);
    ``start`` (B, 2) model-unit coordinates (ignored where null_mask is set).
    """
    dtype = p["stem.w"].dtype
    x = ad.as_tensor(np.asarray(getattr(x, "data", x), dtype=dtype))
    bsz, t, _ = x.shape
    if x.shape[1] != cfg.traj_len or x.shape[2] != cfg.channels:
        raise ValueError(f"input shape {x.shape} does not match config")

    feats = ad.as_tensor(_freq_embedding(np.asarray(c_noise, np.float64), cfg.freq_bands, dtype))
    emb = _dense(p, "emb.mlp2", ad.silu(_dense(p, "emb.mlp1", feats)))
    mask = np.asarray(null_mask, dtype=dtype).reshape(bsz, 1)
    if start is None:
        mask = np.ones((bsz, 1), dtype=dtype)
        start = np.zeros((bsz, 2), dtype=dtype)
    start_emb = _dense(p, "emb.start", ad.as_tensor(np.asarray(start, dtype=dtype)))
    null_emb = p["emb.null"].reshape(1, cfg.emb_dim)
    emb = emb + start_emb * (1.0 - mask) + null_emb * mask

    chs, levels = _stage_plan(cfg)
    g = cfg.norm_groups
    h = _conv(p, "stem", x)
    skips: list[Tensor] = []
    for lv in range(levels):
        for i in range(cfg.blocks_per_stage):
            h = _res_block(p, f"enc{lv}.b{i}", h, emb, g)
            skips.append(h)
        if lv < levels - 1:
            h = _conv(p, f"down{lv}", ad.avg_pool2(h))
    h = _res_block(p, "mid.b0", h, emb, g)
    h = _attention(p, h, g)
    h = _res_block(p, "mid.b1", h, emb, g)
    for lv in reversed(range(levels)):
        for i in range(cfg.blocks_per_stage):
            h = _res_block(p, f"dec{lv}.b{i}", ad.concat([h, skips.pop()], axis=-1), emb, g)
        if lv > 0:
            h = _conv(p, f"up{lv}", ad.upsample2(h))
    h = ad.silu(_group_norm(h, p["out.norm.g"], p["out.norm.b"], g))
    return _conv(p, "out", h)


def forward(params: ParamStore, x_noisy: np.ndarray, cond: Condition, cfg: DenoiserConfig) -> np.ndarray:
    """Raw prediction for one trajectory (T, C) -> (T, C); pure function."""
    x = np.asarray(x_noisy)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    c_noise = np.full(x.shape[0], 0.25 * np.log(cond.sigma))
    start = None if cond.start is None else np.broadcast_to(np.asarray(cond.start), (x.shape[0], 2))
    null_mask = np.full(x.shape[0], 1.0 if cond.null else 0.0)
    out = apply_net(params.freeze(), x, c_noise, start, null_mask, cfg).data
    return out[0] if squeeze else out


def backward(params: ParamStore, loss_builder) -> tuple[float, dict[str, np.ndarray]]:
    """Exact reverse-mode gradients of a scalar loss over every parameter.

    ``loss_builder`` maps a lifted tensor store to a scalar Tensor. Raises
    NumericError naming the first layer with a non-finite gradient.
    """
    tensors = params.lift()
    loss = loss_builder(tensors)
    loss.backward()
    grads = {}
    for name, t in tensors.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name}")
        grads[name] = g
    return float(loss.data), grads


# ---------------------------------------------------------------------------
# EDM preconditioning glue and classifier-free guidance
# ---------------------------------------------------------------------------


def denoised_estimate(
    params: ParamStore,
    cfg: DenoiserConfig,
    x_ve: np.ndarray,
    sigma,
    start: np.ndarray | None,
    null_mask: np.ndarray | None = None,
    edm: EdmConfig | None = None,
) -> np.ndarray:
    """D(x; sigma) = c_skip*x + c_out*F(c_in*x; cond, c_noise) on (B, T, C)."""
    edm = edm or EdmConfig()
    x_ve = np.asarray(x_ve, dtype=np.float64)
    bsz = x_ve.shape[0]
    sig = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (bsz,))
    c_in, c_skip, c_out, c_noise = edm_coefficients(sig, edm.sigma_data)
    if null_mask is None:
        null_mask = np.zeros(bsz)
    f = apply_net(
        params.freeze(),
        x_ve * c_in[:, None, None],
        c_noise,
        start,
        null_mask,
        cfg,
    ).data.astype(np.float64)
    return c_skip[:, None, None] * x_ve + c_out[:, None, None] * f


def guided_eps(
    params: ParamStore,
    cfg: DenoiserConfig,
    x_ve: np.ndarray,
    sigma,
    start: np.ndarray | None,
    w: float = 1.0,
    edm: EdmConfig | None = None,
) -> np.ndarray:
    """eps_hat = eps_null + w * (eps_cond - eps_null) in the VE frame.

    w = 1 is the pure conditional model, w = 0 the unconditional one. When no
    start point is given, the conditional pass is skipped (w irrelevant).
    """
    edm = edm or EdmConfig()
    x_ve = np.asarray(x_ve, dtype=np.float64)
    bsz = x_ve.shape[0]
    sig = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (bsz,))

    def eps_from(d):
        return (x_ve - d) / sig[:, None, None]

    if start is None:
        d_null = denoised_estimate(params, cfg, x_ve, sig, None, np.ones(bsz), edm)
        return eps_from(d_null)
    if w == 1.0:
        d_cond = denoised_estimate(params, cfg, x_ve, sig, start, np.zeros(bsz), edm)
        return eps_from(d_cond)
    # one doubled-batch pass: rows [0:B] conditional, [B:2B] null
    start2 = np.concatenate([start, start])
    mask2 = np.concatenate([np.zeros(bsz), np.ones(bsz)])
    d2 = denoised_estimate(
        params, cfg, np.concatenate([x_ve, x_ve]), np.concatenate([sig, sig]),
        start2, mask2, edm,
    )
    eps_cond, eps_null = eps_from(d2[:bsz]), eps_from(d2[bsz:])
    return eps_null + w * (eps_cond - eps_null)
