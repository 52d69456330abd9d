"""Diffusion mathematics: variance-preserving schedule, forward corruption,
deterministic DDIM sampling and its first-order inversion, and the
sigma-space (EDM-style) training objective with preconditioning.

Two formulations coexist by design: training uses the sigma-space objective,
sampling and inversion run the discrete deterministic DDIM loop; the bridge
between them is the state scaling x_ve = x_vp / sqrt(alpha_bar_k) with
sigma(k) = sqrt((1 - alpha_bar_k) / alpha_bar_k) and the conversion
eps = (x_ve - D) / sigma.

Samplers take an ``eps_fn(x, k) -> eps_hat`` callable so this module stays
independent of any particular denoiser.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import NumericError


@dataclass(frozen=True)
class EdmConfig:
    sigma_data: float = 0.1
    p_mean: float = -1.2
    p_std: float = 1.2

    def __post_init__(self):
        if self.sigma_data <= 0:
            raise ValueError("sigma_data must be positive")


@dataclass(frozen=True)
class VpSchedule:
    """Increasing beta_k in (0,1) with alpha_bar_k = prod(1 - beta_i)."""

    beta: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if beta.ndim != 1 or beta.shape != ab.shape or beta.size < 1:
            raise ValueError("beta and alpha_bar must be equal-length vectors")
        if beta.min() <= 0 or beta.max() >= 1 or np.any(np.diff(beta) <= 0):
            raise ValueError("beta must be strictly increasing within (0, 1)")
        if ab.min() <= 0 or ab.max() >= 1 or np.any(np.diff(ab) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing within (0, 1)")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha_bar", ab)

    @property
    def n_steps(self) -> int:
        return self.beta.size

    def alpha_bar_at(self, k: int) -> float:
        """alpha_bar for k in 0..K with the alpha_bar_0 = 1 convention."""
        if not 0 <= k <= self.n_steps:
            raise ValueError(f"step {k} out of range [0, {self.n_steps}]")
        return 1.0 if k == 0 else float(self.alpha_bar[k - 1])

    def sigma_at(self, k: int) -> float:
        """Equivalent sigma-space noise level of step k (k >= 1)."""
        a = self.alpha_bar_at(k)
        if a >= 1.0:
            raise ValueError("sigma is undefined at alpha_bar = 1 (k = 0)")
        return float(np.sqrt((1.0 - a) / a))

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.beta).tobytes())
        return h.hexdigest()

    def to_json(self) -> dict:
        return {"beta": self.beta.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "VpSchedule":
        beta = np.asarray(d["beta"], dtype=np.float64)
        return cls(beta, np.cumprod(1.0 - beta))


def make_vp_schedule(n_steps: int, beta_min: float = 1e-4, beta_max: float = 0.02) -> VpSchedule:
    """Linearly spaced betas; alpha_bar computed exactly as the running product."""
    if n_steps < 2:
        raise ValueError("n_steps must be >= 2")
    if not 0 < beta_min < beta_max < 1:
        raise ValueError(f"need 0 < beta_min < beta_max < 1, got ({beta_min}, {beta_max})")
    beta = np.linspace(beta_min, beta_max, n_steps)
    return VpSchedule(beta, np.cumprod(1.0 - beta))


def sub_schedule(sched: VpSchedule, n_steps: int) -> VpSchedule:
    """Uniform-stride accelerated schedule ending at the terminal level.

    Selecting every (K/n)-th level keeps beta increasing for the linear
    schedule; sampling/inversion then run over n steps instead of K.
    """
    big_k = sched.n_steps
    if not 1 <= n_steps <= big_k:
        raise ValueError(f"n_steps must be in [1, {big_k}]")
    if big_k % n_steps:
        raise ValueError(f"n_steps {n_steps} must divide the parent schedule size {big_k}")
    idx = np.arange(1, n_steps + 1) * (big_k // n_steps) - 1
    ab = sched.alpha_bar[idx]
    prev = np.concatenate([[1.0], ab[:-1]])
    return VpSchedule(1.0 - ab / prev, ab)


def forward_diffuse(x0: np.ndarray, k: int, z: np.ndarray, sched: VpSchedule) -> np.ndarray:
    """x_k = sqrt(alpha_bar_k) x0 + sqrt(1 - alpha_bar_k) z; caller owns z."""
    x0 = np.asarray(x0, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if z.shape != x0.shape:
        raise ValueError(f"noise shape {z.shape} != data shape {x0.shape}")
    a = sched.alpha_bar_at(k)
    return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * z


def ddim_sigma(sched: VpSchedule, k: int) -> float:
    """Stochastic-step noise scale sigma_k of the ancestral update."""
    a_k = sched.alpha_bar_at(k)
    a_prev = sched.alpha_bar_at(k - 1)
    return float(np.sqrt((1.0 - a_k / a_prev) * (1.0 - a_prev) / (1.0 - a_k)))


def ddim_step(
    x_k: np.ndarray,
    eps_hat: np.ndarray,
    k: int,
    sched: VpSchedule,
    stochastic: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """One reverse update k -> k-1; deterministic (sigma_k = 0) by default."""
    if not 1 <= k <= sched.n_steps:
        raise ValueError(f"step {k} out of range [1, {sched.n_steps}]")
    x_k = np.asarray(x_k, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    a_k = sched.alpha_bar_at(k)
    a_prev = sched.alpha_bar_at(k - 1)
    x0_hat = (x_k - np.sqrt(1.0 - a_k) * eps_hat) / np.sqrt(a_k)
    if stochastic:
        if rng is None:
            raise ValueError("stochastic step needs an rng")
        s = ddim_sigma(sched, k)
        noise = rng.standard_normal(x_k.shape)
        return np.sqrt(a_prev) * x0_hat + np.sqrt(max(1.0 - a_prev - s**2, 0.0)) * eps_hat + s * noise
    return np.sqrt(a_prev) * x0_hat + np.sqrt(1.0 - a_prev) * eps_hat


def inverse_ddim_step(x_prev: np.ndarray, eps_hat: np.ndarray, k: int, sched: VpSchedule) -> np.ndarray:
    """Exact algebraic inverse of the deterministic step for a fixed eps_hat."""
    if not 1 <= k <= sched.n_steps:
        raise ValueError(f"step {k} out of range [1, {sched.n_steps}]")
    a_k = sched.alpha_bar_at(k)
    a_prev = sched.alpha_bar_at(k - 1)
    ratio = np.sqrt(a_k / a_prev)
    return ratio * (np.asarray(x_prev, np.float64) - np.sqrt(1.0 - a_prev) * eps_hat) + np.sqrt(1.0 - a_k) * eps_hat


def _check_finite(x: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(x)):
        bad = int(np.sum(~np.isfinite(x)))
        raise NumericError(f"non-finite values ({bad} entries) at {where}")


def ddim_sample(eps_fn, z_init: np.ndarray, sched: VpSchedule) -> np.ndarray:
    """Deterministic sampler: x_K = z_init, then K..1 reverse steps.

    Bit-deterministic for fixed (z_init, eps_fn, schedule): identical inputs
    give identical outputs, so noise and output correspond one to one.
    """
    x = np.asarray(z_init, dtype=np.float64).copy()
    for k in range(sched.n_steps, 0, -1):
        eps = eps_fn(x, k)
        x = ddim_step(x, eps, k, sched)
        _check_finite(x, f"ddim_sample step k={k}")
    return x


def inverse_ddim(eps_fn, x0: np.ndarray, sched: VpSchedule) -> np.ndarray:
    """First-order inversion of the deterministic sampler.

    Step k-1 -> k evaluates eps_fn at the current state with the source
    level k-1 (the state's own noise level, so the network input stays
    in-distribution; the first step uses level 1 because sigma(0) does not
    exist). ddim_sample(inverse_ddim(x)) ~= x with error shrinking as the
    step count grows.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    for k in range(1, sched.n_steps + 1):
        eps = eps_fn(x, max(k - 1, 1))
        x = inverse_ddim_step(x, eps, k, sched)
        _check_finite(x, f"inverse_ddim step k={k}")
    return x


# ---------------------------------------------------------------------------
# sigma-space training objective with preconditioning
# ---------------------------------------------------------------------------


def edm_coefficients(sigma, sigma_data: float):
    """(c_in, c_skip, c_out, c_noise) for the preconditioned denoiser."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    s2 = sigma**2 + sigma_data**2
    c_in = 1.0 / np.sqrt(s2)
    c_skip = sigma_data**2 / s2
    c_out = sigma * sigma_data / np.sqrt(s2)
    c_noise = 0.25 * np.log(sigma)
    return c_in, c_skip, c_out, c_noise


def edm_precondition(raw_net, x_noisy: np.ndarray, sigma, cond, cfg: EdmConfig) -> np.ndarray:
    """D(x; c, sigma) = c_skip*x + c_out * raw_net(c_in*x, c_noise, cond)."""
    x_noisy = np.asarray(x_noisy, dtype=np.float64)
    bsz = x_noisy.shape[0]
    sig = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (bsz,))
    c_in, c_skip, c_out, c_noise = edm_coefficients(sig, cfg.sigma_data)
    f = raw_net(x_noisy * c_in[:, None, None], c_noise, cond)
    return c_skip[:, None, None] * x_noisy + c_out[:, None, None] * f


def sample_sigmas(rng: np.random.Generator, n: int, cfg: EdmConfig) -> np.ndarray:
    """ln(sigma) ~ Normal(p_mean, p_std**2)."""
    return np.exp(rng.normal(cfg.p_mean, cfg.p_std, n))


def edm_loss(denoise_fn, x0: np.ndarray, rng: np.random.Generator, cfg: EdmConfig):
    """Mean over the batch of ||D(x0 + eps; sigma) - x0||^2, unit weighting.

    ``denoise_fn(x_noisy, sigma) -> D`` may return numpy (evaluation) or an
    autodiff Tensor (training); the loss has the matching type.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    bsz = x0.shape[0]
    sig = sample_sigmas(rng, bsz, cfg)
    eps = rng.standard_normal(x0.shape) * sig[:, None, None]
    d = denoise_fn(x0 + eps, sig)
    diff = d - x0
    return (diff * diff).sum() * (1.0 / bsz)


# ---------------------------------------------------------------------------
# VP <-> sigma-space bridge
# ---------------------------------------------------------------------------


def sigma_of_alpha_bar(alpha_bar: float) -> float:
    return float(np.sqrt((1.0 - alpha_bar) / alpha_bar))


def vp_state_to_ve(x_vp: np.ndarray, alpha_bar: float) -> np.ndarray:
    return np.asarray(x_vp, np.float64) / np.sqrt(alpha_bar)


def eps_from_denoised(x_ve: np.ndarray, denoised: np.ndarray, sigma) -> np.ndarray:
    """eps_hat = (x - D(x; sigma)) / sigma in the sigma-space frame."""
    sigma = np.asarray(sigma, dtype=np.float64)
    return (np.asarray(x_ve, np.float64) - np.asarray(denoised, np.float64)) / sigma


def denoised_from_eps(x_ve: np.ndarray, eps: np.ndarray, sigma) -> np.ndarray:
    """Inverse bridge: D = x - sigma * eps_hat."""
    sigma = np.asarray(sigma, dtype=np.float64)
    return np.asarray(x_ve, np.float64) - sigma * np.asarray(eps, np.float64)


def make_eps_fn(denoised_fn, sched: VpSchedule):
    """Wrap a sigma-space denoiser D(x_ve, sigma) as an eps_fn(x_vp, k)."""

    def eps_fn(x_vp, k):
        a = sched.alpha_bar_at(k)
        sigma = sigma_of_alpha_bar(a)
        x_ve = vp_state_to_ve(x_vp, a)
        return eps_from_denoised(x_ve, denoised_fn(x_ve, sigma), sigma)

    return eps_fn


def ode_sample(denoised_fn, x_init_ve: np.ndarray, sigmas: np.ndarray, heun: bool = True) -> np.ndarray:
    """Optional sigma-space probability-flow integrator (Euler or Heun).

    ``sigmas`` must be decreasing and end at 0; dx/dsigma = (x - D(x)) / sigma.
    """
    sigmas = np.asarray(sigmas, dtype=np.float64)
    if np.any(np.diff(sigmas) >= 0) or sigmas[-1] != 0:
        raise ValueError("sigmas must decrease to exactly 0")
    x = np.asarray(x_init_ve, dtype=np.float64).copy()
    for i in range(sigmas.size - 1):
        s, s_next = sigmas[i], sigmas[i + 1]
        d = (x - denoised_fn(x, s)) / s
        x_next = x + (s_next - s) * d
        if heun and s_next > 0:
            d2 = (x_next - denoised_fn(x_next, s_next)) / s_next
            x_next = x + (s_next - s) * 0.5 * (d + d2)
        x = x_next
        _check_finite(x, f"ode_sample sigma={s_next:.4g}")
    return x
