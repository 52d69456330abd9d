"""Collaborative noise priors: crowd moving probability, inversion of
rule-sampled transition sequences into noise space, fusion with white noise,
and the rhythmic per-slot batch normalization.

The fused batch has per-element variance above 1 (two noises add); the
rhythmic normalization restores the scale, pinning each slot's batch std to
R_t with mean(R_t) = 1 so total noise energy matches a unit-variance batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import FlowMatrix, GridCity, TrajectoryDataset, loc_to_coord
from .epr import EprParams, sample_transition_batch
from .errors import NumericError

P_FLOOR = 0.05


@dataclass(frozen=True)
class MoveProfile:
    """Per-slot fraction of trajectories that change location next slot."""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        if p.ndim != 1:
            raise ValueError("profile must be a vector")
        if p.min() < 0 or p.max() > 1:
            raise ValueError("profile entries must lie in [0, 1]")
        object.__setattr__(self, "p", p)

    def content_hash(self) -> str:
        import hashlib

        return hashlib.sha256(np.ascontiguousarray(self.p).tobytes()).hexdigest()


@dataclass
class NoisePrior:
    """(B, T, 2) prior tensor plus the provenance that produced it."""

    z: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.float64)
        if z.ndim != 3:
            raise ValueError("prior must be (B, T, C)")
        if not np.all(np.isfinite(z)):
            raise NumericError("noise prior contains non-finite values")
        self.z = z


def moving_probability(ds: TrajectoryDataset) -> MoveProfile:
    """Fraction of trajectories with l_t != l_{t+1} per slot; the final slot
    has no successor and is defined as 0."""
    moved = ds.locs[:, :-1] != ds.locs[:, 1:]
    p = np.zeros(ds.traj_len)
    p[:-1] = moved.mean(axis=0)
    return MoveProfile(p)


def invert_transitions_to_noise(eps_fn, locs: np.ndarray, city: GridCity, affine, sched) -> np.ndarray:
    """Map a (B, T) batch of transition sequences to noise space: cell
    centers -> model units via the dataset affine, then the deterministic
    inverter; returns (B, T, 2)."""
    from .diffusion import inverse_ddim

    values = affine.to_model(loc_to_coord(city, np.asarray(locs)))
    return inverse_ddim(eps_fn, values, sched)


def fuse_noise(z_flow: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """z_p_raw = z_iid + z_flow with fresh standard Gaussian z_iid."""
    z_flow = np.asarray(z_flow, dtype=np.float64)
    return rng.standard_normal(z_flow.shape) + z_flow


def rhythm_scale(profile: MoveProfile, p_floor: float = P_FLOOR) -> np.ndarray:
    """R_t proportional to the floored move probability, mean-1 normalized."""
    p = np.maximum(profile.p, p_floor)
    return p / p.mean()


def rhythmic_batchnorm(
    z_raw: np.ndarray, profile: MoveProfile, p_floor: float = P_FLOOR
) -> np.ndarray:
    """Per slot (and channel): subtract the batch mean, divide by the batch
    std, multiply by R_t. Post-condition: per-slot batch mean 0 and batch
    std exactly R_t (to float precision). Requires batch size >= 2."""
    z = np.asarray(z_raw, dtype=np.float64)
    if z.ndim != 3:
        raise ValueError("expected (B, T, C)")
    bsz = z.shape[0]
    if bsz < 2:
        raise ValueError("rhythmic batchnorm needs a batch of at least 2")
    if profile.p.shape[0] != z.shape[1]:
        raise ValueError("profile length must match the time axis")
    mu = z.mean(axis=0, keepdims=True)
    sd = z.std(axis=0, keepdims=True)
    degenerate = np.nonzero(sd[0] == 0)[0]
    if degenerate.size:
        raise NumericError(f"degenerate batch: zero std at slot {int(degenerate[0])}")
    r = rhythm_scale(profile, p_floor)
    return (z - mu) / sd * r[None, :, None]


def build_noise_prior(
    city: GridCity,
    flows: FlowMatrix,
    epr: EprParams,
    eps_fn_factory,
    sched,
    batch: int,
    seed: int,
    profile: MoveProfile,
    affine,
    ablation: str = "full",
    traj_len: int | None = None,
) -> tuple[NoisePrior, np.ndarray]:
    """Compose the full prior pipeline; returns (prior, start cells).

    ablation='full'      rhythmic_batchnorm(z_iid + invert(x_flow))
    ablation='no_prior'  pure i.i.d. Gaussian batch, rhythmic norm skipped
    ablation='no_fusion' rhythmic_batchnorm(invert(x_flow)), no z_iid

    ``eps_fn_factory(start_cells) -> eps_fn`` builds the inversion operator
    conditioned on the sampled homes. Start cells are the transition
    sequences' slot-0 cells ('full'/'no_fusion') or population draws
    ('no_prior'); the caller conditions generation on them so prior and
    condition stay consistent.
    """
    if ablation not in ("full", "no_prior", "no_fusion"):
        raise ValueError(f"unknown ablation {ablation!r}")
    traj_len = traj_len or profile.p.shape[0]
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0x9E,)))
    provenance = {
        "seed": seed,
        "ablation": ablation,
        "flow_hash": flows.content_hash(),
        "profile_hash": profile.content_hash(),
        "batch": batch,
    }
    if ablation == "no_prior":
        from .epr import population_cdf

        z = rng.standard_normal((batch, traj_len, 2))
        starts = np.searchsorted(
            population_cdf(city), rng.random(batch), side="right"
        ).astype(np.int32)
        return NoisePrior(z, provenance), starts

    x_flow = sample_transition_batch(
        city, flows, epr, batch, seed, profile.p, traj_len
    )
    starts = x_flow[:, 0].copy()
    eps_fn = eps_fn_factory(starts)
    z_flow = invert_transitions_to_noise(eps_fn, x_flow, city, affine, sched)
    z_raw = fuse_noise(z_flow, rng) if ablation == "full" else z_flow
    z = rhythmic_batchnorm(z_raw, profile)
    return NoisePrior(z, provenance), starts


def save_prior(prior: NoisePrior, path) -> None:
    """Binary tensor dump (.npy) plus its provenance JSON sidecar."""
    import json
    from pathlib import Path

    path = Path(path)
    if path.suffix != ".npy":
        path = path.with_suffix(path.suffix + ".npy")
    np.save(path, prior.z)
    path.with_suffix(".provenance.json").write_text(
        json.dumps(prior.provenance, sort_keys=True, indent=1) + "\n"
    )


def load_prior(path) -> NoisePrior:
    import json
    from pathlib import Path

    path = Path(path)
    z = np.load(path)
    prov_path = path.with_suffix(".provenance.json")
    provenance = json.loads(prov_path.read_text()) if prov_path.exists() else {}
    return NoisePrior(z, provenance)
