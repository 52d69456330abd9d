"""Noise-trajectory correlation studies on a trained model: per-move
direction and distance regressions between real displacements and their
inverted-noise counterparts, and the per-slot noise-variance rhythm.

Moves are slot pairs with a location change; the noise-space displacement is
the raw vector difference of the corresponding inverted-noise rows. Angle
pairs are unwrapped by choosing the noise-angle representative within pi of
its real angle, so no residual exceeds pi.
"""

from __future__ import annotations


from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import TrajectoryDataset, write_sidecar
from .noise_prior import moving_probability


@dataclass(frozen=True)
class RegressionResult:
    slope: float
    intercept: float
    r_squared: float
    n_points: int

    def __post_init__(self):
        if self.n_points < 3:
            raise ValueError("regression needs at least 3 points")

    def to_json(self) -> dict:
        return asdict(self)


def ols(x: np.ndarray, y: np.ndarray) -> RegressionResult:
    """Ordinary least squares y = a + b x with R^2 clamped to [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size or x.size < 3:
        raise ValueError("need >= 3 paired points")
    xm, ym = x.mean(), y.mean()
    sxx = ((x - xm) ** 2).sum()
    if sxx == 0:
        raise ValueError("degenerate regressor (zero variance)")
    slope = ((x - xm) * (y - ym)).sum() / sxx
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    sst = ((y - ym) ** 2).sum()
    r2 = 0.0 if sst == 0 else 1.0 - float((resid**2).sum() / sst)
    return RegressionResult(float(slope), float(intercept), float(min(max(r2, 0.0), 1.0)), x.size)


def invert_dataset(eps_fn, ds: TrajectoryDataset, sched, n_max: int | None = None, seed: int = 0):
    """Invert (a subset of) the dataset; returns (locs, z) with z (B, T, 2)."""
    from .noise_prior import invert_transitions_to_noise

    locs = ds.locs
    if n_max is not None and n_max < len(ds):
        idx = np.sort(np.random.default_rng(seed).choice(len(ds), n_max, replace=False))
        locs = locs[idx]
    z = invert_transitions_to_noise(eps_fn, locs, ds.city, ds.affine, sched)
    return locs, z


def _move_pairs(locs: np.ndarray, z: np.ndarray, city):
    from .core import loc_to_coord

    coords = loc_to_coord(city, locs)
    moved = locs[:, :-1] != locs[:, 1:]
    real_vec = (coords[:, 1:] - coords[:, :-1])[moved]
    noise_vec = (z[:, 1:] - z[:, :-1])[moved]
    return real_vec, noise_vec


def unwrap_angles(real_angle: np.ndarray, noise_angle: np.ndarray) -> np.ndarray:
    """Shift each noise angle by a multiple of 2*pi to land within pi of its
    paired real angle."""
    delta = np.mod(noise_angle - real_angle + np.pi, 2.0 * np.pi) - np.pi
    return real_angle + delta


def direction_regression_from(locs: np.ndarray, z: np.ndarray, city) -> RegressionResult:
    real_vec, noise_vec = _move_pairs(locs, z, city)
    if real_vec.shape[0] < 3:
        raise ValueError("fewer than 3 moves in the dataset")
    real_angle = np.arctan2(real_vec[:, 1], real_vec[:, 0])
    noise_angle = np.arctan2(noise_vec[:, 1], noise_vec[:, 0])
    return ols(real_angle, unwrap_angles(real_angle, noise_angle))


def distance_regression_from(locs: np.ndarray, z: np.ndarray, city) -> RegressionResult:
    real_vec, noise_vec = _move_pairs(locs, z, city)
    if real_vec.shape[0] < 3:
        raise ValueError("fewer than 3 moves in the dataset")
    real_len = np.sqrt((real_vec**2).sum(axis=1))
    noise_len = np.sqrt((noise_vec**2).sum(axis=1))
    return ols(real_len, noise_len)


def direction_regression(eps_fn, ds, sched, n_max: int | None = 512, seed: int = 0) -> RegressionResult:
    locs, z = invert_dataset(eps_fn, ds, sched, n_max, seed)
    return direction_regression_from(locs, z, ds.city)


def distance_regression(eps_fn, ds, sched, n_max: int | None = 512, seed: int = 0) -> RegressionResult:
    locs, z = invert_dataset(eps_fn, ds, sched, n_max, seed)
    return distance_regression_from(locs, z, ds.city)


def variance_rhythm_from(ds: TrajectoryDataset, z: np.ndarray):
    """(per-slot noise variance, Pearson correlation with the move profile);
    the correlation is None when either series is constant."""
    var_t = z.var(axis=(0, 2))
    profile = moving_probability(ds).p
    if var_t.std() == 0 or profile.std() == 0:
        return var_t, None
    corr = float(np.corrcoef(var_t, profile)[0, 1])
    return var_t, corr


def variance_rhythm(eps_fn, ds, sched, n_max: int | None = 512, seed: int = 0):
    _, z = invert_dataset(eps_fn, ds, sched, n_max, seed)
    return variance_rhythm_from(ds, z)


def export_noise_vectors(eps_fn, ds, sched, path, n_max: int | None = None, seed: int = 0) -> Path:
    """Flattened inverted-noise vectors with trajectory metadata, CSV: one
    row per trajectory (home cell, then z flattened time-major)."""
    locs, z = invert_dataset(eps_fn, ds, sched, n_max, seed)
    path = Path(path)
    flat = z.reshape(z.shape[0], -1)
    table = np.concatenate([locs[:, :1].astype(np.float64), flat], axis=1)
    cols = ["home"] + [f"z{t}{ax}" for t in range(z.shape[1]) for ax in ("x", "y")]
    np.savetxt(path, table, delimiter=",", fmt="%.10g", header=",".join(cols), comments="")
    write_sidecar(path, seed, {"n_rows": int(flat.shape[0])})
    return path


def analyze_all(eps_fn, ds, sched, n_max: int | None = 512, seed: int = 0, scatter_path=None) -> dict:
    """Run the three studies on one shared inversion; optional per-move
    scatter CSV (real angle/distance vs noise angle/distance)."""
    locs, z = invert_dataset(eps_fn, ds, sched, n_max, seed)
    direction = direction_regression_from(locs, z, ds.city)
    distance = distance_regression_from(locs, z, ds.city)
    var_t, corr = variance_rhythm_from(
        TrajectoryDataset(ds.city, locs, ds.split_tag, ds.affine), z
    )
    if scatter_path is not None:
        real_vec, noise_vec = _move_pairs(locs, z, ds.city)
        ra = np.arctan2(real_vec[:, 1], real_vec[:, 0])
        na = unwrap_angles(ra, np.arctan2(noise_vec[:, 1], noise_vec[:, 0]))
        rl = np.sqrt((real_vec**2).sum(axis=1))
        nl = np.sqrt((noise_vec**2).sum(axis=1))
        table = np.stack([ra, na, rl, nl], axis=1)
        np.savetxt(
            scatter_path,
            table,
            delimiter=",",
            fmt="%.10g",
            header="real_angle,noise_angle,real_distance,noise_distance",
            comments="",
        )
    return {
        "direction": direction.to_json(),
        "distance": distance.to_json(),
        "variance_rhythm_corr": corr,
        "per_slot_variance": var_t.tolist(),
        "n_trajectories": int(locs.shape[0]),
    }
