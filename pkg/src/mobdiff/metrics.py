"""Evaluation statistics: four per-trajectory distributions compared by the
two-sample Kolmogorov-Smirnov statistic, flow agreement (common-part-of-
commuters and filtered mean relative error), and exact-copy diversity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .core import FlowMatrix, GridCity, TrajectoryDataset, flows_from_dataset, loc_to_coord


@dataclass
class MetricReport:
    ks_radius: float
    ks_distance: float
    ks_duration: float
    ks_dailyloc: float
    cpc: float
    mape: float
    diversity: float
    n_real: int
    n_generated: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls(**json.loads(text))


# -- per-trajectory statistics (grid-coordinate units unless km_scale given) --


def radius_of_gyration(traj: np.ndarray, city: GridCity, km_scale: float = 1.0) -> float:
    """Root mean squared distance of the per-slot coordinates to their mean."""
    coords = loc_to_coord(city, np.asarray(traj))
    center = coords.mean(axis=0)
    return float(np.sqrt(((coords - center) ** 2).sum(axis=1).mean())) * km_scale


def travel_distances(traj: np.ndarray, city: GridCity, km_scale: float = 1.0) -> np.ndarray:
    """Euclidean lengths of the moves (consecutive location changes only)."""
    traj = np.asarray(traj)
    coords = loc_to_coord(city, traj)
    moved = traj[:-1] != traj[1:]
    deltas = coords[1:] - coords[:-1]
    return np.sqrt((deltas[moved] ** 2).sum(axis=1)) * km_scale


def durations(traj: np.ndarray) -> np.ndarray:
    """Run lengths (slots) of maximal constant-location segments; all-day
    static trajectories contribute nothing."""
    traj = np.asarray(traj)
    change = np.nonzero(traj[:-1] != traj[1:])[0]
    if change.size == 0:
        return np.empty(0, dtype=np.int64)
    bounds = np.concatenate([[-1], change, [traj.size - 1]])
    return np.diff(bounds)


def dailyloc(traj: np.ndarray) -> int:
    """Number of distinct cells visited in the day."""
    return int(np.unique(np.asarray(traj)).size)


def _is_static(traj: np.ndarray) -> bool:
    return bool(np.all(traj == traj[0]))


def dataset_statistics(ds: TrajectoryDataset, in_km: bool = True) -> dict[str, np.ndarray]:
    """Pooled distributions of the four trajectory statistics.

    Static all-day trajectories are excluded from duration and dailyloc, per
    the stated exclusion rule; distances are reported in km when ``in_km``.
    """
    scale = ds.city.km_per_coord_unit() if in_km else 1.0
    radii, dists, durs, nlocs = [], [], [], []
    for row in ds.locs:
        radii.append(radius_of_gyration(row, ds.city, scale))
        d = travel_distances(row, ds.city, scale)
        if d.size:
            dists.append(d)
        if not _is_static(row):
            durs.append(durations(row))
            nlocs.append(dailyloc(row))
    return {
        "radius": np.asarray(radii, dtype=np.float64),
        "distance": np.concatenate(dists) if dists else np.empty(0),
        "duration": np.concatenate(durs).astype(np.float64) if durs else np.empty(0),
        "dailyloc": np.asarray(nlocs, dtype=np.float64),
    }


# -- two-sample KS -----------------------------------------------------------


def ks_statistic(sample_a, sample_b) -> float:
    """Exact sup |F_a - F_b| over the merged sorted support."""
    a = np.sort(np.asarray(sample_a, dtype=np.float64))
    b = np.sort(np.asarray(sample_b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise ValueError("ks_statistic requires nonempty samples")
    support = np.concatenate([a, b])
    fa = np.searchsorted(a, support, side="right") / a.size
    fb = np.searchsorted(b, support, side="right") / b.size
    return float(np.abs(fa - fb).max())


# -- flow agreement ----------------------------------------------------------


def cpc(fx, fy) -> float:
    """Common part of commuters: 2 * sum(min) / (sum(fx) + sum(fy))."""
    x = fx.counts if isinstance(fx, FlowMatrix) else np.asarray(fx, dtype=np.float64)
    y = fy.counts if isinstance(fy, FlowMatrix) else np.asarray(fy, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    total = x.sum() + y.sum()
    if total == 0:
        raise ValueError("both flow matrices are all-zero")
    return float(2.0 * np.minimum(x, y).sum() / total)


def _row_stochastic(counts: np.ndarray) -> np.ndarray:
    sums = counts.sum(axis=1, keepdims=True)
    out = np.divide(counts, sums, out=np.zeros_like(counts, dtype=np.float64), where=sums > 0)
    return out


def mape(fx, fy, threshold: float = 0.01, normalize: bool = False, aggregate: str = "rows") -> float:
    """Filtered mean relative error between transition-probability rows.

    Inputs are row-stochastic matrices as given (set ``normalize=True`` to
    row-normalize raw counts first). Entries with real probability below
    ``threshold`` are ignored; each qualifying row contributes the mean of
    |real - generated| / real over its qualifying entries, and rows average
    with equal weight (``aggregate="global"`` pools entries instead).
    """
    x = fx.counts if isinstance(fx, FlowMatrix) else np.asarray(fx, dtype=np.float64)
    y = fy.counts if isinstance(fy, FlowMatrix) else np.asarray(fy, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if normalize:
        x = _row_stochastic(x)
        y = _row_stochastic(y)
    mask = x >= threshold
    if not mask.any():
        raise ValueError(f"no entries with real transition probability >= {threshold}")
    err = np.where(mask, np.abs(x - y) / np.where(mask, x, 1.0), 0.0)
    if aggregate == "global":
        return float(err[mask].mean())
    row_counts = mask.sum(axis=1)
    rows = row_counts > 0
    row_err = err.sum(axis=1)[rows] / row_counts[rows]
    return float(row_err.mean())


def diversity(gen: TrajectoryDataset, real: TrajectoryDataset) -> float:
    """Fraction of generated trajectories exactly equal (full cell sequence)
    to some real trajectory; lower means more novel output."""
    if len(gen) == 0:
        raise ValueError("generated dataset is empty")
    real_set = {row.tobytes() for row in np.ascontiguousarray(real.locs)}
    hits = sum(1 for row in np.ascontiguousarray(gen.locs) if row.tobytes() in real_set)
    return hits / len(gen)


def evaluate_all(real: TrajectoryDataset, gen: TrajectoryDataset) -> MetricReport:
    """The full seven-statistic report; KS metrics compare the pooled
    per-trajectory distributions, flow metrics compare transition counts."""
    if real.city.content_hash() != gen.city.content_hash():
        raise ValueError("real and generated datasets use different cities")
    rs = dataset_statistics(real)
    gs = dataset_statistics(gen)
    f_real = flows_from_dataset(real)
    f_gen = flows_from_dataset(gen)
    return MetricReport(
        ks_radius=ks_statistic(rs["radius"], gs["radius"]),
        ks_distance=ks_statistic(rs["distance"], gs["distance"]),
        ks_duration=ks_statistic(rs["duration"], gs["duration"]),
        ks_dailyloc=ks_statistic(rs["dailyloc"], gs["dailyloc"]),
        cpc=cpc(f_real, f_gen),
        mape=mape(f_real, f_gen, normalize=True),
        diversity=diversity(gen, real),
        n_real=len(real),
        n_generated=len(gen),
    )


def dump_distributions(ds: TrajectoryDataset, out_dir, prefix: str) -> list:
    """Per-metric sorted sample CSVs for offline plotting; returns paths."""
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, values in dataset_statistics(ds).items():
        p = out_dir / f"{prefix}_{name}.csv"
        np.savetxt(p, np.sort(values), delimiter=",", fmt="%.10g", header=name)
        paths.append(p)
    return paths
