"""Uniqueness testing and a black-box membership-inference harness.

Similarity search is exact brute force (the desk scale makes O(n*m)
affordable and removes approximation as a confound). The attack protocol is
one concrete distance-feature instantiation: candidates are featurized by
their overlap/distance to the generated set and three in-repo classifiers
are fit on a calibration split; reports label it as such.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .core import GridCity, TrajectoryDataset, loc_to_coord


@dataclass(frozen=True)
class MiaProtocol:
    n_members: int = 500
    n_nonmembers: int = 500
    calibration_fraction: float = 0.5
    k_nn: int = 5
    classifiers: tuple = ("logistic", "svm", "stumps")
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.calibration_fraction < 1:
            raise ValueError("calibration_fraction must be in (0, 1)")
        if self.k_nn < 1:
            raise ValueError("k_nn must be >= 1")


def overlap_ratio(a: np.ndarray, b: np.ndarray) -> float:
    """Fraction of slots where the two trajectories occupy the same cell."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch {a.shape} vs {b.shape}")
    return float(np.mean(a == b))


def overlap_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise overlap ratios, (len(a), len(b)), via the active kernel lane."""
    a = np.ascontiguousarray(a, dtype=np.int32)
    b = np.ascontiguousarray(b, dtype=np.int32)
    return kernels.overlap_counts(a, b) / a.shape[1]


def uniqueness_ecdf(
    gen: TrajectoryDataset,
    real: TrajectoryDataset,
    ks: tuple = (1, 3, 5),
    n_probe: int | None = None,
    seed: int = 0,
) -> dict[int, np.ndarray]:
    """For sampled generated trajectories, the k-th highest overlap ratio
    against the full real set; returns sorted value arrays (ECDF tables)."""
    if len(gen) == 0 or len(real) == 0:
        raise ValueError("datasets must be nonempty")
    locs = gen.locs
    if n_probe is not None and n_probe < len(gen):
        idx = np.random.default_rng(seed).choice(len(gen), n_probe, replace=False)
        locs = gen.locs[np.sort(idx)]
    ratios = overlap_matrix(locs, real.locs)
    order = np.sort(ratios, axis=1)[:, ::-1]
    out = {}
    for k in ks:
        if k > len(real):
            raise ValueError(f"k={k} exceeds real set size {len(real)}")
        out[k] = np.sort(order[:, k - 1])
    return out


def _coord_distance_matrix(a_locs, b_locs, city: GridCity) -> np.ndarray:
    """Mean per-slot Euclidean distance between trajectory pairs."""
    ca = loc_to_coord(city, a_locs)
    cb = loc_to_coord(city, b_locs)
    out = np.empty((a_locs.shape[0], b_locs.shape[0]))
    for i in range(a_locs.shape[0]):
        d = np.sqrt(((ca[i][None, :, :] - cb) ** 2).sum(axis=2))
        out[i] = d.mean(axis=1)
    return out


def mia_features(candidates: np.ndarray, gen: TrajectoryDataset, k: int = 5) -> np.ndarray:
    """Per candidate: [max overlap to gen, mean top-k overlap,
    min coordinate distance, mean of k smallest coordinate distances]."""
    cand = np.atleast_2d(np.asarray(candidates, dtype=np.int32))
    if len(gen) == 0:
        raise ValueError("generated dataset is empty")
    k = min(k, len(gen))
    ov = overlap_matrix(cand, gen.locs)
    ov_sorted = np.sort(ov, axis=1)[:, ::-1]
    dist = _coord_distance_matrix(cand, gen.locs, gen.city)
    d_sorted = np.sort(dist, axis=1)
    return np.stack(
        [
            ov_sorted[:, 0],
            ov_sorted[:, :k].mean(axis=1),
            d_sorted[:, 0],
            d_sorted[:, :k].mean(axis=1),
        ],
        axis=1,
    )


# -- in-repo binary classifiers (fixed, documented hyper-parameters) ---------


class _Standardizer:
    def fit(self, x):
        self.mu = x.mean(axis=0)
        self.sd = np.where(x.std(axis=0) > 0, x.std(axis=0), 1.0)
        return self

    def apply(self, x):
        return (x - self.mu) / self.sd


class LogisticGD:
    """L2-regularized logistic regression by full-batch gradient descent
    (lr 0.1, 500 epochs, lambda 1e-3)."""

    def fit(self, x, y):
        self.std = _Standardizer().fit(x)
        z = self.std.apply(x)
        n, d = z.shape
        w = np.zeros(d)
        b = 0.0
        for _ in range(500):
            p = 1.0 / (1.0 + np.exp(-(z @ w + b)))
            gw = z.T @ (p - y) / n + 1e-3 * w
            gb = (p - y).mean()
            w -= 0.1 * gw
            b -= 0.1 * gb
        self.w, self.b = w, b
        return self

    def predict(self, x):
        z = self.std.apply(x)
        return (z @ self.w + self.b > 0).astype(int)


class LinearSVMGD:
    """Linear max-margin classifier via hinge-loss subgradient descent
    (lr 0.05, 500 epochs, lambda 1e-2)."""

    def fit(self, x, y):
        self.std = _Standardizer().fit(x)
        z = self.std.apply(x)
        n, d = z.shape
        t = 2.0 * y - 1.0
        w = np.zeros(d)
        b = 0.0
        for _ in range(500):
            margin = t * (z @ w + b)
            active = margin < 1
            gw = -(z[active] * t[active, None]).sum(axis=0) / n + 1e-2 * w
            gb = -t[active].sum() / n
            w -= 0.05 * gw
            b -= 0.05 * gb
        self.w, self.b = w, b
        return self

    def predict(self, x):
        z = self.std.apply(x)
        return (z @ self.w + self.b > 0).astype(int)


class StumpEnsemble:
    """AdaBoost over depth-1 threshold stumps (50 rounds, exhaustive
    threshold search per feature via sorted cumulative weights); fully
    deterministic."""

    def __init__(self, n_rounds: int = 50):
        self.n_rounds = n_rounds

    @staticmethod
    def _best_stump(x, t, w):
        n, d = x.shape
        best = (0, 0.0, 1, np.inf)  # feature, threshold, polarity, error
        for j in range(d):
            order = np.argsort(x[:, j], kind="stable")
            vs, ws, ts = x[order, j], w[order], t[order]
            # err(k) for "x > c -> +1" with c below the k smallest values:
            # misclassified = positives among the first k + negatives after
            pos_cum = np.concatenate([[0.0], np.cumsum(ws * (ts > 0))])
            neg_cum = np.concatenate([[0.0], np.cumsum(ws * (ts < 0))])
            err = pos_cum + (neg_cum[-1] - neg_cum)
            # thresholds only between distinct values (plus both extremes)
            valid = np.concatenate([[True], vs[1:] != vs[:-1], [True]])
            cuts = np.concatenate([[vs[0] - 1.0], (vs[1:] + vs[:-1]) / 2.0, [vs[-1] + 1.0]])
            for k in np.nonzero(valid)[0]:
                if err[k] < best[3]:
                    best = (j, float(cuts[k]), 1, float(err[k]))
                if 1.0 - err[k] < best[3]:
                    best = (j, float(cuts[k]), -1, float(1.0 - err[k]))
        return best

    def fit(self, x, y):
        t = 2.0 * y - 1.0
        n = x.shape[0]
        w = np.full(n, 1.0 / n)
        self.stumps = []
        for _ in range(self.n_rounds):
            j, c, pol, err = self._best_stump(x, t, w)
            err = min(max(err, 1e-10), 1 - 1e-10)
            alpha = 0.5 * np.log((1 - err) / err)
            pred = pol * np.where(x[:, j] > c, 1.0, -1.0)
            self.stumps.append((j, c, pol, alpha))
            w = w * np.exp(-alpha * t * pred)
            w /= w.sum()
            if err < 1e-9:
                break
        return self

    def predict(self, x):
        score = np.zeros(x.shape[0])
        for j, c, pol, alpha in self.stumps:
            score += alpha * pol * np.where(x[:, j] > c, 1.0, -1.0)
        return (score > 0).astype(int)


_CLASSIFIERS = {
    "logistic": LogisticGD,
    "svm": LinearSVMGD,
    "stumps": StumpEnsemble,
}


def run_mia(
    protocol: MiaProtocol,
    train_set: TrajectoryDataset,
    holdout_set: TrajectoryDataset,
    gen: TrajectoryDataset,
) -> dict[str, float]:
    """Success rate (accuracy) per classifier at telling members (train)
    from nonmembers (holdout) using features computed against ``gen``."""
    rng = np.random.default_rng(protocol.seed)
    if protocol.n_members > len(train_set) or protocol.n_nonmembers > len(holdout_set):
        raise ValueError("member/nonmember pools smaller than requested")
    mem_idx = rng.choice(len(train_set), protocol.n_members, replace=False)
    non_idx = rng.choice(len(holdout_set), protocol.n_nonmembers, replace=False)
    cand = np.concatenate([train_set.locs[mem_idx], holdout_set.locs[non_idx]])
    labels = np.concatenate([np.ones(protocol.n_members), np.zeros(protocol.n_nonmembers)])
    feats = mia_features(cand, gen, protocol.k_nn)

    order = rng.permutation(len(labels))
    n_cal = int(round(protocol.calibration_fraction * len(labels)))
    cal, ev = order[:n_cal], order[n_cal:]
    if len(np.unique(labels[cal])) < 2 or ev.size == 0:
        raise ValueError("degenerate single-class calibration split")
    results = {}
    for name in protocol.classifiers:
        clf = _CLASSIFIERS[name]().fit(feats[cal], labels[cal])
        results[name] = float((clf.predict(feats[ev]) == labels[ev]).mean())
    return results


def save_privacy_report(
    ecdf: dict[int, np.ndarray], mia: dict[str, float], out_dir, protocol: MiaProtocol
) -> dict:
    """ECDF tables as CSV plus a JSON summary; returns the summary dict."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for k, values in ecdf.items():
        table = np.stack([values, np.arange(1, values.size + 1) / values.size], axis=1)
        np.savetxt(
            out_dir / f"uniqueness_top{k}.csv",
            table,
            delimiter=",",
            fmt="%.10g",
            header="overlap_ratio,ecdf",
        )
    summary = {
        "protocol": "black-box distance-feature membership inference (one concrete instantiation)",
        "mia_success": mia,
        "uniqueness_top1_frac_below_0.4": float(np.mean(ecdf[min(ecdf)] < 0.4)) if ecdf else None,
        "n_members": protocol.n_members,
        "n_nonmembers": protocol.n_nonmembers,
        "k_nn": protocol.k_nn,
        "seed": protocol.seed,
    }
    (out_dir / "privacy_summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    return summary
