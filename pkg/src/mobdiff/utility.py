"""First-order Markov next-location probe.

An explicitly labeled stand-in for neural mobility prediction: a transition-
count model with Laplace smoothing, trained on real data, generated data, or
a mixture, then scored by next-slot location accuracy on held-out
trajectories. It measures whether generated data carries the transition
structure a downstream predictor would need, nothing more.
"""

from __future__ import annotations

import numpy as np

from .core import TrajectoryDataset


class MarkovPredictor:
    """argmax_b P(b | a) from smoothed first-order transition counts
    (self-transitions included: the task is next-slot location)."""

    def __init__(self, n_locations: int, laplace: float = 0.1):
        self.n = n_locations
        self.laplace = laplace
        self.counts = np.zeros((self.n, self.n))

    def fit(self, locs: np.ndarray) -> "MarkovPredictor":
        a = locs[:, :-1].ravel().astype(np.int64)
        b = locs[:, 1:].ravel().astype(np.int64)
        self.counts += np.bincount(a * self.n + b, minlength=self.n * self.n).reshape(
            self.n, self.n
        )
        return self

    def predict_next(self, current: np.ndarray) -> np.ndarray:
        smoothed = self.counts + self.laplace
        return smoothed.argmax(axis=1)[np.asarray(current)]

    def accuracy(self, eval_ds: TrajectoryDataset) -> float:
        cur = eval_ds.locs[:, :-1].ravel()
        nxt = eval_ds.locs[:, 1:].ravel()
        return float((self.predict_next(cur) == nxt).mean())


def utility_probe(
    real_train: TrajectoryDataset,
    gen: TrajectoryDataset,
    eval_ds: TrajectoryDataset,
    mix: float,
    seed: int = 0,
) -> dict:
    """Accuracy of the Markov probe trained on a real/generated mixture.

    ``mix`` is the fraction of real trajectories in a training pool the size
    of the real training set; the remainder is filled from generated data
    (truncated if gen is smaller). mix=1 reproduces the real-only baseline.
    """
    if not 0 <= mix <= 1:
        raise ValueError("mix must be in [0, 1]")
    n_pool = len(real_train)
    n_real = int(round(mix * n_pool))
    n_gen = min(n_pool - n_real, len(gen))
    rng = np.random.default_rng(seed)
    parts = []
    if n_real:
        parts.append(real_train.locs[rng.choice(n_pool, n_real, replace=False)])
    if n_gen:
        parts.append(gen.locs[rng.choice(len(gen), n_gen, replace=False)])
    if not parts:
        raise ValueError("empty training pool")
    model = MarkovPredictor(real_train.city.n_locations).fit(np.concatenate(parts))
    return {
        "mix": mix,
        "n_real": n_real,
        "n_generated": n_gen,
        "accuracy": model.accuracy(eval_ds),
    }
