"""Exploration-and-preferential-return mobility model with a collaborative
twist: the explore branch draws destinations from collective flow rows
instead of a distance kernel.

Decision tree per slot t (documented contract):

1. move with probability ``min(1, n_omega * move_profile[t] * m)`` where
   ``m = beta1`` if the previous slot did not change location (dwell) and
   ``m = beta2`` if it did (burst);
2. conditional on moving: return home with probability ``home_profile[t]``;
   otherwise explore with probability ``rho * S**-gamma`` (S = number of
   distinct cells visited so far, home included); otherwise return
   preferentially to a visited cell with probability proportional to its
   visit count.

Visit counts track arrivals: a cell's count increments each time the agent
moves into it; dwelling does not accumulate count. "Move" means the location
actually changed, so a home return while already at home leaves the dwell
state untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import DEFAULT_TRAJ_LEN, FlowMatrix, GridCity

ACTIONS = ("stay", "home_return", "preferential_return", "explore")


@dataclass(frozen=True)
class EprParams:
    """Parameters of the collaborative EPR sampler.

    ``home_profile`` is the per-slot probability that a move is a home
    return; canonical literature values rho=0.6, gamma=0.21 are the config
    defaults (recorded here, not asserted as ground truth).
    """

    n_omega: float = 1.0
    beta1: float = 1.0
    beta2: float = 1.5
    home_profile: np.ndarray = field(default_factory=lambda: default_home_profile())
    rho: float = 0.6
    gamma: float = 0.21

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise ValueError(f"rho must be in (0, 1], got {self.rho}")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if min(self.n_omega, self.beta1, self.beta2) <= 0:
            raise ValueError("n_omega, beta1, beta2 must be positive")
        prof = np.asarray(self.home_profile, dtype=np.float64)
        if prof.min() < 0 or prof.max() > 1:
            raise ValueError("home_profile entries must lie in [0, 1]")
        object.__setattr__(self, "home_profile", prof)

    def to_json(self) -> dict:
        return {
            "n_omega": self.n_omega,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "rho": self.rho,
            "gamma": self.gamma,
            "home_profile": self.home_profile.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "EprParams":
        return cls(
            n_omega=d["n_omega"],
            beta1=d["beta1"],
            beta2=d["beta2"],
            home_profile=np.array(d["home_profile"]),
            rho=d["rho"],
            gamma=d["gamma"],
        )


@dataclass
class VisitHistory:
    """Per-agent visitation state; home is always a visited key."""

    home: int
    visit_counts: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        self.visit_counts.setdefault(self.home, 1)

    @property
    def distinct_count(self) -> int:
        return len(self.visit_counts)

    def record_arrival(self, loc: int) -> None:
        self.visit_counts[loc] = self.visit_counts.get(loc, 0) + 1


def default_move_profile(traj_len: int = DEFAULT_TRAJ_LEN) -> np.ndarray:
    """Fixed three-peak (morning / noon / evening) move-probability profile
    used when bootstrapping the synthetic world."""
    t = np.arange(traj_len)
    peaks = [(16.0, 2.2, 0.45), (25.0, 2.8, 0.30), (36.0, 2.5, 0.40)]
    p = np.full(traj_len, 0.02)
    for center, width, amp in peaks:
        p = p + amp * np.exp(-0.5 * ((t - center) / width) ** 2)
    return np.clip(p, 0.0, 1.0)


def default_home_profile(traj_len: int = DEFAULT_TRAJ_LEN) -> np.ndarray:
    """Home-return probability, high at night and low midday."""
    t = np.arange(traj_len)
    evening = 1.0 / (1.0 + np.exp(-(t - 38.0) / 1.5))
    morning = 1.0 / (1.0 + np.exp((t - 13.0) / 1.5))
    return np.clip(0.05 + 0.75 * (evening + morning), 0.0, 1.0)


def population_cdf(city: GridCity) -> np.ndarray:
    pop = city.population
    if pop.sum() <= 0:
        raise ValueError("cannot sample a home from an all-zero population")
    cdf = np.cumsum(pop)
    return cdf / cdf[-1]


def sample_home(city: GridCity, rng: np.random.Generator) -> int:
    """Home cell drawn proportionally to the population vector."""
    cdf = population_cdf(city)
    return int(np.searchsorted(cdf, rng.random(), side="right"))


def explore_cdf_matrix(flows: FlowMatrix, population: np.ndarray) -> np.ndarray:
    """Per-origin destination CDFs for the explore branch.

    Row a is the flow row with the origin itself zeroed, normalized; all-zero
    rows fall back to the population distribution over the other cells. The
    final CDF entry is exactly 1 so inverse sampling never overruns.
    """
    n = flows.n_locations
    pop = np.asarray(population, dtype=np.float64)
    probs = flows.counts.copy()
    np.fill_diagonal(probs, 0.0)
    sums = probs.sum(axis=1)
    for a in np.nonzero(sums <= 0)[0]:
        fb = pop.copy()
        fb[a] = 0.0
        if fb.sum() <= 0:
            fb = np.ones(n)
            fb[a] = 0.0
        probs[a] = fb
        sums[a] = fb.sum()
    probs /= sums[:, None]
    cdf = np.cumsum(probs, axis=1)
    cdf /= cdf[:, -1:]
    return cdf


def decide_action(
    params: EprParams,
    hist: VisitHistory,
    t: int,
    move_profile: np.ndarray,
    rng: np.random.Generator,
    prev_moved: bool = False,
) -> str:
    """One draw through the documented decision tree; returns an ACTIONS name."""
    mod = params.beta2 if prev_moved else params.beta1
    p_move = min(1.0, params.n_omega * move_profile[t] * mod)
    if rng.random() >= p_move:
        return "stay"
    p_home = params.home_profile[t]
    p_explore = params.rho * hist.distinct_count ** (-params.gamma)
    u = rng.random()
    if u < p_home:
        return "home_return"
    if u < p_home + (1.0 - p_home) * p_explore:
        return "explore"
    return "preferential_return"


def pi_individual(hist: VisitHistory, current: int, rng: np.random.Generator) -> int:
    """Preferential return: visited cell with probability proportional to its
    visit count, excluding the current cell; falls back to home when nothing
    else has been visited."""
    locs = [l for l in hist.visit_counts if l != current]
    if not locs:
        return hist.home
    weights = np.array([hist.visit_counts[l] for l in locs], dtype=np.float64)
    cdf = np.cumsum(weights)
    target = rng.random() * cdf[-1]
    return locs[int(np.searchsorted(cdf, target, side="right"))]


def pi_flow(
    flows: FlowMatrix,
    current: int,
    population: np.ndarray,
    rng: np.random.Generator,
) -> int:
    """Flow-based explore policy: destination from the normalized flow row of
    the current cell, current excluded (a chosen explore must move)."""
    cdf = explore_cdf_matrix(flows, population)[current]
    j = int(np.searchsorted(cdf, rng.random(), side="right"))
    return min(j, cdf.shape[0] - 1)


def collab_policy(
    params: EprParams,
    hist: VisitHistory,
    t: int,
    flows: FlowMatrix,
    move_profile: np.ndarray,
    current: int,
    population: np.ndarray,
    rng: np.random.Generator,
    prev_moved: bool = False,
) -> tuple[int, str]:
    """Dispatch one slot of the collaborative strategy and update history.

    Returns (next location, action name).
    """
    action = decide_action(params, hist, t, move_profile, rng, prev_moved)
    if action == "stay":
        nxt = current
    elif action == "home_return":
        nxt = hist.home
    elif action == "preferential_return":
        nxt = pi_individual(hist, current, rng)
    else:
        nxt = pi_flow(flows, current, population, rng)
    if nxt != current:
        hist.record_arrival(nxt)
    return nxt, action


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Documented splittable-seed rule: trajectory i uses the generator
    seeded by SeedSequence(entropy=seed, spawn_key=(i,))."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def sample_transition_batch(
    city: GridCity,
    flows: FlowMatrix,
    params: EprParams,
    n_traj: int,
    seed: int,
    move_profile: np.ndarray | None = None,
    traj_len: int = DEFAULT_TRAJ_LEN,
) -> np.ndarray:
    """Sample ``n_traj`` transition sequences, (n_traj, T) int32.

    Deterministic per seed and order-independent across trajectories (each
    trajectory has its own spawned generator). The per-slot decisions run in
    the active kernel lane.
    """
    if n_traj <= 0:
        raise ValueError("n_traj must be positive")
    if move_profile is None:
        move_profile = default_move_profile(traj_len)
    move_profile = np.asarray(move_profile, dtype=np.float64)
    if move_profile.shape != (traj_len,):
        raise ValueError("move_profile length must equal traj_len")
    if params.home_profile.shape != (traj_len,):
        raise ValueError("home_profile length must equal traj_len")
    pop_cdf = population_cdf(city)
    homes = np.empty(n_traj, dtype=np.int64)
    uniforms = np.empty((n_traj, traj_len, 3), dtype=np.float64)
    for i in range(n_traj):
        rng = trajectory_rng(seed, i)
        homes[i] = np.searchsorted(pop_cdf, rng.random(), side="right")
        uniforms[i] = rng.random((traj_len, 3))
    ex_cdf = explore_cdf_matrix(flows, city.population)
    return kernels.epr_sequences(
        homes,
        uniforms,
        move_profile,
        params.home_profile,
        float(params.n_omega),
        float(params.beta1),
        float(params.beta2),
        float(params.rho),
        float(params.gamma),
        ex_cdf,
    )


def sample_transition_sequence(
    city: GridCity,
    flows: FlowMatrix,
    params: EprParams,
    seed: int,
    move_profile: np.ndarray | None = None,
    traj_len: int = DEFAULT_TRAJ_LEN,
) -> np.ndarray:
    """Single length-T transition sequence starting at a sampled home."""
    return sample_transition_batch(
        city, flows, params, 1, seed, move_profile, traj_len
    )[0]
