"""Shared data model: grid cities, trajectories, datasets, flows, and the
discrete <-> continuous coordinate bridge.

Conventions used everywhere downstream:

* A location id ``l`` indexes a G x G grid row-major: ``l = iy * G + ix``.
* Cell centers live on a uniform lattice in [-1, 1]^2 ("grid coordinates");
  the center of cell ``(ix, iy)`` is ``(-1 + (ix + 0.5) * 2/G, ...)``.
* A trajectory is a length-T integer array of location ids; the time slot of
  entry ``t`` is ``t`` itself (slots 0..T-1, half-hour resolution, T = 48).
* Model units are grid coordinates rescaled by a stored per-channel affine so
  the training set has a prescribed per-channel standard deviation.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataIOError

DEFAULT_TRAJ_LEN = 48


@dataclass(frozen=True)
class GridCity:
    """Square grid world with a population weight per cell.

    ``cell_extent`` is the physical edge length of one cell in abstract km;
    it only matters when converting grid-coordinate distances to km.
    """

    grid_side: int
    population: np.ndarray
    cell_extent: float = 1.0

    def __post_init__(self):
        if self.grid_side < 2:
            raise ValueError(f"grid_side must be >= 2, got {self.grid_side}")
        pop = np.asarray(self.population, dtype=np.float64)
        object.__setattr__(self, "population", pop)
        if pop.shape != (self.grid_side**2,):
            raise ValueError(
                f"population must have shape ({self.grid_side**2},), got {pop.shape}"
            )
        if np.any(pop < 0) or not np.all(np.isfinite(pop)):
            raise ValueError("population entries must be finite and >= 0")
        if pop.sum() <= 0:
            raise ValueError("population must sum to a positive value")

    @property
    def n_locations(self) -> int:
        return self.grid_side**2

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.grid_side).encode())
        h.update(np.ascontiguousarray(self.population).tobytes())
        h.update(repr(float(self.cell_extent)).encode())
        return h.hexdigest()

    def km_per_coord_unit(self) -> float:
        # one cell pitch is 2/G coordinate units and cell_extent km
        return self.cell_extent * self.grid_side / 2.0


def cell_centers(city: GridCity) -> np.ndarray:
    """(N, 2) array of cell-center grid coordinates, row-major by LocId."""
    g = city.grid_side
    axis = -1.0 + (np.arange(g) + 0.5) * (2.0 / g)
    xs, ys = np.meshgrid(axis, axis, indexing="xy")
    return np.stack([xs.ravel(), ys.ravel()], axis=1)


def loc_to_coord(city: GridCity, loc) -> np.ndarray:
    """Grid coordinate(s) of the given location id(s).

    Accepts a scalar or an integer array; returns shape (..., 2).
    """
    loc = np.asarray(loc)
    if np.any(loc < 0) or np.any(loc >= city.n_locations):
        raise ValueError(f"LocId out of range [0, {city.n_locations})")
    g = city.grid_side
    ix = loc % g
    iy = loc // g
    step = 2.0 / g
    return np.stack([-1.0 + (ix + 0.5) * step, -1.0 + (iy + 0.5) * step], axis=-1)


def coord_to_loc(city: GridCity, coord) -> np.ndarray | int:
    """Nearest cell center; coordinates outside [-1, 1]^2 clamp to the border.

    Inverse of :func:`loc_to_coord` on cell centers. Scalar input gives a
    python int, array input an int64 array.
    """
    xy = np.asarray(coord, dtype=np.float64)
    if not np.all(np.isfinite(xy)):
        raise ValueError("coordinates must be finite")
    g = city.grid_side
    idx = np.floor((xy + 1.0) * (g / 2.0)).astype(np.int64)
    idx = np.clip(idx, 0, g - 1)
    loc = idx[..., 1] * g + idx[..., 0]
    if loc.ndim == 0:
        return int(loc)
    return loc


@dataclass(frozen=True)
class ModelAffine:
    """Per-channel affine between grid coordinates and model units.

    model = (coord - mean) * scale, chosen so the training set's model-unit
    standard deviation equals ``target_std`` per channel.
    """

    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64).reshape(2))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=np.float64).reshape(2))

    def to_model(self, coords: np.ndarray) -> np.ndarray:
        return (coords - self.mean) * self.scale

    def to_coord(self, model: np.ndarray) -> np.ndarray:
        return model / self.scale + self.mean

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "ModelAffine":
        return cls(np.array(d["mean"]), np.array(d["scale"]))


def fit_affine(coords: np.ndarray, target_std: float = 0.1) -> ModelAffine:
    """Fit the dataset affine from an (..., 2) array of grid coordinates."""
    flat = coords.reshape(-1, 2)
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return ModelAffine(mean, target_std / std)


@dataclass
class TrajectoryDataset:
    """A stack of equal-length trajectories over one city.

    ``locs`` has shape (n_traj, T) and dtype int32; row i is trajectory i.
    """

    city: GridCity
    locs: np.ndarray
    split_tag: str = "train"
    affine: ModelAffine | None = None

    def __post_init__(self):
        locs = np.asarray(self.locs)
        if locs.ndim != 2 or locs.shape[0] == 0:
            raise ValueError("locs must be a nonempty (n_traj, T) array")
        if locs.min() < 0 or locs.max() >= self.city.n_locations:
            raise ValueError("dataset contains LocIds outside the city")
        if self.split_tag not in ("train", "holdout", "generated"):
            raise ValueError(f"unknown split_tag {self.split_tag!r}")
        self.locs = locs.astype(np.int32, copy=False)

    def __len__(self) -> int:
        return self.locs.shape[0]

    @property
    def traj_len(self) -> int:
        return self.locs.shape[1]

    def coords(self) -> np.ndarray:
        """Grid coordinates of every point, shape (n_traj, T, 2)."""
        return loc_to_coord(self.city, self.locs)

    def to_model_units(self) -> np.ndarray:
        if self.affine is None:
            raise ValueError("dataset has no fitted affine")
        return self.affine.to_model(self.coords())


def snap_to_grid(city: GridCity, values: np.ndarray, affine: ModelAffine) -> np.ndarray:
    """Map model-unit trajectories (n, T, 2) back to LocId rows (n, T)."""
    coords = affine.to_coord(np.asarray(values, dtype=np.float64))
    return coord_to_loc(city, coords).astype(np.int32)


@dataclass
class FlowMatrix:
    """N x N origin-destination counts; ``include_self`` records the
    diagonal convention used when the matrix was built."""

    counts: np.ndarray
    include_self: bool = False

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"counts must be square, got {c.shape}")
        if np.any(c < 0):
            raise ValueError("flow counts must be >= 0")
        self.counts = c

    @property
    def n_locations(self) -> int:
        return self.counts.shape[0]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.counts).tobytes())
        h.update(b"self" if self.include_self else b"noself")
        return h.hexdigest()


def flows_from_dataset(ds: TrajectoryDataset, include_self: bool = False) -> FlowMatrix:
    """Count consecutive transitions across all trajectories.

    counts[a, b] is the number of slot pairs (t, t+1) with locations (a, b);
    a == b pairs are skipped unless ``include_self``.
    """
    n = ds.city.n_locations
    a = ds.locs[:, :-1].ravel()
    b = ds.locs[:, 1:].ravel()
    if not include_self:
        keep = a != b
        a, b = a[keep], b[keep]
    counts = np.bincount(a.astype(np.int64) * n + b, minlength=n * n).reshape(n, n)
    return FlowMatrix(counts.astype(np.float64), include_self=include_self)


def row_normalize(flows: FlowMatrix, loc: int, population: np.ndarray) -> np.ndarray:
    """Probability vector over destinations from ``loc``.

    Zero rows fall back to the population distribution restricted to cells
    other than ``loc`` so that sampling can never dead-end.
    """
    n = flows.n_locations
    if not 0 <= loc < n:
        raise ValueError(f"LocId {loc} out of range")
    row = flows.counts[loc]
    total = row.sum()
    if total > 0:
        return row / total
    fallback = np.asarray(population, dtype=np.float64).copy()
    fallback[loc] = 0.0
    s = fallback.sum()
    if s <= 0:
        # population concentrated on loc itself: uniform over the others
        fallback = np.ones(n)
        fallback[loc] = 0.0
        s = fallback.sum()
    return fallback / s


def transition_matrix(flows: FlowMatrix, population: np.ndarray) -> np.ndarray:
    """Row-stochastic matrix with the population fallback applied per row."""
    out = np.empty_like(flows.counts)
    for loc in range(flows.n_locations):
        out[loc] = row_normalize(flows, loc, population)
    return out


# ---------------------------------------------------------------------------
# file formats: datasets, flows, cities, and their JSON sidecars
# ---------------------------------------------------------------------------


def _sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_sidecar(path: Path, seed, extra: dict | None = None) -> None:
    """JSON sidecar with the file checksum and the PRNG seed that made it."""
    path = Path(path)
    meta = {"sha256": _sha256_bytes(path.read_bytes()), "seed": seed}
    if extra:
        meta.update(extra)
    side = path.with_suffix(path.suffix + ".meta.json")
    side.write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")


def check_sidecar(path: Path) -> dict:
    """Verify the sidecar checksum; returns the sidecar contents."""
    path = Path(path)
    side = path.with_suffix(path.suffix + ".meta.json")
    if not side.exists():
        raise DataIOError(f"missing sidecar {side}")
    meta = json.loads(side.read_text())
    actual = _sha256_bytes(path.read_bytes())
    if meta.get("sha256") != actual:
        raise DataIOError(f"checksum mismatch for {path}")
    return meta


def save_dataset(ds: TrajectoryDataset, path, seed=None) -> None:
    """One line per trajectory (comma-separated LocIds); '#' header line
    records G, T, cell_extent and the model-unit affine."""
    path = Path(path)
    header = {
        "format": "mobdiff-dataset-v1",
        "grid_side": ds.city.grid_side,
        "traj_len": int(ds.traj_len),
        "cell_extent": ds.city.cell_extent,
        "split_tag": ds.split_tag,
        "affine": ds.affine.to_json() if ds.affine is not None else None,
        "city_sha256": ds.city.content_hash(),
    }
    with open(path, "w") as f:
        f.write("# " + json.dumps(header, sort_keys=True) + "\n")
        for row in ds.locs:
            f.write(",".join(str(int(v)) for v in row) + "\n")
    write_sidecar(path, seed, {"n_traj": len(ds)})


def load_dataset(path, city: GridCity, verify: bool = True) -> TrajectoryDataset:
    path = Path(path)
    if verify:
        check_sidecar(path)
    with open(path) as f:
        first = f.readline()
        if not first.startswith("# "):
            raise DataIOError(f"{path}: missing dataset header line")
        header = json.loads(first[2:])
        if header.get("format") != "mobdiff-dataset-v1":
            raise DataIOError(f"{path}: unknown dataset format")
        if header["grid_side"] != city.grid_side:
            raise DataIOError(
                f"{path}: grid_side {header['grid_side']} does not match city {city.grid_side}"
            )
        if header["city_sha256"] != city.content_hash():
            raise DataIOError(f"{path}: dataset was built for a different city")
        locs = np.loadtxt(f, delimiter=",", dtype=np.int32, ndmin=2)
    affine = ModelAffine.from_json(header["affine"]) if header["affine"] else None
    return TrajectoryDataset(city, locs, header["split_tag"], affine)


def save_flows(flows: FlowMatrix, path, seed=None) -> None:
    """Dense CSV, N rows x N columns."""
    path = Path(path)
    np.savetxt(path, flows.counts, delimiter=",", fmt="%.10g")
    write_sidecar(path, seed, {"include_self": flows.include_self})


def load_flows(path, verify: bool = True) -> FlowMatrix:
    path = Path(path)
    include_self = False
    if verify:
        meta = check_sidecar(path)
        include_self = bool(meta.get("include_self", False))
    counts = np.loadtxt(path, delimiter=",", ndmin=2)
    return FlowMatrix(counts, include_self=include_self)


def save_city(city: GridCity, path, config: dict | None = None, seed=None) -> None:
    path = Path(path)
    doc = {
        "format": "mobdiff-city-v1",
        "grid_side": city.grid_side,
        "cell_extent": city.cell_extent,
        "population": city.population.tolist(),
        "config": config,
    }
    path.write_text(json.dumps(doc, sort_keys=True) + "\n")
    write_sidecar(path, seed)


def load_city(path, verify: bool = True) -> GridCity:
    path = Path(path)
    if verify:
        check_sidecar(path)
    doc = json.loads(path.read_text())
    if doc.get("format") != "mobdiff-city-v1":
        raise DataIOError(f"{path}: unknown city format")
    return GridCity(doc["grid_side"], np.array(doc["population"]), doc["cell_extent"])
