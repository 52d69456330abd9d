"""Diffusion-based daily mobility generation on a synthetic grid city, with
collaborative noise priors, full evaluation metrics, and privacy audits."""

from .core import (
    DEFAULT_TRAJ_LEN,
    FlowMatrix,
    GridCity,
    ModelAffine,
    TrajectoryDataset,
    coord_to_loc,
    flows_from_dataset,
    loc_to_coord,
    row_normalize,
)
from .diffusion import EdmConfig, VpSchedule, make_vp_schedule
from .denoiser import DenoiserConfig, ParamStore, init_params
from .epr import EprParams
from .errors import ConfigError, DataIOError, NumericError
from .pipeline import RunConfig, generate, train

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_TRAJ_LEN",
    "ConfigError",
    "DataIOError",
    "DenoiserConfig",
    "EdmConfig",
    "EprParams",
    "FlowMatrix",
    "GridCity",
    "ModelAffine",
    "NumericError",
    "ParamStore",
    "RunConfig",
    "TrajectoryDataset",
    "VpSchedule",
    "coord_to_loc",
    "flows_from_dataset",
    "generate",
    "init_params",
    "loc_to_coord",
    "make_vp_schedule",
    "row_normalize",
    "train",
    "__version__",
]
