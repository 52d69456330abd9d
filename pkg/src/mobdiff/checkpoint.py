"""Versioned checkpoint container.

Byte layout (all integers little-endian):

    offset 0   : 8-byte magic ``MOBDIFF1``
    offset 8   : uint32 header length H
    offset 12  : H bytes of UTF-8 JSON header (version, denoiser config,
                 schedule betas, sigma-space config, dataset affine, training
                 manifest, array directory with names/shapes/offsets)
    offset 12+H: raw little-endian float32 parameter arrays, concatenated in
                 directory order
    trailer    : 32-byte SHA-256 digest of every preceding byte

Loading verifies the magic, version, and digest; parameters round-trip
bit-exactly (they are stored in their in-memory float32 form).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ModelAffine
from .denoiser import DenoiserConfig, ParamStore
from .diffusion import EdmConfig, VpSchedule
from .errors import DataIOError

MAGIC = b"MOBDIFF1"
VERSION = 1


@dataclass
class Checkpoint:
    params: ParamStore
    denoiser_cfg: DenoiserConfig
    schedule: VpSchedule
    edm: EdmConfig
    affine: ModelAffine
    manifest: dict = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    arrays = []
    blobs = []
    offset = 0
    for name in ckpt.params.names():
        arr = np.ascontiguousarray(ckpt.params[name], dtype="<f4")
        raw = arr.tobytes()
        arrays.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "version": VERSION,
        "denoiser": ckpt.denoiser_cfg.to_json(),
        "schedule": ckpt.schedule.to_json(),
        "edm": {
            "sigma_data": ckpt.edm.sigma_data,
            "p_mean": ckpt.edm.p_mean,
            "p_std": ckpt.edm.p_std,
        },
        "affine": ckpt.affine.to_json(),
        "manifest": ckpt.manifest,
        "param_seed": ckpt.params.seed,
        "arrays": arrays,
    }
    hdr = json.dumps(header, sort_keys=True).encode()
    body = MAGIC + struct.pack("<I", len(hdr)) + hdr + b"".join(blobs)
    digest = hashlib.sha256(body).digest()
    path.write_bytes(body + digest)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 44 or raw[:8] != MAGIC:
        raise DataIOError(f"{path}: not a checkpoint file (bad magic)")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise DataIOError(f"{path}: checkpoint checksum mismatch")
    (hdr_len,) = struct.unpack("<I", body[8:12])
    header = json.loads(body[12 : 12 + hdr_len].decode())
    if header.get("version") != VERSION:
        raise DataIOError(
            f"{path}: checkpoint version {header.get('version')} != {VERSION}"
        )
    data = body[12 + hdr_len :]
    arrays = {}
    for meta in header["arrays"]:
        shape = tuple(meta["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = meta["offset"]
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=start).reshape(shape)
        arrays[meta["name"]] = arr.copy()
    params = ParamStore(arrays, header.get("param_seed"))
    return Checkpoint(
        params=params,
        denoiser_cfg=DenoiserConfig.from_json(header["denoiser"]),
        schedule=VpSchedule.from_json(header["schedule"]),
        edm=EdmConfig(**header["edm"]),
        affine=ModelAffine.from_json(header["affine"]),
        manifest=header.get("manifest", {}),
    )
