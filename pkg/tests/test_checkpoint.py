import numpy as np
import pytest

from mobdiff.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from mobdiff.core import ModelAffine
from mobdiff.denoiser import init_params, tiny_config
from mobdiff.diffusion import EdmConfig, make_vp_schedule
from mobdiff.errors import DataIOError


@pytest.fixture
def ckpt():
    cfg = tiny_config()
    return Checkpoint(
        params=init_params(cfg, seed=5),
        denoiser_cfg=cfg,
        schedule=make_vp_schedule(50),
        edm=EdmConfig(),
        affine=ModelAffine([0.1, -0.1], [0.2, 0.3]),
        manifest={"seed": 5, "note": "test"},
    )


def test_roundtrip_bitwise(tmp_path, ckpt):
    p = tmp_path / "c.mdck"
    save_checkpoint(ckpt, p)
    back = load_checkpoint(p)
    assert back.params.names() == ckpt.params.names()
    for name in ckpt.params.names():
        assert back.params[name].dtype == np.float32
        np.testing.assert_array_equal(back.params[name], ckpt.params[name])
    np.testing.assert_allclose(back.schedule.alpha_bar, ckpt.schedule.alpha_bar, rtol=1e-15)
    np.testing.assert_array_equal(back.affine.mean, ckpt.affine.mean)
    assert back.denoiser_cfg == ckpt.denoiser_cfg
    assert back.manifest["note"] == "test"
    assert back.edm == ckpt.edm


def test_save_deterministic(tmp_path, ckpt):
    a, b = tmp_path / "a.mdck", tmp_path / "b.mdck"
    save_checkpoint(ckpt, a)
    save_checkpoint(ckpt, b)
    assert a.read_bytes() == b.read_bytes()


def test_corruption_detected(tmp_path, ckpt):
    p = tmp_path / "c.mdck"
    save_checkpoint(ckpt, p)
    raw = bytearray(p.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    p.write_bytes(bytes(raw))
    with pytest.raises(DataIOError, match="checksum"):
        load_checkpoint(p)


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "c.mdck"
    p.write_bytes(b"NOTMAGIC" + b"\0" * 64)
    with pytest.raises(DataIOError, match="magic"):
        load_checkpoint(p)


def test_version_mismatch_rejected(tmp_path, ckpt):
    import hashlib
    import json
    import struct

    p = tmp_path / "c.mdck"
    save_checkpoint(ckpt, p)
    raw = p.read_bytes()
    body = raw[:-32]
    (hdr_len,) = struct.unpack("<I", body[8:12])
    header = json.loads(body[12 : 12 + hdr_len].decode())
    header["version"] = 99
    hdr = json.dumps(header, sort_keys=True).encode()
    body2 = body[:8] + struct.pack("<I", len(hdr)) + hdr + body[12 + hdr_len :]
    p.write_bytes(body2 + hashlib.sha256(body2).digest())
    with pytest.raises(DataIOError, match="version"):
        load_checkpoint(p)
