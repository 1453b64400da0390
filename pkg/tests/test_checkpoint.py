import struct

import numpy as np
import pytest
import torch

from infocon.checkpoint import MAGIC, CheckpointError, file_hash, read_arrays, write_arrays
from infocon.config import tiny_config
from infocon.training import build_model, load_checkpoint, save_checkpoint


def test_array_roundtrip(tmp_path):
    arrays = {"a.w": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array(1.5, dtype=np.float32)}
    write_arrays(tmp_path / "x.ckpt", arrays)
    back = read_arrays(tmp_path / "x.ckpt")
    assert list(back) == ["a.w", "b"]
    assert np.array_equal(back["a.w"], arrays["a.w"])
    assert back["b"].shape == () and back["b"] == 1.5


def test_layout_is_little_endian_records(tmp_path):
    write_arrays(tmp_path / "x.ckpt", {"ab": np.array([1.0, -2.0], dtype=np.float32)})
    buf = (tmp_path / "x.ckpt").read_bytes()
    expected = MAGIC + struct.pack("<I", 2) + b"ab" + struct.pack("<I", 1) + struct.pack("<Q", 2)
    expected += struct.pack("<2f", 1.0, -2.0)
    assert buf == expected


def test_corrupt_checkpoints(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_bytes(b"NOPE")
    with pytest.raises(CheckpointError, match="magic"):
        read_arrays(p)
    write_arrays(p, {"w": np.zeros(10, dtype=np.float32)})
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        read_arrays(p)
    with pytest.raises(CheckpointError):
        read_arrays(tmp_path / "missing.ckpt")


def test_model_roundtrip(tmp_path, tiny_dataset):
    cfg = tiny_config()
    model = build_model(tiny_dataset, cfg)
    digest = save_checkpoint(tmp_path / "m.ckpt", model, cfg, 7)
    assert digest == file_hash(tmp_path / "m.ckpt") and len(digest) == 16
    back, cfg2, meta = load_checkpoint(tmp_path / "m.ckpt")
    assert cfg2 == cfg and meta["iteration"] == 7
    for k, v in model.state_dict().items():
        assert torch.equal(back.state_dict()[k], v), k
    names = set(read_arrays(tmp_path / "m.ckpt"))
    for prefix in ("encoder.", "decoder.", "codebook.", "hypernet.", "genhead.", "policy."):
        assert any(n.startswith(prefix) for n in names)
