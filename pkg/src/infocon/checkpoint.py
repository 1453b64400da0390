"""Binary checkpoint format.

Layout: magic ``INFC1`` followed by records
``u32 name_len | name (utf-8) | u32 ndims | u64 dims... | float32 LE data``.
A JSON sidecar ``<ckpt>.config.json`` carries the config and counters.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"INFC1"


class CheckpointError(Exception):
    pass


def write_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    parts = [MAGIC]
    for name, arr in arrays.items():
        arr = np.array(arr, dtype="<f4", order="C")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_arrays(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"{path}: checkpoint not found") from None
    if not buf.startswith(MAGIC):
        raise CheckpointError(f"{path}: bad magic bytes")
    out, off = {}, len(MAGIC)
    try:
        while off < len(buf):
            (n,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off: off + n].decode("utf-8")
            off += n
            (nd,) = struct.unpack_from("<I", buf, off)
            off += 4
            dims = struct.unpack_from(f"<{nd}Q", buf, off)
            off += 8 * nd
            count = int(np.prod(dims, dtype=np.int64))
            if off + 4 * count > len(buf):
                raise CheckpointError(f"{path}: record '{name}' is truncated")
            out[name] = np.frombuffer(buf, dtype="<f4", count=count, offset=off).reshape(dims).copy()
            off += 4 * count
    except (struct.error, UnicodeDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt record ({e})") from None
    return out


def sidecar_path(path: str | Path) -> Path:
    return Path(str(path) + ".config.json")


def save_model(path: str | Path, model: torch.nn.Module, meta: dict) -> str:
    """Write parameters and buffers plus the sidecar; return the checkpoint hash."""
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    write_arrays(path, arrays)
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True))
    return file_hash(path)


def load_state(path: str | Path) -> tuple[dict[str, torch.Tensor], dict]:
    arrays = read_arrays(path)
    sc = sidecar_path(path)
    try:
        meta = json.loads(sc.read_text())
    except FileNotFoundError:
        raise CheckpointError(f"{sc}: config sidecar not found") from None
    return {k: torch.from_numpy(v) for k, v in arrays.items()}, meta


def file_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]
