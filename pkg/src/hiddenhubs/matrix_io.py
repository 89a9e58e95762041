"""Binary matrix files with a JSON ground-truth sidecar.

Layout: a 24-byte little-endian header (magic ``HUBM``, u16 version, u32 N,
u32 n, u16 flags, 8 reserved bytes) followed by N*n float64 values in
row-major order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .model import HubInstance, ModelParams, PlantedSupport

MAGIC = b"HUBM"
VERSION = 1
HEADER = struct.Struct("<4sHIIH8x")
FLAG_PLANTED = 0x1
FLAG_CORRUPTED = 0x2

assert HEADER.size == 24


def sidecar_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".json")


def write_matrix(path: str | Path, matrix: np.ndarray, flags: int = 0) -> None:
    a = np.ascontiguousarray(matrix, dtype="<f8")
    if a.ndim != 2:
        raise ParameterError("expected a 2-D matrix")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, a.shape[0], a.shape[1], flags))
        fh.write(a.tobytes(order="C"))


def read_matrix(path: str | Path) -> tuple[np.ndarray, int]:
    """Return (matrix, flags)."""
    with open(path, "rb") as fh:
        head = fh.read(HEADER.size)
        if len(head) != HEADER.size:
            raise ParameterError(f"{path}: truncated header")
        magic, version, N, n, flags = HEADER.unpack(head)
        if magic != MAGIC:
            raise ParameterError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise ParameterError(f"{path}: unsupported version {version}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != N * n:
        raise ParameterError(f"{path}: expected {N * n} values, found {data.size}")
    return data.reshape(N, n).astype(np.float64), flags


def save_instance(instance: HubInstance, path: str | Path) -> Path:
    """Write the matrix and its sidecar; returns the sidecar path."""
    path = Path(path)
    flags = (FLAG_PLANTED if instance.support is not None else 0) | \
            (FLAG_CORRUPTED if instance.corrupted_entries else 0)
    write_matrix(path, instance.dense(), flags)
    meta = {
        "format": "HUBM",
        "model": instance.model,
        "seed": instance.seed,
        "params": instance.params.to_dict(),
        "support": None if instance.support is None else instance.support.to_dict(),
        "corrupted_entries": [list(e) for e in instance.corrupted_entries],
        "shortfall": {str(k): v for k, v in instance.shortfall.items()},
    }
    side = sidecar_path(path)
    side.write_text(json.dumps(meta, indent=1, sort_keys=True))
    return side


def load_instance(path: str | Path) -> HubInstance:
    path = Path(path)
    matrix, _flags = read_matrix(path)
    side = sidecar_path(path)
    if not side.exists():
        raise ParameterError(f"missing ground-truth sidecar {side}")
    meta = json.loads(side.read_text())
    params = ModelParams.from_dict(meta["params"])
    if matrix.shape != (params.N, params.n):
        raise ParameterError(f"matrix shape {matrix.shape} does not match params")
    support = None if meta["support"] is None else PlantedSupport.from_dict(meta["support"])
    return HubInstance(
        params=params, seed=int(meta["seed"]), model=meta["model"], support=support, matrix=matrix,
        corrupted_entries=tuple((int(r), int(c), float(o), float(v)) for r, c, o, v in meta["corrupted_entries"]),
        shortfall={int(k): int(v) for k, v in meta.get("shortfall", {}).items()},
    )
