"""
Weight files.

Layout: the 8-byte magic ``NDGRAD01``, a little-endian uint64 header length,
a UTF-8 JSON header (ordered list of ``{name, shape, offset}``, offsets
relative to the start of the payload), then the arrays as raw little-endian
float64. Saving and loading is bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from colabel.utils.exceptions import ShapeError

MAGIC = b"NDGRAD01"
_LENGTH = struct.Struct("<Q")


def save_weights(state: Mapping[str, np.ndarray], path: str | Path) -> Path:
    """Write an ordered name → array mapping to ``path``."""
    header = []
    payloads = []
    offset = 0
    for name, array in state.items():
        data = np.ascontiguousarray(array, dtype="<f8")
        header.append({"name": name, "shape": list(data.shape), "offset": offset})
        payloads.append(data.tobytes())
        offset += data.nbytes
    encoded = json.dumps(header).encode("utf-8")

    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("wb") as handle:
        handle.write(MAGIC)
        handle.write(_LENGTH.pack(len(encoded)))
        handle.write(encoded)
        for chunk in payloads:
            handle.write(chunk)
    return target


def load_weights(path: str | Path) -> dict[str, np.ndarray]:
    """
    Read a weight file written by ``save_weights``.

    Raises:
        ShapeError: If the file is truncated or does not start with the magic
    """
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ShapeError("Not an ndgrad weight file", context={"path": str(path)})
    start = len(MAGIC) + _LENGTH.size
    (header_length,) = _LENGTH.unpack(raw[len(MAGIC):start])
    header = json.loads(raw[start:start + header_length].decode("utf-8"))
    body = start + header_length

    state: dict[str, np.ndarray] = {}
    for entry in header:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        begin = body + entry["offset"]
        end = begin + count * 8
        if end > len(raw):
            raise ShapeError("Weight file is truncated", context={"path": str(path), "name": entry["name"]})
        state[entry["name"]] = np.frombuffer(raw[begin:end], dtype="<f8").reshape(shape).astype(np.float64)
    return state
