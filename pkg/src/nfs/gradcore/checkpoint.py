"""Self-describing checkpoint container.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header,
then the raw little-endian float64 payload. The header manifest records name,
shape, and byte offset for every parameter plus a config echo and the RNG
seed, so a file can be rebuilt without the code that wrote it. Round trips
are bit-exact.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from ..errors import ContractViolation
from .tape import Tensor

MAGIC = b"NFSCKPT1"


def save_checkpoint(path, params: dict[str, Tensor], config: dict, seed: int) -> None:
    entries = []
    offset = 0
    blobs = []
    for name, p in params.items():
        arr = np.asarray(p.data, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())  # tobytes emits C order for any layout
        offset += arr.nbytes
    header = json.dumps(
        {"params": entries, "config": config, "seed": int(seed), "dtype": "<f8"},
        separators=(",", ":"), sort_keys=True,
    ).encode("utf-8")
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict, int]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ContractViolation(f"{path}: not a checkpoint file (bad magic {magic!r})")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        payload = fh.read()
    params: dict[str, np.ndarray] = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        params[entry["name"]] = arr.reshape(shape).astype(np.float64)
    return params, header["config"], header["seed"]
