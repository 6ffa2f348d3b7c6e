"""Sectioned binary container for named tensors.

A file is a plain concatenation of records, each:
  u16 LE name length, name bytes (utf-8), u8 rank, rank x u32 LE dims,
  then the f32 LE data in C order.
Record order is preserved, so writing the same dict twice produces
byte-identical files.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import EmbeddingFormatError


def write_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        for name, value in tensors.items():
            # not ascontiguousarray: that would promote rank-0 tensors to rank 1
            data = np.asarray(value, dtype="<f4")
            encoded = name.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise EmbeddingFormatError(f"tensor name too long: {name[:40]}...")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", data.ndim))
            if data.ndim:
                fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def read_tensors(path) -> dict[str, np.ndarray]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise EmbeddingFormatError(f"cannot read tensor file {path}: {exc}") from exc

    tensors: dict[str, np.ndarray] = {}
    offset = 0
    total = len(blob)

    def need(n, what):
        if offset + n > total:
            raise EmbeddingFormatError(f"{path}: truncated while reading {what}")

    while offset < total:
        need(2, "name length")
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        need(name_len, "name")
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        need(1, "rank")
        (rank,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        need(4 * rank, "dims")
        dims = struct.unpack_from(f"<{rank}I", blob, offset) if rank else ()
        offset += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        need(4 * count, f"data of {name}")
        data = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(dims)
        offset += 4 * count
        tensors[name] = np.array(data, dtype=np.float32)
    return tensors
