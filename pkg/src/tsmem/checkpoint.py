"""Binary checkpoint format.

Layout (all integers little-endian):

    magic   8 bytes  b"TSMEMCK1" (format version 1)
    count   uint32   number of records
    record:
        name_len uint16, name utf-8 bytes
        ndim     uint8,  dims ndim x uint32
        payload  float64 little-endian, row-major, prod(dims) values

Records are written in the order given and read back into an ordered dict.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

MAGIC = b"TSMEMCK1"


def save_checkpoint(path, records: list[tuple[str, np.ndarray]]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(records)))
        for name, arr in records:
            arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.astype("<f8").tobytes(order="C"))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    offset = len(MAGIC)
    (count,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    records: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        dims = struct.unpack_from(f"<{ndim}I", blob, offset) if ndim else ()
        offset += 4 * ndim
        n = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(dims)
        offset += 8 * n
        records[name] = np.array(arr)  # writable copy in native byte order
    if offset != len(blob):
        raise ValueError(f"{path}: {len(blob) - offset} trailing bytes after last record")
    return records


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
