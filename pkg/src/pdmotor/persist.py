"""Binary weight files, bit-exact round trip.

Layout (all integers little-endian):

    magic   4 bytes  b"PDW1"
    count   uint32   number of tensors
    per tensor:
        name_len  uint16, then name bytes (utf-8)
        rank      uint8, then rank x uint32 extents
    payload  float64 values, row-major, in manifest order
    crc      uint32, CRC32 of the payload bytes

Files hold finished models (learnables, conv biases, BN running stats);
optimizer state is not persisted. Loading validates the checksum and
that every tensor's shape matches the given NetConfig.
"""

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CorruptWeightFileError, ShapeError
from .network import NetConfig, NetworkParams, build

MAGIC = b"PDW1"


def save_model(params: NetworkParams, path) -> None:
    tensors = params.state_tensors()
    manifest = bytearray()
    manifest += struct.pack("<I", len(tensors))
    payload = bytearray()
    for name, tensor in tensors.items():
        name_b = name.encode("utf-8")
        manifest += struct.pack("<H", len(name_b)) + name_b
        manifest += struct.pack("<B", tensor.ndim)
        manifest += struct.pack(f"<{tensor.ndim}I", *tensor.shape)
        payload += np.ascontiguousarray(tensor, dtype="<f8").tobytes()
    crc = zlib.crc32(bytes(payload)) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes(manifest))
        fh.write(bytes(payload))
        fh.write(struct.pack("<I", crc))


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise CorruptWeightFileError(f"truncated weight file while reading {what}")
    return data


def load_model(path, config: NetConfig) -> NetworkParams:
    """Read a weight file into a network built from `config`.

    Raises CorruptWeightFileError on structural/checksum damage and
    ShapeError when the manifest does not match the config's tensors.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise CorruptWeightFileError(f"{path}: bad magic, not a weight file")
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        manifest = []
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1, "rank"))
            shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "extents"))
            manifest.append((name, shape))
        payload_len = 8 * sum(int(np.prod(s, dtype=np.int64)) for _, s in manifest)
        payload = _read_exact(fh, payload_len, "payload")
        (crc_stored,) = struct.unpack("<I", _read_exact(fh, 4, "checksum"))
        if fh.read(1):
            raise CorruptWeightFileError(f"{path}: trailing bytes after checksum")
    if zlib.crc32(payload) & 0xFFFFFFFF != crc_stored:
        raise CorruptWeightFileError(f"{path}: payload checksum mismatch")

    params = build(config)
    expected = params.state_tensors()
    if [n for n, _ in manifest] != list(expected.keys()):
        raise ShapeError(f"{path}: tensor manifest does not match the network config")
    offset = 0
    for name, shape in manifest:
        target = expected[name]
        if tuple(shape) != target.shape:
            raise ShapeError(
                f"{path}: tensor {name} has shape {tuple(shape)}, config expects {target.shape}"
            )
        n_bytes = 8 * target.size
        arr = np.frombuffer(payload, dtype="<f8", count=target.size, offset=offset)
        target[...] = arr.reshape(target.shape)
        offset += n_bytes
    # running stats arrive via target[...] writes into the built skeleton
    return params
