"""Binary tensor container (TNSR) and camera trajectory text files.

TNSR layout, little-endian throughout::

    b"TNSR" | u32 version=1 | u32 rank | u64 extent * rank | u8 dtype=1 | f32 data

Trajectory files follow the RealEstate10k text convention: a source id on the
first line, then one line per frame with 19 numbers
``timestamp fx fy cx cy k1 k2 r11 r12 r13 t1 r21 r22 r23 t2 r31 r32 r33 t3``.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"TNSR"
VERSION = 1
DTYPE_F32 = 1

RECORD_WIDTH = 19


class TensorFormatError(ValueError):
    """Base class for malformed TNSR files."""


class BadMagicError(TensorFormatError):
    pass


class UnsupportedVersionError(TensorFormatError):
    pass


class UnsupportedDtypeError(TensorFormatError):
    pass


class TruncatedError(TensorFormatError):
    pass


class TrajectoryParseError(ValueError):
    def __init__(self, message: str, path=None, line: int | None = None):
        self.path = path
        self.line = line
        where = f"{path}:" if path is not None else ""
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)


def _check_shape(dims) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if len(dims) < 1:
        raise ValueError("tensor rank must be >= 1")
    if any(d < 1 for d in dims):
        raise ValueError(f"tensor extents must be >= 1, got {dims}")
    return dims


def encode_tensor(array) -> bytes:
    arr = np.asarray(array, dtype=np.float32)
    dims = _check_shape(arr.shape)
    header = MAGIC + struct.pack("<II", VERSION, len(dims))
    header += struct.pack(f"<{len(dims)}Q", *dims)
    header += struct.pack("<B", DTYPE_F32)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}")
    pos = 4
    if len(buf) < pos + 8:
        raise TruncatedError("header truncated")
    version, rank = struct.unpack_from("<II", buf, pos)
    pos += 8
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported TNSR version {version}")
    if rank < 1:
        raise TensorFormatError("rank must be >= 1")
    if len(buf) < pos + 8 * rank + 1:
        raise TruncatedError("header truncated")
    dims = struct.unpack_from(f"<{rank}Q", buf, pos)
    pos += 8 * rank
    (dtype,) = struct.unpack_from("<B", buf, pos)
    pos += 1
    if dtype != DTYPE_F32:
        raise UnsupportedDtypeError(f"unsupported dtype code {dtype}")
    if any(d < 1 for d in dims):
        raise TensorFormatError(f"extents must be >= 1, got {dims}")
    count = int(np.prod(dims, dtype=np.uint64))
    need = count * 4
    if len(buf) - pos < need:
        raise TruncatedError(f"payload has {len(buf) - pos} bytes, expected {need}")
    if len(buf) - pos > need:
        raise TensorFormatError(f"{len(buf) - pos - need} trailing bytes after payload")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=pos)
    return data.astype(np.float32).reshape(dims)


def write_tensor(array, path) -> None:
    """Write ``array`` as a float32 TNSR file."""
    payload = encode_tensor(array)
    try:
        with open(path, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"cannot write tensor to {os.fspath(path)}: {exc}") from exc


def read_tensor(path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise OSError(f"cannot read tensor from {os.fspath(path)}: {exc}") from exc
    try:
        return decode_tensor(buf)
    except TensorFormatError as exc:
        raise type(exc)(f"{os.fspath(path)}: {exc}") from None


@dataclass(frozen=True)
class TrajectoryFile:
    """Raw trajectory records, one row of 19 numbers per frame."""

    source_id: str
    records: np.ndarray  # [F, 19] float64

    def __post_init__(self):
        rec = np.asarray(self.records, dtype=np.float64)
        if rec.ndim != 2 or rec.shape[1] != RECORD_WIDTH:
            raise ValueError(f"records must be [F, {RECORD_WIDTH}], got {rec.shape}")
        if rec.shape[0] < 1:
            raise ValueError("trajectory has no frames")
        object.__setattr__(self, "records", rec)

    def __len__(self) -> int:
        return self.records.shape[0]

    @property
    def timestamps(self) -> np.ndarray:
        return self.records[:, 0]

    @property
    def intrinsics(self) -> np.ndarray:
        """[F, 4] normalized (fx, fy, cx, cy)."""
        return self.records[:, 1:5]

    @property
    def distortion(self) -> np.ndarray:
        return self.records[:, 5:7]

    @property
    def extrinsics(self) -> np.ndarray:
        """[F, 3, 4] world-to-camera matrices."""
        return self.records[:, 7:19].reshape(-1, 3, 4)


def parse_trajectory(path) -> TrajectoryFile:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise TrajectoryParseError("empty file", path)
    source_id = lines[0].strip()
    rows = []
    prev_ts = None
    for lineno, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != RECORD_WIDTH:
            raise TrajectoryParseError(
                f"expected {RECORD_WIDTH} fields, found {len(tokens)}", path, lineno
            )
        try:
            values = [float(tok) for tok in tokens]
        except ValueError:
            bad = next(tok for tok in tokens if not _is_number(tok))
            raise TrajectoryParseError(f"non-numeric token {bad!r}", path, lineno) from None
        if not np.all(np.isfinite(values)):
            raise TrajectoryParseError("non-finite value", path, lineno)
        if prev_ts is not None and values[0] <= prev_ts:
            raise TrajectoryParseError(
                f"timestamp {tokens[0]} not greater than previous {prev_ts:g}", path, lineno
            )
        prev_ts = values[0]
        rows.append(values)
    if not rows:
        raise TrajectoryParseError("no frame records", path)
    return TrajectoryFile(source_id, np.array(rows, dtype=np.float64))


def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def format_trajectory(traj: TrajectoryFile) -> str:
    out = [traj.source_id]
    for row in traj.records:
        out.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(out) + "\n"


def write_trajectory(traj: TrajectoryFile, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_trajectory(traj))
