"""Bit-exact file formats: NPY 1.0 tensors, PGM label maps, and the flat
key-value run-config file.

The NPY reader and writer are implemented directly (not via numpy's loaders)
so that malformed inputs produce the distinct diagnostics callers rely on and
output bytes are identical across platforms.
"""
from __future__ import annotations

import ast
import struct
from pathlib import Path
from typing import Union

import numpy as np

from .core import FeatureMap, InvalidInputError, LabelMap, SegmentationConfig

MAGIC = b"\x93NUMPY"

FEATURE_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}
LABEL_DTYPES = {"<u1": np.dtype("<u1"), "|u1": np.dtype("<u1"),
                "<u2": np.dtype("<u2"), "<u4": np.dtype("<u4")}

PGM_MAXVAL_LIMIT = 65535


class TensorFormatError(ValueError):
    """A tensor file violates the declared on-disk format."""


def _descr(dtype: np.dtype) -> str:
    if dtype.itemsize == 1:
        return "|u1"
    kind = {"f": "f", "u": "u"}[dtype.kind]
    return f"<{kind}{dtype.itemsize}"


def write_npy(path: Union[str, Path], arr: np.ndarray) -> None:
    """NPY version-1.0 writer: little-endian payload, C order, header padded
    with spaces so the payload starts on a 64-byte boundary."""
    arr = np.ascontiguousarray(arr)
    dtype = arr.dtype.newbyteorder("<") if arr.dtype.itemsize > 1 else arr.dtype
    arr = arr.astype(dtype, copy=False)
    shape = arr.shape if len(arr.shape) != 1 else (arr.shape[0],)
    header = ("{'descr': %r, 'fortran_order': False, 'shape': %s, }"
              % (_descr(arr.dtype), repr(tuple(int(s) for s in shape))))
    base = len(MAGIC) + 2 + 2  # magic + version + header-length field
    pad = (-(base + len(header) + 1)) % 64
    header = header + " " * pad + "\n"
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes((1, 0)))
        fh.write(struct.pack("<H", len(header)))
        fh.write(header.encode("latin1"))
        fh.write(arr.tobytes(order="C"))


def read_npy(path: Union[str, Path], allowed: dict) -> np.ndarray:
    """Strict NPY 1.0 reader; `allowed` maps accepted descr strings to the
    dtype used for decoding."""
    raw = Path(path).read_bytes()
    if len(raw) < 10 or raw[:6] != MAGIC:
        raise TensorFormatError(f"{path}: not an NPY file (bad magic bytes)")
    major, minor = raw[6], raw[7]
    if (major, minor) != (1, 0):
        raise TensorFormatError(
            f"{path}: unsupported NPY version {major}.{minor}")
    (hlen,) = struct.unpack("<H", raw[8:10])
    if len(raw) < 10 + hlen:
        raise TensorFormatError(f"{path}: truncated header")
    try:
        header = ast.literal_eval(raw[10:10 + hlen].decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise TensorFormatError(f"{path}: unparseable header") from exc
    if not isinstance(header, dict) or set(header) != {
            "descr", "fortran_order", "shape"}:
        raise TensorFormatError(f"{path}: malformed header dictionary")
    descr = header["descr"]
    if descr not in allowed:
        raise TensorFormatError(
            f"{path}: unsupported dtype {descr!r} "
            f"(expected one of {sorted(allowed)})")
    if header["fortran_order"] is not False:
        raise TensorFormatError(f"{path}: fortran_order must be False")
    shape = header["shape"]
    if (not isinstance(shape, tuple)
            or not all(isinstance(s, int) and s >= 0 for s in shape)):
        raise TensorFormatError(f"{path}: invalid shape {shape!r}")
    dtype = allowed[descr]
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    payload = raw[10 + hlen:]
    if len(payload) != count * dtype.itemsize:
        raise TensorFormatError(
            f"{path}: payload is {len(payload)} bytes, expected "
            f"{count * dtype.itemsize}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape)


def read_features(path: Union[str, Path]) -> FeatureMap:
    """Load an (H, W, C) float tensor; 32-bit input is widened to 64-bit."""
    arr = read_npy(path, FEATURE_DTYPES)
    if arr.ndim != 3:
        raise TensorFormatError(
            f"{path}: feature tensors must have rank 3 (H, W, C), "
            f"got rank {arr.ndim}")
    arr = arr.astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise TensorFormatError(f"{path}: payload contains NaN or Inf")
    return FeatureMap(arr.shape[0], arr.shape[1], arr.shape[2], arr)


def write_features(f: FeatureMap, path: Union[str, Path],
                   dtype: str = "<f8") -> None:
    if dtype not in FEATURE_DTYPES:
        raise TensorFormatError(f"unsupported feature dtype {dtype!r}")
    write_npy(path, f.data.astype(FEATURE_DTYPES[dtype]))


def write_labels(lm: LabelMap, path: Union[str, Path],
                 format: str = "pgm") -> None:
    """PGM P5 (maxval = max(K-1, 1)) or NPY uint16."""
    k = lm.num_labels
    if format == "pgm":
        maxval = max(k - 1, 1)
        if maxval > PGM_MAXVAL_LIMIT:
            raise InvalidInputError(
                f"{k} labels exceed PGM capacity ({PGM_MAXVAL_LIMIT + 1})")
        header = f"P5\n{lm.width} {lm.height}\n{maxval}\n".encode("ascii")
        # Netpbm stores 2-byte samples most-significant byte first.
        payload = lm.labels.astype(">u2" if maxval > 255 else "u1").tobytes()
        Path(path).write_bytes(header + payload)
    elif format == "npy":
        if k > np.iinfo(np.uint16).max + 1:
            raise InvalidInputError(f"{k} labels exceed uint16 capacity")
        write_npy(path, lm.labels.astype("<u2"))
    else:
        raise InvalidInputError(f"unknown label format {format!r}")


def read_labels(path: Union[str, Path]) -> LabelMap:
    """Inverse of write_labels; format detected from the leading bytes."""
    head = Path(path).read_bytes()[:6]
    if head.startswith(MAGIC):
        arr = read_npy(path, LABEL_DTYPES)
        if arr.ndim != 2:
            raise TensorFormatError(
                f"{path}: label tensors must have rank 2, got rank {arr.ndim}")
        return LabelMap(arr.shape[0], arr.shape[1], arr.astype(np.int64))
    if head.startswith(b"P5"):
        return _read_pgm(path)
    raise TensorFormatError(f"{path}: neither NPY nor PGM (P5)")


def _read_pgm(path: Union[str, Path]) -> LabelMap:
    raw = Path(path).read_bytes()
    fields = []
    pos = 2  # past "P5"
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TensorFormatError(f"{path}: truncated PGM header")
        fields.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise TensorFormatError(f"{path}: non-numeric PGM header") from exc
    if maxval < 1 or maxval > PGM_MAXVAL_LIMIT:
        raise TensorFormatError(f"{path}: invalid PGM maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    expected = width * height * dtype.itemsize
    payload = raw[pos:]
    if len(payload) != expected:
        raise TensorFormatError(
            f"{path}: PGM payload is {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return LabelMap(height, width, arr.astype(np.int64))


def serialize_config(cfg: SegmentationConfig) -> str:
    """Flat key = value text; round-trip stable via parse_config."""
    lines = []
    for key, value in cfg.to_dict().items():
        rendered = "" if value is None else repr(value)
        lines.append(f"{key} = {rendered}")
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> SegmentationConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidInputError(f"config line {lineno}: missing '='")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        values[key] = None if raw == "" else ast.literal_eval(raw)
    return SegmentationConfig.from_dict(values)


def read_config(path: Union[str, Path]) -> SegmentationConfig:
    return parse_config(Path(path).read_text())


def write_config(cfg: SegmentationConfig, path: Union[str, Path]) -> None:
    Path(path).write_text(serialize_config(cfg))
