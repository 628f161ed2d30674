"""Binary containers for tensors and factor bundles, and PGM/PPM frame I/O.

Tensor container layout (all integers little-endian)::

    b"BMDT" | version u8 | order u8 | dims u32 * order
          | payload f64 * prod(dims) | crc32(payload) u32

The payload lists entries first-index-fastest.  A factor bundle is::

    b"BMDF" | version u8 | header length u32 | header (UTF-8 JSON)
          | tensor container A | tensor container B | tensor container C
"""
from __future__ import annotations

import io
import json
import os
import re
import struct
import zlib
from pathlib import Path

import numpy as np

from .bm_algebra import Bmd4Factors, BmdFactors
from .errors import (
    BadMagicError,
    ChecksumError,
    ContainerError,
    DimensionError,
    DimsOverflowError,
    FrameFormatError,
    ParameterError,
    TruncatedError,
    UnsupportedVersionError,
)

__all__ = [
    "TENSOR_MAGIC",
    "BUNDLE_MAGIC",
    "VERSION",
    "encode_tensor",
    "decode_tensor",
    "write_tensor",
    "read_tensor",
    "read_tensor_header",
    "encode_factors",
    "decode_factors",
    "write_factors",
    "read_factors",
    "read_pnm",
    "write_pnm",
    "read_frames",
    "write_frames",
    "LUMA_WEIGHTS",
]

TENSOR_MAGIC = b"BMDT"
BUNDLE_MAGIC = b"BMDF"
VERSION = 1
MAX_ENTRIES = 1 << 34
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def encode_tensor(X) -> bytes:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim not in (3, 4):
        raise DimensionError(f"only third- and fourth-order tensors are stored, got {X.ndim}")
    if any(d >= 1 << 32 for d in X.shape):
        raise DimsOverflowError(f"dimension too large for u32: {X.shape}")
    payload = np.asarray(X.ravel(order="F"), dtype="<f8").tobytes()
    head = TENSOR_MAGIC + struct.pack("<BB", VERSION, X.ndim) + struct.pack(f"<{X.ndim}I", *X.shape)
    return head + payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def _read_exact(buf, size, what):
    data = buf.read(size)
    if len(data) != size:
        raise TruncatedError(f"truncated container while reading {what}")
    return data


def _decode_header(buf):
    magic = buf.read(4)
    if len(magic) < 4:
        raise TruncatedError("truncated container while reading magic")
    if magic != TENSOR_MAGIC:
        raise BadMagicError(f"bad tensor magic {magic!r}")
    version, order = struct.unpack("<BB", _read_exact(buf, 2, "version"))
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported container version {version}")
    if order not in (3, 4):
        raise ContainerError(f"unsupported tensor order {order}")
    dims = struct.unpack(f"<{order}I", _read_exact(buf, 4 * order, "dims"))
    count = 1
    for d in dims:
        count *= d
    if count > MAX_ENTRIES:
        raise DimsOverflowError(f"dims {dims} exceed the supported size")
    return version, order, tuple(dims), count


def _decode_tensor_from(buf) -> np.ndarray:
    _, _, dims, count = _decode_header(buf)
    payload = _read_exact(buf, 8 * count, "payload")
    (crc,) = struct.unpack("<I", _read_exact(buf, 4, "checksum"))
    if crc != zlib.crc32(payload) & 0xFFFFFFFF:
        raise ChecksumError("payload checksum mismatch")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return np.ascontiguousarray(flat.reshape(dims, order="F"))


def decode_tensor(data: bytes) -> np.ndarray:
    buf = io.BytesIO(data)
    X = _decode_tensor_from(buf)
    if buf.read(1):
        raise ContainerError("trailing bytes after tensor container")
    return X


def _atomic_write(path, data: bytes):
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_tensor(path, X):
    _atomic_write(path, encode_tensor(X))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def read_tensor_header(path) -> dict:
    """Magic, version, order and dims without reading the payload."""
    with open(path, "rb") as fh:
        version, order, dims, _ = _decode_header(fh)
    return {"version": version, "order": order, "dims": list(dims)}


def encode_factors(factors, meta=None) -> bytes:
    """Serialize a factor triple with a JSON header.

    ``meta`` entries (regularization, sweeps, background terms, ...) are
    merged into the header next to ``rank``, ``dims`` and ``order``.
    """
    order = 4 if isinstance(factors, Bmd4Factors) else 3
    header = {"rank": factors.rank, "dims": list(factors.dims), "order": order}
    header.update(meta or {})
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [BUNDLE_MAGIC, struct.pack("<BI", VERSION, len(text)), text]
    parts += [encode_tensor(F) for F in (factors.A, factors.B, factors.C)]
    return b"".join(parts)


def decode_factors(data: bytes):
    """Inverse of :func:`encode_factors`; returns ``(factors, header)``."""
    buf = io.BytesIO(data)
    magic = buf.read(4)
    if len(magic) < 4:
        raise TruncatedError("truncated bundle while reading magic")
    if magic != BUNDLE_MAGIC:
        raise BadMagicError(f"bad bundle magic {magic!r}")
    version, size = struct.unpack("<BI", _read_exact(buf, 5, "bundle header"))
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported bundle version {version}")
    try:
        header = json.loads(_read_exact(buf, size, "bundle header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"malformed bundle header: {exc}") from exc
    A, B, C = (_decode_tensor_from(buf) for _ in range(3))
    if buf.read(1):
        raise ContainerError("trailing bytes after factor bundle")
    try:
        factors = Bmd4Factors(A, B, C) if A.ndim == 4 else BmdFactors(A, B, C)
    except DimensionError as exc:
        raise ContainerError(f"bundle factors are not conformable: {exc}") from exc
    if factors.rank != header.get("rank") or list(factors.dims) != header.get("dims"):
        raise ContainerError("bundle header disagrees with the stored factors")
    return factors, header


def write_factors(path, factors, meta=None):
    _atomic_write(path, encode_factors(factors, meta))


def read_factors(path):
    return decode_factors(Path(path).read_bytes())


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _pnm_tokens(data, count):
    pos = 0
    out = []
    for _ in range(count):
        mt = _TOKEN.match(data, pos)
        if mt is None:
            raise FrameFormatError("malformed PNM header")
        out.append(mt.group(1))
        pos = mt.end()
    return out, pos


def read_pnm(path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) file with maxval 255.

    Returns an (rows, cols) array for PGM and (rows, cols, 3) for PPM.
    """
    data = Path(path).read_bytes()
    tokens, pos = _pnm_tokens(data, 4)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise FrameFormatError(f"{path}: unsupported format {magic!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FrameFormatError(f"{path}: malformed header") from exc
    if maxval != 255:
        raise FrameFormatError(f"{path}: unsupported maxval {maxval}")
    if width < 1 or height < 1:
        raise FrameFormatError(f"{path}: empty image")
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise FrameFormatError(f"{path}: missing separator before pixel data")
    pos += 1
    channels = 3 if magic == b"P6" else 1
    size = width * height * channels
    raw = data[pos : pos + size]
    if len(raw) != size:
        raise FrameFormatError(f"{path}: truncated pixel data")
    img = np.frombuffer(raw, dtype=np.uint8).astype(np.float64)
    return img.reshape((height, width, 3)) if channels == 3 else img.reshape((height, width))


def _to_bytes(img):
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def write_pnm(path, img):
    """Write a gray (2-D) image as PGM or an RGB (3-D) image as PPM; values are clamped and rounded."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise FrameFormatError(f"cannot write image of shape {img.shape}")
    h, w = img.shape[:2]
    header = magic + b"\n%d %d\n255\n" % (w, h)
    _atomic_write(path, header + _to_bytes(img).tobytes())


def _scale_factor(scale):
    if scale == "raw":
        return 1.0
    if scale == "unit":
        return 1.0 / 255.0
    raise ParameterError(f"unknown scale {scale!r}; use 'raw' or 'unit'")


def read_frames(directory, pattern: str = "*.p?m", *, scale: str = "raw", grayscale: bool = False):
    """Stack the frames of a directory, sorted by file name, into a video tensor.

    Frame ``j`` becomes the lateral slice ``X[:, j, :]`` (gray) or
    ``X[:, j, :, :]`` (color, channels R, G, B).  With ``grayscale`` color
    frames are converted with the luma weights.  ``scale="unit"`` divides by 255.
    """
    files = sorted(Path(directory).glob(pattern))
    if not files:
        raise FrameFormatError(f"no frames matching {pattern!r} in {directory}")
    imgs = [read_pnm(f) for f in files]
    shape = imgs[0].shape
    for f, img in zip(files, imgs):
        if img.shape != shape:
            raise FrameFormatError(f"{f}: frame shape {img.shape} differs from {shape}")
    factor = _scale_factor(scale)
    if len(shape) == 3 and grayscale:
        imgs = [img @ np.array(LUMA_WEIGHTS) for img in imgs]
    stack = np.stack(imgs, axis=1) * factor
    return np.ascontiguousarray(stack)


def write_frames(X, directory, prefix: str = "frame", *, scale: str = "raw") -> list:
    """Write each lateral slice as a PGM (order 3) or PPM (order 4) file.

    Returns the written paths.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 4 and X.shape[3] != 3:
        raise FrameFormatError(f"color frames need three channels, got {X.shape[3]}")
    if X.ndim not in (3, 4):
        raise DimensionError(f"cannot write frames of a tensor with shape {X.shape}")
    factor = 1.0 / _scale_factor(scale)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ext = "ppm" if X.ndim == 4 else "pgm"
    digits = max(4, len(str(X.shape[1] - 1)))
    paths = []
    for j in range(X.shape[1]):
        path = directory / f"{prefix}_{j:0{digits}d}.{ext}"
        write_pnm(path, X[:, j] * factor)
        paths.append(path)
    return paths
