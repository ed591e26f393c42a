"""8-bit RGB image codecs (binary PPM and PNG), bilinear resize and scaling.

Pixel arrays are ``uint8`` with shape ``(H, W, 3)``.
"""

from __future__ import annotations

import os
import struct
import zlib
from pathlib import Path

import numpy as np

from ..errors import CorruptFile, UnsupportedFormat
from ..tensor import Tensor, get_dtype

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _as_rgb(pixels) -> np.ndarray:
    arr = np.asarray(pixels)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise UnsupportedFormat(f"expected an (H, W, 3) image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        raise UnsupportedFormat(f"expected uint8 pixels, got {arr.dtype}")
    return np.ascontiguousarray(arr)


# PPM -----------------------------------------------------------------------

def encode_ppm(pixels) -> bytes:
    arr = _as_rgb(pixels)
    h, w, _ = arr.shape
    return b"P6\n%d %d\n255\n" % (w, h) + arr.tobytes()


def decode_ppm(data: bytes) -> np.ndarray:
    if not data.startswith(b"P6"):
        raise UnsupportedFormat("not a binary (P6) PPM file")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise CorruptFile("malformed PPM header")
        fields.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise CorruptFile("malformed PPM header")
    pos += 1
    w, h, maxval = fields
    if maxval != 255:
        raise UnsupportedFormat(f"PPM maxval {maxval} (only 255 supported)")
    if w < 1 or h < 1:
        raise CorruptFile(f"PPM dimensions {w}x{h}")
    body = data[pos:pos + w * h * 3]
    if len(body) != w * h * 3:
        raise CorruptFile(f"PPM pixel data truncated ({len(body)} of {w * h * 3} bytes)")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).copy()


# PNG -----------------------------------------------------------------------

def _chunk(kind: bytes, payload: bytes) -> bytes:
    crc = zlib.crc32(kind + payload) & 0xFFFFFFFF
    return struct.pack(">I", len(payload)) + kind + payload + struct.pack(">I", crc)


def encode_png(pixels) -> bytes:
    """Truecolor 8-bit PNG, filter type 0 on every row."""
    arr = _as_rgb(pixels)
    h, w, _ = arr.shape
    raw = np.concatenate([np.zeros((h, 1), np.uint8), arr.reshape(h, w * 3)], axis=1)
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    return (PNG_SIGNATURE + _chunk(b"IHDR", ihdr)
            + _chunk(b"IDAT", zlib.compress(raw.tobytes(), 9)) + _chunk(b"IEND", b""))


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    return b if pb <= pc else c


def _unfilter(raw: bytes, h: int, stride: int, bpp: int) -> np.ndarray:
    out = np.zeros((h, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.uint8)
    pos = 0
    for y in range(h):
        ftype = raw[pos]
        line = np.frombuffer(raw, dtype=np.uint8, count=stride, offset=pos + 1).copy()
        pos += stride + 1
        if ftype == 0:
            pass
        elif ftype == 1:
            for i in range(bpp, stride):
                line[i] = (int(line[i]) + int(line[i - bpp])) & 0xFF
        elif ftype == 2:
            line = (line.astype(np.uint16) + prev).astype(np.uint8)
        elif ftype == 3:
            for i in range(stride):
                left = int(line[i - bpp]) if i >= bpp else 0
                line[i] = (int(line[i]) + ((left + int(prev[i])) >> 1)) & 0xFF
        elif ftype == 4:
            for i in range(stride):
                left = int(line[i - bpp]) if i >= bpp else 0
                upleft = int(prev[i - bpp]) if i >= bpp else 0
                line[i] = (int(line[i]) + _paeth(left, int(prev[i]), upleft)) & 0xFF
        else:
            raise CorruptFile(f"unknown PNG filter type {ftype}")
        out[y] = line
        prev = line
    return out


def decode_png(data: bytes) -> np.ndarray:
    if not data.startswith(PNG_SIGNATURE):
        raise UnsupportedFormat("not a PNG file")
    pos = len(PNG_SIGNATURE)
    header = None
    idat = []
    while True:
        if pos + 8 > len(data):
            raise CorruptFile("PNG ended before IEND")
        length, kind = struct.unpack(">I4s", data[pos:pos + 8])
        payload = data[pos + 8:pos + 8 + length]
        crc_bytes = data[pos + 8 + length:pos + 12 + length]
        if len(payload) != length or len(crc_bytes) != 4:
            raise CorruptFile("truncated PNG chunk")
        if struct.unpack(">I", crc_bytes)[0] != zlib.crc32(kind + payload) & 0xFFFFFFFF:
            raise CorruptFile(f"CRC mismatch in {kind!r} chunk")
        pos += 12 + length
        if kind == b"IHDR":
            header = struct.unpack(">IIBBBBB", payload)
        elif kind == b"IDAT":
            idat.append(payload)
        elif kind == b"IEND":
            break
    if header is None:
        raise CorruptFile("PNG has no IHDR chunk")
    w, h, depth, color, _comp, _filt, interlace = header
    if depth != 8 or color != 2 or interlace != 0:
        raise UnsupportedFormat(
            f"PNG depth={depth} color_type={color} interlace={interlace}; need 8-bit RGB, non-interlaced")
    try:
        raw = zlib.decompress(b"".join(idat))
    except zlib.error as e:
        raise CorruptFile(f"bad PNG image data: {e}") from None
    stride = w * 3
    if len(raw) != h * (stride + 1):
        raise CorruptFile("PNG image data has the wrong length")
    return _unfilter(raw, h, stride, 3).reshape(h, w, 3)


# file level ------------------------------------------------------------------

IMAGE_SUFFIXES = (".ppm", ".png")


def decode_image(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data.startswith(PNG_SIGNATURE):
        return decode_png(data)
    if data.startswith(b"P6"):
        return decode_ppm(data)
    raise UnsupportedFormat(f"{path}: unrecognized image format")


def encode_image(pixels, path) -> None:
    """Write ``pixels`` as PNG or PPM depending on the file suffix."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".png":
        blob = encode_png(pixels)
    elif suffix == ".ppm":
        blob = encode_ppm(pixels)
    else:
        raise UnsupportedFormat(f"cannot encode {suffix!r}; use .ppm or .png")
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


# resampling and scaling ------------------------------------------------------

def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


def _axis_weights(n_in: int, n_out: int):
    # half-pixel centers, clamped at the borders
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_bilinear(pixels, height: int, width: int) -> np.ndarray:
    """Bilinear resample of an (H, W, C) uint8 image to (height, width, C)."""
    if height < 1 or width < 1:
        raise ValueError(f"target size {height}x{width} must be positive")
    arr = np.asarray(pixels)
    h, w = arr.shape[:2]
    if (h, w) == (height, width):
        return arr.copy()
    src = arr.astype(np.float64)
    y0, y1, fy = _axis_weights(h, height)
    x0, x1, fx = _axis_weights(w, width)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bottom = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy) + bottom * fy
    return np.clip(_round_half_up(out), 0, 255).astype(np.uint8)


NORMALIZE_MODES = {"gan": (1 / 127.5, -1.0), "clf": (1 / 255.0, 0.0)}


def normalize(pixels, mode: str = "gan") -> Tensor:
    """Map uint8 images ``(H, W, C)`` or ``(N, H, W, C)`` to an NCHW tensor.

    ``gan`` maps to [-1, 1], ``clf`` to [0, 1].
    """
    scale, shift = NORMALIZE_MODES[mode]
    arr = np.asarray(pixels)
    if arr.ndim == 3:
        arr = arr[None]
    out = arr.astype(np.float64) * scale + shift
    return Tensor(out.transpose(0, 3, 1, 2).astype(get_dtype()))


def denormalize(x, mode: str = "gan") -> np.ndarray:
    """Inverse of :func:`normalize`: NCHW floats to (N, H, W, C) uint8, round half up."""
    scale, shift = NORMALIZE_MODES[mode]
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    vals = (data.astype(np.float64) - shift) / scale
    vals = np.clip(_round_half_up(vals), 0, 255).astype(np.uint8)
    return np.ascontiguousarray(vals.transpose(0, 2, 3, 1))
