"""Image files: binary PPM (P6, 8-bit) and a minimal stdlib PNG writer.

Images are float arrays of shape (H, W, 3) with values in [0, 1];
pixel (0, 0) is the top-left corner.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib

import numpy as np


def to_u8(img) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def _atomic_write(path, payload: bytes):
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".img.tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_ppm(path, img):
    u8 = to_u8(img)
    H, W, C = u8.shape
    if C != 3:
        raise ValueError(f"PPM wants 3 channels, got {C}")
    _atomic_write(path, f"P6\n{W} {H}\n255\n".encode("ascii") + u8.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    # header = magic, width, height, maxval as whitespace/comment separated tokens
    tokens = []
    i = 0
    while len(tokens) < 4:
        if i >= len(raw):
            raise ValueError(f"{path}: truncated PPM header")
        ch = raw[i:i + 1]
        if ch == b"#":
            while i < len(raw) and raw[i:i + 1] != b"\n":
                i += 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < len(raw) and not raw[j:j + 1].isspace():
                j += 1
            tokens.append(raw[i:j])
            i = j
    if tokens[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM (magic {tokens[0]!r})")
    W, H, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 supported, got {maxval}")
    i += 1  # single whitespace byte after maxval
    need = W * H * 3
    data = raw[i:i + need]
    if len(data) < need:
        raise ValueError(f"{path}: truncated PPM payload")
    return np.frombuffer(data, dtype=np.uint8).reshape(H, W, 3).astype(np.float64) / 255.0


def write_png(path, img):
    """8-bit truecolor PNG via zlib; no external imaging dependency."""
    u8 = to_u8(img)
    H, W, C = u8.shape
    if C != 3:
        raise ValueError(f"PNG writer wants 3 channels, got {C}")

    def chunk(tag: bytes, payload: bytes) -> bytes:
        return (struct.pack(">I", len(payload)) + tag + payload
                + struct.pack(">I", zlib.crc32(tag + payload)))

    ihdr = struct.pack(">IIBBBBB", W, H, 8, 2, 0, 0, 0)
    rows = b"".join(b"\x00" + u8[r].tobytes() for r in range(H))
    png = (b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr)
           + chunk(b"IDAT", zlib.compress(rows)) + chunk(b"IEND", b""))
    _atomic_write(path, png)


def read_png(path) -> np.ndarray:
    """Reads only the PNGs this module writes (8-bit RGB, filter 0)."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != b"\x89PNG\r\n\x1a\n":
        raise ValueError(f"{path}: not a PNG")
    i = 8
    W = H = None
    idat = b""
    while i < len(raw):
        (ln,) = struct.unpack(">I", raw[i:i + 4])
        tag = raw[i + 4:i + 8]
        payload = raw[i + 8:i + 8 + ln]
        if tag == b"IHDR":
            W, H, depth, ctype = struct.unpack(">IIBB", payload[:10])
            if depth != 8 or ctype != 2:
                raise ValueError(f"{path}: unsupported PNG layout")
        elif tag == b"IDAT":
            idat += payload
        elif tag == b"IEND":
            break
        i += 12 + ln
    rows = zlib.decompress(idat)
    stride = W * 3 + 1
    out = np.empty((H, W, 3), dtype=np.uint8)
    prev = np.zeros(W * 3, dtype=np.int64)
    for r in range(H):
        row = rows[r * stride:(r + 1) * stride]
        filt, body = row[0], np.frombuffer(row[1:], dtype=np.uint8).astype(np.int64)
        if filt == 0:
            cur = body
        elif filt == 2:  # Up
            cur = (body + prev) % 256
        else:
            raise ValueError(f"{path}: unsupported PNG filter {filt}")
        out[r] = cur.astype(np.uint8).reshape(W, 3)
        prev = cur
    return out.astype(np.float64) / 255.0
