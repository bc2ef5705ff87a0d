"""Image file formats: a raw float64 layout plus PGM/PPM for fixtures.

Raw layout: magic b"DPIM", three little-endian uint32 (height, width,
channels), then height*width*channels float64 values row-major. PGM (P5)
and PPM (P6) are 8-bit with maxval 255; pixel values map linearly between
[0, 1] floats and [0, 255] bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

RAW_MAGIC = b"DPIM"


def write_raw_image(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.ndim != 3:
        raise ValueError(f"expected (H, W, channels), got shape {image.shape}")
    h, w, ch = image.shape
    with open(path, "wb") as f:
        f.write(RAW_MAGIC)
        f.write(struct.pack("<III", h, w, ch))
        f.write(np.ascontiguousarray(image).tobytes())


def read_raw_image(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != RAW_MAGIC:
        raise ValueError(f"{path}: not a raw image file (bad magic)")
    h, w, ch = struct.unpack("<III", data[4:16])
    expected = 16 + h * w * ch * 8
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(data)}")
    flat = np.frombuffer(data, dtype="<f8", offset=16)
    return flat.reshape(h, w, ch).copy()


def write_pgm(path, image: np.ndarray) -> None:
    """Write a single-channel float image in [0, 1] as binary PGM."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        if image.shape[2] != 1:
            raise ValueError("PGM holds one channel; use write_ppm for three")
        image = image[:, :, 0]
    h, w = image.shape
    pixels = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def write_ppm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"PPM needs (H, W, 3), got shape {image.shape}")
    h, w = image.shape[:2]
    pixels = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def _read_netpbm(path, magic: str, channels: int) -> np.ndarray:
    data = Path(path).read_bytes()
    # Header tokens may be separated by arbitrary whitespace and comments.
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0].decode("ascii") != magic:
        raise ValueError(f"{path}: expected {magic}, got {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:4])
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 supported, got {maxval}")
    raw = np.frombuffer(data, dtype=np.uint8, offset=pos, count=h * w * channels)
    return (raw.reshape(h, w, channels) / 255.0).astype(np.float64)


def read_pgm(path) -> np.ndarray:
    return _read_netpbm(path, "P5", 1)


def read_ppm(path) -> np.ndarray:
    return _read_netpbm(path, "P6", 3)
