"""
Binary PGM (P5) and PPM (P6) codec, 8-bit, maxval 255

Rasters are uint8 arrays: (H, W) for P5 and (H, W, 3) for P6.
"""
from typing import Tuple
import logging
import os
import numpy as np

from ..exceptions import FormatError

logger = logging.getLogger(__name__)

MAGIC_CHANNELS = {b"P5": 1, b"P6": 3}
MAXVAL = 255
_WHITESPACE = b" \t\r\n\v\f"


def _header_tokens(data: bytes, path: str) -> Tuple[list, int]:
    """First four header tokens and the offset of the raster"""
    tokens = []
    pos = 0
    size = len(data)
    while len(tokens) < 4:
        while pos < size and data[pos] in _WHITESPACE:
            pos += 1
        if pos < size and data[pos:pos + 1] == b"#":
            while pos < size and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        if pos >= size:
            raise FormatError("truncated header", path=path)
        start = pos
        while pos < size and data[pos] not in _WHITESPACE and data[pos:pos + 1] != b"#":
            pos += 1
        tokens.append(data[start:pos])
        if len(tokens) == 1 and tokens[0] not in MAGIC_CHANNELS:
            raise FormatError(f"unsupported magic {tokens[0][:8]!r}; expected P5 or P6", path=path)
    # exactly one whitespace byte separates maxval from the raster
    if pos >= size or data[pos] not in _WHITESPACE:
        raise FormatError("missing whitespace after maxval", path=path)
    return tokens, pos + 1


def decode_image(data: bytes, path: str = "<bytes>") -> np.ndarray:
    if len(data) < 2 or data[:2] not in MAGIC_CHANNELS:
        raise FormatError(f"unsupported magic {data[:2]!r}; expected P5 or P6", path=path)
    tokens, offset = _header_tokens(data, path)
    magic, width, height, maxval = tokens
    try:
        width, height, maxval = int(width), int(height), int(maxval)
    except ValueError:
        raise FormatError(f"non-numeric header fields {tokens[1:]}", path=path)
    if width <= 0 or height <= 0:
        raise FormatError(f"image dimensions must be positive, got {width}x{height}", path=path)
    if maxval != MAXVAL:
        raise FormatError(f"maxval must be {MAXVAL}, got {maxval}", path=path)

    channels = MAGIC_CHANNELS[magic]
    expected = width * height * channels
    raster = data[offset:offset + expected]
    if len(raster) < expected:
        raise FormatError(f"truncated raster: expected {expected} bytes, got {len(raster)}", path=path)
    pixels = np.frombuffer(raster, dtype=np.uint8)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return pixels.reshape(shape).copy()


def encode_image(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        raise FormatError(f"pixels must be uint8, got {pixels.dtype}")
    if pixels.ndim == 2:
        magic = b"P5"
    elif pixels.ndim == 3 and pixels.shape[2] == 3:
        magic = b"P6"
    else:
        raise FormatError(f"pixels must be (H, W) or (H, W, 3), got {pixels.shape}")
    height, width = pixels.shape[:2]
    if width <= 0 or height <= 0:
        raise FormatError(f"image dimensions must be positive, got {width}x{height}")
    header = magic + f"\n{width} {height}\n{MAXVAL}\n".encode("ascii")
    return header + np.ascontiguousarray(pixels).tobytes()


def read_image(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    return decode_image(data, path)


def write_image(path: str, pixels: np.ndarray) -> None:
    data = encode_image(pixels)
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as f:
        f.write(data)
