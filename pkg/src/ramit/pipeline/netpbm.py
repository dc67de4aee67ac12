"""Binary Netpbm I/O: P6 (RGB) and P5 (gray), 8-bit only."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..checkpoint import atomic_write


class ImageFormatError(ValueError):
    pass


class UnsupportedFormat(ImageFormatError):
    pass


class CorruptHeader(ImageFormatError):
    pass


class TruncatedData(ImageFormatError):
    pass


@dataclass
class ImageBuffer:
    width: int
    height: int
    channels: int
    samples: bytes

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise UnsupportedFormat(f"{self.channels} channels")
        if len(self.samples) != self.width * self.height * self.channels:
            raise TruncatedData("sample count does not match dimensions")

    def to_array(self) -> np.ndarray:
        """``(C, H, W)`` float32 in [0, 1]."""
        a = np.frombuffer(self.samples, dtype=np.uint8).reshape(self.height, self.width, self.channels)
        return (a.transpose(2, 0, 1).astype(np.float32) / 255.0)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImageBuffer":
        """Quantize a ``(C, H, W)`` array in [0, 1] (values are clamped)."""
        arr = np.asarray(arr)
        if arr.ndim != 3:
            raise ValueError(f"expected (C, H, W), got {arr.shape}")
        q = np.clip(np.rint(np.clip(arr, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
        c, h, w = q.shape
        return cls(w, h, c, q.transpose(1, 2, 0).tobytes())


def _tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    toks, i, n = [], 0, len(buf)
    while len(toks) < count:
        while i < n and (buf[i:i + 1].isspace() or buf[i:i + 1] == b"#"):
            if buf[i:i + 1] == b"#":
                while i < n and buf[i:i + 1] not in (b"\n", b"\r"):
                    i += 1
            else:
                i += 1
        if i >= n:
            raise CorruptHeader("header ended early")
        j = i
        while j < n and not buf[j:j + 1].isspace() and buf[j:j + 1] != b"#":
            j += 1
        toks.append(buf[i:j])
        i = j
    # exactly one whitespace byte separates the header from the raster
    if i >= n or not buf[i:i + 1].isspace():
        raise CorruptHeader("missing whitespace after maxval")
    return toks, i + 1


def decode(buf: bytes) -> ImageBuffer:
    if buf[:2] not in (b"P5", b"P6"):
        raise UnsupportedFormat(f"magic {buf[:2]!r} is not P5/P6")
    toks, start = _tokens(buf, 4)
    try:
        width, height, maxval = (int(t) for t in toks[1:])
    except ValueError:
        raise CorruptHeader(f"non-integer header field in {toks[1:]}") from None
    if width < 1 or height < 1:
        raise CorruptHeader("dimensions must be positive")
    if maxval != 255:
        raise UnsupportedFormat(f"maxval {maxval} (only 255 supported)")
    channels = 3 if toks[0] == b"P6" else 1
    need = width * height * channels
    data = buf[start:start + need]
    if len(data) < need:
        raise TruncatedData(f"expected {need} raster bytes, found {len(data)}")
    return ImageBuffer(width, height, channels, bytes(data))


def encode(img: ImageBuffer) -> bytes:
    magic = b"P6" if img.channels == 3 else b"P5"
    return magic + f"\n{img.width} {img.height}\n255\n".encode("ascii") + img.samples


def load_image(path: str) -> ImageBuffer:
    with open(path, "rb") as f:
        return decode(f.read())


def save_image(img: ImageBuffer, path: str):
    atomic_write(path, encode(img))
