"""Raster containers, value-domain conversion and file I/O.

Images are held as planar ``(channels, height, width)`` arrays so that an
extra channel appends as one contiguous block.  Two value domains exist:

| Domain | dtype   | Range            | File format |
|--------|---------|------------------|-------------|
| U8     | uint8   | 0-255            | PNG         |
| UNIT   | float32 | 0.0-1.0 (finite) | DPF         |

Probability maps and binary masks are plain 2-D arrays (``float32`` in
[0, 1] and ``bool`` respectively); see :func:`as_probmap` and
:func:`as_mask`.

DPF is a tiny little-endian container: ``b"DPF1"``, three ``u32`` values
(width, height, channels) and then ``width*height*channels`` float32
samples in channel-major order.
"""
from __future__ import annotations

import enum
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InputError

__all__ = [
    "Domain",
    "Raster",
    "RasterIOError",
    "as_mask",
    "as_probmap",
    "mask_to_raster",
    "probmap_to_raster",
    "raster_to_mask",
    "raster_to_probmap",
    "read_raster",
    "round_u8",
    "to_u8",
    "to_unit",
    "write_raster",
]

DPF_MAGIC = b"DPF1"
_DPF_HEADER = struct.Struct("<4sIII")
_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
# PNG colour types we accept, mapped to channel counts.
_PNG_COLOR_TYPES = {0: 1, 2: 3, 3: None, 6: 4}


class Domain(enum.Enum):
    U8 = "u8"
    UNIT = "unit"


class RasterIOError(InputError, OSError):
    """Raised when a raster file cannot be read or written."""

    def __init__(self, path, cause):
        self.path = str(path)
        self.cause = cause
        super().__init__(f"{self.path}: {cause}")


@dataclass(frozen=True, eq=False)
class Raster:
    """Immutable planar image of shape ``(channels, height, width)``."""

    data: np.ndarray
    domain: Domain

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[np.newaxis]
        if data.ndim != 3:
            raise ValueError(f"expected (C, H, W) data, got shape {data.shape}")
        c, h, w = data.shape
        if c not in (1, 3, 4):
            raise ValueError(f"channel count must be 1, 3 or 4, got {c}")
        if h < 1 or w < 1:
            raise ValueError(f"empty raster {h}x{w}")
        if self.domain is Domain.U8:
            if data.dtype != np.uint8:
                if not np.issubdtype(data.dtype, np.integer):
                    raise ValueError("U8 raster needs integer samples")
                if data.size and (data.min() < 0 or data.max() > 255):
                    raise ValueError("U8 samples outside 0-255")
            data = np.array(data, dtype=np.uint8, copy=True)
        elif self.domain is Domain.UNIT:
            data = np.array(data, dtype=np.float32, copy=True)
            if not np.all(np.isfinite(data)):
                raise ValueError("UNIT raster contains non-finite samples")
            if data.size and (data.min() < 0.0 or data.max() > 1.0):
                raise ValueError("UNIT samples outside [0, 1]")
        else:
            raise ValueError(f"unknown domain {self.domain!r}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return (
            self.domain is other.domain
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )

    def __repr__(self):
        return f"Raster({self.width}x{self.height}x{self.channels}, {self.domain.name})"

    def hwc(self) -> np.ndarray:
        """Interleaved ``(H, W, C)`` view, for PIL/matplotlib."""
        return np.ascontiguousarray(np.moveaxis(self.data, 0, -1))

    @classmethod
    def from_hwc(cls, array, domain: Domain) -> "Raster":
        array = np.asarray(array)
        if array.ndim == 2:
            array = array[..., np.newaxis]
        return cls(np.moveaxis(array, -1, 0), domain)


def as_probmap(values) -> np.ndarray:
    """Validate and return a float32 ``(H, W)`` probability map."""
    probs = np.asarray(values, dtype=np.float32)
    if probs.ndim != 2:
        raise ValueError(f"probability map must be 2-D, got shape {probs.shape}")
    if not np.all(np.isfinite(probs)) or probs.min() < 0.0 or probs.max() > 1.0:
        raise ValueError("probability map values must be finite and in [0, 1]")
    return probs


def as_mask(values) -> np.ndarray:
    """Validate and return a boolean ``(H, W)`` mask.

    Accepts bool arrays or numeric arrays holding only 0 and 1.
    """
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
    if arr.dtype == np.bool_:
        return arr
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("mask values must be exactly 0 or 1")
    return arr.astype(bool)


def round_u8(values) -> np.ndarray:
    """Quantise unit-interval values with ``floor(v * 255 + 0.5)``, clamped."""
    scaled = np.floor(np.asarray(values, dtype=np.float64) * 255.0 + 0.5)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def to_unit(raster: Raster) -> Raster:
    if raster.domain is Domain.UNIT:
        return raster
    return Raster(raster.data.astype(np.float64) / 255.0, Domain.UNIT)


def to_u8(raster: Raster) -> Raster:
    if raster.domain is Domain.U8:
        return raster
    return Raster(round_u8(raster.data), Domain.U8)


def probmap_to_raster(probs) -> Raster:
    return Raster(as_probmap(probs), Domain.UNIT)


def mask_to_raster(mask) -> Raster:
    """Mask as a 1-channel U8 raster with building pixels at 255."""
    return Raster(as_mask(mask).astype(np.uint8) * 255, Domain.U8)


def raster_to_probmap(raster: Raster) -> np.ndarray:
    if raster.channels != 1:
        raise ValueError(f"probability map needs 1 channel, got {raster.channels}")
    return as_probmap(to_unit(raster).data[0])


def raster_to_mask(raster: Raster, threshold: float = 0.5) -> np.ndarray:
    """Binarise a 1-channel raster: unit value ``>= threshold`` is foreground."""
    return raster_to_probmap(raster) >= threshold


# -- file I/O ---------------------------------------------------------------

def _is_dpf_path(path: Path) -> bool:
    return path.suffix.lower() == ".dpf"


def _read_png_header(path: Path, head: bytes) -> tuple[int, int]:
    if len(head) < 29 or head[12:16] != b"IHDR":
        raise RasterIOError(path, "corrupt header: missing IHDR chunk")
    bit_depth, color_type = head[24], head[25]
    return bit_depth, color_type


def read_raster(path) -> Raster:
    """Read a PNG (8-bit gray/RGB/RGBA/palette) or DPF file."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            head = fh.read(33)
            if head.startswith(DPF_MAGIC):
                return _read_dpf(path, head, fh)
    except FileNotFoundError:
        raise RasterIOError(path, "file not found") from None
    except IsADirectoryError:
        raise RasterIOError(path, "is a directory") from None
    except PermissionError as exc:
        raise RasterIOError(path, f"unreadable ({exc.strerror})") from None

    if not head.startswith(_PNG_SIGNATURE):
        raise RasterIOError(path, "corrupt header: neither PNG nor DPF")
    bit_depth, color_type = _read_png_header(path, head)
    if bit_depth != 8:
        raise RasterIOError(path, f"unsupported bit depth {bit_depth}")
    if color_type not in _PNG_COLOR_TYPES:
        raise RasterIOError(path, f"unsupported PNG colour type {color_type}")
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode == "P":
                img = img.convert("RGBA" if "transparency" in img.info else "RGB")
            arr = np.asarray(img)
    except (OSError, SyntaxError) as exc:
        raise RasterIOError(path, f"corrupt PNG ({exc})") from None
    return Raster.from_hwc(arr, Domain.U8)


def _read_dpf(path: Path, head: bytes, fh) -> Raster:
    if len(head) < _DPF_HEADER.size:
        raise RasterIOError(path, "corrupt header: truncated DPF header")
    _, width, height, channels = _DPF_HEADER.unpack(head[: _DPF_HEADER.size])
    if channels not in (1, 3, 4) or width < 1 or height < 1:
        raise RasterIOError(
            path, f"corrupt header: {width}x{height}x{channels} is not a valid shape"
        )
    fh.seek(_DPF_HEADER.size)
    count = width * height * channels
    payload = fh.read()
    if len(payload) != 4 * count:
        raise RasterIOError(
            path, f"corrupt payload: expected {4 * count} bytes, found {len(payload)}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(channels, height, width)
    try:
        return Raster(data, Domain.UNIT)
    except ValueError as exc:
        raise RasterIOError(path, f"invalid samples ({exc})") from None


def write_raster(raster: Raster, path) -> None:
    """Write U8 rasters as PNG and UNIT rasters as DPF.

    The format follows the path suffix; ``.dpf`` takes any domain (U8 is
    converted to unit floats), anything else is written as PNG and must
    hold U8 data.
    """
    path = Path(path)
    if not path.parent.is_dir():
        raise RasterIOError(path, "parent directory does not exist")
    if _is_dpf_path(path):
        data = to_unit(raster).data.astype("<f4")
        header = _DPF_HEADER.pack(DPF_MAGIC, raster.width, raster.height, raster.channels)
        _atomic_write(path, header + data.tobytes())
        return
    if raster.domain is not Domain.U8:
        raise RasterIOError(
            path, f"PNG output needs U8 data, got {raster.channels}-channel UNIT raster"
        )
    arr = raster.hwc()
    if raster.channels == 1:
        arr = arr[..., 0]
    try:
        Image.fromarray(arr).save(path, format="PNG")
    except OSError as exc:
        raise RasterIOError(path, f"write failed ({exc})") from None


def _atomic_write(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(payload)
        os.replace(tmp, path)
    except OSError as exc:
        raise RasterIOError(path, f"write failed ({exc})") from None
