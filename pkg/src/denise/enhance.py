"""Fuse first-stage predictions into images for a second-stage model.

Two first-stage sources are supported: segmentation probabilities
(``Variant.SEG``) and edge strength maps (``Variant.EDGE``).  Either can be
merged into the RGB image (``Mode.MERGE3``) or appended as a fourth
channel (``Mode.CONCAT4``).

Merging builds a two-valued multiplier map.  Predictions are thresholded,
the segmentation variant additionally dilates the result with a square
element, and the binary map is clamped into ``[clip_low, clip_high]``.
With the defaults, pixels near predicted buildings keep their brightness
and everything else drops to half.
"""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field

import numpy as np

from .morphology import Square, dilate
from .raster import Domain, Raster, as_mask, as_probmap, round_u8

__all__ = [
    "EnhanceConfig",
    "EnhancedSample",
    "Mode",
    "Variant",
    "build_multiplier",
    "build_multiplier_edge",
    "build_multiplier_seg",
    "concat4",
    "enhance_sample",
    "merge3",
    "threshold_probs",
]


class Variant(enum.Enum):
    SEG = "seg"
    EDGE = "edge"


class Mode(enum.Enum):
    MERGE3 = "merge3"
    CONCAT4 = "concat4"


@dataclass(frozen=True)
class EnhanceConfig:
    variant: Variant = Variant.SEG
    mode: Mode = Mode.MERGE3
    threshold: float = 0.5
    clip_low: float = 0.5
    clip_high: float = 1.0
    dilation_radius: int = 15
    # Run the merge preprocessing (threshold/dilate/clip) on the 4th channel too.
    preprocess_channel4: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "mode", Mode(self.mode))
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError(f"threshold must be in (0, 1], got {self.threshold}")
        if not 0.0 <= self.clip_low < self.clip_high <= 1.0:
            raise ValueError(
                f"need 0 <= clip_low < clip_high <= 1, got [{self.clip_low}, {self.clip_high}]"
            )
        if int(self.dilation_radius) != self.dilation_radius or self.dilation_radius < 0:
            raise ValueError(f"dilation_radius must be an integer >= 0, got {self.dilation_radius}")

    def echo(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        d["mode"] = self.mode.value
        return d


@dataclass(frozen=True)
class EnhancedSample:
    image: Raster
    mask: np.ndarray
    config: EnhanceConfig
    source_id: str = ""
    provenance: dict = field(default_factory=dict)

    def provenance_line(self) -> str:
        """One-line ``key=value`` record of how this sample was produced."""
        items = {"source": self.source_id, **self.config.echo(), **self.provenance}
        return " ".join(f"{k}={v}" for k, v in items.items())


def threshold_probs(probs, t: float) -> np.ndarray:
    """Foreground wherever ``prob >= t``."""
    return as_probmap(probs) >= np.float32(t)


def _clip_binary(mask: np.ndarray, low: float, high: float) -> np.ndarray:
    return np.clip(mask.astype(np.float32), np.float32(low), np.float32(high))


def build_multiplier_seg(probs, cfg: EnhanceConfig) -> np.ndarray:
    if cfg.variant is not Variant.SEG:
        raise ValueError("build_multiplier_seg needs a SEG config")
    mask = threshold_probs(probs, cfg.threshold)
    if cfg.dilation_radius > 0:
        mask = dilate(mask, Square(cfg.dilation_radius))
    return _clip_binary(mask, cfg.clip_low, cfg.clip_high)


def build_multiplier_edge(grads, cfg: EnhanceConfig) -> np.ndarray:
    if cfg.variant is not Variant.EDGE:
        raise ValueError("build_multiplier_edge needs an EDGE config")
    return _clip_binary(threshold_probs(grads, cfg.threshold), cfg.clip_low, cfg.clip_high)


def build_multiplier(prediction, cfg: EnhanceConfig) -> np.ndarray:
    if cfg.variant is Variant.SEG:
        return build_multiplier_seg(prediction, cfg)
    return build_multiplier_edge(prediction, cfg)


def _check_dims(image: Raster, plane: np.ndarray, what: str) -> None:
    if plane.shape != (image.height, image.width):
        raise ValueError(
            f"{what} is {plane.shape[1]}x{plane.shape[0]}, image is {image.width}x{image.height}"
        )


def merge3(image: Raster, multiplier) -> Raster:
    """Scale every channel by the multiplier and requantise to U8.

    Equivalent to ``round_u8(to_unit(v) * m)``.  For U8 input the product
    is formed as ``floor(v * m + 0.5)`` without the detour through unit
    floats, so exact half-way cases (odd ``v`` with ``m = 0.5``) always
    round up.
    """
    if image.channels != 3:
        raise ValueError(f"merge3 needs a 3-channel image, got {image.channels}")
    m = as_probmap(multiplier)
    _check_dims(image, m, "multiplier")
    m = m.astype(np.float64)
    if image.domain is Domain.U8:
        scaled = np.floor(image.data.astype(np.float64) * m + 0.5)
        return Raster(np.clip(scaled, 0, 255).astype(np.uint8), Domain.U8)
    return Raster(round_u8(image.data.astype(np.float64) * m), Domain.U8)


def concat4(image: Raster, probs) -> Raster:
    """Append the probability map as a 4th channel in the image's domain."""
    if image.channels != 3:
        raise ValueError(f"concat4 needs a 3-channel image, got {image.channels}")
    p = as_probmap(probs)
    _check_dims(image, p, "probability map")
    if image.domain is Domain.U8:
        extra = round_u8(p)
    else:
        extra = p
    return Raster(np.concatenate([image.data, extra[np.newaxis]], axis=0), image.domain)


def enhance_sample(image: Raster, prediction, mask, cfg: EnhanceConfig,
                   source_id: str = "") -> EnhancedSample:
    """Produce one enhanced training sample; the ground-truth mask passes through."""
    prediction = as_probmap(prediction)
    mask = as_mask(mask)
    _check_dims(image, prediction, "prediction")
    _check_dims(image, mask, "mask")
    if cfg.mode is Mode.MERGE3:
        out = merge3(image, build_multiplier(prediction, cfg))
    elif cfg.preprocess_channel4:
        out = concat4(image, build_multiplier(prediction, cfg))
    else:
        out = concat4(image, prediction)
    return EnhancedSample(image=out, mask=mask, config=cfg, source_id=source_id)
