"""Small stand-in models for the two pipeline stages.

``PatchClassifier`` is per-pixel logistic regression on the
``(2r+1) x (2r+1)`` neighbourhood of every channel, trained with
mini-batch gradient descent on mean binary cross-entropy.  A batch is all
pixels of ``batch_size`` images.  It reads 3-channel and 4-channel input
alike, so it can serve as first stage, baseline and second stage.

``sobel_edges`` plays the edge detector, and ``ingest_predictions``
loads first-stage maps produced by any external model.
"""
from __future__ import annotations

import logging
import struct
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InputError
from .raster import Domain, Raster, RasterIOError, as_mask, as_probmap, raster_to_probmap, read_raster

__all__ = [
    "PatchClassifier",
    "PredictionError",
    "TrainConfig",
    "ingest_predictions",
    "load_checkpoint",
    "loss_gradient",
    "mean_loss",
    "predict",
    "save_checkpoint",
    "sobel_edges",
    "train",
]

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"DNW1"
_CKPT_HEADER = struct.Struct("<4sIII")
LUMA = np.array([0.299, 0.587, 0.114])


class PredictionError(InputError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    learning_rate: float = 1e-4
    seed: int = 0
    patch_radius: int = 2

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.patch_radius < 0:
            raise ValueError(f"patch_radius must be >= 0, got {self.patch_radius}")


@dataclass
class PatchClassifier:
    patch_radius: int
    channels: int
    weights: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    history: list[float] = field(default_factory=list, compare=False)

    def __post_init__(self):
        if self.channels not in (1, 3, 4):
            raise ValueError(f"unsupported channel count {self.channels}")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.weights.shape != (self.n_weights,):
            raise ValueError(f"expected {self.n_weights} weights, got {self.weights.shape}")
        if self.mean.shape != (self.channels,) or self.std.shape != (self.channels,):
            raise ValueError("normalisation stats must have one value per channel")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("non-finite weights")

    @property
    def n_weights(self) -> int:
        k = 2 * self.patch_radius + 1
        return self.channels * k * k + 1

    def with_weights(self, weights) -> "PatchClassifier":
        return replace(self, weights=np.array(weights, dtype=np.float64), history=[])

    @classmethod
    def zeros(cls, channels: int, patch_radius: int = 2) -> "PatchClassifier":
        k = 2 * patch_radius + 1
        return cls(patch_radius, channels, np.zeros(channels * k * k + 1),
                   np.zeros(channels), np.ones(channels))


def _unit_array(image: Raster) -> np.ndarray:
    """Unit-interval float64 samples, without a float32 detour for U8 data."""
    if image.domain is Domain.U8:
        return image.data.astype(np.float64) / 255.0
    return image.data.astype(np.float64)


def patch_features(model: PatchClassifier, image: Raster) -> np.ndarray:
    """``(H*W, C*(2r+1)**2)`` matrix of normalised neighbourhoods.

    Out-of-image neighbours are raw zeros, normalised like any pixel.
    """
    if image.channels != model.channels:
        raise ValueError(f"model expects {model.channels} channels, image has {image.channels}")
    r = model.patch_radius
    x = np.pad(_unit_array(image), ((0, 0), (r, r), (r, r)))
    x = (x - model.mean[:, None, None]) / model.std[:, None, None]
    k = 2 * r + 1
    win = sliding_window_view(x, (k, k), axis=(1, 2))  # (C, H, W, k, k)
    win = win.transpose(1, 2, 0, 3, 4)
    return win.reshape(image.height * image.width, -1)


def _batch_arrays(model, batch) -> tuple[np.ndarray, np.ndarray]:
    feats, labels = [], []
    for image, mask in batch:
        mask = as_mask(mask)
        if mask.shape != (image.height, image.width):
            raise ValueError("mask and image dimensions differ")
        feats.append(patch_features(model, image))
        labels.append(mask.ravel())
    return np.concatenate(feats), np.concatenate(labels).astype(np.float64)


def _logits(weights: np.ndarray, x: np.ndarray) -> np.ndarray:
    return x @ weights[:-1] + weights[-1]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument only, to stay overflow-free.
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _loss_and_grad(weights, x, y) -> tuple[float, np.ndarray]:
    z = _logits(weights, x)
    loss = np.mean(np.logaddexp(0.0, z) - y * z)
    resid = _sigmoid(z) - y
    grad = np.empty_like(weights)
    grad[:-1] = x.T @ resid / len(y)
    grad[-1] = resid.mean()
    return float(loss), grad


def mean_loss(model: PatchClassifier, batch) -> float:
    """Mean pixel cross-entropy of ``model`` on ``[(image, mask), ...]``."""
    x, y = _batch_arrays(model, batch)
    z = _logits(model.weights, x)
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def loss_gradient(model: PatchClassifier, batch) -> np.ndarray:
    """Analytic gradient of :func:`mean_loss`; the bias derivative is last."""
    x, y = _batch_arrays(model, batch)
    return _loss_and_grad(model.weights, x, y)[1]


def _channel_stats(images: list[Raster]) -> tuple[np.ndarray, np.ndarray]:
    stack = np.stack([_unit_array(im).reshape(im.channels, -1)
                      for im in images], axis=0)
    mean = stack.mean(axis=(0, 2))
    std = stack.std(axis=(0, 2))
    return mean, np.where(std > 1e-8, std, 1.0)


def train(dataset, cfg: TrainConfig | None = None) -> PatchClassifier:
    """Fit a :class:`PatchClassifier` on ``[(image, mask), ...]``.

    Deterministic for a given ``cfg.seed``: the seed drives the weight
    initialisation (uniform in +-0.01, zero bias) and the per-epoch image
    order.  ``model.history`` holds the mean training loss of each epoch.
    """
    cfg = cfg or TrainConfig()
    dataset = list(dataset)
    if not dataset:
        raise ValueError("cannot train on an empty dataset")
    channels = {im.channels for im, _ in dataset}
    if len(channels) != 1:
        raise ValueError(f"mixed channel counts in training set: {sorted(channels)}")
    k = 2 * cfg.patch_radius + 1
    for im, _ in dataset:
        if im.height < k or im.width < k:
            raise ValueError(f"images must be at least {k}x{k} for patch radius {cfg.patch_radius}")
    fg = sum(int(as_mask(m).sum()) for _, m in dataset)
    total = sum(as_mask(m).size for _, m in dataset)
    if fg in (0, total):
        warnings.warn("training masks contain a single class", RuntimeWarning, stacklevel=2)

    rng = np.random.default_rng(cfg.seed)
    (c,) = channels
    mean, std = _channel_stats([im for im, _ in dataset])
    w = np.zeros(c * k * k + 1)
    w[:-1] = rng.uniform(-0.01, 0.01, size=c * k * k)
    model = PatchClassifier(cfg.patch_radius, c, w, mean, std)

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        loss_sum, pixels = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [dataset[i] for i in order[start:start + cfg.batch_size]]
            x, y = _batch_arrays(model, batch)
            loss, grad = _loss_and_grad(model.weights, x, y)
            model.weights = model.weights - cfg.learning_rate * grad
            loss_sum += loss * len(y)
            pixels += len(y)
        model.history.append(loss_sum / pixels)
        log.debug("epoch %d loss %.6f", epoch + 1, model.history[-1])
    return model


def predict(model: PatchClassifier, image: Raster) -> np.ndarray:
    """Per-pixel foreground probability, kept strictly inside (0, 1)."""
    p = _sigmoid(_logits(model.weights, patch_features(model, image)))
    p = p.reshape(image.height, image.width).astype(np.float32)
    eps = np.float32(1e-7)
    return np.clip(p, eps, np.float32(1) - eps)


def save_checkpoint(model: PatchClassifier, path) -> None:
    """``DNW1`` + u32 radius, channels, weight count + float32 weights, means, stds."""
    payload = _CKPT_HEADER.pack(CHECKPOINT_MAGIC, model.patch_radius, model.channels,
                                model.n_weights)
    payload += model.weights.astype("<f4").tobytes()
    payload += model.mean.astype("<f4").tobytes() + model.std.astype("<f4").tobytes()
    Path(path).write_bytes(payload)


def load_checkpoint(path) -> PatchClassifier:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise InputError(f"{path}: cannot read checkpoint ({exc.strerror or exc})") from None
    if len(blob) < _CKPT_HEADER.size or blob[:4] != CHECKPOINT_MAGIC:
        raise InputError(f"{path}: not a DNW1 checkpoint")
    _, radius, channels, count = _CKPT_HEADER.unpack_from(blob)
    expected = _CKPT_HEADER.size + 4 * (count + 2 * channels)
    if len(blob) != expected:
        raise InputError(f"{path}: checkpoint size {len(blob)} != expected {expected}")
    floats = np.frombuffer(blob, dtype="<f4", offset=_CKPT_HEADER.size).astype(np.float64)
    try:
        return PatchClassifier(radius, channels, floats[:count],
                               floats[count:count + channels], floats[count + channels:])
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def sobel_edges(image: Raster) -> np.ndarray:
    """Sobel gradient magnitude of luminance, scaled so the image maximum is 1.

    Borders replicate the edge pixels; a flat image gives an all-zero map.
    One-channel input is used as luminance directly.
    """
    x = _unit_array(image)
    if image.channels == 1:
        lum = x[0]
    elif image.channels == 3:
        lum = np.tensordot(LUMA, x, axes=1)
    else:
        raise ValueError(f"sobel_edges needs 1 or 3 channels, got {image.channels}")
    p = np.pad(lum, 1, mode="edge")
    h, w = lum.shape
    win = lambda dy, dx: p[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
    gx = (win(-1, 1) + 2 * win(0, 1) + win(1, 1)) - (win(-1, -1) + 2 * win(0, -1) + win(1, -1))
    gy = (win(1, -1) + 2 * win(1, 0) + win(1, 1)) - (win(-1, -1) + 2 * win(-1, 0) + win(-1, 1))
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak <= 1e-12:
        return np.zeros((h, w), dtype=np.float32)
    return (mag / peak).astype(np.float32)


def ingest_predictions(directory, manifest, split: str | None = None) -> dict[str, np.ndarray]:
    """Load ``<sample-id>.dpf`` or ``<sample-id>.png`` maps for manifest entries.

    Every selected id must have exactly one readable 1-channel file whose
    size matches the manifest image; all offending ids are reported
    together.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise PredictionError(f"{directory}: prediction directory not found")
    maps: dict[str, np.ndarray] = {}
    missing, bad = [], []
    for entry in manifest.select(split):
        candidates = [p for p in (directory / f"{entry.sample_id}.dpf",
                                  directory / f"{entry.sample_id}.png") if p.is_file()]
        if not candidates:
            missing.append(entry.sample_id)
            continue
        try:
            probs = raster_to_probmap(read_raster(candidates[0]))
            ref = read_raster(manifest.image_path(entry))
        except (RasterIOError, ValueError) as exc:
            bad.append(f"{entry.sample_id} ({exc})")
            continue
        if probs.shape != (ref.height, ref.width):
            bad.append(f"{entry.sample_id} (size {probs.shape[1]}x{probs.shape[0]}, "
                       f"image {ref.width}x{ref.height})")
            continue
        maps[entry.sample_id] = as_probmap(probs)
    if missing:
        raise PredictionError(f"missing predictions for ids: {', '.join(missing)}")
    if bad:
        raise PredictionError(f"invalid predictions: {'; '.join(bad)}")
    return maps
