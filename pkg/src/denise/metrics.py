"""IoU and Boundary IoU for binary building masks.

Boundary IoU compares only the inner boundary bands of the two masks:
foreground pixels within Euclidean distance ``d`` of background.  ``d``
defaults to 2% of the image diagonal (at least one pixel).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError
from .morphology import boundary_band
from .raster import RasterIOError, as_mask, raster_to_mask, read_raster

__all__ = [
    "Comparison",
    "ImageScore",
    "MetricsConfig",
    "MetricsError",
    "MetricsReport",
    "boundary_iou",
    "compare_runs",
    "evaluate_dataset",
    "iou",
    "list_rasters",
    "load_report",
    "score_pair",
]


class MetricsError(InputError, ValueError):
    pass


@dataclass(frozen=True)
class MetricsConfig:
    """Band width is ``biou_pixels`` if given, else ``biou_fraction`` of the diagonal."""

    biou_fraction: float = 0.02
    biou_pixels: int | None = None
    eval_threshold: float = 0.5

    def __post_init__(self):
        if self.biou_pixels is not None:
            if int(self.biou_pixels) != self.biou_pixels or self.biou_pixels < 1:
                raise ValueError(f"biou_pixels must be an integer >= 1, got {self.biou_pixels}")
        elif not 0.0 < self.biou_fraction < 1.0:
            raise ValueError(f"biou_fraction must be in (0, 1), got {self.biou_fraction}")
        if not 0.0 < self.eval_threshold <= 1.0:
            raise ValueError(f"eval_threshold must be in (0, 1], got {self.eval_threshold}")

    def resolve_d(self, height: int, width: int) -> int:
        if self.biou_pixels is not None:
            return int(self.biou_pixels)
        diag = math.hypot(width, height)
        return max(1, math.floor(self.biou_fraction * diag + 0.5))

    def describe(self) -> str:
        if self.biou_pixels is not None:
            return f"pixels:{self.biou_pixels}"
        return f"fraction:{self.biou_fraction!r}"

    def echo(self) -> dict:
        return {"biou_d": self.describe(), "eval_threshold": self.eval_threshold}

    @classmethod
    def from_echo(cls, echo: dict) -> "MetricsConfig":
        kind, _, value = echo["biou_d"].partition(":")
        threshold = float(echo["eval_threshold"])
        if kind == "pixels":
            return cls(biou_pixels=int(value), eval_threshold=threshold)
        return cls(biou_fraction=float(value), eval_threshold=threshold)


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    pred, truth = as_mask(pred), as_mask(truth)
    if pred.shape != truth.shape:
        raise MetricsError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    return pred, truth


def iou(pred, truth) -> float:
    """``|pred & truth| / |pred | truth|``; two empty masks score 1.0."""
    pred, truth = _pair(pred, truth)
    union = np.count_nonzero(pred | truth)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & truth) / union


def boundary_iou(pred, truth, cfg: MetricsConfig | None = None) -> float:
    cfg = cfg or MetricsConfig()
    pred, truth = _pair(pred, truth)
    d = cfg.resolve_d(*pred.shape)
    return iou(boundary_band(pred, d), boundary_band(truth, d))


@dataclass(frozen=True)
class ImageScore:
    sample_id: str
    iou: float
    biou: float
    d: int
    # Both masks empty: IoU is 1.0 by convention.
    empty: bool = False


@dataclass
class MetricsReport:
    per_image: list[ImageScore]
    config: dict
    label: str = ""
    unmatched: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.per_image = sorted(self.per_image, key=lambda s: s.sample_id)

    @property
    def mean_iou(self) -> float:
        return _mean(s.iou for s in self.per_image)

    @property
    def mean_biou(self) -> float:
        return _mean(s.biou for s in self.per_image)

    @property
    def sample_ids(self) -> list[str]:
        return [s.sample_id for s in self.per_image]

    def to_text(self) -> str:
        lines = [
            "# denise metrics report",
            f"# label={self.label}",
            f"# biou_d={self.config['biou_d']}",
            f"# eval_threshold={self.config['eval_threshold']!r}",
            f"# n={len(self.per_image)}",
            f"# mean_iou={self.mean_iou!r}",
            f"# mean_biou={self.mean_biou!r}",
        ]
        if self.unmatched:
            lines.append(f"# unmatched={','.join(self.unmatched)}")
        lines.append("id\tiou\tbiou\td\tempty")
        for s in self.per_image:
            lines.append(f"{s.sample_id}\t{s.iou!r}\t{s.biou!r}\t{s.d}\t{int(s.empty)}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {
            "label": self.label,
            "config": self.config,
            "mean_iou": self.mean_iou,
            "mean_biou": self.mean_biou,
            "unmatched": self.unmatched,
            "per_image": [
                {"id": s.sample_id, "iou": s.iou, "biou": s.biou, "d": s.d, "empty": s.empty}
                for s in self.per_image
            ],
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def write(self, path) -> None:
        """Write the text report to ``path`` and a JSON twin next to it."""
        path = Path(path)
        path.write_text(self.to_text(), encoding="utf-8")
        path.with_suffix(".json").write_text(self.to_json(), encoding="utf-8")


def _mean(values) -> float:
    values = list(values)
    if not values:
        return float("nan")
    return math.fsum(values) / len(values)


def load_report(path) -> MetricsReport:
    """Parse a text report written by :meth:`MetricsReport.write`."""
    path = Path(path)
    header: dict[str, str] = {}
    scores = []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise MetricsError(f"{path}: cannot read report ({exc})") from None
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].strip().partition("=")
            if sep:
                header[key] = value
            continue
        if line.startswith("id\t"):
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise MetricsError(f"{path}:{lineno}: malformed record")
        sid, v_iou, v_biou, d, empty = parts
        scores.append(ImageScore(sid, float(v_iou), float(v_biou), int(d), empty == "1"))
    if "biou_d" not in header:
        raise MetricsError(f"{path}: missing configuration header")
    config = {"biou_d": header["biou_d"], "eval_threshold": float(header["eval_threshold"])}
    unmatched = header.get("unmatched", "")
    return MetricsReport(
        scores, config, label=header.get("label", ""),
        unmatched=unmatched.split(",") if unmatched else [],
    )


_RASTER_SUFFIXES = (".png", ".dpf")


def list_rasters(directory) -> dict[str, Path]:
    """Map sample id (file stem) to path for every PNG/DPF file in a directory."""
    directory = Path(directory)
    if not directory.is_dir():
        raise MetricsError(f"{directory}: not a directory")
    found: dict[str, Path] = {}
    for p in sorted(directory.iterdir()):
        if p.suffix.lower() not in _RASTER_SUFFIXES or not p.is_file():
            continue
        if p.stem in found:
            raise MetricsError(f"{directory}: sample {p.stem!r} has more than one file")
        found[p.stem] = p
    return found


def evaluate_dataset(pred_dir, truth_dir, cfg: MetricsConfig | None = None,
                     strict: bool = True, label: str = "", ids=None) -> MetricsReport:
    """Score every prediction against the ground-truth file with the same id.

    Predictions may be probability maps (binarised at ``cfg.eval_threshold``)
    or masks.  Ids present on only one side raise :class:`MetricsError`
    when ``strict``; otherwise they are listed in ``report.unmatched``.
    ``ids`` restricts scoring to a subset, each of which must exist on
    both sides.
    """
    cfg = cfg or MetricsConfig()
    preds = list_rasters(pred_dir)
    truths = list_rasters(truth_dir)
    if ids is not None:
        ids = set(ids)
        absent = sorted(ids - (preds.keys() & truths.keys()))
        if absent:
            raise MetricsError(f"requested ids without prediction or truth: {', '.join(absent)}")
        preds = {k: v for k, v in preds.items() if k in ids}
        truths = {k: v for k, v in truths.items() if k in ids}
    common = sorted(preds.keys() & truths.keys())
    if not common:
        raise MetricsError(f"no matching sample ids between {pred_dir} and {truth_dir}")
    unmatched = sorted(preds.keys() ^ truths.keys())
    if unmatched and strict:
        raise MetricsError(f"unmatched sample ids: {', '.join(unmatched)}")
    scores = []
    for sid in common:
        try:
            pred = raster_to_mask(read_raster(preds[sid]), cfg.eval_threshold)
            truth = raster_to_mask(read_raster(truths[sid]), 0.5)
        except (RasterIOError, ValueError) as exc:
            raise MetricsError(f"sample {sid}: {exc}") from exc
        scores.append(score_pair(sid, pred, truth, cfg))
    return MetricsReport(scores, cfg.echo(), label=label, unmatched=unmatched)


def score_pair(sample_id: str, pred, truth, cfg: MetricsConfig) -> ImageScore:
    pred, truth = _pair(pred, truth)
    d = cfg.resolve_d(*pred.shape)
    return ImageScore(
        sample_id,
        iou(pred, truth),
        iou(boundary_band(pred, d), boundary_band(truth, d)),
        d,
        empty=not (pred.any() or truth.any()),
    )


@dataclass(frozen=True)
class ComparisonRow:
    model: str
    method: str
    iou: float
    biou: float
    delta_iou: float
    delta_biou: float


@dataclass(frozen=True)
class Comparison:
    rows: tuple[ComparisonRow, ...]
    best_iou: int
    best_biou: int

    def to_text(self) -> str:
        header = ("Model", "Method", "IoU", "BIoU", "dIoU", "dBIoU")
        body = []
        for i, r in enumerate(self.rows):
            body.append((
                r.model,
                r.method,
                f"{r.iou:.4f}" + ("*" if i == self.best_iou else " "),
                f"{r.biou:.4f}" + ("*" if i == self.best_biou else " "),
                f"{r.delta_iou:+.4f}",
                f"{r.delta_biou:+.4f}",
            ))
        widths = [max(len(row[k]) for row in (header, *body)) for k in range(len(header))]
        fmt = lambda row: " | ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()
        rule = "-+-".join("-" * w for w in widths)
        lines = [fmt(header), rule, *map(fmt, body), "", "* best per metric"]
        return "\n".join(lines) + "\n"


def compare_runs(baseline: MetricsReport, enhanced: MetricsReport, model: str = "model",
                 baseline_method: str = "Standalone",
                 enhanced_method: str = "DeNISE") -> Comparison:
    """Side-by-side table of two runs; deltas are relative to the baseline.

    Ties go to the baseline.
    """
    if baseline.sample_ids != enhanced.sample_ids:
        missing = sorted(set(baseline.sample_ids) ^ set(enhanced.sample_ids))
        raise MetricsError(f"reports cover different samples: {', '.join(missing[:10])}")
    b_iou, b_biou = baseline.mean_iou, baseline.mean_biou
    rows = (
        ComparisonRow(model, baseline_method, b_iou, b_biou, 0.0, 0.0),
        ComparisonRow(model, enhanced_method, enhanced.mean_iou, enhanced.mean_biou,
                      enhanced.mean_iou - b_iou, enhanced.mean_biou - b_biou),
    )
    return Comparison(
        rows,
        best_iou=int(rows[1].iou > rows[0].iou),
        best_biou=int(rows[1].biou > rows[0].biou),
    )
