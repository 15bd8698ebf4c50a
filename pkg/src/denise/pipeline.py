"""Two-stage enhancement pipeline on a manifest-described dataset.

The full run trains (or derives) a first-stage predictor, enhances every
image with its predictions, trains the second-stage classifier on the
enhanced training split and scores it on the test split.  A baseline leg
trains the same classifier on the raw images so the two can be compared.

Run directory layout::

    data/              synthetic dataset (unless an existing manifest is given)
    stage1/preds/      first-stage maps, <id>.dpf
    enhanced/          enhanced images, manifest.txt, provenance.txt
    baseline/          model.dnw, preds/, report.txt
    denise/            model.dnw, preds/, report.txt
    comparison.txt
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .enhance import EnhanceConfig, Mode, Variant, enhance_sample
from .errors import ConfigError, InputError
from .metrics import Comparison, MetricsConfig, MetricsReport, compare_runs, evaluate_dataset
from .raster import mask_to_raster, probmap_to_raster, write_raster
from .refmodels import (
    PatchClassifier,
    TrainConfig,
    ingest_predictions,
    predict,
    save_checkpoint,
    sobel_edges,
    train,
)
from .synth import (
    DatasetManifest,
    Entry,
    SceneConfig,
    generate_dataset,
    load_manifest,
    relative_to,
    save_manifest,
    split_dataset,
)

__all__ = [
    "PipelineConfig",
    "PipelineResult",
    "enhance_split",
    "method_label",
    "predict_split",
    "run_pipeline",
    "stage1_predictions",
    "train_on_split",
]

log = logging.getLogger(__name__)

STAGE1_CHOICES = ("classifier", "sobel", "oracle")


@dataclass(frozen=True)
class PipelineConfig:
    run_dir: Path
    scene: SceneConfig = field(default_factory=SceneConfig)
    enhance: EnhanceConfig = field(default_factory=EnhanceConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    n_images: int = 200
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    # "classifier", "sobel", "oracle" or "external:<dir>".
    stage1: str | None = None
    baseline_only: bool = False
    manifest: Path | None = None

    def __post_init__(self):
        object.__setattr__(self, "run_dir", Path(self.run_dir))
        stage1 = self.stage1 or default_stage1(self.enhance.variant)
        object.__setattr__(self, "stage1", stage1)
        if stage1 not in STAGE1_CHOICES and not stage1.startswith("external:"):
            raise ConfigError(f"unknown stage1 {stage1!r}")
        if stage1 == "external:":
            raise ConfigError("external stage1 needs a directory: external:<dir>")
        if self.n_images < 3:
            raise ConfigError("n_images must be >= 3")


@dataclass
class PipelineResult:
    baseline: MetricsReport
    enhanced: MetricsReport | None
    comparison: Comparison | None
    manifest: DatasetManifest


def default_stage1(variant: Variant) -> str:
    return "classifier" if variant is Variant.SEG else "sobel"


def method_label(cfg: EnhanceConfig) -> str:
    name = "Seg-DeNISE" if cfg.variant is Variant.SEG else "Edge-DeNISE"
    channels = 3 if cfg.mode is Mode.MERGE3 else 4
    return f"{name} ({channels}-channels)"


def train_on_split(manifest: DatasetManifest, split: str, cfg: TrainConfig) -> PatchClassifier:
    entries = manifest.split(split)
    if not entries:
        raise InputError(f"split {split!r} is empty")
    return train([manifest.load(e) for e in entries], cfg)


def predict_split(manifest: DatasetManifest, split: str | None, out_dir,
                  model: PatchClassifier | None = None) -> Path:
    """Write one DPF probability map per entry; Sobel edges when ``model`` is None."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for entry in manifest.select(split):
        image, _ = manifest.load(entry)
        probs = sobel_edges(image) if model is None else predict(model, image)
        write_raster(probmap_to_raster(probs), out_dir / f"{entry.sample_id}.dpf")
    return out_dir


def stage1_predictions(cfg: PipelineConfig, manifest: DatasetManifest) -> dict[str, np.ndarray]:
    """First-stage maps for every manifest entry, also written to ``stage1/preds``."""
    out_dir = cfg.run_dir / "stage1" / "preds"
    if cfg.stage1.startswith("external:"):
        return ingest_predictions(cfg.stage1[len("external:"):], manifest)
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.stage1 == "classifier":
        model = train_on_split(manifest, "train", cfg.train)
        save_checkpoint(model, cfg.run_dir / "stage1" / "model.dnw")
        predict_split(manifest, None, out_dir, model)
    elif cfg.stage1 == "sobel":
        predict_split(manifest, None, out_dir)
    else:
        # Ground-truth-derived maps: the mask itself, or Sobel edges of its render.
        for entry in manifest.entries:
            _, mask = manifest.load(entry)
            if cfg.enhance.variant is Variant.SEG:
                probs = mask.astype(np.float32)
            else:
                probs = sobel_edges(mask_to_raster(mask))
            write_raster(probmap_to_raster(probs), out_dir / f"{entry.sample_id}.dpf")
    return ingest_predictions(out_dir, manifest)


def enhance_split(manifest: DatasetManifest, predictions: dict, cfg: EnhanceConfig,
                  out_dir, split: str | None = None) -> DatasetManifest:
    """Enhance the selected entries and write a manifest for the result.

    3-channel output is stored as PNG, 4-channel output as DPF.  Masks are
    referenced in place, never copied or altered.  ``provenance.txt`` holds
    one line per sample.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    entries, provenance = [], []
    missing = [e.sample_id for e in manifest.select(split) if e.sample_id not in predictions]
    if missing:
        raise InputError(f"missing predictions for ids: {', '.join(missing)}")
    for entry in manifest.select(split):
        image, mask = manifest.load(entry)
        sample = enhance_sample(image, predictions[entry.sample_id], mask, cfg,
                                source_id=entry.sample_id)
        suffix = ".png" if sample.image.channels == 3 else ".dpf"
        image_rel = f"images/{entry.sample_id}{suffix}"
        write_raster(sample.image, out_dir / image_rel)
        mask_rel = relative_to(manifest.mask_path(entry).resolve(), out_dir.resolve())
        entries.append(Entry(entry.sample_id, image_rel, mask_rel, entry.split))
        provenance.append(f"{entry.sample_id}\t{sample.provenance_line()}")
    config = {**manifest.config, **{f"enhance.{k}": v for k, v in cfg.echo().items()}}
    enhanced = DatasetManifest(out_dir, entries, config, manifest.seed)
    save_manifest(enhanced, out_dir / "manifest.txt")
    (out_dir / "provenance.txt").write_text("\n".join(provenance) + "\n", encoding="utf-8")
    return enhanced


def _mask_dir(manifest: DatasetManifest, split: str) -> Path:
    dirs = {manifest.mask_path(e).parent.resolve() for e in manifest.split(split)}
    if len(dirs) != 1:
        raise InputError(f"masks of split {split!r} are spread over {len(dirs)} directories")
    return dirs.pop()


def _leg(name: str, cfg: PipelineConfig, train_manifest: DatasetManifest,
         truth_manifest: DatasetManifest, label: str) -> MetricsReport:
    leg_dir = cfg.run_dir / name
    leg_dir.mkdir(parents=True, exist_ok=True)
    model = train_on_split(train_manifest, "train", cfg.train)
    save_checkpoint(model, leg_dir / "model.dnw")
    pred_dir = predict_split(train_manifest, "test", leg_dir / "preds", model)
    test_ids = [e.sample_id for e in truth_manifest.split("test")]
    report = evaluate_dataset(pred_dir, _mask_dir(truth_manifest, "test"), cfg.metrics,
                              label=label, ids=test_ids)
    report.write(leg_dir / "report.txt")
    log.info("%s: IoU %.4f BIoU %.4f", label, report.mean_iou, report.mean_biou)
    return report


def prepare_dataset(cfg: PipelineConfig) -> DatasetManifest:
    if cfg.manifest is not None:
        manifest = load_manifest(cfg.manifest)
        if not all(manifest.counts().values()):
            raise InputError(f"{cfg.manifest}: needs non-empty train/val/test splits")
        return manifest
    data_dir = cfg.run_dir / "data"
    manifest = generate_dataset(cfg.scene, cfg.n_images, data_dir)
    manifest = split_dataset(manifest, cfg.ratios, seed=cfg.scene.seed)
    save_manifest(manifest, data_dir / "manifest.txt")
    return manifest


def run_pipeline(cfg: PipelineConfig) -> PipelineResult:
    cfg.run_dir.mkdir(parents=True, exist_ok=True)
    manifest = prepare_dataset(cfg)
    baseline = _leg("baseline", cfg, manifest, manifest, "Standalone")
    if cfg.baseline_only:
        return PipelineResult(baseline, None, None, manifest)

    label = method_label(cfg.enhance)
    preds = stage1_predictions(cfg, manifest)
    enhanced_manifest = enhance_split(manifest, preds, cfg.enhance, cfg.run_dir / "enhanced")
    enhanced = _leg("denise", cfg, enhanced_manifest, manifest, label)
    comparison = compare_runs(baseline, enhanced, model="PatchClassifier",
                              enhanced_method=label)
    (cfg.run_dir / "comparison.txt").write_text(comparison.to_text(), encoding="utf-8")
    return PipelineResult(baseline, enhanced, comparison, manifest)
