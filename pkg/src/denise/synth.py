"""Synthetic aerial building scenes and dataset manifests.

Each scene is a small RGB tile with textured ground, a few roofs
(rectangles, rotated rectangles and L-shapes), optional cast shadows and
tree crowns that partly hide roofs.  The ground-truth mask is the union of
roof footprints; trees and shadows change image pixels only.

Manifests are line-oriented text::

    # denise-manifest v1
    # seed=0
    # config.image_size=64
    00000<TAB>images/00000.png<TAB>masks/00000.png<TAB>train

Paths are relative to the manifest's directory.
"""
from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from .errors import InputError
from .raster import Domain, Raster, mask_to_raster, raster_to_mask, read_raster, round_u8, write_raster

__all__ = [
    "DatasetManifest",
    "Entry",
    "ManifestError",
    "Scene",
    "SceneConfig",
    "generate_dataset",
    "load_manifest",
    "render_scene",
    "save_manifest",
    "split_dataset",
]

SPLITS = ("train", "val", "test")
MIN_SIDE = 6
MIN_AREA = 16


class ManifestError(InputError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    image_size: int = 64
    min_buildings: int = 1
    max_buildings: int = 4
    min_side: int = 8
    max_side: int = 22
    rotated_prob: float = 0.4
    l_shape_prob: float = 0.3
    roof_brightness: tuple[float, float] = (0.45, 0.85)
    ground_brightness: tuple[float, float] = (0.25, 0.6)
    noise_std: float = 0.04
    occlusion_prob: float = 0.3
    occlusion_max_fraction: float = 0.3
    shadow_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.image_size < 32:
            raise ValueError(f"image_size must be >= 32, got {self.image_size}")
        if not 1 <= self.min_buildings <= self.max_buildings:
            raise ValueError("need 1 <= min_buildings <= max_buildings")
        if not MIN_SIDE <= self.min_side <= self.max_side < self.image_size - 4:
            raise ValueError(f"building sides must satisfy {MIN_SIDE} <= min <= max < image_size - 4")
        for name in ("rotated_prob", "l_shape_prob", "occlusion_prob",
                     "occlusion_max_fraction", "shadow_prob", "noise_std"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        for name in ("roof_brightness", "ground_brightness"):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo <= hi <= 1.0:
                raise ValueError(f"{name} must be an ordered range inside [0, 1]")

    def echo(self) -> dict:
        d = asdict(self)
        for name in ("roof_brightness", "ground_brightness"):
            d[name] = ",".join(repr(v) for v in d[name])
        return d

    @classmethod
    def from_echo(cls, echo: dict) -> "SceneConfig":
        kwargs = {}
        for f in cls.__dataclass_fields__.values():
            if f.name not in echo:
                continue
            raw = echo[f.name]
            if f.name in ("roof_brightness", "ground_brightness"):
                kwargs[f.name] = tuple(float(v) for v in str(raw).split(","))
            elif isinstance(f.default, int):
                kwargs[f.name] = int(raw)
            else:
                kwargs[f.name] = float(raw)
        return cls(**kwargs)


@dataclass
class Scene:
    """One rendered tile.

    ``clean`` is the same tile without tree crowns (identical noise), and
    ``footprints`` holds one boolean mask per building.
    """

    image: Raster
    clean: Raster
    mask: np.ndarray
    footprints: list[np.ndarray]


# -- geometry ---------------------------------------------------------------

def _rectangle(w: float, h: float) -> np.ndarray:
    return np.array([[-w / 2, -h / 2], [w / 2, -h / 2], [w / 2, h / 2], [-w / 2, h / 2]])


def _l_shape(w: float, h: float, rng: np.random.Generator) -> np.ndarray:
    # Cut a corner block of at most half of each side, leaving arms >= MIN_SIDE.
    cw = rng.uniform(0.3, 0.5) * w
    ch = rng.uniform(0.3, 0.5) * h
    x0, y0, x1, y1 = -w / 2, -h / 2, w / 2, h / 2
    return np.array([
        [x0, y0], [x1 - cw, y0], [x1 - cw, y0 + ch], [x1, y0 + ch], [x1, y1], [x0, y1],
    ])


def _fill_polygon(points: np.ndarray, size: int) -> np.ndarray:
    img = Image.new("L", (size, size), 0)
    ImageDraw.Draw(img).polygon([tuple(p) for p in points], fill=1)
    return np.asarray(img, dtype=bool)


def _fill_disk(cx: float, cy: float, r: float, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


def _place_building(cfg: SceneConfig, rng: np.random.Generator):
    size = cfg.image_size
    for _ in range(100):
        w = rng.uniform(cfg.min_side, cfg.max_side)
        h = rng.uniform(cfg.min_side, cfg.max_side)
        if rng.random() < cfg.l_shape_prob and min(w, h) >= 2 * MIN_SIDE:
            shape = _l_shape(w, h, rng)
        else:
            shape = _rectangle(w, h)
        if rng.random() < cfg.rotated_prob:
            theta = rng.uniform(0, math.pi / 2)
            c, s = math.cos(theta), math.sin(theta)
            shape = shape @ np.array([[c, s], [-s, c]])
        lo = -shape.min(axis=0) + 1
        hi = size - 1 - shape.max(axis=0) - 1
        if np.any(hi <= lo):
            continue
        centre = rng.uniform(lo, hi)
        poly = shape + centre
        footprint = _fill_polygon(poly, size)
        # Reject slivers: the footprint must hold a 4x4 block.
        core = ndimage.binary_erosion(footprint, np.ones((4, 4), bool), border_value=0)
        if footprint.sum() >= MIN_AREA and core.any():
            return poly, footprint
    raise RuntimeError("could not place a building; check the size settings")


def _ground(cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    size = cfg.image_size
    base = rng.uniform(*cfg.ground_brightness)
    tint = np.array([0.95, 1.05, 0.9]) * rng.uniform(0.9, 1.1, size=3)
    field_ = ndimage.gaussian_filter(rng.normal(0, 1, (size, size)), sigma=4)
    field_ /= field_.std() + 1e-12
    lum = base + 0.06 * field_
    return np.clip(lum[None] * tint[:, None, None], 0, 1)


def render_scene(cfg: SceneConfig, rng: np.random.Generator) -> Scene:
    size = cfg.image_size
    canvas = _ground(cfg, rng)
    n = int(rng.integers(cfg.min_buildings, cfg.max_buildings + 1))
    sun = rng.uniform(0, 2 * math.pi)
    shadow_offset = np.array([math.cos(sun), math.sin(sun)]) * rng.uniform(2, 4)

    footprints = []
    polys = []
    for _ in range(n):
        poly, fp = _place_building(cfg, rng)
        polys.append(poly)
        footprints.append(fp)

    for poly in polys:
        if rng.random() < cfg.shadow_prob:
            shadow = _fill_polygon(poly + shadow_offset, size)
            canvas[:, shadow] *= 0.55

    for poly, fp in zip(polys, footprints):
        roof = rng.uniform(*cfg.roof_brightness)
        colour = roof * np.array([1.0, 0.95, 0.9]) * rng.uniform(0.92, 1.08, size=3)
        # Two roof facets split along the long axis.
        shade = np.where(_half_plane(poly, size), 1.0, rng.uniform(0.85, 1.0))
        canvas[:, fp] = np.clip(colour[:, None] * shade[fp][None], 0, 1)

    clean = canvas.copy()
    trees = np.zeros((size, size), dtype=bool)
    for fp in footprints:
        if rng.random() >= cfg.occlusion_prob:
            continue
        for _ in range(int(rng.integers(1, 4))):
            trees = _add_tree(trees, fp, footprints, cfg, rng)
    if trees.any():
        crown = rng.uniform(0.12, 0.3)
        canvas[:, trees] = (crown * np.array([0.7, 1.0, 0.6]))[:, None]

    noise = rng.normal(0, cfg.noise_std, size=canvas.shape)
    image = Raster(round_u8(np.clip(canvas + noise, 0, 1)), Domain.U8)
    clean_img = Raster(round_u8(np.clip(clean + noise, 0, 1)), Domain.U8)
    mask = np.logical_or.reduce(footprints)
    return Scene(image=image, clean=clean_img, mask=mask, footprints=footprints)


def _half_plane(poly: np.ndarray, size: int) -> np.ndarray:
    centre = poly.mean(axis=0)
    edge = poly[1] - poly[0]
    yy, xx = np.mgrid[0:size, 0:size]
    return (xx - centre[0]) * edge[1] - (yy - centre[1]) * edge[0] >= 0


def _add_tree(trees, target, footprints, cfg, rng) -> np.ndarray:
    """Drop one crown near ``target``; keep every building under the occlusion cap."""
    size = cfg.image_size
    ys, xs = np.nonzero(target)
    k = int(rng.integers(len(ys)))
    cx, cy = xs[k] + rng.uniform(-3, 3), ys[k] + rng.uniform(-3, 3)
    r = rng.uniform(2.0, 5.0)
    while r >= 1.0:
        candidate = trees | _fill_disk(cx, cy, r, size)
        if all(
            np.count_nonzero(candidate & fp) <= cfg.occlusion_max_fraction * np.count_nonzero(fp)
            for fp in footprints
        ):
            return candidate
        r -= 0.5
    return trees


# -- manifests --------------------------------------------------------------

@dataclass(frozen=True)
class Entry:
    sample_id: str
    image: str
    mask: str
    split: str = "train"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if any(c in s for s in (self.sample_id, self.image, self.mask) for c in "\t\n"):
            raise ValueError("manifest fields must not contain tabs or newlines")


@dataclass
class DatasetManifest:
    root: Path
    entries: list[Entry]
    config: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        self.root = Path(self.root)
        ids = [e.sample_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ManifestError("duplicate sample ids in manifest")

    def split(self, name: str) -> list[Entry]:
        return [e for e in self.entries if e.split == name]

    def select(self, split: str | None) -> list[Entry]:
        return list(self.entries) if split in (None, "all") else self.split(split)

    def counts(self) -> dict[str, int]:
        return {s: len(self.split(s)) for s in SPLITS}

    def image_path(self, entry: Entry) -> Path:
        return self.root / entry.image

    def mask_path(self, entry: Entry) -> Path:
        return self.root / entry.mask

    def load(self, entry: Entry) -> tuple[Raster, np.ndarray]:
        return read_raster(self.image_path(entry)), raster_to_mask(read_raster(self.mask_path(entry)))


def save_manifest(manifest: DatasetManifest, path) -> None:
    lines = ["# denise-manifest v1", f"# seed={manifest.seed}"]
    for key, value in manifest.config.items():
        lines.append(f"# config.{key}={value}")
    lines += [f"{e.sample_id}\t{e.image}\t{e.mask}\t{e.split}" for e in manifest.entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"{path}: cannot read manifest ({exc.strerror or exc})") from None
    seed = 0
    config: dict[str, str] = {}
    entries = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].strip().partition("=")
            if sep and key == "seed":
                seed = int(value)
            elif sep and key.startswith("config."):
                config[key[len("config."):]] = value
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ManifestError(f"{path}:{lineno}: malformed manifest line")
        try:
            entries.append(Entry(*parts))
        except ValueError as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from None
    if not entries:
        raise ManifestError(f"{path}: no entries")
    manifest = DatasetManifest(path.parent, entries, config, seed)
    if check_files:
        dangling = [
            e.sample_id for e in entries
            if not (manifest.image_path(e).is_file() and manifest.mask_path(e).is_file())
        ]
        if dangling:
            raise ManifestError(f"{path}: missing files for ids {', '.join(dangling)}")
    return manifest


def generate_dataset(cfg: SceneConfig, n: int, out) -> DatasetManifest:
    """Render ``n`` scenes into ``out/images`` and ``out/masks``.

    Every sample draws from its own child of ``SeedSequence(cfg.seed)``, so
    a sample's content depends only on the seed and its index.  All
    entries start in the ``train`` split; see :func:`split_dataset`.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    out = Path(out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    width = max(5, len(str(n - 1)))
    entries = []
    for i, child in enumerate(np.random.SeedSequence(cfg.seed).spawn(n)):
        scene = render_scene(cfg, np.random.default_rng(child))
        sid = f"{i:0{width}d}"
        image_rel, mask_rel = f"images/{sid}.png", f"masks/{sid}.png"
        write_raster(scene.image, out / image_rel)
        write_raster(mask_to_raster(scene.mask), out / mask_rel)
        entries.append(Entry(sid, image_rel, mask_rel))
    manifest = DatasetManifest(out, entries, cfg.echo(), cfg.seed)
    save_manifest(manifest, out / "manifest.txt")
    return manifest


def split_dataset(manifest: DatasetManifest, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> DatasetManifest:
    """Seeded shuffle, then contiguous train/val/test blocks.

    Val and test get ``floor(n * ratio)`` entries and train takes the
    remainder.  A split with a positive ratio that would end up empty
    borrows one entry from train.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    n = len(manifest.entries)
    if n < 3:
        raise ValueError(f"need at least 3 entries to fill train/val/test, got {n}")
    n_val = max(1, math.floor(n * ratios[1] + 1e-9))
    n_test = max(1, math.floor(n * ratios[2] + 1e-9))
    n_train = n - n_val - n_test
    if n_train < 1:
        raise ValueError(f"{n} entries cannot populate all splits at ratios {ratios}")
    order = np.random.default_rng(seed).permutation(n)
    labels = ["train"] * n_train + ["val"] * n_val + ["test"] * n_test
    assigned = {int(idx): labels[pos] for pos, idx in enumerate(order)}
    entries = [replace(e, split=assigned[i]) for i, e in enumerate(manifest.entries)]
    return DatasetManifest(manifest.root, entries, dict(manifest.config), manifest.seed)


def relative_to(path: Path, root: Path) -> str:
    return os.path.relpath(path, root).replace(os.sep, "/")
