"""Enhancing one synthetic tile with both variants and both modes.

Renders a single scene, fakes a first-stage prediction from its mask,
and writes the four enhanced versions next to the original so they can
be compared side by side.
"""
import sys
from pathlib import Path

import numpy as np

from denise import EnhanceConfig, Mode, Variant, enhance_sample, write_raster
from denise.refmodels import sobel_edges
from denise.raster import mask_to_raster
from denise.synth import SceneConfig, render_scene

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_enhance")
out.mkdir(parents=True, exist_ok=True)

scene = render_scene(SceneConfig(image_size=96, occlusion_prob=1.0, seed=2), np.random.default_rng(2))
write_raster(scene.image, out / "image.png")
write_raster(mask_to_raster(scene.mask), out / "mask.png")

# %% A blurry segmentation guess for Seg, edges of the true mask for Edge.
from scipy import ndimage

seg_probs = ndimage.gaussian_filter(scene.mask.astype(float), 2.0)
edge_probs = sobel_edges(mask_to_raster(scene.mask))

# %% Merge3 keeps three channels; everything outside the kept region is halved.
for variant, probs in ((Variant.SEG, seg_probs), (Variant.EDGE, edge_probs)):
    for mode in Mode:
        cfg = EnhanceConfig(variant=variant, mode=mode)
        sample = enhance_sample(scene.image, probs, scene.mask, cfg, source_id="demo")
        suffix = "png" if mode is Mode.MERGE3 else "dpf"
        write_raster(sample.image, out / f"{variant.value}_{mode.value}.{suffix}")
        halved = np.mean(sample.image.data[:3] < scene.image.data)
        print(f"{variant.value:4s} {mode.value:8s} channels={sample.image.channels} "
              f"darkened={halved:.1%}")

print("wrote", out)
