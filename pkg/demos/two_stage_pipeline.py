"""The full two-stage flow on a small synthetic set.

Trains the standalone patch classifier, then an Edge-enhanced one using
edges of the true masks as the first stage, and prints the comparison.
The same run is available as ``denise pipeline --variant edge
--stage1 oracle``.
"""
import sys
from pathlib import Path

from denise.enhance import EnhanceConfig, Mode, Variant
from denise.pipeline import PipelineConfig, run_pipeline
from denise.synth import SceneConfig

run_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_run")
cfg = PipelineConfig(
    run_dir=run_dir,
    scene=SceneConfig(occlusion_prob=0.5, seed=1),
    enhance=EnhanceConfig(variant=Variant.EDGE, mode=Mode.MERGE3),
    n_images=250,
    stage1="oracle",
)
result = run_pipeline(cfg)
print(result.comparison.to_text())
print("artifacts under", run_dir)
