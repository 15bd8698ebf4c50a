"""How boundary IoU reacts to edge errors that plain IoU barely notices.

A square is compared against a shifted copy and against a copy with a
ragged border. Both lose a similar share of IoU, but the ragged one is
penalised much harder on the boundary band.
"""
import numpy as np

from denise.metrics import MetricsConfig, boundary_iou, iou
from denise.morphology import Disk, Square, boundary_band, dilate

truth = np.zeros((64, 64), bool)
truth[16:48, 16:48] = True

shifted = np.roll(truth, 2, axis=1)

rng = np.random.default_rng(0)
ragged = truth.copy()
edge = boundary_band(truth, 1)
ragged[edge & (rng.random(truth.shape) < 0.5)] = False

for name, pred in (("shifted", shifted), ("ragged", ragged)):
    print(f"{name:8s} IoU={iou(pred, truth):.3f}", end="")
    for d in (1, 2, 4):
        print(f"  BIoU(d={d})={boundary_iou(pred, truth, MetricsConfig(biou_pixels=d)):.3f}", end="")
    print()

# %% The band is the mask minus its erosion by a disk; a wider d widens it.
for d in (1, 2, 4, 8):
    print(f"d={d}: band has {boundary_band(truth, d).sum()} of {truth.sum()} pixels")

# %% Square and disk structuring elements differ at the corners.
dot = np.zeros((9, 9), bool)
dot[4, 4] = True
print(dilate(dot, Square(3)).astype(int))
print(dilate(dot, Disk(3)).astype(int))
