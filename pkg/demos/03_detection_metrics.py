"""Detection metrics by hand: NMS, greedy matching, PR curves and AP.

Small fully-worked examples showing exactly what each evaluation stage does
to a handful of detections.

Run: python3 demos/03_detection_metrics.py
"""

import numpy as np

from conceptforge import (
    Detection, GroundTruthInstance, average_precision, match_detections, nms,
    pr_curve,
)

print("--- non-maximum suppression ---------------------------------------")
dets = [
    Detection("img", 0, x=10.0, y=10.0, score=0.90, grid_pos=(0, 0)),
    Detection("img", 0, x=18.0, y=10.0, score=0.80, grid_pos=(0, 1)),  # 8 px
    Detection("img", 0, x=60.0, y=10.0, score=0.70, grid_pos=(0, 3)),
    Detection("img", 0, x=60.0, y=26.0, score=0.75, grid_pos=(1, 3)),  # 16 px
]
kept = nms(dets, radius_px=20.0)
print("input scores:", [d.score for d in dets])
print("kept after radius-20 suppression:",
      [(d.score, d.grid_pos) for d in kept])
print("the 0.80 and 0.70 detections fall inside a kept detection's radius\n")

print("--- greedy matching ------------------------------------------------")
gts = [GroundTruthInstance("img", "wheel", (12.0, 10.0)),
       GroundTruthInstance("img", "wheel", (62.0, 25.0))]
match = match_detections(kept, gts, radius_px=56.0)
for d, flag in zip(kept, match.flags):
    print(f"detection at ({d.x:g},{d.y:g}) score {d.score}: "
          f"{'TP' if flag else 'FP'}")
print(f"(each ground truth claimed at most once; n_gt={match.n_gt})\n")

print("--- average precision ----------------------------------------------")
flags = [True, False, True]
n_gt = 2


def show(flags, n_gt):
    from conceptforge.evaluation import MatchResult
    m = MatchResult(flags=np.asarray(flags, bool), n_gt=n_gt,
                    match_radius=56.0)
    curve = pr_curve(m)
    print(f"flags {['TP' if f else 'FP' for f in flags]}, n_gt={n_gt}")
    for k, (r, p) in enumerate(zip(curve.recall, curve.precision), start=1):
        print(f"  rank {k}: recall {r:.3f}  precision {p:.3f}")
    print(f"  AP = {average_precision(m):.6f} "
          f"(area under the raw staircase)\n")


show([True], 1)            # single perfect detection
show([False, True], 1)     # one FP outranks the TP
show(flags, n_gt)          # the (1 + 2/3)/2 worked example

print("absent ground truth yields an absent AP (never 0):")
from conceptforge.evaluation import MatchResult
empty = MatchResult(flags=np.zeros(3, bool), n_gt=0, match_radius=56.0)
print("  AP =", average_precision(empty))
