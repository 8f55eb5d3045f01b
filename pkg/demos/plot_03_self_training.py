"""
Self-training on two rotated domains
====================================

Pretrain on the labeled source, then alternate pseudo-labeling and
retraining on the shifted target. The objective is logged at three points
per round; pseudo-labeling never raises it.
"""

import numpy as np

from crst.datagen import TWO_BLOBS_ROTATED, generate
from crst.regularizers import RegularizerSpec
from crst.trainer import TrainConfig, pretrain, run

source, xt, truth = generate(TWO_BLOBS_ROTATED, seed=0)
cfg = TrainConfig()
m0 = pretrain(cfg, source)

# %%
# One run per regularizer from the same pretrained model.
for name in ("cbst", "lrent", "mrl2", "mrent", "mrkld", "mrkld+lrent"):
    reg = RegularizerSpec.from_name(name)
    hist = run(TrainConfig(reg=reg), source, xt, truth, init_model=m0)
    base = hist.records[0]["metrics"]["mean_accuracy"]
    final = hist.final["metrics"]
    print(f"{name:12s} {base:.3f} -> {final['mean_accuracy']:.3f}  "
          f"ratio {final['confidence']['mean_ratio']:.3f}")

# %%
# The measurement trail of the last run.
for rec in hist.records:
    print(f"{rec['round']:>2} {rec['point']:9s} p={rec['portion']} "
          f"selected={rec['selected_counts']} L_CR={rec['L_CR']:.2f}")

# %%
# Step a is a global minimization over the labels, so each ``after_a`` value
# sits at or below the matching ``before_a``.
drops = [b["L_CR"] - a["L_CR"] for b, a in zip(hist.points("before_a"), hist.points("after_a"))]
print("step-a drops:", np.round(drops, 3))
