"""
Class-balanced pseudo-labels
============================

A fixed model scores the target set; one portion ``p`` sets a confidence
threshold per predicted class so that every class contributes its most
confident ``p`` share. We compare hard labels with the soft labels of the
entropy label regularizer.
"""

import numpy as np

from crst.datagen import TWO_BLOBS_ROTATED, generate
from crst.model import forward
from crst.pseudo import (
    PseudoLabels,
    determine_lambdas,
    hard_pseudo_label,
    kkt_oracle,
    lrent_pseudo_label,
    lrent_soft_label,
)
from crst.trainer import TrainConfig, pretrain

source, xt, truth = generate(TWO_BLOBS_ROTATED, seed=0)
model = pretrain(TrainConfig(), source)
_, probs = forward(model, xt)

# %%
# Thresholds and selection counts grow with the portion.
for portion in (0.2, 0.5, 1.0):
    th = determine_lambdas(probs, portion)
    hard = PseudoLabels(hard_pseudo_label(probs, th))
    acc = np.mean(hard.assigned[hard.selected] == truth[hard.selected])
    print(f"p={portion:.1f} lambda={th.lam.round(3)} counts={hard.counts()} label accuracy={acc:.3f}")

# %%
# Soft labels keep some mass on the runner-up classes. A row is kept only
# if its soft label costs less than leaving it out.
th = determine_lambdas(probs, 0.2)
soft = PseudoLabels(lrent_pseudo_label(probs, th, 0.25))
print("soft selected per class:", soft.counts())
i = np.flatnonzero(soft.selected)[0]
print("probs", probs[i].round(3), "-> label", soft.labels[i].round(3))

# %%
# The closed form agrees with a generic iterative solver of the same problem.
y_closed = lrent_soft_label(probs[:50], th, 0.25)
y_iter = kkt_oracle(probs[:50], th, 0.25)
print("max gap:", np.abs(y_closed - y_iter).max())
