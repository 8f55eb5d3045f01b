"""
Equivalences between regularizers
=================================

Training with the KL-to-uniform model regularizer is the same, up to a
factor ``1 + alpha``, as training on uniformly smoothed hard labels with a
down-weighted source term. The reverse KL regularizer differs from negative
entropy by the constant ``log K``. Both identities hold at any weights.
"""

import numpy as np

from crst.core import softmax
from crst.model import LabeledBatch, init
from crst.regularizers import smoothed_label, verify_prop4, verify_prop5

rng = np.random.default_rng(0)
K = 4
model = init("hidden", 3, K, hidden=8, seed=0)
source = LabeledBatch(rng.normal(size=(20, 3)), np.eye(K)[rng.integers(0, K, 20)])
target = LabeledBatch(rng.normal(size=(30, 3)), np.eye(K)[rng.integers(0, K, 30)])

# %%
# The smoothed label and the gap between the two losses.
print(smoothed_label(np.eye(K)[1], 0.1).round(4))
for alpha in (0.0, 0.1, 0.5, 2.0):
    print(alpha, verify_prop4(model, source, target, alpha))

# %%
# Value offset and gradient difference for a random prediction.
p = softmax(rng.normal(size=8))
gap, grad_gap = verify_prop5(p)
print(gap, np.log(8), np.abs(grad_gap).max())
