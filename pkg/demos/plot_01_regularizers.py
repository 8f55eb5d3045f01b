"""
Confidence regularizers and their minimizers
============================================

Each model regularizer pulls a softmax output toward uniform. Here we look
at the single-sample binary loss ``-log p + alpha * r(p)`` and see where its
minimum moves, then compare the two closed-form minimizers on a 4-class
example.
"""

import numpy as np

from crst.core import softmax
from crst.pseudo import Thresholds, lrent_soft_label
from crst.regularizers import binary_loss_curve, mr_grad_logits, mrkld_closed_form_minimizer

grid = np.linspace(0.001, 0.999, 999)

# %%
# Where does the regularized binary loss bottom out? With ``alpha = 0``
# it is plain cross-entropy, minimized at the edge of the grid.
print("alpha   mrl2   mrent  mrkld")
for alpha in (0.0, 0.1, 0.5, 1.0):
    best = [binary_loss_curve(k, alpha, grid)[:, 1].argmin() for k in ("mrl2", "mrent", "mrkld")]
    print(f"{alpha:5.2f}  " + "  ".join(f"{grid[i]:.3f}" for i in best))

# %%
# The KL regularizer has a closed-form minimizer, ``(y + alpha/K) / (1 + alpha)``.
# Every negative class gets the same mass, so any ranking among them is lost.
y = np.array([0.0, 1.0, 0.0, 0.0])
for alpha in (0.1, 0.5, 1.0, 2.0):
    print(alpha, mrkld_closed_form_minimizer(y, alpha).round(4))

# %%
# The entropy label regularizer instead rescales a prediction like a
# temperature: below 1 it sharpens, above 1 it smooths, and the class order
# is always preserved.
p = np.array([0.2, 0.1, 0.55, 0.15])
th = Thresholds(np.ones(4), 1.0)
for alpha in (0.25, 0.5, 1.0, 2.0, 5.0):
    print(alpha, lrent_soft_label(p, th, alpha).round(4))

# %%
# All the gradients vanish at the uniform distribution, and the KL gradient
# is just ``p - 1/K``.
u = np.full(4, 0.25)
print({k: np.abs(mr_grad_logits(k, u)).max() for k in ("mrl2", "mrent", "mrkld")})
print(mr_grad_logits("mrkld", softmax(np.array([2.0, 0.0]))))
