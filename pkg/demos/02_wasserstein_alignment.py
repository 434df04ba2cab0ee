"""The Wasserstein machinery: CDF-difference distances between bin
distributions, the combined classification objective, and how the alignment
penalty scores three modality projections."""

import numpy as np

from kpcast.loss import (
    LossConfig,
    alignment_loss,
    combined_class_loss,
    cross_entropy,
    one_hot,
    wasserstein_1d,
)

# Two deltas two bins apart: every probability mass travels two bins.
p, q = one_hot(1, 4), one_hot(3, 4)
print(f"delta(1) vs delta(3), K=4: sum variant {wasserstein_1d(p, q, 'sum')}, "
      f"mean variant {wasserstein_1d(p, q, 'mean')}")

# Unlike cross-entropy, the distance grows with how FAR the mass sits from
# the target bin, not just whether it is on it.
target = 0
for k in range(4):
    d = wasserstein_1d(one_hot(k, 4), one_hot(target, 4), "sum")
    ce = cross_entropy(one_hot(k, 4), target)
    print(f"  mass at bin {k}: wasserstein {d:.1f}   cross-entropy {ce:.1f}")

# The combined objective blends both views of the 28-way head.
rng = np.random.default_rng(0)
soft = rng.random(28) + 0.1
soft /= soft.sum()
for alpha in (1.0, 0.8, 0.0):
    cfg = LossConfig(alpha=alpha)
    print(f"alpha={alpha}: combined loss {combined_class_loss(soft, 14, cfg):.4f}")

# Alignment: mean pairwise distance over the three modality projections.
img_proj = one_hot(2, 8)
sat_proj = one_hot(2, 8)
kp_proj = one_hot(3, 8)
print(f"two matching projections + one shifted: "
      f"alignment {alignment_loss(img_proj, sat_proj, kp_proj, 'mean'):.5f}")
print(f"all three matching: {alignment_loss(img_proj, sat_proj, img_proj, 'mean'):.5f}")
