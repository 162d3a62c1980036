# Segmentation and multi-scale contrastive losses with gradient checks.

import numpy as np

from vesselscale.losses import (
    LossConfig,
    contrastive_loss,
    contrastive_terms,
    finite_difference_check,
    segmentation_loss,
    total_loss,
)

rng = np.random.default_rng(0)

gt = rng.random((8, 8, 8)) < 0.2
pred = np.clip(gt * 0.7 + rng.uniform(0, 0.3, gt.shape), 0.01, 0.99)
l_mt, grad = segmentation_loss(pred, gt)
print("soft dice + weighted CE:", round(l_mt, 5))
print("gradient check:", finite_difference_check(lambda p: segmentation_loss(p, gt), pred))

# 12 embeddings from 3 scales; same-scale rows pull together, others push apart
z = rng.normal(size=(12, 16))
scales = np.arange(12) % 3 + 1
l_c, gz = contrastive_loss(z, scales)
print("contrastive:", round(l_c, 5))
# five-point stencil: less cancellation roundoff on tiny gradient entries
print("gradient check:", finite_difference_check(lambda v: contrastive_loss(v, scales), z, step=1e-3, order=4))

# pulling each row toward its scale centroid lowers the loss
centroids = np.stack([z[scales == s].mean(axis=0) for s in (1, 2, 3)])
pulled = 0.5 * z + 0.5 * centroids[scales - 1]
print("after pulling together:", round(contrastive_loss(pulled, scales)[0], 5))

# a row with no same-scale partner is left out of the average
terms = contrastive_terms(z[:4], [1, 1, 2, 3])
print("skipped anchors:", terms.skipped_anchors)

cfg = LossConfig()
print(total_loss(l_mt, (0.4, 0.5, 0.6), l_c, cfg))
