# Overlap, connectivity and surface-distance metrics on a broken tube.

import numpy as np

from vesselscale import evaluate
from vesselscale.phantom import cylinder
from vesselscale.volume import Volume

gt, _ = cylinder(2, 30)

# cut three slices out of the middle
a = gt.data.copy()
z = np.flatnonzero(a.any(axis=(0, 1)))
mid = z[len(z) // 2]
a[:, :, mid - 1:mid + 2] = 0
pred = Volume(a, gt.spacing)

print("identical:", evaluate(gt, gt).to_dict())
print("with gap: ", evaluate(gt, pred).to_dict())
# clDice drops more than Dice because the centreline is broken

# shift the prediction by two voxels and use anisotropic spacing
shifted = Volume(np.roll(gt.data, 2, axis=0), (0.7, 0.7, 2.5))
print("shifted:  ", evaluate(Volume(gt.data, (0.7, 0.7, 2.5)), shifted).to_dict())

empty = Volume(np.zeros(gt.dims), gt.spacing)
print("empty pred:", evaluate(gt, empty).to_dict())
