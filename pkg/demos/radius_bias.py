# How the 8-nearest-surface-voxel radius estimate behaves on straight cylinders.
#
# Surface voxels are foreground voxels with a background face neighbour, so
# their centres lie inside the true boundary.  The estimate therefore
# undershoots, and the shortfall grows with the radius.

from vesselscale.phantom import cylinder
from vesselscale.pipeline import decompose

print(" r   m=1     m=8     m=16")
for r in (2, 3, 4, 5, 8, 12):
    mask, _ = cylinder(r, 40)
    row = [decompose(mask, m=m).table.radius_mm[0] for m in (1, 8, 16)]
    print(f"{r:2d}  " + "  ".join(f"{x:6.3f}" for x in row))
