"""Walk through the geometric encodings of one synthetic room.

Generates a scene, then prints the pieces the network consumes: the
visibility partition, the TSDF built from depth and the 3-D sketch pulled
out of the semantic labels.
"""

import numpy as np

from sketchssc.pipeline.synthetic import generate_synthetic_scene
from sketchssc.sketch import extract_sketch, sobel3d_axis_response
from sketchssc.tsdf import encode_tsdf
from sketchssc.voxel import IGNORE, GridSpec


def show_slice(grid, y, fmt):
    for row in grid[:, y, :].T[::-1]:
        print("   " + "".join(fmt(v) for v in row))


spec = GridSpec((16, 8, 16), 0.1)
scene = generate_synthetic_scene(seed=3, spec=spec, num_classes=5)
print(f"room {spec.dims} voxels of {spec.voxel_size} m, camera at {np.round(scene.camera.position, 2)}")
depth = scene.depth
print(f"depth map {depth.shape[::-1]} px, {np.count_nonzero(depth)} valid, "
      f"range {depth[depth > 0].min():.2f}-{depth.max():.2f} m")

m = scene.masks
print("\nvisibility partition of the frustum:")
for name in ("surface", "occluded", "free"):
    print(f"   {name:9s}{int(getattr(m, name).sum()):5d} voxels")
print(f"   outside  {int((~m.frustum).sum()):5d} voxels (labelled IGNORE)")

vol = encode_tsdf(depth, scene.camera, spec, truncation=0.3)
print("\nTSDF at height y=4 (x across, z up the page): + free, 0 near surface, - occluded, . outside")
show_slice(np.where(m.frustum, vol.values, np.nan), 4,
           lambda v: "." if np.isnan(v) else ("+" if v > 0.5 else "-" if v < -0.5 else "0"))

labels = scene.labels.labels
print("\nsemantic labels at y=4 (digits are classes, '.' IGNORE):")
show_slice(labels, 4, lambda v: "." if v == IGNORE else str(v))

sketch = extract_sketch(scene.labels)
print(f"\nsketch: {int(sketch.mask.sum())} of {spec.num_voxels} voxels respond on two or more axes (edges and corners, not flat faces)")
show_slice(sketch.mask.astype(int), 4, lambda v: "#" if v else ".")

print("\nper-axis Sobel energy (sum of |response|):",
      [f"{np.abs(sobel3d_axis_response(scene.labels, axis).values).sum():.0f}" for axis in range(3)])
