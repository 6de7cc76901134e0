"""Receptive-field geometry: how grid cells map back to image pixels.

Walks the layer-by-layer recurrence over VGG-16 (3x3/stride-1 convolutions
with padding 1, 2x2/stride-2 pools) and shows that the shipped constants for
pool3/pool4/pool5 are exactly what the recurrence produces.

Run: python3 demos/02_receptive_field_geometry.py
"""

from conceptforge import VGG16_LAYERS, grid_to_pixel
from conceptforge.detector import rf_offset

ARCH = [
    ("conv1_1", 3, 1, 1), ("conv1_2", 3, 1, 1), ("pool1", 2, 2, 0),
    ("conv2_1", 3, 1, 1), ("conv2_2", 3, 1, 1), ("pool2", 2, 2, 0),
    ("conv3_1", 3, 1, 1), ("conv3_2", 3, 1, 1), ("conv3_3", 3, 1, 1),
    ("pool3", 2, 2, 0),
    ("conv4_1", 3, 1, 1), ("conv4_2", 3, 1, 1), ("conv4_3", 3, 1, 1),
    ("pool4", 2, 2, 0),
    ("conv5_1", 3, 1, 1), ("conv5_2", 3, 1, 1), ("conv5_3", 3, 1, 1),
    ("pool5", 2, 2, 0),
]

print("recurrence:  r' = r + (k-1)*j,  j' = j*s,  start' = start + ((k-1)/2 - p)*j")
print("initial:     r=1, j=1, start=0.5 (pixel (0,0) centered at 0.5)\n")
print(f"{'layer':<10} {'kernel':>6} {'stride':>6} {'rf':>5} {'jump':>5} {'center(0,0)':>12}")

r, j, start = 1, 1, 0.5
for name, k, s, p in ARCH:
    r = r + (k - 1) * j
    start = start + ((k - 1) / 2.0 - p) * j
    j = j * s
    marker = "  <- shipped" if name in VGG16_LAYERS else ""
    print(f"{name:<10} {k:>6} {s:>6} {r:>5} {j:>5} {start:>12.1f}{marker}")

print("\nshipped table vs the recurrence:")
for name, layer in VGG16_LAYERS.items():
    x0, y0 = grid_to_pixel(layer, 0, 0)
    x1, _ = grid_to_pixel(layer, 0, 1)
    print(f"  {name}: channels {layer.channels}, stride {layer.stride}, "
          f"rf {layer.rf_size}, offset {rf_offset(layer)} "
          f"(cell (0,0) -> ({x0:g},{y0:g}); neighbor displacement "
          f"{x1 - x0:g} px)")

print("\na 224x224 crop at pool4 is a 14x14 grid; cell (i=6, j=9) sees the")
print("image region centered at", grid_to_pixel(VGG16_LAYERS["pool4"], 6, 9))
