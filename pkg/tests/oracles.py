"""Independent brute-force oracles the implementation is checked against.

Each oracle is written straight from the definition, with no code shared
with the package: plain Python loops, no vectorization tricks, no reuse of
the production kernels.
"""

import math

# ---------------------------------------------------------------------------
# Receptive-field recurrence over VGG-16
# ---------------------------------------------------------------------------

# (kernel, stride, padding) per layer up to each pool; convs are 3x3/1/1,
# pools 2x2/2/0.
_VGG16_ARCH = [
    ("conv1_1", 3, 1, 1), ("conv1_2", 3, 1, 1), ("pool1", 2, 2, 0),
    ("conv2_1", 3, 1, 1), ("conv2_2", 3, 1, 1), ("pool2", 2, 2, 0),
    ("conv3_1", 3, 1, 1), ("conv3_2", 3, 1, 1), ("conv3_3", 3, 1, 1),
    ("pool3", 2, 2, 0),
    ("conv4_1", 3, 1, 1), ("conv4_2", 3, 1, 1), ("conv4_3", 3, 1, 1),
    ("pool4", 2, 2, 0),
    ("conv5_1", 3, 1, 1), ("conv5_2", 3, 1, 1), ("conv5_3", 3, 1, 1),
    ("pool5", 2, 2, 0),
]


def vgg16_rf_table():
    """Layer-by-layer recurrence r_out = r_in + (k-1)*j_in, j_out = j_in*s,
    start_out = start_in + ((k-1)/2 - p)*j_in, from r=1, j=1, start=0.5
    (pixel (0,0) centered at 0.5)."""
    r, j, start = 1, 1, 0.5
    table = {}
    for name, k, s, p in _VGG16_ARCH:
        r = r + (k - 1) * j
        start = start + ((k - 1) / 2.0 - p) * j
        j = j * s
        table[name] = {"rf_size": r, "stride": j, "offset": start}
    return table


# ---------------------------------------------------------------------------
# Greedy NMS
# ---------------------------------------------------------------------------

def nms_oracle(points, radius):
    """points: list of (score, i, j, x, y). Greedy keep-highest, suppress
    within radius (inclusive); score ties by (i, j) ascending. Returns the
    kept entries in kept order."""
    remaining = sorted(points, key=lambda p: (-p[0], p[1], p[2]))
    kept = []
    while remaining:
        best = remaining.pop(0)
        kept.append(best)
        survivors = []
        for p in remaining:
            d = math.hypot(p[3] - best[3], p[4] - best[4])
            if d > radius:
                survivors.append(p)
        remaining = survivors
    return kept


# ---------------------------------------------------------------------------
# Greedy matching
# ---------------------------------------------------------------------------

def match_oracle(dets, gts, radius):
    """dets: list of (image_id, x, y) in descending-score order. gts: list
    of (image_id, x, y). Each detection claims the nearest unclaimed ground
    truth in its image within radius; distance ties by ground-truth index.
    Returns the per-detection TP flag list."""
    claimed = set()
    flags = []
    for image_id, x, y in dets:
        candidates = []
        for gi, (g_img, gx, gy) in enumerate(gts):
            if gi in claimed or g_img != image_id:
                continue
            d = math.hypot(x - gx, y - gy)
            if d <= radius:
                candidates.append((d, gi))
        if candidates:
            candidates.sort()
            claimed.add(candidates[0][1])
            flags.append(True)
        else:
            flags.append(False)
    return flags


# ---------------------------------------------------------------------------
# Average precision, straight from the definition
# ---------------------------------------------------------------------------

def ap_oracle(flags, n_gt):
    """AP = sum over ranks of precision(k) * (recall(k) - recall(k-1))."""
    if n_gt == 0:
        return None
    ap = 0.0
    tp = 0
    prev_recall = 0.0
    for k, flag in enumerate(flags, start=1):
        if flag:
            tp += 1
        recall = tp / n_gt
        precision = tp / k
        ap += precision * (recall - prev_recall)
        prev_recall = recall
    return ap


def best_subset_oracle(dets, gts, parts, max_subset, radius):
    """Exhaustive subset search via match_oracle + ap_oracle.

    dets: list of (image_id, x, y) in descending-score order.
    gts: list of (image_id, part, x, y).
    Returns (parts_tuple, ap); ties prefer smaller then lexicographic subsets.
    """
    import itertools

    best = None
    for size in range(1, max_subset + 1):
        for combo in itertools.combinations(sorted(parts), size):
            sub_gts = [(img, x, y) for img, part, x, y in gts if part in combo]
            if not sub_gts:
                continue
            flags = match_oracle(dets, sub_gts, radius)
            ap = ap_oracle(flags, len(sub_gts))
            key = (-ap, size, combo)
            if best is None or key < best[0]:
                best = (key, combo, ap)
    return (best[1], best[2]) if best else (tuple(), None)
