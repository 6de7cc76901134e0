"""Qualitative artifacts: best-patch montages and average intensity maps.

Patches are the theoretical receptive fields of the grid cells whose
normalized responses sit closest to a concept centroid. Patches clipped by
the image border are padded back to the full receptive-field square by edge
replication before averaging, so every patch contributes at the same size.

Raster output is binary portable pixmap (P6): zero-dependency and
bit-exactly testable. Source images are fetched through an "image store",
any callable mapping image_id -> HxWx3 uint8 array (or None when missing).
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .concepts import VisualConcept, _DEGENERATE_NORM
from .corpus import FeatureTensor
from .detector import grid_to_pixel

ImageStore = Callable[[str], "np.ndarray | None"]


@dataclass(frozen=True)
class PatchRef:
    """One ranked patch: where it lives and how close it is to the centroid."""

    image_id: str
    rect: tuple[int, int, int, int]       # clipped to image bounds (x, y, w, h)
    full_rect: tuple[int, int, int, int]  # unclipped receptive field
    rank: int
    distance: float
    grid_pos: tuple[int, int]


def _patch_rects(tensor: FeatureTensor, i: int, j: int
                 ) -> tuple[tuple[int, int, int, int], tuple[int, int, int, int]]:
    layer = tensor.layer
    cx, cy = grid_to_pixel(layer, i, j)
    half = layer.rf_size / 2.0
    x0 = int(round(cx - half))
    y0 = int(round(cy - half))
    full = (x0, y0, layer.rf_size, layer.rf_size)
    w = tensor.meta.crop_width or (tensor.width * layer.stride)
    h = tensor.meta.crop_height or (tensor.height * layer.stride)
    cx0, cy0 = max(x0, 0), max(y0, 0)
    cx1 = min(x0 + layer.rf_size, w)
    cy1 = min(y0 + layer.rf_size, h)
    clipped = (cx0, cy0, max(cx1 - cx0, 0), max(cy1 - cy0, 0))
    return clipped, full


def top_patches(concept: VisualConcept, tensors: Sequence[FeatureTensor],
                n: int) -> list[PatchRef]:
    """The n grid cells (over the whole corpus) closest to the centroid,
    ranked by distance ascending; ties break by image_id then grid index.

    When the corpus holds fewer than n cells, all of them are returned.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    centroid = np.asarray(concept.centroid, dtype=np.float64)
    entries: list[tuple[float, str, int, int]] = []
    by_image: dict[str, FeatureTensor] = {}
    for t in tensors:
        if t.layer.name != concept.layer.name:
            continue
        by_image[t.image_id] = t
        flat = t.data.reshape(-1, t.layer.channels).astype(np.float64)
        norms = np.linalg.norm(flat, axis=1)
        valid = norms >= _DEGENERATE_NORM
        diff = flat[valid] / norms[valid, None] - centroid
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        for d, cell in zip(dist, np.flatnonzero(valid)):
            entries.append((float(d), t.image_id, int(cell), t.width))
    entries.sort(key=lambda e: (e[0], e[1], e[2]))

    refs = []
    for rank, (d, image_id, cell, width) in enumerate(entries[:n]):
        i, j = divmod(cell, width)
        clipped, full = _patch_rects(by_image[image_id], i, j)
        refs.append(PatchRef(image_id=image_id, rect=clipped, full_rect=full,
                             rank=rank, distance=d, grid_pos=(i, j)))
    return refs


def random_of_top(concept: VisualConcept, tensors: Sequence[FeatureTensor],
                  k: int, pool: int = 500, seed: int = 0) -> list[PatchRef]:
    """k patches drawn uniformly (without replacement) from the `pool`
    best-matched ones; deterministic for a given seed."""
    ranked = top_patches(concept, tensors, pool)
    rng = np.random.default_rng(seed)
    if k >= len(ranked):
        return ranked
    picked = rng.choice(len(ranked), size=k, replace=False)
    return [ranked[i] for i in sorted(picked)]


def _extract_patch(image: np.ndarray, ref: PatchRef, rf_size: int) -> np.ndarray:
    """Clipped patch padded back to rf_size x rf_size by edge replication."""
    x, y, w, h = ref.rect
    fx, fy, _, _ = ref.full_rect
    patch = image[y:y + h, x:x + w]
    pad_left = x - fx
    pad_top = y - fy
    pad_right = rf_size - w - pad_left
    pad_bottom = rf_size - h - pad_top
    return np.pad(patch, ((pad_top, pad_bottom), (pad_left, pad_right), (0, 0)),
                  mode="edge")


@dataclass
class AverageMap:
    mean: np.ndarray  # rf_size x rf_size x 3 float64
    n_used: int
    n_skipped: int


def average_intensity_map(patch_refs: Sequence[PatchRef], store: ImageStore,
                          rf_size: int) -> AverageMap:
    """Per-pixel arithmetic mean over the patches (after padding); patches
    whose source image is missing are skipped and counted."""
    acc = np.zeros((rf_size, rf_size, 3), dtype=np.float64)
    used = 0
    skipped = 0
    for ref in sorted(patch_refs, key=lambda r: r.rank):
        image = store(ref.image_id)
        if image is None:
            skipped += 1
            continue
        acc += _extract_patch(np.asarray(image), ref, rf_size).astype(np.float64)
        used += 1
    if used == 0:
        raise ValueError("no patches could be loaded")
    return AverageMap(mean=acc / used, n_used=used, n_skipped=skipped)


def montage(patch_refs: Sequence[PatchRef], store: ImageStore, rf_size: int,
            columns: int = 6, separator: int = 2) -> np.ndarray:
    """Patches tiled row-major by rank, with black separators."""
    patches = []
    for ref in sorted(patch_refs, key=lambda r: r.rank):
        image = store(ref.image_id)
        if image is None:
            continue
        patches.append(_extract_patch(np.asarray(image), ref, rf_size))
    if not patches:
        raise ValueError("no patches could be loaded")
    columns = min(columns, len(patches))
    rows = (len(patches) + columns - 1) // columns
    height = rows * rf_size + (rows - 1) * separator
    width = columns * rf_size + (columns - 1) * separator
    canvas = np.zeros((height, width, 3), dtype=np.uint8)
    for idx, patch in enumerate(patches):
        r, c = divmod(idx, columns)
        y = r * (rf_size + separator)
        x = c * (rf_size + separator)
        canvas[y:y + rf_size, x:x + rf_size] = patch
    return canvas


# ---------------------------------------------------------------------------
# Portable pixmap (P6) I/O and image stores
# ---------------------------------------------------------------------------

def save_ppm(image: np.ndarray, path: str | os.PathLike) -> None:
    image = np.asarray(image)
    if image.dtype != np.uint8:
        image = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {image.shape}")
    h, w, _ = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def load_ppm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(b"P6"):
        raise ValueError(f"{path}: not a binary P6 pixmap")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(f) for f in fields)
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 supported, got {maxval}")
    data = np.frombuffer(blob, dtype=np.uint8, count=w * h * 3, offset=pos)
    return data.reshape(h, w, 3).copy()


def directory_image_store(root: str | os.PathLike, suffix: str = ".ppm"
                          ) -> ImageStore:
    """Image store over `{root}/{image_id}{suffix}` pixmap files."""
    root = Path(root)

    def fetch(image_id: str):
        path = root / f"{image_id}{suffix}"
        if not path.exists():
            return None
        return load_ppm(path)

    return fetch


def mapping_image_store(images: Mapping[str, np.ndarray]) -> ImageStore:
    return lambda image_id: images.get(image_id)
