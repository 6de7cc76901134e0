"""Turning a concept (or a raw filter channel) into a point-detector.

Scoring is dense over the feature grid: a cell's score is the negated
Euclidean distance between its l2-normalized activation vector and the
concept centroid (or, for the single-filter baseline, the raw channel
activation). Grid cells map to crop-frame pixels through the receptive-field
geometry, and per-image greedy non-maximum suppression removes duplicate
firings. No score threshold is applied anywhere: thresholding happens
implicitly in the downstream precision-recall sweep.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._parallel import ordered_map
from .concepts import ConceptDictionary, VisualConcept, _DEGENERATE_NORM
from .corpus import FeatureTensor, LayerSpec

#: Receptive-field center of grid cell (0, 0), per layer, in crop-frame
#: pixels. Frozen from the layer-by-layer recurrence over VGG-16 (symmetric
#: padding makes each equal stride/2); regression-tested against the
#: recurrence oracle in the test suite.
RF_OFFSETS: Mapping[str, float] = {
    "pool3": 4.0,
    "pool4": 8.0,
    "pool5": 16.0,
}


def rf_offset(layer: LayerSpec) -> float:
    return RF_OFFSETS.get(layer.name, layer.stride / 2.0)


def grid_to_pixel(layer: LayerSpec, i: int, j: int,
                  grid_size: tuple[int, int] | None = None
                  ) -> tuple[float, float]:
    """Center (x, y) of grid cell (i=row, j=column)'s receptive field.

    `grid_size` is (height, width) when known; indices are always required
    to be non-negative.
    """
    if i < 0 or j < 0:
        raise IndexError(f"grid indices must be non-negative, got ({i}, {j})")
    if grid_size is not None and (i >= grid_size[0] or j >= grid_size[1]):
        raise IndexError(f"grid indices ({i}, {j}) out of bounds {grid_size}")
    off = rf_offset(layer)
    return (j * layer.stride + off, i * layer.stride + off)


def default_nms_radius(layer: LayerSpec) -> float:
    """Two grid strides: suppresses neighboring-cell duplicates while staying
    well inside the evaluation match radius."""
    return 2.0 * layer.stride


@dataclass(frozen=True)
class Detection:
    """A scored, pixel-located firing of one concept (or filter) on one image.

    For concept detections the score is -(distance between the normalized
    response and the centroid); for filter detections it is the raw channel
    activation. Higher is stronger in both cases.
    """

    image_id: str
    concept_id: int
    x: float
    y: float
    score: float
    grid_pos: tuple[int, int] | None = None


def score_map(concept: VisualConcept, tensor: FeatureTensor) -> np.ndarray:
    """H x W grid of -||l2_normalize(response) - centroid||.

    Degenerate (near-zero) cells score -inf so they can never detect while
    the grid shape stays intact for debugging dumps.
    """
    if tensor.layer.channels != concept.layer.channels:
        raise ValueError(
            f"channel mismatch: tensor has {tensor.layer.channels}, "
            f"concept expects {concept.layer.channels}"
        )
    flat = tensor.data.reshape(-1, tensor.layer.channels).astype(np.float64)
    norms = np.linalg.norm(flat, axis=1)
    valid = norms >= _DEGENERATE_NORM
    scores = np.full(len(flat), -np.inf)
    if valid.any():
        unit = flat[valid] / norms[valid, None]
        diff = unit - np.asarray(concept.centroid, dtype=np.float64)
        scores[valid] = -np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return scores.reshape(tensor.height, tensor.width)


def _channel_map(channel_id: int, tensor: FeatureTensor,
                 l2_normalized: bool) -> np.ndarray:
    if not 0 <= channel_id < tensor.layer.channels:
        raise IndexError(
            f"channel {channel_id} out of range for layer "
            f"{tensor.layer.name} ({tensor.layer.channels} channels)"
        )
    raw = tensor.data[:, :, channel_id].astype(np.float64)
    if not l2_normalized:
        return raw
    flat = tensor.data.reshape(-1, tensor.layer.channels).astype(np.float64)
    norms = np.linalg.norm(flat, axis=1).reshape(tensor.height, tensor.width)
    out = np.full(raw.shape, -np.inf)
    valid = norms >= _DEGENERATE_NORM
    out[valid] = raw[valid] / norms[valid]
    return out


def nms(detections: Sequence[Detection], radius_px: float) -> list[Detection]:
    """Greedy non-maximum suppression over one image's detections.

    Repeatedly keeps the highest-scoring remaining detection and discards
    every remaining detection whose center lies within `radius_px` of it.
    Score ties break by (grid i, grid j) ascending. Output is sorted by
    descending score.
    """
    if radius_px <= 0:
        raise ValueError("radius_px must be positive")
    if not detections:
        return []
    images = {d.image_id for d in detections}
    if len(images) > 1:
        raise ValueError(f"nms expects one image, got {sorted(images)}")

    n = len(detections)
    x = np.array([d.x for d in detections])
    y = np.array([d.y for d in detections])
    score = np.array([d.score for d in detections])
    ti = np.array([d.grid_pos[0] if d.grid_pos else d.y for d in detections])
    tj = np.array([d.grid_pos[1] if d.grid_pos else d.x for d in detections])
    order = np.lexsort((tj, ti, -score))

    alive = np.ones(n, dtype=bool)
    kept: list[Detection] = []
    r2 = radius_px * radius_px
    for idx in order:
        if not alive[idx]:
            continue
        kept.append(detections[idx])
        alive &= (x - x[idx]) ** 2 + (y - y[idx]) ** 2 > r2
    return kept


def _tensor_detections(scores: np.ndarray, tensor: FeatureTensor,
                       concept_id: int) -> list[Detection]:
    h, w = scores.shape
    layer = tensor.layer
    off = rf_offset(layer)
    dets = []
    for flat_idx in np.flatnonzero(np.isfinite(scores.ravel())):
        i, j = divmod(int(flat_idx), w)
        dets.append(Detection(
            image_id=tensor.image_id,
            concept_id=concept_id,
            x=j * layer.stride + off,
            y=i * layer.stride + off,
            score=float(scores[i, j]),
            grid_pos=(i, j),
        ))
    return dets


def _global_sort(dets: list[Detection]) -> list[Detection]:
    dets.sort(key=lambda d: (-d.score, d.image_id, d.grid_pos or (d.y, d.x)))
    return dets


def detect(concept: VisualConcept, tensors: Sequence[FeatureTensor],
           nms_radius: float | None = None) -> list[Detection]:
    """Score every grid cell of every tensor, suppress per image, and return
    all surviving detections sorted by descending score. No thresholding.
    """
    selected = [t for t in tensors if t.layer.name == concept.layer.name]
    radius = default_nms_radius(concept.layer) if nms_radius is None else nms_radius
    out: list[Detection] = []
    for t in selected:
        per_image = _tensor_detections(score_map(concept, t), t,
                                       concept.concept_id)
        out.extend(nms(per_image, radius))
    return _global_sort(out)


def single_filter_detect(channel_id: int, tensors: Sequence[FeatureTensor],
                         layer: LayerSpec, nms_radius: float | None = None,
                         l2_normalized: bool = False) -> list[Detection]:
    """Same pipeline as `detect` but scored by one channel's activation.

    Raw activations by default; `l2_normalized` scores the channel after
    normalizing each cell's population vector instead.
    """
    selected = [t for t in tensors if t.layer.name == layer.name]
    radius = default_nms_radius(layer) if nms_radius is None else nms_radius
    out: list[Detection] = []
    for t in selected:
        scores = _channel_map(channel_id, t, l2_normalized)
        per_image = _tensor_detections(scores, t, channel_id)
        out.extend(nms(per_image, radius))
    return _global_sort(out)


def detect_dictionary(dictionary: ConceptDictionary,
                      tensors: Sequence[FeatureTensor],
                      nms_radius: float | None = None,
                      threads: int = 1) -> dict[int, list[Detection]]:
    """Run `detect` for every concept; a dict keyed by concept_id."""
    results = ordered_map(
        lambda c: detect(c, tensors, nms_radius=nms_radius),
        dictionary.concepts, threads=threads)
    return {c.concept_id: dets
            for c, dets in zip(dictionary.concepts, results)}


# ---------------------------------------------------------------------------
# Line-oriented detection files
# ---------------------------------------------------------------------------

def write_detections(detections: Iterable[Detection], path: str | os.PathLike,
                     header: Mapping[str, object] | None = None) -> None:
    """Write `image_id concept_id x y score` lines, scores at 9 significant
    digits so the ranking is reproducible from the file. Header key=value
    pairs are emitted as '#'-prefixed comments.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in (header or {}).items():
            fh.write(f"# {key}={value}\n")
        for d in detections:
            if " " in d.image_id:
                raise ValueError(f"image_id may not contain spaces: {d.image_id!r}")
            fh.write(f"{d.image_id} {d.concept_id} "
                     f"{d.x:.9g} {d.y:.9g} {d.score:.9g}\n")


def read_detections(path: str | os.PathLike) -> list[Detection]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 fields, got {len(fields)}")
            image_id, concept_id, x, y, score = fields
            out.append(Detection(image_id=image_id, concept_id=int(concept_id),
                                 x=float(x), y=float(y), score=float(score)))
    return out
