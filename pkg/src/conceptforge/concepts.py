"""Learning a dictionary of visual concepts by clustering population responses.

The pipeline is: sample grid-cell activation vectors from a corpus,
l2-normalize them, seed K centroids with k-means++, refine with Lloyd
iterations, then optionally shrink the dictionary by greedily merging
near-duplicate centroids.

Everything is deterministic given the seed, independent of thread count:
reductions over the sample matrix are chunked at a fixed size and partial
results are combined in chunk order.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._parallel import ordered_map
from .corpus import (FormatError, LayerSpec, FeatureTensor, PopulationSample,
                     VGG16_LAYERS)

MAGIC_DICT = b"VCDC0001"
DICT_HEADER_SIZE = len(MAGIC_DICT) + 12

#: Fixed reduction chunk, rows. Never derived from the thread count.
_CHUNK = 4096

_DEGENERATE_NORM = 1e-12


class DegenerateVectorError(ValueError):
    """Vector norm too small to normalize (dead activation cell)."""


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale `v` to unit Euclidean norm, preserving direction.

    Raises DegenerateVectorError when the norm is below 1e-12; callers drop
    such samples rather than inventing a direction.
    """
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm < _DEGENERATE_NORM:
        raise DegenerateVectorError(f"vector norm {norm:g} too small to normalize")
    return v / norm


@dataclass(frozen=True)
class VisualConcept:
    """One cluster: the mean of its assigned unit vectors plus bookkeeping."""

    concept_id: int
    centroid: np.ndarray
    member_count: int
    layer: LayerSpec

    def __post_init__(self):
        norm = float(np.linalg.norm(self.centroid))
        # slack 1e-6: centroids round-trip through float32 storage
        if not (0.0 < norm <= 1.0 + 1e-6):
            raise ValueError(f"centroid norm {norm:g} outside (0, 1]")
        if self.member_count < 1:
            raise ValueError("member_count must be >= 1")


@dataclass(frozen=True)
class ConceptDictionary:
    object_class: str
    layer: LayerSpec
    concepts: tuple[VisualConcept, ...]
    provenance: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        ids = [c.concept_id for c in self.concepts]
        if len(set(ids)) != len(ids):
            raise ValueError("concept ids must be unique")

    def __len__(self):
        return len(self.concepts)

    def centroid_matrix(self) -> np.ndarray:
        return np.asarray([c.centroid for c in self.concepts], dtype=np.float64)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample_responses(tensors: Sequence[FeatureTensor], layer: str | LayerSpec,
                     per_image: int, rng: np.random.Generator
                     ) -> list[PopulationSample]:
    """Draw up to `per_image` grid cells per image, uniformly without
    replacement, and l2-normalize each cell's activation vector.

    Degenerate (near-zero) cells are skipped and replaced by further draws
    until the grid is exhausted. Deterministic given `rng`.
    """
    layer_name = layer if isinstance(layer, str) else layer.name
    if per_image < 1:
        raise ValueError("per_image must be >= 1")
    selected = [t for t in tensors if t.layer.name == layer_name]
    if not selected:
        raise ValueError(f"corpus has no tensors for layer {layer_name!r}")

    samples: list[PopulationSample] = []
    for t in selected:
        h, w = t.height, t.width
        flat = t.data.reshape(-1, t.layer.channels)
        order = rng.permutation(h * w)
        taken = 0
        for cell in order:
            if taken == per_image:
                break
            vec = flat[cell]
            norm = np.linalg.norm(vec)
            if norm < _DEGENERATE_NORM:
                continue
            i, j = divmod(int(cell), w)
            samples.append(PopulationSample(
                vector=vec.astype(np.float64) / norm,
                image_id=t.image_id,
                grid_pos=(i, j),
            ))
            taken += 1
    return samples


def sample_matrix(samples: Sequence[PopulationSample]) -> np.ndarray:
    return np.asarray([s.vector for s in samples], dtype=np.float64)


# ---------------------------------------------------------------------------
# k-means++ seeding and Lloyd refinement
# ---------------------------------------------------------------------------

def _exact_sq_dist_to(data: np.ndarray, point: np.ndarray) -> np.ndarray:
    """||x - p||^2 by direct subtraction (exactly 0.0 for duplicate rows)."""
    out = np.empty(len(data))
    for lo in range(0, len(data), _CHUNK):
        hi = min(lo + _CHUNK, len(data))
        diff = data[lo:hi] - point
        out[lo:hi] = np.einsum("ij,ij->i", diff, diff)
    return out


def kmeans_pp_seed(data: np.ndarray, k: int, rng: np.random.Generator
                   ) -> np.ndarray:
    """k-means++ seeding: first centroid uniform, then each next centroid
    drawn with probability proportional to the squared distance to the
    nearest centroid chosen so far. Returns k distinct data points.
    """
    data = np.asarray(data, dtype=np.float64)
    n = len(data)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the {n} available samples")
    chosen = [int(rng.integers(n))]
    if k > 1:
        d2 = _exact_sq_dist_to(data, data[chosen[0]])
        for _ in range(k - 1):
            total = d2.sum()
            if total <= 0.0:
                raise ValueError(
                    f"k={k} exceeds the number of distinct samples "
                    f"({len(chosen)} found)"
                )
            idx = int(rng.choice(n, p=d2 / total))
            chosen.append(idx)
            d2 = np.minimum(d2, _exact_sq_dist_to(data, data[idx]))
    return data[chosen].copy()


@dataclass
class LloydResult:
    centroids: np.ndarray
    assignments: np.ndarray
    objective: float
    objective_history: list[float]
    n_iter: int
    converged: bool


def _assign_chunk(data, centroids, cent_sq):
    """Labels and squared distances for one chunk (ties -> lowest index)."""
    d2 = (np.einsum("ij,ij->i", data, data)[:, None] + cent_sq[None, :]
          - 2.0 * (data @ centroids.T))
    labels = d2.argmin(axis=1)
    return labels, np.maximum(d2[np.arange(len(data)), labels], 0.0)


def _update_chunk(data, labels, k):
    sums = np.zeros((k, data.shape[1]))
    np.add.at(sums, labels, data)
    return sums, np.bincount(labels, minlength=k)


def lloyd(data: np.ndarray, centroids: np.ndarray, max_iter: int = 300,
          rel_tol: float = 1e-6, threads: int = 1) -> LloydResult:
    """Standard Lloyd iterations from the given starting centroids.

    Assignment is by Euclidean distance with ties broken toward the lowest
    centroid index; centroids are recomputed as arithmetic means of their
    members; clusters that empty out are reseeded to the point currently
    farthest from its assigned centroid. Stops when the relative decrease
    of the objective (sum of squared distances) falls below `rel_tol`, or
    after `max_iter` iterations. On return the centroids are the means of
    the returned assignment.
    """
    data = np.asarray(data, dtype=np.float64)
    if len(data) == 0 or len(centroids) == 0:
        raise ValueError("data and centroids must be non-empty")
    cent = np.array(centroids, dtype=np.float64, copy=True)
    k = len(cent)
    n = len(data)
    chunks = [(lo, min(lo + _CHUNK, n)) for lo in range(0, n, _CHUNK)]

    history: list[float] = []
    labels = np.zeros(n, dtype=np.intp)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        cent_sq = np.einsum("ij,ij->i", cent, cent)
        parts = ordered_map(
            lambda span: _assign_chunk(data[span[0]:span[1]], cent, cent_sq),
            chunks, threads=threads)
        labels = np.concatenate([p[0] for p in parts])
        min_d2 = np.concatenate([p[1] for p in parts])
        objective = float(min_d2.sum())
        history.append(objective)

        updates = ordered_map(
            lambda span: _update_chunk(data[span[0]:span[1]],
                                       labels[span[0]:span[1]], k),
            chunks, threads=threads)
        sums = updates[0][0]
        counts = updates[0][1]
        for s, c in updates[1:]:  # fixed chunk order: bitwise reproducible
            sums = sums + s
            counts = counts + c

        reseeded = False
        nonzero = counts > 0
        cent[nonzero] = sums[nonzero] / counts[nonzero, None]
        if not nonzero.all():
            # farthest points first; ties toward the lowest sample index
            far_order = np.lexsort((np.arange(n), -min_d2))
            empties = np.flatnonzero(~nonzero)
            for slot, point in zip(empties, far_order):
                cent[slot] = data[point]
            reseeded = True

        if not reseeded and len(history) >= 2:
            prev, cur = history[-2], history[-1]
            if prev - cur <= rel_tol * prev:
                converged = True
                break
        if not reseeded and objective == 0.0:
            converged = True
            break

    return LloydResult(centroids=cent, assignments=labels,
                       objective=history[-1], objective_history=history,
                       n_iter=it, converged=converged)


# ---------------------------------------------------------------------------
# Dictionary learning and merging
# ---------------------------------------------------------------------------

def _corpus_object_class(tensors: Sequence[FeatureTensor]) -> str:
    classes = {t.meta.object_class for t in tensors}
    return classes.pop() if len(classes) == 1 else "mixed"


def learn_dictionary(tensors: Sequence[FeatureTensor], layer: LayerSpec,
                     k: int | None = None, seed: int = 0,
                     per_image: int = 100, max_iter: int = 300,
                     rel_tol: float = 1e-6, threads: int = 1
                     ) -> ConceptDictionary:
    """Cluster sampled population responses into a concept dictionary.

    `k` defaults to the layer's channel count. Clusters left empty at
    termination (possible only in degenerate corpora) are dropped, so the
    dictionary may be smaller than `k`.
    """
    if k is None:
        k = layer.channels
    rng = np.random.default_rng(seed)
    samples = sample_responses(tensors, layer, per_image=per_image, rng=rng)
    data = sample_matrix(samples)
    seeds = kmeans_pp_seed(data, k, rng)
    result = lloyd(data, seeds, max_iter=max_iter, rel_tol=rel_tol,
                   threads=threads)

    counts = np.bincount(result.assignments, minlength=k)
    concepts = []
    next_id = 0
    for cluster in range(k):
        if counts[cluster] == 0:
            continue
        concepts.append(VisualConcept(
            concept_id=next_id,
            centroid=result.centroids[cluster].copy(),
            member_count=int(counts[cluster]),
            layer=layer,
        ))
        next_id += 1
    provenance = {
        "k_initial": k,
        "seed": seed,
        "merge_threshold": None,
        "n_samples": len(samples),
        "per_image": per_image,
    }
    return ConceptDictionary(
        object_class=_corpus_object_class(tensors),
        layer=layer,
        concepts=tuple(concepts),
        provenance=provenance,
    )


def merge_dictionary(dictionary: ConceptDictionary, sim_threshold: float = 0.95
                     ) -> ConceptDictionary:
    """Greedily merge the most-similar centroid pair until no pair reaches
    `sim_threshold` cosine similarity.

    A merged concept's centroid is the member-count-weighted mean of the
    pair and keeps the lower concept_id; ties on similarity break toward
    the lowest (id_a, id_b). Total member count is preserved.
    """
    concepts = list(dictionary.concepts)
    if len(concepts) < 2:
        return dictionary

    cents = np.asarray([c.centroid for c in concepts], dtype=np.float64)
    counts = np.asarray([c.member_count for c in concepts], dtype=np.int64)
    ids = [c.concept_id for c in concepts]
    norms = np.linalg.norm(cents, axis=1)
    cos = (cents @ cents.T) / np.outer(norms, norms)
    np.fill_diagonal(cos, -2.0)
    alive = np.ones(len(concepts), dtype=bool)

    while True:
        masked = np.where(np.outer(alive, alive), cos, -2.0)
        np.fill_diagonal(masked, -2.0)
        best = masked.max()
        if best < sim_threshold:
            break
        rows, cols = np.nonzero(masked == best)
        pairs = sorted((ids[a], ids[b], a, b)
                       for a, b in zip(rows, cols) if a < b)
        _, _, a, b = pairs[0]
        total = counts[a] + counts[b]
        cents[a] = (cents[a] * counts[a] + cents[b] * counts[b]) / total
        counts[a] = total
        alive[b] = False
        norms[a] = np.linalg.norm(cents[a])
        row = (cents[alive] @ cents[a]) / (norms[alive] * norms[a])
        cos[a, alive] = row
        cos[alive, a] = row
        cos[a, a] = -2.0

    merged = tuple(
        VisualConcept(concept_id=ids[i], centroid=cents[i].copy(),
                      member_count=int(counts[i]), layer=dictionary.layer)
        for i in range(len(concepts)) if alive[i]
    )
    provenance = dict(dictionary.provenance)
    provenance["merge_threshold"] = sim_threshold
    return ConceptDictionary(
        object_class=dictionary.object_class,
        layer=dictionary.layer,
        concepts=merged,
        provenance=provenance,
    )


# ---------------------------------------------------------------------------
# VCDC dictionary files
# ---------------------------------------------------------------------------

def _dict_meta_text(d: ConceptDictionary) -> str:
    p = d.provenance
    none = lambda v: "none" if v is None else v
    lines = [
        f"object_class={d.object_class}",
        f"layer={d.layer.name}",
        f"layer_stride={d.layer.stride}",
        f"layer_rf_size={d.layer.rf_size}",
        f"k_initial={none(p.get('k_initial'))}",
        f"seed={none(p.get('seed'))}",
        f"merge_threshold={none(p.get('merge_threshold'))}",
        f"n_samples={none(p.get('n_samples'))}",
        f"per_image={none(p.get('per_image'))}",
    ]
    return "\n".join(lines) + "\n"


def save_dictionary(dictionary: ConceptDictionary, path: str | os.PathLike) -> None:
    """Write a dictionary as a VCDC file.

    Layout: 8-byte magic, little-endian u32 {n_concepts, channels,
    meta_length}, UTF-8 provenance text, then per concept u32 concept_id,
    u32 member_count, and `channels` little-endian float32 centroid values.
    """
    channels = dictionary.layer.channels
    meta = _dict_meta_text(dictionary).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC_DICT)
        fh.write(struct.pack("<3I", len(dictionary.concepts), channels, len(meta)))
        fh.write(meta)
        for c in dictionary.concepts:
            fh.write(struct.pack("<2I", c.concept_id, c.member_count))
            fh.write(np.ascontiguousarray(c.centroid, dtype="<f4").tobytes())


def load_dictionary(path: str | os.PathLike) -> ConceptDictionary:
    """Read a VCDC file; inverse of `save_dictionary`, bit-exact."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC_DICT)] != MAGIC_DICT:
        raise FormatError(f"bad magic {blob[:8]!r}, expected {MAGIC_DICT!r}", 0)
    if len(blob) < DICT_HEADER_SIZE:
        raise FormatError("truncated header", len(blob))
    n_concepts, channels, meta_len = struct.unpack(
        "<3I", blob[len(MAGIC_DICT):DICT_HEADER_SIZE])
    body = DICT_HEADER_SIZE + meta_len
    if len(blob) < body:
        raise FormatError("truncated metadata", len(blob))
    meta = {}
    for line in blob[DICT_HEADER_SIZE:body].decode("utf-8").splitlines():
        key, sep, value = line.partition("=")
        if sep:
            meta[key.strip()] = value.strip()

    record = 8 + 4 * channels
    expected = body + record * n_concepts
    if len(blob) < expected:
        raise FormatError(
            f"truncated payload: expected {expected} bytes, file has {len(blob)}",
            len(blob),
        )
    layer_name = meta.get("layer", "unknown")
    builtin = VGG16_LAYERS.get(layer_name)
    if builtin is not None and builtin.channels == channels:
        layer = builtin
    else:
        layer = LayerSpec(layer_name, channels=channels,
                          stride=int(meta.get("layer_stride", 1) or 1),
                          rf_size=int(meta.get("layer_rf_size", 2) or 2))

    concepts = []
    off = body
    for _ in range(n_concepts):
        cid, count = struct.unpack("<2I", blob[off:off + 8])
        vec = np.frombuffer(blob, dtype="<f4", count=channels, offset=off + 8)
        finite = np.isfinite(vec)
        if not finite.all():
            bad = int(np.argmin(finite))
            raise FormatError("non-finite float in centroid", off + 8 + 4 * bad)
        concepts.append(VisualConcept(concept_id=cid, centroid=vec.copy(),
                                      member_count=count, layer=layer))
        off += record

    def opt_int(key):
        v = meta.get(key, "none")
        return None if v == "none" else int(v)

    merge_t = meta.get("merge_threshold", "none")
    provenance = {
        "k_initial": opt_int("k_initial"),
        "seed": opt_int("seed"),
        "merge_threshold": None if merge_t == "none" else float(merge_t),
        "n_samples": opt_int("n_samples"),
        "per_image": opt_int("per_image"),
    }
    return ConceptDictionary(
        object_class=meta.get("object_class", "unknown"),
        layer=layer,
        concepts=tuple(concepts),
        provenance=provenance,
    )
