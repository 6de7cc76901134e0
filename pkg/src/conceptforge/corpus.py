"""Feature-tensor corpus: domain types, binary interchange format, annotations.

A corpus is a collection of per-(image, layer) feature tensors stored one
file each ("VCFT" format, see `write_feature_file`), plus a line-oriented
annotation file of labeled part centers. A synthetic-corpus generator plants
known concept vectors into noise grids so the whole pipeline can be verified
against ground truth that is known by construction.

All pixel coordinates live in the resized object-crop frame (the frame in
which detectors and match radii are defined). Pixel (0, 0) occupies the unit
square [0,1)x[0,1), so its center is (0.5, 0.5).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

MAGIC_FEATURE = b"VCFT0001"
HEADER_SIZE = len(MAGIC_FEATURE) + 16  # magic + 4 little-endian u32 fields

VIEWPOINT_BINS = ("front", "front-side", "side", "rear-side", "rear", "unknown")

#: Sentinel in a merge map marking raw labels that are dropped outright.
DISCARD = "DISCARD"


class FormatError(ValueError):
    """Malformed binary file. `offset` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class AnnotationError(ValueError):
    """Malformed annotation or merge-map input."""


class SynthesisError(RuntimeError):
    """Synthetic corpus generation could not satisfy its constraints."""


@dataclass(frozen=True)
class LayerSpec:
    """Geometry of one CNN layer's response grid.

    `stride` is the pixel displacement between horizontally adjacent grid
    cells; `rf_size` the side of the theoretical receptive field in pixels.
    """

    name: str
    channels: int
    stride: int
    rf_size: int

    def __post_init__(self):
        if self.channels <= 0:
            raise ValueError(f"channels must be positive, got {self.channels}")
        if self.stride <= 0 or self.rf_size <= 0:
            raise ValueError("stride and rf_size must be positive")
        if self.rf_size <= self.stride:
            raise ValueError("rf_size must exceed stride")


#: Built-in VGG-16 pooling-layer table (verified against the layer-by-layer
#: receptive-field recurrence in the test suite).
VGG16_LAYERS: Mapping[str, LayerSpec] = {
    "pool3": LayerSpec("pool3", channels=256, stride=8, rf_size=44),
    "pool4": LayerSpec("pool4", channels=512, stride=16, rf_size=100),
    "pool5": LayerSpec("pool5", channels=512, stride=32, rf_size=212),
}

#: Geometry used by synthetic corpora (pool4-like grid, any channel count).
SYNTH_LAYER_NAME = "synth"


def get_layer(name: str, channels: int | None = None) -> LayerSpec:
    """Look up a built-in layer, optionally overriding the channel count."""
    try:
        spec = VGG16_LAYERS[name]
    except KeyError:
        raise KeyError(
            f"unknown layer {name!r}; built-ins are {sorted(VGG16_LAYERS)}"
        ) from None
    if channels is not None and channels != spec.channels:
        return replace(spec, channels=channels)
    return spec


@dataclass(frozen=True)
class ImageMeta:
    image_id: str
    object_class: str = "unknown"
    crop_width: int = 0
    crop_height: int = 0
    viewpoint_bin: str = "unknown"
    source_path: str | None = None

    def __post_init__(self):
        if self.viewpoint_bin not in VIEWPOINT_BINS:
            raise ValueError(
                f"viewpoint_bin {self.viewpoint_bin!r} not one of {VIEWPOINT_BINS}"
            )


class FeatureTensor:
    """One image's H x W x C activation grid at one layer, immutable."""

    __slots__ = ("image_id", "layer", "data", "meta")

    def __init__(self, image_id: str, layer: LayerSpec, data: np.ndarray,
                 meta: ImageMeta | None = None):
        data = np.ascontiguousarray(data, dtype=np.float32)
        if data.ndim != 3:
            raise ValueError(f"expected H x W x C data, got shape {data.shape}")
        if data.shape[2] != layer.channels:
            raise ValueError(
                f"data has {data.shape[2]} channels, layer {layer.name} "
                f"expects {layer.channels}"
            )
        if not np.all(np.isfinite(data)):
            raise ValueError("feature data contains non-finite values")
        data.flags.writeable = False
        self.image_id = image_id
        self.layer = layer
        self.data = data
        self.meta = meta or ImageMeta(image_id=image_id)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def __repr__(self):
        return (f"FeatureTensor({self.image_id!r}, layer={self.layer.name}, "
                f"shape={self.data.shape})")


@dataclass(frozen=True)
class GroundTruthInstance:
    """A labeled part center in crop-frame pixels."""

    image_id: str
    part_id: str
    center: tuple[float, float]
    box: tuple[float, float, float, float] | None = None
    viewpoint_bin: str = "unknown"


@dataclass(frozen=True)
class PopulationSample:
    """One grid cell's full channel-activation vector, l2-normalized."""

    vector: np.ndarray
    image_id: str
    grid_pos: tuple[int, int]


# ---------------------------------------------------------------------------
# VCFT binary feature files
# ---------------------------------------------------------------------------

def _meta_text(tensor: FeatureTensor) -> str:
    m = tensor.meta
    lines = [
        f"image_id={tensor.image_id}",
        f"layer={tensor.layer.name}",
        f"layer_stride={tensor.layer.stride}",
        f"layer_rf_size={tensor.layer.rf_size}",
        f"object_class={m.object_class}",
        f"crop_width={m.crop_width}",
        f"crop_height={m.crop_height}",
        f"viewpoint_bin={m.viewpoint_bin}",
    ]
    if m.source_path is not None:
        lines.append(f"source_path={m.source_path}")
    return "\n".join(lines) + "\n"


def _parse_meta(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"metadata line without '=': {line!r}", HEADER_SIZE)
        out[key.strip()] = value.strip()
    return out


def write_feature_file(tensor: FeatureTensor, path: str | os.PathLike) -> None:
    """Write one tensor as a VCFT file.

    Layout: 8-byte magic, little-endian u32 {width, height, channels,
    meta_length}, UTF-8 key=value metadata, then width*height*channels
    little-endian float32 in row-major (y, x, channel) order.
    """
    meta = _meta_text(tensor).encode("utf-8")
    header = MAGIC_FEATURE + struct.pack(
        "<4I", tensor.width, tensor.height, tensor.layer.channels, len(meta)
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(meta)
        fh.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())


def read_feature_file(path: str | os.PathLike) -> FeatureTensor:
    """Read a VCFT file; inverse of `write_feature_file`, bit-exact."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC_FEATURE)] != MAGIC_FEATURE:
        raise FormatError(f"bad magic {blob[:8]!r}, expected {MAGIC_FEATURE!r}", 0)
    if len(blob) < HEADER_SIZE:
        raise FormatError("truncated header", len(blob))
    width, height, channels, meta_len = struct.unpack(
        "<4I", blob[len(MAGIC_FEATURE):HEADER_SIZE]
    )
    data_start = HEADER_SIZE + meta_len
    if len(blob) < data_start:
        raise FormatError("truncated metadata", len(blob))
    meta = _parse_meta(blob[HEADER_SIZE:data_start].decode("utf-8"))

    n_values = width * height * channels
    expected = data_start + 4 * n_values
    if len(blob) < expected:
        raise FormatError(
            f"truncated payload: expected {expected} bytes, file has {len(blob)}",
            len(blob),
        )
    flat = np.frombuffer(blob, dtype="<f4", count=n_values, offset=data_start)
    finite = np.isfinite(flat)
    if not finite.all():
        bad = int(np.argmin(finite))
        raise FormatError("non-finite float in payload", data_start + 4 * bad)

    layer_name = meta.get("layer", "unknown")
    builtin = VGG16_LAYERS.get(layer_name)
    if (builtin is not None and builtin.channels == channels
            and str(builtin.stride) == meta.get("layer_stride", str(builtin.stride))):
        layer = builtin
    else:
        layer = LayerSpec(
            layer_name,
            channels=channels,
            stride=int(meta.get("layer_stride", 1) or 1),
            rf_size=int(meta.get("layer_rf_size", 2) or 2),
        )
    image_meta = ImageMeta(
        image_id=meta.get("image_id", "unknown"),
        object_class=meta.get("object_class", "unknown"),
        crop_width=int(meta.get("crop_width", 0)),
        crop_height=int(meta.get("crop_height", 0)),
        viewpoint_bin=meta.get("viewpoint_bin", "unknown"),
        source_path=meta.get("source_path"),
    )
    data = flat.reshape(height, width, channels).copy()
    return FeatureTensor(image_meta.image_id, layer, data, image_meta)


def save_corpus(tensors: Iterable[FeatureTensor], directory: str | os.PathLike) -> list[Path]:
    """Write one VCFT file per tensor under `directory` (created if needed)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in tensors:
        p = directory / f"{t.image_id}_{t.layer.name}.vcft"
        write_feature_file(t, p)
        paths.append(p)
    return paths


def load_corpus(directory: str | os.PathLike,
                layer: str | None = None) -> list[FeatureTensor]:
    """Load every .vcft file under `directory`, sorted by filename.

    With `layer`, only tensors of that layer are returned.
    """
    directory = Path(directory)
    tensors = []
    for p in sorted(directory.glob("*.vcft")):
        t = read_feature_file(p)
        if layer is None or t.layer.name == layer:
            tensors.append(t)
    return tensors


# ---------------------------------------------------------------------------
# Annotations
# ---------------------------------------------------------------------------

def load_merge_map(path: str | os.PathLike) -> dict[str, str]:
    """Parse a merge-map file of `raw_label -> merged_part_id` lines."""
    mapping: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            raw, sep, merged = line.partition("->")
            if not sep or not raw.strip() or not merged.strip():
                raise AnnotationError(
                    f"{path}:{lineno}: expected 'raw_label -> merged_part_id', "
                    f"got {line!r}"
                )
            mapping[raw.strip()] = merged.strip()
    return mapping


def _parse_annotation_line(tokens: list[str], lineno: int, path) -> GroundTruthInstance:
    if len(tokens) not in (4, 5, 6, 7):
        raise AnnotationError(
            f"{path}:{lineno}: expected 4-7 fields "
            "(image_id part_id x y [w h] [viewpoint]), got "
            f"{len(tokens)}"
        )
    image_id, part_id = tokens[0], tokens[1]
    try:
        x, y = float(tokens[2]), float(tokens[3])
    except ValueError:
        raise AnnotationError(f"{path}:{lineno}: non-numeric center") from None
    box = None
    bin_token = None
    rest = tokens[4:]
    if len(rest) == 1:
        bin_token = rest[0]
    elif len(rest) >= 2:
        try:
            w, h = float(rest[0]), float(rest[1])
        except ValueError:
            raise AnnotationError(
                f"{path}:{lineno}: expected numeric box w h, got {rest[:2]}"
            ) from None
        box = (x - w / 2.0, y - h / 2.0, w, h)
        if len(rest) == 3:
            bin_token = rest[2]
    if bin_token is not None and bin_token not in VIEWPOINT_BINS:
        raise AnnotationError(
            f"{path}:{lineno}: unknown viewpoint bin {bin_token!r}"
        )
    return GroundTruthInstance(
        image_id=image_id,
        part_id=part_id,
        center=(x, y),
        box=box,
        viewpoint_bin=bin_token or "unknown",
    )


def load_annotations(path: str | os.PathLike,
                     merge_map: Mapping[str, str] | None = None,
                     ) -> list[GroundTruthInstance]:
    """Load ground-truth instances; one record per line.

    With `merge_map`, each raw part label is replaced by its merged id;
    labels mapped to the DISCARD sentinel are dropped, and labels missing
    from the map are an error (silently passing them through would hide
    mislabeled data).
    """
    out: list[GroundTruthInstance] = []
    unknown: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            inst = _parse_annotation_line(stripped.split(), lineno, path)
            if merge_map is not None:
                merged = merge_map.get(inst.part_id)
                if merged is None:
                    unknown.append(inst.part_id)
                    continue
                if merged == DISCARD:
                    continue
                inst = replace(inst, part_id=merged)
            out.append(inst)
    if unknown:
        raise AnnotationError(
            "raw labels missing from merge map: "
            + ", ".join(sorted(set(unknown)))
        )
    return out


def write_annotations(instances: Iterable[GroundTruthInstance],
                      path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            x, y = inst.center
            fields = [inst.image_id, inst.part_id, f"{x:.9g}", f"{y:.9g}"]
            if inst.box is not None:
                fields += [f"{inst.box[2]:.9g}", f"{inst.box[3]:.9g}"]
            if inst.viewpoint_bin != "unknown" or inst.box is not None:
                fields.append(inst.viewpoint_bin)
            fh.write(" ".join(fields) + "\n")


def check_annotation_coverage(instances: Sequence[GroundTruthInstance],
                              tensors: Sequence[FeatureTensor]) -> list[str]:
    """Image ids referenced by annotations but absent from the corpus.

    Violations are returned for reporting, never silently dropped.
    """
    have = {t.image_id for t in tensors}
    return sorted({g.image_id for g in instances} - have)


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a planted-concept corpus.

    Each image gets `placements_per_image` distinct concepts planted at
    distinct random grid cells; every other cell holds an isotropic-noise
    unit vector. `noise_sigma` is the per-coordinate std of the Gaussian
    perturbation added to a planted vector before renormalization.
    """

    n_images: int = 200
    grid_w: int = 14
    grid_h: int = 14
    channels: int = 512
    n_planted_concepts: int = 16
    placements_per_image: int = 8
    noise_sigma: float = 0.05

    def __post_init__(self):
        if self.n_planted_concepts > self.channels:
            raise ValueError("n_planted_concepts must be <= channels")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.placements_per_image > self.n_planted_concepts:
            raise ValueError("placements_per_image must be <= n_planted_concepts")
        if self.placements_per_image > self.grid_w * self.grid_h:
            raise ValueError("placements_per_image must fit in the grid")


def _draw_separated_units(rng: np.random.Generator, n: int, dim: int,
                          max_cos: float = 0.5, max_attempts: int = 20000
                          ) -> np.ndarray:
    """Rejection-sample n unit vectors with pairwise angle >= 60 degrees."""
    picked: list[np.ndarray] = []
    for _ in range(max_attempts):
        v = rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        if all(abs(float(v @ u)) <= max_cos for u in picked):
            picked.append(v)
            if len(picked) == n:
                return np.asarray(picked)
    raise SynthesisError(
        f"could not place {n} unit vectors with pairwise cosine <= {max_cos} "
        f"in {dim} dimensions after {max_attempts} attempts"
    )


def generate_synthetic_corpus(spec: SyntheticSpec, seed: int
                              ) -> tuple[list[FeatureTensor],
                                         list[GroundTruthInstance],
                                         np.ndarray]:
    """Build a corpus with known planted concepts, fully seeded.

    Returns (tensors, ground truth, planted centroids). Ground-truth centers
    are the receptive-field centers of the planted cells, and part ids are
    "part00".."partNN" in planted-centroid order. Viewpoint bins cycle
    through the five named bins by image index.
    """
    from .detector import grid_to_pixel  # local import: detector depends on corpus

    rng = np.random.default_rng(seed)
    planted = _draw_separated_units(rng, spec.n_planted_concepts, spec.channels)

    layer = LayerSpec(SYNTH_LAYER_NAME, channels=spec.channels,
                      stride=16, rf_size=100)
    crop_w = spec.grid_w * layer.stride
    crop_h = spec.grid_h * layer.stride
    n_cells = spec.grid_w * spec.grid_h

    tensors: list[FeatureTensor] = []
    gts: list[GroundTruthInstance] = []
    for idx in range(spec.n_images):
        image_id = f"synth{idx:04d}"
        bin_name = VIEWPOINT_BINS[idx % 5]
        data = rng.standard_normal((spec.grid_h, spec.grid_w, spec.channels))
        data /= np.linalg.norm(data, axis=2, keepdims=True)

        concepts = rng.choice(spec.n_planted_concepts,
                              size=spec.placements_per_image, replace=False)
        cells = rng.choice(n_cells, size=spec.placements_per_image, replace=False)
        for concept, cell in zip(concepts, cells):
            i, j = divmod(int(cell), spec.grid_w)
            vec = planted[concept]
            if spec.noise_sigma > 0:
                vec = vec + spec.noise_sigma * rng.standard_normal(spec.channels)
                vec = vec / np.linalg.norm(vec)
            data[i, j] = vec
            gts.append(GroundTruthInstance(
                image_id=image_id,
                part_id=f"part{int(concept):02d}",
                center=grid_to_pixel(layer, i, j),
                viewpoint_bin=bin_name,
            ))
        meta = ImageMeta(image_id=image_id, object_class="synthetic",
                         crop_width=crop_w, crop_height=crop_h,
                         viewpoint_bin=bin_name)
        tensors.append(FeatureTensor(image_id, layer, data.astype(np.float32), meta))
    return tensors, gts, planted.astype(np.float32)
