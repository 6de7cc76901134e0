"""Matching detections to ground truth and scoring part detectors.

Detections are pooled across the whole corpus and swept by a single global
score threshold, so average precision is detection-style: the area under the
raw precision-recall staircase (continuous, non-interpolated by default; a
VOC 11-point mode exists behind a flag).

Matching is greedy in score order: each detection claims the nearest
not-yet-matched ground-truth instance of the target part (or part subset)
within the match radius in the same image; distance ties break toward the
lower ground-truth index. Parts with zero ground truth yield an absent AP
(None), never 0, so means are computed over defined entries only.

The exhaustive MultipleSP search evaluates every part subset of size
1..max_subset against the union of those parts' ground truth. All subset
evaluations for one concept share a single candidate table (detection, part,
ground-truth, distance) sorted by (rank, distance, gt index); filtering rows
by subset membership preserves that order, so one linear greedy pass per
subset reproduces the matcher exactly. The pass is JIT-compiled when numba
is available, with an identical pure-Python fallback.
"""

from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._parallel import ordered_map
from .corpus import GroundTruthInstance, VIEWPOINT_BINS
from .detector import Detection

DEFAULT_MATCH_RADIUS = 56.0

AP_MODES = ("continuous", "voc11")


# ---------------------------------------------------------------------------
# Greedy pass kernel
# ---------------------------------------------------------------------------

def _greedy_pass_py(det_rank, gt_id, part_code, member, epoch,
                    det_taken, gt_taken, tp_out):
    m = 0
    for k in range(len(det_rank)):
        if not member[part_code[k]]:
            continue
        r = det_rank[k]
        g = gt_id[k]
        if det_taken[r] == epoch or gt_taken[g] == epoch:
            continue
        det_taken[r] = epoch
        gt_taken[g] = epoch
        tp_out[m] = r
        m += 1
    return m


try:  # pragma: no cover - exercised whenever numba is installed
    import numba as _numba

    _greedy_pass = _numba.njit(cache=True, nogil=True)(_greedy_pass_py)
except ImportError:  # pragma: no cover
    _greedy_pass = _greedy_pass_py


# ---------------------------------------------------------------------------
# Candidate tables
# ---------------------------------------------------------------------------

@dataclass
class _PairTable:
    """All (detection, ground truth) pairs within the match radius for one
    concept's globally ranked detections, sorted by (rank, distance, gt)."""

    n_det: int
    n_gt_total: int
    det_rank: np.ndarray
    gt_id: np.ndarray
    part_code: np.ndarray
    parts: tuple[str, ...]
    n_gt_by_part: np.ndarray

    def greedy_tp_ranks(self, member: np.ndarray, scratch) -> np.ndarray:
        det_taken, gt_taken, tp_out, epoch = scratch
        epoch[0] += 1
        m = _greedy_pass(self.det_rank, self.gt_id, self.part_code, member,
                         epoch[0], det_taken, gt_taken, tp_out)
        return tp_out[:m]

    def new_scratch(self):
        return (np.zeros(max(self.n_det, 1), dtype=np.int64),
                np.zeros(max(self.n_gt_total, 1), dtype=np.int64),
                np.empty(max(self.n_gt_total, 1), dtype=np.int64),
                [0])


def _check_sorted(detections: Sequence[Detection]) -> None:
    scores = np.array([d.score for d in detections])
    if len(scores) > 1 and np.any(np.diff(scores) > 0):
        raise ValueError("detections must be sorted by non-increasing score")


def _build_pair_table(detections: Sequence[Detection],
                      gts: Sequence[GroundTruthInstance],
                      radius_px: float,
                      parts: Sequence[str] | None = None) -> _PairTable:
    _check_sorted(detections)
    part_list = tuple(parts) if parts is not None else tuple(
        sorted({g.part_id for g in gts}))
    code_of = {p: c for c, p in enumerate(part_list)}

    by_image: dict[str, list[int]] = defaultdict(list)
    for gi, g in enumerate(gts):
        if g.part_id in code_of:
            by_image[g.image_id].append(gi)

    ranks, gids, codes, dists = [], [], [], []
    det_by_image: dict[str, list[int]] = defaultdict(list)
    for rank, d in enumerate(detections):
        det_by_image[d.image_id].append(rank)
    for image_id, det_ranks in det_by_image.items():
        gt_idx = by_image.get(image_id)
        if not gt_idx:
            continue
        dx = np.array([detections[r].x for r in det_ranks])
        dy = np.array([detections[r].y for r in det_ranks])
        gx = np.array([gts[gi].center[0] for gi in gt_idx])
        gy = np.array([gts[gi].center[1] for gi in gt_idx])
        dist = np.hypot(dx[:, None] - gx[None, :], dy[:, None] - gy[None, :])
        rows, cols = np.nonzero(dist <= radius_px)
        for r, c in zip(rows, cols):
            ranks.append(det_ranks[r])
            gids.append(gt_idx[c])
            codes.append(code_of[gts[gt_idx[c]].part_id])
            dists.append(dist[r, c])

    ranks = np.asarray(ranks, dtype=np.int64)
    gids = np.asarray(gids, dtype=np.int64)
    codes = np.asarray(codes, dtype=np.int64)
    dists = np.asarray(dists, dtype=np.float64)
    order = np.lexsort((gids, dists, ranks))

    n_gt_by_part = np.zeros(len(part_list), dtype=np.int64)
    for g in gts:
        code = code_of.get(g.part_id)
        if code is not None:
            n_gt_by_part[code] += 1
    return _PairTable(
        n_det=len(detections),
        n_gt_total=len(gts),
        det_rank=ranks[order],
        gt_id=gids[order],
        part_code=codes[order],
        parts=part_list,
        n_gt_by_part=n_gt_by_part,
    )


# ---------------------------------------------------------------------------
# Matching and AP
# ---------------------------------------------------------------------------

@dataclass
class MatchResult:
    """TP/FP flags per detection (in rank order) for one target part/subset."""

    flags: np.ndarray
    n_gt: int
    match_radius: float

    def __post_init__(self):
        if int(self.flags.sum()) > self.n_gt:
            raise ValueError("more true positives than ground-truth instances")


@dataclass
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray
    ap: float


def match_detections(detections: Sequence[Detection],
                     gts: Sequence[GroundTruthInstance],
                     radius_px: float = DEFAULT_MATCH_RADIUS) -> MatchResult:
    """Greedily match score-ordered detections against one part's (or one
    part union's) ground truth; each instance is claimed at most once."""
    table = _build_pair_table(detections, gts, radius_px)
    member = np.ones(max(len(table.parts), 1), dtype=bool)
    tp_ranks = table.greedy_tp_ranks(member, table.new_scratch())
    flags = np.zeros(len(detections), dtype=bool)
    flags[tp_ranks] = True
    return MatchResult(flags=flags, n_gt=len(gts), match_radius=radius_px)


def _ap_from_tp_ranks(tp_ranks: np.ndarray, n_gt: int,
                      mode: str = "continuous") -> float | None:
    """AP from the (ascending) global ranks of the true positives.

    Continuous mode is the exact area under the raw PR staircase:
    sum over the j-th TP of (j / rank_j) / n_gt, 1-based.
    """
    if n_gt == 0:
        return None
    if len(tp_ranks) == 0:
        return 0.0
    j = np.arange(1, len(tp_ranks) + 1, dtype=np.float64)
    precision = j / (np.asarray(tp_ranks, dtype=np.float64) + 1.0)
    if mode == "continuous":
        return float(precision.sum() / n_gt)
    if mode == "voc11":
        recall = j / n_gt
        total = 0.0
        for t in np.linspace(0.0, 1.0, 11):
            at = precision[recall >= t - 1e-12]
            total += float(at.max()) if len(at) else 0.0
        return total / 11.0
    raise ValueError(f"unknown ap mode {mode!r}")


def average_precision(match: MatchResult, mode: str = "continuous"
                      ) -> float | None:
    """Area under the raw precision-recall staircase; None when there is no
    ground truth (absent, never 0)."""
    if match.n_gt == 0:
        return None
    tp_ranks = np.flatnonzero(match.flags)
    return _ap_from_tp_ranks(tp_ranks, match.n_gt, mode)


def pr_curve(match: MatchResult, mode: str = "continuous") -> PRCurve:
    if match.n_gt == 0:
        raise ValueError("PR curve undefined without ground truth")
    cum = np.cumsum(match.flags)
    n = len(match.flags)
    return PRCurve(
        recall=cum / match.n_gt,
        precision=cum / np.arange(1, n + 1) if n else np.empty(0),
        ap=average_precision(match, mode),
    )


# ---------------------------------------------------------------------------
# Dictionary-level evaluation
# ---------------------------------------------------------------------------

@dataclass
class BestConceptRow:
    part_id: str
    concept_id: int | None
    ap: float | None
    n_gt: int


@dataclass
class BestConceptTable:
    rows: list[BestConceptRow]

    @property
    def mean_ap(self) -> float | None:
        defined = [r.ap for r in self.rows if r.ap is not None]
        return float(np.mean(defined)) if defined else None


@dataclass
class SubsetResult:
    concept_id: int
    parts: tuple[str, ...]
    ap: float | None


@dataclass
class ApHistograms:
    bin_edges: np.ndarray
    single_hist: np.ndarray
    multiple_hist: np.ndarray
    subset_size_counts: dict[int, int]
    per_concept: list[tuple[int, str | None, float | None, tuple[str, ...], float | None]]


@dataclass
class ViewpointEval:
    per_bin: dict[str, BestConceptTable]
    best_bin_rows: list[tuple[str, str, int | None, float | None]]
    excluded_images: list[str]

    @property
    def best_bin_mean_ap(self) -> float | None:
        defined = [ap for _, _, _, ap in self.best_bin_rows if ap is not None]
        return float(np.mean(defined)) if defined else None


@dataclass
class EvalReport:
    parts: tuple[str, ...]
    concept_ids: tuple[int, ...]
    ap_matrix: np.ndarray  # concepts x parts, NaN where absent
    best_table: BestConceptTable
    subset_results: list[SubsetResult]
    histograms: ApHistograms
    viewpoint: ViewpointEval | None
    pr_curves: dict[tuple[int, tuple[str, ...]], PRCurve]
    match_radius: float
    subset_max: int
    ap_mode: str
    provenance: Mapping[str, object] = field(default_factory=dict)


def _singleton_aps(table: _PairTable, scratch, mode: str) -> list[float | None]:
    aps: list[float | None] = []
    member = np.zeros(len(table.parts), dtype=bool)
    for code in range(len(table.parts)):
        member[:] = False
        member[code] = True
        n_gt = int(table.n_gt_by_part[code])
        if n_gt == 0:
            aps.append(None)
            continue
        tp = table.greedy_tp_ranks(member, scratch)
        aps.append(_ap_from_tp_ranks(tp, n_gt, mode))
    return aps


def _best_subset(table: _PairTable, scratch, max_subset: int, mode: str
                 ) -> tuple[tuple[str, ...], float | None]:
    """Exhaustive search over part subsets of size 1..max_subset."""
    codes_with_gt = [c for c in range(len(table.parts))
                     if table.n_gt_by_part[c] > 0]
    if not codes_with_gt:
        return tuple(), None
    member = np.zeros(len(table.parts), dtype=bool)
    best_ap = -1.0
    best: tuple[int, ...] = tuple()
    for size in range(1, max_subset + 1):
        for combo in itertools.combinations(codes_with_gt, size):
            member[:] = False
            for c in combo:
                member[c] = True
            n_gt = int(table.n_gt_by_part[list(combo)].sum())
            tp = table.greedy_tp_ranks(member, scratch)
            ap = _ap_from_tp_ranks(tp, n_gt, mode)
            # strict >: ties keep the earlier (smaller, lexicographic) subset
            if ap > best_ap:
                best_ap = ap
                best = combo
    return tuple(table.parts[c] for c in best), best_ap


def best_concept_per_part(detections_by_concept: Mapping[int, Sequence[Detection]],
                          gts: Sequence[GroundTruthInstance],
                          radius_px: float = DEFAULT_MATCH_RADIUS,
                          parts: Sequence[str] | None = None,
                          mode: str = "continuous") -> BestConceptTable:
    """Per part, the concept with the highest AP (ties toward the lower id)."""
    part_list = tuple(parts) if parts is not None else tuple(
        sorted({g.part_id for g in gts}))
    best: dict[str, tuple[int | None, float | None]] = {
        p: (None, None) for p in part_list}
    n_gt_of = {p: sum(1 for g in gts if g.part_id == p) for p in part_list}
    for cid in sorted(detections_by_concept):
        table = _build_pair_table(detections_by_concept[cid], gts, radius_px,
                                  parts=part_list)
        aps = _singleton_aps(table, table.new_scratch(), mode)
        for p, ap in zip(part_list, aps):
            if ap is not None and (best[p][1] is None or ap > best[p][1]):
                best[p] = (cid, ap)
    rows = [BestConceptRow(part_id=p, concept_id=best[p][0], ap=best[p][1],
                           n_gt=n_gt_of[p])
            for p in part_list]
    return BestConceptTable(rows=rows)


def best_subset_per_concept(detections: Sequence[Detection],
                            gts: Sequence[GroundTruthInstance],
                            max_subset: int = 4,
                            radius_px: float = DEFAULT_MATCH_RADIUS,
                            parts: Sequence[str] | None = None,
                            mode: str = "continuous"
                            ) -> tuple[tuple[str, ...], float | None]:
    """The part subset (size 1..max_subset, ground truth unioned) this
    concept detects best. Exhaustive; ties prefer smaller subsets, then
    lexicographic part ids."""
    if max_subset < 1:
        raise ValueError("max_subset must be >= 1")
    table = _build_pair_table(detections, gts, radius_px, parts=parts)
    return _best_subset(table, table.new_scratch(), max_subset, mode)


def ap_histograms(detections_by_concept: Mapping[int, Sequence[Detection]],
                  gts: Sequence[GroundTruthInstance],
                  max_subset: int = 4,
                  radius_px: float = DEFAULT_MATCH_RADIUS,
                  mode: str = "continuous",
                  n_bins: int = 10,
                  threads: int = 1) -> ApHistograms:
    """SingleSP vs MultipleSP AP histograms plus the best-subset-size
    distribution, one entry per concept."""
    part_list = tuple(sorted({g.part_id for g in gts}))
    cids = sorted(detections_by_concept)

    def one(cid):
        table = _build_pair_table(detections_by_concept[cid], gts, radius_px,
                                  parts=part_list)
        scratch = table.new_scratch()
        singles = _singleton_aps(table, scratch, mode)
        defined = [(ap, p) for ap, p in zip(singles, part_list) if ap is not None]
        if defined:
            single_ap, single_part = max(defined, key=lambda t: (t[0], ))
        else:
            single_ap, single_part = None, None
        subset, multi_ap = _best_subset(table, scratch, max_subset, mode)
        return (cid, single_part, single_ap, subset, multi_ap)

    per_concept = ordered_map(one, cids, threads=threads)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    single_vals = [r[2] for r in per_concept if r[2] is not None]
    multi_vals = [r[4] for r in per_concept if r[4] is not None]
    sizes: dict[int, int] = {}
    for r in per_concept:
        if r[4] is not None:
            sizes[len(r[3])] = sizes.get(len(r[3]), 0) + 1
    return ApHistograms(
        bin_edges=edges,
        single_hist=np.histogram(single_vals, bins=edges)[0],
        multiple_hist=np.histogram(multi_vals, bins=edges)[0],
        subset_size_counts=sizes,
        per_concept=per_concept,
    )


def image_viewpoints(gts: Sequence[GroundTruthInstance]) -> dict[str, str]:
    """Each image's viewpoint bin from its instances; conflicts are an error."""
    bins: dict[str, str] = {}
    for g in gts:
        seen = bins.get(g.image_id)
        if seen is None or seen == "unknown":
            bins[g.image_id] = g.viewpoint_bin
        elif g.viewpoint_bin not in ("unknown", seen):
            raise ValueError(
                f"conflicting viewpoint bins for image {g.image_id}: "
                f"{seen} vs {g.viewpoint_bin}"
            )
    return bins


def viewpoint_controlled_eval(detections_by_concept: Mapping[int, Sequence[Detection]],
                              gts: Sequence[GroundTruthInstance],
                              radius_px: float = DEFAULT_MATCH_RADIUS,
                              mode: str = "continuous") -> ViewpointEval:
    """Evaluate within each viewpoint bin separately and report each part's
    best-bin AP. Images without a known bin are excluded and counted."""
    bins = image_viewpoints(gts)
    named = [b for b in VIEWPOINT_BINS if b != "unknown"]
    det_images = {d.image_id
                  for dets in detections_by_concept.values() for d in dets}
    excluded = sorted(
        img for img in det_images | set(bins)
        if bins.get(img, "unknown") == "unknown")

    per_bin: dict[str, BestConceptTable] = {}
    for b in named:
        sub_gts = [g for g in gts if bins[g.image_id] == b]
        if not sub_gts:
            continue
        sub_dets = {
            cid: [d for d in dets if bins.get(d.image_id) == b]
            for cid, dets in detections_by_concept.items()
        }
        per_bin[b] = best_concept_per_part(sub_dets, sub_gts,
                                           radius_px=radius_px, mode=mode)

    parts = tuple(sorted({g.part_id for g in gts}))
    best_rows: list[tuple[str, str, int | None, float | None]] = []
    for p in parts:
        candidates = []
        for b in named:
            table = per_bin.get(b)
            if table is None:
                continue
            for row in table.rows:
                if row.part_id == p and row.ap is not None:
                    candidates.append((row.ap, b, row.concept_id))
        if candidates:
            ap, b, cid = max(candidates, key=lambda t: t[0])
            best_rows.append((p, b, cid, ap))
        else:
            best_rows.append((p, "unknown", None, None))
    return ViewpointEval(per_bin=per_bin, best_bin_rows=best_rows,
                         excluded_images=excluded)


def evaluate_dictionary(detections_by_concept: Mapping[int, Sequence[Detection]],
                        gts: Sequence[GroundTruthInstance],
                        match_radius: float = DEFAULT_MATCH_RADIUS,
                        subset_max: int = 4,
                        mode: str = "continuous",
                        viewpoint: bool = True,
                        threads: int = 1,
                        provenance: Mapping[str, object] | None = None
                        ) -> EvalReport:
    """Full evaluation: AP matrix, best concept per part, MultipleSP subset
    search, AP histograms, and (optionally) viewpoint control."""
    parts = tuple(sorted({g.part_id for g in gts}))
    cids = tuple(sorted(detections_by_concept))
    if not parts:
        raise ValueError("no ground-truth instances to evaluate against")

    def one(cid):
        table = _build_pair_table(detections_by_concept[cid], gts,
                                  match_radius, parts=parts)
        scratch = table.new_scratch()
        singles = _singleton_aps(table, scratch, mode)
        subset, subset_ap = _best_subset(table, scratch, subset_max, mode)
        return singles, subset, subset_ap

    results = ordered_map(one, cids, threads=threads)

    matrix = np.full((len(cids), len(parts)), np.nan)
    subset_results = []
    for row, (cid, (singles, subset, subset_ap)) in enumerate(zip(cids, results)):
        for col, ap in enumerate(singles):
            if ap is not None:
                matrix[row, col] = ap
        subset_results.append(SubsetResult(concept_id=cid, parts=subset,
                                           ap=subset_ap))

    n_gt_of = {p: sum(1 for g in gts if g.part_id == p) for p in parts}
    best_rows = []
    for col, p in enumerate(parts):
        column = matrix[:, col]
        defined = np.flatnonzero(~np.isnan(column))
        if len(defined):
            best_idx = defined[np.argmax(column[defined])]
            best_rows.append(BestConceptRow(
                part_id=p, concept_id=cids[best_idx],
                ap=float(column[best_idx]), n_gt=n_gt_of[p]))
        else:
            best_rows.append(BestConceptRow(part_id=p, concept_id=None,
                                            ap=None, n_gt=n_gt_of[p]))
    best_table = BestConceptTable(rows=best_rows)

    hist_rows = []
    for cid, (singles, subset, subset_ap) in zip(cids, results):
        defined = [(ap, p) for ap, p in zip(singles, parts) if ap is not None]
        if defined:
            s_ap, s_part = max(defined, key=lambda t: (t[0], ))
        else:
            s_ap, s_part = None, None
        hist_rows.append((cid, s_part, s_ap, subset, subset_ap))
    edges = np.linspace(0.0, 1.0, 11)
    sizes: dict[int, int] = {}
    for r in hist_rows:
        if r[4] is not None:
            sizes[len(r[3])] = sizes.get(len(r[3]), 0) + 1
    histograms = ApHistograms(
        bin_edges=edges,
        single_hist=np.histogram([r[2] for r in hist_rows if r[2] is not None],
                                 bins=edges)[0],
        multiple_hist=np.histogram([r[4] for r in hist_rows if r[4] is not None],
                                   bins=edges)[0],
        subset_size_counts=sizes,
        per_concept=hist_rows,
    )

    vp = viewpoint_controlled_eval(detections_by_concept, gts,
                                   radius_px=match_radius,
                                   mode=mode) if viewpoint else None

    # PR curves for every reported AP (best table rows, best subsets)
    curves: dict[tuple[int, tuple[str, ...]], PRCurve] = {}
    for row in best_table.rows:
        if row.concept_id is None:
            continue
        sub_gts = [g for g in gts if g.part_id == row.part_id]
        m = match_detections(detections_by_concept[row.concept_id], sub_gts,
                             radius_px=match_radius)
        curves[(row.concept_id, (row.part_id,))] = pr_curve(m, mode)
    for sr in subset_results:
        if sr.ap is None or (sr.concept_id, sr.parts) in curves:
            continue
        sub_gts = [g for g in gts if g.part_id in sr.parts]
        m = match_detections(detections_by_concept[sr.concept_id], sub_gts,
                             radius_px=match_radius)
        curves[(sr.concept_id, sr.parts)] = pr_curve(m, mode)

    return EvalReport(
        parts=parts,
        concept_ids=cids,
        ap_matrix=matrix,
        best_table=best_table,
        subset_results=subset_results,
        histograms=histograms,
        viewpoint=vp,
        pr_curves=curves,
        match_radius=match_radius,
        subset_max=subset_max,
        ap_mode=mode,
        provenance=dict(provenance or {}),
    )


# ---------------------------------------------------------------------------
# Report rendering
# ---------------------------------------------------------------------------

def _fmt_ap(ap: float | None) -> str:
    return "absent" if ap is None else f"{ap:.3f}"


def ap_matrix_lines(report: EvalReport) -> list[str]:
    """Machine-readable lines: `concept part_or_subset ap`, subsets joined
    with '+'. Absent APs are written as the token 'absent'."""
    lines = []
    for row, cid in enumerate(report.concept_ids):
        for col, part in enumerate(report.parts):
            ap = report.ap_matrix[row, col]
            val = "absent" if np.isnan(ap) else f"{ap:.9g}"
            lines.append(f"{cid} {part} {val}")
    for sr in report.subset_results:
        if sr.parts:
            val = "absent" if sr.ap is None else f"{sr.ap:.9g}"
            lines.append(f"{sr.concept_id} {'+'.join(sr.parts)} {val}")
    return lines


def render_report(report: EvalReport) -> str:
    """Human-readable tables: best concept per part, MultipleSP summary,
    AP histograms, subset sizes, viewpoint control."""
    out: list[str] = []
    out.append("provenance:")
    pinned = {"match_radius": f"{report.match_radius:g}",
              "subset_max": str(report.subset_max),
              "ap_mode": report.ap_mode}
    for key in sorted(report.provenance):
        if key not in pinned:
            out.append(f"  {key}={report.provenance[key]}")
    for key, value in pinned.items():
        out.append(f"  {key}={value}")
    out.append("")

    out.append("best concept per part (SingleSP)")
    out.append(f"{'part':<16} {'concept':>8} {'n_gt':>6} {'ap':>8}")
    for r in report.best_table.rows:
        cid = "-" if r.concept_id is None else str(r.concept_id)
        out.append(f"{r.part_id:<16} {cid:>8} {r.n_gt:>6} {_fmt_ap(r.ap):>8}")
    out.append(f"mAP {_fmt_ap(report.best_table.mean_ap)} over "
               f"{sum(1 for r in report.best_table.rows if r.ap is not None)}"
               f"/{len(report.best_table.rows)} defined parts")
    out.append("")

    out.append(f"best subset per concept (MultipleSP, size <= {report.subset_max})")
    out.append(f"{'concept':>8} {'single_ap':>10} {'subset_ap':>10}  subset")
    for cid, s_part, s_ap, subset, m_ap in report.histograms.per_concept:
        out.append(f"{cid:>8} {_fmt_ap(s_ap):>10} {_fmt_ap(m_ap):>10}  "
                   f"{'+'.join(subset) if subset else '-'}")
    out.append("")

    out.append("AP histograms (10 bins over [0, 1])")
    out.append(f"{'bin':<14} {'singleSP':>9} {'multipleSP':>11}")
    edges = report.histograms.bin_edges
    for b in range(len(edges) - 1):
        label = f"[{edges[b]:.1f}, {edges[b + 1]:.1f})"
        out.append(f"{label:<14} {report.histograms.single_hist[b]:>9} "
                   f"{report.histograms.multiple_hist[b]:>11}")
    out.append("")

    out.append("best-subset size distribution")
    for size in sorted(report.histograms.subset_size_counts):
        out.append(f"  size {size}: {report.histograms.subset_size_counts[size]}")
    out.append("")

    if report.viewpoint is not None:
        vp = report.viewpoint
        out.append("viewpoint control (best bin per part)")
        out.append(f"{'part':<16} {'bin':<12} {'concept':>8} {'ap':>8}")
        for part, b, cid, ap in vp.best_bin_rows:
            cid_s = "-" if cid is None else str(cid)
            out.append(f"{part:<16} {b:<12} {cid_s:>8} {_fmt_ap(ap):>8}")
        out.append(f"best-bin mAP {_fmt_ap(vp.best_bin_mean_ap)}; "
                   f"unrestricted mAP {_fmt_ap(report.best_table.mean_ap)}")
        out.append(f"images excluded for unknown viewpoint: "
                   f"{len(vp.excluded_images)}")
        out.append("")
    return "\n".join(out) + "\n"
