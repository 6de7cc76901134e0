"""Command-line surface: synth, cluster, merge, detect, eval, viz, report,
selfcheck.

Every flag can be overridden by an environment variable named
CONCEPTFORGE_<FLAG> (upper-cased, dashes to underscores); explicit flags win
over the environment, which wins over built-in defaults. All outputs land
under --out next to a provenance.txt echoing the full configuration.

Exit codes: 0 success, 1 data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
import time
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import concepts as C
from . import corpus as corpus_mod
from . import detector as D
from . import evaluation as E
from . import visualize as V

ENV_PREFIX = "CONCEPTFORGE_"


def _env(flag: str) -> str | None:
    return os.environ.get(ENV_PREFIX + flag.strip("-").upper().replace("-", "_"))


def _add(parser: argparse.ArgumentParser, flag: str, required: bool = False,
         default=None, **kwargs) -> None:
    """add_argument with environment-variable override support."""
    env_value = _env(flag)
    if env_value is not None:
        caster = kwargs.get("type", str)
        default = caster(env_value)
        required = False
    parser.add_argument(flag, required=required, default=default, **kwargs)


@dataclass
class RunConfig:
    """The knobs a run was configured with, echoed into provenance blocks."""

    subcommand: str
    layer: str | None = None
    k: int | None = None
    seed: int | None = None
    merge_threshold: float | None = None
    nms_radius: float | None = None
    match_radius: float = E.DEFAULT_MATCH_RADIUS
    subset_max: int = 4
    per_image: int | None = None
    corpus: str | None = None
    out: str | None = None
    threads: int = 1

    def validate(self) -> None:
        positives = {
            "k": self.k, "merge_threshold": self.merge_threshold,
            "nms_radius": self.nms_radius, "match_radius": self.match_radius,
            "subset_max": self.subset_max, "per_image": self.per_image,
            "threads": self.threads,
        }
        for name, value in positives.items():
            if value is not None and value <= 0:
                raise ValueError(f"--{name.replace('_', '-')} must be positive")
        if self.seed is not None and self.seed < 0:
            raise ValueError("--seed must be non-negative")

    def science_block(self) -> dict[str, object]:
        """Config without execution details (threads, out): artifacts embed
        this so byte-identity across thread counts holds."""
        block = asdict(self)
        block.pop("threads")
        block.pop("out")
        return {k: v for k, v in block.items() if v is not None}


def _write_provenance(out_dir: Path, config: RunConfig,
                      extra: dict | None = None) -> None:
    lines = [f"conceptforge_version={__version__}"]
    block = asdict(config)
    block.update(extra or {})
    for key in sorted(block):
        lines.append(f"{key}={block[key]}")
    (out_dir / "provenance.txt").write_text("\n".join(lines) + "\n",
                                            encoding="utf-8")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve_layer(name: str, tensors) -> corpus_mod.LayerSpec:
    for t in tensors:
        if t.layer.name == name:
            return t.layer
    raise ValueError(f"corpus has no tensors for layer {name!r}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = corpus_mod.SyntheticSpec(
        n_images=args.images, grid_w=args.grid_w, grid_h=args.grid_h,
        channels=args.channels, n_planted_concepts=args.concepts,
        placements_per_image=args.placements, noise_sigma=args.noise_sigma)
    tensors, gts, planted = corpus_mod.generate_synthetic_corpus(spec, args.seed)
    out = _out_dir(args)
    corpus_mod.save_corpus(tensors, out / "features")
    corpus_mod.write_annotations(gts, out / "annotations.txt")
    layer = tensors[0].layer
    planted_dict = C.ConceptDictionary(
        object_class="synthetic", layer=layer,
        concepts=tuple(
            C.VisualConcept(concept_id=i, centroid=vec, member_count=1,
                            layer=layer)
            for i, vec in enumerate(planted)),
        provenance={"k_initial": len(planted), "seed": args.seed,
                    "merge_threshold": None, "n_samples": None,
                    "per_image": None})
    C.save_dictionary(planted_dict, out / "planted.vcdc")
    config = RunConfig(subcommand="synth", layer=layer.name, seed=args.seed,
                       out=args.out)
    config.validate()
    _write_provenance(out, config, {
        "images": args.images, "grid_w": args.grid_w, "grid_h": args.grid_h,
        "channels": args.channels, "concepts": args.concepts,
        "placements": args.placements, "noise_sigma": args.noise_sigma})
    print(f"wrote {len(tensors)} feature files, {len(gts)} annotations -> {out}")
    return 0


def cmd_cluster(args) -> int:
    tensors = corpus_mod.load_corpus(args.corpus, layer=args.layer)
    if not tensors:
        raise ValueError(f"no {args.layer!r} tensors under {args.corpus}")
    layer = _resolve_layer(args.layer, tensors)
    k = args.k if args.k is not None else layer.channels
    per_image = args.per_image
    config = RunConfig(subcommand="cluster", layer=args.layer, k=k,
                       seed=args.seed, per_image=per_image,
                       corpus=args.corpus, out=args.out, threads=args.threads)
    config.validate()
    dictionary = C.learn_dictionary(tensors, layer, k=k, seed=args.seed,
                                    per_image=per_image, threads=args.threads)
    out = _out_dir(args)
    C.save_dictionary(dictionary, out / "dictionary.vcdc")
    _write_provenance(out, config)
    print(f"learned {len(dictionary)} concepts from "
          f"{dictionary.provenance['n_samples']} samples -> {out / 'dictionary.vcdc'}")
    return 0


def cmd_merge(args) -> int:
    dictionary = C.load_dictionary(args.dict)
    config = RunConfig(subcommand="merge", layer=dictionary.layer.name,
                       merge_threshold=args.threshold, out=args.out)
    config.validate()
    merged = C.merge_dictionary(dictionary, sim_threshold=args.threshold)
    out = _out_dir(args)
    C.save_dictionary(merged, out / "merged.vcdc")
    _write_provenance(out, config, {"dict": args.dict})
    print(f"merged {len(dictionary)} -> {len(merged)} concepts "
          f"at threshold {args.threshold}")
    return 0


def cmd_detect(args) -> int:
    dictionary = C.load_dictionary(args.dict)
    layer_name = args.layer or dictionary.layer.name
    tensors = corpus_mod.load_corpus(args.corpus, layer=layer_name)
    if not tensors:
        raise ValueError(f"no {layer_name!r} tensors under {args.corpus}")
    config = RunConfig(subcommand="detect", layer=layer_name,
                       nms_radius=args.nms_radius, corpus=args.corpus,
                       out=args.out, threads=args.threads)
    config.validate()
    out = _out_dir(args)
    header = dict(config.science_block())
    header["mode"] = args.mode

    if args.mode == "vc":
        dets_by_id = D.detect_dictionary(dictionary, tensors,
                                         nms_radius=args.nms_radius,
                                         threads=args.threads)
    else:
        layer = _resolve_layer(layer_name, tensors)
        results = D.ordered_map(
            lambda ch: D.single_filter_detect(
                ch, tensors, layer, nms_radius=args.nms_radius,
                l2_normalized=args.sf_l2),
            list(range(layer.channels)), threads=args.threads)
        dets_by_id = dict(enumerate(results))

    with open(out / "detections.txt", "w", encoding="utf-8") as fh:
        for key, value in header.items():
            fh.write(f"# {key}={value}\n")
        for cid in sorted(dets_by_id):
            for d in dets_by_id[cid]:
                fh.write(f"{d.image_id} {d.concept_id} "
                         f"{d.x:.9g} {d.y:.9g} {d.score:.9g}\n")
    _write_provenance(out, config, {"dict": args.dict, "mode": args.mode})
    total = sum(len(v) for v in dets_by_id.values())
    print(f"wrote {total} detections for {len(dets_by_id)} detectors -> "
          f"{out / 'detections.txt'}")
    return 0


def _group_by_concept(dets):
    grouped: dict[int, list] = {}
    for d in dets:
        grouped.setdefault(d.concept_id, []).append(d)
    return grouped


def cmd_eval(args) -> int:
    dets = D.read_detections(args.detections)
    merge_map = (corpus_mod.load_merge_map(args.merge_map)
                 if args.merge_map else None)
    gts = corpus_mod.load_annotations(args.annotations, merge_map=merge_map)
    if not gts:
        raise ValueError(f"no ground truth in {args.annotations}")
    config = RunConfig(subcommand="eval", match_radius=args.match_radius,
                       subset_max=args.subset_max, out=args.out,
                       threads=args.threads)
    config.validate()
    provenance = dict(config.science_block())
    provenance["detections"] = args.detections
    provenance["annotations"] = args.annotations
    report = E.evaluate_dictionary(
        _group_by_concept(dets), gts, match_radius=args.match_radius,
        subset_max=args.subset_max, mode=args.ap_mode,
        viewpoint=not args.no_viewpoint, threads=args.threads,
        provenance=provenance)
    out = _out_dir(args)
    (out / "report.txt").write_text(E.render_report(report), encoding="utf-8")
    (out / "ap_matrix.txt").write_text(
        "\n".join(E.ap_matrix_lines(report)) + "\n", encoding="utf-8")
    _write_provenance(out, config, {"detections": args.detections,
                                    "annotations": args.annotations})
    map_s = report.best_table.mean_ap
    print(f"evaluated {len(report.concept_ids)} concepts x "
          f"{len(report.parts)} parts; mAP "
          f"{'absent' if map_s is None else f'{map_s:.3f}'} -> {out}")
    return 0


def cmd_viz(args) -> int:
    dictionary = C.load_dictionary(args.dict)
    by_id = {c.concept_id: c for c in dictionary.concepts}
    if args.concept not in by_id:
        raise ValueError(f"concept {args.concept} not in dictionary "
                         f"({sorted(by_id)[:8]}...)")
    concept = by_id[args.concept]
    tensors = corpus_mod.load_corpus(args.corpus, layer=concept.layer.name)
    if not tensors:
        raise ValueError(f"no {concept.layer.name!r} tensors under {args.corpus}")
    config = RunConfig(subcommand="viz", layer=concept.layer.name,
                       seed=args.seed, corpus=args.corpus, out=args.out)
    config.validate()
    out = _out_dir(args)

    if args.mode == "best":
        refs = V.top_patches(concept, tensors, args.n)
    else:
        refs = V.random_of_top(concept, tensors, args.n, pool=args.pool,
                               seed=args.seed)
    with open(out / "patches.txt", "w", encoding="utf-8") as fh:
        fh.write("# rank image_id grid_i grid_j distance x y w h\n")
        for r in refs:
            x, y, w, h = r.rect
            fh.write(f"{r.rank} {r.image_id} {r.grid_pos[0]} {r.grid_pos[1]} "
                     f"{r.distance:.9g} {x} {y} {w} {h}\n")

    if args.images:
        store = V.directory_image_store(args.images)
        rf = concept.layer.rf_size
        V.save_ppm(V.montage(refs, store, rf), out / "montage.ppm")
        avg = V.average_intensity_map(refs, store, rf)
        V.save_ppm(avg.mean, out / "mean_patch.ppm")
        if avg.n_skipped:
            print(f"warning: {avg.n_skipped} patches skipped "
                  f"(missing source images)", file=sys.stderr)
    _write_provenance(out, config, {"concept": args.concept, "n": args.n,
                                    "mode": args.mode})
    print(f"wrote {len(refs)} patch refs -> {out}")
    return 0


def cmd_report(args) -> int:
    """Re-render the human-readable tables from a machine ap_matrix file."""
    singles: dict[tuple[int, str], float | None] = {}
    subsets: dict[int, tuple[tuple[str, ...], float | None]] = {}
    with open(args.ap_matrix, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 3:
                raise ValueError(
                    f"{args.ap_matrix}:{lineno}: expected 'concept part ap'")
            cid = int(fields[0])
            ap = None if fields[2] == "absent" else float(fields[2])
            if "+" in fields[1]:
                subsets[cid] = (tuple(fields[1].split("+")), ap)
            else:
                singles[(cid, fields[1])] = ap

    parts = tuple(sorted({p for _, p in singles}))
    cids = tuple(sorted({c for c, _ in singles}))
    out_lines = ["best concept per part (from stored AP matrix)",
                 f"{'part':<16} {'concept':>8} {'ap':>8}"]
    aps_for_map = []
    for p in parts:
        defined = [(singles[(c, p)], c) for c in cids
                   if singles.get((c, p)) is not None]
        if defined:
            ap, cid = max(defined, key=lambda t: (t[0], -t[1]))
            out_lines.append(f"{p:<16} {cid:>8} {ap:>8.3f}")
            aps_for_map.append(ap)
        else:
            out_lines.append(f"{p:<16} {'-':>8} {'absent':>8}")
    if aps_for_map:
        out_lines.append(f"mAP {np.mean(aps_for_map):.3f} over "
                         f"{len(aps_for_map)}/{len(parts)} defined parts")
    if subsets:
        out_lines.append("")
        out_lines.append("best subset per concept")
        out_lines.append(f"{'concept':>8} {'subset_ap':>10}  subset")
        for cid in sorted(subsets):
            sub, ap = subsets[cid]
            ap_s = "absent" if ap is None else f"{ap:.3f}"
            out_lines.append(f"{cid:>8} {ap_s:>10}  {'+'.join(sub)}")
    text = "\n".join(out_lines) + "\n"
    if args.out:
        out = _out_dir(args)
        (out / "tables.txt").write_text(text, encoding="utf-8")
        print(f"wrote {out / 'tables.txt'}")
    else:
        print(text, end="")
    return 0


_SELFCHECK_SCALES = {
    # images, grid, channels, concepts, placements, sigma, k
    "full": (200, 14, 512, 16, 16, 0.05, 64),
    "small": (100, 8, 512, 8, 8, 0.05, 32),
}


def cmd_selfcheck(args) -> int:
    """Built-in synthetic end-to-end: synth -> cluster -> merge -> detect ->
    eval, then check planted-concept recovery and per-part AP."""
    images, grid, channels, n_concepts, placements, sigma, k = \
        _SELFCHECK_SCALES[args.scale]
    t0 = time.time()
    spec = corpus_mod.SyntheticSpec(
        n_images=images, grid_w=grid, grid_h=grid, channels=channels,
        n_planted_concepts=n_concepts, placements_per_image=placements,
        noise_sigma=sigma)
    tensors, gts, planted = corpus_mod.generate_synthetic_corpus(spec, args.seed)
    layer = tensors[0].layer

    dictionary = C.learn_dictionary(tensors, layer, k=k, seed=args.seed,
                                    per_image=grid * grid,
                                    threads=args.threads)
    merged = C.merge_dictionary(dictionary, sim_threshold=0.95)

    cents = merged.centroid_matrix()
    cents_unit = cents / np.linalg.norm(cents, axis=1, keepdims=True)
    cos = planted.astype(np.float64) @ cents_unit.T
    best_cos = cos.max(axis=1)
    recovered = int((best_cos >= 0.99).sum())

    dets_by_id = D.detect_dictionary(merged, tensors, threads=args.threads)
    report = E.evaluate_dictionary(
        dets_by_id, gts, match_radius=E.DEFAULT_MATCH_RADIUS, subset_max=4,
        threads=args.threads,
        provenance={"subcommand": "selfcheck", "seed": args.seed,
                    "scale": args.scale, "k": k})

    out = Path(args.out) if args.out else Path(tempfile.mkdtemp(prefix="selfcheck-"))
    out.mkdir(parents=True, exist_ok=True)
    C.save_dictionary(dictionary, out / "dictionary.vcdc")
    C.save_dictionary(merged, out / "merged.vcdc")
    header = {"subcommand": "selfcheck", "seed": args.seed, "scale": args.scale}
    with open(out / "detections.txt", "w", encoding="utf-8") as fh:
        for key, value in header.items():
            fh.write(f"# {key}={value}\n")
        for cid in sorted(dets_by_id):
            for d in dets_by_id[cid]:
                fh.write(f"{d.image_id} {d.concept_id} "
                         f"{d.x:.9g} {d.y:.9g} {d.score:.9g}\n")
    (out / "report.txt").write_text(E.render_report(report), encoding="utf-8")
    (out / "ap_matrix.txt").write_text(
        "\n".join(E.ap_matrix_lines(report)) + "\n", encoding="utf-8")
    config = RunConfig(subcommand="selfcheck", layer=layer.name, k=k,
                       seed=args.seed, merge_threshold=0.95,
                       out=str(out), threads=args.threads)
    _write_provenance(out, config, {"scale": args.scale})

    part_aps = [(r.part_id, r.ap) for r in report.best_table.rows]
    min_ap = min(ap for _, ap in part_aps)
    dominance_ok = all(
        m_ap is None or s_ap is None or m_ap >= s_ap - 1e-12
        for _, _, s_ap, _, m_ap in report.histograms.per_concept)

    print(f"corpus: {images} images, {grid}x{grid}x{channels}, "
          f"{n_concepts} planted concepts, sigma={sigma}")
    print(f"dictionary: K={k} -> {len(dictionary)} concepts, "
          f"merged -> {len(merged)}")
    print(f"planted recovery at cosine >= 0.99: {recovered}/{n_concepts} "
          f"(min best cosine {best_cos.min():.4f})")
    print(f"best-concept AP per part: min {min_ap:.4f}, "
          f"mAP {report.best_table.mean_ap:.4f}")
    print(f"MultipleSP dominance (subset AP >= singleton AP): "
          f"{'ok' if dominance_ok else 'VIOLATED'}")
    print(f"artifacts -> {out}")
    print(f"elapsed {time.time() - t0:.1f}s")

    passed = (recovered >= n_concepts - 1 and min_ap >= 0.95 and dominance_ok)
    print(f"selfcheck: {'PASS' if passed else 'FAIL'}")
    return 0 if passed else 1


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conceptforge",
        description="Discover and evaluate visual concepts from CNN "
                    "feature-population corpora.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synth", help="generate a synthetic planted corpus")
    _add(p, "--out", required=True)
    _add(p, "--seed", type=int, default=1)
    _add(p, "--images", type=int, default=200)
    _add(p, "--grid-w", type=int, default=14)
    _add(p, "--grid-h", type=int, default=14)
    _add(p, "--channels", type=int, default=512)
    _add(p, "--concepts", type=int, default=16)
    _add(p, "--placements", type=int, default=8)
    _add(p, "--noise-sigma", type=float, default=0.05)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("cluster", help="learn a concept dictionary")
    _add(p, "--corpus", required=True)
    _add(p, "--out", required=True)
    _add(p, "--layer", default="pool4")
    _add(p, "--k", type=int, default=None)
    _add(p, "--seed", type=int, default=0)
    _add(p, "--per-image", type=int, default=100)
    _add(p, "--threads", type=int, default=1)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("merge", help="greedily merge similar concepts")
    _add(p, "--dict", required=True)
    _add(p, "--out", required=True)
    _add(p, "--threshold", type=float, default=0.95)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("detect", help="run detectors over a corpus")
    _add(p, "--corpus", required=True)
    _add(p, "--dict", required=True)
    _add(p, "--out", required=True)
    _add(p, "--layer", default=None)
    _add(p, "--nms-radius", type=float, default=None)
    _add(p, "--mode", choices=("vc", "sf"), default="vc")
    p.add_argument("--sf-l2", action="store_true",
                   help="l2-normalize responses in single-filter mode")
    _add(p, "--threads", type=int, default=1)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="match detections and compute AP tables")
    _add(p, "--detections", required=True)
    _add(p, "--annotations", required=True)
    _add(p, "--out", required=True)
    _add(p, "--merge-map", default=None)
    _add(p, "--match-radius", type=float, default=E.DEFAULT_MATCH_RADIUS)
    _add(p, "--subset-max", type=int, default=4)
    _add(p, "--ap-mode", choices=E.AP_MODES, default="continuous")
    p.add_argument("--no-viewpoint", action="store_true",
                   help="skip viewpoint-controlled evaluation")
    _add(p, "--threads", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("viz", help="rank patches and render montages")
    _add(p, "--corpus", required=True)
    _add(p, "--dict", required=True)
    _add(p, "--out", required=True)
    _add(p, "--concept", type=int, required=True)
    _add(p, "--n", type=int, default=6)
    _add(p, "--mode", choices=("best", "random"), default="best")
    _add(p, "--pool", type=int, default=500)
    _add(p, "--seed", type=int, default=0)
    _add(p, "--images", default=None,
         help="directory of {image_id}.ppm source images")
    p.set_defaults(func=cmd_viz)

    p = sub.add_parser("report", help="re-render tables from an AP matrix")
    _add(p, "--ap-matrix", required=True)
    _add(p, "--out", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("selfcheck",
                       help="synthetic end-to-end verification")
    _add(p, "--seed", type=int, default=1)
    _add(p, "--threads", type=int, default=1)
    _add(p, "--scale", choices=tuple(_SELFCHECK_SCALES), default="full")
    _add(p, "--out", default=None)
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
