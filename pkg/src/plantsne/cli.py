"""Command-line driver for the segmentation pipeline.

Subcommands cover the whole chain: synthesize or ingest clouds, embed them,
extract superpoints, train and apply the Leaf/Stem classifier, split leaves
into instances, evaluate predictions, and sweep parameters.  Data goes to
files or standard output; diagnostics go to standard error.  Every command
is deterministic for a fixed (inputs, config, seed) triple.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import tsne
from .cluster import ClusterParams, euclidean_cluster
from .config import FORMATS, PipelineConfig, load_config
from .core import (LEAF, PointCloud, n_workers, read_cloud,
                   voxel_downsample, write_points)
from .errors import ConfigError, InputError, PlantSneError
from .metrics import format_report, sbd, semantic_report
from .segment import (InstanceParams, classify, fit_svm, instance_segment,
                      load_model, majority_labels, point_features, save_model,
                      superpoint_features)
from .superpoint import extract_superpoints, lift_superpoints
from .svgplot import write_scatter
from .synth import PlantSpec, generate

log = logging.getLogger(__name__)

SWEEP_PERPLEXITIES = (20.0, 30.0, 40.0, 50.0)
SWEEP_D_E = (1.0, 2.0, 3.0)
INSTANCE_SWEEP_PERPLEXITIES = (20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0)


# ---------------------------------------------------------------------------
# Configuration plumbing

def _pipeline_config(args) -> PipelineConfig:
    """File config (or defaults) with command-line overrides applied on top."""
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if getattr(args, "format", None):
        cfg = cfg.replace(fmt=args.format)
    tsne_kw = {}
    for flag, key in (("seed", "seed"), ("perplexity", "perplexity"),
                      ("n_iter", "n_iter")):
        value = getattr(args, flag, None)
        if value is not None:
            tsne_kw[key] = value
    if tsne_kw:
        cfg = cfg.replace(tsne=cfg.tsne.replace(**tsne_kw))
    if getattr(args, "d_e", None) is not None:
        c = cfg.cluster
        # r_E re-derives from the new d_E unless the file pinned it.
        cfg = cfg.replace(cluster=ClusterParams(
            d_E=args.d_e, T_E=c.T_E, s_E=c.s_E, T_s=c.T_s,
            laplacian=c.laplacian))
    return cfg


def _read(path, cfg: PipelineConfig, mapped: bool = True) -> PointCloud:
    return read_cloud(path, cfg.fmt, cfg.class_map if mapped else None)


def _raw_semantic(sem: np.ndarray, cfg: PipelineConfig) -> np.ndarray:
    """Internal class ids back to the dataset's raw label values.

    Keeps CLI outputs readable with the same class map they were read with.
    When several raw values map to one class, the smallest wins.
    """
    inverse: dict[int, int] = {}
    for raw, cls in sorted(cfg.class_map.items(), reverse=True):
        inverse[cls] = raw
    missing = set(np.unique(sem)) - set(inverse)
    if missing:
        raise ConfigError(f"class_map has no raw value for class ids {sorted(missing)}")
    lut = np.zeros(max(inverse) + 1, dtype=np.int64)
    for cls, raw in inverse.items():
        lut[cls] = raw
    return lut[sem]


def _write_labeled(path, cloud: PointCloud, cfg: PipelineConfig) -> None:
    cols = []
    if cloud.semantic_labels is not None:
        cols.append(_raw_semantic(cloud.semantic_labels, cfg))
        if cloud.instance_labels is not None:
            cols.append(cloud.instance_labels)
    write_points(path, cloud.points, *cols)


# ---------------------------------------------------------------------------
# Shared pipeline stages

def _superpoint_ids(cloud: PointCloud, cfg: PipelineConfig) -> tuple:
    """Downsample, embed, extract superpoints, lift ids to full resolution."""
    low, _ = voxel_downsample(cloud, cfg.voxel)
    emb = tsne.embed(low.points, cfg.tsne)
    sp = extract_superpoints(emb.y, cfg.cluster)
    ids = lift_superpoints(sp, low, cloud)
    return emb, sp, ids


def _superpoint_rows(cloud: PointCloud, cfg: PipelineConfig):
    """Per-superpoint feature rows and (when labeled) majority classes."""
    _, sp, ids = _superpoint_ids(cloud, cfg)
    feats = superpoint_features(point_features(cloud.points, cfg.radii), ids)
    labels = None
    if cloud.semantic_labels is not None:
        labels = majority_labels(cloud.semantic_labels, ids)
    return feats, labels, ids


def _map_files(fn, items):
    """Apply fn over items, preserving order; parallel when workers > 1."""
    workers = n_workers()
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Commands

def cmd_embed(args) -> int:
    cfg = _pipeline_config(args)
    cloud = _read(args.input, cfg)
    low, _ = voxel_downsample(cloud, cfg.voxel)
    log.info("%s: %d points, %d after voxel filter", args.input, len(cloud), len(low))
    emb = tsne.embed(low.points, cfg.tsne)
    map_ids = euclidean_cluster(emb.y, cfg.cluster.d_E)
    n_clusters = int(map_ids.max()) + 1

    prefix = args.out_prefix
    np.savetxt(f"{prefix}_embedding.txt", emb.y, fmt="%.17g")
    np.savetxt(f"{prefix}_kl.txt", emb.kl_history, fmt="%.17g")
    write_scatter(f"{prefix}_plot.svg", emb.y, map_ids, title=str(args.input))
    summary = format_report({
        "points": len(cloud),
        "embedded_points": len(low),
        "map_clusters": n_clusters,
        "final_kl": float(emb.kl_history[-1]),
    })
    with open(f"{prefix}_summary.txt", "w") as fh:
        fh.write(summary)
    sys.stdout.write(summary)
    return 0


def cmd_superpoints(args) -> int:
    cfg = _pipeline_config(args)
    cloud = _read(args.input, cfg)
    _, sp, ids = _superpoint_ids(cloud, cfg)
    write_points(args.out, cloud.points, ids)
    sys.stdout.write(format_report({
        "superpoints": int(ids.max()) + 1,
        "exhausted": int(sp.exhausted),
    }))
    return 0


def cmd_train(args) -> int:
    cfg = _pipeline_config(args)
    clouds = [_read(path, cfg) for path in args.inputs]
    for path, cloud in zip(args.inputs, clouds):
        if cloud.semantic_labels is None:
            raise InputError(f"{path}: training requires semantic labels")

    rows = _map_files(lambda c: _superpoint_rows(c, cfg), clouds)
    x = np.vstack([feats for feats, _, _ in rows])
    y = np.concatenate([labels for _, labels, _ in rows])
    log.info("training on %d superpoints from %d files", len(x), len(rows))
    model = fit_svm(x, y, C=cfg.svm_c)
    save_model(args.out, model, cfg.radii)

    mious = []
    for path, cloud, (feats, _, ids) in zip(args.inputs, clouds, rows):
        rep = semantic_report(classify(model, feats)[ids], cloud.semantic_labels)
        mious.append(rep.miou)
        sys.stdout.write(format_report({"file": path, "miou": rep.miou}))
    sys.stdout.write(format_report({"train_miou": float(np.mean(mious))}))
    return 0


def cmd_segment(args) -> int:
    cfg = _pipeline_config(args)
    model, radii = load_model(args.model)
    cfg = cfg.replace(radii=radii)
    cloud = _read(args.input, cfg)
    feats, _, ids = _superpoint_rows(cloud, cfg)
    pred = classify(model, feats)[ids]
    _write_labeled(args.out, PointCloud(cloud.points, pred), cfg)
    if cloud.semantic_labels is None:
        log.warning("%s has no ground-truth labels; metrics skipped", args.input)
        return 0
    rep = semantic_report(pred, cloud.semantic_labels)
    sys.stdout.write(format_report({
        "iou_leaf": rep.iou_leaf,
        "iou_stem": rep.iou_stem,
        "miou": rep.miou,
    }))
    return 0


def _semantic_for_instance(args, cloud: PointCloud, cfg: PipelineConfig) -> np.ndarray:
    if args.use_gt_semantic:
        if cloud.semantic_labels is None:
            raise InputError(f"{args.input}: no ground-truth semantic labels")
        return cloud.semantic_labels
    model, radii = load_model(args.model)
    feats, _, ids = _superpoint_rows(cloud, cfg.replace(radii=radii))
    return classify(model, feats)[ids]


def cmd_instance(args) -> int:
    cfg = _pipeline_config(args)
    cloud = _read(args.input, cfg)
    sem = _semantic_for_instance(args, cloud, cfg)
    leaf_mask = sem == LEAF
    if not leaf_mask.any():
        raise InputError(f"{args.input}: no points classified as Leaf")
    leaf = PointCloud(cloud.points[leaf_mask], sem[leaf_mask],
                      None if cloud.instance_labels is None
                      else cloud.instance_labels[leaf_mask])
    have_gt = leaf.instance_labels is not None

    if args.sweep_perplexity:
        if not have_gt:
            raise InputError(f"{args.input}: perplexity sweep needs "
                             "ground-truth instance labels")
        for perp in INSTANCE_SWEEP_PERPLEXITIES:
            params = InstanceParams(v=cfg.instance.v, perplexity=perp,
                                    d_E=cfg.instance.d_E,
                                    min_points=cfg.instance.min_points)
            out = instance_segment(leaf, params, cfg.tsne)
            sys.stdout.write(format_report({
                "perplexity": perp,
                "sbd": sbd(out.instance_labels, leaf.instance_labels),
            }))
        return 0

    out = instance_segment(leaf, cfg.instance, cfg.tsne)
    # Full-resolution output: stems keep instance 0, leaf clusters get 1..K.
    inst = np.zeros(len(cloud), dtype=np.int64)
    inst[leaf_mask] = out.instance_labels + 1
    _write_labeled(args.out, PointCloud(cloud.points, sem, inst), cfg)
    report = {"instances": int(out.instance_labels.max()) + 1}
    if have_gt:
        report["sbd"] = sbd(out.instance_labels, leaf.instance_labels)
    else:
        log.warning("%s has no ground-truth instances; SBD skipped", args.input)
    sys.stdout.write(format_report(report))
    return 0


def cmd_eval(args) -> int:
    cfg = _pipeline_config(args)
    pred = _read(args.pred, cfg)
    gt = _read(args.gt, cfg)
    if len(pred) != len(gt):
        raise InputError(f"{args.pred} and {args.gt} differ in point count "
                         f"({len(pred)} vs {len(gt)})")
    report = {}
    if pred.semantic_labels is not None and gt.semantic_labels is not None:
        rep = semantic_report(pred.semantic_labels, gt.semantic_labels)
        report.update(iou_leaf=rep.iou_leaf, iou_stem=rep.iou_stem, miou=rep.miou)
    if pred.instance_labels is not None and gt.instance_labels is not None:
        report["sbd"] = sbd(pred.instance_labels, gt.instance_labels)
    if not report:
        raise InputError("neither semantic nor instance labels present in both files")
    sys.stdout.write(format_report(report))
    return 0


def cmd_synth(args) -> int:
    cfg = _pipeline_config(args)
    spec = PlantSpec(n_leaves=args.n_leaves,
                     leaf_size_range=tuple(args.leaf_size),
                     stem_height=args.stem_height,
                     petiole_length_range=tuple(args.petiole_length),
                     point_spacing=args.spacing,
                     noise_std=args.noise_std,
                     bow=args.bow,
                     seed=args.seed if args.seed is not None else 0)
    cloud = generate(spec)
    _write_labeled(args.out, cloud, cfg)
    sys.stdout.write(format_report({"points": len(cloud), "leaves": spec.n_leaves}))
    return 0


def cmd_sweep(args) -> int:
    cfg = _pipeline_config(args)
    if len(args.inputs) < 2:
        raise InputError("sweep needs at least 2 labeled input files")
    clouds = [_read(path, cfg) for path in args.inputs]
    for path, cloud in zip(args.inputs, clouds):
        if cloud.semantic_labels is None:
            raise InputError(f"{path}: sweep requires semantic labels")

    lows = [voxel_downsample(c, cfg.voxel)[0] for c in clouds]
    feats_full = _map_files(lambda c: point_features(c.points, cfg.radii), clouds)

    def embed_one(low, perp):
        return tsne.embed(low.points, cfg.tsne.replace(perplexity=perp))

    n = len(clouds)
    folds = [list(range(i, n, min(5, n))) for i in range(min(5, n))]
    best = None
    for perp in SWEEP_PERPLEXITIES:
        embeddings = _map_files(lambda low: embed_one(low, perp), lows)
        for d_e in SWEEP_D_E:
            params = ClusterParams(d_E=d_e, T_E=cfg.cluster.T_E,
                                   s_E=cfg.cluster.s_E, T_s=cfg.cluster.T_s,
                                   laplacian=cfg.cluster.laplacian)
            per_file = []
            for cloud, low, emb, pf in zip(clouds, lows, embeddings, feats_full):
                sp = extract_superpoints(emb.y, params)
                ids = lift_superpoints(sp, low, cloud)
                per_file.append((superpoint_features(pf, ids),
                                 majority_labels(cloud.semantic_labels, ids),
                                 ids))
            scores = []
            for fold in folds:
                train_idx = [i for i in range(n) if i not in fold]
                x = np.vstack([per_file[i][0] for i in train_idx])
                y = np.concatenate([per_file[i][1] for i in train_idx])
                model = fit_svm(x, y, C=cfg.svm_c)
                for i in fold:
                    feats, _, ids = per_file[i]
                    rep = semantic_report(classify(model, feats)[ids],
                                          clouds[i].semantic_labels)
                    scores.append(rep.miou)
            mean_miou = float(np.mean(scores))
            sys.stdout.write(format_report({
                "perplexity": perp, "d_E": d_e, "mean_miou": mean_miou,
            }))
            if best is None or mean_miou > best[0]:
                best = (mean_miou, perp, d_e, per_file)

    _, perp, d_e, per_file = best
    x = np.vstack([f for f, _, _ in per_file])
    y = np.concatenate([lab for _, lab, _ in per_file])
    model = fit_svm(x, y, C=cfg.svm_c)
    save_model(args.out, model, cfg.radii)
    sys.stdout.write(format_report({
        "chosen_perplexity": perp, "chosen_d_E": d_e, "model": args.out,
    }))
    return 0


# ---------------------------------------------------------------------------
# Parser

def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {value}")
    return value


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plantsne",
        description="Plant point-cloud organ segmentation via 2D embeddings.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file; flags override it")
    common.add_argument("--format", choices=FORMATS, help="input file format")
    common.add_argument("--seed", type=int, help="embedding seed override")
    common.add_argument("--perplexity", type=float, help="embedding perplexity override")
    common.add_argument("--n-iter", type=int, help="embedding iteration override")
    common.add_argument("--d-e", type=float, help="map clustering distance override")
    common.add_argument("--verbose", action="store_true", help="debug diagnostics")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed", parents=[common],
                       help="embed a cloud to 2D; write coordinates, KL trace, SVG")
    p.add_argument("input")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("superpoints", parents=[common],
                       help="extract superpoints and write per-point ids")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_superpoints)

    p = sub.add_parser("train", parents=[common],
                       help="fit the Leaf/Stem classifier on labeled clouds")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True, help="model file to write")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment", parents=[common],
                       help="classify a cloud with a trained model")
    p.add_argument("input")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("instance", parents=[common],
                       help="split Leaf points into leaf instances")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--use-gt-semantic", action="store_true",
                        help="take Leaf points from ground-truth labels")
    source.add_argument("--model", help="predict semantics with this model first")
    p.add_argument("--sweep-perplexity", action="store_true",
                   help="report SBD for perplexities 20..80 instead of writing output")
    p.set_defaults(func=cmd_instance)

    p = sub.add_parser("eval", parents=[common],
                       help="compare a predicted labeled cloud against ground truth")
    p.add_argument("pred")
    p.add_argument("gt")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", parents=[common],
                       help="generate a labeled synthetic plant")
    p.add_argument("--out", required=True)
    p.add_argument("--n-leaves", type=_nonneg_int, default=5)
    p.add_argument("--leaf-size", type=float, nargs=2, default=(14.0, 20.0),
                   metavar=("LO", "HI"))
    p.add_argument("--stem-height", type=float, default=80.0)
    p.add_argument("--petiole-length", type=float, nargs=2, default=(6.0, 10.0),
                   metavar=("LO", "HI"))
    p.add_argument("--spacing", type=float, default=1.0)
    p.add_argument("--noise-std", type=float, default=0.05)
    p.add_argument("--bow", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sweep", parents=[common],
                       help="grid-search perplexity and d_E by cross-validated mIoU")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True, help="model file for the best setting")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PlantSneError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
