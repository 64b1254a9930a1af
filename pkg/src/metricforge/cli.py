"""Command-line surface: synth, mine-stats, train, eval, project, pipeline.

One master seed drives every stage deterministically; identical invocations
produce byte-identical outputs. Reports print to stdout as aligned tables (or
CSV with ``--format csv``); file outputs are written via temp-and-rename so a
failing run never leaves partial files. Exit codes: 0 success, 1 validation or
usage error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import classifiers as clf
from . import figures
from .config import RunConfig, build_run_config
from .data import read_embeddings, split_by_video, write_embeddings
from .errors import DataError, MetricForgeError
from .metrics import MetricsReport, full_report, report_csv, report_table, roc_curve, write_roc_csv
from .mining import mining_stats
from .projection import export_scatter, pca2
from .synth import generate
from .train import fit, load_head, save_head, transform, write_train_report_csv
from .util import atomic_write, derive_seed, fmt_float

# Stage indices for sub-seed derivation from the master seed.
_STAGE_SPLIT = 1
_STAGE_TRAIN = 2
_STAGE_CLASSIFIER = 3
_STAGE_BAGS = 4
_STAGE_MINING = 5
_STAGE_BAG_MODELS = 100


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="key = value config file")
    p.add_argument("--seed", type=int, help="master seed (fallback: METRICFORGE_SEED)")
    p.add_argument("--margin", type=float, help="triplet margin")
    p.add_argument("--out-dim", type=int, dest="out_dim", help="projection head output dimension")
    p.add_argument("--epochs", type=int, help="projection head training epochs")
    p.add_argument("--batch-size", type=int, dest="batch_size", help="triplet training batch size")
    p.add_argument("--classifier", choices=["sgd", "rf", "centroid"], help="frame classifier")
    p.add_argument("--bags", type=int, help="bagging ensemble size (odd)")
    p.add_argument(
        "--max-frames", type=int, dest="max_frames", help="frames per video used in aggregation"
    )
    p.add_argument("--mining", choices=["semihard", "random"], help="triplet mining strategy")
    p.add_argument("--format", choices=["table", "csv"], default="table", help="stdout format")
    p.add_argument("--jobs", type=int, help="worker pool size for bag training")


_OVERRIDE_KEYS = [
    "seed",
    "margin",
    "out_dim",
    "epochs",
    "batch_size",
    "classifier",
    "bags",
    "max_frames",
    "mining",
    "jobs",
    "out_dir",
]


def _run_config(args) -> RunConfig:
    overrides = {k: getattr(args, k, None) for k in _OVERRIDE_KEYS}
    return build_run_config(args.config, overrides)


def _load_optional_head(path):
    return load_head(path) if path else None


def _project(head, X: np.ndarray) -> np.ndarray:
    return transform(head, X) if head is not None else np.asarray(X, dtype=np.float64)


def _video_true_labels(dataset, indices) -> tuple[np.ndarray, np.ndarray]:
    """Per-video label over a record subset; videos must be label-consistent."""
    vids = dataset.video_ids[indices]
    labs = dataset.labels[indices]
    uniq = np.unique(vids)
    out = np.empty(uniq.size, dtype=np.int64)
    for i, v in enumerate(uniq):
        vl = labs[vids == v]
        if vl.min() != vl.max():
            raise DataError(f"video {v} carries both labels; cannot score per video")
        out[i] = vl[0]
    return uniq, out


def _fit_frame_classifier(cfg: RunConfig, X: np.ndarray, y: np.ndarray, seed: int):
    if cfg.classifier == "sgd":
        return clf.fit_linear(
            X, y, epochs=cfg.linear_epochs, lr=cfg.linear_lr, seed=seed, batch_size=cfg.linear_batch_size
        )
    if cfg.classifier == "rf":
        return clf.fit_forest(X, y, cfg.forest_params(), seed=seed)
    return clf.fit_centroid(X, y)


def _evaluate(dataset, split, head, cfg: RunConfig):
    """Train per config on the train side, score the held-out side.

    Returns (frame_report, video_report, extras) where extras carries scores
    and curves for export.
    """
    Xtr = _project(head, dataset.vectors[split.train_indices])
    ytr = dataset.labels[split.train_indices].astype(np.int64)
    Xte = _project(head, dataset.vectors[split.test_indices])
    yte = dataset.labels[split.test_indices].astype(np.int64)

    if cfg.bags > 1:
        bags = clf.make_bags(dataset, split.train_indices, cfg.bags, derive_seed(cfg.seed, _STAGE_BAGS))
        pos_of = {int(r): i for i, r in enumerate(split.train_indices)}

        def fit_one(i, bag):
            rows = np.fromiter((pos_of[int(r)] for r in bag), dtype=np.int64, count=len(bag))
            return _fit_frame_classifier(
                cfg, Xtr[rows], ytr[rows], derive_seed(cfg.seed, _STAGE_BAG_MODELS + i)
            )

        models = clf.fit_bag_models(bags, fit_one, cfg.jobs)
        frame_scores = clf.ensemble_scores(models, Xte)
        frame_labels = clf.ensemble_predict(models, Xte)
    else:
        model = _fit_frame_classifier(cfg, Xtr, ytr, derive_seed(cfg.seed, _STAGE_CLASSIFIER))
        frame_scores = model.predict_proba(Xte)
        frame_labels = (frame_scores >= 0.5).astype(np.int64)

    frame_report = full_report(frame_scores, frame_labels, yte)

    vids = dataset.video_ids[split.test_indices]
    fids = dataset.frame_ids[split.test_indices]
    agg_vids, video_labels, video_scores = clf.aggregate_video(
        vids, fids, frame_scores, rule=cfg.aggregate_rule, max_frames=cfg.max_frames
    )
    true_vids, video_true = _video_true_labels(dataset, split.test_indices)
    assert np.array_equal(agg_vids, true_vids)
    video_report = full_report(video_scores, video_labels, video_true)

    extras = {
        "frame_scores": frame_scores,
        "frame_labels": frame_labels,
        "frame_true": yte,
        "video_scores": video_scores,
        "video_true": video_true,
        "test_video_ids": vids,
        "test_frame_ids": fids,
    }
    return frame_report, video_report, extras


def _print_reports(args, named_reports: list[tuple[str, MetricsReport]]) -> None:
    text = report_csv(named_reports) if args.format == "csv" else report_table(named_reports)
    sys.stdout.write(text)


# ---------------------------------------------------------------------------
# Subcommands.

def cmd_synth(args) -> int:
    cfg = _run_config(args)
    dataset = generate(cfg.synth_config())
    write_embeddings(dataset, args.out)
    print(f"wrote {len(dataset)} records ({cfg.synth_config().n_videos} videos, dim {dataset.dim}) to {args.out}")
    return 0


def cmd_mine_stats(args) -> int:
    cfg = _run_config(args)
    head = _load_optional_head(args.head)
    dataset = read_embeddings(args.embeddings)
    X = _project(head, dataset.vectors)
    stats = mining_stats(
        X,
        dataset.labels.astype(np.int64),
        cfg.margin,
        sample_cap=cfg.sample_cap,
        seed=derive_seed(cfg.seed, _STAGE_MINING),
    )
    if args.format == "csv":
        print("easy,semihard,hard,total")
        print(f"{stats.easy_count},{stats.semihard_count},{stats.hard_count},{stats.total}")
    else:
        print(f"easy      {stats.easy_count}")
        print(f"semihard  {stats.semihard_count}")
        print(f"hard      {stats.hard_count}")
        print(f"total     {stats.total}")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    dataset = read_embeddings(args.embeddings)
    head, report = fit(dataset, None, cfg.train_config(derive_seed(cfg.seed, _STAGE_TRAIN)))
    save_head(head, args.out_head)
    write_train_report_csv(report, args.out_report)
    figures.train_curves_png(report, Path(args.out_report).with_suffix(".png"))
    if report.mean_loss:
        print(
            f"trained {cfg.epochs} epochs: loss {fmt_float(report.mean_loss[0])} -> "
            f"{fmt_float(report.mean_loss[-1])}, final active fraction "
            f"{fmt_float(report.active_fraction[-1])}"
        )
    else:
        print("trained 0 epochs: head left at its seeded initialization")
    return 0


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    head = _load_optional_head(args.head)
    dataset = read_embeddings(args.embeddings)
    split = split_by_video(dataset, cfg.test_fraction, derive_seed(cfg.seed, _STAGE_SPLIT))
    frame_report, video_report, extras = _evaluate(dataset, split, head, cfg)
    mode = "triplet" if head is not None else "raw"
    named = [(f"{mode}-frame", frame_report), (f"{mode}-video", video_report)]
    _print_reports(args, named)

    if cfg.out_dir:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with atomic_write(out / "metrics.csv") as fh:
            fh.write(report_csv(named))
        fcurve = roc_curve(extras["frame_scores"], extras["frame_true"])
        vcurve = roc_curve(extras["video_scores"], extras["video_true"])
        write_roc_csv(fcurve, out / f"roc_{mode}_frame.csv")
        write_roc_csv(vcurve, out / f"roc_{mode}_video.csv")
        figures.roc_png([(f"{mode} frame", fcurve), (f"{mode} video", vcurve)], out / "roc.png")
        clf.write_predictions_csv(
            out / "predictions.csv",
            extras["test_video_ids"],
            extras["test_frame_ids"],
            extras["frame_scores"],
            extras["frame_labels"],
        )
    return 0


def cmd_project(args) -> int:
    cfg = _run_config(args)
    head = _load_optional_head(args.head)
    dataset = read_embeddings(args.embeddings)
    labels = dataset.labels.astype(np.int64)
    out_csv = Path(args.out_csv)

    raw_proj = pca2(dataset.vectors.astype(np.float64), labels)
    if head is None:
        export_scatter(raw_proj, out_csv)
        figures.scatter_png([("raw embeddings", raw_proj)], out_csv.with_suffix(".png"))
        print(f"wrote {out_csv} (explained variance {raw_proj.explained_fraction:.1%})")
    else:
        head_proj = pca2(transform(head, dataset.vectors), labels)
        raw_csv = out_csv.with_name(out_csv.stem + "_raw" + out_csv.suffix)
        export_scatter(head_proj, out_csv)
        export_scatter(raw_proj, raw_csv)
        figures.scatter_png(
            [("raw embeddings", raw_proj), ("after projection head", head_proj)],
            out_csv.with_suffix(".png"),
        )
        print(
            f"wrote {out_csv} and {raw_csv} "
            f"(explained variance {head_proj.explained_fraction:.1%} / {raw_proj.explained_fraction:.1%})"
        )
    return 0


def cmd_pipeline(args) -> int:
    cfg = _run_config(args)
    if not cfg.out_dir:
        raise MetricForgeError("pipeline requires out_dir (config key or --out-dir)")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    dataset = generate(cfg.synth_config())
    write_embeddings(dataset, out / "data.emb1")

    split = split_by_video(dataset, cfg.test_fraction, derive_seed(cfg.seed, _STAGE_SPLIT))
    head, report = fit(dataset, split.train_indices, cfg.train_config(derive_seed(cfg.seed, _STAGE_TRAIN)))
    save_head(head, out / "head.bin")
    write_train_report_csv(report, out / "train_report.csv")
    figures.train_curves_png(report, out / "train_report.png")

    raw_frame, raw_video, raw_extras = _evaluate(dataset, split, None, cfg)
    tri_frame, tri_video, tri_extras = _evaluate(dataset, split, head, cfg)
    named = [
        ("raw-frame", raw_frame),
        ("raw-video", raw_video),
        ("triplet-frame", tri_frame),
        ("triplet-video", tri_video),
    ]
    with atomic_write(out / "metrics.csv") as fh:
        fh.write(report_csv(named))
    for mode, extras in (("raw", raw_extras), ("triplet", tri_extras)):
        write_roc_csv(roc_curve(extras["frame_scores"], extras["frame_true"]), out / f"roc_{mode}_frame.csv")
        write_roc_csv(roc_curve(extras["video_scores"], extras["video_true"]), out / f"roc_{mode}_video.csv")
        clf.write_predictions_csv(
            out / f"predictions_{mode}.csv",
            extras["test_video_ids"],
            extras["test_frame_ids"],
            extras["frame_scores"],
            extras["frame_labels"],
        )
    figures.roc_png(
        [
            ("raw", roc_curve(raw_extras["video_scores"], raw_extras["video_true"])),
            ("triplet", roc_curve(tri_extras["video_scores"], tri_extras["video_true"])),
        ],
        out / "roc_video.png",
    )
    figures.roc_png(
        [
            ("raw", roc_curve(raw_extras["frame_scores"], raw_extras["frame_true"])),
            ("triplet", roc_curve(tri_extras["frame_scores"], tri_extras["frame_true"])),
        ],
        out / "roc_frame.png",
    )

    labels = dataset.labels.astype(np.int64)
    raw_proj = pca2(dataset.vectors.astype(np.float64), labels)
    head_proj = pca2(transform(head, dataset.vectors), labels)
    export_scatter(raw_proj, out / "scatter_raw.csv")
    export_scatter(head_proj, out / "scatter_head.csv")
    figures.scatter_png(
        [("raw embeddings", raw_proj), ("after projection head", head_proj)], out / "scatter.png"
    )

    _print_reports(args, named)
    gain = tri_video.auc - raw_video.auc
    print(f"video AUC gain (triplet - raw): {fmt_float(gain)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="metricforge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic embedding dataset")
    p.add_argument("out", help="output EMB1 path")
    _add_common_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("mine-stats", help="triplet category counts for a dataset")
    p.add_argument("embeddings", help="EMB1 path")
    p.add_argument("--head", metavar="PATH", help="project through a trained head first")
    _add_common_flags(p)
    p.set_defaults(func=cmd_mine_stats)

    p = sub.add_parser("train", help="train a projection head with triplet loss")
    p.add_argument("embeddings", help="EMB1 path")
    p.add_argument("out_head", help="output HEAD path")
    p.add_argument("out_report", help="output per-epoch report CSV path")
    _add_common_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="train a classifier and report frame/video metrics")
    p.add_argument("embeddings", help="EMB1 path")
    p.add_argument("--head", metavar="PATH", help="score in the head's projected space")
    p.add_argument("--out-dir", dest="out_dir", metavar="DIR", help="write CSVs and figures here")
    _add_common_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("project", help="export a 2D PCA scatter of the embeddings")
    p.add_argument("embeddings", help="EMB1 path")
    p.add_argument("out_csv", help="output scatter CSV path")
    p.add_argument("--head", metavar="PATH", help="also export the head-projected space")
    _add_common_flags(p)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("pipeline", help="synth + split + train + eval + project in one run")
    p.add_argument("--out-dir", dest="out_dir", metavar="DIR", help="output directory")
    _add_common_flags(p)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (MetricForgeError, ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))
