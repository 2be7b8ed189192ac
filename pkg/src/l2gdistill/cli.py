"""Command-line entry point: ``gen``, ``train``, ``eval`` and ``cluster``.

Every subcommand takes an optional ``--config`` INI file and repeated
``--set section.key=value`` overrides.  The fully resolved configuration
is echoed into every artifact: as a ``#`` comment line heading each CSV, a
``config`` key in JSON records, the checkpoint header and PNG metadata.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
abort.
"""

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import plotting
from .checkpoint import load_checkpoint, save_checkpoint
from .clustering import DbscanParams, dbscan, labeling_stats
from .config import load_config
from .encoder import embed
from .errors import DataError, DimensionError, L2GError
from .evaluation import evaluate, make_split, random_baseline
from .numerics import seeded_rng
from .synthdata import generate, load_dataset, save_dataset
from .trainer import REPORT_COLUMNS, fit

log = logging.getLogger("l2gdistill")

EVAL_COLUMNS = ("checkpoint", "dataset", "seed", "mAP", "cmc@1", "cmc@5", "cmc@10",
                "random_mAP", "random_std", "skipped_queries")
CLUSTER_COLUMNS = ("eps", "min_samples", "num_clusters", "num_outliers", "precision", "recall", "f1")


def fmt(value):
    """Six significant digits for floats, plain text otherwise."""
    if isinstance(value, (float, np.floating)):
        return "nan" if math.isnan(value) else f"{float(value):.6g}"
    return str(value)


def _config_line(resolved):
    return "# config " + json.dumps(resolved, sort_keys=True)


def _write_csv(path, columns, rows, resolved, append=False):
    path = Path(path)
    fresh = not (append and path.exists())
    with open(path, "w" if fresh else "a", newline="") as fh:
        if fresh:
            fh.write(_config_line(resolved) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        if fresh:
            writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def _write_json(path, record):
    Path(path).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def _png_meta(resolved):
    return {"Description": json.dumps(resolved, sort_keys=True)}


def _load_run_config(args, extra=()):
    overrides = list(args.set or []) + list(extra)
    return load_config(args.config, overrides)


def _outdir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _check_dims(state, data):
    d_ckpt = state.teacher.dims[0]
    d_data = data.raw.shape[1]
    if d_ckpt != d_data:
        raise DimensionError(f"checkpoint expects {d_ckpt}-dimensional inputs, dataset has {d_data}")


# -- subcommands -------------------------------------------------------------

def cmd_gen(args):
    extra = []
    if args.preset:
        extra.append(("generator", "preset", args.preset))
    if args.seed is not None:
        extra.append(("generator", "seed", args.seed))
    cfg = _load_run_config(args, extra)
    ds = generate(cfg.generator)
    resolved = cfg.resolved()
    save_dataset(ds, args.out, config=resolved["generator"])
    st = ds.stats
    print(f"wrote {len(ds)} instances to {args.out}")
    print(f"cross-camera same-identity mean distance: {fmt(st['cross_camera_intra_id'])}")
    print(f"same-camera different-identity mean distance: {fmt(st['same_camera_inter_id'])}")
    print(f"distance-order check (hard): {'yes' if st['hard'] else 'no'}")
    return 0


def cmd_train(args):
    extra = []
    for flag, key in (("no_local", "local"), ("no_distill", "distill"), ("no_mining", "mining")):
        if getattr(args, flag):
            extra.append(("train", key, "false"))
    if args.epochs is not None:
        extra.append(("train", "epochs", args.epochs))
    if args.seed is not None:
        extra.append(("train", "seed", args.seed))
    if args.preset:
        extra.append(("train", "preset", args.preset))
    cfg = _load_run_config(args, extra)
    resolved = cfg.resolved()
    data = load_dataset(args.data)
    out = _outdir(args.out)
    tc = cfg.train

    def monitor(labeling):
        return labeling_stats(labeling, data.true_id)

    def on_checkpoint(state, partial):
        name = f"checkpoint_epoch{state.epoch:03d}.ckpt" if partial else "checkpoint.ckpt"
        save_checkpoint(out / name, state, config=resolved, seed=tc.seed, partial=partial)

    result = fit(data.unlabeled(), tc, monitor=monitor, on_checkpoint=on_checkpoint)
    _write_csv(out / "report.csv", REPORT_COLUMNS, [r.row() for r in result.reports], resolved)
    if result.reports:
        plotting.plot_training(result.reports, out / "training.png", metadata=_png_meta(resolved))
    lab = result.labeling
    final = labeling_stats(lab, data.true_id)
    print(f"epochs: {tc.epochs}  clustering passes: {result.clustering_passes}")
    if result.reports:
        last = result.reports[-1]
        print("final epoch: " + "  ".join(f"{c}={fmt(v)}" for c, v in zip(REPORT_COLUMNS, last.row())))
    print(f"final labeling: clusters={lab.num_clusters} outliers={lab.num_outliers} "
          f"pair_f1={fmt(final['f1'])}")
    print(f"checkpoint: {out / 'checkpoint.ckpt'}")
    return 0


def cmd_eval(args):
    extra = [("eval", "seed", args.seed)] if args.seed is not None else []
    cfg = _load_run_config(args, extra)
    ck = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data)
    _check_dims(ck.state, data)
    split = make_split(data, seeded_rng(cfg.eval.seed))
    report = evaluate(split, ck.state.teacher, data.raw)
    base_mean, base_std = random_baseline(split, cfg.eval.n_perm, seeded_rng(cfg.eval.seed + 1))
    resolved = {**cfg.resolved(), "checkpoint_config": ck.config}
    out = _outdir(args.out or Path(args.checkpoint).parent)
    record = {
        "checkpoint": str(args.checkpoint),
        "dataset": str(args.data),
        "seed": cfg.eval.seed,
        **{k: float(fmt(v)) for k, v in report.as_dict().items() if k != "skipped_queries"},
        "skipped_queries": report.skipped_queries,
        "random_mAP": float(fmt(base_mean)),
        "random_std": float(fmt(base_std)),
        "format_version": 1,
        "config": resolved,
    }
    _write_json(out / "eval.json", record)
    _write_csv(out / "eval.csv", EVAL_COLUMNS, [[record[c] for c in EVAL_COLUMNS]], resolved, append=True)
    plotting.plot_cmc(report, out / "cmc.png", base_mean, metadata=_png_meta(resolved))
    print(f"mAP={fmt(report.mAP)}  " + "  ".join(f"cmc@{k}={fmt(v)}" for k, v in report.cmc.items()))
    print(f"random baseline mAP={fmt(base_mean)} (std {fmt(base_std)})")
    return 0


def cmd_cluster(args):
    cfg = _load_run_config(args)
    ck = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data)
    _check_dims(ck.state, data)
    feats = embed(ck.state.teacher, data.raw)
    eps_values = args.eps if args.eps else [cfg.train.eps]
    min_samples = args.min_samples if args.min_samples is not None else cfg.train.min_samples
    rows = []
    for eps in eps_values:
        lab = dbscan(feats, DbscanParams(eps, min_samples))
        st = labeling_stats(lab, data.true_id)
        rows.append({"eps": eps, "min_samples": min_samples, **{c: st[c] for c in CLUSTER_COLUMNS[2:]}})
        print("  ".join(f"{c}={fmt(rows[-1][c])}" for c in CLUSTER_COLUMNS))
    resolved = {**cfg.resolved(), "checkpoint_config": ck.config}
    out = _outdir(args.out or Path(args.checkpoint).parent)
    _write_csv(out / "cluster.csv", CLUSTER_COLUMNS, [[r[c] for c in CLUSTER_COLUMNS] for r in rows], resolved)
    if len(rows) > 1:
        plotting.plot_eps_sweep(rows, out / "eps_sweep.png", data.num_identities,
                                metadata=_png_meta(resolved))
    return 0


# -- argument parsing ----------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="l2gdistill", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI file with [generator], [train], [eval] sections")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset file")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--preset", choices=["hard", "easy"])
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", parents=[common], help="train and write checkpoint plus report")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--preset", choices=["desk", "paper"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-local", action="store_true", help="drop the in-batch contrast")
    p.add_argument("--no-distill", action="store_true", help="drop teacher-student distillation")
    p.add_argument("--no-mining", action="store_true", help="contrast against centroids instead of mined members")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="retrieval mAP/CMC of a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--seed", type=int, help="query/gallery split seed")
    p.add_argument("--out", type=Path, help="output directory (default: the checkpoint's)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cluster", parents=[common], help="cluster teacher embeddings and score the labeling")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--eps", type=float, nargs="+", help="one or more eps values (a sweep)")
    p.add_argument("--min-samples", type=int)
    p.add_argument("--out", type=Path, help="output directory (default: the checkpoint's)")
    p.set_defaults(func=cmd_cluster)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except L2GError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
