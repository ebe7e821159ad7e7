"""``nireg`` command line.

Every subcommand accepts ``--config PATH`` (a JSON object whose keys are the
long option names with dashes replaced by underscores); flags given on the
command line win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from nireg.clustering import PAIRING_RULES, build_subpopulations, make_ood_split
from nireg.data import load_csv, save_csv, subset
from nireg.errors import ConfigError, NiregError
from nireg.metrics import evaluate, write_eval_report, write_roc_csv
from nireg.model import RegularizerSpec, fit, fit_cluster_anchors, load_model, save_model
from nireg.pipeline import PipelineConfig, run_pipeline, stage
from nireg.preprocess import DEFAULT_RANK_TOLERANCE, apply_pca, fit_pca, load_pca, save_pca
from nireg.selection import DEFAULT_GRID, tune_l2, tune_ni, write_tuning_report
from nireg.synthetic import PRESETS, generate, preset, write_envs_csv

log = logging.getLogger("nireg")

# built-in defaults; argparse defaults stay None so config-file values can fill gaps
DEFAULTS = {
    "seed": 0,
    "label_column": "label",
    "no_header": False,
    "preset": "acceptance",
    "k_per_class": 5,
    "test_cluster": 0,
    "pairing": "by_centroid",
    "rank_tolerance": DEFAULT_RANK_TOLERANCE,
    "anchor_ridge": None,
    "kind": "l2",
    "lam": 1.0,
    "alpha": 1.0,
    "protocol": "random_kfold",
    "grid": list(DEFAULT_GRID),
    "folds": 5,
    "split_name": "test",
    "workers": 1,
}


def _common(p):
    p.add_argument("--config", type=Path, help="JSON file with option values")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", "-o", type=Path, help="existing output directory")
    p.add_argument("--quiet", "-q", action="store_true")


def _data_opts(p):
    p.add_argument("--data", type=Path, help="input CSV")
    p.add_argument("--label-column", help="label column name or zero-based index")
    p.add_argument("--no-header", action="store_true", default=None)


def _cluster_opts(p):
    p.add_argument("--k-per-class", type=int)
    p.add_argument("--pairing", choices=PAIRING_RULES)
    p.add_argument("--rank-tolerance", type=float)
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nireg", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic non-i.i.d. dataset")
    _common(p)
    p.add_argument("--preset", choices=sorted(PRESETS))

    p = sub.add_parser("split", help="carve an out-of-distribution test cluster")
    _common(p)
    _data_opts(p)
    _cluster_opts(p)
    p.add_argument("--test-cluster", type=int)

    p = sub.add_parser("cluster", help="per-class k-means subpopulations")
    _common(p)
    _data_opts(p)
    _cluster_opts(p)

    p = sub.add_parser("fit", help="fit one logistic model")
    _common(p)
    _data_opts(p)
    _cluster_opts(p)
    p.add_argument("--kind", choices=("none", "l2", "ni"))
    p.add_argument("--lam", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--anchor-ridge", type=float)

    p = sub.add_parser("tune", help="select lambda or alpha by held-out AUC")
    _common(p)
    _data_opts(p)
    _cluster_opts(p)
    p.add_argument("--protocol", choices=("random_kfold", "cluster_holdout"))
    p.add_argument("--grid", type=float, nargs="+")
    p.add_argument("--folds", type=int)
    p.add_argument("--anchor-ridge", type=float)

    p = sub.add_parser("eval", help="ROC/AUC of a saved model on a dataset")
    _common(p)
    _data_opts(p)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--pca", type=Path, required=True)
    p.add_argument("--split-name")

    p = sub.add_parser("pipeline", help="run the full ni vs l2 experiment")
    _common(p)
    p.add_argument("--data", type=Path, help="input CSV (default: generated preset)")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--label-column")
    p.add_argument("--holdout-env", type=int)
    p.add_argument("--ood-k-per-class", type=int)
    p.add_argument("--test-cluster", type=int)
    p.add_argument("--sub-k-per-class", type=int)
    p.add_argument("--pairing", choices=PAIRING_RULES)
    p.add_argument("--anchor-ridge", type=float)
    p.add_argument("--folds", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--no-figures", action="store_true", default=None)
    return ap


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return doc


def _resolve(args) -> dict:
    """Merge flags over the config file over built-in defaults."""
    file_opts = _load_config(args.config)
    merged = dict(DEFAULTS)
    merged.update(file_opts)
    merged.update({k: v for k, v in vars(args).items() if v is not None and v is not False})
    return merged


def _out_dir(opts) -> Path:
    out = opts.get("out")
    if out is None:
        raise ConfigError("--out is required")
    out = Path(out)
    if not out.is_dir():
        raise ConfigError(f"output directory {out} does not exist")
    return out


def _dataset(opts):
    if opts.get("data") is None:
        raise ConfigError("--data is required")
    with stage("data"):
        return load_csv(opts["data"], label_column=opts["label_column"], has_header=not opts["no_header"])


def _dump(doc, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _partition(ds, t, opts):
    with stage("cluster"):
        return build_subpopulations(
            ds, t, opts["k_per_class"], seed=opts["seed"], pairing_rule=opts["pairing"], workers=opts["workers"]
        )


def cmd_generate(opts):
    out = _out_dir(opts)
    overrides = opts.get("generator", {})
    cfg = preset(opts["preset"], **{**overrides, "seed": opts["seed"]})
    synth = generate(cfg)
    save_csv(synth.dataset, out / "dataset.csv")
    write_envs_csv(synth, out / "envs.csv")
    log.info("wrote %d rows to %s", synth.dataset.n, out)


def cmd_split(opts):
    out = _out_dir(opts)
    ds = _dataset(opts)
    t = fit_pca(ds.features, opts["rank_tolerance"])
    part = _partition(ds, t, opts)
    with stage("split"):
        split = make_ood_split(part, opts["test_cluster"])
    _dump(split.to_dict(), out / "split.json")
    _dump(part.report(ds.labels, test_cluster=opts["test_cluster"]), out / "cluster-report.json")
    label = str(opts["label_column"])
    label = "label" if label.lstrip("-").isdigit() else label
    save_csv(subset(ds, split.train_indices), out / "train.csv", label_name=label)
    save_csv(subset(ds, split.test_indices), out / "test.csv", label_name=label)


def cmd_cluster(opts):
    out = _out_dir(opts)
    ds = _dataset(opts)
    t = fit_pca(ds.features, opts["rank_tolerance"])
    part = _partition(ds, t, opts)
    _dump(part.report(ds.labels), out / "cluster-report.json")
    assign = part.assignment()
    with open(out / "clusters.csv", "w", encoding="utf-8") as fh:
        fh.write("sample_id,cluster\n")
        for sid, c in zip(ds.sample_ids, assign):
            fh.write(f"{sid},{int(c)}\n")


def cmd_fit(opts):
    out = _out_dir(opts)
    ds = _dataset(opts)
    with stage("preprocess"):
        t = fit_pca(ds.features, opts["rank_tolerance"])
        x = apply_pca(t, ds.features)
    kind = opts["kind"]
    with stage("fit"):
        if kind == "ni":
            part = _partition(ds, t, opts)
            anchors = fit_cluster_anchors(x, ds.labels, part, opts["anchor_ridge"], workers=opts["workers"])
            reg = RegularizerSpec.ni(opts["alpha"], anchors)
        elif kind == "l2":
            reg = RegularizerSpec.l2(opts["lam"])
        else:
            reg = RegularizerSpec()
        model = fit(x, ds.labels, reg, transform_id=t.transform_id)
    save_pca(t, out / "pca.json")
    save_model(model, out / "model.json")


def cmd_tune(opts):
    out = _out_dir(opts)
    ds = _dataset(opts)
    t = fit_pca(ds.features, opts["rank_tolerance"])
    with stage("tune"):
        if opts["protocol"] == "cluster_holdout":
            part = _partition(ds, t, opts)
            res = tune_ni(ds, t, part, opts["grid"], opts["anchor_ridge"], workers=opts["workers"])
        else:
            res = tune_l2(ds, t, opts["grid"], opts["folds"], opts["seed"], workers=opts["workers"])
    write_tuning_report(res, out / "tuning-report.json")
    log.info("best value %g", res.best_value)


def cmd_eval(opts):
    out = _out_dir(opts)
    ds = _dataset(opts)
    with stage("eval"):
        model = load_model(opts["model"])
        t = load_pca(opts["pca"])
        report = evaluate(model, t, ds, opts["split_name"])
    write_eval_report(report, out / "eval-report.json")
    write_roc_csv(report.curve, out / "roc.csv")
    from nireg.plotting import plot_roc

    plot_roc({opts["split_name"]: report.curve}, out / "roc.png", title=f"ROC on {opts['split_name']}")
    print(f"auc {report.auc:.6f}")


_PIPELINE_FLAGS = {
    "data": "data",
    "preset": "preset",
    "label_column": "label_column",
    "holdout_env": "holdout_env",
    "ood_k_per_class": "ood_k_per_class",
    "test_cluster": "test_cluster",
    "sub_k_per_class": "sub_k_per_class",
    "pairing": "pairing_rule",
    "anchor_ridge": "anchor_ridge",
    "folds": "folds",
}


def cmd_pipeline(args):
    doc = _load_config(args.config)
    workers = doc.pop("workers", 1)
    out = args.out if args.out is not None else doc.pop("out", None)
    doc.pop("out", None)
    for flag, key in _PIPELINE_FLAGS.items():
        v = getattr(args, flag)
        if v is not None:
            doc[key] = str(v) if isinstance(v, Path) else v
    if args.data is not None and args.preset is None:
        doc["preset"] = None
    if args.seed is not None:
        doc["seeds"] = {"generate": args.seed, "cluster": args.seed, "cv": args.seed}
    if args.no_figures:
        doc["figures"] = False
    if args.workers is not None:
        workers = args.workers
    cfg = PipelineConfig.from_dict(doc)
    summary = run_pipeline(cfg, _out_dir({"out": out}), workers=workers)
    print(f"auc_ni {summary['auc_ni']:.6f}  auc_l2 {summary['auc_l2']:.6f}  gap {summary['auc_gap']:+.6f}")


COMMANDS = {
    "generate": cmd_generate,
    "split": cmd_split,
    "cluster": cmd_cluster,
    "fit": cmd_fit,
    "tune": cmd_tune,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    try:
        if args.command == "pipeline":
            cmd_pipeline(args)
        else:
            COMMANDS[args.command](_resolve(args))
    except NiregError as exc:
        print(f"nireg {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
