"""End-to-end experiment: OOD split, subpopulations, tuning, final fits, evaluation."""

from __future__ import annotations

import contextlib
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from nireg import __version__
from nireg.clustering import build_subpopulations, make_ood_split, matched_agreement
from nireg.data import load_csv, subset
from nireg.errors import ConfigError, NiregError, NumericError
from nireg.metrics import evaluate, write_eval_report, write_roc_csv
from nireg.model import RegularizerSpec, fit, fit_cluster_anchors, save_model
from nireg.preprocess import DEFAULT_RANK_TOLERANCE, apply_pca, fit_pca, save_pca
from nireg.selection import DEFAULT_GRID, tune_l2, tune_ni, tune_ni_kfold, write_tuning_report
from nireg.synthetic import GeneratorConfig, generate, preset, split_envs

log = logging.getLogger(__name__)

SUMMARY_KEYS = ("auc_ni", "auc_l2", "auc_gap", "best_alpha", "best_lambda", "config", "seeds", "versions")


@dataclass
class PipelineConfig:
    data: str | None = None
    label_column: str = "label"
    has_header: bool = True
    preset: str | None = "acceptance"
    generator: dict = field(default_factory=dict)
    # generator inputs only: hold out this environment instead of carving a cluster
    holdout_env: int | None = 3
    ood_k_per_class: int = 5
    test_cluster: int = 0
    # None: number of training environments for environment holdout, else 5
    sub_k_per_class: int | None = None
    pairing_rule: str = "by_centroid"
    rank_tolerance: float = DEFAULT_RANK_TOLERANCE
    anchor_ridge: float | None = None
    lambda_grid: list = field(default_factory=lambda: list(DEFAULT_GRID))
    alpha_grid: list = field(default_factory=lambda: list(DEFAULT_GRID))
    folds: int = 5
    seeds: dict = field(default_factory=lambda: {"generate": 0, "cluster": 0, "cv": 0})
    figures: bool = True

    def __post_init__(self):
        if (self.data is None) == (self.preset is None):
            raise ConfigError("set exactly one of 'data' (a CSV path) or 'preset' (a generator preset)")
        if not self.lambda_grid or not self.alpha_grid:
            raise ConfigError("hyperparameter grids must be non-empty")
        self.lambda_grid = [float(v) for v in self.lambda_grid]
        self.alpha_grid = [float(v) for v in self.alpha_grid]
        unknown = set(self.seeds) - {"generate", "cluster", "cv"}
        if unknown:
            raise ConfigError(f"unknown seed names {sorted(unknown)}")
        self.seeds = {"generate": 0, "cluster": 0, "cv": 0} | {k: int(v) for k, v in self.seeds.items()}
        for name in ("ood_k_per_class", "sub_k_per_class"):
            if getattr(self, name) is not None and getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "data" in doc and "preset" not in doc:
            doc = {**doc, "preset": None}
        return cls(**doc)

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def generator_config(self) -> GeneratorConfig:
        return preset(self.preset, **{**self.generator, "seed": self.seeds["generate"]})


@contextlib.contextmanager
def stage(name: str):
    """Prefix errors raised inside with the stage name; map numpy failures to NumericError."""
    try:
        yield
    except NiregError as exc:
        raise type(exc)(f"[{name}] {exc}") from exc
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        raise NumericError(f"[{name}] {exc}") from exc


def _dump(doc, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def versions() -> dict:
    return {"nireg": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def run_pipeline(cfg: PipelineConfig, out_dir, workers: int = 1) -> dict:
    out = Path(out_dir)
    if not out.is_dir():
        raise ConfigError(f"output directory {out} does not exist")

    env_labels = None
    with stage("data"):
        if cfg.data is not None:
            dataset = load_csv(cfg.data, label_column=cfg.label_column, has_header=cfg.has_header)
        else:
            synth = generate(cfg.generator_config())
            dataset, env_labels = synth.dataset, synth.env_labels

    with stage("ood-split"):
        if env_labels is not None and cfg.holdout_env is not None:
            tr_s, te_s = split_envs(synth, cfg.holdout_env)
            train, test = tr_s.dataset, te_s.dataset
            train_env = tr_s.env_labels
            ood_report = {"source": "environment", "holdout_env": cfg.holdout_env}
        else:
            carve_t = fit_pca(dataset.features, cfg.rank_tolerance)
            carve = build_subpopulations(
                dataset, carve_t, cfg.ood_k_per_class, seed=cfg.seeds["cluster"],
                pairing_rule=cfg.pairing_rule, workers=workers,
            )
            split = make_ood_split(carve, cfg.test_cluster)
            train = subset(dataset, split.train_indices)
            test = subset(dataset, split.test_indices)
            train_env = None if env_labels is None else env_labels[split.train_indices]
            ood_report = carve.report(dataset.labels, source="clusters", test_cluster=cfg.test_cluster)
            _dump(split.to_dict(), out / "split.json")
        log.info("train %d rows, OOD test %d rows", train.n, test.n)

    with stage("preprocess"):
        t = fit_pca(train.features, cfg.rank_tolerance)
        x = apply_pca(t, train.features)
        save_pca(t, out / "pca.json")

    with stage("subpopulations"):
        k_sub = cfg.sub_k_per_class
        if k_sub is None:
            k_sub = len(np.unique(train_env)) if ood_report["source"] == "environment" else 5
        sub = build_subpopulations(
            train, t, k_sub, seed=cfg.seeds["cluster"],
            pairing_rule=cfg.pairing_rule, workers=workers,
        )
        extra = {}
        if train_env is not None:
            extra["planted_agreement"] = matched_agreement(train_env, sub.assignment())
        _dump(
            {"ood_split": ood_report, "training_subpopulations": sub.report(train.labels, **extra)},
            out / "cluster-report.json",
        )

    with stage("anchors"):
        anchors = fit_cluster_anchors(x, train.labels, sub, cfg.anchor_ridge, workers=workers)

    with stage("tune"):
        if sub.k >= 2:
            rn = tune_ni(train, t, sub, cfg.alpha_grid, cfg.anchor_ridge, workers=workers)
        else:
            log.warning("single training subpopulation: ni reduces to a pull toward one anchor; "
                        "alpha is tuned with random folds instead of cluster holdout")
            rn = tune_ni_kfold(train, t, sub, cfg.alpha_grid, cfg.folds, cfg.seeds["cv"],
                               cfg.anchor_ridge, workers=workers)
        rl = tune_l2(train, t, cfg.lambda_grid, cfg.folds, cfg.seeds["cv"], workers=workers)
        write_tuning_report(rn, out / "tuning-report-ni.json")
        write_tuning_report(rl, out / "tuning-report-l2.json")

    with stage("fit"):
        m_ni = fit(x, train.labels, RegularizerSpec.ni(rn.best_value, anchors), transform_id=t.transform_id)
        m_l2 = fit(x, train.labels, RegularizerSpec.l2(rl.best_value), transform_id=t.transform_id)
        save_model(m_ni, out / "model-ni.json")
        save_model(m_l2, out / "model-l2.json")
        for name, m in (("ni", m_ni), ("l2", m_l2)):
            if not m.training_meta["converged"]:
                log.warning("%s fit stopped with status %s (gradient norm %.3g)", name,
                            m.training_meta["status"], m.training_meta["gradient_norm"])

    with stage("evaluate"):
        ev_ni = evaluate(m_ni, t, test, "ood_test")
        ev_l2 = evaluate(m_l2, t, test, "ood_test")
        write_eval_report(ev_ni, out / "eval-report-ni.json")
        write_eval_report(ev_l2, out / "eval-report-l2.json")
        write_roc_csv(ev_ni.curve, out / "roc-ni.csv")
        write_roc_csv(ev_l2.curve, out / "roc-l2.csv")

    if cfg.figures:
        from nireg import plotting

        plotting.plot_roc({"ni": ev_ni.curve, "l2": ev_l2.curve}, out / "roc.png")
        plotting.plot_tuning(rn, out / "tuning-ni.png", "alpha")
        plotting.plot_tuning(rl, out / "tuning-l2.png", "lambda")
        plotting.plot_clusters(x, train.labels, sub, out / "clusters.png")

    summary = {
        "auc_ni": ev_ni.auc,
        "auc_l2": ev_l2.auc,
        "auc_gap": ev_ni.auc - ev_l2.auc,
        "best_alpha": rn.best_value,
        "best_lambda": rl.best_value,
        "config": cfg.to_dict(),
        "seeds": dict(cfg.seeds),
        "versions": versions(),
    }
    _dump(summary, out / "summary.json")
    log.info("auc ni %.4f  l2 %.4f  gap %+.4f", ev_ni.auc, ev_l2.auc, summary["auc_gap"])
    return summary
