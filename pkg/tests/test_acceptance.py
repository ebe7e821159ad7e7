"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``. Criterion 1 runs ten
full pipelines and takes about a minute.
"""

import statistics
import time

import numpy as np
import pytest
from oracles import central_differences, pairwise_auc

import nireg.selection as selection
from nireg.clustering import build_subpopulations, kmeans, matched_agreement
from nireg.data import LabeledDataset
from nireg.metrics import auc_score
from nireg.model import LogisticModel, RegularizerSpec, fit, fit_cluster_anchors, gradient, loss
from nireg.pipeline import PipelineConfig, run_pipeline
from nireg.preprocess import apply_pca, fit_pca
from nireg.synthetic import generate, ood_protocol, preset


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
        assert ok, detail

    return emit


@pytest.mark.slow
def test_criterion_1_ood_superiority(tmp_path, report):
    gaps, times = [], []
    for seed in range(10):
        out = tmp_path / f"seed{seed}"
        out.mkdir()
        cfg = PipelineConfig.from_dict({"seeds": {"generate": seed, "cluster": seed, "cv": seed}, "figures": False})
        start = time.perf_counter()
        summary = run_pipeline(cfg, out)
        times.append(time.perf_counter() - start)
        gaps.append(summary["auc_gap"])
    median = statistics.median(gaps)
    wins = sum(g > 0 for g in gaps)
    ok = median >= 0.02 and wins >= 8 and max(times) <= 60.0
    report(
        1,
        ok,
        f"median gap {median:+.4f} (need >= 0.02), ni wins {wins}/10 (need >= 8), "
        f"slowest run {max(times):.1f} s (need <= 60); gaps {[round(g, 4) for g in gaps]}",
    )


def _instance(rng, kind):
    n = int(rng.integers(2, 51))
    k = int(rng.integers(1, 9))
    x = rng.normal(size=(n, k))
    y = rng.integers(0, 2, size=n)
    if kind == "l2":
        reg = RegularizerSpec.l2(rng.uniform(1e-3, 10))
    elif kind == "ni":
        reg = RegularizerSpec.ni(rng.uniform(1e-3, 10), rng.normal(size=(int(rng.integers(1, 6)), k)))
    else:
        reg = RegularizerSpec()
    return LogisticModel(rng.normal(), rng.normal(size=k), reg), x, y


def test_criterion_2_gradients(report):
    rng = np.random.default_rng(2)
    worst = {}
    for kind in ("none", "l2", "ni"):
        errs = []
        for _ in range(100):
            m, x, y = _instance(rng, kind)
            g0, gw = gradient(m, x, y)
            g = np.r_[g0, gw]

            def f(theta, m=m, x=x, y=y):
                return loss(LogisticModel(theta[0], theta[1:], m.regularizer), x, y)

            fd = central_differences(f, np.r_[m.bias, m.weights])
            errs.append(np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-12))
        worst[kind] = max(errs)
    ok = max(worst.values()) <= 1e-5
    report(2, ok, "max relative error " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (need <= 1e-5)")


def test_criterion_3_regularizer_limits(report):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(300, 6))
    y = (x @ rng.normal(size=6) + rng.normal(size=300) > 0).astype(int)
    anchors = rng.normal(size=(3, 6))
    free = fit(x, y)
    tiny = fit(x, y, RegularizerSpec.ni(1e-12, anchors))
    d_small = max(abs(tiny.bias - free.bias), float(np.max(np.abs(tiny.weights - free.weights))))
    pinned = fit(x, y, RegularizerSpec.ni(1e8, anchors))
    d_big = float(np.max(np.abs(pinned.weights - anchors.mean(axis=0))))
    norms = [np.linalg.norm(fit(x, y, RegularizerSpec.l2(lam)).weights) for lam in np.logspace(-6, 6, 13)]
    mono = all(a >= b for a, b in zip(norms, norms[1:]))
    ok = d_small <= 1e-6 and d_big <= 1e-3 and mono
    report(
        3,
        ok,
        f"alpha->0 distance {d_small:.1e} (<= 1e-6), alpha=1e8 distance {d_big:.1e} (<= 1e-3), "
        f"l2 norms non-increasing over 13 lambdas: {mono}",
    )


def test_criterion_4_auc_oracle(report):
    rng = np.random.default_rng(4)
    worst = 0.0
    for i in range(1000):
        n = int(rng.integers(2, 201))
        y = rng.integers(0, 2, size=n)
        y[:2] = [0, 1]
        # every other instance draws from very few distinct scores
        levels = int(rng.integers(1, 6)) if i % 2 else n
        s = rng.integers(0, levels, size=n) / levels
        worst = max(worst, abs(auc_score(s, y) - pairwise_auc(s, y)))
    report(4, worst <= 1e-12, f"max |trapezoid - pairwise| over 1000 instances {worst:.1e} (need <= 1e-12)")


def test_criterion_5_clustering_recovery(report):
    exact = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        truth = np.repeat([0, 1], 100)
        centers = np.zeros((2, 5))
        centers[1, 0] = 20.0  # separation 20 x spread, spread 1
        x = centers[truth] + rng.normal(size=(200, 5))
        exact += matched_agreement(truth, kmeans(x, 2, seed=seed).assignment) == 1.0
    synth = generate(preset("acceptance"))
    ds = synth.dataset
    part = build_subpopulations(ds, fit_pca(ds.features), 4, seed=0)
    planted = matched_agreement(synth.env_labels, part.assignment())
    ok = exact == 20 and planted >= 0.95
    report(5, ok, f"two-blob exact recovery {exact}/20 (need 20), planted agreement {planted:.4f} (need >= 0.95)")


def test_criterion_6_protocol_integrity(monkeypatch, report):
    seen = []
    real_fit = selection.fit
    real_anchors = selection.fit_cluster_anchors

    def spy_fit(x, y, reg=None, opts=None, transform_id=None):
        seen.append(("fit", np.array(x), reg))
        return real_fit(x, y, reg, opts, transform_id)

    def spy_anchors(x, y, clusters, *args, **kwargs):
        for c in clusters:
            seen.append(("anchor", np.array(x[np.asarray(c)]), None))
        return real_anchors(x, y, clusters, *args, **kwargs)

    monkeypatch.setattr(selection, "fit", spy_fit)
    monkeypatch.setattr(selection, "fit_cluster_anchors", spy_anchors)

    runs = violations = 0
    for seed in range(3):
        tr, _ = ood_protocol(preset("acceptance", n_per_env=120, seed=seed), 3)
        ds = tr.dataset
        t = fit_pca(ds.features)
        pcs = apply_pca(t, ds.features)
        part = build_subpopulations(ds, t, 3, seed=seed)
        seen.clear()
        res = selection.tune_ni(ds, t, part, grid=[1e-2, 1.0, 1e2])
        runs += 1
        own_anchor = real_anchors(pcs, ds.labels, part)
        allidx = np.sort(np.concatenate(part.clusters))
        violations += not np.array_equal(allidx, np.arange(ds.n))
        rows = {r.tobytes(): i for i, r in enumerate(pcs)}
        owner = part.assignment()
        for kind, xs, reg in seen:
            clusters_touched = {int(owner[rows[r.tobytes()]]) for r in xs}
            if kind == "fit":
                # a joint fit touches every cluster but one and carries only the other clusters' anchors
                (h,) = set(range(part.k)) - clusters_touched
                used = [a.tobytes() for a in reg.anchors]
                violations += own_anchor[h].tobytes() in used
                violations += len(used) != part.k - 1
            else:
                violations += len(clusters_touched) != 1
        violations += any(int(h) in used for h, used in res.notes["anchors_used"].items())
        for folds in (3, 5):
            parts = selection.stratified_folds(ds.labels, folds, seed)
            violations += not np.array_equal(np.sort(np.concatenate(parts)), np.arange(ds.n))
    ok = violations == 0
    report(6, ok, f"{runs} cluster-holdout tuning runs, {violations} leak or partition violations (need 0)")


@pytest.mark.slow
def test_criterion_7_determinism(tmp_path, report):
    bundles = []
    for name, workers in (("a", 1), ("b", 1), ("c", 8), ("d", 8)):
        out = tmp_path / name
        out.mkdir()
        run_pipeline(PipelineConfig(), out, workers=workers)
        bundles.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    same = all(b == bundles[0] for b in bundles[1:])
    diff = sorted({k for b in bundles[1:] for k in b if b.get(k) != bundles[0].get(k)})
    report(7, same, f"{len(bundles[0])} files, byte-identical across repeats and workers 1/8: {same} {diff or ''}")


def test_criterion_8_pca_contracts(report):
    rng = np.random.default_rng(8)
    worst = {"orthonormality": 0.0, "decorrelation": 0.0, "isometry": 0.0}
    for _ in range(50):
        n = int(rng.integers(5, 200))
        d = int(rng.integers(1, 20))
        x = rng.normal(size=(n, d)) @ rng.normal(size=(d, d)) * rng.uniform(0.1, 10, size=d) + rng.normal(size=d)
        t = fit_pca(x)
        v = t.components
        worst["orthonormality"] = max(worst["orthonormality"], float(np.max(np.abs(v @ v.T - np.eye(t.k)))))
        pc = apply_pca(t, x)
        cov = np.cov(pc, rowvar=False, bias=True).reshape(t.k, t.k)
        worst["decorrelation"] = max(worst["decorrelation"], float(np.max(np.abs(cov - np.diag(np.diag(cov))))))
        if t.k == d:
            z = (x - t.mean) / t.scale
            dz = np.linalg.norm(z[:, None] - z[None], axis=-1)
            dp = np.linalg.norm(pc[:, None] - pc[None], axis=-1)
            rel = float(np.max(np.abs(dz - dp)) / np.max(dz))
            worst["isometry"] = max(worst["isometry"], rel)
    ok = worst["orthonormality"] <= 1e-10 and worst["decorrelation"] <= 1e-8 and worst["isometry"] <= 1e-8
    report(8, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (need <= 1e-10, 1e-8, 1e-8)")
