"""Acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line, collected in the terminal summary.
Runs use L = 50 subsampling replicates.
"""

import json
import time
from itertools import combinations

import numpy as np
import pytest

from stabgknock.cli import main
from stabgknock.io import save_dataset
from stabgknock.knockoffs import construct_gknockoff, verify_exchangeability
from stabgknock.lasso import fit_lasso, gram_inputs, kkt_violation
from stabgknock.screening import exhaustive_best_subset, spls_screen
from stabgknock.selection import knockoff_threshold
from stabgknock.simulation import (
    Scenario,
    correlated_rows,
    generate,
    make_method,
    run_experiment,
    run_screening_experiment,
    screen_methods,
)
from stabgknock.spline import Projector, SplineSpec, build_basis, project_data
from stabgknock.statistics import check_antisymmetry, statistic_function

from conftest import report_criterion

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]


def test_criterion_01_knockoff_identities():
    t0 = time.time()
    rng = np.random.default_rng(101)
    worst_res = worst_swap = 0.0
    designs = [(n, p, kind) for n in (100, 300) for p in (20, 80)
               for kind in ("ar1", "compound")]
    for i in range(50):
        n, p, kind = designs[i % len(designs)]
        rho = rng.uniform(0.1, 0.8)
        X = correlated_rows(n, p, rho, kind, rng)
        X -= X.mean(axis=0)
        X /= np.linalg.norm(X, axis=0)
        if n < 2 * p:
            # zero rows leave the Gram matrix unchanged
            X = np.vstack([X, np.zeros((2 * p - n, p))])
        aug = construct_gknockoff(X, rng=i)
        worst_res = max(worst_res, *aug.construction_residuals)
        for _ in range(20):
            A = np.flatnonzero(rng.random(p) < rng.uniform(0.05, 0.95))
            worst_swap = max(worst_swap, verify_exchangeability(aug, A))
    dt = time.time() - t0
    ok = worst_res <= 1e-6 and worst_swap <= 1e-6 and dt < 60
    report_criterion(1, ok, f"max residual {worst_res:.2e}, max swap deviation "
                            f"{worst_swap:.2e}, {dt:.1f}s")
    assert ok


def brute_threshold(W, q, mode):
    off = 1 if mode == "knockoff_plus" else 0
    for t in sorted({abs(w) for w in W if w != 0}):
        ratio = (off + sum(w <= -t for w in W)) / max(sum(w >= t for w in W), 1)
        if ratio <= q:
            return t
    return float("inf")


def test_criterion_02_threshold_oracle():
    t0 = time.time()
    rng = np.random.default_rng(202)
    mismatches = 0
    for i in range(1000):
        p = int(rng.integers(1, 21))
        if i % 2:
            W = rng.normal(size=p) * (rng.random(p) < 0.8)
        else:
            W = rng.integers(-4, 5, size=p).astype(float)
        for mode in ("knockoff", "knockoff_plus"):
            for q in (0.05, 0.1, 0.2, 0.3, 0.5):
                mismatches += knockoff_threshold(W, q, mode) != brute_threshold(W, q, mode)
    dt = time.time() - t0
    ok = mismatches == 0 and dt < 10
    report_criterion(2, ok, f"{mismatches} mismatches over 10000 comparisons, {dt:.1f}s")
    assert ok


def test_criterion_03_antisymmetry():
    t0 = time.time()
    failures = 0
    checks = 0
    fns = {k: statistic_function(k, L=20) for k in ("SPD", "LSM", "LCD")}
    for i in range(20):
        sc = Scenario(n=80, p=12, p1=4, A=1.0, rho=0.3, seed=300 + i)
        d, _, _ = generate(sc)
        pd = project_data(d)
        aug = construct_gknockoff(pd.X_star, Z=pd.Z, rng=i)
        for fn in fns.values():
            W = fn(aug, pd.Y_star, i).W
            for j in range(aug.p):
                checks += 1
                failures += not check_antisymmetry(fn, aug, pd.Y_star, j, seed=i, W_ref=W)
    dt = time.time() - t0
    ok = failures == 0 and dt < 300
    report_criterion(3, ok, f"{failures} failures over {checks} swaps (SPD, LSM, LCD), "
                            f"{dt:.1f}s")
    assert ok


def test_criterion_04_null_fdr():
    method = make_method("stab_gknock", L=50)
    rep = run_experiment(Scenario(n=300, p=60, p1=0, A=0.0, rho=0.2, seed=404), method,
                         0.1, 100)
    row = rep.get("fdr")
    bound = 0.1 + 2 * row.stderr
    ok = row.value <= bound
    report_criterion(4, ok, f"null FDR {row.value:.3f} (se {row.stderr:.3f}) <= {bound:.3f}")
    assert ok


def test_criterion_05_one_stage_fdr_power():
    method = make_method("stab_gknock", L=50)
    parts, ok = [], True
    for A in (0.4, 0.8, 1.0):
        rep = run_experiment(Scenario(n=300, p=150, p1=20, A=A, rho=0.2, seed=505), method,
                             0.1, 50)
        fdr, power = rep.fdr_hat, rep.power_hat
        ok &= fdr <= 0.13
        if A == 1.0:
            ok &= power >= 0.85
        parts.append(f"A={A}: FDR {fdr:.3f} power {power:.3f}")
    report_criterion(5, ok, "; ".join(parts))
    assert ok


def test_criterion_06_sure_screening():
    parts, ok = [], True
    for p in (200, 700):
        sc = Scenario(n=200, p=p, p1=20, A=0.6, rho=0.5, seed=606)
        rep = run_screening_experiment(sc, screen_methods(), k=40, R=50)
        ssr = {m: rep.value("ssr", m) for m in ("spls", "sis", "rrcs")}
        ok &= ssr["spls"] >= 0.85 and ssr["spls"] > max(ssr["sis"], ssr["rrcs"])
        parts.append(f"p={p}: SSR spls {ssr['spls']:.2f} sis {ssr['sis']:.2f} "
                     f"rrcs {ssr['rrcs']:.2f}")
    report_criterion(6, ok, "; ".join(parts) + " (reference spls 0.960)")
    assert ok


def test_criterion_07_mms_ordering():
    sc = Scenario(n=200, p=200, p1=20, A=0.6, rho=0.5, design_dist="student_t3", seed=707)
    rep = run_screening_experiment(sc, screen_methods(), k=40, R=50)
    med = {m: rep.value("mms_q50", m) for m in ("spls", "sis", "rrcs")}
    ok = med["spls"] < med["rrcs"] < med["sis"]
    report_criterion(7, ok, f"median MMS spls {med['spls']:.0f} < rrcs {med['rrcs']:.0f} "
                            f"< sis {med['sis']:.0f}")
    assert ok


def test_criterion_08_two_stage():
    method = make_method("spls_stab_gknock", L=50, k=80)
    rep = run_experiment(Scenario(n=400, p=800, p1=10, A=1.0, rho=0.2, seed=808), method,
                         0.1, 30)
    ok = rep.fdr_hat <= 0.15 and rep.power_hat >= 0.7
    report_criterion(8, ok, f"FDR {rep.fdr_hat:.3f} (<= 0.15), power {rep.power_hat:.3f} "
                            f"(>= 0.7)")
    assert ok


def test_criterion_09_solver_bars():
    worst_kkt = 0.0
    for seed in range(100):
        rng = np.random.default_rng(9000 + seed)
        n, q = int(rng.integers(20, 120)), int(rng.integers(5, 150))
        X = rng.normal(size=(n, q))
        y = X[:, : min(q, 5)] @ rng.normal(size=min(q, 5)) + rng.normal(size=n)
        lam = rng.uniform(0.005, 0.9) * np.max(np.abs(X.T @ y)) / n
        G, c, _ = gram_inputs(X, y)
        worst_kkt = max(worst_kkt, kkt_violation(G, c, fit_lasso(X, y, lam).beta, lam))
    equal = 0
    for seed in range(100):
        rng = np.random.default_rng(9100 + seed)
        p, k = int(rng.integers(4, 13)), int(rng.integers(1, 4))
        n = int(rng.integers(20, 60))
        X = rng.normal(size=(n, p))
        X /= np.linalg.norm(X, axis=0)
        b = np.zeros(p)
        b[rng.choice(p, min(p, 4), replace=False)] = rng.normal(size=min(p, 4))
        y = X @ b + 0.5 * rng.normal(size=n)
        ex = exhaustive_best_subset(X, y, k).objective
        heur = spls_screen(X, y, k, rng=seed).objective
        equal += abs(heur - ex) <= 1e-10 * max(abs(ex), 1e-12) + 1e-14
    rng = np.random.default_rng(9200)
    pu = idem = 0.0
    for order, kstar in ((1, 0), (2, 3), (3, 1), (3, 4), (4, 6)):
        U = rng.uniform(size=200)
        Z = build_basis(U, SplineSpec(order=order, interior_knots=kstar))
        pu = max(pu, float(np.max(np.abs(Z.sum(axis=1) - 1))))
        W = Projector(Z).matrix()
        idem = max(idem, float(np.max(np.abs(W @ W - W))))
    ok = worst_kkt <= 1e-6 and equal >= 95 and pu <= 1e-12 and idem <= 1e-8
    report_criterion(9, ok, f"max KKT {worst_kkt:.1e}; IHT = exhaustive on {equal}/100; "
                            f"unity {pu:.1e}; idempotency {idem:.1e}")
    assert ok


def _run_twice(args, tmp_path, tag):
    outs = []
    for r in range(2):
        out = tmp_path / f"{tag}{r}.{'csv' if args[0] == 'simulate' else 'json'}"
        assert main([str(a) for a in args] + ["--out", str(out)]) == 0
        outs.append(out.read_bytes())
    return outs[0] == outs[1]


def test_criterion_10_cli_determinism(tmp_path):
    d, _, _ = generate(Scenario(n=150, p=30, p1=5, A=1.0, rho=0.2, seed=1010))
    data = tmp_path / "d.csv"
    save_dataset(d, data)
    wide, _, _ = generate(Scenario(n=120, p=150, p1=5, A=1.5, rho=0.2, seed=1011))
    wdata = tmp_path / "w.csv"
    save_dataset(wide, wdata)
    runs = {
        "select": ["select", "--data", data, "--seed", 7, "--L", 20],
        "select-lsm": ["select", "--data", data, "--seed", 7, "--statistic", "lsm"],
        "select-two-stage": ["select", "--data", wdata, "--seed", 7, "--L", 10, "--k", 20],
        "screen": ["screen", "--data", wdata, "--seed", 3, "--k", 10],
        "knockoff-check": ["knockoff-check", "--data", data, "--seed", 3],
        "simulate": ["simulate", "--method", "stab_gknock", "--n", 100, "--p", 20,
                     "--p1", 3, "--R", 2, "--L", 10, "--seed", 5],
    }
    same = {name: _run_twice(args, tmp_path, name) for name, args in runs.items()}
    manifest = json.loads((tmp_path / "select0.json.manifest.json").read_text())
    ok = all(same.values()) and "timestamp" in manifest
    report_criterion(10, ok, "byte-identical reruns: " +
                     ", ".join(f"{k} {'yes' if v else 'NO'}" for k, v in same.items()))
    assert ok
