"""Acceptance gates.

Each test prints one ``ACCEPTANCE <k> PASS|FAIL`` line with the measured
values, then asserts the gate at its stated tolerance.
"""

import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from ctesn import ode, reservoir, surrogate
from ctesn.cli import main
from ctesn.harness import ScalingConfig, run_scaling, unseen_parameter_errors
from ctesn.models import ROBERTSON_TSPAN, heating_family, robertson, robertson_family
from ctesn.ode import SolverConfig
from ctesn.parameter_space import BoxSpace, sobol_points
from ctesn.readout import relative_error
from ctesn.surrogate import default_training_config, evaluation_times, predict, save, train

pytestmark = pytest.mark.slow

TESTS = Path(__file__).parent


def report(capsys, k, ok, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE {k} {'PASS' if ok else 'FAIL'}: {detail}", flush=True)


def radau_truth(family, p, times):
    """Independent tight-tolerance reference from scipy."""
    sys_ = family.make(p)
    sol = solve_ivp(
        sys_.rhs, family.tspan, family.y0(p), method="Radau",
        jac=sys_.jacobian, rtol=1e-10, atol=1e-14, t_eval=times,
    )
    assert sol.success
    return sol.y


@pytest.fixture(scope="module")
def robertson_run():
    fam = robertson_family()
    tic = time.perf_counter()
    s = train(fam, default_training_config("robertson"))
    elapsed = time.perf_counter() - tic
    t = evaluation_times(fam.tspan)
    params = np.vstack([fam.space.midpoint, sobol_points(fam.space, 5, skip=100)])
    preds = [predict(s, p, t) for p in params]
    errs = [relative_error(y, radau_truth(fam, p, t)).overall for p, y in zip(params, preds)]
    return dict(elapsed=elapsed, params=params, preds=preds, errs=np.array(errs))


def test_1_robertson_accuracy(robertson_run, capsys):
    errs = robertson_run["errs"]
    ok = errs.max() < 1e-2
    report(
        capsys, 1, ok,
        f"Robertson overall rel err nominal={errs[0]:.3e}, max over nominal+5 unseen="
        f"{errs.max():.3e} (gate < 1e-2); train {robertson_run['elapsed']:.1f}s",
    )
    assert ok


def test_2_robertson_physics(robertson_run, capsys):
    cons = max(np.abs(y.sum(axis=0) - 1.0).max() for y in robertson_run["preds"])
    low = min(y.min() for y in robertson_run["preds"])
    ok = cons <= 1e-2 and low >= -1e-3
    report(
        capsys, 2, ok,
        f"max |sum - 1| = {cons:.3e} (gate <= 1e-2), min component = {low:.3e} (gate >= -1e-3)",
    )
    assert ok


@pytest.fixture(scope="module")
def heating_run(tmp_path_factory):
    fam = heating_family()
    s = train(fam, default_training_config("heating", n_train=100))
    path = save(s, tmp_path_factory.mktemp("heat") / "surrogate.ctesn")
    return fam, s, path


def test_3_heating_unseen_accuracy(heating_run, capsys):
    fam, s, _ = heating_run
    errs = unseen_parameter_errors(s, fam, n_test=10)
    ok = errs.max() <= 2e-3
    report(
        capsys, 3, ok,
        f"heating N=10 n_train=100 max rel err at 10 unseen Sobol points = {errs.max():.3e}"
        f" (median {np.median(errs):.3e}; gate <= 2e-3; 1e-4 recorded only: "
        f"{'met' if errs.max() <= 1e-4 else 'not met'})",
    )
    assert ok


def test_4_heatmap(heating_run, tmp_path, capsys):
    _, _, path = heating_run
    tic = time.perf_counter()
    rc = main(["heatmap", "--surrogate", str(path), "--resolution", "23x23", "--out", str(tmp_path)])
    elapsed = time.perf_counter() - tic
    assert rc == 0
    rows = (tmp_path / "heatmap.csv").read_text().splitlines()[1:]
    stats = json.loads((tmp_path / "heatmap_stats.json").read_text())
    ok = len(rows) == 529 and stats["missing"] == 0 and stats["p95"] <= 5e-3 and stats["median"] <= 1e-3
    report(
        capsys, 4, ok,
        f"23x23 grid {len(rows)} cells ({stats['missing']} failed) in {elapsed:.0f}s; "
        f"median={stats['median']:.3e} (gate <= 1e-3), p95={stats['p95']:.3e} (gate <= 5e-3), "
        f"max={stats['max']:.3e}",
    )
    assert ok


def test_5_scaling(capsys):
    cfg = ScalingConfig(training=default_training_config("heating", n_train=10))
    res = run_scaling([5, 10, 20, 40, 80, 100], cfg)
    rows = {r.n: r for r in res.rows}
    main_rows = [rows[n] for n in (5, 10, 20, 40, 80)]
    pred = [r.predict_s for r in main_rows]
    full = [r.full_solve_s for r in main_rows]
    spread = max(pred) / min(pred)
    increasing = all(b > a for a, b in zip(full, full[1:]))
    growth = full[-1] / full[0]
    speedup = rows[100].speedup
    checks = {
        "predict spread <= 3x": spread <= 3.0,
        "full solve strictly increasing": increasing,
        "full solve growth >= 10x": growth >= 10.0,
        "N=100 speedup >= 5x": speedup >= 5.0,
    }
    ok = all(checks.values())
    table = "; ".join(
        f"N={r.n}: full {r.full_solve_s:.3g}s predict {r.predict_s:.3g}s" for r in res.rows
    )
    failed = [k for k, v in checks.items() if not v]
    report(
        capsys, 5, ok,
        f"predict spread {spread:.2f}x, full growth {growth:.1f}x, increasing={increasing}, "
        f"N=100 (dim {rows[100].dim}) speedup {speedup:.1f}x (15x recorded only); "
        f"failed: {failed or 'none'}; {table}",
    )
    assert ok


def test_6_solver_oracle(capsys):
    sys_ = robertson()
    y0 = [1.0, 0.0, 0.0]
    t = np.logspace(-6, 5, 50)
    ours = ode.interpolate(ode.solve_stiff(sys_, ROBERTSON_TSPAN, y0), t).T
    tight = ode.solve_stiff(sys_, ROBERTSON_TSPAN, y0, SolverConfig(abstol=1e-14, reltol=1e-10, max_steps=10**6))
    oracle = ode.interpolate(tight, t).T
    err = relative_error(ours, oracle)
    # cross-check the tight run against an independent implicit solver
    ref = solve_ivp(sys_.rhs, ROBERTSON_TSPAN, y0, method="Radau", jac=sys_.jacobian, rtol=1e-10, atol=1e-14, t_eval=t).y
    cross = relative_error(oracle, ref).overall
    ok = len(t) == 50 and err.overall <= 1e-4
    report(
        capsys, 6, ok,
        f"defaults vs tight oracle at 50 checkpoints: per-component "
        f"{np.array2string(err.per_component, precision=2)} max {err.overall:.3e} (gate <= 1e-4); "
        f"tight vs Radau {cross:.1e}",
    )
    assert ok


PROPERTY_TESTS = [
    "test_readout.py::test_exact_recovery",
    "test_parameter_space.py::test_rbf_center_exactness",
    "test_parameter_space.py::test_rbf_linear_reproduction",
    "test_parameter_space.py::test_sobol_dyadic_blocks_stratify_4x4",
]


def first_256_stratification():
    pts = sobol_points(BoxSpace((0.0, 0.0), (1.0, 1.0)), 256)
    cells = np.minimum((pts * 4).astype(int), 3)
    counts = np.zeros((4, 4), dtype=int)
    np.add.at(counts, (cells[:, 0], cells[:, 1]), 1)
    return counts


def test_7_property_suites(capsys):
    tic = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *[str(TESTS / t) for t in PROPERTY_TESTS]],
        capture_output=True, text=True, cwd=TESTS.parent,
    )
    counts = first_256_stratification()
    elapsed = time.perf_counter() - tic
    suites_ok = proc.returncode == 0
    strat_ok = bool(np.all(counts == 16))
    ok = suites_ok and strat_ok and elapsed < 60
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    report(
        capsys, 7, ok,
        f"property suites: {summary}; first 256 Sobol points per 4x4 cell: "
        f"min {counts.min()} max {counts.max()} (gate exactly 16); total {elapsed:.1f}s (gate < 60s)",
    )
    assert ok


def test_8_prediction_purity(capsys, monkeypatch):
    fam = heating_family()
    s = train(fam, default_training_config("heating", n_train=8))
    calls = {"n": 0}
    real = ode._integrate

    def counting(*args, **kwargs):
        calls["n"] += 1
        return real(*args, **kwargs)

    monkeypatch.setattr(ode, "_integrate", counting)
    for mod in (ode, surrogate, reservoir):
        for name in ("solve_stiff", "solve_explicit", "simulate_reservoir"):
            if hasattr(mod, name):
                original = getattr(mod, name)

                def wrapped(*a, _f=original, **k):
                    calls["n"] += 1
                    return _f(*a, **k)

                monkeypatch.setattr(mod, name, wrapped)
    n_pred = 0
    for p in sobol_points(fam.space, 20, skip=8):
        predict(s, p)
        n_pred += 1
    during = calls["n"]
    # counter sanity: a solve through the public entry point registers
    ode.solve_stiff(fam.make(fam.space.midpoint), (0.0, 1.0), fam.y0(fam.space.midpoint))
    ok = during == 0 and calls["n"] >= 1
    report(capsys, 8, ok, f"{n_pred} predictions, {during} solver invocations; counter live={calls['n'] >= 1}")
    assert ok
