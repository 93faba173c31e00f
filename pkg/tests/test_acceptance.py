"""Acceptance gate.

Each test records one pass/fail line (printed in the pytest terminal
summary, and directly with ``-s``). The Monte Carlo criteria use the
default ``McConfig`` design with 2000 replications.

Criterion 7 needs the regional spending/GDP panel: point
``PVARIV_REPLICATION_DATA`` at a long-format CSV with ``unit``, ``time``
and level columns (``PVARIV_SPENDING_VAR``/``PVARIV_GDP_VAR``, default
``exp``/``gdp``). Without it the criterion is skipped.
"""

import os
import time
from functools import lru_cache

import numpy as np
import pytest

from conftest import simulate
from pvariv.inference import IvMoments, ar_confidence_set, invert_quadric
from pvariv.irf import irf_point
from pvariv.montecarlo import McConfig, coverage_experiment
from pvariv.panel_data import GrowthSpec, PanelDataset, build_instrument, growth_transform, load_csv
from pvariv.pvar import fit_pvar, select_lag
from pvariv.svar_iv import first_stage, identify, iv_ratio, reduced_form

RESULTS: list[str] = []


def _record(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} | {detail}"
    RESULTS.append(line)
    print(line)
    return ok


def _random_fit(rng, strength=1.0):
    m = int(rng.integers(2, 4))
    p = int(rng.integers(1, 3))
    ds, z, _, _ = simulate(rng, n=int(rng.integers(5, 15)), t=int(rng.integers(25, 45)), m=m, p=p,
                           strength=strength)
    return fit_pvar(ds, p), z


def test_criterion_1_impact_identity():
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        model, z = _random_fit(rng)
        est = identify(model.residuals, z[:, model.p:])
        shock = float(rng.uniform(0.001, 2.0))
        res = irf_point(model, est.column, horizon=3, shock_size=shock)
        gap = np.abs(res.responses[0, 1:] / shock - est.beta) / np.maximum(1.0, np.abs(est.beta))
        worst = max(worst, float(gap.max()))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed < 10
    _record(1, "impact response / shock = IV ratio", ok, f"max rel gap {worst:.2e}, {elapsed:.1f}s")
    assert ok


def _projection_2sls(y, w, z):
    zmat = np.column_stack([np.ones_like(z), z])
    w_hat = zmat @ np.linalg.lstsq(zmat, w, rcond=None)[0]
    xmat = np.column_stack([np.ones_like(w_hat), w_hat])
    return np.linalg.lstsq(xmat, y, rcond=None)[0][1]


def test_criterion_2_two_stage_oracle():
    rng = np.random.default_rng(202)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        n, t, m = int(rng.integers(3, 12)), int(rng.integers(10, 40)), int(rng.integers(2, 5))
        z = rng.normal(size=(n, t)) * rng.uniform(0.01, 10) + rng.normal()
        u = rng.normal(size=(n, t, m)) @ np.linalg.cholesky(np.cov(rng.normal(size=(m, 3 * m)))).T
        u[..., 0] += rng.uniform(0.2, 2.0) * (z - z.mean())
        fs = first_stage(u[..., 0], z)
        rho = [reduced_form(u[..., j], z) for j in range(1, m)]
        beta = iv_ratio(rho, fs.delta)
        for j in range(1, m):
            ref = _projection_2sls(u[..., j].ravel(), u[..., 0].ravel(), z.ravel())
            worst = max(worst, abs(beta[j - 1] - ref) / max(1.0, abs(ref)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed < 5
    _record(2, "IV ratio = brute-force 2SLS projection", ok, f"max rel gap {worst:.2e}, {elapsed:.1f}s")
    assert ok


def test_criterion_3_counterfactual_oracle():
    rng = np.random.default_rng(303)
    start = time.perf_counter()
    horizon, draws, shock = 5, 10_000, 0.01
    worst_ratio, worst_abs = 0.0, 0.0
    for _ in range(10):
        model, z = _random_fit(rng)
        est = identify(model.residuals, z[:, model.p:])
        res = irf_point(model, est.column, horizon=horizon, shock_size=shock)
        p, m = model.p, model.m
        chol = np.linalg.cholesky(model.sigma)
        history = rng.normal(size=(draws, p, m))
        noise = rng.normal(size=(draws, horizon + 1, m)) @ chol.T
        impulse = shock * est.column.impulse

        def paths(extra):
            x = [history[:, p - 1 - l] for l in range(p)]  # x[0] most recent
            out = []
            for h in range(horizon + 1):
                val = noise[:, h] + (extra if h == 0 else 0.0)
                for l in range(p):
                    val = val + x[l] @ model.phi[l].T
                out.append(val)
                x = [val] + x[:-1]
            return np.stack(out, axis=1)

        diff = paths(impulse) - paths(np.zeros(m))
        mean = diff.mean(axis=0)
        se = diff.std(axis=0, ddof=1) / np.sqrt(draws)
        gap = np.abs(mean - res.responses)
        # common random numbers: se is ~0, so a float floor of 1e-10 applies
        worst_ratio = max(worst_ratio, float(np.max(gap / (3 * se + 1e-10))))
        worst_abs = max(worst_abs, float(gap.max()))
    elapsed = time.perf_counter() - start
    ok = worst_ratio <= 1.0 and elapsed < 120
    _record(3, "IRF = counterfactual simulation (10 models, h<=5)", ok,
            f"max |gap| {worst_abs:.2e}, max gap/(3se+1e-10) {worst_ratio:.3f}, {elapsed:.1f}s")
    assert ok


@lru_cache(maxsize=None)
def _strong_run():
    start = time.perf_counter()
    report = coverage_experiment(McConfig(reps=2000))
    return report, time.perf_counter() - start


@pytest.mark.slow
def test_criterion_4_ar_coverage_strong_instrument():
    report, elapsed = _strong_run()
    cov = report.coverage_irf[:2]
    ok = bool(np.all((cov >= 0.93) & (cov <= 0.97))) and elapsed < 900 and report.n_reps >= 2000
    _record(4, "AR coverage h=0,1 in [0.93, 0.97] at concentration ~204", ok,
            f"coverage {cov.round(4).tolist()}, mean F {report.mean_concentration:.1f}, "
            f"failed {report.n_failed}, {elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_criterion_5_cumulative_vs_point():
    report, elapsed = _strong_run()
    h = 8
    point, cum = report.coverage_irf[h], report.coverage_cirf[h]
    ok = cum >= point and 0.92 <= cum <= 0.98
    _record(5, "h=8 cumulative coverage >= point and in [0.92, 0.98]", ok,
            f"point {point:.4f}, cumulative {cum:.4f}")
    assert ok


@pytest.mark.slow
def test_criterion_6_weak_instrument():
    start = time.perf_counter()
    report = coverage_experiment(McConfig(reps=2000, concentration_target=0.5, H=0))
    elapsed = time.perf_counter() - start
    ar, wald, unb = report.coverage_irf[0], report.coverage_plugin[0], report.frac_unbounded[0]
    ok = (0.92 <= ar <= 0.98 and wald < 0.90 and unb > 0.5 and elapsed < 900
          and report.population_concentration < 1)
    _record(6, "weak instrument: AR valid, Wald undercovers, sets unbounded", ok,
            f"concentration {report.population_concentration:.2f}, AR {ar:.4f}, Wald {wald:.4f}, "
            f"unbounded {unb:.3f}, {elapsed:.0f}s")
    assert ok


def _replication_inputs(k):
    path = os.environ["PVARIV_REPLICATION_DATA"]
    spend = os.environ.get("PVARIV_SPENDING_VAR", "exp")
    gdp = os.environ.get("PVARIV_GDP_VAR", "gdp")
    raw = load_csv(path)
    ds = growth_transform(raw, [GrowthSpec(spend, gdp, k, name="w"), GrowthSpec(gdp, gdp, k, name="y")])
    return ds, build_instrument(raw, spend, gdp, horizon_k=k).values


def _table(ds, z, p):
    model = fit_pvar(ds, p)
    est = identify(model.residuals, z[:, p:])
    cs = invert_quadric(IvMoments(model, z).quadric(0, 1), 0.05)
    return model, est, cs


def test_criterion_7_replication():
    from scipy import stats

    if "PVARIV_REPLICATION_DATA" not in os.environ:
        reason = "replication dataset not supplied (set PVARIV_REPLICATION_DATA); criteria 1-6 and 8 decide"
        RESULTS.append(f"[SKIP] criterion 7: {reason}")
        pytest.skip(reason)
    checks = []
    ds1, z1 = _replication_inputs(1)
    checks.append(("lag order k=1 is 1", select_lag(ds1, 4).recommended["mbic"] == 1))
    model, est, cs = _table(ds1, z1, 1)
    lo, hi = cs.bounds
    checks += [
        ("delta 0.46", abs(est.delta - 0.46) <= 0.01),
        ("F 120.86", abs(est.f_stat - 120.86) <= 2),
        ("beta 1.74", abs(est.beta[0] - 1.74) <= 0.02),
        ("AR CS [0.53, 3.05]", abs(lo - 0.53) <= 0.05 and abs(hi - 3.05) <= 0.05),
    ]
    se = model.phi_se()[0]
    pv = 2 * stats.t.sf(np.abs(model.phi[0] / se), model.nobs - model.m)
    signs = np.sign(model.phi[0])
    checks.append(("AR coefficient signs", np.array_equal(signs, [[-1, -1], [1, 1]])))
    checks.append(("significance pattern", bool(pv[0, 0] > 0.10 and np.all(pv.ravel()[1:] < 0.01))))

    ds2, z2 = _replication_inputs(2)
    checks.append(("lag order k=2 is 2 by MBIC", select_lag(ds2, 4).recommended["mbic"] == 2))
    _, est2, cs2 = _table(ds2, z2, 2)
    lo2, hi2 = cs2.bounds
    checks += [
        ("k=2 delta 0.49", abs(est2.delta - 0.49) <= 0.01),
        ("k=2 F 89.50", abs(est2.f_stat - 89.50) <= 2),
        ("k=2 beta 2.27", abs(est2.beta[0] - 2.27) <= 0.02),
        ("k=2 AR CS [0.73, 3.97]", abs(lo2 - 0.73) <= 0.05 and abs(hi2 - 3.97) <= 0.05),
    ]
    failed = [name for name, ok in checks if not ok]
    ok = not failed
    _record(7, "replication of the regional estimates", ok,
            f"delta {est.delta:.3f}, F {est.f_stat:.2f}, beta {est.beta[0]:.3f}, CS [{lo:.2f}, {hi:.2f}]; "
            f"failed: {failed or 'none'}")
    assert ok


def test_criterion_8_invariances():
    rng = np.random.default_rng(808)
    start = time.perf_counter()
    worst_iv, worst_fe, nest_ok = 0.0, 0.0, True
    for _ in range(20):
        model, z = _random_fit(rng, strength=float(rng.uniform(0.05, 1.0)))
        zz = z[:, model.p:]
        a = identify(model.residuals, zz)
        c, d = float(rng.uniform(-50, 50)), float(rng.normal(0, 10))
        c = c if abs(c) > 0.01 else 1.0
        b = identify(model.residuals, c * zz + d)
        for x, y in ((a.beta, b.beta), ([a.f_stat], [b.f_stat]), (a.ar_stat, b.ar_stat)):
            x, y = np.asarray(x), np.asarray(y)
            worst_iv = max(worst_iv, float(np.max(np.abs(x - y) / np.maximum(1.0, np.abs(x)))))

        ds, _, _, _ = simulate(rng, n=6, t=25, m=model.m, p=model.p)
        shift = rng.normal(0, 100, size=(ds.n_units, 1, ds.n_vars))
        moved = PanelDataset(ds.unit_ids, ds.time_ids, ds.var_names, ds.values + shift)
        f1, f2 = fit_pvar(ds, model.p), fit_pvar(moved, model.p)
        worst_fe = max(worst_fe, float(np.max(np.abs(f1.phi - f2.phi))),
                       float(np.max(np.abs(f1.residuals - f2.residuals))))

        mom = IvMoments(model, z)
        h, s = int(rng.integers(0, 6)), int(rng.integers(0, model.m))
        sets = [ar_confidence_set(model, z, h, s, alpha=alpha, moments=mom) for alpha in (0.10, 0.05, 0.01)]
        for small, big in zip(sets, sets[1:]):
            for lo, hi in small.segments:
                nest_ok &= big.contains(lo) and big.contains(hi)
    elapsed = time.perf_counter() - start
    ok = worst_iv <= 1e-10 and worst_fe <= 1e-8 and nest_ok
    _record(8, "instrument rescaling, fixed-effect absorption, level nesting", ok,
            f"rescaling gap {worst_iv:.1e}, FE gap {worst_fe:.1e}, nesting {'ok' if nest_ok else 'violated'} "
            f"(20 fixtures), {elapsed:.1f}s")
    assert ok

