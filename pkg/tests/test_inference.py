import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import simulate, stable_phi
from pvariv.errors import DataError, GridInsufficient
from pvariv.inference import (
    ArQuadric,
    ConfidenceSet,
    IvMoments,
    WeakInstrumentWarning,
    ar_confidence_set,
    invert_quadric,
    ma_jacobian_exact,
    ma_jacobian_fd,
    plug_in_confidence_set,
    variance_lambda,
)
from pvariv.irf import ma_coefficients
from pvariv.pvar import fit_pvar
from pvariv.svar_iv import ar_statistic_point

CRIT = stats.chi2.ppf(0.95, 1)


def _fit(seed, strength=1.0, m=2, p=1, n=10, t=40):
    rng = np.random.default_rng(seed)
    ds, z, _, _ = simulate(rng, n=n, t=t, m=m, p=p, strength=strength)
    return fit_pvar(ds, p), z


# Jacobian of the MA coefficients


def _central_jacobian(coef, gamma, horizon, step=1e-6):
    """Oracle: central differences of C_h Gamma through the lag-matrix recursion."""
    mp, m = coef.shape
    p = mp // m

    def responses(c):
        phi = np.stack([c[l * m:(l + 1) * m, :].T for l in range(p)])
        return ma_coefficients(phi, horizon) @ gamma

    out = np.empty((horizon + 1, m, m * mp))
    for k in range(m):
        for a in range(mp):
            bump = np.zeros_like(coef)
            bump[a, k] = step
            out[:, :, k * mp + a] = (responses(coef + bump) - responses(coef - bump)) / (2 * step)
    return out


@pytest.mark.parametrize("m, p", [(2, 1), (2, 2), (3, 2)])
def test_jacobian_routes_agree(m, p):
    rng = np.random.default_rng(m * 10 + p)
    phi = stable_phi(rng, m, p)
    coef = np.hstack(list(phi)).T
    gamma = rng.normal(size=m)
    exact = ma_jacobian_exact(coef, gamma, 6)
    np.testing.assert_allclose(_central_jacobian(coef, gamma, 6), exact, atol=1e-8)
    np.testing.assert_allclose(ma_jacobian_fd(coef, gamma, 6), exact, atol=1e-5)
    # impact response does not depend on the slopes
    assert np.all(exact[0] == 0)


def test_exact_and_fd_sets_agree():
    model, z = _fit(1)
    fd = ar_confidence_set(model, z, 3, 1, moments=IvMoments(model, z, jacobian="fd"))
    ex = ar_confidence_set(model, z, 3, 1, moments=IvMoments(model, z, jacobian="exact"))
    np.testing.assert_allclose(np.array(fd.segments), np.array(ex.segments), rtol=1e-4)


# moments and the quadric


@pytest.mark.parametrize("variance", ["iid", "cluster"])
def test_impact_statistic_equals_pointwise_ar(variance):
    model, z = _fit(2)
    q = IvMoments(model, z, variance=variance).quadric(0, 1)
    y, w = model.residuals[..., 1], model.residuals[..., 0]
    zz = z[:, model.p:]
    for lam in (-3.0, 0.0, 0.4, 2.5):
        assert float(q.statistic(lam)) == pytest.approx(
            ar_statistic_point(y, w, zz, lam, variance=variance), rel=1e-9)


def test_full_length_instrument_is_aligned():
    model, z = _fit(3)
    a = IvMoments(model, z).quadric(2, 1)
    b = IvMoments(model, z[:, model.p:]).quadric(2, 1)
    assert a == b
    with pytest.raises(DataError):
        IvMoments(model, z[:, 3:])


def test_quadric_numerator_and_cumulative():
    model, z = _fit(4)
    mom = IvMoments(model, z)
    coefs = ma_coefficients(model.phi, 4)
    q = mom.quadric(4, 1)
    assert q.num == pytest.approx((coefs[4] @ mom.gamma)[1])
    assert q.den == pytest.approx(mom.gamma[0])
    qc = mom.quadric(4, 1, cumulative=True)
    assert qc.num == pytest.approx((coefs.sum(0) @ mom.gamma)[1])
    assert variance_lambda(model, z, 4, 1, 0.3, moments=mom) == pytest.approx(float(q.variance(0.3)))


def test_delta_method_variance_matches_simulation():
    # sampling variance of sqrt(n) g(lambda_true) across draws from one DGP
    rng = np.random.default_rng(5)
    phi = np.array([[[0.4, 0.1], [0.3, 0.2]]])
    r = np.array([[1.0, 0.0], [0.8, 0.6]])
    # true unit-normalized response at h = 2 to the first structural shock
    truth = (ma_coefficients(phi, 2)[2] @ (r[:, 0] / r[0, 0]))[1]
    draws, predicted = [], []
    for _ in range(300):
        ds, z, _, _ = simulate(rng, n=10, t=40, phi=phi, r=r)
        model = fit_pvar(ds, 1)
        mom = IvMoments(model, z)
        q = mom.quadric(2, 1)
        draws.append(np.sqrt(q.n) * (q.num - truth * q.den))
        predicted.append(float(q.variance(truth)))
    ratio = np.var(draws) / np.mean(predicted)
    assert 0.8 < ratio < 1.25


# inversion


def test_bounded_set_matches_closed_form_roots():
    q = ArQuadric(num=2.0, den=1.0, v11=4.0, v12=0.5, v22=1.0, n=50)
    cs = invert_quadric(q)
    a = q.n * q.den**2 - CRIT * q.v22
    b = -2 * q.n * q.num * q.den + 2 * CRIT * q.v12
    c = q.n * q.num**2 - CRIT * q.v11
    roots = np.sort(np.roots([a, b, c]).real)
    assert cs.connected and not cs.unbounded
    np.testing.assert_allclose(cs.segments[0], roots, rtol=1e-9)


def test_disconnected_set():
    q = ArQuadric(num=1.0, den=0.1, v11=1.0, v12=0.0, v22=1.0, n=10)
    cs = invert_quadric(q)
    roots = np.sort(np.roots([q.n * q.den**2 - CRIT, -2 * q.n * q.num * q.den, q.n - CRIT]).real)
    assert len(cs.segments) == 2 and cs.unbounded
    assert cs.segments[0][0] == -math.inf and cs.segments[1][1] == math.inf
    assert cs.segments[0][1] == pytest.approx(roots[0], rel=1e-9)
    assert cs.segments[1][0] == pytest.approx(roots[1], rel=1e-9)
    assert cs.contains(q.estimate) and not cs.contains(0.0)


def test_whole_line():
    # numerator also weak: every value is accepted
    q = ArQuadric(num=0.01, den=0.01, v11=1.0, v12=0.0, v22=1.0, n=10)
    cs = invert_quadric(q)
    assert cs.segments == ((-math.inf, math.inf),)


def test_custom_grid_and_empty():
    q = ArQuadric(num=2.0, den=1.0, v11=4.0, v12=0.5, v22=1.0, n=50)
    with pytest.raises(GridInsufficient):
        invert_quadric(q, grid=(10.0, 20.0, 101))
    empty = invert_quadric(q, grid=(10.0, 20.0, 101), allow_empty=True)
    assert empty.empty_on_grid and empty.segments == ()
    with pytest.raises(DataError):
        invert_quadric(q, grid=(1.0, 0.0, 10))
    with pytest.raises(DataError):
        invert_quadric(q, alpha=1.5)


@settings(max_examples=60, deadline=None)
@given(num=st.floats(-5, 5), den=st.floats(-3, 3).filter(lambda d: abs(d) > 1e-3),
       v11=st.floats(0.1, 10), v22=st.floats(0.1, 10), corr=st.floats(-0.95, 0.95),
       n=st.integers(5, 500), probe=st.floats(-50, 50))
def test_membership_agrees_with_statistic(num, den, v11, v22, corr, n, probe):
    q = ArQuadric(num, den, v11, corr * math.sqrt(v11 * v22), v22, n)
    cs = invert_quadric(q)
    stat = float(q.statistic(probe))
    if abs(stat - CRIT) > 1e-6 * CRIT:
        assert cs.contains(probe) == (stat <= CRIT)
    assert cs.contains(q.estimate)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 1000), h=st.integers(0, 5))
def test_sets_nest_across_levels(seed, h):
    model, z = _fit(seed, strength=0.3)
    mom = IvMoments(model, z)
    sets = [ar_confidence_set(model, z, h, 1, alpha=a, moments=mom) for a in (0.10, 0.05, 0.01)]
    for small, big in zip(sets, sets[1:]):
        for lo, hi in small.segments:
            assert big.contains(lo) and big.contains(hi)
        assert len(big.segments) <= 2


# plug-in comparison


def test_plug_in_interval():
    model, z = _fit(6)
    mom = IvMoments(model, z)
    q = mom.quadric(1, 1)
    cs = plug_in_confidence_set(model, z, 1, 1, moments=mom)
    half = stats.norm.ppf(0.975) * q.wald_se()
    np.testing.assert_allclose(cs.segments[0], (q.estimate - half, q.estimate + half))
    assert not cs.weak_warning


def test_plug_in_warns_when_weak():
    model, z = _fit(7, strength=0.0)
    mom = IvMoments(model, z)
    assert mom.first_stage_f < 10
    with pytest.warns(WeakInstrumentWarning):
        cs = plug_in_confidence_set(model, z, 0, 1, moments=mom)
    assert cs.weak_warning
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        plug_in_confidence_set(model, z, 0, 1, moments=mom, warn=False)


def test_first_stage_f_matches_identify():
    from pvariv.svar_iv import identify

    model, z = _fit(8)
    est = identify(model.residuals, z[:, 1:])
    assert IvMoments(model, z).first_stage_f == pytest.approx(est.f_stat, rel=1e-10)


# the set container


def test_confidence_set_helpers():
    cs = ConfidenceSet(0.95, ((-2.0, -1.0), (1.0, 4.0)))
    assert cs.width == 4.0 and cs.bounds == (-2.0, 4.0)
    assert cs.contains(-1.5) and not cs.contains(0.0)
    flipped = cs.scaled(-2.0)
    assert flipped.segments == ((-8.0, -2.0), (2.0, 4.0))
    open_set = ConfidenceSet(0.9, ((-math.inf, 1.0),))
    assert open_set.unbounded and open_set.to_dict()["segments"] == [["-inf", 1.0]]
    with pytest.raises(DataError):
        cs.scaled(0.0)
    assert math.isnan(ConfidenceSet(0.9, ()).bounds[0])
