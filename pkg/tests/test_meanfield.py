import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qifcanard.meanfield import (MeanFieldModel, NonFiniteState, PositivityViolation, StepSizeUnderflow,
                                 burst_measures, forced_initial_state, integrate, mpr_rhs, sheet_state,
                                 sparse_heuristic_rhs)
from qifcanard.params import ForcingParams, GeneralMfParams, SparseParams, forcing_state
from qifcanard.slowfast import psi_eval


def mf_model(A=0.0, eta_bar=-15.1, convention="pi2"):
    return MeanFieldModel(GeneralMfParams(delta=1.0, J=15.0, tau_s=0.02, eta_bar=eta_bar),
                          ForcingParams(A=A, eps=0.05, eta_bar=eta_bar), convention)


def test_rhs_components():
    p = GeneralMfParams(delta=1.0, J=15.0, tau_s=0.02)
    fp = ForcingParams(A=1.0, eps=0.05, eta_bar=-3.0)
    r, v, s, K, Q = 0.3, -0.7, 0.2, -2.5, 0.4
    for conv, c in (("pi2", math.pi ** 2), ("printed", math.pi)):
        d = mpr_rhs(np.array([r, v, s, K, Q]), p, fp, conv)
        assert d[0] == pytest.approx(1 / math.pi + 2 * r * v)
        assert d[1] == pytest.approx(v * v - c * r * r + 15 * s + K)
        assert d[2] == pytest.approx((r - s) / 0.02)
        assert d[3] == pytest.approx(0.05 * Q)
        assert d[4] == pytest.approx(-0.05 * (K + 3.0))


def test_unknown_convention_rejected():
    with pytest.raises(ValueError, match="convention"):
        mpr_rhs(np.ones(5), GeneralMfParams(), ForcingParams(), "pi")


def test_rate_equation_vanishes_on_manifold_rate():
    v = -0.8
    r = 1.0 / (-2 * math.pi * v)
    d = mpr_rhs(np.array([r, v, r, 0.0, 0.0]), GeneralMfParams(delta=1.0), ForcingParams())
    assert abs(d[0]) < 1e-15


@pytest.mark.parametrize("convention", ["pi2", "printed"])
@pytest.mark.parametrize("v", [-3.0, -1.0, -0.5, -0.1])
def test_manifold_points_are_fast_equilibria(convention, v):
    p = GeneralMfParams(delta=1.0, J=15.0)
    r = -1.0 / (2 * math.pi * v)
    K = -psi_eval(v, 1.0, 15.0, convention)
    d = mpr_rhs(np.array([r, v, r, K, 0.0]), p, ForcingParams(), convention)
    assert np.max(np.abs(d[:3])) <= 1e-10 * max(1.0, abs(K))


def test_sparse_heuristic_rhs_components():
    sp = SparseParams()
    r, v, s, K, Q = 1e-3, -2.0, 2e-3, -0.4, 0.1
    d = sparse_heuristic_rhs(np.array([r, v, s, K, Q]), sp)
    sm = math.sqrt(sp.M)
    assert d[0] == pytest.approx(sp.delta / math.pi + 2 * r * v + sp.J * sp.delta_gamma * s / math.pi)
    assert d[1] == pytest.approx(v * v + sm * (K + sp.J * s) - (math.pi * r) ** 2)
    assert d[2] == pytest.approx((r - s) / sp.tau_s)
    assert d[3] == pytest.approx(sp.forcing.eps * Q)
    assert d[4] == pytest.approx(-sp.forcing.eps * (K - sp.forcing.eta_bar))


def test_sparse_reduces_to_plain_model():
    sp = SparseParams(N=10, M=1, delta_gamma=0.0, J=15.0, delta=1.0, tau_s=0.02,
                      forcing=ForcingParams(eps=0.05, eta_bar=-3.0))
    y = np.array([0.2, -0.5, 0.1, -3.0, 0.5])
    plain = mpr_rhs(y, GeneralMfParams(delta=1.0, J=15.0, tau_s=0.02), sp.forcing)
    np.testing.assert_allclose(sparse_heuristic_rhs(y, sp), plain, rtol=1e-15)


@given(s=st.floats(0, 100))
def test_rate_is_pushed_up_at_zero(s):
    sp = SparseParams()
    assert sparse_heuristic_rhs(np.array([0.0, -1.0, s, 0.0, 0.0]), sp)[0] > 0
    assert mpr_rhs(np.array([0.0, -1.0, s, 0.0, 0.0]), GeneralMfParams(), ForcingParams())[0] > 0


def test_sparse_geometry_has_folds_at_tiny_rates():
    g = MeanFieldModel.sparse(SparseParams()).geometry()
    assert len(g.folds) == 2
    assert g.fold("F-").v == pytest.approx(-0.09833, rel=1e-3)
    assert g.fold("F+").v == pytest.approx(-0.047756, rel=1e-3)
    assert g.eta_minus == pytest.approx(-0.00062, abs=2e-5)
    assert g.eta_plus == pytest.approx(-0.80109, rel=1e-4)
    assert g.rate(g.fold("F-").v) < 1e-3
    assert g.rate(g.fold("F+").v) < 2.0


@pytest.mark.parametrize("method,tol", [("rk4", 1e-6), ("heun", 1e-2)])
def test_harmonic_invariant_over_one_period(method, tol):
    m = mf_model(A=3.0)
    y0 = forced_initial_state(m, m.geometry(), "down")
    T = m.forcing.period
    dt = 1e-3 / m.forcing.eps if method == "rk4" else m.default_dt()
    rhs = m if method == "rk4" else (lambda t, y: m(t, y))
    tr = integrate(rhs, y0, (0, T), dt=dt, method=method, record_every=100, positive=())
    inv = (tr.col("K") + 15.1) ** 2 + tr.col("Q") ** 2
    assert np.max(np.abs(inv - 9.0)) / 9.0 <= tol


def test_kernel_rk4_matches_python_rk4(backend):
    m = mf_model(A=12.0)
    y0 = forced_initial_state(m, m.geometry(), "down")
    a = integrate(m, y0, (0, 20), dt=1e-3, record_every=50, backend=backend)
    b = integrate(lambda t, y: m(t, y), y0, (0, 20), dt=1e-3, record_every=50)
    np.testing.assert_allclose(a.y, b.y, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(a.t, b.t, rtol=1e-14)


def test_forcing_matches_exact_solution():
    m = mf_model(A=5.0)
    y0 = forced_initial_state(m, m.geometry(), "down")
    tr = integrate(m, y0, (0, 40), dt=m.default_dt(), record_every=200)
    K, Q = forcing_state(tr.t, m.forcing)
    np.testing.assert_allclose(tr.col("K"), K, atol=1e-9)
    np.testing.assert_allclose(tr.col("Q"), Q, atol=1e-9)


def test_rkf45_agrees_with_rk4_and_reports_steps():
    m = mf_model(A=8.0)
    y0 = forced_initial_state(m, m.geometry(), "down")
    te = np.linspace(0, 30, 31)
    a = integrate(m, y0, (0, 30), dt=1e-3, method="rkf45", t_eval=te)
    b = integrate(m, y0, (0, 30), dt=1e-4, record_every=10_000)
    np.testing.assert_allclose(a.t, te)
    np.testing.assert_allclose(a.y, b.y, rtol=1e-5, atol=1e-7)
    assert a.accepted > 0 and a.rejected >= 0


def test_rkf45_step_underflow():
    f = lambda t, y: np.array([1.0 / (1.0 - t)])
    with pytest.raises((StepSizeUnderflow, NonFiniteState)):
        integrate(f, [1.0], (0, 2), dt=1e-3, method="rkf45", positive=(), max_steps=100_000)


def test_nonfinite_state_raises():
    f = lambda t, y: y * y
    with pytest.raises(NonFiniteState) as err:
        integrate(f, [1.0], (0, 2), dt=1e-2, positive=())
    assert err.value.t is not None


def test_positivity_violation_raises():
    f = lambda t, y: np.array([-100.0])
    with pytest.raises(PositivityViolation):
        integrate(f, [1.0], (0, 1), dt=1e-2)


def test_invalid_arguments():
    m = mf_model()
    with pytest.raises(ValueError):
        integrate(m, np.ones(5), (1, 0), dt=1e-3)
    with pytest.raises(ValueError):
        integrate(m, np.ones(5), (0, 1), dt=0)
    with pytest.raises(ValueError):
        integrate(lambda t, y: y, np.ones(5), (0, 1), dt=1e-2, method="euler")


@settings(max_examples=100)
@given(seed=st.integers(0, 2 ** 31 - 1))
def test_rate_stays_positive_on_random_runs(seed):
    rng = np.random.default_rng(seed)
    eta = rng.uniform(-10, 5)
    A = rng.uniform(0, 15)
    m = MeanFieldModel(GeneralMfParams(delta=rng.uniform(0.2, 2), J=rng.uniform(0, 20), tau_s=0.02,
                                       eta_bar=eta),
                       ForcingParams(A=A, eps=rng.uniform(0.02, 0.2), eta_bar=eta))
    y0 = np.array([rng.uniform(1e-3, 2), rng.uniform(-3, 1), rng.uniform(0, 2), eta, A])
    tr = integrate(m, y0, (0, 20), dt=m.default_dt(), record_every=20)
    assert np.all(tr.col("r") > 0)


def test_sheet_state_is_on_manifold():
    m = mf_model()
    g = m.geometry()
    for sheet in ("down", "up"):
        y = sheet_state(g, -4.0, sheet)
        d = m(0.0, y)
        assert np.max(np.abs(d[:3])) < 1e-9


def test_nearby_amplitudes_split_fates():
    from qifcanard.sweep import MeanFieldSweep
    sw = MeanFieldSweep(mf_model())
    lo, hi = sw(12.11), sw(12.12)
    assert lo.fate.label == "down-down" and hi.fate.label == "down-up"


def test_burst_measures_examples():
    t = np.linspace(0, 70, 701)
    bm = burst_measures(t, np.full_like(t, 2.0), np.full_like(t, 0.5))
    assert bm.snorm == pytest.approx(35.0) and bm.inv_snorm == pytest.approx(1 / 35.0)
    assert bm.delta_r == 0.0
    assert burst_measures(t, t, np.zeros_like(t)).inv_snorm == math.inf
    bm = burst_measures(t, np.sin(t), t, window=(10, 20))
    assert bm.snorm == pytest.approx(150.0)
    with pytest.raises(ValueError):
        burst_measures(t, t, t, window=(-1, 5))
