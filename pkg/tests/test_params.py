import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qifcanard.params import (ForcingParams, GeneralMfParams, MultiPopParams, QifParams, SparseParams,
                              forcing_state, generalized_coefficients, rng_stream, sample_cauchy)


def test_cauchy_zero_width_returns_center():
    assert sample_cauchy(-0.5, 0.0, 3, "quantile").tolist() == [-0.5, -0.5, -0.5]


def test_cauchy_single_quantile_is_median():
    assert sample_cauchy(0.0, 1.0, 1, "quantile").tolist() == [0.0]


def test_cauchy_iid_median():
    x = sample_cauchy(5.0, 1.0, 100_000, "iid", seed=3)
    assert abs(np.median(x) - 5.0) < 0.02


def test_cauchy_quantiles_sorted_symmetric_and_deterministic():
    a = sample_cauchy(2.0, 0.5, 101, "quantile")
    assert np.all(np.diff(a) > 0)
    np.testing.assert_allclose(a - 2.0, -(a - 2.0)[::-1], atol=1e-12)
    assert np.array_equal(a, sample_cauchy(2.0, 0.5, 101, "quantile"))


def test_cauchy_iid_reproducible_per_seed():
    a = sample_cauchy(0, 1, 50, "iid", seed=7)
    b = sample_cauchy(0, 1, 50, "iid", seed=7)
    c = sample_cauchy(0, 1, 50, "iid", seed=8)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


@pytest.mark.parametrize("hwhm,n,mode", [(-1, 3, "quantile"), (1, 0, "quantile"), (1, 3, "sobol")])
def test_cauchy_rejects_bad_arguments(hwhm, n, mode):
    with pytest.raises(ValueError):
        sample_cauchy(0, hwhm, n, mode)


def test_streams_are_independent_and_reproducible():
    a = rng_stream(1, "currents").random(4)
    assert np.array_equal(a, rng_stream(1, "currents").random(4))
    assert not np.array_equal(a, rng_stream(1, "connectivity").random(4))
    assert not np.array_equal(a, rng_stream(2, "currents").random(4))


@pytest.mark.parametrize("args,expected", [
    ((0, 0, 15, 1), (0, 15)),
    ((math.pi, 1, 15, 1), (0, 15)),
    ((0, 2, 10, math.e), (-2, 12)),
])
def test_generalized_coefficients(args, expected):
    np.testing.assert_allclose(generalized_coefficients(*args), expected, atol=1e-14)


@pytest.mark.parametrize("a", [0.0, -1.0])
def test_generalized_coefficients_domain(a):
    with pytest.raises(ValueError):
        generalized_coefficients(0, 1, 1, a)


def test_general_params_properties():
    gp = GeneralMfParams(Gamma=math.pi, g=1.0, J=15.0, a=math.e)
    assert gp.gamma_tilde == pytest.approx(0.0, abs=1e-14)
    assert gp.J_tilde == pytest.approx(16.0)


def test_forcing_state_examples():
    fp = ForcingParams(A=2.0, eps=0.1, eta_bar=-3.0)
    assert forcing_state(0.0, fp) == (-3.0, 2.0)
    K, Q = forcing_state(0.5 * math.pi / fp.eps, fp)
    assert K == pytest.approx(-1.0) and Q == pytest.approx(0.0, abs=1e-15)


@given(t=st.floats(-1e4, 1e4), A=st.floats(0, 50), eps=st.floats(1e-3, 1), eta=st.floats(-20, 20))
def test_forcing_harmonic_invariant(t, A, eps, eta):
    K, Q = forcing_state(t, ForcingParams(A=A, eps=eps, eta_bar=eta))
    assert (K - eta) ** 2 + Q ** 2 == pytest.approx(A * A, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("factory", [
    lambda: ForcingParams(A=-1),
    lambda: ForcingParams(eps=0),
    lambda: QifParams(N=0),
    lambda: QifParams(tau_s=-1),
    lambda: QifParams(delta=-1),
    lambda: QifParams(V_t=0),
    lambda: GeneralMfParams(a=0),
    lambda: SparseParams(N=10, M=20),
    lambda: SparseParams(delta_gamma=-1),
    lambda: MultiPopParams((1, 1), (0, 0), (0, 0), (1, 1), [[1, 0], [0, 1]], forced=2),
    lambda: MultiPopParams((1,), (0,), (0,), (1,), [[1, 0], [0, 1]]),
])
def test_parameter_invariants(factory):
    with pytest.raises(ValueError):
        factory()


def test_reset_defaults_to_minus_threshold():
    assert QifParams(V_t=100).V_r == -100
    assert SparseParams().V_r == -100
