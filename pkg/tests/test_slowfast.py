import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from qifcanard.meanfield import MeanFieldModel
from qifcanard.params import ForcingParams, GeneralMfParams
from qifcanard.slowfast import (FoldSearchError, NoExcitableStructure, SingularityError,
                                classify_folded_singularity, drs_flow, drs_jacobian_fd, find_folds,
                                psi_derivatives, psi_eval, reduced_flow, scenario_classify,
                                singular_canards)


@pytest.fixture(scope="module")
def geom():
    return find_folds(1.0, 15.0)


def test_psi_printed_example():
    assert psi_eval(-1.0, 1.0, 15.0, "printed") == pytest.approx(
        1 - 1 / (4 * math.pi) + 15 / (2 * math.pi), abs=1e-12)
    assert psi_eval(-1.0, 1.0, 15.0, "printed") == pytest.approx(3.307747, abs=1e-6)


@pytest.mark.parametrize("convention", ["pi2", "printed"])
def test_psi_zero_heterogeneity_limit(convention):
    for v in (-3.0, -0.2):
        assert psi_eval(v, 0.0, 15.0, convention) == v * v


def test_psi_default_convention_formula():
    v = -0.7
    assert psi_eval(v, 1.0, 15.0) == pytest.approx(v * v - 1 / (4 * v * v) - 15 / (2 * math.pi * v))


def test_psi_singular_at_zero():
    with pytest.raises(SingularityError):
        psi_eval(0.0, 1.0, 15.0)


@given(v=st.floats(-20, -0.05))
def test_psi_derivatives_match_finite_differences(v):
    h = 1e-5 * max(1.0, abs(v))
    psi, d1, d2 = psi_derivatives(v, 1.0, 15.0)
    p = lambda x: psi_eval(x, 1.0, 15.0)
    assert d1 == pytest.approx((p(v + h) - p(v - h)) / (2 * h), rel=1e-5, abs=1e-6)
    dp = lambda x: psi_derivatives(x, 1.0, 15.0)[1]
    assert d2 == pytest.approx((dp(v + h) - dp(v - h)) / (2 * h), rel=1e-5, abs=1e-5)


def test_weak_coupling_has_no_folds():
    g = find_folds(1.0, 1.0)
    assert g.folds == [] and g.eta_zero is None
    assert [s.name for s in g.sheets] == ["single"]


def test_strong_coupling_fold_values(geom):
    assert len(geom.folds) == 2
    assert all(f.K < 0 for f in geom.folds)
    assert geom.eta_plus < geom.eta_zero < geom.eta_minus < 0
    assert geom.fold("F-").v == pytest.approx(-0.97899, abs=1e-5)
    assert geom.fold("F+").v == pytest.approx(-0.21110, abs=1e-5)
    assert geom.eta_minus == pytest.approx(-3.13613, abs=1e-5)
    assert geom.eta_plus == pytest.approx(-5.74353, abs=1e-5)
    assert geom.eta_zero == pytest.approx(-4.4398, abs=1e-4)


def test_sheet_labels_alternate(geom):
    names = [(s.name, s.attracting) for s in geom.sheets]
    assert names == [("down", True), ("repelling", False), ("up", True)]


def test_odd_sign_changes_report_trace():
    with pytest.raises(FoldSearchError) as err:
        find_folds(1.0, 15.0, v_window=(-0.5, -1e-4))
    assert err.value.trace["sign_changes"].size == 1


@settings(max_examples=100)
@given(delta=st.floats(0.1, 3.0), J=st.floats(5.0, 40.0),
       convention=st.sampled_from(["pi2", "printed"]))
def test_fold_residual(delta, J, convention):
    try:
        g = find_folds(delta, J, convention)
    except FoldSearchError:
        assume(False)
    for f in g.folds:
        _, d1, d2 = g.derivatives(f.v)
        assert abs(d1) <= 1e-10 * (1 + abs(d2) * abs(f.v))


@pytest.mark.parametrize("eta_bar,expect", [(-15.1, {"F-": "FoldedSaddle", "F+": "FoldedCentre"}),
                                            (5.0, {"F-": "FoldedCentre", "F+": "FoldedSaddle"})])
def test_classification_default_convention(geom, eta_bar, expect):
    got = {f.location: classify_folded_singularity(f, eta_bar, geom).cls for f in geom.folds}
    assert got == expect


@pytest.mark.parametrize("eta_bar,expect", [(-15.1, {"F-": "FoldedSaddle", "F+": "FoldedSaddle"}),
                                            (5.0, {"F-": "FoldedCentre", "F+": "FoldedSaddle"})])
def test_classification_printed_convention(eta_bar, expect):
    g = find_folds(1.0, 15.0, "printed")
    got = {f.location: classify_folded_singularity(f, eta_bar, g).cls for f in g.folds}
    assert got == expect


def test_degenerate_at_fold_value(geom):
    f = geom.fold("F-")
    fs = classify_folded_singularity(f, geom.eta_minus, geom)
    assert fs.cls == "Degenerate"


def test_eigenvalues_are_roots_of_sigma(geom):
    for eta_bar in (-15.1, 5.0):
        for f in geom.folds:
            fs = classify_folded_singularity(f, eta_bar, geom)
            lam = fs.eigenvalues
            assert lam[0] * lam[1] == pytest.approx(-fs.sigma, rel=1e-12)
            assert lam[0] + lam[1] == 0


def test_drs_equilibrium_at_fold(geom):
    for f in geom.folds:
        dv, dq = drs_flow(f.v, 0.0, -15.1, geom)
        assert dv == 0.0 and abs(dq) < 1e-8


@pytest.mark.parametrize("eta_bar", [-15.1, 5.0])
def test_drs_jacobian_matches_finite_differences(geom, eta_bar):
    for f in geom.folds:
        fs = classify_folded_singularity(f, eta_bar, geom)
        J = drs_jacobian_fd(f.v, 0.0, eta_bar, geom)
        assert J[0, 0] == 0 and J[0, 1] == pytest.approx(1.0, rel=1e-9)
        assert abs(J[1, 1]) <= 1e-6 * abs(fs.sigma)
        assert J[1, 0] == pytest.approx(fs.sigma, rel=1e-6)
        ev = np.sort_complex(np.linalg.eigvals(J).astype(complex))
        an = np.sort_complex(np.array(fs.eigenvalues, dtype=complex))
        assert np.max(np.abs(ev - an)) <= 1e-6 * abs(an[0])


@settings(max_examples=100)
@given(delta=st.floats(0.2, 3.0), J=st.floats(8.0, 40.0), eta_bar=st.floats(-30.0, 10.0))
def test_sigma_sign_agrees_with_numerical_eigenvalues(delta, J, eta_bar):
    try:
        g = find_folds(delta, J)
    except FoldSearchError:
        assume(False)
    assume(len(g.folds) == 2)
    for f in g.folds:
        fs = classify_folded_singularity(f, eta_bar, g)
        assume(fs.cls != "Degenerate")
        J_fd = drs_jacobian_fd(f.v, 0.0, eta_bar, g, h=1e-6 * max(1.0, abs(f.v)))
        prod = np.prod(np.linalg.eigvals(J_fd)).real
        assume(abs(prod) > 1e-6 * max(1.0, abs(fs.sigma)))
        assert (fs.sigma > 0) == (prod < 0)


def test_reduced_flow_orientation(geom):
    Q, eta_bar = 0.7, -15.1
    for sheet in geom.sheets:
        v = geom.branch_v(-4.4, sheet.name)
        drs_v = drs_flow(v, Q, eta_bar, geom)[0]
        red_v = reduced_flow(v, Q, eta_bar, geom)[0]
        assert (np.sign(drs_v) == np.sign(red_v)) == sheet.attracting


def test_sheet_stability_from_fast_jacobian():
    m = MeanFieldModel(GeneralMfParams(delta=1.0, J=15.0, tau_s=0.02), ForcingParams(eta_bar=-4.4))
    g = m.geometry()
    K_ranges = {"down": (-12.0, g.eta_minus), "repelling": (g.eta_plus, g.eta_minus), "up": (g.eta_plus, 2.0)}
    for sheet in g.sheets:
        Ks = np.linspace(*K_ranges[sheet.name], 22)[1:-1]
        for K in Ks:
            v = g.branch_v(K, sheet.name)
            r = g.rate(v)
            ev = np.linalg.eigvals(m.fast_jacobian(np.array([r, v, r, K, 0.0])))
            if sheet.attracting:
                assert np.all(ev.real < 0), (sheet.name, K, ev)
            else:
                assert np.any(ev.real > 0), (sheet.name, K, ev)


def test_singular_canards_construction(geom):
    fs = classify_folded_singularity(geom.fold("F-"), -15.1, geom)
    sc = singular_canards(fs, -15.1, geom)
    scale = abs(geom.folds[1].v - geom.folds[0].v)
    for arr in (sc.true, sc.faux):
        d = np.hypot(arr[:, 0] - fs.v, arr[:, 2])
        assert d.min() <= 1e-6 * scale
        np.testing.assert_allclose(arr[:, 1], geom.K_of_v(arr[:, 0]))
    dpsi = geom.derivatives(sc.true[:, 0])[1]
    assert dpsi.min() < 0 < dpsi.max()
    # the true canard enters the repelling sheet forward in the reduced flow
    v0, _, Q0 = sc.true[0]
    assert (v0 < fs.v) == (reduced_flow(v0, Q0, -15.1, geom)[0] > 0)


def test_singular_canards_need_saddle(geom):
    fs = classify_folded_singularity(geom.fold("F+"), -15.1, geom)
    with pytest.raises(ValueError, match="saddle"):
        singular_canards(fs, -15.1, geom)


def test_meanfield_canard_tracks_singular_canard():
    from qifcanard.sweep import MeanFieldSweep
    eta_bar, eps = -15.1, 0.05
    m = MeanFieldModel(GeneralMfParams(delta=1.0, J=15.0, tau_s=0.02, eta_bar=eta_bar),
                       ForcingParams(eps=eps, eta_bar=eta_bar))
    g = m.geometry()
    fs = classify_folded_singularity(g.fold("F-"), eta_bar, g)
    sc = singular_canards(fs, eta_bar, g)
    traj, window = MeanFieldSweep(m).run(12.115115329885)
    inw = (traj.t >= window[0]) & (traj.t <= window[1])
    v, K, Q = traj.col("v")[inw], traj.col("K")[inw], traj.col("Q")[inw]
    near = (np.abs(v - fs.v) < 0.15) & (np.abs(Q) < 3)
    assert near.sum() > 50
    for cols, pts in (((0, 2), np.column_stack([v[near], Q[near]])),
                      ((0, 1), np.column_stack([v[near], K[near]]))):
        curve = sc.true[:, cols]
        dist = np.min(np.hypot(pts[:, None, 0] - curve[None, :, 0], pts[:, None, 1] - curve[None, :, 1]), axis=1)
        assert dist.max() <= math.sqrt(eps)


@pytest.mark.parametrize("eta_bar,case", [(-6.5, "I"), (-5.0, "II"), (-3.5, "III"), (-2.0, "IV")])
def test_scenario_examples(geom, eta_bar, case):
    assert scenario_classify(eta_bar, geom).case == case


def test_scenario_boundaries(geom):
    rep = scenario_classify(geom.eta_zero, geom)
    assert rep.case is None and rep.boundary == ("II", "III") and str(rep) == "boundary II/III"
    assert scenario_classify(geom.eta_plus, geom).boundary == ("I", "II")


def test_scenario_needs_folds():
    with pytest.raises(NoExcitableStructure, match="no excitable structure"):
        scenario_classify(0.0, find_folds(1.0, 1.0))


@given(eta_bar=st.floats(-50, 50))
def test_scenario_is_a_partition(geom, eta_bar):
    rep = scenario_classify(eta_bar, geom)
    assert (rep.case is None) != (rep.boundary is None)
    if rep.case:
        assert rep.case in ("I", "II", "III", "IV")


def test_geometry_json(geom):
    doc = geom.to_json(eta_bar=-15.1)
    assert set(doc) == {"convention", "folds", "eta_plus", "eta_minus", "eta_zero", "singularities"}
    assert [s["class"] for s in doc["singularities"]] == ["FoldedSaddle", "FoldedCentre"]


def test_manifold_sample_is_on_manifold(geom):
    smp = geom.sample((-8.0, -1.0), n=50)
    assert set(smp["sheet"]) == {"down", "repelling", "up"}
    np.testing.assert_allclose(smp["K"], geom.K_of_v(smp["v"]))
    np.testing.assert_allclose(smp["r"], -1.0 / (2 * math.pi * smp["v"]))
