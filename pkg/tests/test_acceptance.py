"""Acceptance criteria, each run at its stated tolerance.

Every test records one PASS/FAIL line (shown in the terminal summary under
"acceptance criteria") before asserting.
"""
import math

import numpy as np
import pytest

from qifcanard.meanfield import MeanFieldModel, forced_initial_state, integrate, mpr_rhs, multipop_rhs
from qifcanard.network import build_dense, build_sparse, initial_state, integrate_network, simulate_single_theta
from qifcanard.params import ForcingParams, GeneralMfParams, MultiPopParams, QifParams, SparseParams
from qifcanard.slowfast import (classify_folded_singularity, drs_jacobian_fd, find_folds, scenario_classify)
from qifcanard.sweep import (MeanFieldSweep, NetworkSweep, SheetUnavailable, SingleCellSweep, branch_trace,
                             burst_rate_floor, route_classify, steepest_fraction, threshold_bisect)


def mf_model(eta_bar, tau_s=0.02, eps=0.05):
    return MeanFieldModel(GeneralMfParams(delta=1.0, J=15.0, tau_s=tau_s, eta_bar=eta_bar),
                          ForcingParams(eps=eps, eta_bar=eta_bar))


def test_c1_single_cell_threshold(report):
    sw = SingleCellSweep(-0.2, 6.0, 0.3, 0.01, "down", dt=2e-3)
    res = threshold_bisect(sw, 0.19, 0.22, 1e-5)
    width = res.bracket[1] - res.bracket[0]
    cts = (res.sample_lo.canard_time, res.sample_hi.canard_time)
    ok = 0.2025 <= res.A_star <= 0.2040 and width <= 1e-5 and min(cts) > 0
    assert report("C1", ok, f"A*={res.A_star:.7f} width={width:.2e} canard_times={cts[0]:.3f},{cts[1]:.3f}")


def test_c2_single_cell_route_to_bursting(report):
    sw = SingleCellSweep(0.5, 6.0, 0.3, 0.01, "up", dt=2e-3)
    br = branch_trace(sw, (0.83, 0.8892), n_coarse=21, refine_depth=12)
    frac, where = steepest_fraction(br, 1e-3)
    bursts = sum(f.burst for f in br.fates)
    assert report("C2", frac >= 0.9,
                  f"{frac:.3f} of the variation of 1/||s|| within relative width 1e-3 at A in "
                  f"[{where[0]:.6f}, {where[1]:.6f}]; {len(br.samples)} samples, {bursts} bursting")


def test_c3_folded_singularity_classification(report):
    g = find_folds(1.0, 15.0)
    got = {eta: {f.location: classify_folded_singularity(f, eta, g) for f in g.folds} for eta in (-15.1, 5.0)}
    cls = {eta: {k: v.cls for k, v in d.items()} for eta, d in got.items()}
    ok_a = cls[-15.1] == {"F-": "FoldedSaddle", "F+": "FoldedSaddle"}
    ok_b = cls[5.0] == {"F-": "FoldedCentre", "F+": "FoldedSaddle"}
    worst = 0.0
    for eta, d in got.items():
        for f in g.folds:
            fs = d[f.location]
            ev = np.sort_complex(np.linalg.eigvals(drs_jacobian_fd(f.v, 0.0, eta, g)).astype(complex))
            an = np.sort_complex(np.array(fs.eigenvalues, dtype=complex))
            worst = max(worst, float(np.max(np.abs(ev - an)) / abs(an[0])))
    ok_c = worst <= 1e-6
    gp = find_folds(1.0, 15.0, "printed")
    alt = {eta: "/".join(classify_folded_singularity(gp.fold(loc), eta, gp).cls for loc in ("F-", "F+"))
           for eta in (-15.1, 5.0)}
    assert report("C3", ok_a and ok_b and ok_c,
                  f"eta=-15.1 {cls[-15.1]}; eta=5 {cls[5.0]}; eigenvalue rel err {worst:.1e} "
                  f"[printed convention F-/F+: eta=-15.1 {alt[-15.1]}, eta=5 {alt[5.0]}]")


@pytest.mark.parametrize("eta_bar,start,bracket,labels", [
    (-15.1, "down", (12.0, 13.0), ("down-down", "down-up")),
    (5.0, "up", (10.0, 11.0), ("up-up", "up-down")),
])
def test_c4_meanfield_canard_transition(report, eta_bar, start, bracket, labels):
    eps = 0.05
    res = threshold_bisect(MeanFieldSweep(mf_model(eta_bar), start), *bracket, 1e-10)
    width = res.bracket[1] - res.bracket[0]
    fates = (res.sample_lo.fate.label, res.sample_hi.fate.label)
    cts = (res.sample_lo.canard_time, res.sample_hi.canard_time)
    ok = width <= 1e-10 and fates == labels and min(cts) >= 0.2 / eps
    assert report("C4", ok, f"eta={eta_bar}: A*={res.A_star:.12f} width={width:.1e} fates={fates} "
                            f"canard_times={cts[0]:.2f},{cts[1]:.2f} (>= {0.2 / eps:g})")


def test_c5_scenario_taxonomy(report):
    details, ok = [], True
    for eta_bar, case in ((-6.5, "I"), (-5.0, "II"), (-3.5, "III"), (-2.0, "IV")):
        m = mf_model(eta_bar)
        g = m.geometry()
        sc = scenario_classify(eta_bar, g)
        branches = {}
        for start in ("down", "up"):
            try:
                sw = MeanFieldSweep(m, start, measure="delta_r", geometry=g)
            except SheetUnavailable:
                continue
            branches[start] = branch_trace(sw, (0.0, 10.0), n_coarse=41, refine_depth=4)
        rep = route_classify(branches, sc)
        good = (sc.case == case and rep.ok() and len(rep.continuous) >= 1
                and bool(rep.interrupted) == (case in ("II", "III")))
        ok &= good
        details.append(f"{eta_bar}:{sc} {rep.branch_kinds['down']}/{rep.branch_kinds['up']}")
    assert report("C5", ok, "; ".join(details))


C6_ETA, C6_TAU, C6_EPS = -15.1, 0.002, 0.05


@pytest.mark.slow
def test_c6_network_tracks_meanfield(report):
    fp = ForcingParams(A=10.0, eps=C6_EPS, eta_bar=C6_ETA)
    m = MeanFieldModel(GeneralMfParams(delta=1.0, J=15.0, tau_s=C6_TAU, eta_bar=C6_ETA), fp)
    g = m.geometry()
    y0 = forced_initial_state(m, g, "down")
    T = fp.period
    mf = integrate(m, y0, (0, T), dt=1e-4, record_every=10)
    sys_ = build_dense(QifParams(N=10_000, J=15.0, tau_s=C6_TAU, eta_bar=C6_ETA, delta=1.0, V_t=100.0), fp)
    assert sys_.jump == pytest.approx(1.0 / (sys_.N * C6_TAU))
    sw = NetworkSweep(sys_, C6_ETA, 2e-4, "down", geometry=g)
    net, _ = integrate_network(sys_, initial_state(sys_, s0=y0[2]), (0, T), 2e-4, record_every=50)
    v_net = sw.smoothed_voltage(net)
    v_mf = np.interp(net.t, mf.t, mf.col("v"))
    rel_dev = float(np.max(np.abs(v_net - v_mf)) / (v_mf.max() - v_mf.min()))

    A_mf = threshold_bisect(MeanFieldSweep(m), 11.0, 13.0, 1e-10).A_star
    warm = NetworkSweep(sys_, C6_ETA, 2e-4, "down", geometry=g, warm_start=True)
    res = threshold_bisect(warm, 0.98 * A_mf, 1.02 * A_mf, 1e-6, relative=True)
    sep = (res.bracket[1] - res.bracket[0]) / res.A_star
    fates = (res.sample_lo.fate.label, res.sample_hi.fate.label)
    ok = rel_dev <= 0.05 and sep <= 1e-6 and fates == ("down-down", "down-up")
    assert report("C6", ok, f"tracking deviation {100 * rel_dev:.2f}% of the v-range at A=10; network A*="
                            f"{res.A_star:.9f} (mean field {A_mf:.9f}) separation {sep:.1e} fates={fates}")


@pytest.mark.slow
def test_c7_sparse_route_to_bursting(report):
    sp = SparseParams(N=10_000, M=1_000, J=1.0, tau_s=0.015, delta_gamma=0.3, eta_bar=-0.5, delta=1e-4,
                      V_t=100.0, forcing=ForcingParams(eps=0.1, eta_bar=-0.5))
    g = MeanFieldModel.sparse(sp).geometry()
    sys_ = build_sparse(sp)
    sw = NetworkSweep(sys_, sp.eta_bar, 1e-3, "down", amp_scale=sp.sqrt_M, geometry=g, fate_mode="rate",
                      warm_start=True, r_floor=burst_rate_floor(g), tau_dwell=0.15, rate_bin=0.15)
    br = branch_trace(sw, (15.5 / sp.sqrt_M, 16.5 / sp.sqrt_M), n_coarse=11, refine_depth=3)
    flips = [i for i in range(len(br.samples) - 1) if br.fates[i].burst != br.fates[i + 1].burst]
    assert flips, "no burst transition on the branch"
    i = flips[0]
    res = threshold_bisect(sw, br.A[i], br.A[i + 1], 1e-8, relative=True,
                           samples=(br.samples[i], br.samples[i + 1]))
    rel = (res.bracket[1] - res.bracket[0]) / res.A_star
    fates = (res.sample_lo.fate.label, res.sample_hi.fate.label)
    mono = res.sample_hi.extra["monotone_fraction"]
    ok = rel <= 1e-8 and fates == ("down-down", "down-up") and mono >= 0.8
    assert report("C7", ok, f"A*sqrt(M)={res.A_star * sp.sqrt_M:.8f} rel width {rel:.1e} fates={fates} "
                            f"monotone fraction {mono:.2f} over segment {res.sample_hi.extra['segment']}")


def _property_harmonic():
    m = MeanFieldModel(GeneralMfParams(delta=1.0, J=15.0, tau_s=0.02, eta_bar=-15.1),
                       ForcingParams(A=5.0, eps=0.05, eta_bar=-15.1))
    tr = integrate(m, forced_initial_state(m, m.geometry(), "down"), (0, m.forcing.period), dt=1e-3 / 0.05,
                   record_every=1)
    inv = (tr.col("K") + 15.1) ** 2 + tr.col("Q") ** 2
    return float(np.max(np.abs(inv - 25.0)) / 25.0) <= 1e-6


def _property_positivity():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        eta = rng.uniform(-10, 5)
        A = rng.uniform(0, 15)
        m = MeanFieldModel(GeneralMfParams(delta=rng.uniform(0.2, 2), J=rng.uniform(0, 20), tau_s=0.02,
                                           eta_bar=eta),
                           ForcingParams(A=A, eps=rng.uniform(0.02, 0.2), eta_bar=eta))
        y0 = np.array([rng.uniform(1e-3, 2), rng.uniform(-3, 1), rng.uniform(0, 2), eta, A])
        if not np.all(integrate(m, y0, (0, 30), dt=m.default_dt(), record_every=1).col("r") > 0):
            return False
    return True


def _property_fold_residual():
    rng = np.random.default_rng(7)
    for _ in range(100):
        g = find_folds(rng.uniform(0.2, 3), rng.uniform(10, 40))
        for f in g.folds:
            _, d1, d2 = g.derivatives(f.v)
            if abs(d1) > 1e-10 * (1 + abs(d2) * abs(f.v)):
                return False
    return True


def _property_multipop():
    rng = np.random.default_rng(11)
    fp = ForcingParams(A=2.0, eps=0.05, eta_bar=-4.0)
    for _ in range(100):
        d, J = rng.uniform(0.1, 3), rng.uniform(-20, 20)
        p = MultiPopParams(deltas=(d,), gamma_tildes=(0.0,), eta_bars=(-4.0,), tau_s=(0.02,), J_tilde=[[J]],
                           forcing=fp)
        y = np.array([rng.uniform(1e-3, 5), rng.uniform(-5, 2), rng.uniform(0, 5), rng.uniform(-10, 5),
                      rng.uniform(-5, 5)])
        if not np.array_equal(multipop_rhs(y, p), mpr_rhs(y, GeneralMfParams(delta=d, J=J, tau_s=0.02), fp)):
            return False
    return True


def _property_theta_vs_v():
    dt = 1e-3
    fp = ForcingParams(A=0.3, eps=0.05, eta_bar=1.0)
    run = simulate_single_theta(1.0, 6.0, 0.3, fp, (0, 12), dt, theta0=-2 * math.atan(100.0))
    sys_ = build_dense(QifParams(N=1, J=6.0, tau_s=0.3, eta_bar=1.0, delta=0.0), fp, hold=True)
    st = initial_state(sys_)
    st.V[:] = -100.0
    integrate_network(sys_, st, (0, 12), dt, keep_spikes=True)
    n = min(run.spikes.size, len(st.spike_log))
    return n >= 5 and float(np.max(np.abs(run.spikes[:n] - st.spike_log.t[:n]))) <= 5 * dt


def _dense_run(perm=None):
    sys_ = build_dense(QifParams(N=8, J=15.0, tau_s=0.02, eta_bar=1.0, delta=2.0),
                       ForcingParams(A=2.0, eps=0.05, eta_bar=1.0), eta_mode="iid")
    st = initial_state(sys_, seed=3)
    if perm is not None:
        sys_.eta = sys_.eta[perm].copy()
        st.V = st.V[perm].copy()
    integrate_network(sys_, st, (0, 3), 1e-3, keep_spikes=True)
    return st


def _property_determinism():
    a, b = _dense_run(), _dense_run()
    return (np.array_equal(a.V, b.V) and np.array_equal(a.s, b.s)
            and np.array_equal(a.spike_log.t, b.spike_log.t) and len(a.spike_log) > 0)


def _property_permutation():
    perm = np.array([3, 0, 7, 1, 6, 2, 5, 4])
    a, b = _dense_run(), _dense_run(perm)
    key_a = sorted(zip(a.spike_log.t.tolist(), a.spike_log.neuron.tolist()))
    key_b = sorted(zip(b.spike_log.t.tolist(), perm[b.spike_log.neuron].tolist()))
    return np.array_equal(b.V, a.V[perm]) and key_a == key_b


def test_c8_property_suites(report):
    checks = {
        "harmonic invariant": _property_harmonic,
        "r-positivity (100 runs)": _property_positivity,
        "fold residual": _property_fold_residual,
        "p=1 multipop": _property_multipop,
        "theta vs V spikes": _property_theta_vs_v,
        "determinism": _property_determinism,
        "permutation equivariance": _property_permutation,
    }
    results = {name: bool(fn()) for name, fn in checks.items()}
    failed = [k for k, v in results.items() if not v]
    assert report("C8", not failed, "all hold" if not failed else "failed: " + ", ".join(failed))
