"""Orbit-fate classification, threshold bisection and branch tracing in A.

Every evaluation runs one transient forcing period and then classifies one
evaluation period. The evaluation period starts where the requested start
sheet should be occupied: at the input minimum (``eps t = 3 pi / 2``) for
down-starts and at the maximum (``eps t = pi / 2``) for up-starts. A run
whose state at that instant is on the other sheet is reported as *lost*.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from qifcanard.meanfield import (MeanFieldModel, burst_measures, forced_initial_state,
                                 integrate)
from qifcanard.network import (NetworkSystem, initial_state, integrate_network, integrate_network_until,
                               simulate_single_theta)
from qifcanard.params import ForcingParams
from qifcanard.slowfast import ManifoldGeometry

OTHER = {"down": "up", "up": "down"}
WINDOW_PHASE = {"down": 1.5 * math.pi, "up": 0.5 * math.pi}


class TrajectoryTooShort(ValueError):
    pass


class BracketError(ValueError):
    def __init__(self, message, fate_lo=None, fate_hi=None):
        super().__init__(message)
        self.fate_lo = fate_lo
        self.fate_hi = fate_hi


class SheetUnavailable(ValueError):
    """The requested start sheet does not exist at ``K = eta_bar``."""


@dataclass(frozen=True)
class OrbitFate:
    start_sheet: str
    end_sheet: str
    canard_time: float
    burst: bool
    requested: str = ""
    lost: bool = False

    @property
    def label(self) -> str:
        return f"{self.start_sheet}-{self.end_sheet}"

    @property
    def kind(self) -> str:
        if self.lost:
            return "lost"
        return "burst" if self.burst else "quiet"


def evaluation_window(eps, start, transient_periods=1.0):
    """``(t_a, t_b)`` of the evaluation period for a run started at phase 0."""
    T = 2.0 * math.pi / eps
    t_a = transient_periods * T + WINDOW_PHASE[start] / eps
    return t_a, t_a + T


def _window_mask(t, window):
    if window is None:
        return np.ones(t.size, bool)
    lo, hi = window
    tol = 1e-9 * max(1.0, abs(hi))
    if t.size == 0 or t[0] > lo + tol or t[-1] < hi - tol:
        span = (t[0], t[-1]) if t.size else ()
        raise TrajectoryTooShort(f"trajectory span {span} does not cover the window {window}")
    return (t >= lo - tol) & (t <= hi + tol)


def _durations(t):
    """Weight of each sample for time integrals (half-cell widths)."""
    if t.size < 2:
        return np.zeros(t.size)
    d = np.diff(t)
    w = np.zeros(t.size)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


class SheetLocator:
    """Nearest point of S0 in the ``(K, v)`` plane via a k-d tree."""

    LABELS = ("down", "repelling", "up", "single")

    def __init__(self, geometry: ManifoldGeometry, K_range, n=4000):
        self.geometry = geometry
        pts = geometry.sample(K_range, n)
        self.labels = np.array([self.LABELS.index(s) for s in pts["sheet"]], dtype=int)
        self.points = np.column_stack([pts["K"], pts["v"]])
        self.tree = cKDTree(self.points)
        att = self.labels != 1
        self.att_labels = self.labels[att]
        self.att_tree = cKDTree(self.points[att])

    def nearest(self, K, v):
        d, i = self.tree.query(np.column_stack([K, v]))
        return d, self.labels[i]

    def nearest_attracting(self, K, v):
        d, i = self.att_tree.query(np.column_stack([K, v]))
        names = np.array(self.LABELS)[self.att_labels[i]]
        return d, names


def default_rho(geometry: ManifoldGeometry):
    return 0.05 * (geometry.eta_minus - geometry.eta_plus)


def burst_rate_floor(geometry: ManifoldGeometry, fraction=0.1):
    """``fraction`` of the slowest rate on the upper attracting sheet.

    The up sheet is slowest at its fold, so a binned rate above this level
    means the population has reached the up state; canard excursions that
    stay near the down sheet remain below it.
    """
    if len(geometry.folds) != 2:
        raise ValueError("burst_rate_floor needs two folds")
    return fraction * float(geometry.rate(geometry.fold("F+").v))


def classify_orbit(t, v, K, geometry: ManifoldGeometry, start="down", rho=None, window=None,
                   locator=None) -> OrbitFate:
    """Fate of a forced orbit from its projection on ``(K, v)``.

    The start sheet is the attracting sheet nearest to the first sample of
    the window; the orbit ends on the other sheet if any later sample is
    nearest to it. Canard time accumulates over samples whose nearest S0
    point lies on the repelling sheet within ``rho`` while ``v`` is inside
    the repelling voltage interval.
    """
    t = np.asarray(t, float)
    m = _window_mask(t, window)
    t, v, K = t[m], np.asarray(v, float)[m], np.asarray(K, float)[m]
    if len(geometry.folds) != 2:
        raise ValueError("manifold classification needs a two-fold geometry")
    rho = default_rho(geometry) if rho is None else rho
    if locator is None:
        span = geometry.eta_minus - geometry.eta_plus
        lo = min(K.min(), geometry.eta_plus) - span
        hi = max(K.max(), geometry.eta_minus) + span
        locator = SheetLocator(geometry, (lo, hi))
    _, att = locator.nearest_attracting(K, v)
    start_sheet = str(att[0])
    other = OTHER[start_sheet]
    end_sheet = other if np.any(att == other) else start_sheet
    d, lab = locator.nearest(K, v)
    va, vb = geometry.folds[0].v, geometry.folds[1].v
    on_rep = (lab == 1) & (d < rho) & (v > va) & (v < vb)
    ct = float(np.sum(_durations(t)[on_rep]))
    lost = bool(start and start_sheet != start)
    return OrbitFate(start_sheet, end_sheet, ct, burst=(end_sheet != start_sheet) and not lost,
                     requested=start, lost=lost)


def classify_single_cell(t, theta, s, eta, J, forcing: ForcingParams, spikes, start="down",
                         window=None, rho=0.05, tau_dwell=None, tau_s=None) -> OrbitFate:
    """Fate of a forced single cell from its theta-form trajectory.

    With ``K_eff = eta + A sin(eps t) + J s`` the cell's equilibria are
    ``V = -sqrt(-K_eff)`` (rest) and ``+sqrt(-K_eff)`` (threshold). A
    down-start bursts if it fires in the window; an up-start bursts if it
    rests near ``-sqrt(-K_eff)`` for ``tau_dwell`` (default ``2 tau_s``)
    without interruption. Canard time is time within ``rho`` of the
    threshold branch.
    """
    t = np.asarray(t, float)
    msk = _window_mask(t, window)
    t, theta, s = t[msk], np.asarray(theta)[msk], np.asarray(s)[msk]
    V = np.tan(0.5 * theta)
    Keff = eta + forcing.A * np.sin(forcing.eps * t) + J * s
    neg = Keff < 0
    root = np.sqrt(np.where(neg, -Keff, 0.0))
    w = _durations(t)
    ct = float(np.sum(w[neg & (np.abs(V - root) < rho)]))
    rest = neg & (np.abs(V + root) < rho + 0.25 * root)
    if tau_dwell is None:
        tau_dwell = 2.0 * (tau_s if tau_s is not None else 0.0)
    lo, hi = (t[0], t[-1])
    fired = bool(np.any((np.asarray(spikes) >= lo) & (np.asarray(spikes) <= hi)))
    if start == "down":
        lost = not bool(rest[0])
        end = "up" if fired else "down"
        return OrbitFate("down" if not lost else "up", end, ct, burst=fired and not lost,
                         requested=start, lost=lost)
    dwell = bool(_longest_run(t, rest) >= max(tau_dwell, 0.0) and rest.any())
    lost = bool(rest[0])
    end = "down" if dwell else "up"
    return OrbitFate("up" if not lost else "down", end, ct, burst=dwell and not lost,
                     requested=start, lost=lost)


def _longest_run(t, mask):
    best = 0.0
    i, n = 0, mask.size
    while i < n:
        if mask[i]:
            j = i
            while j + 1 < n and mask[j + 1]:
                j += 1
            best = max(best, t[j] - t[i])
            i = j + 1
        else:
            i += 1
    return best


@dataclass(frozen=True)
class RateFate:
    fate: OrbitFate
    r_burst: float
    segment: tuple  # (t_onset, t_end) of the canard segment, or ()
    monotone_fraction: float


def classify_network_rate(t, rate, start="down", window=None, baseline=None, r_floor=0.0,
                          tau_dwell=0.0, onset_factor=3.0) -> RateFate:
    """Rate-threshold classification of a network orbit (down-starts).

    The orbit bursts if the binned rate stays above ``r_burst =
    max(10 * baseline, r_floor)`` for at least ``tau_dwell``. The canard
    segment runs from the first bin above ``onset_factor * baseline`` to the
    burst (first bin above ``r_burst``) or, without burst, to the rate
    maximum; ``monotone_fraction`` is the share of its bin-to-bin increments
    that are nondecreasing.
    """
    t = np.asarray(t, float)
    m = _window_mask(t, window)
    t, rate = t[m], np.asarray(rate, float)[m]
    if baseline is None:
        head = rate[: max(1, rate.size // 10)]
        baseline = float(np.mean(head))
    r_burst = max(10.0 * baseline, r_floor)
    above = rate > r_burst
    burst = _longest_run(t, above) >= tau_dwell and above.any()
    onset_level = max(onset_factor * baseline, 0.1 * r_burst)
    on = np.flatnonzero(rate > onset_level)
    seg = ()
    frac = 1.0
    ct = 0.0
    if on.size:
        i0 = on[0]
        if burst:
            i1 = int(np.flatnonzero(above)[0])
        else:
            i1 = i0 + int(np.argmax(rate[i0:]))
        seg = (float(t[i0]), float(t[i1]))
        ct = seg[1] - seg[0]
        inc = np.diff(rate[i0:i1 + 1])
        frac = float(np.mean(inc >= 0)) if inc.size else 1.0
    end = OTHER[start] if burst else start
    return RateFate(OrbitFate(start, end, ct, bool(burst), requested=start), r_burst, seg, frac)


# ---------------------------------------------------------------------------
# systems evaluated at a forcing amplitude

@dataclass
class SweepSample:
    A: float
    measure: float
    fate: OrbitFate
    extra: dict = field(default_factory=dict)

    @property
    def canard_time(self):
        return self.fate.canard_time


class MeanFieldSweep:
    """Forced mean field started on ``start`` at ``K = eta_bar``.

    Calling it with an amplitude returns a :class:`SweepSample` whose
    measure is ``inv_snorm`` or ``delta_r`` over the evaluation period.
    """

    def __init__(self, model: MeanFieldModel, start="down", measure="inv_snorm", dt=None,
                 rho=None, record_every=10, transient_periods=1.0, geometry=None):
        if measure not in ("inv_snorm", "delta_r"):
            raise ValueError("measure must be 'inv_snorm' or 'delta_r'")
        self.model = model
        self.start = start
        self.measure = measure
        self.dt = model.default_dt() if dt is None else dt
        self.geometry = model.geometry() if geometry is None else geometry
        self.rho = default_rho(self.geometry) if rho is None else rho
        self.record_every = record_every
        self.transient_periods = transient_periods
        names = [sh.name for sh in self.geometry.sheets]
        eta_bar = model.forcing.eta_bar
        try:
            self.geometry.branch_v(eta_bar, start)
        except (KeyError, ValueError):
            raise SheetUnavailable(f"no {start!r} sheet at K = {eta_bar} (sheets: {names})") from None

    def run(self, A):
        fp = ForcingParams(A=float(A), eps=self.model.forcing.eps, eta_bar=self.model.forcing.eta_bar)
        model = self.model.with_forcing(fp)
        y0 = forced_initial_state(model, self.geometry, self.start)
        window = evaluation_window(fp.eps, self.start, self.transient_periods)
        nsteps = _steps_covering(window[1], self.dt, self.record_every)
        traj = integrate(model, y0, (0.0, nsteps * self.dt), dt=self.dt, record_every=self.record_every)
        return traj, window

    def __call__(self, A) -> SweepSample:
        traj, window = self.run(A)
        fate = classify_orbit(traj.t, traj.col("v"), traj.col("K"), self.geometry, self.start,
                              self.rho, window)
        bm = burst_measures(traj.t, traj.col("r"), traj.col("s"), window)
        return SweepSample(float(A), getattr(bm, self.measure), fate)


class SingleCellSweep:
    """Forced theta neuron with a self-coupled synapse."""

    def __init__(self, eta, J, tau_s, eps, start="down", measure="inv_snorm", dt=2e-3,
                 rho=0.05, kappa=None, theta_threshold=math.pi, transient_periods=1.0,
                 record_every=5, tau_dwell=None):
        self.eta, self.J, self.tau_s, self.eps = eta, J, tau_s, eps
        self.start, self.measure, self.dt, self.rho = start, measure, dt, rho
        self.kappa = kappa
        self.theta_threshold = theta_threshold
        self.transient_periods = transient_periods
        self.record_every = record_every
        self.tau_dwell = 2.0 * tau_s if tau_dwell is None else tau_dwell

    def run(self, A):
        fp = ForcingParams(A=float(A), eps=self.eps, eta_bar=self.eta)
        window = evaluation_window(self.eps, self.start, self.transient_periods)
        nsteps = _steps_covering(window[1], self.dt, self.record_every)
        run = simulate_single_theta(self.eta, self.J, self.tau_s, fp, (0.0, nsteps * self.dt), self.dt,
                                    kappa=self.kappa, record_every=self.record_every,
                                    theta_threshold=self.theta_threshold)
        return run, window, fp

    def __call__(self, A) -> SweepSample:
        run, window, fp = self.run(A)
        fate = classify_single_cell(run.t, run.theta, run.s, self.eta, self.J, fp, run.spikes,
                                    self.start, window, self.rho, self.tau_dwell)
        m = _window_mask(run.t, window)
        bm = burst_measures(run.t[m], np.zeros(m.sum()), run.s[m])
        value = bm.inv_snorm if self.measure == "inv_snorm" else bm.delta_r
        return SweepSample(float(A), value, fate)


class NetworkSweep:
    """Forced QIF network with fixed currents and connectivity.

    Each evaluation rebuilds the same initial state (same seed) and changes
    only the forcing amplitude; ``amp_scale`` maps A to the amplitude of
    ``I(t)`` (``sqrt(M)`` for the sparse network).

    ``fate_mode='manifold'`` classifies ``(K, smoothed winsorized mean
    voltage)`` against ``geometry``; ``'rate'`` thresholds the binned rate.
    With ``warm_start`` the run begins at the evaluation window on the start
    sheet of ``geometry`` (gate at the sheet rate) instead of integrating a
    transient. ``stop_on_burst`` (rate mode) ends a run once the burst is
    confirmed; its measure is then ``nan``.
    """

    def __init__(self, system: NetworkSystem, eta_bar, dt, start="down", amp_scale=1.0,
                 s0=0.0, seed=0, geometry: ManifoldGeometry | None = None, rho=None,
                 smooth_time=0.5, record_every=None, rate_bin=0.15, r_floor=0.0,
                 tau_dwell=None, transient_periods=1.0, measure="inv_snorm", backend=None,
                 fate_mode=None, warm_start=False, stop_on_burst=False, chunk_time=3.0):
        self.system = system
        self.eta_bar = eta_bar
        self.dt = dt
        self.start = start
        self.amp_scale = amp_scale
        self.s0 = s0
        self.seed = seed
        self.geometry = geometry
        self.fate_mode = fate_mode or ("manifold" if geometry is not None else "rate")
        if self.fate_mode not in ("manifold", "rate"):
            raise ValueError(f"fate_mode must be 'manifold' or 'rate', got {self.fate_mode!r}")
        if geometry is None and (self.fate_mode == "manifold" or warm_start):
            raise ValueError("manifold fates and warm starts need a geometry")
        self.rho = (default_rho(geometry) if geometry is not None else None) if rho is None else rho
        self.smooth_time = smooth_time
        self.rate_bin = rate_bin
        self.record_every = record_every or max(1, int(round(rate_bin / dt / 15)))
        self.r_floor = r_floor
        self.tau_dwell = 2.0 * system.tau_s if tau_dwell is None else tau_dwell
        self.transient_periods = transient_periods
        self.measure = measure
        self.backend = backend
        self.warm_start = warm_start
        self.stop_on_burst = stop_on_burst
        self.chunk_time = chunk_time

    def initial(self, sysA, A, t0):
        if not self.warm_start:
            return initial_state(sysA, s0=self.s0, seed=self.seed, t0=t0)
        K0 = self.eta_bar + float(A) * math.sin(sysA.eps * t0)
        try:
            v = self.geometry.branch_v(K0, self.start)
        except ValueError as exc:
            raise SheetUnavailable(f"no {self.start} sheet at K={K0}") from exc
        r = float(self.geometry.rate(v))
        return initial_state(sysA, v_rest_drive=sysA.amp * math.sin(sysA.eps * t0), s0=r,
                             seed=self.seed, t0=t0)

    def _rate_fate(self, raster, window):
        centers = 0.5 * (raster.edges[:-1] + raster.edges[1:])
        return classify_network_rate(centers, raster.rate, self.start,
                                     _covering(centers, window, raster.bin_width),
                                     r_floor=self.r_floor, tau_dwell=self.tau_dwell)

    def run(self, A):
        """Integrate at amplitude A; returns ``(traj, raster, window, stopped)``."""
        sysA = self.system.with_amplitude(float(A) * self.amp_scale)
        window = evaluation_window(sysA.eps, self.start, self.transient_periods)
        t0 = window[0] if self.warm_start else 0.0
        state = self.initial(sysA, A, t0)
        nsteps = _steps_covering(window[1] - t0, self.dt, self.record_every)
        span = (t0, t0 + nsteps * self.dt)
        if self.stop_on_burst and self.fate_mode == "rate":
            chunk = max(self.record_every, int(round(self.chunk_time / self.dt)))

            def stop(traj, raster):
                if raster.edges[-1] <= window[0]:
                    return False
                return self._rate_fate(raster, (window[0], raster.edges[-1])).fate.burst

            return self._run_until(sysA, state, span, stop, chunk, window)
        traj, raster = integrate_network(sysA, state, span, self.dt, record_every=self.record_every,
                                         raster_dt=self.rate_bin, backend=self.backend)
        return traj, raster, window, False

    def _run_until(self, sysA, state, span, stop, chunk, window):
        traj, raster, stopped = integrate_network_until(
            sysA, state, span, self.dt, stop, chunk_steps=chunk, record_every=self.record_every,
            raster_dt=self.rate_bin, backend=self.backend)
        return traj, raster, window, stopped

    def smoothed_voltage(self, traj):
        n = max(1, int(round(self.smooth_time / (traj.t[1] - traj.t[0])))) if traj.t.size > 1 else 1
        if n <= 1:
            return traj.v_mean_winsorized
        kern = np.ones(n) / n
        pad = np.pad(traj.v_mean_winsorized, (n // 2, n - 1 - n // 2), mode="edge")
        return np.convolve(pad, kern, mode="valid")

    def __call__(self, A) -> SweepSample:
        traj, raster, window, stopped = self.run(A)
        extra = {}
        if self.fate_mode == "manifold":
            K = self.eta_bar + float(A) * np.sin(self.system.eps * traj.t)
            fate = classify_orbit(traj.t, self.smoothed_voltage(traj), K, self.geometry, self.start,
                                  self.rho, window)
        else:
            covered = (window[0], min(window[1], raster.edges[-1])) if stopped else window
            rf = self._rate_fate(raster, covered)
            fate = rf.fate
            extra = {"r_burst": rf.r_burst, "segment": rf.segment, "monotone_fraction": rf.monotone_fraction,
                     "stopped": stopped}
        if stopped:
            return SweepSample(float(A), float("nan"), fate, extra)
        m = _window_mask(traj.t, window)
        bm = burst_measures(traj.t[m], traj.rate[m], traj.s_mean[m])
        value = bm.inv_snorm if self.measure == "inv_snorm" else bm.delta_r
        return SweepSample(float(A), value, fate, extra)


def _steps_covering(t_end, dt, stride):
    """Step count reaching ``t_end`` that is a multiple of ``stride``."""
    rows = int(math.ceil(t_end / (dt * stride) - 1e-9))
    return rows * stride


def _covering(centers, window, width):
    lo, hi = window
    return (max(lo, centers[0]), min(hi, centers[-1]))


# ---------------------------------------------------------------------------
# bisection and branches

@dataclass
class ThresholdResult:
    A_star: float
    bracket: tuple
    sample_lo: SweepSample
    sample_hi: SweepSample
    tol: float
    evaluations: int
    history: list = field(default_factory=list)

    def to_json(self):
        return {"A_star": self.A_star, "bracket_lo": self.bracket[0], "bracket_hi": self.bracket[1],
                "tol": self.tol,
                "fates": [self.sample_lo.fate.label, self.sample_hi.fate.label],
                "canard_times": [self.sample_lo.canard_time, self.sample_hi.canard_time]}


def threshold_bisect(system, A_lo, A_hi, tol_A, relative=False, samples=None, max_iter=200) -> ThresholdResult:
    """Bisect in A between a non-bursting and a bursting evaluation.

    ``system(A)`` must return a :class:`SweepSample`. The bracket keeps one
    endpoint of each burst flag at every depth. ``tol_A`` is absolute, or
    relative to the midpoint when ``relative`` is set.

    Raises
    ------
    BracketError
        If both endpoints have the same burst flag.
    """
    s_lo = samples[0] if samples else system(A_lo)
    s_hi = samples[1] if samples else system(A_hi)
    if s_lo.fate.burst == s_hi.fate.burst:
        raise BracketError(
            f"endpoints A={A_lo} ({s_lo.fate.kind}, {s_lo.fate.label}) and A={A_hi} "
            f"({s_hi.fate.kind}, {s_hi.fate.label}) do not bracket a burst transition",
            s_lo.fate, s_hi.fate)
    lo, hi = float(A_lo), float(A_hi)
    history = [s_lo, s_hi]
    n = 2
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        width = hi - lo
        scale = abs(mid) if relative else 1.0
        if abs(width) <= tol_A * scale or mid in (lo, hi):
            break
        s_mid = system(mid)
        n += 1
        history.append(s_mid)
        if s_mid.fate.burst == s_lo.fate.burst:
            lo, s_lo = mid, s_mid
        else:
            hi, s_hi = mid, s_mid
    a, b = (lo, hi) if lo <= hi else (hi, lo)
    return ThresholdResult(0.5 * (lo + hi), (a, b), s_lo, s_hi, tol_A, n, history)


@dataclass
class SweepBranch:
    samples: list
    refinement: list = field(default_factory=list)  # (level, number of midpoints)

    @property
    def A(self):
        return np.array([s.A for s in self.samples])

    @property
    def measure(self):
        return np.array([s.measure for s in self.samples])

    @property
    def fates(self):
        return [s.fate for s in self.samples]

    def to_rows(self):
        return [(s.A, s.measure, s.fate.label + ("/lost" if s.fate.lost else ""), s.canard_time)
                for s in self.samples]


def _evaluate_many(system, As, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(system, As))
    return [system(a) for a in As]


def branch_trace(system, A_range, n_coarse=41, refine_depth=6, jump_factor=5.0,
                 refine_on_fate=True, max_per_level=64, workers=1) -> SweepBranch:
    """Coarse grid plus dyadic refinement where the measure jumps.

    An interval is split when ``|measure jump|`` exceeds ``jump_factor``
    times the median jump of the current branch, or (``refine_on_fate``)
    when its endpoints differ in fate kind. At most ``max_per_level``
    intervals (the largest jumps) are split per level.
    """
    lo, hi = map(float, A_range)
    if hi < lo:
        raise ValueError("A_range must be increasing")
    if hi == lo or n_coarse <= 1:
        return SweepBranch([system(lo)])
    grid = np.linspace(lo, hi, n_coarse)
    samples = dict(zip(grid.tolist(), _evaluate_many(system, grid.tolist(), workers)))
    refinement = []
    for level in range(refine_depth):
        As = sorted(samples)
        m = np.array([samples[a].measure for a in As])
        finite = np.isfinite(m)
        jumps = np.abs(np.diff(np.where(finite, m, np.nanmax(np.where(finite, m, np.nan)) if finite.any() else 0)))
        med = float(np.median(jumps)) if jumps.size else 0.0
        score = np.where(jumps > jump_factor * med, jumps, 0.0)
        if refine_on_fate:
            kinds = [samples[a].fate.kind for a in As]
            for i in range(len(As) - 1):
                if kinds[i] != kinds[i + 1]:
                    score[i] = max(score[i], np.inf)
        cand = [i for i in np.argsort(-score, kind="stable") if score[i] > 0][:max_per_level]
        mids = []
        for i in cand:
            a = 0.5 * (As[i] + As[i + 1])
            if a not in samples and a != As[i] and a != As[i + 1]:
                mids.append(a)
        if not mids:
            break
        mids.sort()
        samples.update(zip(mids, _evaluate_many(system, mids, workers)))
        refinement.append((level, len(mids)))
    return SweepBranch([samples[a] for a in sorted(samples)], refinement)


def steepest_fraction(branch: SweepBranch, rel_width):
    """Largest share of the measure's total variation inside any A-interval
    of relative width ``rel_width``; returns ``(fraction, (A_i, A_j))``."""
    A = branch.A
    m = branch.measure
    if A.size < 2:
        return 0.0, (A[0], A[0]) if A.size else (math.nan, math.nan)
    jumps = np.abs(np.diff(m))
    tv = float(jumps.sum())
    if tv == 0:
        return 0.0, (A[0], A[0])
    best, where = 0.0, (A[0], A[0])
    cum = np.concatenate([[0.0], np.cumsum(jumps)])
    j = 0
    for i in range(A.size):
        j = max(j, i)
        while j + 1 < A.size and (A[j + 1] - A[i]) <= rel_width * 0.5 * abs(A[j + 1] + A[i]):
            j += 1
        frac = (cum[j] - cum[i]) / tv
        if frac > best:
            best, where = frac, (float(A[i]), float(A[j]))
    return best, where


@dataclass
class RouteReport:
    scenario: str
    branch_kinds: dict
    continuous: list
    interrupted: list
    anomalies: list

    def ok(self):
        return not self.anomalies


EXPECTED_ROUTES = {
    "I": {"down": "continuous", "up": "absent"},
    "II": {"down": "continuous", "up": "interrupted"},
    "III": {"down": "interrupted", "up": "continuous"},
    "IV": {"down": "absent", "up": "continuous"},
}


def branch_kind(branch: SweepBranch | None) -> str:
    """'continuous' if the first non-quiet fate along A is a burst,
    'interrupted' if it is a lost start sheet, 'quiet' if none, 'absent'
    for a missing branch."""
    if branch is None:
        return "absent"
    for f in branch.fates:
        if f.kind == "burst":
            return "continuous"
        if f.kind == "lost":
            return "interrupted"
    return "quiet"


def route_classify(branches: dict, scenario) -> RouteReport:
    """Compare branch kinds from down- and up-starts with the scenario's routes."""
    scenario = str(scenario)
    kinds = {k: branch_kind(branches.get(k)) for k in ("down", "up")}
    cont = [k for k, v in kinds.items() if v == "continuous"]
    inter = [k for k, v in kinds.items() if v == "interrupted"]
    anomalies = []
    expected = EXPECTED_ROUTES.get(scenario)
    if expected is None:
        anomalies.append(f"unknown scenario {scenario!r}")
    else:
        for k, want in expected.items():
            if kinds[k] != want:
                anomalies.append(f"{k}-start branch is {kinds[k]}, expected {want} in case {scenario}")
    return RouteReport(scenario, kinds, cont, inter, anomalies)
