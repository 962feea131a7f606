"""Microscopic QIF networks (dense and sparse) and the single theta neuron.

Voltage-form networks are advanced with a fixed explicit step (Euler or
Heun). After each step every neuron at or above ``V_t`` is logged at the
linearly interpolated crossing time, reset to ``V_r`` and its synaptic jump
applied; neurons are processed in ascending index order.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from qifcanard import kernels
from qifcanard.params import (ForcingParams, QifParams, SparseParams, rng_stream,
                              sample_cauchy)

JUMP_CONVENTIONS = ("meanfield", "literal")


class NetworkIntegrationError(RuntimeError):
    def __init__(self, message, t=None, index=None):
        super().__init__(message)
        self.t = t
        self.index = index


class OutputCapExceeded(RuntimeError):
    pass


@dataclass
class Connectivity:
    """Binary connectivity stored as presynaptic index lists (CSR).

    Row ``i`` lists the presynaptic partners of neuron ``i`` (0-based);
    ``out_ptr/out_idx`` hold the transpose for spike propagation.
    """

    in_ptr: np.ndarray
    in_idx: np.ndarray
    degrees: np.ndarray
    scaling: str = "sparse"  # coupling J/sqrt(M) per presynaptic gate
    out_ptr: np.ndarray = None
    out_idx: np.ndarray = None

    def __post_init__(self):
        if self.out_ptr is None:
            N = self.degrees.size
            rows = np.repeat(np.arange(N, dtype=np.intc), self.degrees)
            order = np.argsort(self.in_idx, kind="stable")
            self.out_idx = rows[order].astype(np.intc)
            counts = np.bincount(self.in_idx, minlength=N)
            self.out_ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.intc)

    @property
    def N(self):
        return self.degrees.size

    def row(self, i):
        return self.in_idx[self.in_ptr[i]:self.in_ptr[i + 1]]


def sample_degrees(sp: SparseParams, rng, degree_mode="reject"):
    """In-degrees ``floor(k_i)`` with ``k_i ~ Cauchy(M, delta_gamma sqrt(M))``.

    ``'reject'`` redraws candidates outside ``[0, 2M]``; ``'zero'`` maps them
    to degree 0.
    """
    N, M = sp.N, sp.M
    hw = sp.delta_gamma * math.sqrt(M)
    if hw == 0:
        return np.full(N, M, dtype=np.int64)
    k = M + hw * np.tan(math.pi * (rng.random(N) - 0.5))
    bad = (k < 0) | (k > 2 * M)
    if degree_mode == "reject":
        while bad.any():
            k[bad] = M + hw * np.tan(math.pi * (rng.random(int(bad.sum())) - 0.5))
            bad = (k < 0) | (k > 2 * M)
    elif degree_mode == "zero":
        k[bad] = 0.0
    else:
        raise ValueError(f"unknown degree_mode {degree_mode!r}")
    return np.minimum(np.floor(k).astype(np.int64), N)


def build_sparse_connectivity(sp: SparseParams, degree_mode="reject", allow_self=True) -> Connectivity:
    """Random in-lists with heavy-tailed degrees, from the ``connectivity`` stream."""
    rng = rng_stream(sp.seed, "connectivity")
    deg = sample_degrees(sp, rng, degree_mode)
    N = sp.N
    pool = N if allow_self else N - 1
    deg = np.minimum(deg, pool)
    ptr = np.concatenate([[0], np.cumsum(deg)]).astype(np.intc)
    idx = np.empty(int(ptr[-1]), dtype=np.intc)
    for i in range(N):
        pick = rng.choice(pool, size=int(deg[i]), replace=False)
        if not allow_self:
            pick = pick + (pick >= i)
        pick.sort()
        idx[ptr[i]:ptr[i + 1]] = pick
    return Connectivity(ptr, idx, deg.astype(np.int64), "sparse")


@dataclass
class NetworkSystem:
    """Everything needed to advance a network; read-only during runs."""

    kind: str  # 'dense' or 'sparse'
    eta: np.ndarray
    coupling: float  # multiplies sum_j s_j (dense) or the presynaptic sum (sparse)
    tau_s: float
    V_t: float
    V_r: float
    jump: float  # per-gate increment per spike
    amp: float  # amplitude of I(t) = amp sin(eps t)
    eps: float
    hold: float = 0.0
    method: str = "heun"
    connectivity: Connectivity | None = None
    eta_mode: str = "quantile"
    jump_convention: str = "meanfield"

    @property
    def N(self):
        return self.eta.size

    def kernel_params(self):
        return np.array([self.coupling, self.tau_s, self.V_t, self.V_r, self.jump, self.amp,
                         self.eps, self.hold, 1.0 if self.method == "heun" else 0.0])

    def with_amplitude(self, amp):
        return _replace(self, amp=float(amp))


def _replace(obj, **kw):
    from dataclasses import replace
    return replace(obj, **kw)


def build_dense(params: QifParams, forcing: ForcingParams, eta_mode="quantile",
                jump_convention="meanfield", method="heun", hold=False, eta=None) -> NetworkSystem:
    """All-to-all network: ``V' = V^2 + eta_i + A sin(eps t) + J/N sum_j s_j``.

    With the ``'meanfield'`` convention every spike adds ``1/(N tau_s)`` to
    every gate, which makes the mean gate obey ``s' = (r - s)/tau_s``;
    ``'literal'`` adds ``1/N``. ``hold=True`` clamps a neuron at ``V_r`` for
    ``2/V_t`` after crossing ``V_t`` and emits the spike halfway through the
    hold, when the voltage of an infinite-threshold cell would diverge.
    """
    if jump_convention not in JUMP_CONVENTIONS:
        raise ValueError(f"jump_convention must be one of {JUMP_CONVENTIONS}")
    if method not in ("heun", "euler"):
        raise ValueError(f"method must be 'heun' or 'euler', got {method!r}")
    N = params.N
    if eta is None:
        eta = sample_cauchy(params.eta_bar, params.delta, N, mode=eta_mode, seed=params.seed)
    eta = np.ascontiguousarray(eta, dtype=float)
    if eta.shape != (N,):
        raise ValueError(f"eta must have shape ({N},)")
    kappa = 1.0 / params.tau_s if jump_convention == "meanfield" else 1.0
    return NetworkSystem(
        kind="dense", eta=eta, coupling=params.J / N, tau_s=params.tau_s, V_t=params.V_t,
        V_r=params.V_r, jump=kappa / N, amp=forcing.A, eps=forcing.eps,
        hold=2.0 / params.V_t if hold else 0.0, method=method, eta_mode=eta_mode,
        jump_convention=jump_convention)


def build_sparse(sp: SparseParams, connectivity: Connectivity | None = None, eta_mode="quantile",
                 jump_convention="meanfield", method="heun", hold=False, **conn_kw) -> NetworkSystem:
    """Sparse network: ``V' = V^2 + eta_i + A sqrt(M) sin(eps t) + J/sqrt(M) sum_{j in in(i)} s_j``.

    Currents ``eta_i ~ Cauchy(eta_bar sqrt(M), delta sqrt(M))``; a spike of
    neuron j adds ``1/tau_s`` (``'meanfield'``) or 1 (``'literal'``) to its
    own gate.
    """
    if jump_convention not in JUMP_CONVENTIONS:
        raise ValueError(f"jump_convention must be one of {JUMP_CONVENTIONS}")
    conn = connectivity if connectivity is not None else build_sparse_connectivity(sp, **conn_kw)
    sq = sp.sqrt_M
    eta = sample_cauchy(sp.eta_bar * sq, sp.delta * sq, sp.N, mode=eta_mode, seed=sp.seed)
    kappa = 1.0 / sp.tau_s if jump_convention == "meanfield" else 1.0
    return NetworkSystem(
        kind="sparse", eta=np.ascontiguousarray(eta), coupling=sp.J / sq, tau_s=sp.tau_s,
        V_t=sp.V_t, V_r=sp.V_r, jump=kappa, amp=sp.forcing.A * sq, eps=sp.forcing.eps,
        hold=2.0 / sp.V_t if hold else 0.0, method=method, connectivity=conn,
        eta_mode=eta_mode, jump_convention=jump_convention)


@dataclass
class SpikeLog:
    t: np.ndarray = field(default_factory=lambda: np.empty(0))
    neuron: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.intc))

    def extend(self, t, idx):
        self.t = np.concatenate([self.t, t])
        self.neuron = np.concatenate([self.neuron, idx.astype(np.intc)])

    def __len__(self):
        return self.t.size


@dataclass
class NetworkState:
    t: float
    V: np.ndarray
    s: np.ndarray
    u: np.ndarray | None = None
    hold_until: np.ndarray | None = None
    emit_at: np.ndarray | None = None
    spike_log: SpikeLog = field(default_factory=SpikeLog)

    def copy(self):
        return NetworkState(self.t, self.V.copy(), self.s.copy(),
                            None if self.u is None else self.u.copy(),
                            None if self.hold_until is None else self.hold_until.copy(),
                            None if self.emit_at is None else self.emit_at.copy(),
                            SpikeLog(self.spike_log.t.copy(), self.spike_log.neuron.copy()))


def initial_state(system: NetworkSystem, v_rest_drive=0.0, s0=0.0, seed=0, t0=0.0) -> NetworkState:
    """Quiet-start state at total drive ``eta_i + v_rest_drive + J s0``.

    Neurons with negative drive sit at their stable rest ``-sqrt(-drive)``;
    the others are placed at a uniformly random phase of their free
    oscillation ``V = sqrt(mu) tan(pi (phi - 1/2))`` (``initial-state`` stream).
    """
    N = system.N
    s = np.full(N, float(s0))
    if system.kind == "dense":
        mu = system.eta + v_rest_drive + system.coupling * N * s0
        u = None
    else:
        u = system.connectivity.degrees.astype(float) * s0
        mu = system.eta + v_rest_drive + system.coupling * u
    rng = rng_stream(seed, "initial-state")
    phi = rng.random(N)
    V = np.empty(N)
    neg = mu < 0
    V[neg] = -np.sqrt(-mu[neg])
    pos = ~neg
    V[pos] = np.sqrt(mu[pos]) * np.tan(math.pi * (phi[pos] - 0.5))
    V = np.clip(V, system.V_r, np.nextafter(system.V_t, -np.inf))
    return NetworkState(t0, V, s, u, np.full(N, -np.inf), np.full(N, np.inf))


@dataclass
class RasterSummary:
    """Binned spike counts and rate ``counts / (N dt_bin)``."""

    bin_width: float
    edges: np.ndarray
    counts: np.ndarray
    rate: np.ndarray
    v_mean: np.ndarray | None = None
    v_mean_winsorized: np.ndarray | None = None


@dataclass
class NetworkTrajectory:
    t: np.ndarray
    v_mean: np.ndarray
    v_mean_winsorized: np.ndarray
    s_mean: np.ndarray
    rate: np.ndarray
    step_counts: np.ndarray
    dt: float
    t0: float
    N: int

    def __len__(self):
        return self.t.size


def integrate_network(system: NetworkSystem, state: NetworkState, t_span, dt, record_every=1,
                      keep_spikes=False, max_spikes=5_000_000, max_records=5_000_000,
                      raster_dt=0.15, allow_coarse_dt=False, backend=None):
    """Advance ``state`` in place over ``t_span`` and summarise the run.

    Returns
    -------
    trajectory : NetworkTrajectory
        Rows every ``record_every`` steps: time, plain and winsorized mean
        voltage (before resets), mean gate and the population rate since the
        previous row.
    raster : RasterSummary
        Spike counts binned at ``raster_dt`` from the per-step counts.

    Raises
    ------
    ValueError
        If ``dt > tau_s/10`` and ``allow_coarse_dt`` is false.
    OutputCapExceeded
        Too many records or logged spikes; record more coarsely.
    NetworkIntegrationError
        Non-finite voltage (carries time and neuron index).
    """
    t0, t1 = map(float, t_span)
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if dt > system.tau_s / 10:
        msg = f"dt={dt} does not resolve tau_s={system.tau_s} (need dt <= tau_s/10)"
        if not allow_coarse_dt:
            raise ValueError(msg + "; pass allow_coarse_dt=True to override")
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    if abs(state.t - t0) > 1e-9 * max(1.0, abs(t0)):
        raise ValueError(f"state time {state.t} does not match t_span start {t0}")
    nsteps = max(0, int(round((t1 - t0) / dt)))
    N = system.N
    if nsteps == 0:
        empty = np.empty(0)
        traj = NetworkTrajectory(empty, empty, empty, empty, empty, np.empty(0, np.intc), dt, t0, N)
        return traj, RasterSummary(raster_dt, np.array([t0]), np.empty(0, np.int64), empty)
    nrec = nsteps // record_every + 1
    if nrec > max_records:
        raise OutputCapExceeded(f"{nrec} records exceed the cap of {max_records}; raise record_every")
    rec = np.zeros((nrec, 5))
    rec[0] = (t0, state.V.mean(), np.clip(state.V, system.V_r, system.V_t).mean(), state.s.mean(), 0.0)
    counts = np.zeros(nsteps, dtype=np.intc)
    cap = max_spikes if keep_spikes else 0
    sp_t = np.empty(cap)
    sp_i = np.empty(cap, dtype=np.intc)
    if state.hold_until is None:
        state.hold_until = np.full(N, -np.inf)
    if state.emit_at is None:
        state.emit_at = np.full(N, np.inf)
    hold_until, emit_at = state.hold_until, state.emit_at
    k = kernels.get(backend)
    p = system.kernel_params()
    if system.kind == "dense":
        res = k.dense_run(state.V, state.s, hold_until, emit_at, system.eta, t0, dt, nsteps, p,
                          counts, rec, record_every, sp_t, sp_i)
    else:
        c = system.connectivity
        res = k.sparse_run(state.V, state.s, state.u, hold_until, emit_at, system.eta, c.out_ptr, c.out_idx,
                           t0, dt, nsteps, p, counts, rec, record_every, sp_t, sp_i)
    t_end, status, fail, logged, total = res
    if keep_spikes:
        # interpolated times can be out of order within one step
        order = np.argsort(sp_t[:logged], kind="stable")
        state.spike_log.extend(sp_t[:logged][order], sp_i[:logged][order])
    if status == 1:
        raise NetworkIntegrationError(f"nonfinite voltage of neuron {fail} near t={t_end:.6g}", t_end, fail)
    if status == 3:
        raise OutputCapExceeded(f"spike log exceeded {max_spikes} events near t={t_end:.6g}; "
                                "disable keep_spikes or shorten the run")
    state.t = t0 + nsteps * dt
    rec_dt = record_every * dt
    rate = rec[:, 4] / (N * rec_dt)
    rate[0] = 0.0
    traj = NetworkTrajectory(rec[:, 0].copy(), rec[:, 1].copy(), rec[:, 2].copy(), rec[:, 3].copy(),
                             rate, counts, dt, t0, N)
    return traj, bin_step_counts(counts, t0, dt, N, raster_dt)


def integrate_network_until(system: NetworkSystem, state: NetworkState, t_span, dt, stop,
                            chunk_steps=3000, record_every=1, raster_dt=0.15, backend=None, **kw):
    """Like :func:`integrate_network`, but checks ``stop(traj, raster)`` every
    ``chunk_steps`` steps and returns early when it is true.

    Returns ``(trajectory, raster, stopped)``; the arrays cover the part of
    the span actually integrated.
    """
    t0, t1 = map(float, t_span)
    total = max(0, int(round((t1 - t0) / dt)))
    chunk_steps = max(record_every, chunk_steps - chunk_steps % record_every)
    parts = []
    done, stopped = 0, False
    traj = raster = None
    while done < total:
        n = min(chunk_steps, total - done)
        part, _ = integrate_network(system, state, (state.t, state.t + n * dt), dt,
                                    record_every=record_every, raster_dt=raster_dt, backend=backend, **kw)
        parts.append(part if not parts else _drop_first(part))
        done += n
        traj = _concat_trajectories(parts, dt, t0, system.N)
        raster = bin_step_counts(traj.step_counts, t0, dt, system.N, raster_dt)
        if done < total and stop(traj, raster):
            stopped = True
            break
    if traj is None:
        traj, raster = integrate_network(system, state, (t0, t0), dt, raster_dt=raster_dt)
    return traj, raster, stopped


def _drop_first(tr: NetworkTrajectory) -> NetworkTrajectory:
    return NetworkTrajectory(tr.t[1:], tr.v_mean[1:], tr.v_mean_winsorized[1:], tr.s_mean[1:],
                             tr.rate[1:], tr.step_counts, tr.dt, tr.t0, tr.N)


def _concat_trajectories(parts, dt, t0, N) -> NetworkTrajectory:
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
    return NetworkTrajectory(cat("t"), cat("v_mean"), cat("v_mean_winsorized"), cat("s_mean"),
                             cat("rate"), cat("step_counts"), dt, t0, N)


def step_network(state: NetworkState, system: NetworkSystem, dt, backend=None) -> NetworkState:
    """One explicit step with threshold handling; mutates and returns ``state``."""
    integrate_network(system, state, (state.t, state.t + dt), dt, keep_spikes=True,
                      allow_coarse_dt=True, backend=backend)
    return state


def bin_step_counts(counts, t0, dt, N, bin_width):
    """Histogram of per-step spike counts (each attributed to its step's end)."""
    if bin_width <= 0:
        raise ValueError("bin width must be > 0")
    nsteps = counts.size
    t_end = t0 + dt * np.arange(1, nsteps + 1)
    nbins = max(1, int(math.ceil((nsteps * dt) / bin_width - 1e-9)))
    edges = t0 + bin_width * np.arange(nbins + 1)
    b = np.minimum(((t_end - t0) / bin_width - 1e-9).astype(np.int64), nbins - 1)
    b = np.maximum(b, 0)
    binned = np.bincount(b, weights=counts, minlength=nbins).astype(np.int64)
    return RasterSummary(bin_width, edges, binned, binned / (N * bin_width))


def rate_estimate(spike_times, bin_width, N, t_span=None):
    """Binned population rate ``count / (N * bin_width)`` from spike times."""
    if bin_width <= 0:
        raise ValueError("bin width must be > 0")
    spike_times = np.asarray(spike_times, dtype=float)
    if t_span is None:
        if spike_times.size == 0:
            return RasterSummary(bin_width, np.array([0.0, bin_width]), np.zeros(1, np.int64), np.zeros(1))
        t_span = (spike_times.min(), spike_times.max())
    lo, hi = t_span
    nbins = max(1, int(math.ceil((hi - lo) / bin_width - 1e-12)))
    edges = lo + bin_width * np.arange(nbins + 1)
    counts, _ = np.histogram(spike_times, bins=edges)
    return RasterSummary(bin_width, edges, counts.astype(np.int64), counts / (N * bin_width))


# ---------------------------------------------------------------------------
# theta form of a single self-coupled cell

def theta_transform(V):
    """``theta = 2 atan(V)``; maps ``V -> +inf`` to ``theta -> pi``."""
    return 2.0 * np.arctan(V)


def theta_to_voltage(theta):
    return np.tan(0.5 * np.asarray(theta))


def theta_rhs(theta, total_input):
    """``1 - cos(theta) + (1 + cos(theta)) * input``."""
    c = np.cos(theta)
    return 1.0 - c + (1.0 + c) * total_input


@dataclass
class ThetaRun:
    t: np.ndarray
    theta: np.ndarray
    s: np.ndarray
    spikes: np.ndarray
    state: np.ndarray

    @property
    def V(self):
        return theta_to_voltage(self.theta)


def simulate_single_theta(eta, J, tau_s, forcing: ForcingParams, t_span, dt, kappa=None,
                          theta0=None, s0=0.0, record_every=1, theta_threshold=math.pi,
                          jump_convention="meanfield", max_spikes=1_000_000, backend=None) -> ThetaRun:
    """Single QIF cell with a self-coupled synapse in theta form (RK4).

    ``kappa`` defaults to ``1/tau_s`` (``'meanfield'``) or 1 (``'literal'``).
    The forcing enters as ``A sin(eps t)``.
    """
    if kappa is None:
        kappa = 1.0 / tau_s if jump_convention == "meanfield" else 1.0
    if theta0 is None:
        theta0 = -2.0 * math.atan(math.sqrt(-eta)) if eta < 0 else -math.pi + 1e-9
    t0, t1 = map(float, t_span)
    nsteps = max(0, int(round((t1 - t0) / dt)))
    rec = np.empty((nsteps // record_every + 1, 3))
    sp = np.empty(max_spikes)
    state = np.array([float(theta0), float(s0)])
    p = np.array([eta, J, tau_s, kappa, forcing.A, forcing.eps, theta_threshold])
    t_end, status, nsp = kernels.get(backend).theta_run(state, t0, dt, nsteps, p, rec, record_every, sp)
    if status == 1:
        raise NetworkIntegrationError(f"nonfinite theta state near t={t_end:.6g}", t_end, 0)
    if status == 3:
        raise OutputCapExceeded(f"more than {max_spikes} spikes; raise max_spikes")
    return ThetaRun(rec[:, 0], rec[:, 1], rec[:, 2], sp[:nsp].copy(), state)


def format_float(x):
    return format(float(x), ".17g")


def write_spike_csv(path, log: SpikeLog, header_comment=None):
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write("t,neuron\n")
        for t, i in zip(log.t.tolist(), log.neuron.tolist()):
            fh.write(f"{format_float(t)},{i}\n")


def write_trajectory_csv(path, traj: NetworkTrajectory, header_comment=None):
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write("t,v_mean,v_mean_winsorized,s_mean,rate\n")
        for row in zip(traj.t, traj.v_mean, traj.v_mean_winsorized, traj.s_mean, traj.rate):
            fh.write(",".join(format_float(x) for x in row) + "\n")
