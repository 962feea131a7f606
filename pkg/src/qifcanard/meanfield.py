"""Mean-field right-hand sides and fixed/adaptive integrators.

State layout for one population is ``(r, v, s, K, Q)``; for ``p``
populations it is ``(r_1..r_p, v_1..v_p, s_1..s_p, K, Q)``. Time is the
original (fast) time, so the forcing obeys ``K' = eps Q, Q' = -eps (K - eta_bar)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from qifcanard import kernels
from qifcanard.params import ForcingParams, GeneralMfParams, MultiPopParams, SparseParams
from qifcanard.slowfast import ManifoldGeometry, find_folds, rate_coefficient


class IntegrationError(RuntimeError):
    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class NonFiniteState(IntegrationError):
    pass


class PositivityViolation(IntegrationError):
    pass


class StepSizeUnderflow(IntegrationError):
    pass


def mpr_rhs(y, params: GeneralMfParams, forcing: ForcingParams, convention="pi2", k_scale=1.0):
    """Generalised single-population mean field with first-order synapse."""
    c = rate_coefficient(convention)
    r, v, s, K, Q = y
    eps = forcing.eps
    return np.array([
        params.delta / math.pi + 2.0 * r * v + params.gamma_tilde * s,
        v * v - c * r * r + params.J_tilde * s + k_scale * K,
        (r - s) / params.tau_s,
        eps * Q,
        -eps * (K - forcing.eta_bar),
    ])


def sparse_heuristic_rhs(y, sp: SparseParams, convention="pi2"):
    """Heuristic mean field of the sparse network."""
    return mpr_rhs(y, sparse_as_general(sp), sp.forcing, convention, k_scale=sp.sqrt_M)


def sparse_as_general(sp: SparseParams) -> GeneralMfParams:
    """Equivalent generalised parameters: gamma_tilde = J delta_gamma / pi and
    coupling sqrt(M) J; the input enters with weight sqrt(M)."""
    g = -sp.J * sp.delta_gamma / math.pi
    return GeneralMfParams(delta=sp.delta, J=sp.sqrt_M * sp.J, tau_s=sp.tau_s,
                           eta_bar=sp.eta_bar, Gamma=0.0, g=g, a=1.0)


def multipop_rhs(y, params: MultiPopParams, convention="pi2"):
    """p coupled populations; only population ``params.forced`` receives K.

    The forced population's background current is carried by K, whose
    oscillation is centred on ``eta_bars[forced]``.
    """
    p = params.p
    y = np.asarray(y, dtype=float)
    if y.shape != (3 * p + 2,):
        raise ValueError(f"state has shape {y.shape}, expected ({3 * p + 2},) for p={p}")
    c = rate_coefficient(convention)
    deltas, gam, etas, taus, Jt = params.arrays()
    r, v, s = y[:p], y[p:2 * p], y[2 * p:3 * p]
    K, Q = y[3 * p], y[3 * p + 1]
    k = params.forced
    bg = etas.copy()
    bg[k] = 0.0
    drive = np.zeros(p)
    drive[k] = K
    eps = params.forcing.eps
    dr = deltas / math.pi + 2.0 * r * v + gam * s
    dv = v * v - c * r * r + Jt @ s + bg + drive
    ds = (r - s) / taus
    return np.concatenate([dr, dv, ds, [eps * Q, -eps * (K - etas[k])]])


@dataclass
class MeanFieldModel:
    """Single-population mean field bound to its parameters.

    ``k_scale`` weights the input K (``sqrt(M)`` for the sparse heuristic).
    """

    params: GeneralMfParams
    forcing: ForcingParams
    convention: str = "pi2"
    k_scale: float = 1.0

    @classmethod
    def sparse(cls, sp: SparseParams, convention="pi2"):
        return cls(sparse_as_general(sp), sp.forcing, convention, sp.sqrt_M)

    def __call__(self, t, y):
        return mpr_rhs(y, self.params, self.forcing, self.convention, self.k_scale)

    def kernel_coef(self):
        p = self.params
        return np.array([p.delta, p.gamma_tilde, rate_coefficient(self.convention), p.J_tilde,
                         self.k_scale, p.tau_s, self.forcing.eps, self.forcing.eta_bar])

    def with_forcing(self, forcing):
        return MeanFieldModel(self.params, forcing, self.convention, self.k_scale)

    def geometry(self, **kw) -> ManifoldGeometry:
        """Fold geometry of S0; the scan reaches ``1e-4 min(1, delta)`` from the
        pole, since the upper fold approaches it as ``delta -> 0``."""
        p = self.params
        kw.setdefault("v_window", (-50.0, -1e-4 * min(1.0, p.delta)))
        return find_folds(p.delta, p.J_tilde, self.convention, gamma_tilde=p.gamma_tilde,
                          k_scale=self.k_scale, **kw)

    def fast_jacobian(self, y):
        """Jacobian of ``(r', v', s')`` in ``(r, v, s)`` with K frozen."""
        c = rate_coefficient(self.convention)
        r, v, s = y[0], y[1], y[2]
        p = self.params
        return np.array([
            [2.0 * v, 2.0 * r, p.gamma_tilde],
            [-2.0 * c * r, 2.0 * v, p.J_tilde],
            [1.0 / p.tau_s, 0.0, -1.0 / p.tau_s],
        ])

    def default_dt(self):
        return min(self.params.tau_s / 20.0, 1e-3 / self.forcing.eps)


def sheet_state(geometry: ManifoldGeometry, K, sheet, Q=0.0):
    """State ``(r, v, s, K, Q)`` sitting on ``sheet`` of S0 at input K."""
    v = geometry.branch_v(K, sheet)
    r = float(geometry.rate(v))
    return np.array([r, v, r, K, Q])


def forced_initial_state(model: MeanFieldModel, geometry: ManifoldGeometry, sheet):
    """Start on ``sheet`` at ``K = eta_bar`` with ``Q = A`` (phase zero)."""
    return sheet_state(geometry, model.forcing.eta_bar, sheet, Q=model.forcing.A)


@dataclass
class Trajectory:
    t: np.ndarray
    y: np.ndarray
    method: str
    accepted: int = 0
    rejected: int = 0
    columns: tuple = ("r", "v", "s", "K", "Q")

    def col(self, name):
        return self.y[:, self.columns.index(name)]

    def __len__(self):
        return self.t.size


def integrate(rhs, y0, t_span, dt=None, method="rk4", record_every=1, t_eval=None,
              rtol=1e-8, atol=1e-10, positive=(0,), backend=None, max_steps=10_000_000):
    """Integrate ``y' = rhs(t, y)`` over ``t_span``.

    Parameters
    ----------
    rhs : callable or MeanFieldModel
        For a :class:`MeanFieldModel` with ``method='rk4'`` the compiled
        kernel is used.
    dt : float
        Fixed step (rk4/heun) or initial step (rkf45).
    method : {'rk4', 'heun', 'rkf45'}
    record_every : int
        Fixed-step output stride.
    t_eval : array_like, optional
        Output grid for rkf45 (steps are clipped to land on it).
    positive : tuple of int
        State indices that must stay > 0 (the firing rates).

    Raises
    ------
    NonFiniteState, PositivityViolation, StepSizeUnderflow
    """
    t0, t1 = map(float, t_span)
    y0 = np.array(y0, dtype=float)
    if t1 < t0:
        raise ValueError("t_span must be increasing")
    if method == "rkf45":
        return _rkf45(rhs, y0, t0, t1, dt, t_eval, rtol, atol, positive, max_steps)
    if dt is None or dt <= 0:
        raise ValueError("fixed-step methods need dt > 0")
    nsteps = int(round((t1 - t0) / dt))
    if method == "rk4" and isinstance(rhs, MeanFieldModel):
        return _kernel_rk4(rhs, y0, t0, dt, nsteps, record_every, backend)
    if method not in ("rk4", "heun"):
        raise ValueError(f"unknown method {method!r}")
    step = _rk4_step if method == "rk4" else _heun_step
    nrec = nsteps // record_every + 1
    ts = np.empty(nrec)
    ys = np.empty((nrec, y0.size))
    ts[0], ys[0] = t0, y0
    y = y0
    row = 1
    pos = list(positive)
    for n in range(1, nsteps + 1):
        t = t0 + (n - 1) * dt
        y = step(rhs, t, y, dt)
        if not np.all(np.isfinite(y)):
            raise NonFiniteState(f"nonfinite state at t={t + dt:.6g}", t + dt)
        if pos and np.any(y[pos] <= 0):
            raise PositivityViolation(f"rate became nonpositive at t={t + dt:.6g}", t + dt)
        if n % record_every == 0:
            ts[row], ys[row] = t0 + n * dt, y
            row += 1
    return Trajectory(ts[:row], ys[:row], method, accepted=nsteps)


def _kernel_rk4(model, y0, t0, dt, nsteps, record_every, backend):
    k = kernels.get(backend)
    rec = np.empty((nsteps // record_every + 1, 6))
    status, step, rows = k.mf_rk4(y0, t0, dt, nsteps, record_every, model.kernel_coef(), rec)
    if status == 1:
        raise NonFiniteState(f"nonfinite state at t={t0 + step * dt:.6g}", t0 + step * dt)
    if status == 2:
        raise PositivityViolation(f"rate became nonpositive at t={t0 + step * dt:.6g}", t0 + step * dt)
    return Trajectory(rec[:rows, 0].copy(), rec[:rows, 1:].copy(), "rk4", accepted=nsteps)


def _rk4_step(f, t, y, h):
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _heun_step(f, t, y, h):
    k1 = f(t, y)
    k2 = f(t + h, y + h * k1)
    return y + 0.5 * h * (k1 + k2)


# Fehlberg 4(5) tableau; the 5th-order solution is propagated.
_A = [
    [],
    [1 / 4],
    [3 / 32, 9 / 32],
    [1932 / 2197, -7200 / 2197, 7296 / 2197],
    [439 / 216, -8, 3680 / 513, -845 / 4104],
    [-8 / 27, 2, -3544 / 2565, 1859 / 4104, -11 / 40],
]
_C = [0, 1 / 4, 3 / 8, 12 / 13, 1, 1 / 2]
_B5 = np.array([16 / 135, 0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55])
_B4 = np.array([25 / 216, 0, 1408 / 2565, 2197 / 4104, -1 / 5, 0])


def _rkf45(f, y0, t0, t1, h, t_eval, rtol, atol, positive, max_steps):
    if t_eval is None:
        t_eval = np.array([t0, t1])
    t_eval = np.asarray(t_eval, dtype=float)
    if t_eval.size and (t_eval[0] < t0 or t_eval[-1] > t1 or np.any(np.diff(t_eval) < 0)):
        raise ValueError("t_eval must be sorted and inside t_span")
    h = (t1 - t0) / 100.0 if h is None else float(h)
    pos = list(positive)
    out_t, out_y = [], []
    idx = 0
    while idx < t_eval.size and t_eval[idx] <= t0:
        out_t.append(t_eval[idx])
        out_y.append(y0.copy())
        idx += 1
    t, y = t0, y0.copy()
    acc = rej = 0
    hmin = 1e-14 * max(1.0, abs(t1))
    while t < t1 and acc + rej < max_steps:
        target = t_eval[idx] if idx < t_eval.size else t1
        h_try = min(h, target - t)
        ks = []
        for i in range(6):
            yi = y + h_try * sum((a * k for a, k in zip(_A[i], ks)), np.zeros_like(y))
            ks.append(np.asarray(f(t + _C[i] * h_try, yi), dtype=float))
        K = np.array(ks)
        y5 = y + h_try * (_B5 @ K)
        err = h_try * ((_B5 - _B4) @ K)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y5))
        en = float(np.sqrt(np.mean((err / scale) ** 2)))
        ok = np.all(np.isfinite(y5)) and not (pos and np.any(y5[pos] <= 0))
        if ok and en <= 1.0:
            t = target if h_try == target - t else t + h_try
            y = y5
            acc += 1
            while idx < t_eval.size and t_eval[idx] <= t:
                out_t.append(t_eval[idx])
                out_y.append(y.copy())
                idx += 1
            fac = 5.0 if en == 0 else min(5.0, 0.9 * en ** -0.2)
            h = max(h_try, h) if h_try < h and fac >= 1 else h_try * fac
        else:
            rej += 1
            fac = 0.2 if not ok or not math.isfinite(en) else max(0.2, 0.9 * en ** -0.25)
            h = h_try * fac
            if h < hmin:
                if not np.all(np.isfinite(y5)):
                    raise NonFiniteState(f"nonfinite state near t={t:.6g}", t)
                raise StepSizeUnderflow(f"step size underflow at t={t:.6g}", t)
    if t < t1:
        raise StepSizeUnderflow(f"exceeded {max_steps} steps before t={t1}", t)
    return Trajectory(np.array(out_t), np.array(out_y), "rkf45", accepted=acc, rejected=rej)


@dataclass(frozen=True)
class BurstMeasures:
    snorm: float
    inv_snorm: float
    delta_r: float


def burst_measures(t, r, s, window=None) -> BurstMeasures:
    """Integral of s, its reciprocal and the range of r over ``window``.

    ``inv_snorm`` is ``inf`` when the integral vanishes.
    """
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    if window is not None:
        lo, hi = window
        if lo < t[0] - 1e-9 * max(1.0, abs(t[0])) or hi > t[-1] + 1e-9 * max(1.0, abs(t[-1])):
            raise ValueError(f"window {window} outside trajectory span [{t[0]}, {t[-1]}]")
        m = (t >= lo) & (t <= hi)
        t, r, s = t[m], r[m], s[m]
    snorm = float(np.trapezoid(s, t)) if t.size > 1 else 0.0
    inv = math.inf if snorm == 0 else 1.0 / snorm
    dr = float(r.max() - r.min()) if r.size else 0.0
    return BurstMeasures(snorm, inv, dr)


def trajectory_to_csv_columns(p):
    if p == 1:
        return ("r", "v", "s", "K", "Q")
    return tuple(f"{n}_{i + 1}" for n in ("r", "v", "s") for i in range(p)) + ("K", "Q")
