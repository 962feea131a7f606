# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

Every function here has a pure-Python twin with the same signature in
``_pycore.py``; :mod:`qifcanard.kernels` picks one at import time.
Status codes: 0 ok, 1 non-finite state, 2 non-positive rate, 3 spike log full.
"""
from libc.math cimport sin, cos, isfinite, M_PI, INFINITY

cdef double INF = INFINITY
# gates below this are flushed to zero; decaying into subnormals is very slow
cdef double TINY = 1e-200

import numpy as np

cdef double pairwise_sum(double* a, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, h
    cdef double acc
    if n <= 64:
        acc = 0.0
        for i in range(n):
            acc += a[i]
        return acc
    h = n // 2
    return pairwise_sum(a, h) + pairwise_sum(a + h, n - h)


def reduce_sum(double[::1] a):
    """Fixed-shape pairwise sum, independent of any threading."""
    if a.shape[0] == 0:
        return 0.0
    return pairwise_sum(&a[0], a.shape[0])


cdef inline void mf_rhs(double* y, double* c, double* out) noexcept nogil:
    # c = delta, gamma_t, c_rate, J_t, k_scale, tau_s, eps, eta_bar
    cdef double r = y[0], v = y[1], s = y[2], K = y[3], Q = y[4]
    out[0] = c[0] / M_PI + 2.0 * r * v + c[1] * s
    out[1] = v * v - c[2] * r * r + c[3] * s + c[4] * K
    out[2] = (r - s) / c[5]
    out[3] = c[6] * Q
    out[4] = -c[6] * (K - c[7])


def mf_rk4(double[::1] y0, double t0, double dt, long nsteps, long record_every,
           double[::1] coef, double[:, ::1] rec):
    """RK4 for the one-population mean field with (K, Q) oscillator.

    ``rec`` has shape (nsteps // record_every + 1, 6): t, r, v, s, K, Q.
    Returns (status, failed_step, rows_written).
    """
    cdef double y[5]
    cdef double k1[5]
    cdef double k2[5]
    cdef double k3[5]
    cdef double k4[5]
    cdef double tmp[5]
    cdef double c[8]
    cdef long n, row = 0
    cdef int j, status = 0
    cdef double t = t0
    for j in range(5):
        y[j] = y0[j]
    for j in range(8):
        c[j] = coef[j]
    rec[0, 0] = t
    for j in range(5):
        rec[0, j + 1] = y[j]
    row = 1
    with nogil:
        for n in range(1, nsteps + 1):
            mf_rhs(y, c, k1)
            for j in range(5):
                tmp[j] = y[j] + 0.5 * dt * k1[j]
            mf_rhs(tmp, c, k2)
            for j in range(5):
                tmp[j] = y[j] + 0.5 * dt * k2[j]
            mf_rhs(tmp, c, k3)
            for j in range(5):
                tmp[j] = y[j] + dt * k3[j]
            mf_rhs(tmp, c, k4)
            for j in range(5):
                y[j] = y[j] + dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
            t = t0 + n * dt
            for j in range(5):
                if not isfinite(y[j]):
                    status = 1
            if status == 0 and y[0] <= 0.0:
                status = 2
            if status != 0:
                break
            if n % record_every == 0:
                rec[row, 0] = t
                for j in range(5):
                    rec[row, j + 1] = y[j]
                row += 1
    if status != 0:
        return status, n, row
    return 0, nsteps, row


def dense_run(double[::1] V, double[::1] s, double[::1] hold_until, double[::1] emit_at,
              double[::1] eta,
              double t0, double dt, long nsteps, double[::1] p,
              int[::1] step_counts, double[:, ::1] rec, long record_every,
              double[::1] sp_t, int[::1] sp_i):
    """Fixed-step all-to-all QIF network; mutates V, s, hold_until, emit_at.

    With a hold (p[7] > 0) a neuron crossing V_t at time tc is clamped at V_r
    until tc + hold and its spike (log entry and synaptic jump) is emitted at
    tc + hold/2, the time at which V would diverge; ``emit_at`` stores the
    pending emission times (+inf when none).

    p = coupling, tau_s, V_t, V_r, jump_per_gate, amp, eps, hold, method.
    ``rec`` rows: t, mean V (pre-reset), winsorized mean V, mean s, spikes
    since previous row. Returns (t_end, status, fail_index, n_logged, n_spikes).
    """
    cdef Py_ssize_t N = V.shape[0]
    cdef Py_ssize_t i
    cdef double coupling = p[0], tau_s = p[1], V_t = p[2], V_r = p[3]
    cdef double jump = p[4], amp = p[5], eps = p[6], hold = p[7]
    cdef int heun = <int>p[8]
    cdef long cap = sp_t.shape[0]
    cdef long n, row = 1, logged = 0, total = 0, since = 0
    cdef int status = 0, count, recording
    cdef Py_ssize_t fail = -1
    cdef double h, t = t0, t1, tc, S, S_pred, I0, I1, f0, Vp, Vn, Vold, acc_p, acc_w, w
    cdef double dec_e = 1.0 - dt / tau_s
    cdef double dec = dec_e + (0.5 * dt * dt / (tau_s * tau_s) if heun else 0.0)
    cdef bint use_hold = hold > 0.0
    with nogil:
        for n in range(1, nsteps + 1):
            t1 = t0 + n * dt
            S = pairwise_sum(&s[0], N)
            S_pred = S * dec_e
            I0 = amp * sin(eps * t)
            I1 = amp * sin(eps * t1)
            recording = (n % record_every == 0)
            acc_p = 0.0
            acc_w = 0.0
            count = 0
            for i in range(N):
                Vold = V[i]
                if use_hold and emit_at[i] <= t1:
                    if cap > 0:
                        if logged >= cap:
                            status = 3
                            fail = i
                            break
                        sp_t[logged] = emit_at[i]
                        sp_i[logged] = <int>i
                        logged += 1
                    emit_at[i] = INF
                    count += 1
                h = dt
                if use_hold and hold_until[i] > t:
                    # released part-way through the step: integrate the remainder only
                    h = t1 - hold_until[i]
                if h <= 0.0:
                    Vn = V_r
                else:
                    f0 = Vold * Vold + eta[i] + I0 + coupling * S
                    if heun:
                        Vp = Vold + h * f0
                        Vn = Vold + 0.5 * h * (f0 + Vp * Vp + eta[i] + I1 + coupling * S_pred)
                    else:
                        Vn = Vold + h * f0
                if not isfinite(Vn):
                    status = 1
                    fail = i
                    break
                if recording:
                    acc_p = acc_p + Vn
                    w = Vn
                    if w > V_t:
                        w = V_t
                    elif w < V_r:
                        w = V_r
                    acc_w = acc_w + w
                if Vn >= V_t:
                    if Vn > Vold:
                        tc = t + dt * (V_t - Vold) / (Vn - Vold)
                    else:
                        tc = t1
                    Vn = V_r
                    if use_hold:
                        hold_until[i] = tc + hold
                        emit_at[i] = tc + 0.5 * hold
                        if emit_at[i] > t1:
                            V[i] = Vn
                            continue
                        tc = emit_at[i]
                        emit_at[i] = INF
                    if cap > 0:
                        if logged >= cap:
                            status = 3
                            fail = i
                            break
                        sp_t[logged] = tc
                        sp_i[logged] = <int>i
                        logged += 1
                    count += 1
                V[i] = Vn
            if status != 0:
                break
            for i in range(N):
                s[i] = s[i] * dec + count * jump
                if s[i] < TINY:
                    s[i] = 0.0
            step_counts[n - 1] = count
            total += count
            since += count
            t = t1
            if recording:
                rec[row, 0] = t
                rec[row, 1] = acc_p / N
                rec[row, 2] = acc_w / N
                rec[row, 3] = pairwise_sum(&s[0], N) / N
                rec[row, 4] = since
                since = 0
                row += 1
    return t, status, fail, logged, total


def sparse_run(double[::1] V, double[::1] s, double[::1] u, double[::1] hold_until,
               double[::1] emit_at, double[::1] eta, int[::1] out_ptr, int[::1] out_idx,
               double t0, double dt, long nsteps, double[::1] p,
               int[::1] step_counts, double[:, ::1] rec, long record_every,
               double[::1] sp_t, int[::1] sp_i):
    """Fixed-step sparse QIF network with own-gate jumps.

    ``u[i]`` carries the presynaptic gate sum of neuron i and is updated
    incrementally through the out-neighbour lists (CSR of the transpose).
    Same parameter layout and return value as :func:`dense_run`.
    """
    cdef Py_ssize_t N = V.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double coupling = p[0], tau_s = p[1], V_t = p[2], V_r = p[3]
    cdef double jump = p[4], amp = p[5], eps = p[6], hold = p[7]
    cdef int heun = <int>p[8]
    cdef long cap = sp_t.shape[0]
    cdef long n, row = 1, logged = 0, total = 0, since = 0, nfire
    cdef int status = 0, count, recording
    cdef Py_ssize_t fail = -1
    cdef double h, t = t0, t1, tc, I0, I1, f0, Vp, Vn, Vold, acc_p, acc_w, w
    cdef double dec_e = 1.0 - dt / tau_s
    cdef double dec = dec_e + (0.5 * dt * dt / (tau_s * tau_s) if heun else 0.0)
    cdef bint use_hold = hold > 0.0
    cdef int[::1] fired = np.empty(N, dtype=np.intc)
    with nogil:
        for n in range(1, nsteps + 1):
            t1 = t0 + n * dt
            I0 = amp * sin(eps * t)
            I1 = amp * sin(eps * t1)
            recording = (n % record_every == 0)
            acc_p = 0.0
            acc_w = 0.0
            count = 0
            for i in range(N):
                Vold = V[i]
                if use_hold and emit_at[i] <= t1:
                    if cap > 0:
                        if logged >= cap:
                            status = 3
                            fail = i
                            break
                        sp_t[logged] = emit_at[i]
                        sp_i[logged] = <int>i
                        logged += 1
                    emit_at[i] = INF
                    fired[count] = <int>i
                    count += 1
                h = dt
                if use_hold and hold_until[i] > t:
                    h = t1 - hold_until[i]
                if h <= 0.0:
                    Vn = V_r
                else:
                    f0 = Vold * Vold + eta[i] + I0 + coupling * u[i]
                    if heun:
                        Vp = Vold + h * f0
                        Vn = Vold + 0.5 * h * (f0 + Vp * Vp + eta[i] + I1 + coupling * u[i] * dec_e)
                    else:
                        Vn = Vold + h * f0
                if not isfinite(Vn):
                    status = 1
                    fail = i
                    break
                if recording:
                    acc_p = acc_p + Vn
                    w = Vn
                    if w > V_t:
                        w = V_t
                    elif w < V_r:
                        w = V_r
                    acc_w = acc_w + w
                if Vn >= V_t:
                    if Vn > Vold:
                        tc = t + dt * (V_t - Vold) / (Vn - Vold)
                    else:
                        tc = t1
                    Vn = V_r
                    if use_hold:
                        hold_until[i] = tc + hold
                        emit_at[i] = tc + 0.5 * hold
                        if emit_at[i] > t1:
                            V[i] = Vn
                            continue
                        tc = emit_at[i]
                        emit_at[i] = INF
                    if cap > 0:
                        if logged >= cap:
                            status = 3
                            fail = i
                            break
                        sp_t[logged] = tc
                        sp_i[logged] = <int>i
                        logged += 1
                    fired[count] = <int>i
                    count += 1
                V[i] = Vn
            if status != 0:
                break
            for i in range(N):
                s[i] = s[i] * dec
                if s[i] < TINY:
                    s[i] = 0.0
                u[i] = u[i] * dec
                if u[i] < TINY:
                    u[i] = 0.0
            for k in range(count):
                j = fired[k]
                s[j] = s[j] + jump
                for i in range(out_ptr[j], out_ptr[j + 1]):
                    u[out_idx[i]] = u[out_idx[i]] + jump
            step_counts[n - 1] = count
            total += count
            since += count
            t = t1
            if recording:
                rec[row, 0] = t
                rec[row, 1] = acc_p / N
                rec[row, 2] = acc_w / N
                rec[row, 3] = pairwise_sum(&s[0], N) / N
                rec[row, 4] = since
                since = 0
                row += 1
    return t, status, fail, logged, total


cdef inline void theta_rhs_c(double th, double sv, double t, double* c, double* out) noexcept nogil:
    # c = eta, J, tau_s, kappa, amp, eps, theta_thr
    cdef double inp = c[0] + c[4] * sin(c[5] * t) + c[1] * sv
    out[0] = 1.0 - cos(th) + (1.0 + cos(th)) * inp
    out[1] = -sv / c[2]


def theta_run(double[::1] state, double t0, double dt, long nsteps, double[::1] p,
              double[:, ::1] rec, long record_every, double[::1] sp_t):
    """RK4 for the single theta neuron with a self-coupled synapse.

    ``state`` = (theta, s), mutated in place. A spike is a crossing of
    p[6] from below; at theta = pi the phase wraps by 2*pi, otherwise it is
    reset to -pi. ``rec`` rows: t, theta, s.
    Returns (t_end, status, n_spikes).
    """
    cdef double c[7]
    cdef double k1[2]
    cdef double k2[2]
    cdef double k3[2]
    cdef double k4[2]
    cdef double th = state[0], sv = state[1], thn, svn, t = t0, t1, h2
    cdef long cap = sp_t.shape[0]
    cdef long n, row = 1, nsp = 0
    cdef int j, status = 0
    cdef bint wrap
    for j in range(7):
        c[j] = p[j]
    wrap = c[6] >= M_PI
    h2 = 0.5 * dt
    rec[0, 0] = t
    rec[0, 1] = th
    rec[0, 2] = sv
    with nogil:
        for n in range(1, nsteps + 1):
            t1 = t0 + n * dt
            theta_rhs_c(th, sv, t, c, k1)
            theta_rhs_c(th + h2 * k1[0], sv + h2 * k1[1], t + h2, c, k2)
            theta_rhs_c(th + h2 * k2[0], sv + h2 * k2[1], t + h2, c, k3)
            theta_rhs_c(th + dt * k3[0], sv + dt * k3[1], t1, c, k4)
            thn = th + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
            svn = sv + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
            if not (isfinite(thn) and isfinite(svn)):
                status = 1
                break
            if th < c[6] and thn >= c[6]:
                if nsp >= cap:
                    status = 3
                    break
                sp_t[nsp] = t + dt * (c[6] - th) / (thn - th)
                nsp += 1
                svn = svn + c[3]
                if wrap:
                    thn = thn - 2.0 * M_PI
                else:
                    thn = -M_PI
            th = thn
            sv = svn
            t = t1
            if n % record_every == 0:
                rec[row, 0] = t
                rec[row, 1] = th
                rec[row, 2] = sv
                row += 1
    state[0] = th
    state[1] = sv
    return t, status, nsp
