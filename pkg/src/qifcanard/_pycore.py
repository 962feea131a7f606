"""Pure-Python/numpy versions of the kernels in ``_core.pyx``.

Same signatures, same in-place semantics, same status codes. Network
kernels vectorise over neurons with numpy; the scalar integrators are plain
Python loops and are slow for long runs.
"""
import math

import numpy as np

TINY = 1e-200  # gates below this are flushed to zero


def reduce_sum(a):
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return 0.0
    return _pairwise(a)


def _pairwise(a):
    n = a.shape[0]
    if n <= 64:
        acc = 0.0
        for x in a.tolist():
            acc += x
        return acc
    h = n // 2
    return _pairwise(a[:h]) + _pairwise(a[h:])


def _mf_rhs(y, c):
    r, v, s, K, Q = y
    return (
        c[0] / math.pi + 2.0 * r * v + c[1] * s,
        v * v - c[2] * r * r + c[3] * s + c[4] * K,
        (r - s) / c[5],
        c[6] * Q,
        -c[6] * (K - c[7]),
    )


def mf_rk4(y0, t0, dt, nsteps, record_every, coef, rec):
    c = [float(x) for x in coef]
    y = [float(x) for x in y0]
    rec[0, 0] = t0
    rec[0, 1:] = y
    row = 1
    for n in range(1, nsteps + 1):
        k1 = _mf_rhs(y, c)
        k2 = _mf_rhs([y[j] + 0.5 * dt * k1[j] for j in range(5)], c)
        k3 = _mf_rhs([y[j] + 0.5 * dt * k2[j] for j in range(5)], c)
        k4 = _mf_rhs([y[j] + dt * k3[j] for j in range(5)], c)
        y = [y[j] + dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]) for j in range(5)]
        if not all(math.isfinite(x) for x in y):
            return 1, n, row
        if y[0] <= 0.0:
            return 2, n, row
        if n % record_every == 0:
            rec[row, 0] = t0 + n * dt
            rec[row, 1:] = y
            row += 1
    return 0, nsteps, row


def _network_run(V, s, u, hold_until, emit_at, eta, out_ptr, out_idx, t0, dt, nsteps, p,
                 step_counts, rec, record_every, sp_t, sp_i, dense):
    N = V.shape[0]
    coupling, tau_s, V_t, V_r, jump, amp, eps, hold = (float(x) for x in p[:8])
    heun = int(p[8])
    cap = sp_t.shape[0]
    dec_e = 1.0 - dt / tau_s
    dec = dec_e + (0.5 * dt * dt / (tau_s * tau_s) if heun else 0.0)
    use_hold = hold > 0.0
    row, logged, total, since = 1, 0, 0, 0
    t = t0
    for n in range(1, nsteps + 1):
        t1 = t0 + n * dt
        I0 = amp * math.sin(eps * t)
        I1 = amp * math.sin(eps * t1)
        if dense:
            S = float(np.sum(s))
            drive0 = coupling * S
            drive1 = coupling * S * dec_e
        else:
            drive0 = coupling * u
            drive1 = drive0 * dec_e
        h = dt
        if use_hold:
            # neurons released part-way through the step integrate the remainder only
            h = np.where(hold_until > t, t1 - hold_until, dt)
        f0 = V * V + eta + I0 + drive0
        if heun:
            Vp = V + h * f0
            Vn = V + 0.5 * h * (f0 + Vp * Vp + eta + I1 + drive1)
        else:
            Vn = V + h * f0
        if use_hold:
            due = np.flatnonzero(emit_at <= t1)
            Vn = np.where(h <= 0.0, V_r, Vn)
        bad = ~np.isfinite(Vn)
        if bad.any():
            return t, 1, int(np.flatnonzero(bad)[0]), logged, total
        crossed = np.flatnonzero(Vn >= V_t)
        Vo = V[crossed]
        Vf = Vn[crossed]
        with np.errstate(divide="ignore", invalid="ignore"):
            tc = np.where(Vf > Vo, t + dt * (V_t - Vo) / (Vf - Vo), t1)
        if use_hold:
            hold_until[crossed] = tc + hold
            emit_at[crossed] = tc + 0.5 * hold
            now = emit_at[crossed] <= t1
            # due neurons emit first, then fresh crossings emitting within this step
            ev_i = np.concatenate([due, crossed[now]])
            ev_t = np.concatenate([emit_at[due], emit_at[crossed[now]]])
            emit_at[due] = np.inf
            emit_at[crossed[now]] = np.inf
            order = np.argsort(ev_i, kind="stable")
            fired, ft = ev_i[order], ev_t[order]
        else:
            fired, ft = crossed, tc
        count = fired.size
        if count and cap > 0:
            if logged + count > cap:
                return t, 3, int(fired[cap - logged]) if cap > logged else int(fired[0]), logged, total
            sp_t[logged:logged + count] = ft
            sp_i[logged:logged + count] = fired
            logged += count
        if n % record_every == 0:
            rec[row, 1] = float(np.sum(Vn)) / N
            rec[row, 2] = float(np.sum(np.clip(Vn, V_r, V_t))) / N
        Vn[crossed] = V_r
        V[:] = Vn
        if dense:
            s *= dec
            s += count * jump
            s[s < TINY] = 0.0
        else:
            s *= dec
            s[s < TINY] = 0.0
            u *= dec
            u[u < TINY] = 0.0
            for j in fired.tolist():
                s[j] += jump
                u[out_idx[out_ptr[j]:out_ptr[j + 1]]] += jump
        step_counts[n - 1] = count
        total += count
        since += count
        t = t1
        if n % record_every == 0:
            rec[row, 0] = t
            rec[row, 3] = float(np.sum(s)) / N
            rec[row, 4] = since
            since = 0
            row += 1
    return t, 0, -1, logged, total


def dense_run(V, s, hold_until, emit_at, eta, t0, dt, nsteps, p, step_counts, rec,
              record_every, sp_t, sp_i):
    return _network_run(V, s, None, hold_until, emit_at, eta, None, None, t0, dt, nsteps, p,
                        step_counts, rec, record_every, sp_t, sp_i, dense=True)


def sparse_run(V, s, u, hold_until, emit_at, eta, out_ptr, out_idx, t0, dt, nsteps, p,
               step_counts, rec, record_every, sp_t, sp_i):
    return _network_run(V, s, u, hold_until, emit_at, eta, out_ptr, out_idx, t0, dt, nsteps, p,
                        step_counts, rec, record_every, sp_t, sp_i, dense=False)


def _theta_rhs(th, sv, t, c):
    inp = c[0] + c[4] * math.sin(c[5] * t) + c[1] * sv
    return 1.0 - math.cos(th) + (1.0 + math.cos(th)) * inp, -sv / c[2]


def theta_run(state, t0, dt, nsteps, p, rec, record_every, sp_t):
    c = [float(x) for x in p[:7]]
    th, sv = float(state[0]), float(state[1])
    wrap = c[6] >= math.pi
    cap = sp_t.shape[0]
    h2 = 0.5 * dt
    t = t0
    rec[0] = (t, th, sv)
    row, nsp, status = 1, 0, 0
    for n in range(1, nsteps + 1):
        t1 = t0 + n * dt
        a0, b0 = _theta_rhs(th, sv, t, c)
        a1, b1 = _theta_rhs(th + h2 * a0, sv + h2 * b0, t + h2, c)
        a2, b2 = _theta_rhs(th + h2 * a1, sv + h2 * b1, t + h2, c)
        a3, b3 = _theta_rhs(th + dt * a2, sv + dt * b2, t1, c)
        thn = th + dt / 6.0 * (a0 + 2.0 * a1 + 2.0 * a2 + a3)
        svn = sv + dt / 6.0 * (b0 + 2.0 * b1 + 2.0 * b2 + b3)
        if not (math.isfinite(thn) and math.isfinite(svn)):
            status = 1
            break
        if th < c[6] <= thn:
            if nsp >= cap:
                status = 3
                break
            sp_t[nsp] = t + dt * (c[6] - th) / (thn - th)
            nsp += 1
            svn += c[3]
            thn = thn - 2.0 * math.pi if wrap else -math.pi
        th, sv, t = thn, svn, t1
        if n % record_every == 0:
            rec[row] = (t, th, sv)
            row += 1
    state[0] = th
    state[1] = sv
    return t, status, nsp
