"""Critical manifold geometry, folded singularities and reduced slow flows.

The fast subsystem of the forced mean field has its equilibria on
``S0 = {s = r = r(v), k*K = -psi(v)}`` with ``r(v) = -delta / (pi (2v + gt))``
and ``psi(v) = v**2 - c r(v)**2 + Jt r(v)``; ``c`` is ``pi**2`` in the
``'pi2'`` convention and ``pi`` in the ``'printed'`` one, ``gt`` is the
generalised coupling heterogeneity and ``k`` the input scale (``sqrt(M)``
for the sparse heuristic, 1 otherwise).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

CONVENTIONS = {"pi2": math.pi ** 2, "printed": math.pi}


class SingularityError(ValueError):
    """Evaluation at the pole of r(v)."""


class FoldSearchError(RuntimeError):
    """The scan found a fold count other than 0 or 2."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class NoExcitableStructure(ValueError):
    pass


class SlavingFoldError(np.linalg.LinAlgError):
    """The unforced constraints cannot be solved for their voltages."""


def rate_coefficient(convention: str) -> float:
    try:
        return CONVENTIONS[convention]
    except KeyError:
        raise ValueError(f"unknown convention {convention!r}; use one of {sorted(CONVENTIONS)}") from None


def _rate_terms(v, delta, gamma_tilde):
    u = 2.0 * np.asarray(v, dtype=float) + gamma_tilde
    if np.any(u == 0):
        raise SingularityError("psi is singular where 2v + gamma_tilde = 0")
    r = -delta / (math.pi * u)
    dr = 2.0 * delta / (math.pi * u ** 2)
    d2r = -8.0 * delta / (math.pi * u ** 3)
    return r, dr, d2r


def psi_derivatives(v, delta, J_tilde, convention="pi2", gamma_tilde=0.0):
    """Return ``(psi, psi', psi'')`` at ``v``."""
    c = rate_coefficient(convention)
    v = np.asarray(v, dtype=float)
    r, dr, d2r = _rate_terms(v, delta, gamma_tilde)
    psi = v * v - c * r * r + J_tilde * r
    dpsi = 2.0 * v - 2.0 * c * r * dr + J_tilde * dr
    d2psi = 2.0 - 2.0 * c * (dr * dr + r * d2r) + J_tilde * d2r
    if psi.ndim == 0:
        return float(psi), float(dpsi), float(d2psi)
    return psi, dpsi, d2psi


def psi_eval(v, delta, J_tilde, convention="pi2", gamma_tilde=0.0):
    """Evaluate psi; with ``gamma_tilde = 0`` and the printed convention this is
    ``v**2 - delta**2/(4 pi v**2) - J delta/(2 pi v)``."""
    return psi_derivatives(v, delta, J_tilde, convention, gamma_tilde)[0]


@dataclass(frozen=True)
class Fold:
    v: float
    K: float
    eta_label: str  # 'eta_plus' or 'eta_minus'

    @property
    def location(self) -> str:
        return "F+" if self.eta_label == "eta_plus" else "F-"


@dataclass(frozen=True)
class Sheet:
    name: str  # 'down', 'repelling', 'up' or 'single'
    v_lo: float
    v_hi: float
    attracting: bool


@dataclass
class ManifoldGeometry:
    delta: float
    J_tilde: float
    convention: str = "pi2"
    gamma_tilde: float = 0.0
    k_scale: float = 1.0
    folds: list = field(default_factory=list)
    sheets: list = field(default_factory=list)

    @property
    def v_pole(self) -> float:
        return -0.5 * self.gamma_tilde

    @property
    def eta_plus(self):
        return next((f.K for f in self.folds if f.eta_label == "eta_plus"), None)

    @property
    def eta_minus(self):
        return next((f.K for f in self.folds if f.eta_label == "eta_minus"), None)

    @property
    def eta_zero(self):
        if len(self.folds) != 2:
            return None
        return 0.5 * (self.eta_plus + self.eta_minus)

    def fold(self, location: str) -> Fold:
        for f in self.folds:
            if f.location == location:
                return f
        raise KeyError(f"no fold {location!r} in a {len(self.folds)}-fold geometry")

    def psi(self, v):
        return psi_eval(v, self.delta, self.J_tilde, self.convention, self.gamma_tilde)

    def derivatives(self, v):
        return psi_derivatives(v, self.delta, self.J_tilde, self.convention, self.gamma_tilde)

    def rate(self, v):
        return _rate_terms(v, self.delta, self.gamma_tilde)[0]

    def K_of_v(self, v):
        K = -self.psi(v) / self.k_scale
        return float(K) if np.ndim(K) == 0 else K

    def sheet(self, name: str) -> Sheet:
        for sh in self.sheets:
            if sh.name == name:
                return sh
        raise KeyError(f"no sheet {name!r}; have {[s.name for s in self.sheets]}")

    def branch_v(self, K, sheet="down"):
        """Voltage on ``sheet`` where the manifold passes through input ``K``."""
        sh = self.sheet(sheet)
        g = lambda v: self.K_of_v(v) - K
        lo, hi = sh.v_lo, sh.v_hi
        if not math.isfinite(lo):
            width = 1.0
            lo = hi - width
            while g(lo) * g(hi) > 0 and width < 1e8:
                width *= 2.0
                lo = hi - width
        if hi >= self.v_pole:
            d = 1.0
            hi = self.v_pole - d
            while (hi <= lo or g(lo) * g(hi) > 0) and d > 1e-14:
                d *= 0.5
                hi = self.v_pole - d
        # nudge endpoints off the folds where g may vanish to rounding
        if g(lo) * g(hi) > 0:
            raise ValueError(f"input K={K} is not attained on sheet {sheet!r}")
        return brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)

    def sample(self, K_range, n=400):
        """Points of S0 with K in ``K_range``: dict of arrays v, r, s, K, sheet."""
        Klo, Khi = K_range
        out = {"v": [], "r": [], "s": [], "K": [], "sheet": []}
        for sh in self.sheets:
            vs = _sheet_samples(self, sh, Klo, Khi, n)
            if vs.size == 0:
                continue
            Ks = self.K_of_v(vs)
            keep = (Ks >= Klo) & (Ks <= Khi)
            vs, Ks = vs[keep], Ks[keep]
            r = self.rate(vs)
            out["v"].append(vs)
            out["r"].append(r)
            out["s"].append(r)
            out["K"].append(Ks)
            out["sheet"].append(np.full(vs.size, sh.name, dtype=object))
        return {k: (np.concatenate(v) if v else np.empty(0)) for k, v in out.items()}

    def to_json(self, eta_bar=None) -> dict:
        doc = {
            "convention": self.convention,
            "folds": [{"v": f.v, "K": f.K, "eta_label": f.eta_label} for f in self.folds],
            "eta_plus": self.eta_plus,
            "eta_minus": self.eta_minus,
            "eta_zero": self.eta_zero,
            "singularities": [],
        }
        if eta_bar is not None:
            for f in self.folds:
                fs = classify_folded_singularity(f, eta_bar, self)
                doc["singularities"].append({"location": fs.location, "sigma": fs.sigma, "class": fs.cls})
        return doc


def _sheet_samples(geom, sh, Klo, Khi, n):
    lo, hi = sh.v_lo, sh.v_hi
    if not math.isfinite(lo):
        try:
            lo = geom.branch_v(Klo, sh.name) if geom.K_of_v(hi) > Klo else hi
        except ValueError:
            lo = hi - 1.0
    if hi >= geom.v_pole:
        try:
            hi = geom.branch_v(Khi, sh.name) if geom.K_of_v(lo) < Khi else lo
        except ValueError:
            hi = geom.v_pole - 1e-6
    if hi <= lo:
        return np.empty(0)
    return np.linspace(lo, hi, n)


def find_folds(delta, J_tilde, convention="pi2", v_window=(-50.0, -1e-4), n_scan=10_000,
               gamma_tilde=0.0, k_scale=1.0) -> ManifoldGeometry:
    """Locate the folds of S0 (roots of psi') by scan and bisection.

    The scan is geometric in the distance to the pole ``v = -gamma_tilde/2``,
    spanning the same distances as ``v_window`` does for ``gamma_tilde = 0``,
    so that folds crowded against the pole (small delta) are resolved.
    """
    lo, hi = v_window
    if not lo < hi < 0:
        raise ValueError(f"v_window must satisfy lo < hi < 0, got {v_window}")
    v_pole = -0.5 * gamma_tilde
    d_near, d_far = -hi, -lo
    d = np.geomspace(d_near, d_far, n_scan)
    v = (v_pole - d)[::-1]
    dpsi = psi_derivatives(v, delta, J_tilde, convention, gamma_tilde)[1]
    sgn = np.sign(dpsi)
    idx = np.flatnonzero(sgn[:-1] * sgn[1:] < 0)
    if idx.size not in (0, 2):
        trace = {"v": v, "dpsi": dpsi, "sign_changes": v[idx]}
        raise FoldSearchError(
            f"found {idx.size} sign changes of psi' in {v_window}; widen the window or refine the scan",
            trace)
    f = lambda x: psi_derivatives(x, delta, J_tilde, convention, gamma_tilde)[1]
    roots = [_bisect(f, v[i], v[i + 1]) for i in idx]
    geom = ManifoldGeometry(delta=delta, J_tilde=J_tilde, convention=convention,
                            gamma_tilde=gamma_tilde, k_scale=k_scale)
    if not roots:
        geom.sheets = [Sheet("single", -math.inf, v_pole, True)]
        return geom
    va, vb = sorted(roots)
    va, vb = float(va), float(vb)
    geom.folds = [Fold(va, geom.K_of_v(va), "eta_minus"), Fold(vb, geom.K_of_v(vb), "eta_plus")]
    geom.sheets = [
        Sheet("down", -math.inf, va, True),
        Sheet("repelling", va, vb, False),
        Sheet("up", vb, v_pole, True),
    ]
    return geom


def _bisect(f, a, b, rtol=1e-12):
    fa = f(a)
    for _ in range(200):
        m = 0.5 * (a + b)
        fm = f(m)
        if fm == 0:
            return m
        if (fm > 0) == (fa > 0):
            a, fa = m, fm
        else:
            b = m
        if abs(b - a) <= rtol * max(abs(a), abs(b)):
            break
    return 0.5 * (a + b)


@dataclass(frozen=True)
class FoldedSingularity:
    v: float
    location: str
    sigma: float
    cls: str  # 'FoldedSaddle', 'FoldedCentre' or 'Degenerate'
    eigenvalues: tuple


def classify_folded_singularity(fold: Fold, eta_bar, geometry: ManifoldGeometry,
                                tol=1e-10) -> FoldedSingularity:
    """Type of the reduced-flow singularity sitting on ``fold``.

    The desingularised flow ``v' = Q, Q' = -psi'(v)/k (eta_bar + psi(v)/k)``
    has the equilibrium ``(v_*, 0)`` with Jacobian ``[[0, 1], [sigma, 0]]``,
    ``sigma = -psi''(v_*)/k (eta_bar + psi(v_*)/k)``.
    """
    k = geometry.k_scale
    psi, _, d2psi = geometry.derivatives(fold.v)
    sigma = -(d2psi / k) * (eta_bar + psi / k)
    if abs(sigma) <= tol * max(1.0, abs(d2psi)):
        cls = "Degenerate"
    elif sigma > 0:
        cls = "FoldedSaddle"
    else:
        cls = "FoldedCentre"
    root = np.sqrt(complex(sigma))
    if sigma >= 0:
        eig = (float(root.real), -float(root.real))
    else:
        eig = (complex(0.0, root.imag), complex(0.0, -root.imag))
    return FoldedSingularity(fold.v, fold.location, float(sigma), cls, eig)


def drs_flow(v, Q, eta_bar, geometry: ManifoldGeometry):
    """Desingularised reduced system on S0."""
    k = geometry.k_scale
    psi, dpsi, _ = geometry.derivatives(v)
    return Q, -(dpsi / k) * (eta_bar + psi / k)


def reduced_flow(v, Q, eta_bar, geometry: ManifoldGeometry):
    """Reduced (slow) flow ``-psi'(v)/k v' = Q``; singular on the folds."""
    k = geometry.k_scale
    psi, dpsi, _ = geometry.derivatives(v)
    return -k * Q / dpsi, eta_bar + psi / k


def drs_jacobian_fd(v, Q, eta_bar, geometry, h=1e-6):
    """Central-difference Jacobian of :func:`drs_flow`."""
    J = np.empty((2, 2))
    for j, (dv, dq) in enumerate(((h, 0.0), (0.0, h))):
        fp = np.array(drs_flow(v + dv, Q + dq, eta_bar, geometry))
        fm = np.array(drs_flow(v - dv, Q - dq, eta_bar, geometry))
        J[:, j] = (fp - fm) / (2 * h)
    return J


@dataclass
class SingularCanards:
    """Stable (true canard) and unstable (faux canard) manifolds of the DRS
    saddle, as arrays with columns v, K, Q."""

    true: np.ndarray
    faux: np.ndarray
    singularity: FoldedSingularity


def singular_canards(fs: FoldedSingularity, eta_bar, geometry: ManifoldGeometry,
                     arclength=None, n_steps=2000, offset=None) -> SingularCanards:
    """Trace the two invariant manifolds of a folded saddle in the DRS.

    On the attracting sheets the DRS and the reduced flow share orientation
    and on the repelling sheet they are opposite, so the stable manifold of
    the DRS saddle is the orbit that crosses from an attracting sheet onto the
    repelling one (the true canard) and the unstable manifold is the faux
    canard.
    """
    if fs.cls != "FoldedSaddle":
        raise ValueError(f"singular canards need a folded saddle, got {fs.cls} at {fs.location}")
    if len(geometry.folds) == 2:
        scale = abs(geometry.folds[1].v - geometry.folds[0].v)
    else:
        scale = max(abs(fs.v), 1.0)
    if arclength is None:
        arclength = 2.0 * scale
    if offset is None:
        offset = 1e-6 * scale
    lam = math.sqrt(fs.sigma)
    stable = np.array([1.0, -lam]) / math.hypot(1.0, lam)
    unstable = np.array([1.0, lam]) / math.hypot(1.0, lam)

    def manifold(direction, sign):
        halves = []
        for side in (-1.0, 1.0):
            x0 = np.array([fs.v, 0.0]) + side * offset * direction
            halves.append(_trace_arclength(x0, sign, eta_bar, geometry, arclength, n_steps))
        pts = np.vstack([halves[0][::-1], [[fs.v, 0.0]], halves[1]])
        K = geometry.K_of_v(pts[:, 0])
        return np.column_stack([pts[:, 0], K, pts[:, 1]])

    return SingularCanards(true=manifold(stable, -1.0), faux=manifold(unstable, 1.0), singularity=fs)


def _trace_arclength(x0, sign, eta_bar, geometry, arclength, n_steps):
    h = arclength / n_steps
    vmax = geometry.v_pole

    def f(x):
        dv, dq = drs_flow(x[0], x[1], eta_bar, geometry)
        vec = sign * np.array([dv, dq])
        nrm = math.hypot(vec[0], vec[1])
        return vec / nrm if nrm > 0 else vec

    out = [x0]
    x = x0.copy()
    for _ in range(n_steps):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        xn = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(xn)) or xn[0] >= vmax - 1e-9 * max(1.0, abs(vmax)):
            break
        x = xn
        out.append(x.copy())
    return np.array(out)


@dataclass(frozen=True)
class ScenarioReport:
    case: str | None
    boundary: tuple | None = None

    def __str__(self):
        return self.case if self.case else "boundary " + "/".join(self.boundary)


def scenario_classify(eta_bar, geometry: ManifoldGeometry, tol=1e-10) -> ScenarioReport:
    """Which of the four forcing-centre regions ``eta_bar`` lies in."""
    if len(geometry.folds) != 2:
        raise NoExcitableStructure("no excitable structure: the critical manifold has no folds")
    marks = [(geometry.eta_plus, ("I", "II")), (geometry.eta_zero, ("II", "III")),
             (geometry.eta_minus, ("III", "IV"))]
    for value, pair in marks:
        if abs(eta_bar - value) <= tol * max(1.0, abs(value)):
            return ScenarioReport(None, pair)
    if eta_bar < geometry.eta_plus:
        return ScenarioReport("I")
    if eta_bar < geometry.eta_zero:
        return ScenarioReport("II")
    if eta_bar < geometry.eta_minus:
        return ScenarioReport("III")
    return ScenarioReport("IV")


# ---------------------------------------------------------------------------
# p populations

def multipop_constraints(v, params, K=0.0, convention="pi2"):
    """Residuals ``Psi_i(v) + K delta_ik`` and their Jacobian in ``v``."""
    c = rate_coefficient(convention)
    deltas, gam, etas, _, Jt = params.arrays()
    v = np.asarray(v, dtype=float)
    u = 2.0 * v + gam
    if np.any(u >= 0):
        raise SingularityError("need 2 v_i + gamma_i < 0 for positive rates")
    r = -deltas / (math.pi * u)
    dr = 2.0 * deltas / (math.pi * u ** 2)
    bg = etas.copy()
    bg[params.forced] = 0.0
    F = v * v - c * r * r + bg + Jt @ r
    F[params.forced] += K
    D = Jt * dr[None, :]
    D[np.diag_indices_from(D)] += 2.0 * v - 2.0 * c * r * dr
    return F, D


@dataclass
class MultipopRoots:
    roots: list
    failures: list


def _decoupled_roots(i, params, K, convention, n_scan=4000):
    c = rate_coefficient(convention)
    deltas, gam, etas, _, Jt = params.arrays()
    pole = -0.5 * gam[i]
    vs = pole - np.geomspace(1e-5, 60.0, n_scan)[::-1]
    u = 2.0 * vs + gam[i]
    r = -deltas[i] / (math.pi * u)
    drive = K if i == params.forced else etas[i]
    f = vs * vs - c * r * r + Jt[i, i] * r + drive
    idx = np.flatnonzero(np.sign(f[:-1]) * np.sign(f[1:]) < 0)
    out = []
    for j in idx:
        g = lambda x: x * x - c * (deltas[i] / (math.pi * (2 * x + gam[i]))) ** 2 \
            - Jt[i, i] * deltas[i] / (math.pi * (2 * x + gam[i])) + drive
        out.append(brentq(g, vs[j], vs[j + 1], xtol=1e-14))
    return out


def multipop_manifold_solve(params, K, guesses=None, tol=1e-10, max_iter=100,
                            convention="pi2", max_roots=27) -> MultipopRoots:
    """Points of the p-population critical manifold at input ``K``.

    Damped Newton with deflation: every converged root is deflated out of
    the residual, so restarts from the same guess find new branches.
    Without ``guesses`` the seeds are products of decoupled single-population
    roots.
    """
    p = params.p
    if guesses is None:
        per_pop = [_decoupled_roots(i, params, K, convention) or [-1.0] for i in range(p)]
        guesses = [np.array(g) for g in itertools.islice(itertools.product(*per_pop), 4 * max_roots)]
    roots, failures = [], []
    for g in guesses:
        g = np.asarray(g, dtype=float)
        while len(roots) < max_roots:
            res = _deflated_newton(g, params, K, roots, tol, max_iter, convention)
            if res is None or isinstance(res, dict):
                if isinstance(res, dict):
                    failures.append(res)
                break
            if any(np.max(np.abs(res - r0)) < 1e-8 * max(1.0, np.max(np.abs(r0))) for r0 in roots):
                break
            roots.append(res)
    return MultipopRoots(roots=roots, failures=failures)


def _deflated_newton(x0, params, K, known, tol, max_iter, convention, shift=1.0, power=2):
    x = x0.copy()
    last = math.inf
    for it in range(max_iter):
        try:
            F, D = multipop_constraints(x, params, K, convention)
        except SingularityError:
            return {"guess": x0.tolist(), "iterations": it, "residual": math.inf,
                    "reason": "left the positive-rate domain"}
        last = float(np.max(np.abs(F)))
        if last <= tol:
            return x
        try:
            dx = -np.linalg.solve(D, F)
        except np.linalg.LinAlgError:
            return {"guess": x0.tolist(), "iterations": it, "residual": last, "reason": "singular Jacobian"}
        if known:
            mu, grad = 1.0, np.zeros_like(x)
            for r0 in known:
                diff = x - r0
                d2 = float(diff @ diff)
                term = d2 ** (-power / 2) + shift
                mu *= term
                grad += (-power * d2 ** (-power / 2 - 1) * diff) / term
            denom = 1.0 - float(grad @ dx)
            if denom == 0:
                return None
            dx = dx / denom
        lam = 1.0
        for _ in range(30):
            xn = x + lam * dx
            if np.all(2.0 * xn + np.asarray(params.gamma_tildes) < 0):
                Fn, _ = multipop_constraints(xn, params, K, convention)
                if np.max(np.abs(Fn)) < (1 - 1e-4 * lam) * last or lam < 1e-3:
                    break
            lam *= 0.5
        x = xn
        if not np.all(np.isfinite(x)):
            break
    return {"guess": x0.tolist(), "iterations": max_iter, "residual": last,
            "reason": "no convergence"}


def _slaving(v, params, convention):
    """dv/dv_k along the unforced constraints and the total d Psi_k / d v_k."""
    F, D = multipop_constraints(v, params, 0.0, convention)
    k = params.forced
    U = [i for i in range(params.p) if i != k]
    dv = np.zeros(params.p)
    dv[k] = 1.0
    if U:
        A = D[np.ix_(U, U)]
        if np.linalg.cond(A) > 1e12:
            raise SlavingFoldError("unforced constraints are singular: fold of the slaving map")
        dv[U] = -np.linalg.solve(A, D[U, k])
    total = float(D[k] @ dv)
    return F, dv, total


def multipop_drs_flow(v, Q, params, convention="pi2", check_tol=1e-8):
    """Desingularised reduced flow of the forced population.

    Returns ``(v_k', Q', v')`` where ``v'`` holds the slaved velocities of
    all populations (``v'[k] = Q``).
    """
    v = np.asarray(v, dtype=float)
    k = params.forced
    F, dv, total = _slaving(v, params, convention)
    U = [i for i in range(params.p) if i != k]
    if U and np.max(np.abs(F[U])) > check_tol:
        raise ValueError(f"state violates the unforced constraints by {np.max(np.abs(F[U])):.3g}")
    eta_k = params.eta_bars[k]
    return Q, -total * (eta_k + F[k]), dv * Q


def _project(v, params, convention, tol=1e-13, max_iter=50):
    k = params.forced
    U = [i for i in range(params.p) if i != k]
    if not U:
        return v
    x = v.copy()
    for _ in range(max_iter):
        F, D = multipop_constraints(x, params, 0.0, convention)
        if np.max(np.abs(F[U])) <= tol:
            break
        x[U] -= np.linalg.solve(D[np.ix_(U, U)], F[U])
    return x


def multipop_drs_orbit(v0, Q0, params, arclength=1.0, n_steps=200, convention="pi2", project=True):
    """Integrate the p-population DRS with RK4 in arclength.

    Returns ``(states, drift)`` where ``states`` has columns ``v_1..v_p, Q``
    and ``drift`` is the largest unforced-constraint residual seen after each
    step (after projection when ``project`` is set).
    """
    p = params.p
    U = [i for i in range(p) if i != params.forced]
    h = arclength / n_steps

    def f(x):
        _, dQ, dv = multipop_drs_flow(x[:p], x[p], params, convention, check_tol=np.inf)
        vec = np.append(dv, dQ)
        return vec / np.linalg.norm(vec)

    x = np.append(np.asarray(v0, float), Q0)
    out = [x.copy()]
    drift = 0.0
    for _ in range(n_steps):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if project:
            x[:p] = _project(x[:p], params, convention)
        if U:
            F, _ = multipop_constraints(x[:p], params, 0.0, convention)
            drift = max(drift, float(np.max(np.abs(F[U]))))
        out.append(x.copy())
    return np.array(out), drift


def multipop_fold_singularities(params, eta_bar=None, v_window=(-50.0, -1e-4), n_scan=4000,
                                unforced_guess=None, convention="pi2", tol=1e-10):
    """Folded singularities of the p-population manifold along one branch.

    The branch is traced by continuation in ``v_k``; the unforced voltages
    follow from their constraints (seeded by ``unforced_guess`` or by the
    lowest decoupled root). Folds are sign changes of the total derivative
    of ``Psi_k``; each is classified by the sign of
    ``sigma = -Psi_k''(v_*) (eta_bar + Psi_k(v_*))``.
    """
    k = params.forced
    p = params.p
    U = [i for i in range(p) if i != k]
    eta_bar = params.eta_bars[k] if eta_bar is None else eta_bar
    gk = params.gamma_tildes[k]
    vk = (-0.5 * gk - np.geomspace(-v_window[1], -v_window[0], n_scan))[::-1]
    x = np.empty(p)
    if U:
        if unforced_guess is None:
            unforced_guess = [(_decoupled_roots(i, params, 0.0, convention) or [-1.0])[0] for i in U]
        x[U] = unforced_guess
    totals, Fk, states = [], [], []
    for val in vk:
        x[k] = val
        x = _project(x, params, convention)
        F, _, total = _slaving(x, params, convention)
        totals.append(total)
        Fk.append(F[k])
        states.append(x.copy())
    totals = np.array(totals)
    idx = np.flatnonzero(np.sign(totals[:-1]) * np.sign(totals[1:]) < 0)
    out = []
    for j in idx:
        base = states[j].copy()

        def tot(val):
            y = base.copy()
            y[k] = val
            y = _project(y, params, convention)
            return _slaving(y, params, convention)[2]

        vstar = _bisect(tot, vk[j], vk[j + 1])
        y = base.copy()
        y[k] = vstar
        y = _project(y, params, convention)
        h = 1e-6 * max(1.0, abs(vstar))
        d2 = (tot(vstar + h) - tot(vstar - h)) / (2 * h)
        Fv, _, _ = _slaving(y, params, convention)
        sigma = -d2 * (eta_bar + Fv[k])
        if abs(sigma) <= tol * max(1.0, abs(d2)):
            cls = "Degenerate"
        else:
            cls = "FoldedSaddle" if sigma > 0 else "FoldedCentre"
        label = "F-" if d2 > 0 else "F+"
        root = np.sqrt(complex(sigma))
        eig = (float(root.real), -float(root.real)) if sigma >= 0 else (complex(0, root.imag), complex(0, -root.imag))
        out.append((y, FoldedSingularity(float(vstar), label, float(sigma), cls, eig)))
    return out
