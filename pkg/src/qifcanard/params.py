"""Parameter sets, heterogeneity sampling and the slow sinusoidal forcing."""
from __future__ import annotations

import math
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

STREAMS = ("currents", "connectivity", "initial-state")


def rng_stream(seed: int, label: str) -> np.random.Generator:
    """Independent generator for ``(seed, label)``.

    Streams with different labels are statistically independent, so swapping
    one ingredient (e.g. the connectivity) leaves the others untouched.
    """
    key = zlib.crc32(label.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), key])))


def sample_cauchy(center, hwhm, n, mode="quantile", rng=None, seed=0):
    """Draw ``n`` values from a Cauchy (Lorentzian) law.

    Parameters
    ----------
    center, hwhm : float
        Median and half-width at half-maximum.
    n : int
        Number of samples.
    mode : {'quantile', 'iid'}
        ``'quantile'`` returns the n equiprobable quantiles
        ``center + hwhm * tan(pi/2 * (2i - n - 1) / (n + 1))`` in ascending
        order; ``'iid'`` returns ``center + hwhm * tan(pi * (u - 1/2))``.
    rng : numpy.random.Generator, optional
        Used in ``'iid'`` mode; defaults to ``rng_stream(seed, 'currents')``.
    """
    if hwhm < 0:
        raise ValueError(f"hwhm must be >= 0, got {hwhm}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if hwhm == 0:
        return np.full(n, float(center))
    if mode == "quantile":
        i = np.arange(1, n + 1, dtype=float)
        return center + hwhm * np.tan(0.5 * math.pi * (2.0 * i - n - 1.0) / (n + 1.0))
    if mode == "iid":
        if rng is None:
            rng = rng_stream(seed, "currents")
        u = rng.random(n)
        return center + hwhm * np.tan(math.pi * (u - 0.5))
    raise ValueError(f"unknown sampling mode {mode!r}; use 'quantile' or 'iid'")


def generalized_coefficients(Gamma, g, J, a):
    """Return ``(Gamma/pi - g, J + g*ln(a))``."""
    if a <= 0:
        raise ValueError(f"spike-asymmetry parameter a must be > 0, got {a}")
    return Gamma / math.pi - g, J + g * math.log(a)


@dataclass(frozen=True)
class ForcingParams:
    A: float = 0.0
    eps: float = 0.05
    eta_bar: float = 0.0

    def __post_init__(self):
        if self.A < 0:
            raise ValueError(f"forcing amplitude A must be >= 0, got {self.A}")
        if self.eps <= 0:
            raise ValueError(f"forcing frequency eps must be > 0, got {self.eps}")

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.eps

    def with_amplitude(self, A) -> ForcingParams:
        return ForcingParams(A=float(A), eps=self.eps, eta_bar=self.eta_bar)


def forcing_state(t, fp: ForcingParams):
    """Input ``K`` and its velocity ``Q`` at time ``t``.

    This is the exact solution of ``K' = eps*Q, Q' = -eps*(K - eta_bar)``
    with ``K(0) = eta_bar`` and ``Q(0) = A``.
    """
    phase = fp.eps * np.asarray(t, dtype=float)
    K = fp.eta_bar + fp.A * np.sin(phase)
    Q = fp.A * np.cos(phase)
    if np.ndim(K) == 0:
        return float(K), float(Q)
    return K, Q


@dataclass(frozen=True)
class QifParams:
    """All-to-all QIF network parameters."""

    N: int = 1
    J: float = 15.0
    tau_s: float = 0.02
    eta_bar: float = 0.0
    delta: float = 1.0
    V_t: float = 100.0
    V_r: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")
        if self.tau_s <= 0:
            raise ValueError(f"tau_s must be > 0, got {self.tau_s}")
        if self.delta < 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")
        if self.V_t <= 0:
            raise ValueError(f"V_t must be > 0, got {self.V_t}")
        if self.V_r is None:
            object.__setattr__(self, "V_r", -self.V_t)
        if self.V_r >= self.V_t:
            raise ValueError("V_r must lie below V_t")


@dataclass(frozen=True)
class GeneralMfParams:
    """Generalised one-population mean field.

    ``Gamma`` is the coupling heterogeneity, ``g`` the electrical coupling
    strength and ``a`` the spike asymmetry. ``Gamma = g = 0, a = 1`` is the
    plain model with a first-order synapse.
    """

    delta: float = 1.0
    J: float = 15.0
    tau_s: float = 0.02
    eta_bar: float = 0.0
    Gamma: float = 0.0
    g: float = 0.0
    a: float = 1.0

    def __post_init__(self):
        if self.tau_s <= 0:
            raise ValueError(f"tau_s must be > 0, got {self.tau_s}")
        if self.delta < 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")
        if self.a <= 0:
            raise ValueError(f"a must be > 0, got {self.a}")

    @property
    def gamma_tilde(self) -> float:
        return generalized_coefficients(self.Gamma, self.g, self.J, self.a)[0]

    @property
    def J_tilde(self) -> float:
        return generalized_coefficients(self.Gamma, self.g, self.J, self.a)[1]


@dataclass(frozen=True)
class MultiPopParams:
    """``p`` synaptically coupled populations, one of them forced.

    ``forced`` is the 0-based index of the population receiving ``K``; its
    background current is carried by ``K`` (which oscillates around
    ``eta_bars[forced]``), the others keep their constant ``eta_bars[i]``.
    """

    deltas: tuple
    gamma_tildes: tuple
    eta_bars: tuple
    tau_s: tuple
    J_tilde: tuple
    forced: int = 0
    forcing: ForcingParams = field(default_factory=ForcingParams)

    def __post_init__(self):
        p = len(self.deltas)
        for name in ("gamma_tildes", "eta_bars", "tau_s"):
            if len(getattr(self, name)) != p:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, expected {p}")
        Jt = np.asarray(self.J_tilde, dtype=float)
        if Jt.shape != (p, p):
            raise ValueError(f"J_tilde must be {p}x{p}, got shape {Jt.shape}")
        if not 0 <= self.forced < p:
            raise ValueError(f"forced population index {self.forced} outside [0, {p})")
        if any(d <= 0 for d in self.deltas):
            raise ValueError("all deltas must be > 0")
        if any(t <= 0 for t in self.tau_s):
            raise ValueError("all tau_s must be > 0")
        object.__setattr__(self, "J_tilde", tuple(tuple(float(x) for x in row) for row in Jt))

    @property
    def p(self) -> int:
        return len(self.deltas)

    def arrays(self):
        return (np.asarray(self.deltas, float), np.asarray(self.gamma_tildes, float),
                np.asarray(self.eta_bars, float), np.asarray(self.tau_s, float),
                np.asarray(self.J_tilde, float))


@dataclass(frozen=True)
class SparseParams:
    """Sparse network with heavy-tailed in-degrees (expected in-degree ``M``)."""

    N: int = 10_000
    M: int = 1_000
    delta_gamma: float = 0.3
    J: float = 1.0
    tau_s: float = 0.015
    eta_bar: float = -0.5
    delta: float = 1e-4
    V_t: float = 100.0
    V_r: float | None = None
    seed: int = 0
    forcing: ForcingParams = field(default_factory=lambda: ForcingParams(eps=0.1, eta_bar=-0.5))

    def __post_init__(self):
        if not 1 <= self.M <= self.N:
            raise ValueError(f"need 1 <= M <= N, got M={self.M}, N={self.N}")
        if self.delta_gamma < 0:
            raise ValueError(f"delta_gamma must be >= 0, got {self.delta_gamma}")
        if self.tau_s <= 0:
            raise ValueError(f"tau_s must be > 0, got {self.tau_s}")
        if self.V_r is None:
            object.__setattr__(self, "V_r", -self.V_t)

    @property
    def sqrt_M(self) -> float:
        return math.sqrt(self.M)


def to_dict(obj) -> dict:
    return asdict(obj)
