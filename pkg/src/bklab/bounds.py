"""Closed-form bounds and constants, returned with validity flags.

Evaluators never raise outside the hypotheses of the results they encode;
they report the value and whether the hypotheses hold, so that sweeps can
chart where the guarantees stop applying.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

E2_135 = math.exp(2.0 / 135.0)


@dataclass(frozen=True)
class TVBound:
    value: float
    valid: bool


def tv_bound_T1(m: int, S0: int, N: int) -> TVBound:
    """``8 S_m sqrt(m) / N`` over the first ``m`` transitions; needs ``S_m sqrt(m) < N``."""
    core = (m + S0) * math.sqrt(m)
    return TVBound(8.0 * core / N, core < N)


def tv_bound_T2(M: int, S0: int, N: int) -> TVBound:
    """``8 S_M sqrt(M) / N`` over the first ``M`` infections; needs ``S_M sqrt(M) <= N``."""
    core = (M + S0) * math.sqrt(M)
    return TVBound(8.0 * core / N, core <= N)


def variance_bound(horizon: int, S0: int, N: int) -> float:
    """Second-moment bound ``52 m S_m**2 / N**2`` for the stopped likelihood ratio."""
    S_cap = horizon + S0
    return 52.0 * horizon * S_cap**2 / N**2


def tau1_bound(horizon: int, S0: int, N: int) -> float:
    """``m exp(-N / S_m)``: chance that some standardized holding time is oversized."""
    S_cap = horizon + S0
    if S_cap == 0:
        return 0.0
    return horizon * math.exp(-N / S_cap)


def _eps0_equation(x):
    return math.exp(x) * (1.0 - x) ** -3 - 4.0 / 3.0


@lru_cache(maxsize=None)
def solve_eps0() -> float:
    """Root in (0, 1) of ``exp(x) (1 - x)**-3 = 4/3``."""
    # left side rises from 1 at x=0 and diverges at x=1
    return brentq(_eps0_equation, 0.0, 0.5, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


@dataclass(frozen=True)
class TailParams:
    a: float
    b: float
    n: int
    y: float

    def __post_init__(self):
        if self.a < 0 or self.b < 0 or max(self.a, self.b) <= 0:
            raise ValueError("need a, b >= 0 with max(a, b) > 0")
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.y < 0:
            raise ValueError("y must be nonnegative")

    @property
    def spread(self) -> float:
        return (self.a + self.b) ** 2 + self.b**2


def tail_cap(p: TailParams) -> float:
    """Largest deviation for which the Gaussian-type tail applies."""
    return 4.0 * p.n / 3.0 * solve_eps0() * p.spread / max(p.a, p.b)


def tail_bound_1(p: TailParams):
    """Gaussian-type tail ``exp(-3 y**2 / (8 n spread))`` and whether ``y`` is in range."""
    value = math.exp(-3.0 * p.y**2 / (8.0 * p.n * p.spread))
    return value, p.y <= tail_cap(p)


def tail_bound_2(p: TailParams) -> float:
    """Exponential-type tail, valid for every ``y >= 0``."""
    return math.exp(-p.y / (15.0 * max(p.a, p.b) * math.sqrt(p.n))) * E2_135


def C_r(r: float) -> float:
    return math.sqrt(416.0 * r / 3.0)


@dataclass(frozen=True)
class RCParams:
    M: int
    N: int
    S0: int
    r: float
    S_M: int
    psi: float
    C_r: float
    eps: float
    eta: float
    psi_ok: bool
    eps_ok: bool
    M_ok: bool
    degenerate: bool

    @property
    def valid(self) -> bool:
        return self.psi_ok and self.eps_ok and self.M_ok and not self.degenerate

    @property
    def eta_terms(self):
        """``(2 psi**r, e**(2/135) exp(-1/(60 psi)), M exp(-N/S_M))``."""
        psi = self.psi
        t1 = 2.0 * psi**self.r
        t2 = E2_135 * math.exp(-1.0 / (60.0 * psi)) if psi > 0 else 0.0
        t3 = self.M * math.exp(-self.N / self.S_M) if self.S_M else 0.0
        return t1, t2, t3


def rc_params(M: int, N: int, S0: int, r: float = 1.0) -> RCParams:
    """Relative-closeness parameters ``(eps, eta)`` over the first ``M`` infections."""
    if r < 1:
        raise ValueError("r must be at least 1")
    S_M = M + S0
    psi = S_M * math.sqrt(M) / N
    c = C_r(r)
    eps = c * psi * math.sqrt(math.log(1.0 / psi)) if 0 < psi <= 1 else (0.0 if psi == 0 else math.nan)
    base = RCParams(M, N, S0, r, S_M, psi, c, eps, 0.0, psi <= 1, eps <= 1, M >= c**2 / 5.0 * math.log(N), psi in (0.0, 1.0))
    return dataclasses.replace(base, eta=sum(base.eta_terms))


@dataclass(frozen=True)
class Criticality:
    parameter: float
    regime: str
    growth_rate: float
    formula: str


def criticality(params) -> Criticality:
    """Branching criticality parameter and the mean parasite growth rate ``lam theta - mu``.

    The parameter is ``lam theta / mu`` for ``theta <= e`` and
    ``lam e log(theta) / mu`` beyond.
    """
    lam, mu, theta = params.lam, params.mu, params.theta
    if theta <= math.e:
        value, formula = lam * theta / mu, "lam*theta/mu"
    else:
        value, formula = lam * math.e * math.log(theta) / mu, "lam*e*log(theta)/mu"
    if math.isclose(value, 1.0, rel_tol=1e-12):
        regime = "critical"
    elif value > 1:
        regime = "supercritical"
    else:
        regime = "subcritical"
    return Criticality(value, regime, lam * theta - mu, formula)
