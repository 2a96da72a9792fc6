"""Parameters, offspring laws, sparse host-burden states and rate functionals.

A state maps a parasite burden ``j >= 1`` to the number of hosts ``xi_j``
carrying exactly ``j`` parasites.  Uninfected hosts are implicit
(``xi_0 = N - S``) so the same representation serves both the epidemic and
its branching approximation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

POISSON = "poisson"
GEOMETRIC = "geometric"
POINTMASS = "pointmass"
FAMILIES = (POISSON, GEOMETRIC, POINTMASS)

DEATH = "death"
INFECTION = "infection"
PSEUDO = "pseudo"
EVENT_KINDS = (DEATH, INFECTION, PSEUDO)

# number of incremental W updates between from-scratch refreshes
DEFAULT_REFRESH_EVERY = 2**16


class InvalidStateError(ValueError):
    """A state lies outside the domain of the requested functional."""


class InfeasibleEventError(ValueError):
    """An event cannot be applied to the given state."""


@dataclass(frozen=True)
class OffspringLaw:
    """Law of the number ``Y`` of infective stages one parasite transmits.

    Geometric uses support ``{0, 1, ...}`` with ``P[Y=k] = (1-p) p**k`` and
    ``p = theta / (1 + theta)``; point mass requires an integer ``theta >= 1``.
    """

    family: str
    theta: float
    _omq: list = field(default_factory=lambda: [0.0], init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown offspring family {self.family!r}")
        if not (self.theta > 0 and math.isfinite(self.theta)):
            raise ValueError(f"theta must be positive and finite, got {self.theta}")
        if self.family == POINTMASS and (self.theta < 1 or self.theta != int(self.theta)):
            raise ValueError("point-mass offspring needs an integer theta >= 1")

    @classmethod
    def poisson(cls, theta):
        return cls(POISSON, float(theta))

    @classmethod
    def geometric(cls, theta):
        return cls(GEOMETRIC, float(theta))

    @classmethod
    def pointmass(cls, theta):
        return cls(POINTMASS, float(theta))

    @property
    def log_q0(self) -> float:
        """``log P[Y=0]``; ``-inf`` for the point mass."""
        if self.family == POISSON:
            return -self.theta
        if self.family == GEOMETRIC:
            return -math.log1p(self.theta)
        return -math.inf

    @property
    def q0(self) -> float:
        return math.exp(self.log_q0)

    @property
    def variance(self) -> float:
        if self.family == POISSON:
            return self.theta
        if self.family == GEOMETRIC:
            return self.theta * (1.0 + self.theta)
        return 0.0

    def p_l0(self, l: int) -> float:
        """``P[U_l = 0] = q0**l`` for the sum of ``l`` independent copies of ``Y``."""
        if l < 0:
            raise ValueError("l must be nonnegative")
        if l == 0:
            return 1.0
        if self.family == POINTMASS:
            return 0.0
        return math.exp(l * self.log_q0)

    def one_minus_p_l0(self, l: int) -> float:
        """``1 - q0**l``, accurate also when ``q0**l`` is close to one."""
        omq = self._omq
        if l < len(omq):
            return omq[l]
        if l < 0:
            raise ValueError("l must be nonnegative")
        for k in range(len(omq), l + 1):
            if self.family == POINTMASS:
                omq.append(1.0)
            else:
                omq.append(-math.expm1(k * self.log_q0))
        return omq[l]

    def sample(self, rng: np.random.Generator, size=None):
        """Draw copies of ``Y``."""
        if self.family == POISSON:
            return rng.poisson(self.theta, size)
        if self.family == GEOMETRIC:
            return rng.negative_binomial(1, 1.0 / (1.0 + self.theta), size)
        if size is None:
            return int(self.theta)
        return np.full(size, int(self.theta), dtype=np.int64)

    def sample_sum(self, rng: np.random.Generator, l: int) -> int:
        """Draw ``U_l``, the sum of ``l`` independent copies of ``Y``."""
        if l < 1:
            raise ValueError("l must be at least 1")
        if self.family == POISSON:
            return int(rng.poisson(l * self.theta))
        if self.family == GEOMETRIC:
            return int(rng.negative_binomial(l, 1.0 / (1.0 + self.theta)))
        return l * int(self.theta)

    def sample_positive_sum(self, rng: np.random.Generator, l: int) -> int:
        """Draw ``U_l`` conditioned on ``U_l >= 1`` by rejection."""
        while True:
            u = self.sample_sum(rng, l)
            if u > 0:
                return u


def p_l0(law: OffspringLaw, l: int) -> float:
    return law.p_l0(l)


def sample_U(law: OffspringLaw, l: int, rng: np.random.Generator) -> int:
    return law.sample_sum(rng, l)


@dataclass(frozen=True)
class ModelParams:
    """Contact rate ``lam``, per-parasite death rate ``mu``, host count ``N``."""

    lam: float
    mu: float
    N: int
    offspring: OffspringLaw

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if int(self.N) != self.N or self.N < 2:
            raise ValueError(f"N must be an integer >= 2, got {self.N}")

    @property
    def theta(self) -> float:
        return self.offspring.theta

    def with_N(self, N: int) -> "ModelParams":
        return ModelParams(self.lam, self.mu, int(N), self.offspring)


@dataclass(frozen=True, slots=True)
class Event:
    """One transition with the holding time ``dt`` spent before it.

    ``level`` is the burden of the host losing a parasite (deaths);
    ``source`` and ``load`` are the contacted host's burden and the burden
    established in the newly infected host (infections).  Pseudo-jumps at
    the zero state carry no label.
    """

    kind: str
    dt: float
    level: int = 0
    source: int = 0
    load: int = 0

    @property
    def adds_host(self) -> bool:
        return self.kind == INFECTION

    @property
    def counts_as_infection(self) -> bool:
        """Infections and pseudoinfections both advance the infection clock."""
        return self.kind != DEATH


class SparseState:
    """Host counts by parasite burden with cached aggregates.

    ``S`` (infected hosts), ``P`` (total parasites) and
    ``W = sum_l xi_l (1 - q0**l)`` are updated incrementally; ``W`` is
    rebuilt from scratch every ``refresh_every`` updates.
    """

    __slots__ = ("counts", "law", "S", "P", "W", "refresh_every", "_since_refresh")

    def __init__(self, counts=None, law: OffspringLaw = None, refresh_every=DEFAULT_REFRESH_EVERY):
        if law is None:
            raise ValueError("a SparseState needs the offspring law to maintain W")
        self.law = law
        self.refresh_every = refresh_every
        self.counts = {}
        for j, c in sorted((counts or {}).items()):
            j, c = int(j), int(c)
            if j < 1:
                raise ValueError(f"parasite burden must be >= 1, got {j}")
            if c < 0:
                raise ValueError(f"host count must be >= 0, got {c} at burden {j}")
            if c:
                self.counts[j] = c
        self.S, self.P, self.W = self.recompute()
        self._since_refresh = 0

    @classmethod
    def zero(cls, law):
        return cls({}, law)

    def recompute(self):
        """Aggregates ``(S, P, W)`` from scratch."""
        omq = self.law.one_minus_p_l0
        S = P = 0
        W = 0.0
        for j, c in self.counts.items():
            S += c
            P += j * c
            W += c * omq(j)
        return S, P, W

    def refresh(self):
        self.S, self.P, self.W = self.recompute()
        self._since_refresh = 0

    def copy(self) -> "SparseState":
        new = SparseState.__new__(SparseState)
        new.counts = dict(self.counts)
        new.law = self.law
        new.S, new.P, new.W = self.S, self.P, self.W
        new.refresh_every = self.refresh_every
        new._since_refresh = self._since_refresh
        return new

    @property
    def is_zero(self) -> bool:
        return self.S == 0

    def uninfected(self, N: int) -> int:
        return N - self.S

    def to_dict(self) -> dict:
        return dict(sorted(self.counts.items()))

    def __eq__(self, other):
        if not isinstance(other, SparseState):
            return NotImplemented
        return self.counts == other.counts and self.law == other.law

    def __repr__(self):
        return f"SparseState({self.to_dict()}, S={self.S}, P={self.P})"

    def _add(self, j, delta):
        c = self.counts.get(j, 0) + delta
        if c:
            self.counts[j] = c
        else:
            del self.counts[j]

    def apply(self, event: Event) -> None:
        """Apply ``event`` in place."""
        kind = event.kind
        omq = self.law.one_minus_p_l0
        if kind == DEATH:
            j = event.level
            if j < 1 or self.counts.get(j, 0) < 1:
                raise InfeasibleEventError(f"no host with {j} parasites in {self!r}")
            self._add(j, -1)
            self.P -= 1
            self.W -= omq(j)
            if j == 1:
                self.S -= 1
            else:
                self._add(j - 1, 1)
                self.W += omq(j - 1)
        elif kind == INFECTION:
            j, l = event.load, event.source
            if j < 1:
                raise InfeasibleEventError("an infection must establish at least one parasite")
            if l < 1 or self.counts.get(l, 0) < 1:
                raise InfeasibleEventError(f"no infective source with {l} parasites in {self!r}")
            self._add(j, 1)
            self.S += 1
            self.P += j
            self.W += omq(j)
        elif kind == PSEUDO:
            if self.S:
                raise InfeasibleEventError("pseudo-jumps only occur at the zero state")
            return
        else:
            raise InfeasibleEventError(f"unknown event kind {kind!r}")
        if not self.counts:
            self.W = 0.0
        self._since_refresh += 1
        if self._since_refresh >= self.refresh_every:
            self.refresh()


def apply_transition(state: SparseState, event: Event) -> SparseState:
    new = state.copy()
    new.apply(event)
    return new


def big_lambda(state: SparseState, params: ModelParams) -> float:
    """Total infection rate of the branching process (1 at the zero state)."""
    if state.S == 0:
        return 1.0
    return params.lam * state.W


def _check_size(state, params):
    if state.S > params.N:
        raise InvalidStateError(f"S={state.S} exceeds N={params.N}")


def big_lambda_N(state: SparseState, params: ModelParams) -> float:
    """Total infection rate of the epidemic, thinned by the uninfected fraction."""
    _check_size(state, params)
    if state.S == 0:
        return 1.0
    return params.lam * state.W * (params.N - state.S) / params.N


def rho(state: SparseState, params: ModelParams) -> float:
    if state.S == 0:
        return 1.0
    return params.mu * state.P + params.lam * state.W


def rho_N(state: SparseState, params: ModelParams) -> float:
    if state.S == 0:
        _check_size(state, params)
        return 1.0
    return params.mu * state.P + big_lambda_N(state, params)
