"""Likelihood ratio of the epidemic path law against the branching path law.

Two clocks are supported.  Per transition, every jump contributes
``exp{(Lambda - Lambda_N) dt} (1 - S/N)**u`` with ``u = 1`` on infections.
Per infection, the same factors are grouped between consecutive infection
events.  Both use the state *before* the jump in the ``(1 - S/N)`` factor,
which makes the two products agree exactly on a common path.

Accumulation is in log space.  Besides the running value, each tracker
maintains the stopped value that freezes at the first oversized
standardized holding time (``tau1``) or the first time the ratio exceeds 2
(``tau2``).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

from .model import DEATH, INFECTION, InvalidStateError, ModelParams, SparseState
from .simulator import PathRecord

PER_TRANSITION = "transition"
PER_INFECTION = "infection"
MODES = (PER_TRANSITION, PER_INFECTION)

LOG_TWO = math.log(2.0)


class SizeConditionWarning(UserWarning):
    """The size condition ``S sqrt(h) < N`` behind the total variation bounds fails."""


@dataclass(frozen=True)
class Stop:
    which: str  # "tau1" or "tau2"
    index: int


@dataclass
class LikelihoodState:
    """Running likelihood ratio along one path.

    ``S_cap`` bounds the infected count over the horizon: ``m + S0`` per
    transition, ``M + S0`` per infection.
    """

    mode: str
    N: int
    S_cap: int
    log_L: float = 0.0
    log_L_free: float = 0.0
    step_count: int = 0
    stopped_at: Stop | None = None
    tau1: int | None = None
    tau2: int | None = None
    exponentials: list = field(default_factory=list)
    max_increment_ratio: float = 0.0
    # per-infection accumulators for the open segment
    seg_log: float = 0.0
    seg_E: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown likelihood mode {self.mode!r}")

    @property
    def L(self) -> float:
        return math.exp(self.log_L)

    @property
    def L_free(self) -> float:
        return math.exp(self.log_L_free)

    @property
    def stopped(self) -> bool:
        return self.stopped_at is not None


class LikelihoodTracker:
    """Feeds ``(pre_state, event)`` pairs into a :class:`LikelihoodState`.

    Usable directly as the ``on_event`` hook of ``simulate_path``.
    """

    def __init__(self, params: ModelParams, mode: str, S_cap: int, state: LikelihoodState | None = None):
        self.params = params
        self.state = state if state is not None else LikelihoodState(mode, params.N, int(S_cap))
        self._per_transition = self.state.mode == PER_TRANSITION

    def __call__(self, pre_state: SparseState, event) -> None:
        if self._per_transition:
            self.step_transition(pre_state, event)
        else:
            self.accumulate(pre_state, event)

    def log_factors(self, pre_state: SparseState, event):
        """``((Lambda - Lambda_N) dt, Lambda dt, log(1 - S/N)**u)`` for one jump.

        All vanish at the zero state except ``Lambda dt = dt`` there.
        """
        S = pre_state.S
        if S == 0:
            return 0.0, event.dt, 0.0
        N = self.params.N
        if S > N:
            raise InvalidStateError(f"S={S} exceeds N={N}")
        lam_dt = self.params.lam * pre_state.W * event.dt
        gap = lam_dt * S / N
        if event.kind == INFECTION:
            if S >= N:
                raise InvalidStateError(f"infection from S={S} >= N={N}")
            return gap, lam_dt, math.log1p(-S / N)
        return gap, lam_dt, 0.0

    def _advance(self, increment: float, E: float, index: int, cutoff: float) -> None:
        ls = self.state
        ls.exponentials.append(E)
        if ls.tau1 is None and E > cutoff:
            ls.tau1 = index
            if ls.stopped_at is None:
                ls.stopped_at = Stop("tau1", index)
        ls.log_L_free += increment
        if ls.tau2 is None and ls.log_L_free > LOG_TWO:
            ls.tau2 = index + 1
        if ls.stopped_at is None:
            old = ls.log_L
            ls.log_L = old + increment
            if increment:
                budget = 2.0 * ls.S_cap / ls.N * (1.0 + 2.0 * E)
                ratio = abs(math.exp(ls.log_L) - math.exp(old)) / budget
                if ratio > ls.max_increment_ratio:
                    ls.max_increment_ratio = ratio
            if ls.log_L > LOG_TWO:
                ls.stopped_at = Stop("tau2", index + 1)
        ls.step_count = index + 1

    def step_transition(self, pre_state: SparseState, event) -> None:
        ls = self.state
        if ls.mode != PER_TRANSITION:
            raise ValueError("tracker is not in per-transition mode")
        gap, _, log_thin = self.log_factors(pre_state, event)
        S = pre_state.S
        E = event.dt * (self.params.mu * pre_state.P + self.params.lam * pre_state.W) if S else event.dt
        cutoff = self.params.N / S if S else math.inf
        self._advance(gap + log_thin, E, ls.step_count, cutoff)

    def accumulate(self, pre_state: SparseState, event) -> None:
        """Add one holding interval to the open infection segment."""
        ls = self.state
        if ls.mode != PER_INFECTION:
            raise ValueError("tracker is not in per-infection mode")
        gap, lam_dt, log_thin = self.log_factors(pre_state, event)
        ls.seg_log += gap
        ls.seg_E += lam_dt
        if event.kind != DEATH:
            inc = ls.seg_log + log_thin
            E = ls.seg_E
            ls.seg_log = 0.0
            ls.seg_E = 0.0
            self._advance(inc, E, ls.step_count, ls.N / ls.S_cap if ls.S_cap else math.inf)


def lr_step_transition(lstate: LikelihoodState, pre_state: SparseState, event, params: ModelParams) -> LikelihoodState:
    LikelihoodTracker(params, lstate.mode, lstate.S_cap, lstate).step_transition(pre_state, event)
    return lstate


def lr_step_infection(lstate: LikelihoodState, segment, params: ModelParams) -> LikelihoodState:
    """Consume one segment of ``(pre_state, event)`` pairs ending in an infection or pseudoinfection."""
    segment = list(segment)
    if not segment or segment[-1][1].kind == DEATH:
        raise ValueError("a segment must end with an infection or pseudoinfection")
    if any(ev.kind != DEATH for _, ev in segment[:-1]):
        raise ValueError("a segment contains exactly one infection event, at its end")
    tracker = LikelihoodTracker(params, lstate.mode, lstate.S_cap, lstate)
    for pre, ev in segment:
        tracker.accumulate(pre, ev)
    return lstate


def size_condition(S0: int, horizon: int, N: int, mode: str) -> bool:
    """``S_m sqrt(m) < N`` per transition, ``S_M sqrt(M) <= N`` per infection."""
    value = (horizon + S0) * math.sqrt(horizon)
    return value < N if mode == PER_TRANSITION else value <= N


@dataclass
class StoppedLR:
    L: float
    stopped_at: Stop | None
    exponentials: list
    state: LikelihoodState


def stopped_lr(path: PathRecord, params: ModelParams, mode: str, horizon: int) -> StoppedLR:
    """Stopped likelihood ratio over the first ``horizon`` transitions or infections of ``path``."""
    S0 = path.initial_state.S
    if not size_condition(S0, horizon, params.N, mode):
        warnings.warn(
            f"size condition fails for S0={S0}, horizon={horizon}, N={params.N}", SizeConditionWarning, stacklevel=2
        )
    tracker = LikelihoodTracker(params, mode, horizon + S0)
    done = 0
    if horizon > 0:
        for pre, ev in path.replay():
            tracker(pre, ev)
            if mode == PER_TRANSITION or ev.kind != DEATH:
                done += 1
            if done == horizon:
                break
    if done < horizon:
        raise ValueError(f"path holds only {done} of the {horizon} requested {mode} steps")
    ls = tracker.state
    return StoppedLR(ls.L, ls.stopped_at, list(ls.exponentials), ls)
