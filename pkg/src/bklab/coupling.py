"""Thinning coupling of the branching process and the epidemic.

The branching process is simulated; at each infection the epidemic's
contact lands on an already infected host with probability ``S/N``, in
which case the epidemic does not follow and the two paths diverge.  Up to
that point the epidemic path is the branching path event for event.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial

import numpy as np

from .model import DEATH, INFECTION, InvalidStateError, ModelParams, SparseState
from .simulator import BRANCHING, EPIDEMIC, PathRecord, draw_event
from .streams import run_replicates


@dataclass(frozen=True)
class Divergence:
    index: int  # 1-based ordinal among infection events
    position: int  # position of the diverging event in the branching path
    time: float


@dataclass
class CoupledRun:
    branching_path: PathRecord
    epidemic_path: PathRecord
    divergence: Divergence | None
    infections_before_divergence: int


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float


def coupled_simulate(initial: SparseState, params: ModelParams, M: int, rng: np.random.Generator) -> CoupledRun:
    """Run the coupled pair for up to ``M`` infection events (pseudoinfections included).

    The branching path and the divergence coins use separate child streams
    of ``rng``, so the branching path does not depend on ``N``.
    """
    if initial.S > params.N:
        raise InvalidStateError(f"S={initial.S} exceeds N={params.N}")
    path_rng, coin_rng = rng.spawn(2)
    state = initial.copy()
    # the epidemic copy is replayed separately to check feasibility and host conservation
    epi_state = initial.copy()
    events = []
    n_inf = 0
    t = 0.0
    divergence = None
    N = params.N
    while n_inf < M:
        ev = draw_event(state, params, False, path_rng)
        t += ev.dt
        if ev.kind == INFECTION:
            S = state.S
            if coin_rng.random() < S / N:
                divergence = Divergence(n_inf + 1, len(events), t)
                events.append(ev)
                state.apply(ev)
                break
        state.apply(ev)
        epi_state.apply(ev)
        if epi_state.S > N:
            raise InvalidStateError("epidemic infected count exceeds N before divergence")
        events.append(ev)
        if ev.kind != DEATH:
            n_inf += 1
    branching = PathRecord(initial.copy(), events, BRANCHING, params)
    cut = divergence.position if divergence else len(events)
    epidemic = PathRecord(initial.copy(), events[:cut], EPIDEMIC, params)
    return CoupledRun(branching, epidemic, divergence, n_inf)


def _coupling_replicate(initial, params, M, rng, i):
    run = coupled_simulate(initial, params, M, rng)
    d = run.divergence
    return (1 if d else 0, d.index if d else -1, run.infections_before_divergence)


def coupling_replicates(params, initial, M, replicates, seed, workers=None):
    """Per-replicate ``(diverged, divergence_index, n_infections)`` tuples."""
    fn = partial(_coupling_replicate, initial, params, M)
    return run_replicates(fn, replicates, seed, stream=2, workers=workers)


def tv_upper_from_coupling(params, initial, M, replicates, seed, workers=None) -> Estimate:
    """Frequency of divergence within the first ``M`` infections, with binomial SE."""
    if replicates < 100:
        raise ValueError("need at least 100 replicates")
    if M == 0:
        return Estimate(0.0, 0.0)
    rows = coupling_replicates(params, initial, M, replicates, seed, workers)
    p = float(np.mean([r[0] for r in rows]))
    return Estimate(p, math.sqrt(p * (1 - p) / replicates))
