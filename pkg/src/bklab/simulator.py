"""Exact (Gillespie) simulation of the epidemic and its branching approximation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .model import (
    DEATH,
    INFECTION,
    PSEUDO,
    Event,
    InvalidStateError,
    ModelParams,
    OffspringLaw,
    SparseState,
    big_lambda,
    big_lambda_N,
    rho,
    rho_N,
)

BRANCHING = "branching"
EPIDEMIC = "epidemic"
PROCESS_KINDS = (BRANCHING, EPIDEMIC)

JSONL_SCHEMA = 1


@dataclass(frozen=True)
class StopRule:
    """Stop after ``value`` transitions, infection events, or units of time."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in ("transitions", "infections", "time"):
            raise ValueError(f"unknown stop rule {self.kind!r}")
        if self.kind == "time":
            if not self.value > 0:
                raise ValueError("MaxTime needs T > 0")
        elif self.value < 0 or int(self.value) != self.value:
            raise ValueError(f"{self.kind} limit must be a nonnegative integer")

    @classmethod
    def parse(cls, text: str) -> "StopRule":
        kind, _, value = text.partition(":")
        kind = kind.strip()
        return cls(kind, float(value) if kind == "time" else int(value))


def MaxTransitions(m: int) -> StopRule:
    return StopRule("transitions", int(m))


def MaxInfections(M: int) -> StopRule:
    return StopRule("infections", int(M))


def MaxTime(T: float) -> StopRule:
    return StopRule("time", float(T))


@dataclass
class PathRecord:
    initial_state: SparseState
    events: list
    process_kind: str
    params: ModelParams | None = None
    infection_index: list = field(default=None)

    def __post_init__(self):
        if self.infection_index is None:
            self.infection_index = [i for i, ev in enumerate(self.events) if ev.kind != DEATH]

    def __len__(self):
        return len(self.events)

    def times(self) -> np.ndarray:
        """Absolute event times (prefix sums of the holding times)."""
        return np.cumsum([ev.dt for ev in self.events])

    def replay(self):
        """Yield ``(pre_state, event)`` pairs; ``pre_state`` is reused, copy it to keep it."""
        state = self.initial_state.copy()
        for ev in self.events:
            yield state, ev
            state.apply(ev)

    def states(self):
        """Yield ``xi^(0), ..., xi^(m)`` as independent copies."""
        state = self.initial_state.copy()
        yield state.copy()
        for ev in self.events:
            state.apply(ev)
            yield state.copy()

    def final_state(self) -> SparseState:
        state = self.initial_state.copy()
        for ev in self.events:
            state.apply(ev)
        return state

    def state_after(self, n_events: int) -> SparseState:
        state = self.initial_state.copy()
        for ev in self.events[:n_events]:
            state.apply(ev)
        return state

    def n_infections(self) -> int:
        return len(self.infection_index)

    def __eq__(self, other):
        if not isinstance(other, PathRecord):
            return NotImplemented
        return (
            self.initial_state == other.initial_state
            and self.events == other.events
            and self.process_kind == other.process_kind
            and self.infection_index == other.infection_index
        )


def _event_to_json(i, ev):
    obj = {"type": "event", "i": i, "kind": ev.kind, "dt": ev.dt}
    if ev.kind == DEATH:
        obj["level"] = ev.level
    elif ev.kind == INFECTION:
        obj["source"] = ev.source
        obj["load"] = ev.load
    return obj


def write_jsonl(path: PathRecord, fh) -> None:
    """Header line, then one ``{"type": "event", ...}`` object per event.

    Header fields: ``schema``, ``process``, ``initial`` (burden -> hosts) and
    the model parameters ``lambda``, ``mu``, ``N``, ``offspring``, ``theta``.
    Event fields: ``i``, ``kind``, ``dt`` and ``level`` (death) or
    ``source``/``load`` (infection).
    """
    law = path.initial_state.law
    header = {
        "type": "header",
        "schema": JSONL_SCHEMA,
        "process": path.process_kind,
        "initial": {str(j): c for j, c in path.initial_state.to_dict().items()},
        "offspring": law.family,
        "theta": law.theta,
    }
    if path.params is not None:
        header.update({"lambda": path.params.lam, "mu": path.params.mu, "N": path.params.N})
    fh.write(json.dumps(header) + "\n")
    for i, ev in enumerate(path.events):
        fh.write(json.dumps(_event_to_json(i, ev)) + "\n")


def read_jsonl(fh) -> PathRecord:
    header = None
    events = []
    for lineno, line in enumerate(fh, 1):
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        if obj.get("type") == "header":
            header = obj
            continue
        if obj.get("type") != "event":
            raise ValueError(f"line {lineno}: unknown record type {obj.get('type')!r}")
        events.append(
            Event(obj["kind"], float(obj["dt"]), int(obj.get("level", 0)), int(obj.get("source", 0)), int(obj.get("load", 0)))
        )
    if header is None:
        raise ValueError("missing header line")
    law = OffspringLaw(header["offspring"], float(header["theta"]))
    initial = SparseState({int(j): c for j, c in header["initial"].items()}, law)
    params = None
    if "lambda" in header:
        params = ModelParams(float(header["lambda"]), float(header["mu"]), int(header["N"]), law)
    return PathRecord(initial, events, header["process"], params)


def _scan(counts, target, weight):
    """Return the key whose cumulative weight first exceeds ``target``."""
    acc = 0.0
    key = None
    for j, c in counts.items():
        w = weight(j, c)
        if w <= 0:
            continue
        key = j
        acc += w
        if target < acc:
            return j
    # rounding at the top end
    return key


def draw_event(state: SparseState, params: ModelParams, epidemic: bool, rng: np.random.Generator) -> Event:
    """Sample the next event from ``state`` without applying it."""
    S = state.S
    if S == 0:
        return Event(PSEUDO, rng.standard_exponential())
    N = params.N
    infect = params.lam * state.W
    if epidemic:
        if S > N:
            raise InvalidStateError(f"S={S} exceeds N={N}")
        infect = infect * (N - S) / N
    death = params.mu * state.P
    total = death + infect
    dt = rng.standard_exponential() / total
    u = rng.random() * total
    if u < death:
        j = _scan(state.counts, u / params.mu, lambda j, c: j * c)
        return Event(DEATH, dt, level=j)
    law = state.law
    omq = law.one_minus_p_l0
    target = (u - death) / infect * state.W
    l = _scan(state.counts, target, lambda j, c: c * omq(j))
    return Event(INFECTION, dt, source=l, load=law.sample_positive_sum(rng, l))


def step(state: SparseState, params: ModelParams, kind: str, rng: np.random.Generator):
    """One transition: returns ``(event, new_state)`` leaving ``state`` untouched."""
    ev = draw_event(state, params, _is_epidemic(kind), rng)
    new = state.copy()
    new.apply(ev)
    return ev, new


def _is_epidemic(kind):
    if kind not in PROCESS_KINDS:
        raise ValueError(f"unknown process kind {kind!r}")
    return kind == EPIDEMIC


def simulate_path(
    initial: SparseState,
    params: ModelParams,
    kind: str,
    stop: StopRule,
    rng: np.random.Generator,
    on_event=None,
    halt_on_zero: bool = False,
) -> PathRecord:
    """Simulate until ``stop`` is met.

    ``on_event(pre_state, event)`` is called before each event is applied;
    ``pre_state`` is the live simulation state and must not be retained.
    With ``halt_on_zero`` the run also ends on reaching the zero state.
    """
    epidemic = _is_epidemic(kind)
    if epidemic and initial.S > params.N:
        raise InvalidStateError(f"S={initial.S} exceeds N={params.N}")
    state = initial.copy()
    events = []
    infections = []
    limit = stop.value
    by_time = stop.kind == "time"
    by_infections = stop.kind == "infections"
    t = 0.0
    while True:
        if by_time:
            pass
        elif by_infections:
            if len(infections) >= limit:
                break
        elif len(events) >= limit:
            break
        if halt_on_zero and state.S == 0:
            break
        ev = draw_event(state, params, epidemic, rng)
        if by_time:
            if t + ev.dt > limit:
                break
            t += ev.dt
        if on_event is not None:
            on_event(state, ev)
        state.apply(ev)
        if ev.kind != DEATH:
            infections.append(len(events))
        events.append(ev)
    return PathRecord(initial.copy(), events, kind, params, infections)


@dataclass
class GeneratorCheck:
    categories: tuple
    observed: np.ndarray
    expected_prob: np.ndarray
    chi2: float
    p_value: float
    mean_dt: float
    expected_dt: float
    dt_z: float
    dt_p_value: float


def empirical_generator_check(params, state, kind, n_steps, rng) -> GeneratorCheck:
    """Compare one-step event frequencies and holding times with exact rates."""
    epidemic = _is_epidemic(kind)
    if state.S == 0:
        cats = (PSEUDO,)
        probs = np.array([1.0])
        total = 1.0
    else:
        infect = big_lambda_N(state, params) if epidemic else big_lambda(state, params)
        total = rho_N(state, params) if epidemic else rho(state, params)
        cats = (DEATH, INFECTION)
        probs = np.array([params.mu * state.P / total, infect / total])
    observed = np.zeros(len(cats))
    dts = np.empty(n_steps)
    index = {c: i for i, c in enumerate(cats)}
    for k in range(n_steps):
        ev = draw_event(state, params, epidemic, rng)
        observed[index[ev.kind]] += 1
        dts[k] = ev.dt
    keep = probs > 0
    if keep.sum() > 1:
        chi2, p = stats.chisquare(observed[keep], probs[keep] * n_steps)
    else:
        chi2, p = 0.0, 1.0
    expected_dt = 1.0 / total
    # holding time is exponential, so its sd equals its mean
    z = (dts.mean() - expected_dt) / (expected_dt / np.sqrt(n_steps))
    return GeneratorCheck(
        cats, observed, probs, float(chi2), float(p), float(dts.mean()), expected_dt, float(z), float(2 * stats.norm.sf(abs(z)))
    )
