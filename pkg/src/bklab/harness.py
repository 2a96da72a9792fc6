"""Replicated Monte Carlo experiments and bound verification reports."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from . import bounds
from .coupling import Estimate
from .likelihood import PER_INFECTION, PER_TRANSITION, LikelihoodTracker
from .model import DEATH, INFECTION, ModelParams, SparseState
from .simulator import BRANCHING, EPIDEMIC, MaxInfections, MaxTime, MaxTransitions, simulate_path
from .streams import replicate_rng, run_replicates

HOLDS = "holds"
VIOLATED = "violated"
INCONCLUSIVE = "inconclusive"

# stream ids keep the replicate families of different experiments disjoint
_LR_STREAM = 0
_EPIDEMIC_STREAM = 1
_CONCENTRATION_STREAM = 3
_GROWTH_STREAM = 4


@dataclass
class ExperimentConfig:
    params: ModelParams
    initial: SparseState
    mode: str = PER_TRANSITION
    horizon: int = 10
    replicates: int = 1000
    seed: int = 0
    workers: int | None = None
    k_se: float = 3.0

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if self.mode not in (PER_TRANSITION, PER_INFECTION):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")

    @property
    def S0(self) -> int:
        return self.initial.S

    @property
    def stop(self):
        return MaxTransitions(self.horizon) if self.mode == PER_TRANSITION else MaxInfections(self.horizon)


@dataclass
class BoundReport:
    name: str
    theoretical: float
    empirical: float
    se: float
    verdict: str
    k: float = 3.0
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"{self.name:<34} bound={self.theoretical:<12.6g} empirical={self.empirical:<12.6g} se={self.se:<10.3g} {self.verdict}"


def judge(empirical, se, theoretical, valid=True, k=3.0) -> str:
    if not valid:
        return INCONCLUSIVE
    return VIOLATED if empirical - k * se > theoretical else HOLDS


def mean_se(values) -> Estimate:
    x = np.asarray(values, dtype=float)
    if x.size < 2:
        return Estimate(float(x.mean()) if x.size else math.nan, math.nan)
    return Estimate(float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)))


@dataclass(frozen=True)
class LRSample:
    L: float
    log_L_free: float
    stopped: str  # "", "tau1" or "tau2"
    stopped_index: int
    tau1_hit: bool
    tau2_only_hit: bool
    max_increment_ratio: float


def _lr_replicate(params, initial, mode, horizon, tracker_cls, rng, i):
    S0 = initial.S
    tracker = tracker_cls(params, mode, horizon + S0)
    stop = MaxTransitions(horizon) if mode == PER_TRANSITION else MaxInfections(horizon)
    simulate_path(initial, params, BRANCHING, stop, rng, on_event=tracker)
    ls = tracker.state
    st = ls.stopped_at
    tau1 = ls.tau1 is not None
    tau2_only = ls.tau2 is not None and not tau1
    return LRSample(
        ls.L, ls.log_L_free, st.which if st else "", st.index if st else -1, tau1, tau2_only, ls.max_increment_ratio
    )


def lr_samples(cfg: ExperimentConfig, tracker_cls=LikelihoodTracker):
    fn = partial(_lr_replicate, cfg.params, cfg.initial, cfg.mode, cfg.horizon, tracker_cls)
    return run_replicates(fn, cfg.replicates, cfg.seed, stream=_LR_STREAM, workers=cfg.workers)


@dataclass
class LRMoments:
    n: int
    mean_L: Estimate
    abs_dev: Estimate  # E|1 - L|
    pos_dev: Estimate  # E(1 - L)^+
    neg_dev: Estimate  # E(L - 1)^+
    second_moment: Estimate  # E(L - 1)^2
    p_tau1: Estimate
    p_tau2: Estimate  # tau2 within horizon, tau1 not
    assembly: Estimate
    max_increment_ratio: float
    samples: list = field(repr=False, default_factory=list)


def moments_from_samples(samples) -> LRMoments:
    L = np.array([s.L for s in samples])
    t1 = np.array([s.tau1_hit for s in samples], dtype=float)
    t2 = np.array([s.tau2_only_hit for s in samples], dtype=float)
    pos = np.maximum(1.0 - L, 0.0)
    return LRMoments(
        n=len(samples),
        mean_L=mean_se(L),
        abs_dev=mean_se(np.abs(1.0 - L)),
        pos_dev=mean_se(pos),
        neg_dev=mean_se(np.maximum(L - 1.0, 0.0)),
        second_moment=mean_se((L - 1.0) ** 2),
        p_tau1=mean_se(t1),
        p_tau2=mean_se(t2),
        assembly=mean_se(t1 + t2 + pos),
        max_increment_ratio=max((s.max_increment_ratio for s in samples), default=0.0),
        samples=list(samples),
    )


def estimate_lr_moments(cfg: ExperimentConfig, tracker_cls=LikelihoodTracker) -> LRMoments:
    """Moments of the stopped likelihood ratio under the branching law."""
    return moments_from_samples(lr_samples(cfg, tracker_cls))


def _tv_bound(cfg):
    if cfg.mode == PER_TRANSITION:
        return bounds.tv_bound_T1(cfg.horizon, cfg.S0, cfg.params.N)
    return bounds.tv_bound_T2(cfg.horizon, cfg.S0, cfg.params.N)


def verify_tv(cfg: ExperimentConfig, moments: LRMoments | None = None, tracker_cls=LikelihoodTracker):
    """Check the deviation assembly and half the mean absolute deviation against ``8 S sqrt(h) / N``."""
    if moments is None:
        moments = estimate_lr_moments(cfg, tracker_cls)
    tv = _tv_bound(cfg)
    k = cfg.k_se
    a = moments.assembly
    assembly = BoundReport(
        f"tv_assembly[{cfg.mode}]", tv.value, a.value, a.se, judge(a.value, a.se, tv.value, tv.valid, k), k,
        {"valid": tv.valid, "p_tau1": moments.p_tau1.value, "p_tau2": moments.p_tau2.value, "pos_dev": moments.pos_dev.value},
    )
    h = moments.abs_dev
    half = BoundReport(
        f"tv_half_abs_dev[{cfg.mode}]", tv.value, h.value / 2, h.se / 2, judge(h.value / 2, h.se / 2, tv.value, tv.valid, k), k,
        {"valid": tv.valid},
    )
    return assembly, half


def verify_variance(cfg: ExperimentConfig, moments: LRMoments | None = None) -> BoundReport:
    """``E(L - 1)^2 <= 52 h S_h^2 / N^2`` for the stopped ratio."""
    if moments is None:
        moments = estimate_lr_moments(cfg)
    bound = bounds.variance_bound(cfg.horizon, cfg.S0, cfg.params.N)
    valid = cfg.horizon + cfg.S0 <= cfg.params.N
    sm = moments.second_moment
    return BoundReport(
        f"second_moment[{cfg.mode}]", bound, sm.value, sm.se, judge(sm.value, sm.se, bound, valid, cfg.k_se), cfg.k_se,
        {"valid": valid},
    )


def verify_increments(cfg: ExperimentConfig, moments: LRMoments) -> BoundReport:
    """Largest realized increment relative to ``2 S_cap N^-1 (1 + 2E)`` (must not exceed 1)."""
    worst = moments.max_increment_ratio
    return BoundReport(f"increment_ratio[{cfg.mode}]", 1.0, worst, 0.0, judge(worst, 0.0, 1.0, True, cfg.k_se), cfg.k_se)


def verify_tau1(cfg: ExperimentConfig, moments: LRMoments) -> BoundReport:
    bound = bounds.tau1_bound(cfg.horizon, cfg.S0, cfg.params.N)
    p = moments.p_tau1
    return BoundReport(f"p_tau1[{cfg.mode}]", bound, p.value, p.se, judge(p.value, p.se, bound, True, cfg.k_se), cfg.k_se)


# ---------------------------------------------------------------- functionals


class SizeIncrease:
    """Indicator that more hosts are infected at the end of the path than at its start."""

    def __call__(self, path) -> float:
        return float(path.final_state().S > path.initial_state.S)


class Constant:
    def __init__(self, value=1.0):
        self.value = float(value)

    def __call__(self, path) -> float:
        return self.value


def _functional_replicate(params, initial, kind, stop, functional, rng, i):
    return functional(simulate_path(initial, params, kind, stop, rng))


def _weighted_replicate(params, initial, mode, horizon, functional, rng, i):
    tracker = LikelihoodTracker(params, mode, horizon + initial.S)
    stop = MaxTransitions(horizon) if mode == PER_TRANSITION else MaxInfections(horizon)
    path = simulate_path(initial, params, BRANCHING, stop, rng, on_event=tracker)
    return functional(path) * math.expm1(tracker.state.log_L_free)


def verify_functional_gap(cfg: ExperimentConfig, functional, method: str = "direct") -> BoundReport:
    """Estimate ``|E f(epidemic) - E f(branching)|`` for a functional of the first ``horizon`` steps.

    ``direct`` simulates both processes independently.  ``weighted`` uses
    branching paths only, through ``E f(epidemic) = E f(branching) L``.
    """
    p, init, stop = cfg.params, cfg.initial, cfg.stop
    tv = _tv_bound(cfg)
    if method == "direct":
        fb = run_replicates(partial(_functional_replicate, p, init, BRANCHING, stop, functional),
                            cfg.replicates, cfg.seed, stream=_LR_STREAM, workers=cfg.workers)
        fe = run_replicates(partial(_functional_replicate, p, init, EPIDEMIC, stop, functional),
                            cfg.replicates, cfg.seed, stream=_EPIDEMIC_STREAM, workers=cfg.workers)
        eb, ee = mean_se(fb), mean_se(fe)
        diff = ee.value - eb.value
        se = math.hypot(eb.se, ee.se)
        details = {"branching": eb.value, "epidemic": ee.value, "signed_gap": diff}
    elif method == "weighted":
        w = run_replicates(partial(_weighted_replicate, p, init, cfg.mode, cfg.horizon, functional),
                           cfg.replicates, cfg.seed, stream=_LR_STREAM, workers=cfg.workers)
        est = mean_se(w)
        diff, se = est.value, est.se
        details = {"signed_gap": diff}
    else:
        raise ValueError(f"unknown method {method!r}")
    gap = abs(diff)
    if not se > 0:
        se = 0.0
    return BoundReport(
        f"functional_gap[{method}]", tv.value, gap, se, judge(gap, se, tv.value, tv.valid, cfg.k_se), cfg.k_se,
        {**details, "valid": tv.valid},
    )


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# ------------------------------------------------------------- concentration

_CONCENTRATION_BLOCK = 10_000


def synthetic_deviations(a, b, n, replicates, seed, drift=False) -> np.ndarray:
    """``L_n - L_0`` for the martingale with increments ``zeta (a + b E)``.

    ``zeta`` is a fair sign independent of ``E ~ Exp(1)``; with ``drift``
    every sign is ``+1``, which breaks the martingale property.
    """
    out = np.empty(replicates)
    for block, lo in enumerate(range(0, replicates, _CONCENTRATION_BLOCK)):
        hi = min(lo + _CONCENTRATION_BLOCK, replicates)
        rng = replicate_rng(seed, block, _CONCENTRATION_STREAM)
        E = rng.standard_exponential((hi - lo, n))
        steps = a + b * E
        if not drift:
            steps *= rng.integers(0, 2, size=(hi - lo, n)) * 2 - 1
        out[lo:hi] = steps.sum(axis=1)
    return out


def concentration_test(a, b, n, y_grid, replicates, seed, drift=False, k=3.0):
    """Empirical upper and lower tails of the synthetic martingale against both tail bounds."""
    dev = synthetic_deviations(a, b, n, replicates, seed, drift)
    reports = []
    for y in y_grid:
        tp = bounds.TailParams(a, b, n, float(y))
        b1, in_range = bounds.tail_bound_1(tp)
        b2 = bounds.tail_bound_2(tp)
        for side, hits in (("upper", dev >= y), ("lower", dev <= -y)):
            est = mean_se(hits)
            tag = f"a={a:g},b={b:g},n={n},y={y:.4g}"
            reports.append(BoundReport(f"tail1_{side}[{tag}]", b1, est.value, est.se,
                                       judge(est.value, est.se, b1, in_range, k), k, {"in_range": in_range}))
            reports.append(BoundReport(f"tail2_{side}[{tag}]", b2, est.value, est.se,
                                       judge(est.value, est.se, b2, True, k), k))
    return reports


# -------------------------------------------------------- relative closeness


def _rc_replicate(params, initial, M, rng, i):
    tracker = LikelihoodTracker(params, PER_INFECTION, M + initial.S)
    simulate_path(initial, params, BRANCHING, MaxInfections(M), rng, on_event=tracker)
    ls = tracker.state
    return ls.L, ls.stopped_at is not None, ls.log_L_free


def rc_test(cfg: ExperimentConfig, r: float = 1.0) -> BoundReport:
    """Empirical probability of the exceptional set against ``eta``.

    The exceptional set is ``{a stopping time fires by M} U {|L - 1| > eps/2}``.
    """
    if cfg.mode != PER_INFECTION:
        raise ValueError("relative closeness is checked on the per-infection clock")
    M, N = cfg.horizon, cfg.params.N
    rc = bounds.rc_params(M, N, cfg.S0, r)
    rows = run_replicates(partial(_rc_replicate, cfg.params, cfg.initial, M),
                          cfg.replicates, cfg.seed, stream=_LR_STREAM, workers=cfg.workers)
    L = np.array([row[0] for row in rows])
    stopped = np.array([row[1] for row in rows])
    log_free = np.array([row[2] for row in rows])
    half_eps = rc.eps / 2 if math.isfinite(rc.eps) else math.inf
    dev = np.abs(L - 1.0) > half_eps
    exceptional = stopped | dev
    est = mean_se(exceptional)
    p_dev, p_stop = mean_se(dev), mean_se(stopped)
    t1, t2, t3 = rc.eta_terms
    on_R = ~exceptional
    worst_log = float(np.max(np.abs(log_free[on_R]))) if on_R.any() else 0.0
    return BoundReport(
        f"rc_exceptional[r={r:g}]", rc.eta, est.value, est.se, judge(est.value, est.se, rc.eta, rc.valid, cfg.k_se), cfg.k_se,
        {
            "psi": rc.psi, "eps": rc.eps, "eta_terms": (t1, t2, t3),
            "p_deviation": p_dev.value, "p_deviation_se": p_dev.se,
            "p_stopped": p_stop.value, "p_stopped_se": p_stop.se,
            "max_abs_log_L_on_R": worst_log,
            "psi_ok": rc.psi_ok, "eps_ok": rc.eps_ok, "M_ok": rc.M_ok, "degenerate": rc.degenerate,
        },
    )


# ------------------------------------------------------- growth / extinction


class _GridRecorder:
    """Records total parasites and infected hosts at grid times along one run."""

    def __init__(self, initial, t_grid):
        self.t_grid = t_grid
        self.P = np.empty(len(t_grid))
        self.S = np.empty(len(t_grid))
        self.cur_P, self.cur_S = initial.P, initial.S
        self.t = 0.0
        self.k = 0

    def __call__(self, pre_state, ev):
        t_next = self.t + ev.dt
        grid = self.t_grid
        while self.k < len(grid) and grid[self.k] < t_next:
            self.P[self.k] = self.cur_P
            self.S[self.k] = self.cur_S
            self.k += 1
        self.t = t_next
        if ev.kind == DEATH:
            self.cur_P -= 1
            if ev.level == 1:
                self.cur_S -= 1
        elif ev.kind == INFECTION:
            self.cur_P += ev.load
            self.cur_S += 1

    def finish(self):
        self.P[self.k:] = self.cur_P
        self.S[self.k:] = self.cur_S
        return self.P, self.S


def _growth_replicate(params, initial, t_grid, horizon, rng, i):
    rec = _GridRecorder(initial, t_grid)
    simulate_path(initial, params, BRANCHING, MaxTime(horizon), rng, on_event=rec, halt_on_zero=True)
    P, S = rec.finish()
    return P, S, rec.cur_S == 0


@dataclass
class GrowthReport:
    t_grid: np.ndarray
    mean_P: np.ndarray
    se_P: np.ndarray
    predicted_P: np.ndarray
    mean_S: np.ndarray
    se_S: np.ndarray
    extinction: Estimate
    horizon: float
    criticality: bounds.Criticality

    @property
    def relative_error(self) -> np.ndarray:
        return self.mean_P / self.predicted_P - 1.0


def growth_and_extinction(cfg: ExperimentConfig, t_grid, extinction_horizon=None) -> GrowthReport:
    """Mean total parasites on ``t_grid`` against ``P(0) exp((lam theta - mu) t)``, and extinction frequency.

    Runs end at the zero state; pseudo-jumps there are not simulated.
    """
    t_grid = np.sort(np.asarray(t_grid, dtype=float))
    horizon = float(max(t_grid.max(), extinction_horizon or 0.0))
    rows = run_replicates(partial(_growth_replicate, cfg.params, cfg.initial, t_grid, horizon),
                          cfg.replicates, cfg.seed, stream=_GROWTH_STREAM, workers=cfg.workers)
    P = np.array([row[0] for row in rows])
    S = np.array([row[1] for row in rows])
    ext = mean_se([row[2] for row in rows])
    n = len(rows)
    se = lambda x: x.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full(x.shape[1], math.nan)
    crit = bounds.criticality(cfg.params)
    predicted = cfg.initial.P * np.exp(crit.growth_rate * t_grid)
    return GrowthReport(t_grid, P.mean(axis=0), se(P), predicted, S.mean(axis=0), se(S), ext, horizon, crit)


# -------------------------------------------------------------------- sweeps


def tv_sweep_row(cfg: ExperimentConfig) -> dict:
    """All inputs plus the likelihood-ratio reports for one grid point."""
    m = estimate_lr_moments(cfg)
    assembly, half = verify_tv(cfg, m)
    var = verify_variance(cfg, m)
    return {
        "lambda": cfg.params.lam, "mu": cfg.params.mu, "offspring": cfg.params.offspring.family,
        "theta": cfg.params.theta, "N": cfg.params.N, "S0": cfg.S0, "mode": cfg.mode, "horizon": cfg.horizon,
        "replicates": cfg.replicates, "seed": cfg.seed,
        "mean_L": m.mean_L.value, "mean_L_se": m.mean_L.se,
        "second_moment": m.second_moment.value, "second_moment_se": m.second_moment.se, "variance_bound": var.theoretical,
        "assembly": m.assembly.value, "assembly_se": m.assembly.se, "tv_bound": assembly.theoretical,
        "tv_valid": assembly.details["valid"], "half_abs_dev": half.empirical,
        "verdict_variance": var.verdict, "verdict_assembly": assembly.verdict, "verdict_half_abs": half.verdict,
    }
