"""Command-line entry point: ``bklab COMMAND [--config FILE] [--set key=value ...]``.

Exit status is 0 when every report holds or is inconclusive, 1 when any
report is violated, 2 on configuration errors and 3 on I/O errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import tempfile
from contextlib import contextmanager

import numpy as np

from . import bounds
from .config import ConfigError, parse_config
from .coupling import coupling_replicates
from .harness import (
    VIOLATED,
    BoundReport,
    concentration_test,
    estimate_lr_moments,
    growth_and_extinction,
    mean_se,
    rc_test,
    tv_sweep_row,
    verify_increments,
    verify_tau1,
    verify_tv,
    verify_variance,
)
from .likelihood import PER_INFECTION
from .model import ModelParams, OffspringLaw
from .simulator import simulate_path, write_jsonl
from .streams import THREADS_ENV, replicate_rng

CSV_SCHEMA = 1
COMMANDS = ("simulate", "lr-verify", "tv", "coupling", "bounds", "concentration", "rc", "growth", "sweep")

EXIT_OK, EXIT_VIOLATED, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


@contextmanager
def atomic_output(path):
    """Write to a temporary sibling and move it into place only on success."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".bklab-", suffix=".part")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_rows(path, command, columns, rows, fmt="csv"):
    """CSV with a versioned comment line, or JSON lines led by a schema object."""
    with atomic_output(path) as fh:
        if fmt == "jsonl":
            fh.write(json.dumps({"schema": CSV_SCHEMA, "command": command, "columns": list(columns)}) + "\n")
            for row in rows:
                fh.write(json.dumps({c: _fmt(row[c]) for c in columns}) + "\n")
            return
        fh.write(f"# bklab schema={CSV_SCHEMA} command={command}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


REPORT_COLUMNS = ("bound_name", "theoretical", "empirical", "se", "verdict")


def _report_rows(reports):
    return [
        {"bound_name": r.name, "theoretical": r.theoretical, "empirical": r.empirical, "se": r.se, "verdict": r.verdict}
        for r in reports
    ]


def _print_reports(reports, out):
    for r in reports:
        print(r.line(), file=out)


def _status(reports):
    return EXIT_VIOLATED if any(r.verdict == VIOLATED for r in reports) else EXIT_OK


def _output(cfg, command, ext="csv"):
    return cfg.get("output") or f"bklab_{command.replace('-', '_')}.{'jsonl' if cfg['format'] == 'jsonl' else ext}"


# -------------------------------------------------------------------- commands


def cmd_simulate(cfg, out):
    path = simulate_path(cfg.initial, cfg.params, cfg["process"], cfg["stop"], replicate_rng(cfg["seed"], 0, 5))
    target = cfg.get("output") or "bklab_path.jsonl"
    with atomic_output(target) as fh:
        write_jsonl(path, fh)
    final = path.final_state()
    print(f"{cfg['process']} path: {len(path)} events, {path.n_infections()} infection events, "
          f"time {float(path.times()[-1]) if len(path) else 0.0:.6g}", file=out)
    print(f"final state {final.to_dict()}  S={final.S} P={final.P}", file=out)
    print(f"wrote {target}", file=out)
    return EXIT_OK


def _martingale_report(m, k):
    dev = abs(m.mean_L.value - 1.0)
    verdict = VIOLATED if dev - k * m.mean_L.se > 0 else "holds"
    return BoundReport("martingale_mean_abs_dev", 0.0, dev, m.mean_L.se, verdict, k)


def cmd_lr_verify(cfg, out):
    exp = cfg.experiment()
    m = estimate_lr_moments(exp)
    rows = [
        {"replicate_id": i, "L_final": s.L, "stopped_at": f"{s.stopped}:{s.stopped_index}" if s.stopped else "none",
         "mode": exp.mode, "m_or_M": exp.horizon}
        for i, s in enumerate(m.samples)
    ]
    target = _output(cfg, "lr-verify")
    write_rows(target, "lr-verify", ("replicate_id", "L_final", "stopped_at", "mode", "m_or_M"), rows, cfg["format"])
    reports = [_martingale_report(m, exp.k_se), verify_variance(exp, m), verify_tau1(exp, m), verify_increments(exp, m)]
    print(f"mean L = {m.mean_L.value:.6g} +- {m.mean_L.se:.3g}   E(L-1)^2 = {m.second_moment.value:.4g}", file=out)
    _print_reports(reports, out)
    print(f"wrote {target}", file=out)
    return _status(reports)


def cmd_tv(cfg, out):
    exp = cfg.experiment()
    m = estimate_lr_moments(exp)
    reports = [*verify_tv(exp, m), verify_variance(exp, m), verify_tau1(exp, m), verify_increments(exp, m)]
    target = _output(cfg, "tv")
    write_rows(target, "tv", REPORT_COLUMNS, _report_rows(reports), cfg["format"])
    _print_reports(reports, out)
    print(f"wrote {target}", file=out)
    return _status(reports)


def cmd_coupling(cfg, out):
    rows = coupling_replicates(cfg.params, cfg.initial, cfg["horizon"], cfg["replicates"], cfg["seed"], cfg.threads)
    records = [
        {"replicate_id": i, "diverged": d, "divergence_index": k, "n_infections": n} for i, (d, k, n) in enumerate(rows)
    ]
    target = _output(cfg, "coupling")
    write_rows(target, "coupling", ("replicate_id", "diverged", "divergence_index", "n_infections"), records, cfg["format"])
    est = mean_se([r[0] for r in rows])
    tv = bounds.tv_bound_T2(cfg["horizon"], cfg.initial.S, cfg["N"])
    print(f"divergence within {cfg['horizon']} infections: {est.value:.6g} +- {est.se:.3g}"
          f"   (likelihood-ratio bound {tv.value:.6g}{'' if tv.valid else ', outside its hypotheses'})", file=out)
    print(f"wrote {target}", file=out)
    return EXIT_OK


BOUNDS_COLUMNS = ("horizon", "N", "S0", "tv_T1", "valid_T1", "tv_T2", "valid_T2", "variance_bound", "tau1_bound",
                  "psi", "C_r", "eps_r", "eta_r", "rc_valid", "eps0")


def cmd_bounds(cfg, out):
    S0 = cfg.initial.S
    eps0 = bounds.solve_eps0()
    rows = []
    for h in cfg.get("horizons") or [cfg["horizon"]]:
        for N in cfg.get("N_grid") or [cfg["N"]]:
            t1, t2 = bounds.tv_bound_T1(h, S0, N), bounds.tv_bound_T2(h, S0, N)
            rc = bounds.rc_params(h, N, S0, cfg["r"])
            rows.append({
                "horizon": h, "N": N, "S0": S0, "tv_T1": t1.value, "valid_T1": t1.valid, "tv_T2": t2.value,
                "valid_T2": t2.valid, "variance_bound": bounds.variance_bound(h, S0, N),
                "tau1_bound": bounds.tau1_bound(h, S0, N), "psi": rc.psi, "C_r": rc.C_r, "eps_r": rc.eps,
                "eta_r": rc.eta, "rc_valid": rc.valid, "eps0": eps0,
            })
    target = _output(cfg, "bounds")
    write_rows(target, "bounds", BOUNDS_COLUMNS, rows, cfg["format"])
    crit = bounds.criticality(cfg.params)
    print(f"eps0 = {eps0:.15f}   criticality {crit.formula} = {crit.parameter:.6g} ({crit.regime}), "
          f"mean growth rate {crit.growth_rate:.6g}", file=out)
    print(f"{'horizon':>8} {'N':>10} {'T1':>10} {'T2':>10} {'var':>10} {'eps_r':>10} {'eta_r':>10}", file=out)
    for r in rows:
        print(f"{r['horizon']:>8} {r['N']:>10} {r['tv_T1']:>10.4g} {r['tv_T2']:>10.4g} {r['variance_bound']:>10.4g} "
              f"{r['eps_r']:>10.4g} {r['eta_r']:>10.4g}", file=out)
    print(f"wrote {target}", file=out)
    return EXIT_OK


def cmd_concentration(cfg, out):
    if max(cfg["a"], cfg["b"]) <= 0:
        raise ConfigError(["range error on keys 'a'/'b': need max(a, b) > 0"])
    reports = concentration_test(cfg["a"], cfg["b"], cfg["n"], cfg["y_grid"], cfg["replicates"], cfg["seed"],
                                 drift=cfg["drift"], k=cfg["k_se"])
    target = _output(cfg, "concentration")
    write_rows(target, "concentration", REPORT_COLUMNS, _report_rows(reports), cfg["format"])
    _print_reports(reports, out)
    print(f"wrote {target}", file=out)
    return _status(reports)


def cmd_rc(cfg, out):
    exp = cfg.experiment(mode=PER_INFECTION)
    report = rc_test(exp, cfg["r"])
    d = report.details
    target = _output(cfg, "rc")
    write_rows(target, "rc", REPORT_COLUMNS, _report_rows([report]), cfg["format"])
    print(f"psi={d['psi']:.4g} eps={d['eps']:.4g} flags: psi_ok={d['psi_ok']} eps_ok={d['eps_ok']} M_ok={d['M_ok']}", file=out)
    print(f"P[|L-1| > eps/2] = {d['p_deviation']:.4g}   P[stopped] = {d['p_stopped']:.4g}", file=out)
    _print_reports([report], out)
    print(f"wrote {target}", file=out)
    return _status([report])


GROWTH_COLUMNS = ("t", "mean_P", "se_P", "predicted_P", "relative_error", "mean_S", "se_S",
                  "extinction_horizon", "extinction_freq", "extinction_se")


def cmd_growth(cfg, out):
    exp = cfg.experiment()
    rep = growth_and_extinction(exp, cfg["t_grid"], cfg["extinction_horizon"] or None)
    rows = [
        {"t": t, "mean_P": rep.mean_P[i], "se_P": rep.se_P[i], "predicted_P": rep.predicted_P[i],
         "relative_error": rep.relative_error[i], "mean_S": rep.mean_S[i], "se_S": rep.se_S[i],
         "extinction_horizon": rep.horizon, "extinction_freq": rep.extinction.value, "extinction_se": rep.extinction.se}
        for i, t in enumerate(rep.t_grid)
    ]
    target = _output(cfg, "growth")
    write_rows(target, "growth", GROWTH_COLUMNS, rows, cfg["format"])
    c = rep.criticality
    print(f"criticality {c.formula} = {c.parameter:.6g} ({c.regime}); mean growth rate {c.growth_rate:.6g}", file=out)
    for r in rows:
        print(f"t={r['t']:<8g} mean P={r['mean_P']:<10.5g} +- {r['se_P']:<8.3g} predicted {r['predicted_P']:<10.5g} "
              f"mean S={r['mean_S']:.5g}", file=out)
    print(f"extinct by t={rep.horizon:g}: {rep.extinction.value:.4g} +- {rep.extinction.se:.3g}", file=out)
    print(f"wrote {target}", file=out)
    return EXIT_OK


def cmd_sweep(cfg, out):
    if not cfg.get("sweep"):
        raise ConfigError(["missing required key 'sweep' (e.g. sweep = N:500,1000,2000)"])
    key, values = cfg["sweep"]
    rows = []
    for v in values:
        p = cfg.params
        changes = {}
        if key == "lambda":
            changes["params"] = ModelParams(v, p.mu, p.N, p.offspring)
        elif key == "mu":
            changes["params"] = ModelParams(p.lam, v, p.N, p.offspring)
        elif key == "N":
            changes["params"] = p.with_N(int(v))
        elif key == "theta":
            law = OffspringLaw(p.offspring.family, v)
            changes["params"] = ModelParams(p.lam, p.mu, p.N, law)
        else:
            changes["horizon"] = int(v)
        rows.append(tv_sweep_row(cfg.experiment(**changes)))
    columns = tuple(rows[0])
    target = _output(cfg, "sweep")
    write_rows(target, "sweep", columns, rows, cfg["format"])
    print(f"{key:>10} {'mean_L':>10} {'E(L-1)^2':>10} {'var bound':>10} {'assembly':>10} {'tv bound':>10}", file=out)
    for v, r in zip(values, rows):
        print(f"{v:>10g} {r['mean_L']:>10.5g} {r['second_moment']:>10.4g} {r['variance_bound']:>10.4g} "
              f"{r['assembly']:>10.4g} {r['tv_bound']:>10.4g}", file=out)
    print(f"wrote {target}", file=out)
    verdicts = [r[c] for r in rows for c in ("verdict_variance", "verdict_assembly", "verdict_half_abs")]
    return EXIT_VIOLATED if VIOLATED in verdicts else EXIT_OK


HANDLERS = {
    "simulate": cmd_simulate, "lr-verify": cmd_lr_verify, "tv": cmd_tv, "coupling": cmd_coupling,
    "bounds": cmd_bounds, "concentration": cmd_concentration, "rc": cmd_rc, "growth": cmd_growth, "sweep": cmd_sweep,
}


def run_command(name, cfg, out=None) -> int:
    out = out or sys.stdout
    return HANDLERS[name](cfg, out)


def build_parser():
    parser = argparse.ArgumentParser(prog="bklab", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("-c", "--config", help="flat key = value configuration file")
    parser.add_argument("-s", "--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--threads", type=int, help=f"worker processes (falls back to ${THREADS_ENV})")
    parser.add_argument("--replicates", type=int)
    parser.add_argument("-o", "--output")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.set)
    for key in ("seed", "threads", "replicates", "output"):
        value = getattr(args, key)
        if value is not None:
            overrides.append(f"{key}={value}")
    try:
        cfg = parse_config(args.config, overrides)
        return run_command(args.command, cfg)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error on {exc.filename or '?'}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
