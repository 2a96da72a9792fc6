"""Flat ``key = value`` run configuration.

Grammar: one ``key = value`` pair per line; ``#`` starts a comment; blank
lines are ignored.  Keys are case-sensitive.  Command-line overrides take
precedence over the file, which takes precedence over the defaults below.
All problems are collected and reported together.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

from .harness import ExperimentConfig
from .likelihood import MODES
from .model import FAMILIES, ModelParams, OffspringLaw, SparseState
from .simulator import PROCESS_KINDS, StopRule
from .streams import THREADS_ENV


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


def _int(text):
    value = float(text)
    if value != int(value):
        raise ValueError("not an integer")
    return int(value)


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text):
    return [_int(x) for x in text.split(",") if x.strip()]


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("not a boolean")


def parse_initial(text) -> dict:
    """``"3x1, 1x5"`` means three hosts with one parasite and one host with five."""
    counts = {}
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        hosts, sep, burden = item.partition("x")
        if not sep:
            raise ValueError(f"expected HOSTSxBURDEN, got {item!r}")
        h, j = _int(hosts), _int(burden)
        if h < 0 or j < 1:
            raise ValueError(f"bad entry {item!r}")
        counts[j] = counts.get(j, 0) + h
    return counts


def _choice(options):
    def parse(text):
        text = text.strip().lower()
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text

    return parse


def _stop(text):
    return StopRule.parse(text)


def _sweep(text):
    key, sep, values = text.partition(":")
    key = key.strip()
    if not sep or key not in ("lambda", "mu", "theta", "N", "horizon"):
        raise ValueError("expected KEY:v1,v2,... with KEY in lambda, mu, theta, N, horizon")
    return key, _floats(values)


# key -> (parser, range check or None, default); default None means required
SCHEMA = {
    "lambda": (float, lambda v: v > 0, None),
    "mu": (float, lambda v: v > 0, None),
    "offspring": (_choice(FAMILIES), None, None),
    "theta": (float, lambda v: v > 0, None),
    "N": (_int, lambda v: v >= 2, None),
    "initial": (parse_initial, None, None),
    "process": (_choice(PROCESS_KINDS), None, "branching"),
    "stop": (_stop, None, "transitions:10"),
    "mode": (_choice(MODES), None, "transition"),
    "horizon": (_int, lambda v: v >= 0, "10"),
    "replicates": (_int, lambda v: v >= 1, "1000"),
    "seed": (_int, lambda v: v >= 0, "0"),
    "threads": (_int, lambda v: v >= 1, None),
    "k_se": (float, lambda v: v > 0, "3"),
    "r": (float, lambda v: v >= 1, "1"),
    "t_grid": (_floats, lambda v: len(v) > 0 and all(t > 0 for t in v), "1"),
    "extinction_horizon": (float, lambda v: v >= 0, "0"),
    "a": (float, lambda v: v >= 0, "0"),
    "b": (float, lambda v: v >= 0, "1"),
    "n": (_int, lambda v: v >= 1, "100"),
    "y_grid": (_floats, lambda v: all(y >= 0 for y in v), "0,5,10,20,30"),
    "drift": (_bool, None, "false"),
    "sweep": (_sweep, lambda v: len(v[1]) > 0, None),
    "horizons": (_ints, lambda v: all(h >= 0 for h in v), None),
    "N_grid": (_ints, lambda v: all(n >= 2 for n in v), None),
    "output": (str, None, None),
    "format": (_choice(("csv", "jsonl")), None, "csv"),
}
OPTIONAL = {"threads", "sweep", "horizons", "N_grid", "output"}


@dataclass
class RunConfig:
    values: dict
    sources: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    @property
    def law(self) -> OffspringLaw:
        return OffspringLaw(self["offspring"], self["theta"])

    @property
    def params(self) -> ModelParams:
        return ModelParams(self["lambda"], self["mu"], self["N"], self.law)

    @property
    def initial(self) -> SparseState:
        return SparseState(self["initial"], self.law)

    @property
    def threads(self) -> int:
        return self.values.get("threads") or 1

    def experiment(self, **changes) -> ExperimentConfig:
        params = changes.pop("params", None) or self.params
        base = dict(
            params=params, initial=SparseState(self["initial"], params.offspring), mode=self["mode"],
            horizon=self["horizon"], replicates=self["replicates"], seed=self["seed"], workers=self.threads,
            k_se=self["k_se"],
        )
        base.update(changes)
        return ExperimentConfig(**base)


def _read_pairs(text, origin, errors):
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            errors.append(f"{origin}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            continue
        pairs.append((key.strip(), value.strip(), f"{origin}:{lineno}"))
    return pairs


def parse_config(file=None, overrides=None) -> RunConfig:
    """Parse a config file plus overrides (``"key=value"`` strings or a dict)."""
    errors = []
    raw, sources = {}, {}
    if file is not None:
        with open(file) as fh:
            text = fh.read()
        for key, value, where in _read_pairs(text, str(file), errors):
            raw[key], sources[key] = value, where
    if overrides:
        items = overrides.items() if isinstance(overrides, dict) else [o.partition("=")[::2] for o in overrides]
        for key, value in items:
            key = str(key).strip()
            raw[key], sources[key] = str(value).strip(), "command line"
    if "threads" not in raw and os.environ.get(THREADS_ENV):
        raw["threads"], sources["threads"] = os.environ[THREADS_ENV], THREADS_ENV

    values = {}
    for key in raw:
        if key not in SCHEMA:
            errors.append(f"{sources[key]}: unknown key {key!r}")
    for key, (parse, check, default) in SCHEMA.items():
        text = raw.get(key, default)
        if text is None:
            if key not in OPTIONAL:
                errors.append(f"missing required key {key!r}")
            continue
        where = sources.get(key, "default")
        try:
            value = parse(text)
        except ValueError as exc:
            errors.append(f"{where}: parse error on key {key!r}: {exc}")
            continue
        if check is not None and not check(value):
            errors.append(f"{where}: range error on key {key!r}: {text!r} out of range")
            continue
        values[key] = value
    if not errors and values["offspring"] == "pointmass" and (values["theta"] != int(values["theta"]) or values["theta"] < 1):
        errors.append(f"{sources.get('theta', 'default')}: range error on key 'theta': point mass needs an integer >= 1")
    if not errors and values["process"] == "epidemic" and sum(values["initial"].values()) > values["N"]:
        errors.append(f"{sources.get('initial')}: range error on key 'initial': more infected hosts than N")
    if errors:
        raise ConfigError(errors)
    return RunConfig(values, sources)
