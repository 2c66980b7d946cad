"""Experiment configuration: YAML in, validated :class:`ExperimentConfig` out."""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass
from typing import Any, Optional

import yaml

from .analysis import ENTROPY_CONVENTIONS, excess_noise
from .errors import ConfigError
from .quantum import noise_from_line_params
from .reconciliation import METHODS, MODES

SCHEMA = {
    "seed": 0,
    "n_units": 100_000,
    "modulation": {"variance": 1.06},
    "channel": {
        "transmittance": None,
        "excess_noise": None,
        "n1_variance": None,
        "n2_variance": None,
        "n1_scale_transform": None,
        "n2_scale_transform": None,
        "correlation": None,
        "calibration": "received",
    },
    "reconciliation": {
        "d": 16,
        "a": -1.0,
        "b": 1.0,
        "granulation": "affine",
        "spread": 0.0,
        "method": "scalar",
        "var_x": None,
        "var_x_prime": None,
    },
    "sweep": {"d_list": [2, 4, 8, 16], "replicates": 10, "n_blocks": 10_000},
    "keyrate": {
        "entropy": "BosonicG",
        "fiber_loss_db_per_km": 0.2,
        "distances_km": [10, 20, 30, 40, 50, 60, 70, 80, 90, 100],
    },
    "hist": {"bins": "fd"},
    "output": {"dir": "out"},
    "jobs": 1,
}

# keys that do not influence any emitted number
_NOT_HASHED = ("output_dir", "jobs")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    n_units: int
    modulation_variance: float
    transmittance: Optional[float]
    excess_noise: Optional[float]
    n1_variance: float
    n2_variance: float
    n1_scale_transform: Optional[tuple]
    n2_scale_transform: Optional[tuple]
    correlation: Optional[float]
    calibration: str
    d_list: tuple
    a: float
    b: float
    granulation: str
    spread: float
    method: str
    var_x: Optional[float]
    var_x_prime: Optional[float]
    sweep_d_list: tuple
    replicates: int
    sweep_blocks: int
    entropy: str
    fiber_loss_db_per_km: float
    distances_km: tuple
    hist_bins: Any
    output_dir: str
    jobs: int

    @property
    def d(self) -> int:
        return self.d_list[0]

    def as_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        data = {k: v for k, v in self.as_dict().items() if k not in _NOT_HASHED}
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"), default=list)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _merge(defaults, given, path, problems):
    out = copy.deepcopy(defaults)
    if given is None:
        return out
    if not isinstance(given, dict):
        problems.append(f"{path or 'document'}: expected a mapping")
        return out
    for key, value in given.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in defaults:
            problems.append(f"{where}: unknown key")
        elif isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], value, where, problems)
        else:
            out[key] = value
    return out


class _Checker:
    def __init__(self):
        self.problems = []

    def number(self, name, value, *, lo=None, hi=None, lo_open=False, hi_open=False,
               optional=False, integer=False):
        if value is None:
            if not optional:
                self.problems.append(f"{name}: required")
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.problems.append(f"{name}: expected a number, got {value!r}")
            return None
        if integer and (not float(value).is_integer()):
            self.problems.append(f"{name}: expected an integer, got {value!r}")
            return None
        v = int(value) if integer else float(value)
        if not math.isfinite(v):
            self.problems.append(f"{name}: must be finite")
            return None
        bad_lo = lo is not None and (v <= lo if lo_open else v < lo)
        bad_hi = hi is not None and (v >= hi if hi_open else v > hi)
        if bad_lo or bad_hi:
            left = "(" if lo_open else "["
            right = ")" if hi_open else "]"
            rng = f"{left}{'-inf' if lo is None else lo}, {'inf' if hi is None else hi}{right}"
            self.problems.append(f"{name}: {v} is outside {rng}")
            return None
        return v

    def choice(self, name, value, options):
        if value not in options:
            self.problems.append(f"{name}: must be one of {list(options)}, got {value!r}")
            return None
        return value

    def int_list(self, name, value, lo=1):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = [value]
        if not isinstance(value, (list, tuple)) or not value:
            self.problems.append(f"{name}: expected a non-empty list of integers")
            return None
        out = [self.number(f"{name}[{k}]", v, lo=lo, integer=True) for k, v in enumerate(value)]
        return None if any(v is None for v in out) else tuple(out)

    def matrix(self, name, value):
        if value is None:
            return None
        try:
            rows = [[float(x) for x in row] for row in value]
        except (TypeError, ValueError):
            rows = None
        if rows is None or len(rows) != 2 or any(len(r) != 2 for r in rows) or not all(
                math.isfinite(x) for r in rows for x in r):
            self.problems.append(f"{name}: expected a finite 2x2 matrix")
            return None
        return tuple(tuple(r) for r in rows)


def _line_noise(chk, raw_mod_var, ch):
    """Resolve (T, excess noise, N1, N2) and cross-check them."""
    t = chk.number("channel.transmittance", ch["transmittance"], lo=0, hi=1, lo_open=True,
                   optional=True)
    xi = chk.number("channel.excess_noise", ch["excess_noise"], lo=0, optional=True)
    n1 = chk.number("channel.n1_variance", ch["n1_variance"], lo=0, optional=True)
    n2 = chk.number("channel.n2_variance", ch["n2_variance"], lo=0, optional=True)
    if ch["transmittance"] is None:
        if ch["excess_noise"] is not None:
            chk.problems.append("channel.excess_noise: given without channel.transmittance")
        return None, xi, n1 or 0.0, n2 or 0.0
    if t is None:
        return None, xi, n1 or 0.0, n2 or 0.0
    if xi is None and ch["excess_noise"] is None and raw_mod_var is not None:
        xi = excess_noise(raw_mod_var, t)
    if xi is None:
        return t, None, n1 or 0.0, n2 or 0.0
    if raw_mod_var is not None:
        implied = excess_noise(raw_mod_var, t)
        if abs(implied - xi) > 1e-9 * max(1.0, abs(xi)):
            chk.problems.append(
                f"conflict: channel.excess_noise = {xi} but (modulation.variance, "
                f"channel.transmittance) imply {implied}")
    line = noise_from_line_params(t, xi)
    for key, given in (("n1_variance", n1), ("n2_variance", n2)):
        if given is not None and abs(given - line) > 1e-9 * max(1.0, line):
            chk.problems.append(
                f"conflict: channel.{key} = {given} but (channel.transmittance, "
                f"channel.excess_noise) give {line}")
    return t, xi, line if n1 is None else n1, line if n2 is None else n2


def validate(raw: dict) -> ExperimentConfig:
    problems = []
    doc = _merge(SCHEMA, raw, "", problems)
    chk = _Checker()
    chk.problems = problems

    seed = chk.number("seed", doc["seed"], lo=0, hi=2**64, hi_open=True, integer=True)
    n_units = chk.number("n_units", doc["n_units"], lo=1, integer=True)
    mod_var = chk.number("modulation.variance", doc["modulation"]["variance"], lo=0, lo_open=True)
    ch = doc["channel"]
    t, xi, n1, n2 = _line_noise(chk, mod_var, ch)
    a1 = chk.matrix("channel.n1_scale_transform", ch["n1_scale_transform"])
    a2 = chk.matrix("channel.n2_scale_transform", ch["n2_scale_transform"])
    corr = chk.number("channel.correlation", ch["correlation"], optional=True)
    calib = chk.choice("channel.calibration", ch["calibration"], ("received", "prepared"))

    rc = doc["reconciliation"]
    d_list = chk.int_list("reconciliation.d", rc["d"])
    a = chk.number("reconciliation.a", rc["a"])
    b = chk.number("reconciliation.b", rc["b"])
    if a is not None and b is not None and a == b:
        chk.problems.append("reconciliation.a: must differ from reconciliation.b")
    mode = chk.choice("reconciliation.granulation", rc["granulation"], MODES)
    spread = chk.number("reconciliation.spread", rc["spread"], lo=0)
    method = chk.choice("reconciliation.method", rc["method"], METHODS)
    var_x = chk.number("reconciliation.var_x", rc["var_x"], lo=0, lo_open=True, optional=True)
    var_xp = chk.number("reconciliation.var_x_prime", rc["var_x_prime"], lo=0, lo_open=True,
                        optional=True)
    if d_list and n_units is not None:
        for d in d_list:
            if d > n_units:
                chk.problems.append(f"reconciliation.d: d = {d} exceeds n_units = {n_units}")

    sw = doc["sweep"]
    sweep_d = chk.int_list("sweep.d_list", sw["d_list"])
    reps = chk.number("sweep.replicates", sw["replicates"], lo=1, integer=True)
    sweep_blocks = chk.number("sweep.n_blocks", sw["n_blocks"], lo=2, integer=True)

    kr = doc["keyrate"]
    entropy = chk.choice("keyrate.entropy", kr["entropy"], ENTROPY_CONVENTIONS)
    loss = chk.number("keyrate.fiber_loss_db_per_km", kr["fiber_loss_db_per_km"], lo=0, lo_open=True)
    dists = kr["distances_km"]
    if isinstance(dists, (list, tuple)) and dists:
        dists = tuple(chk.number(f"keyrate.distances_km[{k}]", v, lo=0, lo_open=True)
                      for k, v in enumerate(dists))
    else:
        chk.problems.append("keyrate.distances_km: expected a non-empty list of distances > 0")
        dists = None
    if entropy == "BosonicG" and mod_var is not None and mod_var < 1:
        chk.problems.append("modulation.variance: BosonicG entropy needs variance >= 1")

    bins = doc["hist"]["bins"]
    if not (bins == "fd" or (isinstance(bins, int) and not isinstance(bins, bool) and bins >= 1)):
        chk.problems.append(f"hist.bins: expected 'fd' or a positive integer, got {bins!r}")
    out_dir = doc["output"]["dir"]
    if not isinstance(out_dir, str) or not out_dir:
        chk.problems.append("output.dir: expected a non-empty path string")
    jobs = chk.number("jobs", doc["jobs"], lo=1, integer=True)

    if chk.problems:
        raise ConfigError(chk.problems)
    return ExperimentConfig(
        seed=seed, n_units=n_units, modulation_variance=mod_var, transmittance=t,
        excess_noise=xi, n1_variance=n1, n2_variance=n2, n1_scale_transform=a1,
        n2_scale_transform=a2, correlation=corr, calibration=calib, d_list=d_list, a=a, b=b,
        granulation=mode, spread=spread, method=method, var_x=var_x, var_x_prime=var_xp,
        sweep_d_list=sweep_d, replicates=reps, sweep_blocks=sweep_blocks, entropy=entropy,
        fiber_loss_db_per_km=loss, distances_km=dists, hist_bins=bins, output_dir=out_dir,
        jobs=jobs,
    )


def load_document(text: str) -> dict:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}: " if mark is not None else ""
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError([f"{where}{problem}"], kind="parse") from exc
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(["document: expected a mapping at top level"], kind="parse")
    return raw


def parse_config(text: str, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Parse and validate a YAML document.

    ``overrides`` maps dotted keys (``"reconciliation.d"``) to values that
    replace whatever the document says.
    """
    raw = load_document(text)
    for dotted, value in (overrides or {}).items():
        node = raw
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError([f"{dotted}: cannot override inside a non-mapping"])
        node[leaf] = value
    return validate(raw)
