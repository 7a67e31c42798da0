"""Experiment configuration: TOML parsing, defaults and validation.

A config file has a top-level ``seed`` and the tables ``[system]``,
``[expert]``, ``[learner]``, ``[model_based]``, ``[sim]``,
``[exploration]`` and ``[output]``.  Every field except the system
matrices has a default; see ``configs/paper_sec5.toml`` for a complete
example.  Validation happens before any computation and every error names
the offending field, e.g. ``learner.Q0: not positive definite``.
"""

import copy
import sys as _sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

if _sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .irl_model_based import STOP_MODES
from .irl_model_free import Q_MODES
from .lq_core import CostWeights, SystemDynamics
from .sde_sim import ExplorationNoise, SimConfig

__all__ = ["ExperimentConfig", "DEFAULTS", "load_toml", "load_config", "parse_config"]

DEFAULTS = {
    "seed": 0,
    "expert": {"samples": None},
    "learner": {
        "R": None,
        "Q0": None,
        "eps1": 1e-3,
        "max_iter": 2000,
        "stop_mode": "either",
        "gain_tol": 0.01,
        "q_mode": "projected",
    },
    "model_based": {
        "enabled": True,
        "eps1": 1e-6,
        "max_iter": 10000,
        "stop_mode": "q",
        "gain_tol": 0.01,
    },
    "sim": {
        "step_h": 1e-4,
        "window_dt": 0.02,
        "windows_l": 50,
        "paths_M": 400,
        "antithetic": True,
        "x0": None,
        "K0": None,
    },
    "exploration": {
        "amplitude": 2.0,
        "count": 10,
        "low": -500.0,
        "high": 500.0,
        "frequencies": None,
    },
    "output": {
        "directory": "out",
        "plot": False,
        "dump_every": 100,
    },
}

_REQUIRED = {
    "system": ("A", "B", "C", "D"),
    "expert": ("Q_T", "R_T", "K_init"),
    "learner": ("R", "Q0"),
    "sim": ("x0", "K0"),
}


def load_toml(path):
    with open(path, "rb") as fh:
        return tomllib.load(fh)


@dataclass
class ExperimentConfig:
    """Validated experiment description; ``raw`` is the fully resolved dict."""

    system: SystemDynamics
    target: CostWeights
    K_init: np.ndarray
    R: np.ndarray
    Q0: np.ndarray
    K0: np.ndarray
    sim: SimConfig
    noise: Optional[ExplorationNoise]
    raw: dict

    @property
    def seed(self):
        return self.raw["seed"]

    @property
    def learner(self):
        return self.raw["learner"]

    @property
    def model_based(self):
        return self.raw["model_based"]

    @property
    def output(self):
        return self.raw["output"]

    @property
    def expert_samples(self):
        return self.raw["expert"]["samples"]


def _merge(given):
    """Overlay a user dict on :data:`DEFAULTS`, rejecting unknown keys."""
    raw = copy.deepcopy(DEFAULTS)
    raw["system"] = {}
    for table, val in given.items():
        if table == "seed":
            raw["seed"] = val
            continue
        if table not in raw:
            raise ConfigError("unknown key", table)
        if not isinstance(val, dict):
            raise ConfigError("expected a table", table)
        allowed = set(raw[table]) | set(_REQUIRED.get(table, ()))
        for key, item in val.items():
            if key not in allowed:
                raise ConfigError("unknown key", f"{table}.{key}")
            raw[table][key] = item
    return raw


def _matrix(val, where, shape=None):
    try:
        arr = np.array(val, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError("not a numeric array", where) from None
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1) if shape is None or shape[0] == 1 else arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.size == 0:
        raise ConfigError(f"expected a matrix, got shape {arr.shape}", where)
    if not np.all(np.isfinite(arr)):
        raise ConfigError("non-finite entries", where)
    if shape is not None and arr.shape != tuple(shape):
        raise ConfigError(f"expected shape {tuple(shape)}, got {arr.shape}", where)
    return arr


def _spd(val, where, n):
    M = _matrix(val, where, (n, n))
    if not np.allclose(M, M.T, rtol=1e-12, atol=1e-12):
        raise ConfigError("not symmetric", where)
    lam = np.linalg.eigvalsh(M).min()
    if not lam > 0.0:
        raise ConfigError(f"not positive definite (min eigenvalue {lam:.3g})", where)
    return M


def _number(val, where, positive=False, integer=False, nonneg=False):
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"expected a number, got {val!r}", where)
    if integer and (not isinstance(val, int)):
        raise ConfigError(f"expected an integer, got {val!r}", where)
    if positive and not val > 0:
        raise ConfigError("must be positive", where)
    if nonneg and not val >= 0:
        raise ConfigError("must be non-negative", where)
    if not np.isfinite(val):
        raise ConfigError("must be finite", where)
    return val


def _choice(val, where, options):
    if val not in options:
        raise ConfigError(f"must be one of {list(options)}, got {val!r}", where)
    return val


def parse_config(data, seed=None, out=None):
    """Validate a config dict (as loaded from TOML) into an :class:`ExperimentConfig`.

    ``seed`` and ``out`` override the file's ``seed`` and
    ``output.directory``.
    """
    if not isinstance(data, dict):
        raise ConfigError("config must be a table", "file")
    for table, keys in _REQUIRED.items():
        got = data.get(table)
        if not isinstance(got, dict):
            raise ConfigError("missing table", table)
        for key in keys:
            if key not in got:
                raise ConfigError("missing required field", f"{table}.{key}")
    raw = _merge(data)
    if seed is not None:
        raw["seed"] = seed
    if out is not None:
        raw["output"]["directory"] = str(out)
    _number(raw["seed"], "seed", integer=True, nonneg=True)

    sysd = raw["system"]
    A = _matrix(sysd["A"], "system.A")
    n = A.shape[0]
    if A.shape != (n, n):
        raise ConfigError(f"must be square, got {A.shape}", "system.A")
    B = _matrix(sysd["B"], "system.B", None)
    if B.shape[0] != n and B.shape == (1, n):
        B = B.T
    if B.shape[0] != n:
        raise ConfigError(f"must have {n} rows, got shape {B.shape}", "system.B")
    m = B.shape[1]
    C = _matrix(sysd["C"], "system.C", (n, n))
    D = _matrix(sysd["D"], "system.D", None)
    if D.shape == (1, n) and m == 1:
        D = D.T
    if D.shape != (n, m):
        raise ConfigError(f"expected shape {(n, m)}, got {D.shape}", "system.D")
    system = SystemDynamics(A, B, C, D)

    ex = raw["expert"]
    target = CostWeights(_spd(ex["Q_T"], "expert.Q_T", n), _spd(ex["R_T"], "expert.R_T", m))
    K_init = _matrix(ex["K_init"], "expert.K_init", (m, n))
    if ex["samples"] is not None:
        _number(ex["samples"], "expert.samples", positive=True, integer=True)

    le = raw["learner"]
    R = _spd(le["R"], "learner.R", m)
    Q0 = _spd(le["Q0"], "learner.Q0", n)
    _number(le["eps1"], "learner.eps1", positive=True)
    _number(le["max_iter"], "learner.max_iter", positive=True, integer=True)
    _number(le["gain_tol"], "learner.gain_tol", positive=True)
    _choice(le["stop_mode"], "learner.stop_mode", STOP_MODES)
    _choice(le["q_mode"], "learner.q_mode", Q_MODES)

    mb = raw["model_based"]
    if not isinstance(mb["enabled"], bool):
        raise ConfigError("expected true or false", "model_based.enabled")
    _number(mb["eps1"], "model_based.eps1", positive=True)
    _number(mb["max_iter"], "model_based.max_iter", positive=True, integer=True)
    _number(mb["gain_tol"], "model_based.gain_tol", positive=True)
    _choice(mb["stop_mode"], "model_based.stop_mode", STOP_MODES)

    si = raw["sim"]
    for key in ("step_h", "window_dt"):
        _number(si[key], f"sim.{key}", positive=True)
    for key in ("windows_l", "paths_M"):
        _number(si[key], f"sim.{key}", positive=True, integer=True)
    if not isinstance(si["antithetic"], bool):
        raise ConfigError("expected true or false", "sim.antithetic")
    x0 = np.array(_matrix(si["x0"], "sim.x0")).ravel()
    if x0.size != n:
        raise ConfigError(f"expected {n} entries, got {x0.size}", "sim.x0")
    K0 = _matrix(si["K0"], "sim.K0", (m, n))
    try:
        sim = SimConfig(
            x0=tuple(x0),
            step_h=float(si["step_h"]),
            window_dt=float(si["window_dt"]),
            windows_l=si["windows_l"],
            paths_M=si["paths_M"],
            seed=raw["seed"],
            antithetic=si["antithetic"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc), "sim.window_dt") from None

    eo = raw["exploration"]
    amp = _number(eo["amplitude"], "exploration.amplitude", nonneg=True)
    if eo["frequencies"] is not None:
        freqs = _matrix(eo["frequencies"], "exploration.frequencies")
        if freqs.shape[0] != m:
            raise ConfigError(f"expected {m} rows (one per input)", "exploration.frequencies")
        noise = ExplorationNoise(amp, freqs)
    else:
        _number(eo["count"], "exploration.count", positive=True, integer=True)
        _number(eo["low"], "exploration.low")
        _number(eo["high"], "exploration.high")
        if not eo["high"] >= eo["low"]:
            raise ConfigError("must be at least exploration.low", "exploration.high")
        noise = ExplorationNoise.random(m, eo["count"], amp, eo["low"], eo["high"], raw["seed"])
        raw["exploration"]["frequencies"] = noise.frequencies.tolist()

    ou = raw["output"]
    if not isinstance(ou["directory"], str) or not ou["directory"]:
        raise ConfigError("expected a non-empty path", "output.directory")
    if not isinstance(ou["plot"], bool):
        raise ConfigError("expected true or false", "output.plot")
    _number(ou["dump_every"], "output.dump_every", positive=True, integer=True)

    return ExperimentConfig(system, target, K_init, R, Q0, K0, sim, noise, raw)


def load_config(path, seed=None, out=None):
    try:
        data = load_toml(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", "file") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}", "file") from None
    return parse_config(data, seed=seed, out=out)
