"""Experiment configuration: INI file with ``[model]``, ``[grid]`` and ``[experiment]`` sections."""

import configparser
from dataclasses import dataclass, field as dc_field
import hashlib
import json
import math

from .fields import EnsembleModel, GridSpec, check_moment_condition

EXPERIMENTS = ("gen", "corrector", "radii", "tails", "twoscale", "sgcheck", "verify")

_INT_PARAMS = {"block_side", "period"}
_BOOL_PARAMS = {"random_phase"}
_MODEL_META = {"kind", "p", "q", "kappa", "alpha"}


class ConfigError(ValueError):
    """Configuration failed validation."""


def _bool(v):
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _floats(v):
    out = []
    for part in str(v).replace(";", ",").split(","):
        part = part.strip()
        if not part:
            continue
        if "/" in part:
            a, b = part.split("/")
            out.append(float(a) / float(b))
        else:
            out.append(float(part))
    return out


@dataclass
class ExperimentConfig:
    model: EnsembleModel
    grid: GridSpec
    experiment: str = "corrector"
    N: int = 1
    C0: float = 16.0
    M0: float = 8.0
    tol: float = 1e-9
    seed: int = 0
    out: str = "out"
    deterministic: bool = False
    threads: int = 0
    beta: float = 0.0
    K: str = "empirical"
    deltas: tuple = (1 / 8, 1 / 16, 1 / 32)
    cells_per_period: int = 4
    macro_length: float = 4.0
    R: float = 1.8
    functionals: tuple = ("a11_origin", "mu_p_avg", "lambda_q_avg")
    raw: dict = dc_field(default_factory=dict)

    def echo(self):
        """Plain-dict echo of every parsed value (for manifests)."""
        return {
            "model": {"kind": self.model.kind, "params": _jsonable(self.model.params), "p": self.model.p,
                      "q": self.model.q, "kappa": self.model.kappa, "alpha": self.model.alpha},
            "grid": {"d": self.grid.d, "L": self.grid.L, "h": self.grid.h},
            "experiment": {
                "kind": self.experiment, "N": self.N, "C0": self.C0, "M0": self.M0, "tol": self.tol,
                "seed": self.seed, "out": self.out, "deterministic": self.deterministic, "threads": self.threads,
                "beta": self.beta, "K": self.K, "deltas": list(self.deltas), "cells_per_period": self.cells_per_period,
                "macro_length": self.macro_length, "R": self.R, "functionals": list(self.functionals),
            },
        }

    def hash(self):
        """Short digest of the numerically relevant settings (output dir and thread count excluded)."""
        e = self.echo()
        e["experiment"] = {k: v for k, v in e["experiment"].items() if k not in ("out", "threads")}
        blob = json.dumps(e, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (tuple, list)):
        return [_jsonable(x) for x in v]
    return v


def _model_from(sec):
    kind = sec.get("kind", "ConstantIdentity").strip()
    params = {}
    for key, val in sec.items():
        if key in _MODEL_META:
            continue
        if key in _INT_PARAMS:
            params[key] = int(val)
        elif key in _BOOL_PARAMS:
            params[key] = _bool(val)
        elif key == "values":
            params[key] = tuple(_floats(val))
        else:
            params[key] = float(val)
    return EnsembleModel(
        kind,
        params,
        p=float(sec.get("p", 4.0)),
        q=float(sec.get("q", 4.0)),
        kappa=float(sec.get("kappa", 1.0)),
        alpha=float(sec.get("alpha", 1.0)),
    )


def parse_config(text, experiment=None, overrides=None):
    """Parse and validate config text; ``overrides`` replaces ``[experiment]`` keys."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from exc
    raw = {s: dict(cp[s]) for s in cp.sections()}
    exp = dict(raw.get("experiment", {}))
    for k, v in (overrides or {}).items():
        if v is not None:
            exp[k] = v
    if experiment is not None:
        exp["kind"] = experiment
    try:
        model = _model_from(raw.get("model", {}))
        g = raw.get("grid", {})
        grid = GridSpec(int(g.get("d", 2)), int(g.get("L", 8)), float(g.get("h", 1.0)))
        cfg = ExperimentConfig(
            model=model,
            grid=grid,
            experiment=str(exp.get("kind", "corrector")),
            N=int(exp.get("N", 1)),
            C0=float(exp.get("C0", 16.0)),
            M0=float(exp.get("M0", 8.0)),
            tol=float(exp.get("tol", 1e-9)),
            seed=int(exp.get("seed", 0)) & ((1 << 64) - 1),
            out=str(exp.get("out", "out")),
            deterministic=_bool(exp.get("deterministic", False)),
            threads=int(exp.get("threads", 0)),
            beta=float(exp.get("beta", 0.0)),
            K=str(exp.get("K", "empirical")),
            deltas=tuple(_floats(exp.get("deltas", "1/8,1/16,1/32"))),
            cells_per_period=int(exp.get("cells_per_period", 4)),
            macro_length=float(exp.get("macro_length", 4.0)),
            R=float(exp.get("R", 1.8)),
            functionals=tuple(s.strip() for s in str(exp.get("functionals", "a11_origin,mu_p_avg,lambda_q_avg")).split(",") if s.strip()),
            raw=raw,
        )
    except ConfigError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    validate(cfg)
    return cfg


def validate(cfg):
    m, g = cfg.model, cfg.grid
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}; choose from {EXPERIMENTS}")
    if not check_moment_condition(m.p, m.q, g.d, strict=True):
        raise ConfigError(f"moment condition 1/p + 1/q < 2/d fails for p={m.p}, q={m.q}, d={g.d}")
    if not 0 <= cfg.beta < 1:
        raise ConfigError(f"beta must lie in [0, 1), got {cfg.beta}")
    if not (cfg.tol > 0 and math.isfinite(cfg.tol)):
        raise ConfigError("tolerances must be positive")
    if cfg.N < 1:
        raise ConfigError("N must be at least 1")
    if not (cfg.C0 > 0 and cfg.M0 >= 1):
        raise ConfigError("need C0 > 0 and M0 >= 1")
    if cfg.K != "empirical":
        try:
            if not float(cfg.K) > 0:
                raise ValueError
        except ValueError:
            raise ConfigError(f"K must be 'empirical' or a positive number, got {cfg.K!r}") from None
    if any(not 0 < x < 1 for x in cfg.deltas):
        raise ConfigError("deltas must lie in (0, 1)")
    return cfg


def load_config(path, experiment=None, overrides=None):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, experiment, overrides)
