"""Experiment configuration: TOML or JSON files plus CLI overrides.

Schema (TOML shown; JSON mirrors the nesting)::

    [params]
    d = 1
    sigma = 1.0
    mu = 1.0
    lambda = 1.0
    p = 0.75
    # regime = "small" | "critical" | "large"   (optional pin)

    x0 = [0.0]

    [[test_functions]]
    poly = [[1.0, [1]]]          # sum of coeff * x^powers terms
    # or: hermite = [[1.0, [1]]] # coeff * h_alpha in the orthonormal basis

    [experiment]
    snapshot_times = [4.0, 8.0]
    terminal_time = 18.0
    replicas = 10000
    seed = 1
    significance = 0.01
    workers = 0
    relax_terminal_gap = false

    [limits]
    max_particles = 2000000

Precedence: CLI flag > config file > built-in default.
"""

from __future__ import annotations

import json
import sys

from .engine import Limits
from .errors import ConfigError
from .harness import ExperimentConfig
from .params import ModelParams, Regime
from .spectral import SpectralFunction

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def load_raw(path: str) -> dict:
    try:
        if str(path).endswith(".json"):
            with open(path, "r") as fh:
                return json.load(fh)
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}")


def _require(raw: dict, key: str, where: str):
    if key not in raw:
        raise ConfigError(f"missing key '{key}' in {where}")
    return raw[key]


def params_from_raw(raw: dict) -> ModelParams:
    section = _require(raw, "params", "config")
    kwargs = {
        "d": int(section.get("d", 1)),
        "sigma": float(_require(section, "sigma", "[params]")),
        "mu": float(_require(section, "mu", "[params]")),
        "lam": float(_require(section, "lambda", "[params]")),
        "p": float(_require(section, "p", "[params]")),
    }
    if "regime" in section:
        try:
            kwargs["pinned_regime"] = Regime(section["regime"])
        except ValueError:
            raise ConfigError(f"unknown regime {section['regime']!r} in [params]")
    return ModelParams(**kwargs)


def functions_from_raw(raw: dict, params: ModelParams) -> list:
    entries = raw.get("test_functions", [])
    functions = []
    for i, entry in enumerate(entries):
        where = f"[[test_functions]] entry {i}"
        if "poly" in entry:
            functions.append(SpectralFunction.from_poly(entry["poly"], params.d))
        elif "hermite" in entry:
            functions.append(SpectralFunction.from_hermite(entry["hermite"], params))
        else:
            raise ConfigError(f"{where} must declare 'poly' or 'hermite'")
    return functions


def experiment_from_raw(raw: dict, seed: int | None = None,
                        replicas: int | None = None,
                        workers: int | None = None) -> ExperimentConfig:
    params = params_from_raw(raw)
    functions = functions_from_raw(raw, params)
    exp = _require(raw, "experiment", "config")
    limits_raw = raw.get("limits", {})
    limits = Limits(
        max_particles=int(limits_raw.get("max_particles", Limits().max_particles)),
        max_total=limits_raw.get("max_total"),
    )
    try:
        return ExperimentConfig(
            params=params,
            x0=tuple(raw.get("x0", [0.0] * params.d)),
            test_functions=tuple(functions),
            snapshot_times=tuple(_require(exp, "snapshot_times", "[experiment]")),
            terminal_time=float(_require(exp, "terminal_time", "[experiment]")),
            replicas=int(replicas if replicas is not None
                         else _require(exp, "replicas", "[experiment]")),
            seed=int(seed if seed is not None else _require(exp, "seed", "[experiment]")),
            significance=float(exp.get("significance", 0.01)),
            limits=limits,
            workers=int(workers if workers is not None else exp.get("workers", 0)),
            relax_terminal_gap=bool(exp.get("relax_terminal_gap", False)),
            variance_tolerance=exp.get("variance_tolerance"),
            correlation_bound=exp.get("correlation_bound"),
            analysis_time=exp.get("analysis_time"),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid experiment configuration: {exc}")


def load_experiment(path: str, seed: int | None = None, replicas: int | None = None,
                    workers: int | None = None) -> ExperimentConfig:
    return experiment_from_raw(load_raw(path), seed=seed, replicas=replicas,
                               workers=workers)
