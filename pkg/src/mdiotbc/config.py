"""Run configuration: TOML with a versioned schema, strictly validated
(unknown keys are rejected before anything runs)."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .channel import SourceModel
from .decoy import ChernoffEps
from .params import SecurityParams

SCHEMA_VERSION = 1

PROTOCOLS = ("bc-perfect", "bc-decoy", "ot", "attack-ot", "decoy-estimate", "params")

_TOP_KEYS = {"schema", "protocol", "trials", "master_seed", "output_dir",
             "emit_traces", "jobs", "params", "run", "grid", "source_a", "source_b"}
_PARAM_KEYS = {"epsilon", "l", "D", "e_err", "gamma", "mu", "p_fail", "delta_t",
               "n_max", "c_ec", "lambda_smoothing"}
_RUN_KEYS = {"n", "total_rounds", "code_dim", "syndrome_bits", "ec_dim", "eps_var",
             "eps_hat", "eps1", "mode", "max_rounds", "attack_l"}
_GRID_KEYS = {"epsilon", "l", "D", "e_err", "gamma"}
_SOURCE_KEYS = {"kind", "signal", "intensities", "probs"}


class ConfigError(ValueError):
    """Invalid configuration; the message lists every offending key."""


@dataclass(frozen=True)
class RunOptions:
    n: Optional[int] = None
    total_rounds: Optional[int] = None
    code_dim: Optional[int] = None
    syndrome_bits: Optional[int] = None
    ec_dim: Optional[int] = None
    eps_var: float = 0.01
    eps_hat: float = 0.01
    eps1: float = 0.01
    mode: str = "bc-perfect"
    max_rounds: Optional[int] = None
    attack_l: int = 8


@dataclass(frozen=True)
class RunConfig:
    protocol: str
    params: SecurityParams
    trials: int = 1
    master_seed: int = 0
    output_dir: str = "runs/out"
    emit_traces: bool = False
    jobs: int = 1
    run: RunOptions = field(default_factory=RunOptions)
    grid: Optional[dict] = None
    source_a: Optional[SourceModel] = None
    source_b: Optional[SourceModel] = None

    def decoy_eps(self) -> ChernoffEps:
        return ChernoffEps(epsilon=self.params.epsilon, eps_var=self.run.eps_var,
                           eps_hat=self.run.eps_hat, eps1=self.run.eps1)


def _reject_unknown(table: dict, allowed: set, where: str, problems: list[str]) -> None:
    for key in table:
        if key not in allowed:
            problems.append(f"unknown key {key!r} in {where}")


def _parse_source(table: dict, where: str, problems: list[str]) -> Optional[SourceModel]:
    _reject_unknown(table, _SOURCE_KEYS, where, problems)
    kind = table.get("kind")
    if kind == "perfect":
        return SourceModel.perfect()
    if kind == "coherent":
        try:
            return SourceModel.coherent(table.get("intensities", {}), table.get("probs", {}),
                                        signal_label=table.get("signal", "s"))
        except ValueError as bad:
            problems.append(f"{where}: {bad}")
            return None
    problems.append(f"{where}: kind must be 'perfect' or 'coherent', got {kind!r}")
    return None


def parse_config(raw: dict, protocol_override: Optional[str] = None) -> RunConfig:
    problems: list[str] = []
    _reject_unknown(raw, _TOP_KEYS, "top level", problems)
    if raw.get("schema") != SCHEMA_VERSION:
        problems.append(f"schema must be {SCHEMA_VERSION}, got {raw.get('schema')!r}")
    protocol = protocol_override or raw.get("protocol")
    if protocol not in PROTOCOLS:
        problems.append(f"protocol must be one of {PROTOCOLS}, got {protocol!r}")

    params_table = raw.get("params", {})
    _reject_unknown(params_table, _PARAM_KEYS, "[params]", problems)
    params = None
    if not problems or all("params" not in p for p in problems):
        try:
            params = SecurityParams(**params_table)
        except (TypeError, ValueError) as bad:
            problems.append(f"[params]: {bad}")

    run_table = raw.get("run", {})
    _reject_unknown(run_table, _RUN_KEYS, "[run]", problems)
    run = None
    try:
        run = RunOptions(**{k: v for k, v in run_table.items() if k in _RUN_KEYS})
    except TypeError as bad:
        problems.append(f"[run]: {bad}")
    if run is not None and run.mode not in ("bc-perfect", "ot", "bc-decoy"):
        problems.append(f"[run].mode must be a solver mode, got {run.mode!r}")

    grid = raw.get("grid")
    if grid is not None:
        _reject_unknown(grid, _GRID_KEYS, "[grid]", problems)
        for key, value in grid.items():
            if not isinstance(value, list) or not value:
                problems.append(f"[grid].{key} must be a non-empty list")

    source_a = _parse_source(raw["source_a"], "[source_a]", problems) if "source_a" in raw else None
    source_b = _parse_source(raw["source_b"], "[source_b]", problems) if "source_b" in raw else None

    trials = raw.get("trials", 1)
    if not isinstance(trials, int) or trials < 1:
        problems.append(f"trials must be a positive integer, got {trials!r}")
    seed = raw.get("master_seed", 0)
    if not isinstance(seed, int):
        problems.append(f"master_seed must be an integer, got {seed!r}")
    jobs = raw.get("jobs", 1)
    if not isinstance(jobs, int) or jobs < 1:
        problems.append(f"jobs must be a positive integer, got {jobs!r}")

    if problems:
        raise ConfigError("; ".join(problems))
    return RunConfig(protocol=protocol, params=params, trials=trials, master_seed=seed,
                     output_dir=raw.get("output_dir", "runs/out"),
                     emit_traces=bool(raw.get("emit_traces", False)), jobs=jobs,
                     run=run, grid=grid, source_a=source_a, source_b=source_b)


def load_config(path: str | Path, protocol_override: Optional[str] = None) -> RunConfig:
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    return parse_config(raw, protocol_override)
