"""Experiment orchestration: per-trial drivers, deterministic aggregation,
and machine-readable reports (result.json, summary.csv, trace.jsonl).

Every trial's randomness is derived from (master_seed, protocol, trial
index), so trials can run in any order or in parallel and still aggregate
to byte-identical reports.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .adversary import attack_trial, wilson_interval
from .bc import honest_bc_run
from .bounds import solve_rounds
from .channel import FixedN, run_preparation
from .config import RunConfig
from .decoy import intensity_given_count, single_photon_lower_bound, tally
from .errors import ValidityViolation
from .ot import OtSession
from .params import Infeasible, Protocol
from .rng import derive_rng
from .trace import TraceRecorder


class InfeasibleParameters(Exception):
    """The configured parameters admit no feasible round plan."""


@dataclass
class ExperimentReport:
    result: dict
    rows: list[dict]
    fieldnames: list[str]
    trace_lines: list[dict]

    def summary_csv(self) -> str:
        out = io.StringIO()
        writer = csv.DictWriter(out, fieldnames=self.fieldnames, lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.rows)
        return out.getvalue()


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def _solver_clicks(config: RunConfig, mode: Protocol) -> int | tuple[int, int]:
    p_as = config.source_a.probs[config.source_a.signal_index] if config.source_a else 1.0
    p_bs = config.source_b.probs[config.source_b.signal_index] if config.source_b else 1.0
    plan = solve_rounds(mode, config.params, p_as=p_as, p_bs=p_bs)
    if isinstance(plan, Infeasible):
        raise InfeasibleParameters(f"{plan.what}: {plan.detail}")
    return (plan.n, plan.N) if mode is Protocol.BC_DECOY else plan.n


# ---------------------------------------------------------------------------
# Per-trial drivers (module level so a process pool can pickle them)
# ---------------------------------------------------------------------------

def _bc_perfect_trial(config: RunConfig, trial: int, clicks: int) -> tuple[dict, list[dict]]:
    trace = TraceRecorder(trial=trial) if config.emit_traces else None
    rng = derive_rng(config.master_seed, "bc-perfect", trial)
    rec = honest_bc_run(config.params, rng, clicks=clicks, code_dim=config.run.code_dim,
                        syndrome_bits=config.run.syndrome_bits,
                        trace=trace, max_rounds=config.run.max_rounds)
    row = {"trial": trial, "accepted": int(rec["accepted"]), "reason": rec["reason"],
           "c_matches": int(rec["c_matches"]), "n": rec["n"]}
    return row, (trace.lines if trace else [])


def _bc_decoy_trial(config: RunConfig, trial: int, clicks: Optional[int], total_rounds: int) -> tuple[dict, list[dict]]:
    trace = TraceRecorder(trial=trial) if config.emit_traces else None
    rng = derive_rng(config.master_seed, "bc-decoy", trial)
    rec = honest_bc_run(config.params, rng, variant="decoy",
                        source_a=config.source_a, source_b=config.source_b,
                        clicks=clicks, total_rounds=total_rounds,
                        code_dim=config.run.code_dim, syndrome_bits=config.run.syndrome_bits,
                        decoy_eps=config.decoy_eps(), trace=trace, max_rounds=config.run.max_rounds)
    session = rec["session"]
    row = {"trial": trial, "accepted": int(rec["accepted"]), "reason": rec["reason"],
           "c_matches": int(rec["c_matches"]), "n": rec["n"],
           "alice_abort": ";".join(session.alice_abort), "bob_abort": ";".join(session.bob_abort)}
    return row, (trace.lines if trace else [])


def _ot_trial(config: RunConfig, trial: int, n: int) -> tuple[dict, list[dict]]:
    trace = TraceRecorder(trial=trial) if config.emit_traces else None
    rng = derive_rng(config.master_seed, "ot", trial)
    session = OtSession(config.params, rng, n=n, ec_dim=config.run.ec_dim,
                        trace=trace, max_rounds=config.run.max_rounds)
    res = session.run()
    row = {"trial": trial, "aborted": int(res.aborted), "c": res.c,
           "received_matches": int((not res.aborted) and res.received_matches())}
    return row, (trace.lines if trace else [])


def _attack_trial(config: RunConfig, trial: int, n: int) -> tuple[dict, list[dict]]:
    rng = derive_rng(config.master_seed, "attack-ot", trial)
    rec = attack_trial(config.params, rng, n=n, l=config.run.attack_l)
    row = {"trial": trial, "C": rec["C"], "b": rec["b"], "kappa": rec["kappa"],
           "alpha": f"{rec['alpha']:.9g}", "omega": int(rec["omega"]),
           "correct": int(rec["correct"]), "aborted": int(rec["aborted"])}
    return row, []


def _decoy_estimate_trial(config: RunConfig, trial: int, total_rounds: int) -> tuple[dict, list[dict]]:
    rng = derive_rng(config.master_seed, "decoy-estimate", trial)
    params = config.params
    src_a, src_b = config.source_a, config.source_b
    transcript = run_preparation(src_a, src_b, FixedN(total_rounds),
                                 params.e_err, params.p_fail, rng)
    obs = tally(transcript.alice_view())
    cond = intensity_given_count(src_a.prob_map(), src_a.intensity_map())
    true_n1 = transcript.true_single_photon_signal("a", src_a.signal_index)
    try:
        res = single_photon_lower_bound(obs, cond, config.decoy_eps(), signal_label=src_a.signal_label)
        row = {"trial": trial, "l1": f"{res.l1:.9g}", "true_n1": true_n1,
               "sound": int(res.l1 <= true_n1), "valid": 1, "violation": ""}
    except ValidityViolation as bad:
        row = {"trial": trial, "l1": "", "true_n1": true_n1, "sound": 1, "valid": 0,
               "violation": bad.condition}
    row["_counts"] = obs.counts.reshape(-1).tolist()
    row["_labels"] = list(obs.labels)
    return row, []


_TRIAL_DRIVERS = {
    "bc-perfect": _bc_perfect_trial,
    "bc-decoy": _bc_decoy_trial,
    "ot": _ot_trial,
    "attack-ot": _attack_trial,
    "decoy-estimate": _decoy_estimate_trial,
}


def _run_indices(args) -> list[tuple[dict, list[dict]]]:
    config, extra, indices = args
    driver = _TRIAL_DRIVERS[config.protocol]
    return [driver(config, i, *extra) for i in indices]


def _run_trials(config: RunConfig, extra: tuple) -> tuple[list[dict], list[dict]]:
    indices = list(range(config.trials))
    if config.jobs <= 1 or config.trials < 4:
        outputs = _run_indices((config, extra, indices))
    else:
        jobs = min(config.jobs, config.trials)
        chunks = [indices[i::jobs] for i in range(jobs)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_run_indices, [(config, extra, chunk) for chunk in chunks]))
        outputs = [item for part in parts for item in part]
    outputs.sort(key=lambda pair: pair[0]["trial"])
    rows = [row for row, _ in outputs]
    traces = [line for _, lines in outputs for line in lines]
    return rows, traces


# ---------------------------------------------------------------------------
# Aggregation per protocol
# ---------------------------------------------------------------------------

def _aggregate(config: RunConfig, rows: list[dict], n: Optional[int], N: Optional[int]) -> dict:
    trials = len(rows)
    stats: dict = {}
    aborted = accept = None
    if config.protocol in ("bc-perfect", "bc-decoy"):
        accept = sum(r["accepted"] for r in rows) / trials
        aborted = sum(1 for r in rows if r["reason"]) / trials
        stats["c_match_fraction"] = sum(r["c_matches"] for r in rows) / trials
    elif config.protocol == "ot":
        aborted = sum(r["aborted"] for r in rows) / trials
        accept = sum(r["received_matches"] for r in rows) / trials
        stats["failure_fraction"] = 1.0 - accept
    elif config.protocol == "attack-ot":
        correct = sum(r["correct"] for r in rows)
        omega = sum(r["omega"] for r in rows)
        cond = sum(r["correct"] for r in rows if r["omega"])
        alphas = [float(r["alpha"]) for r in rows if r["omega"]]
        aborted = sum(r["aborted"] for r in rows) / trials
        accept = None
        stats = {
            "p_guess": correct / trials, "p_guess_ci": list(wilson_interval(correct, trials)),
            "p_omega": omega / trials, "p_omega_ci": list(wilson_interval(omega, trials)),
            "alpha_mean": float(np.mean(alphas)) if alphas else 0.0,
            "conditional_guess": cond / omega if omega else 0.5,
            "conditional_guess_ci": list(wilson_interval(cond, omega)),
        }
    elif config.protocol == "decoy-estimate":
        valid = [r for r in rows if r["valid"]]
        aborted = (trials - len(valid)) / trials
        accept = None
        stats = {
            "valid_fraction": len(valid) / trials,
            "sound_fraction": (sum(r["sound"] for r in valid) / len(valid)) if valid else None,
            "estimator_failure_budget": config.decoy_eps().failure_probability,
        }
        if rows and "_counts" in rows[0]:
            from .decoy import DecoyObservation
            labels = tuple(rows[0]["_labels"])
            summed = np.sum([np.asarray(r.pop("_counts")).reshape(2, 2, len(labels))
                             for r in rows], axis=0)
            for r in rows:
                r.pop("_labels", None)
            stats["observations_csv"] = DecoyObservation(labels=labels, counts=summed).to_csv()
    params = config.params
    return {
        "protocol": config.protocol,
        "params": {"epsilon": params.epsilon, "l": params.l, "D": params.D,
                   "e_err": params.e_err, "gamma": params.gamma, "mu": params.mu,
                   "p_fail": params.p_fail, "delta_t": params.delta_t, "c_ec": params.c_ec},
        "n": n, "N": N,
        "trials": trials,
        "aborted_fraction": aborted,
        "accept_fraction": accept,
        "stats": stats,
        "seed": config.master_seed,
        "version": __version__,
    }


def _param_table(config: RunConfig) -> ExperimentReport:
    params = config.params
    grid = config.grid or {}
    axes = {
        "epsilon": grid.get("epsilon", [params.epsilon]),
        "l": grid.get("l", [params.l]),
        "D": grid.get("D", [params.D]),
        "e_err": grid.get("e_err", [params.e_err]),
        "gamma": grid.get("gamma", [params.gamma]),
    }
    mode = Protocol(config.run.mode)
    p_as = config.source_a.probs[config.source_a.signal_index] if config.source_a else 1.0
    p_bs = config.source_b.probs[config.source_b.signal_index] if config.source_b else 1.0
    rows = []
    feasible_any = False
    for eps in axes["epsilon"]:
        for l in axes["l"]:
            for D in axes["D"]:
                for e_err in axes["e_err"]:
                    for gamma in axes["gamma"]:
                        point = params.replace(epsilon=eps, l=l, D=D, e_err=e_err, gamma=gamma)
                        plan = solve_rounds(mode, point, p_as=p_as, p_bs=p_bs)
                        row = {"epsilon": eps, "l": l, "D": D, "e_err": e_err, "gamma": gamma,
                               "mode": mode.value}
                        if isinstance(plan, Infeasible):
                            row.update({"feasible": 0, "lambda": "", "delta": "", "n": "", "N": "",
                                        "diagnostic": plan.detail})
                        else:
                            feasible_any = True
                            row.update({"feasible": 1, "lambda": f"{plan.rate:.9g}",
                                        "delta": f"{plan.delta:.9g}", "n": plan.n,
                                        "N": plan.N if plan.N is not None else "", "diagnostic": ""})
                        rows.append(row)
    single_point = all(len(v) == 1 for v in axes.values()) and not config.grid
    if single_point and not feasible_any:
        raise InfeasibleParameters(rows[0]["diagnostic"])
    fieldnames = ["epsilon", "l", "D", "e_err", "gamma", "mode", "feasible",
                  "lambda", "delta", "n", "N", "diagnostic"]
    first = rows[0]
    result = _aggregate(config, [], None, None) | {
        "stats": {"grid_points": len(rows),
                  "feasible_points": sum(r["feasible"] for r in rows)},
        "aborted_fraction": None, "accept_fraction": None, "trials": len(rows),
    }
    if single_point and feasible_any:
        result["n"] = first["n"]
        result["N"] = first["N"] or None
    return ExperimentReport(result=result, rows=rows, fieldnames=fieldnames, trace_lines=[])


_FIELDNAMES = {
    "bc-perfect": ["trial", "accepted", "reason", "c_matches", "n"],
    "bc-decoy": ["trial", "accepted", "reason", "c_matches", "n", "alice_abort", "bob_abort"],
    "ot": ["trial", "aborted", "c", "received_matches"],
    "attack-ot": ["trial", "C", "b", "kappa", "alpha", "omega", "correct", "aborted"],
    "decoy-estimate": ["trial", "l1", "true_n1", "sound", "valid", "violation"],
}


def build_report(config: RunConfig) -> ExperimentReport:
    if config.protocol == "params":
        return _param_table(config)

    n = N = None
    if config.protocol in ("bc-perfect", "ot", "attack-ot"):
        n = config.run.n
        if n is None:
            if config.protocol == "attack-ot":
                raise InfeasibleParameters("attack-ot needs an explicit click count [run].n")
            n = _solver_clicks(config, Protocol.BC_PERFECT if config.protocol == "bc-perfect" else Protocol.OT)
        extra: tuple = (n,)
    elif config.protocol == "bc-decoy":
        if config.source_a is None or config.source_b is None:
            raise InfeasibleParameters("bc-decoy needs both sources configured")
        n, N = config.run.n, config.run.total_rounds
        if N is None:
            n, N = _solver_clicks(config, Protocol.BC_DECOY)
        extra = (n, N)
    elif config.protocol == "decoy-estimate":
        if config.source_a is None or config.source_b is None:
            raise InfeasibleParameters("decoy-estimate needs both sources configured")
        N = config.run.total_rounds
        if N is None:
            raise InfeasibleParameters("decoy-estimate needs [run].total_rounds")
        extra = (N,)
    else:
        raise ValueError(f"unknown protocol {config.protocol!r}")

    rows, traces = _run_trials(config, extra)
    result = _aggregate(config, rows, n, N)
    return ExperimentReport(result=result, rows=rows,
                            fieldnames=_FIELDNAMES[config.protocol], trace_lines=traces)


def _self_validate(out_dir: Path, emit_traces: bool) -> None:
    with open(out_dir / "result.json", encoding="utf-8") as fh:
        result = json.load(fh)
    for key in ("protocol", "params", "n", "aborted_fraction", "accept_fraction",
                "stats", "seed", "version"):
        if key not in result:
            raise AssertionError(f"result.json missing key {key!r}")
    with open(out_dir / "summary.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows[0]) < 2:
        raise AssertionError("summary.csv has no header")
    if emit_traces:
        with open(out_dir / "trace.jsonl", encoding="utf-8") as fh:
            for line in fh:
                parsed = json.loads(line)
                for key in ("phase", "direction", "message_type", "payload_hex", "bits"):
                    if key not in parsed:
                        raise AssertionError(f"trace line missing key {key!r}")


def run_experiment(config: RunConfig, out_dir: Optional[str] = None) -> dict:
    """Run the configured experiment, write result.json / summary.csv (and
    trace.jsonl when enabled) to the output directory, self-validate the
    emitted files, and return the result object."""
    report = build_report(config)
    target = Path(out_dir if out_dir is not None else config.output_dir)
    target.mkdir(parents=True, exist_ok=True)
    with open(target / "result.json", "w", encoding="utf-8") as fh:
        fh.write(_canonical_json(report.result))
    with open(target / "summary.csv", "w", encoding="utf-8") as fh:
        fh.write(report.summary_csv())
    if config.emit_traces:
        with open(target / "trace.jsonl", "w", encoding="utf-8") as fh:
            for line in report.trace_lines:
                fh.write(json.dumps(line, sort_keys=True, separators=(",", ":")) + "\n")
    _self_validate(target, config.emit_traces)
    return report.result
