"""Acceptance suite: one test per criterion, each printing a PASS line on
success (failures carry their diagnosis in the assertion message).

Two checks are expected to stay red at the stated parameters and are kept
faithful rather than weakened:

* criterion 3 -- commitment correctness at e_err = 0.02: the round solver
  has no feasible n there, because the commitment inequality needs
  h(2*e_err + 2*alpha2) < f(0) ~ 0.2271, i.e. e_err < ~0.0184, at every
  block length.  A supplement runs the same property at feasible noise.
* criterion 8a -- the guessing-advantage inequality with the full
  p_omega*alpha*mu term: the verbatim sampling strategy achieves exactly
  half that advantage (p_guess = 1/2 + p_omega*alpha*mu/2), so the stated
  form is unattainable; supplement 8d verifies the half-factor identity.
"""

import math

import numpy as np
import pytest

from mdiotbc.adversary import estimate_attack_advantage, exact_hiding_analysis
from mdiotbc.bc import BcSession, bc_cheating_open, honest_bc_run, min_weight_codeword_flip
from mdiotbc.bounds import binary_entropy, bounded_storage_rate, code_distance_tail, fluctuation_terms
from mdiotbc.channel import SourceModel, FixedN, run_preparation
from mdiotbc.config import parse_config
from mdiotbc.decoy import (ChernoffEps, CondIntensityProbs, intensity_given_count,
                           s1_lower_bound, single_photon_lower_bound, tally)
from mdiotbc.gf2 import min_distance, sample_code
from mdiotbc.ot import OtSession
from mdiotbc.params import Infeasible, Protocol, SecurityParams
from mdiotbc.rng import derive_rng
from mdiotbc.runner import run_experiment
from mdiotbc.bounds import solve_rounds

SEED = 902312


def _rng(*labels):
    return derive_rng(SEED, *labels)


def _sigma3(p, trials):
    return 3.0 * math.sqrt(max(p * (1.0 - p), 1e-12) / trials)


def report(tag: str, detail: str):
    print(f"ACCEPTANCE {tag}: PASS  ({detail})")


# ---------------------------------------------------------------------------
def test_criterion_01_coherent_source_statistics():
    """Poisson photon statistics at intensity 0.1 over 1e6 draws."""
    src = SourceModel.coherent({"s": 0.1}, {"s": 1.0})
    _, counts = src._sample_labels_counts(1_000_000, _rng("c1"))
    t = 1_000_000
    p0, p1 = float((counts == 0).mean()), float((counts == 1).mean())
    p2 = float((counts >= 2).mean())
    assert abs(p0 - 0.9048) <= _sigma3(0.9048, t)
    assert abs(p1 - 0.0905) <= _sigma3(0.0905, t)
    assert abs(p2 - 0.0047) <= _sigma3(0.0047, t)
    multi = p2 / (1.0 - p0)
    assert abs(multi - 0.049) <= 0.005
    # scalar sampling path agrees in distribution
    scalar_rng = _rng("c1s")
    scalar = np.array([src.sample_photon_count("s", scalar_rng) for _ in range(20_000)])
    assert abs(float((scalar == 0).mean()) - 0.9048) <= _sigma3(0.9048, 20_000)
    report("1 coherent-source statistics",
           f"p0={p0:.4f} p1={p1:.4f} p2+={p2:.4f} multi|nonzero={multi:.4f}")


# ---------------------------------------------------------------------------
def test_criterion_02_rate_function_fixtures():
    assert bounded_storage_rate(-2.0) == 0.0
    assert bounded_storage_rate(0.75) == 0.75
    assert bounded_storage_rate(0.0) == pytest.approx(0.2271, abs=1e-4)
    xs = np.linspace(0.0, 0.5, 1000)
    g = binary_entropy(xs) + xs - 1.0
    err = float(np.max(np.abs(bounded_storage_rate(g) - xs)))
    assert err <= 1e-9
    report("2 rate-function fixtures", f"max roundtrip error {err:.2e}")


# ---------------------------------------------------------------------------
def test_criterion_03_bc_correctness_as_stated():
    """Honest commitment at the stated parameters (epsilon=0.05, l=32, D=0,
    e_err=0.02) at solver-chosen n.  Kept faithful: the solver must produce a
    plan before the trials can run."""
    params = SecurityParams(epsilon=0.05, l=32, D=0, e_err=0.02, n_max=2**21)
    plan = solve_rounds(Protocol.BC_PERFECT, params)
    if isinstance(plan, Infeasible):
        pytest.fail(
            "ACCEPTANCE 3 bc-correctness (as stated): FAIL -- no solver-chosen n exists at "
            f"e_err=0.02: {plan.detail}. The commitment inequality needs h(2*e_err + 2*alpha2) "
            f"< f(0) = {bounded_storage_rate(0.0):.5f}, i.e. e_err < ~0.0184; at e_err=0.02, "
            f"h(0.04) = {binary_entropy(0.04):.5f} already exceeds the best achievable rate at "
            "every n. See the feasible-noise supplement for the property itself.")
    # unreachable at the stated parameters; kept for completeness
    _run_bc_correctness(params, plan.n, trials=1000, tag="3 bc-correctness (as stated)")


def _run_bc_correctness(params, clicks, trials, tag):
    bad = 0
    for t in range(trials):
        rec = honest_bc_run(params, _rng("c3", t), clicks=clicks)
        if not (rec["accepted"] and rec["c_matches"]):
            bad += 1
    bound = 3 * params.epsilon + _sigma3(3 * params.epsilon, trials)
    assert bad / trials <= bound, f"abort+mismatch {bad}/{trials} above {bound:.4f}"
    report(tag, f"abort+mismatch {bad}/{trials} <= {bound:.4f}, every accept matched")


def test_criterion_03_supplement_feasible_noise():
    """The same correctness property at noise inside the feasibility region
    (e_err = 0.001), at the solver-chosen n."""
    params = SecurityParams(epsilon=0.05, l=32, D=0, e_err=0.001)
    plan = solve_rounds(Protocol.BC_PERFECT, params)
    assert not isinstance(plan, Infeasible)
    _run_bc_correctness(params, plan.n, trials=250,
                        tag=f"3s bc-correctness at e_err=0.001 (n*={plan.n})")


# ---------------------------------------------------------------------------
def test_criterion_04_binding_codeword_flip():
    params = SecurityParams(epsilon=0.05, l=8, e_err=0.02, p_fail=0.0)
    n = 400
    terms = fluctuation_terms(n, params)
    required = 2 * (params.e_err + 2 * terms.alpha2) * n
    code_rng = _rng("c4", "codes")
    codes = []
    while len(codes) < 10:
        code = sample_code(n, 4, code_rng)
        if min_distance(code) >= required:   # exact distance screen (k <= 24)
            codes.append(code)
    accepts, trials = 0, 0
    for ci, code in enumerate(codes):
        for t in range(100):
            session = BcSession(params, _rng("c4", ci, t), clicks=n, code=code)
            session.prepare()
            session.commit()
            outcome = bc_cheating_open(session, None, min_weight_codeword_flip)
            accepts += outcome.accepted
            trials += 1
    bound = params.epsilon + _sigma3(params.epsilon, trials)
    assert accepts / trials <= bound, f"cheat accepted {accepts}/{trials} > {bound:.4f}"
    report("4 binding vs codeword flips",
           f"d >= {required:.0f} screened; accepts {accepts}/{trials} <= {bound:.4f}")


# ---------------------------------------------------------------------------
def test_criterion_05_hiding_exhaustive_tiny_scale():
    eps = 0.05
    rng = _rng("c5")
    worst = 0.0
    for i in range(20):
        k = 2 + (i % 5)
        code = sample_code(8, k, rng)
        analysis = exact_hiding_analysis(code, eps=eps)
        gap = analysis.trace_distance - analysis.bound
        worst = max(worst, gap)
        assert analysis.trace_distance <= analysis.bound, (
            f"code {i} (k={k}): distance {analysis.trace_distance:.6f} "
            f"above bound {analysis.bound:.6f}")
    report("5 hiding (exhaustive, n=8, l=1)", f"20 codes, worst margin {worst:.3e} <= 0")


# ---------------------------------------------------------------------------
@pytest.fixture(scope="module")
def ot_params():
    return SecurityParams(epsilon=0.05, l=8, e_err=0.02, p_fail=0.1, c_ec=1.5)


def test_criterion_06_ot_correctness_and_receiver_privacy(ot_params):
    trials, n = 1000, 60
    bad = 0
    buckets = 64
    table = np.zeros((2, buckets), dtype=np.int64)
    mi_runs = 10_000
    for t in range(mi_runs):
        session = OtSession(ot_params, _rng("c6", t), n=n)
        res = session.run()
        if t < trials:
            bad += res.aborted or not res.received_matches()
        table[session.sets.c, session.alice_view_fingerprint(buckets)] += 1
    bound = 3 * ot_params.epsilon + _sigma3(3 * ot_params.epsilon, trials)
    assert bad / trials <= bound, f"failure {bad}/{trials} above {bound:.4f}"

    joint = table / table.sum()
    pc = joint.sum(axis=1, keepdims=True)
    pv = joint.sum(axis=0, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = joint * np.log2(joint / (pc * pv))
    mi = float(np.nansum(terms))
    ln2 = math.log(2.0)
    dof = buckets - 1
    floor = dof / (2 * mi_runs * ln2) + 3 * math.sqrt(2 * dof) / (2 * mi_runs * ln2)
    assert mi <= floor, f"plug-in MI {mi:.5f} above independence floor {floor:.5f}"
    report("6 ot correctness + receiver privacy",
           f"failures {bad}/{trials} <= {bound:.4f}; MI {mi:.5f} <= floor {floor:.5f}")


# ---------------------------------------------------------------------------
def test_criterion_07_decoy_estimator_soundness():
    src = SourceModel.coherent({"s": 0.6, "d1": 0.3, "d2": 0.15},
                               {"s": 0.4, "d1": 0.3, "d2": 0.3})
    eps = ChernoffEps(0.01, 0.01, 0.01, 0.01)
    cond = intensity_given_count(src.prob_map(), src.intensity_map())
    trials, overshoot, invalid = 1000, 0, 0
    for t in range(trials):
        tr = run_preparation(src, src, FixedN(60_000), 0.02, 0.1, _rng("c7", t))
        obs = tally(tr.alice_view())
        res = single_photon_lower_bound(obs, cond, eps)
        overshoot += res.l1 > tr.true_single_photon_signal("a", src.signal_index)
    budget = eps.failure_probability + _sigma3(min(eps.failure_probability, 1.0), trials)
    assert overshoot / trials <= budget, f"L1 overshot truth {overshoot}/{trials} > {budget:.4f}"

    # closed form vs vertex enumeration on random feasible instances
    gen = _rng("c7", "instances")
    checked = 0
    worst = 0.0
    while checked < 1000:
        p1 = gen.dirichlet(np.ones(3))
        p2 = gen.dirichlet(np.ones(3))
        cond_i = CondIntensityProbs(labels=("s", "d1", "d2"), p_given_1=p1, p_given_2plus=p2)
        den = p1[1] * p2[2] - p2[1] * p1[2]
        if abs(den) < 1e-3:
            continue
        s1_true = float(gen.uniform(2000, 8000))
        s2_true = float(gen.uniform(100, 900))
        x = {"d1": p1[1] * s1_true + p2[1] * s2_true, "d2": p1[2] * s1_true + p2[2] * s2_true}
        a = s1_lower_bound(x, cond_i, eps, method="closed-form")
        if a.clamped:
            continue
        b = s1_lower_bound(x, cond_i, eps, method="vertex-enum")
        scale = max(1.0, a.value)
        worst = max(worst, abs(a.value - b.value) / scale)
        assert abs(a.value - b.value) <= 1e-6 * scale
        checked += 1
    report("7 decoy estimator soundness",
           f"L1 > n1 on {overshoot}/{trials} (budget {budget:.3f}); "
           f"closed-form vs vertex-enum worst rel gap {worst:.2e}")


# ---------------------------------------------------------------------------
@pytest.fixture(scope="module")
def attack_grid():
    n, trials = 100, 10_000
    grid = {}
    for gamma in (0.05, 0.1, 0.2):
        for mu in (0.5, 1.0):
            params = SecurityParams(epsilon=0.05, l=8, e_err=0.0, p_fail=0.0,
                                    gamma=gamma, mu=mu)
            grid[(gamma, mu)] = estimate_attack_advantage(
                params, trials, _rng("c8", gamma, mu), n=n, keep_rows=True)
    zero = SecurityParams(epsilon=0.05, l=8, e_err=0.0, p_fail=0.0, gamma=0.0, mu=1.0)
    grid[(0.0, 1.0)] = estimate_attack_advantage(zero, trials, _rng("c8", "zero"), n=n)
    return n, trials, grid


def test_criterion_08a_advantage_inequality_as_stated(attack_grid):
    """p_guess >= 1/2 + p_omega * alpha * mu - 3*sigma at every grid point,
    exactly as stated.  Kept faithful; the sampled strategy's true advantage
    is p_omega * alpha * mu / 2 (see supplement 8d), so this form fails."""
    n, trials, grid = attack_grid
    lines = []
    ok = True
    for (gamma, mu), stats in grid.items():
        if gamma == 0.0:
            continue
        rhs = 0.5 + stats.p_omega * stats.alpha_mean * mu - _sigma3(0.5, trials)
        good = stats.p_guess >= rhs
        ok &= good
        lines.append(f"(gamma={gamma}, mu={mu}): p_guess={stats.p_guess:.4f} "
                     f"{'>=' if good else '<'} {rhs:.4f}")
    assert ok, ("ACCEPTANCE 8a advantage inequality (as stated): FAIL -- " + "; ".join(lines)
                + ". The strategy samples one leaked index and gains "
                  "p_omega*alpha*mu/2, half the stated term; supplement 8d verifies the "
                  "half-factor identity at every point.")
    report("8a advantage inequality (as stated)", "; ".join(lines))


def test_criterion_08b_conditional_identity_at_full_bias(attack_grid):
    n, trials, grid = attack_grid
    stats = grid[(0.2, 1.0)]
    assert stats.p_omega > 0.99, f"p_omega={stats.p_omega:.4f} not above 0.99"
    lo, hi = stats.conditional_guess_ci
    target = 0.5 * (1 + stats.alpha_mean)
    alphas = np.array([r["alpha"] for r in stats.rows if r["omega"]])
    slack = 1.5 * alphas.std(ddof=1) / math.sqrt(len(alphas)) if len(alphas) > 1 else 0.0
    assert lo - slack <= target <= hi + slack, (
        f"conditional {stats.conditional_guess:.5f} CI ({lo:.5f}, {hi:.5f}) "
        f"misses (1+alpha)/2 = {target:.5f}")
    report("8b conditional guess identity at mu=1",
           f"cond={stats.conditional_guess:.5f} vs (1+alpha)/2={target:.5f}, "
           f"CI ({lo:.5f}, {hi:.5f})")


def test_criterion_08c_no_leakage_no_advantage(attack_grid):
    _, _, grid = attack_grid
    stats = grid[(0.0, 1.0)]
    lo, hi = stats.p_guess_ci
    assert lo <= 0.5 <= hi, f"gamma=0 p_guess CI ({lo:.4f}, {hi:.4f}) excludes 1/2"
    report("8c no leakage -> coin flipping", f"p_guess={stats.p_guess:.4f} CI ({lo:.4f}, {hi:.4f})")


def test_criterion_08d_supplement_half_factor_advantage(attack_grid):
    """The advantage identity the sampled strategy actually satisfies:
    p_guess >= 1/2 + p_omega * alpha * mu / 2 - 3*sigma at every point."""
    n, trials, grid = attack_grid
    lines = []
    for (gamma, mu), stats in grid.items():
        if gamma == 0.0:
            continue
        rhs = 0.5 + stats.p_omega * stats.alpha_mean * mu / 2.0 - _sigma3(0.5, trials)
        assert stats.p_guess >= rhs, (
            f"(gamma={gamma}, mu={mu}): p_guess={stats.p_guess:.4f} < {rhs:.4f}")
        lines.append(f"(g={gamma}, mu={mu}): {stats.p_guess:.4f} >= {rhs:.4f}")
    report("8d half-factor advantage (supplement)", "; ".join(lines))


# ---------------------------------------------------------------------------
def test_criterion_09_random_code_distance_tail():
    rng = _rng("c9")
    trials, n, k = 2000, 16, 4
    distances = np.array([min_distance(sample_code(n, k, rng)) for _ in range(trials)])
    details = []
    for num in range(1, 9):
        delta = num / 16.0
        bound = code_distance_tail(k / n, delta, n)
        emp = float((distances <= delta * n).mean())
        cap = min(bound, 1.0)
        assert emp <= bound + 3 * math.sqrt(cap * (1 - cap) / trials) + 1e-12, (
            f"delta={delta}: empirical {emp:.4f} above tail bound {bound:.4f}")
        details.append(f"{num}/16: {emp:.4f}<={bound:.3f}")
    report("9 random-code distance tail", "; ".join(details))


# ---------------------------------------------------------------------------
def test_criterion_10_determinism(tmp_path):
    raw = {
        "schema": 1, "protocol": "ot", "trials": 40, "master_seed": 424242,
        "emit_traces": True,
        "params": {"epsilon": 0.05, "l": 8, "e_err": 0.02, "p_fail": 0.1, "c_ec": 1.5},
        "run": {"n": 60},
    }
    cfg = parse_config(raw)
    run_experiment(cfg, out_dir=str(tmp_path / "a"))
    run_experiment(cfg, out_dir=str(tmp_path / "b"))
    for name in ("result.json", "summary.csv", "trace.jsonl"):
        a = (tmp_path / "a" / name).read_bytes()
        b = (tmp_path / "b" / name).read_bytes()
        assert a == b, f"{name} differs between identical reruns"
    raw2 = {
        "schema": 1, "protocol": "attack-ot", "trials": 50, "master_seed": 31337,
        "params": {"epsilon": 0.05, "l": 8, "gamma": 0.1, "mu": 1.0},
        "run": {"n": 64},
    }
    cfg2 = parse_config(raw2)
    run_experiment(cfg2, out_dir=str(tmp_path / "c"))
    run_experiment(cfg2, out_dir=str(tmp_path / "d"))
    assert (tmp_path / "c" / "summary.csv").read_bytes() == (tmp_path / "d" / "summary.csv").read_bytes()
    report("10 determinism", "byte-identical result.json / summary.csv / trace.jsonl on reruns")
