"""Restricted bounded-storage receivers, the multiphoton leakage model, the
dishonest-sender guessing strategy against the transfer protocol, and its
Monte Carlo advantage estimator.

The receiver family here (store up to D rounds, measure the rest
immediately in a guessed basis) is classically simulable, so hiding-style
statements can be checked exactly at desk scale; the security formulas hold
against all bounded-storage adversaries, of which this family can only
undershoot, so tests check the consistent direction.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bounds import leftover_hash_distance
from .errors import ScaleExceeded
from .gf2 import LinearCode
from .ot import OtSession
from .params import SecurityParams

Z99 = 2.5758293035489004  # two-sided 99% normal quantile


def wilson_interval(successes: int, trials: int, z: float = Z99) -> tuple[float, float]:
    if trials == 0:
        return 0.0, 1.0
    phat = successes / trials
    denom = 1.0 + z * z / trials
    center = (phat + z * z / (2 * trials)) / denom
    half = z * math.sqrt(phat * (1 - phat) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, center - half), min(1.0, center + half)


# ---------------------------------------------------------------------------
# Restricted bounded-storage receiver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundedBobStrategy:
    """Store up to ``memory_bound`` rounds (learning their bits exactly at
    basis reveal); measure every other round immediately in
    ``immediate_basis`` ("random" or a fixed basis bit)."""

    memory_bound: int
    selection: str = "first"          # "first" | "random"
    immediate_basis: str | int = "random"


@dataclass
class ReceiverKnowledge:
    """Per-round classical knowledge of the restricted receiver after the
    basis reveal: stored rounds and correctly-guessed-basis rounds are known
    exactly; the rest carry an independent uniform bit."""

    stored: np.ndarray
    known: np.ndarray
    value: np.ndarray
    matched: np.ndarray   # basis guess matched (measured rounds only)

    def per_round_guess_prob(self) -> np.ndarray:
        return np.where(self.known, 1.0, 0.5)

    def string_guess_probability(self) -> float:
        return float(np.prod(self.per_round_guess_prob()))


def bounded_bob_view(alice_bits: np.ndarray, alice_bases: np.ndarray,
                     strategy: BoundedBobStrategy, rng: np.random.Generator) -> ReceiverKnowledge:
    n = len(alice_bits)
    d = strategy.memory_bound
    if d > n:
        warnings.warn(f"memory bound {d} exceeds round count {n}; clamping")
        d = n
    stored = np.zeros(n, dtype=bool)
    if d > 0:
        if strategy.selection == "first":
            stored[:d] = True
        elif strategy.selection == "random":
            stored[rng.choice(n, size=d, replace=False)] = True
        else:
            raise ValueError(f"unknown selection {strategy.selection!r}")
    if strategy.immediate_basis == "random":
        guess = rng.integers(0, 2, size=n, dtype=np.uint8)
    else:
        guess = np.full(n, int(strategy.immediate_basis), dtype=np.uint8)
    matched = ~stored & (guess == alice_bases)
    known = stored | matched
    value = np.where(known, alice_bits, rng.integers(0, 2, size=n, dtype=np.uint8)).astype(np.uint8)
    return ReceiverKnowledge(stored=stored, known=known, value=value, matched=matched)


# ---------------------------------------------------------------------------
# Multiphoton leakage and the sender's guessing strategy
# ---------------------------------------------------------------------------

@dataclass
class LeakageRecord:
    """floor(gamma*n) leaked indices split into i_g (believed inside the
    receiver's sifted set) and i_b (believed outside), with per-index
    correctness bias (1+mu)/2."""

    i_g: np.ndarray
    i_b: np.ndarray
    gamma: float
    mu: float

    def leaked(self) -> np.ndarray:
        return np.sort(np.concatenate([self.i_g, self.i_b]))


def sample_leakage(sifted: np.ndarray, n: int, gamma: float, mu: float,
                   rng: np.random.Generator) -> LeakageRecord:
    count = int(math.floor(gamma * n))
    if count == 0:
        empty = np.zeros(0, dtype=np.int64)
        return LeakageRecord(i_g=empty, i_b=empty.copy(), gamma=gamma, mu=mu)
    leaked = rng.choice(n, size=count, replace=False)
    inside = np.isin(leaked, sifted)
    p_good = np.where(inside, 0.5 * (1.0 + mu), 0.5 * (1.0 - mu))
    to_good = rng.random(count) < p_good
    return LeakageRecord(i_g=np.sort(leaked[to_good]), i_b=np.sort(leaked[~to_good]),
                         gamma=gamma, mu=mu)


def alice_guess(x: np.ndarray, messages, i_g: np.ndarray, i_b: np.ndarray,
                rng: np.random.Generator) -> int:
    """The dishonest sender's verbatim strategy: read (i0, i1) off the
    receiver's message, look at the leaked indices unique to each half, and
    vote by which partition the sampled index fell into."""
    try:
        i0 = np.asarray(messages["i0"], dtype=np.int64)
        i1 = np.asarray(messages["i1"], dtype=np.int64)
    except (KeyError, TypeError):
        raise ValueError("messages must expose the receiver's index sets 'i0' and 'i1'")
    leaked = np.sort(np.concatenate([np.asarray(i_g, dtype=np.int64), np.asarray(i_b, dtype=np.int64)]))
    s0 = np.intersect1d(np.setdiff1d(i0, i1), leaked)
    s1 = np.intersect1d(np.setdiff1d(i1, i0), leaked)
    if len(s0) == 0 or len(s1) == 0:
        return int(rng.integers(0, 2))
    r = int(rng.integers(0, 2))
    pool = s0 if r == 0 else s1
    i_r = int(rng.choice(pool))
    return r if i_r in set(int(v) for v in i_g) else 1 - r


@dataclass
class AttackStats:
    trials: int
    p_guess: float
    p_guess_ci: tuple[float, float]
    p_omega: float
    p_omega_ci: tuple[float, float]
    alpha_mean: float
    conditional_guess: float
    conditional_guess_ci: tuple[float, float]
    rows: Optional[list[dict]] = None

    def as_dict(self) -> dict:
        return {
            "trials": self.trials,
            "p_guess": self.p_guess, "p_guess_ci": list(self.p_guess_ci),
            "p_omega": self.p_omega, "p_omega_ci": list(self.p_omega_ci),
            "alpha_mean": self.alpha_mean,
            "conditional_guess": self.conditional_guess,
            "conditional_guess_ci": list(self.conditional_guess_ci),
        }


def attack_trial(params: SecurityParams, rng: np.random.Generator, *, n: int, l: int = 8) -> dict:
    """One semi-honest-sender trial: run the transfer honestly, record the
    receiver's message, sample the multiphoton leakage against the original
    sifted set, and apply the guessing strategy."""
    session = OtSession(params, rng, n=n, l=l)
    result = session.run()
    sets = session.sets
    leak = sample_leakage(session.sifted, n, params.gamma, params.mu, rng)
    b = alice_guess(session.x, {"i0": sets.i0, "i1": sets.i1}, leak.i_g, leak.i_b, rng)
    leaked = leak.leaked()
    only0 = np.setdiff1d(sets.i0, sets.i1)
    only1 = np.setdiff1d(sets.i1, sets.i0)
    kappa = int(min(len(np.intersect1d(only0, leaked)), len(np.intersect1d(only1, leaked))))
    omega = kappa >= 1
    # the guessing target is the choice bit carried by the set relabeling;
    # an abort-pending run still relabels (its terminal output is uniformized
    # separately and is flagged in the row)
    c = sets.c
    unreceived = only1 if c == 0 else only0
    hit = np.intersect1d(unreceived, leaked)
    alpha = float(np.mean(~np.isin(hit, session.sifted))) if len(hit) else 0.0
    return {"C": c, "b": b, "kappa": kappa, "alpha": alpha, "omega": omega,
            "correct": b == c, "aborted": result.aborted}


def estimate_attack_advantage(params: SecurityParams, trials: int, rng: np.random.Generator,
                              *, n: int, l: int = 8, keep_rows: bool = False) -> AttackStats:
    """Monte Carlo estimate of the sender's guessing probability, the
    frequency of the both-halves-leaked event, the mean outside fraction,
    and the guess rate conditioned on that event (99% Wilson intervals)."""
    if trials <= 0:
        raise ValueError(f"trials must be positive, got {trials}")
    rows = []
    correct = omega_count = cond_correct = 0
    alpha_sum = 0.0
    for _ in range(trials):
        row = attack_trial(params, rng, n=n, l=l)
        rows.append(row)
        correct += row["correct"]
        if row["omega"]:
            omega_count += 1
            cond_correct += row["correct"]
            alpha_sum += row["alpha"]
    return AttackStats(
        trials=trials,
        p_guess=correct / trials, p_guess_ci=wilson_interval(correct, trials),
        p_omega=omega_count / trials, p_omega_ci=wilson_interval(omega_count, trials),
        alpha_mean=alpha_sum / omega_count if omega_count else 0.0,
        conditional_guess=cond_correct / omega_count if omega_count else 0.5,
        conditional_guess_ci=wilson_interval(cond_correct, omega_count),
        rows=rows if keep_rows else None,
    )


# ---------------------------------------------------------------------------
# Exact hiding analysis at desk scale (one-bit output)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HidingAnalysis:
    trace_distance: float
    h_min: float
    bound: float
    n: int
    k: int


def exact_hiding_analysis(code: LinearCode, eps: float) -> HidingAnalysis:
    """Exhaustively evaluate the commitment's hiding against the D = 0
    measure-immediately receiver for a one-bit output.

    The receiver's view is (per-round basis-match flags, the matched bits,
    the committed string's syndrome); the committed bit is the extractor row
    applied to the string.  Averaging over all strings, flag patterns, and
    extractor seeds gives the exact trace distance of (bit, view) from
    uniform x view, the exact min-entropy of the string given the view, and
    the two-universal hashing bound that the distance must not exceed.
    """
    n, k = code.n, code.k
    if n > 12:
        raise ScaleExceeded(f"exhaustive hiding analysis capped at n <= 12, got {n}")
    size = 1 << n
    r = n - k
    X = np.arange(size, dtype=np.int64)
    bits = ((X[:, None] >> np.arange(n)) & 1).astype(np.uint8)
    syn_int = ((bits @ code.parity_check.T) % 2).astype(np.int64) @ (1 << np.arange(r, dtype=np.int64)) \
        if r else np.zeros(size, dtype=np.int64)
    signs = (1 - 2 * (np.bitwise_count((X[:, None] & X[None, :]).astype(np.uint64)) & 1)).astype(np.int8)
    s_space = 1 << r
    delta_acc = 0.0
    nonempty_acc = 0
    for flags in range(size):
        key = (X & flags) * s_space + syn_int
        order = np.argsort(key, kind="stable")
        sorted_key = key[order]
        starts = np.nonzero(np.r_[True, sorted_key[1:] != sorted_key[:-1]])[0]
        nonempty_acc += len(starts)
        group_sums = np.add.reduceat(signs[:, order].astype(np.int32), starts, axis=1)
        delta_acc += float(np.abs(group_sums).sum())
    trace_distance = delta_acc / (2.0 * float(size) ** 3)
    p_guess = nonempty_acc / float(size) ** 2
    h_min = -math.log2(p_guess)
    return HidingAnalysis(trace_distance=trace_distance, h_min=h_min,
                          bound=leftover_hash_distance(h_min, 1, eps), n=n, k=k)
