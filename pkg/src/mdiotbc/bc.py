"""Randomized string-commitment state machines.

Two variants share the phase structure Prepare -> Commit -> Open:

* ``perfect``: single-photon sources, click-count preparation, one-sided
  sifted-set check.
* ``decoy``: coherent sources with decoy intensities, fixed round count,
  intensity announcement, per-party single-photon estimation with a
  multiphoton abort, signal-signal retention, two-sided sifted-set check.

Abort semantics: no check ever stops the message flow.  A failed check sets
an abort-pending flag on the checking party; all messages keep their length
and timing, and only the terminal outputs differ (the committer's string and
the receiver's decision are replaced by fresh uniform values).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .bounds import binary_entropy, fluctuation_terms, min_entropy_rate, solve_rounds
from .channel import FixedN, PartyView, SourceModel, Transcript, UntilN, run_preparation, sift
from .decoy import ChernoffEps, intensity_given_count, multiphoton_abort_check, single_photon_lower_bound, tally
from .errors import PhaseError, StrategyImpossible, ValidityViolation
from .gf2 import (LinearCode, ToeplitzSeed, int_to_bits, random_bits, sample_code,
                  sample_toeplitz_seed, syndrome, toeplitz_extract, xor_bits)
from .params import Infeasible, Protocol, SecurityParams
from .trace import TraceRecorder


@dataclass
class CommitResult:
    c: np.ndarray                 # committer's output string
    bob_committed: bool
    theta_reveal: np.ndarray
    w: np.ndarray                 # syndrome message
    seed: ToeplitzSeed
    decoy_checks: dict = field(default_factory=dict)  # local check outcomes, never on the wire


@dataclass
class OpenOutcome:
    accepted: bool
    c_tilde: np.ndarray           # receiver's output (fresh uniform on reject)
    reason: str                   # "", "syndrome-mismatch", "error-window", "committed-abort"


def prescribed_code_dimension(n: int, epsilon: float, delta: float) -> int | Infeasible:
    """k = ceil(R*n) for the prescribed rate R = ln(eps)/n + 1 - h(delta);
    a non-positive rate (or delta outside [0,1]) is infeasible."""
    if not 0.0 <= delta <= 1.0:
        return Infeasible("delta", f"code-rate delta {delta:.4g} outside [0,1]")
    rate = math.log(epsilon) / n + 1.0 - binary_entropy(delta)
    if rate <= 0.0:
        return Infeasible("code-rate", f"R = {rate:.4g} <= 0 at n={n}")
    return min(int(math.ceil(rate * n)), n)


class BcSession:
    """One commitment session between in-process honest parties.

    The committer is Alice, the receiver Bob.  ``clicks`` (perfect) or
    ``total_rounds`` (decoy) override the solver-chosen plan; ``code_dim``
    overrides the prescribed code rate.  One Generator drives the whole
    session; derive it from labeled sub-streams for reproducibility.
    """

    def __init__(self, params: SecurityParams, rng: np.random.Generator, *,
                 variant: str = "perfect",
                 source_a: Optional[SourceModel] = None,
                 source_b: Optional[SourceModel] = None,
                 clicks: Optional[int] = None,
                 total_rounds: Optional[int] = None,
                 code_dim: Optional[int] = None,
                 syndrome_bits: Optional[int] = None,
                 code: Optional[LinearCode] = None,
                 decoy_eps: Optional[ChernoffEps] = None,
                 trace: Optional[TraceRecorder] = None,
                 max_rounds: Optional[int] = None):
        if variant not in ("perfect", "decoy"):
            raise ValueError(f"unknown variant {variant!r}")
        if variant == "decoy" and decoy_eps is None:
            raise ValueError("decoy variant needs the Chernoff tail parameters")
        self.params = params
        self.variant = variant
        self.rng = rng
        self.trace = trace
        self.max_rounds = max_rounds
        self.code_dim = code_dim
        self.syndrome_bits = syndrome_bits
        self.code_override = code
        self.decoy_eps = decoy_eps
        self.source_a = source_a if source_a is not None else SourceModel.perfect()
        self.source_b = source_b if source_b is not None else SourceModel.perfect()
        if variant == "perfect":
            if clicks is not None:
                self.clicks = clicks
            else:
                plan = solve_rounds(Protocol.BC_PERFECT, params)
                if isinstance(plan, Infeasible):
                    raise ValueError(f"round solver found no feasible n: {plan.detail}")
                self.clicks = plan.n
            self.total_rounds = None
        else:
            if total_rounds is not None:
                self.total_rounds = total_rounds
                self.clicks = clicks  # optional explicit n* floor
            else:
                plan = solve_rounds(Protocol.BC_DECOY, params,
                                    p_as=self.source_a.probs[self.source_a.signal_index],
                                    p_bs=self.source_b.probs[self.source_b.signal_index])
                if isinstance(plan, Infeasible):
                    raise ValueError(f"round solver found no feasible plan: {plan.detail}")
                self.total_rounds = plan.N
                self.clicks = plan.n
        self.phase = "new"
        self.alice_abort: list[str] = []
        self.bob_abort: list[str] = []
        self.transcript: Optional[Transcript] = None
        self.estimation: dict = {}

    # ------------------------------------------------------------------
    def _emit(self, phase: str, direction: str, message_type: str, bits=None):
        if self.trace is not None:
            self.trace.message(phase, direction, message_type, bits)

    def _require(self, phase: str):
        if self.phase != phase:
            raise PhaseError(f"expected phase {phase!r}, session is in {self.phase!r}")

    # ------------------------------------------------------------------
    def prepare(self) -> None:
        self._require("new")
        params = self.params
        if self.variant == "perfect":
            self.transcript = run_preparation(self.source_a, self.source_b, UntilN(self.clicks),
                                              params.e_err, params.p_fail, self.rng, self.max_rounds)
        else:
            self.transcript = run_preparation(self.source_a, self.source_b, FixedN(self.total_rounds),
                                              params.e_err, params.p_fail, self.rng, self.max_rounds)
        tr = self.transcript
        self._emit("prepare", "station->both", "failure_mask", (~tr.success).astype(np.uint8))
        self._emit("prepare", "station->both", "parities", tr.parity[tr.success])
        if self.variant == "decoy":
            self._decoy_preparation_checks()
        self.n = tr.n
        # both parties wait delta_t before the basis reveal; the storage
        # bound applies across this boundary
        self._emit("prepare", "both", "wait-delta-t")
        self.theta_reveal = tr.alice_bases()
        self._emit("prepare", "a->b", "theta_reveal", self.theta_reveal)
        self.bob_view = tr.bob_view()
        self.I, self.x_hat_I = sift(self.bob_view, self.theta_reveal)
        self.x = tr.alice_string()
        self.phase = "prepared"

    def _decoy_preparation_checks(self) -> None:
        params, tr = self.params, self.transcript
        sig_a, sig_b = self.source_a.signal_index, self.source_b.signal_index
        # intensity announcement (label streams both ways)
        self._emit("prepare", "a->b", "intensities_a", (tr.intensity_a == sig_a).astype(np.uint8))
        self._emit("prepare", "b->a", "intensities_b", (tr.intensity_b == sig_b).astype(np.uint8))
        a_sig_success = tr.success & (tr.intensity_a == sig_a)
        b_sig_success = tr.success & (tr.intensity_b == sig_b)
        n_sig_a = int(a_sig_success.sum())
        n_sig_b = int(b_sig_success.sum())
        p_as = self.source_a.probs[sig_a]
        p_bs = self.source_b.probs[sig_b]
        L = math.log(1.0 / params.epsilon)
        beta_a = math.sqrt(L / (2.0 * n_sig_a)) if n_sig_a else math.inf
        beta_b = math.sqrt(L / (2.0 * n_sig_b)) if n_sig_b else math.inf
        f_bs = float((a_sig_success & (tr.intensity_b == sig_b)).sum() / n_sig_a) if n_sig_a else 0.0
        f_as = float((b_sig_success & (tr.intensity_a == sig_a)).sum() / n_sig_b) if n_sig_b else 0.0
        if f_bs < p_bs - beta_a:
            self.alice_abort.append("signal-fraction")
        if f_as < p_as - beta_b:
            self.bob_abort.append("signal-fraction")

        def estimate(view: PartyView, src: SourceModel, n_sig: int, f_sig: float,
                     alpha4: float, who: list[str], tag: str):
            cond = intensity_given_count(src.prob_map(), src.intensity_map())
            try:
                res = single_photon_lower_bound(tally(view), cond, self.decoy_eps,
                                                signal_label=src.signal_label)
            except ValidityViolation as bad:
                who.append("estimation-invalid")
                self.estimation[tag] = {"error": str(bad)}
                return
            decision = multiphoton_abort_check(res.l1, n_sig, f_sig, params.gamma, alpha4)
            if decision.abort:
                who.append("multiphoton")
            self.estimation[tag] = {"l1": res.l1, "ratio": decision.ratio,
                                    "threshold": decision.threshold}

        alpha4_a = (2.0 / p_bs + 1.0 / f_bs) * beta_a if f_bs > 0 else math.inf
        alpha4_b = (2.0 / p_as + 1.0 / f_as) * beta_b if f_as > 0 else math.inf
        estimate(tr.alice_view(), self.source_a, n_sig_a, f_bs, alpha4_a, self.alice_abort, "alice")
        estimate(tr.bob_view(), self.source_b, n_sig_b, f_as, alpha4_b, self.bob_abort, "bob")
        self.estimation["f_bs"], self.estimation["f_as"] = f_bs, f_as
        self.estimation["alpha4_a"], self.estimation["alpha4_b"] = alpha4_a, alpha4_b
        self.estimation["n_sig_a"], self.estimation["n_sig_b"] = n_sig_a, n_sig_b

        # retained-round floor, n >= n*: against the explicit click target when
        # one was supplied, else against the commitment inequality at the
        # observed n with the observed fractions
        n = tr.n
        if self.clicks is not None:
            short = n < self.clicks
        elif n < 1:
            short = True
        else:
            margin = self._observed_decoy_margin(n, f_as, f_bs, n_sig_a, n_sig_b)
            short = isinstance(margin, Infeasible) or margin < 0.0
        if short:
            self.alice_abort.append("insufficient-rounds")
            self.bob_abort.append("insufficient-rounds")

    def _observed_decoy_margin(self, n, f_as, f_bs, n_sig_a, n_sig_b):
        params = self.params
        from .params import DecoyContext
        ctx = DecoyContext(gamma=params.gamma,
                           p_signal_a=self.source_a.probs[self.source_a.signal_index],
                           p_signal_b=self.source_b.probs[self.source_b.signal_index],
                           f_signal_a=f_as, f_signal_b=f_bs,
                           n_signal_a=n_sig_a, n_signal_b=n_sig_b)
        terms = fluctuation_terms(n, params, ctx)
        for name in ("alpha2", "alpha4_a", "alpha4_b", "alpha1_prime", "alpha1_dprime", "alpha3"):
            if isinstance(getattr(terms, name), Infeasible):
                return getattr(terms, name)
        lam = min_entropy_rate(Protocol.BC_DECOY, n, params,
                               gamma_plus_alpha4=params.gamma + terms.alpha4_a)
        if isinstance(lam, Infeasible):
            return lam
        gb = params.gamma + terms.alpha4_b
        delta = self._decoy_delta(terms, gb)
        if not 0.0 <= delta <= 1.0:
            return Infeasible("delta", f"delta = {delta:.4g} outside [0,1]")
        eps = params.epsilon
        rhs = params.l + 2.0 * math.log2(1.0 / (2.0 * eps)) + math.log(1.0 / eps)
        self._observed_delta = delta
        return (lam - binary_entropy(delta)) * n - rhs

    def _decoy_delta(self, terms, gb: float) -> float:
        return 2.0 * ((0.5 + terms.alpha1_prime) * gb + terms.alpha3
                      + (self.params.e_err + terms.alpha2) * (0.5 + terms.alpha1)
                      / ((0.5 - terms.alpha1_prime) * (1.0 - gb)))

    # ------------------------------------------------------------------
    def commit(self) -> CommitResult:
        self._require("prepared")
        params, n = self.params, self.n
        terms = fluctuation_terms(n, params)
        m = len(self.I)
        if m < (0.5 - terms.alpha1) * n:
            self.bob_abort.append("sift-count")
        if self.variant == "decoy" and m > (0.5 + terms.alpha1) * n:
            self.bob_abort.append("sift-count")

        if self.code_override is not None:
            if self.code_override.n != n:
                raise ValueError(f"supplied code has length {self.code_override.n}, session needs {n}")
            self.code = self.code_override
            k = None
        elif self.code_dim is not None:
            k = self.code_dim
        elif self.syndrome_bits is not None:
            k = max(n - self.syndrome_bits, 0)
        else:
            if self.variant == "perfect":
                if isinstance(terms.alpha2, Infeasible):
                    raise ValueError(f"cannot size the code: {terms.alpha2.detail}")
                delta = 2.0 * params.e_err + 2.0 * terms.alpha2
            else:
                delta = getattr(self, "_observed_delta", None)
                if delta is None:
                    raise ValueError("decoy code sizing needs a feasible observed delta; supply code_dim instead")
            k = prescribed_code_dimension(n, params.epsilon, delta)
            if isinstance(k, Infeasible):
                raise ValueError(f"prescribed code rate infeasible: {k.detail}")
        if self.code_override is None:
            self.code = sample_code(n, k, self.rng)
        if self.trace is not None and self.code.k < self.code.n:
            self._emit("commit", "a->b", "code_parity_check", self.code.parity_check.reshape(-1))
        self.w = syndrome(self.code, self.x)
        self._emit("commit", "a->b", "syndrome", self.w)
        self.seed = sample_toeplitz_seed(n, params.l, self.rng)
        self._emit("commit", "a->b", "hash_seed", self.seed.diagonal)
        self.c = toeplitz_extract(self.x, self.seed)
        self.phase = "committed"
        return CommitResult(c=self.c, bob_committed=True, theta_reveal=self.theta_reveal,
                            w=self.w, seed=self.seed, decoy_checks=dict(self.estimation))

    # ------------------------------------------------------------------
    def open(self, x_claim: np.ndarray) -> OpenOutcome:
        self._require("committed")
        if len(x_claim) != self.n:
            raise ValueError(f"open string length {len(x_claim)} != n={self.n}")
        self._emit("open", "a->b", "x_claim", x_claim)
        self.phase = "opened"
        params = self.params
        terms = fluctuation_terms(self.n, params)

        def reject(reason: str) -> OpenOutcome:
            return OpenOutcome(accepted=False, c_tilde=random_bits(params.l, self.rng), reason=reason)

        if not np.array_equal(syndrome(self.code, np.asarray(x_claim, dtype=np.uint8)), self.w):
            return reject("syndrome-mismatch")
        m = len(self.I)
        disagree = float(np.sum(x_claim[self.I] != self.x_hat_I)) / m if m else 1.0
        alpha2 = terms.alpha2 if not isinstance(terms.alpha2, Infeasible) else math.inf
        if not (params.e_err - alpha2 < disagree < params.e_err + alpha2):
            return reject("error-window")
        if self.bob_abort:
            return reject("committed-abort")
        return OpenOutcome(accepted=True, c_tilde=toeplitz_extract(np.asarray(x_claim, dtype=np.uint8), self.seed),
                           reason="")

    # ------------------------------------------------------------------
    def alice_output(self) -> np.ndarray:
        """Alice's terminal string: her commit output, or a fresh uniform
        string when her own checks set abort-pending."""
        if self.phase not in ("committed", "opened"):
            raise PhaseError("no committer output before the commit phase")
        if self.alice_abort:
            return random_bits(self.params.l, self.rng)
        return self.c

    def result(self, outcome: OpenOutcome, seed: Optional[int] = None) -> dict:
        return {
            "protocol": f"bc-{self.variant}",
            "variant": self.variant,
            "accepted": bool(outcome.accepted),
            "reason": outcome.reason,
            "c": "".join(map(str, self.alice_output().tolist())),
            "c_tilde": "".join(map(str, outcome.c_tilde.tolist())),
            "n": int(self.n),
            "N": int(self.total_rounds) if self.total_rounds else None,
            "seed": seed,
        }


# ---------------------------------------------------------------------------
# Dishonest-committer strategies (codeword flips keep the syndrome fixed)
# ---------------------------------------------------------------------------

CheatStrategy = Callable[[LinearCode, np.ndarray, object, np.random.Generator], np.ndarray]


def _enumerate_best(code: LinearCode, key) -> int:
    best_cw, best_key = None, None
    for cw in code.codeword_ints():
        k = key(cw)
        if best_key is None or k < best_key:
            best_cw, best_key = cw, k
    if best_cw is None:
        raise StrategyImpossible("code has no nonzero codeword (k = 0)")
    return best_cw


def min_weight_codeword_flip(code: LinearCode, x: np.ndarray, knowledge, rng) -> np.ndarray:
    """Flip a minimum-weight nonzero codeword (ties: lexicographically
    smallest flip pattern), ignoring any side knowledge."""
    cw = _enumerate_best(code, lambda c: (c.bit_count(), tuple(int_to_bits(c, code.n))))
    return xor_bits(x, int_to_bits(cw, code.n))


def knowledge_biased_codeword_flip(code: LinearCode, x: np.ndarray, knowledge, rng) -> np.ndarray:
    """Flip the codeword whose expected number of receiver-visible flips is
    smallest: flips at positions known to be in the sifted set cost 1, flips
    at unknown positions cost 1/2, flips at positions known to be outside
    cost 0.  ``knowledge`` must expose index arrays ``i_g`` (known in) and
    ``i_b`` (known out)."""
    if knowledge is None:
        return min_weight_codeword_flip(code, x, None, rng)
    g_mask = sum(1 << int(i) for i in knowledge.i_g)
    b_mask = sum(1 << int(i) for i in knowledge.i_b)
    unknown = ((1 << code.n) - 1) & ~(g_mask | b_mask)

    def cost(cw: int):
        visible = 2 * (cw & g_mask).bit_count() + (cw & unknown).bit_count()
        return (visible, cw.bit_count(), tuple(int_to_bits(cw, code.n)))

    cw = _enumerate_best(code, cost)
    return xor_bits(x, int_to_bits(cw, code.n))


def bc_cheating_open(session: BcSession, knowledge, strategy: CheatStrategy,
                     rng: Optional[np.random.Generator] = None) -> OpenOutcome:
    """Dishonest committer: open a string x' != x with the committed
    syndrome, built by the given codeword-flip strategy, and return the
    receiver's verdict."""
    if session.phase != "committed":
        raise PhaseError("cheating open requires a completed commit phase")
    x_claim = strategy(session.code, session.x, knowledge, rng if rng is not None else session.rng)
    if np.array_equal(x_claim, session.x):
        raise StrategyImpossible("strategy returned the honestly committed string")
    return session.open(x_claim)


def honest_bc_run(params: SecurityParams, rng: np.random.Generator, **session_kw) -> dict:
    """Drive one honest session end to end; returns the per-trial record."""
    session = BcSession(params, rng, **session_kw)
    session.prepare()
    commit = session.commit()
    outcome = session.open(session.x)
    matched = bool(outcome.accepted and np.array_equal(outcome.c_tilde, commit.c))
    return {
        "accepted": bool(outcome.accepted),
        "reason": outcome.reason,
        "c_matches": matched,
        "n": session.n,
        "session": session,
        "outcome": outcome,
        "commit": commit,
    }
