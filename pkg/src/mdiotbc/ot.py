"""Randomized 1-out-of-2 oblivious string transfer (perfect sources).

Pipeline: shared preparation until n clicks, basis reveal and sifting, the
receiver's set construction (truncate the sifted set to m, draw a disjoint
decoy set from the complement, relabel by the choice bit), per-half
syndrome-based error correction, and two-universal extraction with fresh
seeds per half.

Abort semantics mirror the commitment sessions: every message is sent with
the same size and timing whether or not a check failed; an abort-pending
run finishes and then replaces all outputs with fresh uniform values.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bounds import binary_entropy, fluctuation_terms
from .channel import SourceModel, UntilN, run_preparation, sift
from .errors import PhaseError
from .gf2 import LinearCode, coset_decode, random_bits, sample_code, sample_toeplitz_seed, syndrome, toeplitz_extract
from .params import SecurityParams
from .trace import TraceRecorder


@dataclass
class OtResult:
    s0: np.ndarray
    s1: np.ndarray
    c: int
    s_hat: np.ndarray
    aborted: bool

    def received_matches(self) -> bool:
        target = self.s0 if self.c == 0 else self.s1
        return bool(np.array_equal(self.s_hat, target))


@dataclass
class ChoiceSets:
    m: int
    i0: np.ndarray
    i1: np.ndarray
    c: int
    abort_pending: bool


def bob_choice_sets(I: np.ndarray, n: int, alpha1: float, rng: np.random.Generator) -> ChoiceSets:
    """Truncate the sifted set to a uniform m-subset (m = ceil((1/2-alpha1)n)),
    draw the decoy half uniformly from the complement of the original sifted
    set, pick the choice bit, and relabel.

    A sifted set smaller than m (or a complement smaller than m) sets
    abort-pending; the sets are then padded with unused indices so the
    outgoing message is indistinguishable in shape from a non-aborting run.
    """
    m = math.ceil((0.5 - alpha1) * n)
    abort = False
    universe = np.arange(n)
    if len(I) >= m:
        kept = np.sort(rng.choice(I, size=m, replace=False))
    else:
        abort = True
        pad_pool = np.setdiff1d(universe, I, assume_unique=False)
        pad = rng.choice(pad_pool, size=m - len(I), replace=False)
        kept = np.sort(np.concatenate([I, pad]))
    complement = np.setdiff1d(universe, I)          # complement of the original sifted set
    complement = np.setdiff1d(complement, kept)     # keep the halves disjoint
    if len(complement) >= m:
        bad = np.sort(rng.choice(complement, size=m, replace=False))
    else:
        abort = True
        pad_pool = np.setdiff1d(universe, np.concatenate([kept, complement]))
        pad = rng.choice(pad_pool, size=m - len(complement), replace=False)
        bad = np.sort(np.concatenate([complement, pad]))
    c = int(rng.integers(0, 2))
    i0, i1 = (kept, bad) if c == 0 else (bad, kept)
    return ChoiceSets(m=m, i0=i0, i1=i1, c=c, abort_pending=abort)


def error_correct(x_half: np.ndarray, x_hat_half: np.ndarray, ec_code: LinearCode) -> tuple[np.ndarray, int]:
    """One half's correction: the sender's message is Syn(x_half); the
    receiver coset-decodes his noisy copy toward that syndrome.  Returns the
    corrected string and the leak in bits (the syndrome length)."""
    syn = syndrome(ec_code, x_half)
    corrected = coset_decode(ec_code, syn, x_hat_half)
    return corrected, ec_code.n - ec_code.k


def ec_syndrome_length(m: int, e_err: float, c_ec: float) -> int:
    """Per-half error-correction leak: ceil(h(e_err)*m + c_ec*sqrt(m)),
    capped at m."""
    return min(int(math.ceil(binary_entropy(e_err) * m + c_ec * math.sqrt(m))), m)


class OtSession:
    """One transfer session; ``n`` is the click target (use the ot-mode
    round solver for security-sized runs, or pass a desk-scale n directly)."""

    def __init__(self, params: SecurityParams, rng: np.random.Generator, *, n: int,
                 l: Optional[int] = None,
                 ec_dim: Optional[int] = None,
                 source_a: Optional[SourceModel] = None,
                 source_b: Optional[SourceModel] = None,
                 trace: Optional[TraceRecorder] = None,
                 max_rounds: Optional[int] = None):
        self.params = params
        self.rng = rng
        self.n = n
        self.l = l if l is not None else params.l
        self.ec_dim = ec_dim
        self.source_a = source_a if source_a is not None else SourceModel.perfect()
        self.source_b = source_b if source_b is not None else SourceModel.perfect()
        self.trace = trace
        self.max_rounds = max_rounds
        self.phase = "new"

    def _emit(self, phase, direction, message_type, bits=None):
        if self.trace is not None:
            self.trace.message(phase, direction, message_type, bits)

    def _index_mask(self, indices: np.ndarray) -> np.ndarray:
        mask = np.zeros(self.n, dtype=np.uint8)
        mask[indices] = 1
        return mask

    def run(self) -> OtResult:
        if self.phase != "new":
            raise PhaseError("session already run")
        self.phase = "done"
        params, n, l = self.params, self.n, self.l

        transcript = run_preparation(self.source_a, self.source_b, UntilN(n),
                                     params.e_err, params.p_fail, self.rng, self.max_rounds)
        self.transcript = transcript
        self._emit("prepare", "station->both", "failure_mask", (~transcript.success).astype(np.uint8))
        self._emit("prepare", "station->both", "parities", transcript.parity[transcript.success])
        self._emit("prepare", "both", "wait-delta-t")
        theta_reveal = transcript.alice_bases()
        self._emit("prepare", "a->b", "theta_reveal", theta_reveal)
        bob_view = transcript.bob_view()
        I, x_hat_I = sift(bob_view, theta_reveal)
        self.sifted = I
        self.x = transcript.alice_string()

        terms = fluctuation_terms(n, params)
        sets = bob_choice_sets(I, n, terms.alpha1, self.rng)
        self.sets = sets
        self._emit("post", "b->a", "choice_set_i0", self._index_mask(sets.i0))
        self._emit("post", "b->a", "choice_set_i1", self._index_mask(sets.i1))

        m = sets.m
        k_m = self.ec_dim if self.ec_dim is not None else m - ec_syndrome_length(m, params.e_err, params.c_ec)
        ec_code = sample_code(m, k_m, self.rng)
        self.ec_code = ec_code
        if self.trace is not None and ec_code.k < ec_code.n:
            self._emit("post", "a->b", "ec_parity_check", ec_code.parity_check.reshape(-1))
        x0, x1 = self.x[sets.i0], self.x[sets.i1]
        syn0, syn1 = syndrome(ec_code, x0), syndrome(ec_code, x1)
        self._emit("post", "a->b", "ec_syndrome_0", syn0)
        self._emit("post", "a->b", "ec_syndrome_1", syn1)

        # receiver's noisy copy on his kept half (zeros on padded positions)
        kept = sets.i0 if sets.c == 0 else sets.i1
        x_hat_kept = np.zeros(m, dtype=np.uint8)
        present = np.isin(kept, I)
        x_hat_kept[present] = x_hat_I[np.searchsorted(I, kept[present])]
        syn_c = syn0 if sets.c == 0 else syn1
        corrected = coset_decode(ec_code, syn_c, x_hat_kept)
        self.leak_bits = 2 * (ec_code.n - ec_code.k)

        seed0 = sample_toeplitz_seed(m, l, self.rng)
        seed1 = sample_toeplitz_seed(m, l, self.rng)
        self._emit("post", "a->b", "hash_seed_0", seed0.diagonal)
        self._emit("post", "a->b", "hash_seed_1", seed1.diagonal)
        self.seeds = (seed0, seed1)

        s0 = toeplitz_extract(x0, seed0)
        s1 = toeplitz_extract(x1, seed1)
        s_hat = toeplitz_extract(corrected, seed0 if sets.c == 0 else seed1)
        if sets.abort_pending:
            # terminal uniformization; everything above was still sent
            s0, s1 = random_bits(l, self.rng), random_bits(l, self.rng)
            c = int(self.rng.integers(0, 2))
            s_hat = random_bits(l, self.rng)
            self.result_record = OtResult(s0=s0, s1=s1, c=c, s_hat=s_hat, aborted=True)
        else:
            self.result_record = OtResult(s0=s0, s1=s1, c=sets.c, s_hat=s_hat, aborted=False)
        return self.result_record

    def terminal_record(self, seed=None) -> dict:
        res = self.result_record
        return {
            "protocol": "ot",
            "aborted": bool(res.aborted),
            "c": int(res.c),
            "s0": "".join(map(str, res.s0.tolist())),
            "s1": "".join(map(str, res.s1.tolist())),
            "s_hat": "".join(map(str, res.s_hat.tolist())),
            "n": int(self.n),
            "N": None,
            "seed": seed,
        }

    def alice_view_fingerprint(self, buckets: int = 64) -> int:
        """Stable hash bucket of everything the sender saw: her own strings
        and every message sent or received.  Used by the receiver-privacy
        mutual-information estimate."""
        payload = {
            "x": self.x.tolist(),
            "theta": self.transcript.alice_bases().tolist(),
            "i0": self.sets.i0.tolist(),
            "i1": self.sets.i1.tolist(),
            "ec": [self.ec_code.parity_check.reshape(-1).tolist()],
            "seeds": [self.seeds[0].diagonal.tolist(), self.seeds[1].diagonal.tolist()],
        }
        digest = hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).digest()
        return int.from_bytes(digest[:8], "big") % buckets


def ot_run(params: SecurityParams, rng: np.random.Generator, *, n: int, **kw) -> OtResult:
    """Convenience wrapper: build a session, run it, return the result."""
    return OtSession(params, rng, n=n, **kw).run()
