import numpy as np
import pytest

from mdiotbc.bc import (BcSession, bc_cheating_open, honest_bc_run,
                        knowledge_biased_codeword_flip, min_weight_codeword_flip,
                        prescribed_code_dimension)
from mdiotbc.bounds import fluctuation_terms
from mdiotbc.channel import SourceModel
from mdiotbc.decoy import ChernoffEps
from mdiotbc.errors import PhaseError, StrategyImpossible
from mdiotbc.gf2 import min_distance, sample_code, syndrome
from mdiotbc.params import Infeasible, SecurityParams
from mdiotbc.adversary import sample_leakage
from mdiotbc.trace import TraceRecorder

from conftest import three_sigma

PARAMS = SecurityParams(epsilon=0.1, l=8, e_err=0.02, p_fail=0.2)


class TestHonestSession:
    def test_accepts_and_outputs_match(self, rng_factory):
        rec = honest_bc_run(PARAMS, rng_factory("bc-h", 0), clicks=300, code_dim=4)
        assert rec["accepted"] and rec["c_matches"]

    def test_shapes_and_message_sizes(self, rng_factory):
        trace = TraceRecorder()
        session = BcSession(PARAMS, rng_factory("bc-h", 1), clicks=200, code_dim=4, trace=trace)
        session.prepare()
        commit = session.commit()
        n = session.n
        assert len(commit.c) == PARAMS.l
        assert len(commit.w) == n - 4
        assert len(commit.seed.diagonal) == n + PARAMS.l - 1
        by_type = {line["message_type"]: line for line in trace.lines}
        assert by_type["theta_reveal"]["bits"] == n
        assert by_type["syndrome"]["bits"] == n - 4
        assert by_type["hash_seed"]["bits"] == n + PARAMS.l - 1

    def test_correctness_monte_carlo(self, rng_factory):
        # honest-honest runs: abort or output mismatch at most 3*eps + 3 sigma
        trials, bad = 1000, 0
        for t in range(trials):
            rec = honest_bc_run(PARAMS, rng_factory("bc-mc", t), clicks=300, code_dim=4)
            if not (rec["accepted"] and rec["c_matches"]):
                bad += 1
        assert bad / trials <= 3 * PARAMS.epsilon + three_sigma(3 * PARAMS.epsilon, trials)

    def test_noiseless_zero_disagreement_accepts(self, rng_factory):
        quiet = SecurityParams(epsilon=0.1, l=8, e_err=0.0, p_fail=0.0)
        rec = honest_bc_run(quiet, rng_factory("bc-h", 2), clicks=200, code_dim=4)
        assert rec["accepted"]

    def test_phase_order_enforced(self, rng_factory):
        session = BcSession(PARAMS, rng_factory("bc-h", 3), clicks=100, code_dim=4)
        with pytest.raises(PhaseError):
            session.commit()
        session.prepare()
        with pytest.raises(PhaseError):
            session.open(np.zeros(session.n, dtype=np.uint8))

    def test_solver_infeasible_params_rejected(self, rng_factory):
        bad = SecurityParams(epsilon=0.05, l=8, e_err=0.25, n_max=30_000)
        with pytest.raises(ValueError):
            BcSession(bad, rng_factory("bc-h", 4))


class TestOpenChecks:
    def test_syndrome_mismatch_rejected(self, rng_factory):
        session = BcSession(PARAMS, rng_factory("bc-o", 0), clicks=200, code_dim=4)
        session.prepare()
        session.commit()
        flipped = session.x.copy()
        flipped[0] ^= 1  # weight-1 offsets leave the coset whenever d >= 2
        if min_distance(session.code) >= 2:
            outcome = session.open(flipped)
            assert not outcome.accepted and outcome.reason == "syndrome-mismatch"

    def test_error_window_rejection(self, rng_factory):
        # open a different codeword: syndrome matches, disagreements explode
        session = BcSession(PARAMS, rng_factory("bc-o", 1), clicks=200, code_dim=4)
        session.prepare()
        session.commit()
        outcome = bc_cheating_open(session, None, min_weight_codeword_flip)
        assert not outcome.accepted
        assert outcome.reason == "error-window"

    def test_committed_abort_reason_and_uniform_output(self, rng_factory):
        rejected_bits = []
        for t in range(60):
            session = BcSession(PARAMS, rng_factory("bc-o", 2, t), clicks=200, code_dim=4)
            session.prepare()
            session.I = session.I[: len(session.I) // 4]  # force the sift-count check to fail
            session.x_hat_I = session.x_hat_I[: len(session.I)]
            session.commit()
            assert "sift-count" in session.bob_abort
            outcome = session.open(session.x)
            assert not outcome.accepted and outcome.reason == "committed-abort"
            rejected_bits.append(outcome.c_tilde)
        freq = np.mean(np.concatenate(rejected_bits))
        assert abs(freq - 0.5) <= three_sigma(0.5, 60 * PARAMS.l)

    def test_open_length_checked(self, rng_factory):
        session = BcSession(PARAMS, rng_factory("bc-o", 3), clicks=100, code_dim=4)
        session.prepare()
        session.commit()
        with pytest.raises(ValueError):
            session.open(np.zeros(session.n - 1, dtype=np.uint8))


class TestAbortInvisibility:
    def test_messages_identical_with_and_without_abort(self, rng_factory):
        """A run with abort-pending emits byte-identical messages; only the
        terminal outputs differ."""
        traces = []
        for tamper in (False, True):
            trace = TraceRecorder()
            session = BcSession(PARAMS, rng_factory("bc-a", 0), clicks=150, code_dim=4, trace=trace)
            session.prepare()
            if tamper:
                session.bob_abort.append("sift-count")
            session.commit()
            session.open(session.x)
            traces.append(trace.lines)
        assert traces[0] == traces[1]


class TestBindingPerfect:
    def test_min_weight_flip_caught(self, rng_factory):
        params = SecurityParams(epsilon=0.05, l=8, e_err=0.02, p_fail=0.0)
        n = 400
        terms = fluctuation_terms(n, params)
        required = 2 * (params.e_err + 2 * terms.alpha2) * n
        rng = rng_factory("bc-b", 0)
        code = sample_code(n, 4, rng)
        while min_distance(code) < required:
            code = sample_code(n, 4, rng)
        accepts = 0
        trials = 120
        for t in range(trials):
            session = BcSession(params, rng_factory("bc-b", 1, t), clicks=n, code=code)
            session.prepare()
            session.commit()
            outcome = bc_cheating_open(session, None, min_weight_codeword_flip)
            accepts += outcome.accepted
        assert accepts / trials <= params.epsilon + three_sigma(params.epsilon, trials)

    def test_equal_syndrome_strings_differ_by_distance(self, rng_factory):
        # binding geometry: same syndrome <=> difference is a codeword
        code = sample_code(10, 4, rng_factory("bc-b", 2))
        d = min_distance(code)
        from mdiotbc.gf2 import int_to_bits
        for x_val in (0, 341, 1023):
            x = int_to_bits(x_val, 10)
            sx = syndrome(code, x)
            for other in range(1024):
                y = int_to_bits(other, 10)
                if np.array_equal(syndrome(code, y), sx) and other != x_val:
                    assert int((x ^ y).sum()) >= d

    def test_strategy_impossible_without_codewords(self, rng_factory):
        session = BcSession(PARAMS, rng_factory("bc-b", 3), clicks=24, code_dim=0)
        session.prepare()
        session.commit()
        with pytest.raises(StrategyImpossible):
            bc_cheating_open(session, None, min_weight_codeword_flip)


class TestPrescribedCodeDimension:
    def test_prescribed_rate(self):
        import math
        k = prescribed_code_dimension(1000, 0.05, 0.1)
        from mdiotbc.bounds import binary_entropy
        rate = math.log(0.05) / 1000 + 1 - binary_entropy(0.1)
        assert k == math.ceil(rate * 1000)

    def test_nonpositive_rate_flagged(self):
        assert isinstance(prescribed_code_dimension(100, 0.05, 0.5), Infeasible)


@pytest.fixture(scope="module")
def decoy_source():
    return SourceModel.coherent({"s": 0.25, "d1": 0.12, "d2": 0.05},
                                {"s": 0.5, "d1": 0.25, "d2": 0.25})


class TestDecoySession:
    def test_honest_run_keeps_and_accepts(self, rng_factory, decoy_source):
        # finite-size decoy estimation needs millions of rounds before the
        # multiphoton check clears; one integration run at that scale
        params = SecurityParams(epsilon=0.05, l=16, e_err=0.01, gamma=0.49, p_fail=0.1)
        eps = ChernoffEps(0.001, 0.001, 0.001, 0.001)
        session = BcSession(params, rng_factory("bc-d", 0), variant="decoy",
                            source_a=decoy_source, source_b=decoy_source,
                            total_rounds=8_000_000, clicks=1000,
                            syndrome_bits=16, decoy_eps=eps)
        session.prepare()
        assert session.alice_abort == [] and session.bob_abort == []
        commit = session.commit()
        outcome = session.open(session.x)
        assert outcome.accepted
        assert np.array_equal(outcome.c_tilde, commit.c)

    def test_multiphoton_check_aborts_at_small_scale(self, rng_factory, decoy_source):
        # at short block lengths the estimator cannot clear the tolerance:
        # the session must finish with abort-pending set, not crash
        params = SecurityParams(epsilon=0.05, l=8, e_err=0.01, gamma=0.1, p_fail=0.1)
        eps = ChernoffEps(0.001, 0.001, 0.001, 0.001)
        session = BcSession(params, rng_factory("bc-d", 1), variant="decoy",
                            source_a=decoy_source, source_b=decoy_source,
                            total_rounds=1_000_000, clicks=100,
                            syndrome_bits=16, decoy_eps=eps)
        session.prepare()
        assert "multiphoton" in session.alice_abort
        session.commit()
        outcome = session.open(session.x)
        assert not outcome.accepted and outcome.reason == "committed-abort"
        assert isinstance(session.alice_output(), np.ndarray)  # uniformized terminal string

    def test_two_sided_sift_window(self, rng_factory, decoy_source):
        params = SecurityParams(epsilon=0.05, l=8, e_err=0.01, gamma=0.1, p_fail=0.1)
        eps = ChernoffEps(0.01, 0.01, 0.01, 0.01)
        session = BcSession(params, rng_factory("bc-d", 2), variant="decoy",
                            source_a=decoy_source, source_b=decoy_source,
                            total_rounds=150_000, clicks=100,
                            syndrome_bits=16, decoy_eps=eps)
        session.prepare()
        session.I = np.arange(session.n)  # all-match is far above the window
        session.x_hat_I = np.zeros(session.n, dtype=np.uint8)
        session.commit()
        assert "sift-count" in session.bob_abort


def _screened_code_generator_first(n, k, required, rng):
    """Sample a dimension-k code by its generator until the minimum distance
    clears ``required``, then assemble the parity check from the RREF (cheap
    at any n, unlike the nullspace of a random (n-k) x n check)."""
    from mdiotbc.gf2 import LinearCode, pack_rows
    while True:
        G = rng.integers(0, 2, size=(k, n), dtype=np.uint8)
        pivots, row = [], 0
        for col in range(n):
            if row == k:
                break
            hits = np.nonzero(G[row:, col])[0]
            if hits.size == 0:
                continue
            piv = row + int(hits[0])
            if piv != row:
                G[[row, piv]] = G[[piv, row]]
            mask = G[:, col].astype(bool).copy()
            mask[row] = False
            if mask.any():
                G[mask] ^= G[row]
            pivots.append(col)
            row += 1
        if row < k:
            continue
        best = n + 1
        for msg in range(1, 1 << k):
            cw = np.zeros(n, dtype=np.uint8)
            for i in range(k):
                if (msg >> i) & 1:
                    cw ^= G[i]
            best = min(best, int(cw.sum()))
        if best < required:
            continue
        free = [c for c in range(n) if c not in pivots]
        H = np.zeros((n - k, n), dtype=np.uint8)
        for i, fc in enumerate(free):
            H[i, fc] = 1
            for j, pc in enumerate(pivots):
                H[i, pc] = G[j, fc]
        return LinearCode(n=n, k=k, parity_packed=pack_rows(H), known_generator=G)


class TestBindingDecoy:
    def test_knowledge_biased_flip_caught(self, rng_factory, decoy_source):
        """Dishonest committer with multiphoton side knowledge against the
        decoy variant.  The receiver's own estimation checks cannot clear at
        this block length, so they are cleared by hand: the binding bound is
        about the open-phase checks, which abort-pending rejection would
        satisfy vacuously."""
        params = SecurityParams(epsilon=0.25, l=8, e_err=0.01, gamma=0.1, p_fail=0.1)
        eps = ChernoffEps(0.01, 0.01, 0.01, 0.01)
        gamma, mu = 0.1, 0.9
        trials, accepts = 60, 0
        code_rng = rng_factory("bc-db", "codes")
        for t in range(trials):
            session = BcSession(params, rng_factory("bc-db", t), variant="decoy",
                                source_a=decoy_source, source_b=decoy_source,
                                total_rounds=180_000, clicks=100,
                                code_dim=4, decoy_eps=eps)
            session.prepare()
            n = session.n
            terms = fluctuation_terms(n, params)
            from mdiotbc.params import DecoyContext
            est = session.estimation
            ctx = DecoyContext(gamma=gamma, p_signal_a=0.5, p_signal_b=0.5,
                               f_signal_a=est["f_as"], f_signal_b=est["f_bs"],
                               n_signal_a=est["n_sig_a"], n_signal_b=est["n_sig_b"])
            full = fluctuation_terms(n, params, ctx)
            gb = gamma + full.alpha4_b
            required = 2 * ((0.5 + full.alpha1_prime) * gb + full.alpha3
                            + (params.e_err + full.alpha2) * (0.5 + full.alpha1)
                            / ((0.5 - full.alpha1_prime) * (1 - gb))) * n
            assert required <= n, "distance requirement must be satisfiable"
            session.code_override = _screened_code_generator_first(n, 4, required, code_rng)
            session.alice_abort.clear()
            session.bob_abort.clear()
            session.commit()
            knowledge = sample_leakage(session.I, n, gamma, mu, session.rng)
            outcome = bc_cheating_open(session, knowledge, knowledge_biased_codeword_flip)
            accepts += outcome.accepted
            if not outcome.accepted:
                assert outcome.reason == "error-window"
        bound = (params.epsilon + 16 * (eps.epsilon + eps.eps_var + eps.eps_hat) + 8 * eps.eps1
                 + three_sigma(0.5, trials))
        assert accepts / trials <= bound
