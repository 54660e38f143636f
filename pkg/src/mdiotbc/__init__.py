"""Simulator and finite-size security-parameter engine for
measurement-device-independent bit commitment and oblivious transfer in the
bounded quantum storage model."""

__version__ = "0.1.0"

from .params import (DecoyContext, Feasible, FluctuationTerms, Infeasible,  # noqa: F401
                     Protocol, RoundPlan, SecurityParams)
from .bounds import (binary_entropy, bounded_storage_rate, chernoff_fluctuations,  # noqa: F401
                     code_distance_tail, conditional_min_entropy, fluctuation_terms,
                     leftover_hash_distance, min_entropy_rate, round_inequality_margin,
                     solve_rounds)
from .gf2 import (LinearCode, ToeplitzSeed, coset_decode, min_distance, sample_code,  # noqa: F401
                  sample_toeplitz_seed, syndrome, toeplitz_extract)
from .channel import FixedN, SourceModel, Transcript, UntilN, bell_round, run_preparation, sift  # noqa: F401
from .decoy import (ChernoffEps, CondIntensityProbs, DecoyObservation,  # noqa: F401
                    intensity_given_count, multiphoton_abort_check, s1_lower_bound,
                    single_photon_lower_bound, tally)
from .bc import BcSession, bc_cheating_open, honest_bc_run  # noqa: F401
from .ot import OtSession, bob_choice_sets, error_correct, ot_run  # noqa: F401
from .adversary import (AttackStats, BoundedBobStrategy, LeakageRecord, alice_guess,  # noqa: F401
                        bounded_bob_view, estimate_attack_advantage, exact_hiding_analysis,
                        sample_leakage)
from .rng import derive_rng  # noqa: F401
