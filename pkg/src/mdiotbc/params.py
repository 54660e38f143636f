"""Parameter records shared by the bound formulas, solvers and protocols."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Optional, Union


class Protocol(str, Enum):
    """Round-count / entropy-rate regimes."""

    BC_PERFECT = "bc-perfect"
    OT = "ot"
    BC_DECOY = "bc-decoy"


@dataclass(frozen=True)
class Infeasible:
    """First-class infeasibility marker.

    ``what`` names the violated factor (e.g. ``"alpha2"``, ``"lambda"``);
    ``detail`` carries a human-readable diagnostic.  Returned, never raised,
    so callers must branch on it explicitly.
    """

    what: str
    detail: str = ""

    def __bool__(self) -> bool:  # an Infeasible result is falsy on purpose
        return False


Feasible = Union[float, Infeasible]


@dataclass(frozen=True)
class SecurityParams:
    """User-chosen scalars driving every bound and protocol check.

    epsilon   security parameter, strictly inside (0, 1)
    l         output string length in bits
    D         adversary quantum-memory bound in qubits
    e_err     expected error rate between the honest parties' sifted strings
    gamma     multiphoton tolerance (fraction of retained rounds that may leak)
    mu        sender's basis-guess bias on leaked rounds, in (0, 1]
    p_fail    Bell-measurement failure probability
    delta_t   wait time before basis reveal; a trace annotation only -- the
              storage bound is enforced at the reveal boundary, not here
    n_max     scan cap for the implicit round-count solvers
    c_ec      slack constant for the error-correction leak (c_ec * sqrt(n)
              bits on top of h(e_err) * n); the asymptotic analysis leaves
              the constant open, so it is surfaced here (default 0)
    lambda_smoothing
              when True (default) the perfect-source min-entropy rate
              includes the conservative -log2(2/eps^2)/n smoothing term;
              False drops it (the two published forms differ)
    """

    epsilon: float
    l: int
    D: int = 0
    e_err: float = 0.0
    gamma: float = 0.0
    mu: float = 1.0
    p_fail: float = 0.0
    delta_t: float = 0.0
    n_max: int = 2**24
    c_ec: float = 0.0
    lambda_smoothing: bool = True

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must be in (0,1), got {self.epsilon}")
        if self.l < 1:
            raise ValueError(f"l must be a positive integer, got {self.l}")
        if self.D < 0:
            raise ValueError(f"D must be non-negative, got {self.D}")
        if not 0.0 <= self.e_err < 0.5:
            raise ValueError(f"e_err must be in [0, 1/2), got {self.e_err}")
        if not 0.0 <= self.gamma <= 0.5:
            raise ValueError(f"gamma must be in [0, 1/2], got {self.gamma}")
        if not 0.0 < self.mu <= 1.0:
            raise ValueError(f"mu must be in (0, 1], got {self.mu}")
        if not 0.0 <= self.p_fail <= 1.0:
            raise ValueError(f"p_fail must be in [0,1], got {self.p_fail}")
        if self.delta_t < 0:
            raise ValueError(f"delta_t must be non-negative, got {self.delta_t}")
        if self.n_max < 1:
            raise ValueError(f"n_max must be positive, got {self.n_max}")
        if self.c_ec < 0:
            raise ValueError(f"c_ec must be non-negative, got {self.c_ec}")

    def replace(self, **kw) -> "SecurityParams":
        current = {f.name: getattr(self, f.name) for f in fields(self)}
        current.update(kw)
        return SecurityParams(**current)


@dataclass(frozen=True)
class DecoyContext:
    """Counts and fractions that feed the decoy-variant fluctuation terms.

    ``n_signal_a`` / ``n_signal_b`` are each party's signal rounds that
    clicked; ``f_signal_b`` is the observed fraction of those rounds of
    Alice's in which Bob also used his signal intensity (and vice versa).
    When used inside a solver (before any observation exists) the caller
    substitutes expectations: f = p and n_signal = n / p.
    """

    gamma: float
    p_signal_a: float
    p_signal_b: float
    f_signal_a: float
    f_signal_b: float
    n_signal_a: float
    n_signal_b: float


@dataclass(frozen=True)
class FluctuationTerms:
    """Closed-form statistical-fluctuation allowances at block length n.

    The decoy-only terms are ``None`` when no :class:`DecoyContext` was
    supplied.  Terms whose defining expression divides by a non-positive
    quantity come back as :class:`Infeasible`, never as NaN.
    """

    alpha1: float
    alpha2: Feasible
    beta_a: Optional[float] = None
    beta_b: Optional[float] = None
    alpha4_a: Optional[Feasible] = None
    alpha4_b: Optional[Feasible] = None
    alpha1_dprime: Optional[Feasible] = None
    alpha1_prime: Optional[Feasible] = None
    alpha3: Optional[Feasible] = None


@dataclass(frozen=True)
class RoundPlan:
    """Solver output: the smallest feasible click count n (and, for the
    decoy variant, the total round count N)."""

    n: int
    N: Optional[int] = None
    rate: float = 0.0       # min-entropy rate lambda at n
    delta: float = 0.0      # code-distance / error parameter delta at n
    margin: float = 0.0     # slack of the defining inequality at n, in bits
    diagnostics: dict = field(default_factory=dict)
