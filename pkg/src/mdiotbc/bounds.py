"""Scalar security-bound formulas and the implicit round-count solvers.

Conventions: ``log`` written as log2 is base 2, ``ln`` is natural; every
formula below states which it uses.  All functions are pure; infeasibility
is reported through :class:`~mdiotbc.params.Infeasible` values rather than
exceptions so solvers can keep scanning.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .errors import ValidityViolation
from .params import DecoyContext, Feasible, FluctuationTerms, Infeasible, Protocol, RoundPlan, SecurityParams

_LN2 = math.log(2.0)

# Bisection depth for inverting g(x) = h(x) + x - 1 on [0, 1/2]; 45 halvings
# of an interval of length 1/2 land below the 1e-12 absolute tolerance.
_BISECT_STEPS = 45


def binary_entropy(x):
    """Binary entropy h(x) = -x*log2(x) - (1-x)*log2(1-x), with h(0)=h(1)=0.

    Accepts a float or an ndarray; raises ValueError outside [0, 1].
    """
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError(f"binary_entropy argument outside [0,1]: {x}")
    interior = np.clip(arr, 1e-300, 1.0)
    one_minus = np.clip(1.0 - arr, 1e-300, 1.0)
    out = -(arr * np.log2(interior) + (1.0 - arr) * np.log2(one_minus))
    out = np.where((arr == 0.0) | (arr == 1.0), 0.0, out)
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def _g(x):
    return binary_entropy(x) + np.asarray(x, dtype=float) - 1.0


def _g_inverse(target: np.ndarray) -> np.ndarray:
    """Invert g on [0, 1/2] by simultaneous bisection (g is strictly
    increasing there, from g(0) = -1 to g(1/2) = 1/2)."""
    lo = np.zeros_like(target)
    hi = np.full_like(target, 0.5)
    for _ in range(_BISECT_STEPS):
        mid = 0.5 * (lo + hi)
        below = _g(mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def bounded_storage_rate(x):
    """Min-entropy-rate floor as a function of the (negated) storage rate.

    Piecewise: 0 below -1, the inverse of g(x) = h(x) + x - 1 on [-1, 1/2),
    and the identity on [1/2, 1].  Arguments above 1 are rejected (a rate
    cannot exceed 1).  Accepts a float or an ndarray.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(arr > 1.0):
        raise ValueError(f"bounded_storage_rate argument above 1: {x}")
    out = np.zeros_like(arr)
    mid = (arr >= -1.0) & (arr < 0.5)
    if np.any(mid):
        out[mid] = _g_inverse(arr[mid])
    top = arr >= 0.5
    out[top] = arr[top]
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def leftover_hash_distance(h_min: float, l: int, eps_smooth: float) -> float:
    """Trace-distance bound from two-universal hashing:
    2*eps_smooth + (1/2) * 2**(-(h_min - l)/2).  May exceed 1; the caller
    interprets."""
    return 2.0 * eps_smooth + 0.5 * 2.0 ** (-(h_min - l) / 2.0)


def code_distance_tail(R: float, delta: float, n: int) -> float:
    """Probability bound 2**((R - (1 - h(delta))) * n) that a random [n, Rn]
    binary linear code has minimum distance <= delta*n."""
    return float(2.0 ** ((R - (1.0 - binary_entropy(delta))) * n))


def chernoff_deviation(x: float, y: float) -> float:
    """sqrt(2*x*ln(1/y)): the observed-value Chernoff fluctuation radius."""
    if x < 0:
        raise ValueError(f"count must be non-negative, got {x}")
    if not 0.0 < y < 1.0:
        raise ValueError(f"tail parameter must be in (0,1), got {y}")
    return math.sqrt(2.0 * x * math.log(1.0 / y))


def chernoff_fluctuations(x: float, eps_var: float, eps_hat: float) -> tuple[float, float]:
    """Lower/upper fluctuation allowances (Delta, Delta_hat) for an observed
    count x: Delta = sqrt(2x ln(16/eps_var^4)), Delta_hat = sqrt(2x ln(eps_hat^-3/2))."""
    return (
        chernoff_deviation(x, eps_var**4 / 16.0),
        chernoff_deviation(x, eps_hat**1.5),
    )


def chernoff_validity(x_cell: float, cell_total: float, epsilon: float, eps_var: float, eps_hat: float) -> float:
    """Check the validity conditions of the observed-value Chernoff bound.

    With zeta = x_cell - sqrt(cell_total/2 * ln(1/epsilon)), requires
    (2/eps_var)**(1/zeta) <= exp(3/(4*sqrt(2)))**2 and
    (1/eps_hat)**(1/zeta) < exp(1/3).  Returns zeta on success; raises
    ValidityViolation (naming the failed condition) otherwise.
    """
    zeta = x_cell - math.sqrt(cell_total / 2.0 * math.log(1.0 / epsilon))
    if zeta <= 0.0:
        raise ValidityViolation("zeta_nonpositive", f"zeta={zeta:.4g} (x={x_cell}, total={cell_total})")
    # compare in log space: ln(2/eps_var)/zeta <= 3/(2*sqrt(2))
    if math.log(2.0 / eps_var) / zeta > 3.0 / (2.0 * math.sqrt(2.0)):
        raise ValidityViolation("eps_var_condition", f"zeta={zeta:.4g} too small for eps_var={eps_var}")
    if math.log(1.0 / eps_hat) / zeta >= 1.0 / 3.0:
        raise ValidityViolation("eps_hat_condition", f"zeta={zeta:.4g} too small for eps_hat={eps_hat}")
    return zeta


def fluctuation_terms(n: int, params: SecurityParams, decoy: Optional[DecoyContext] = None) -> FluctuationTerms:
    """All closed-form fluctuation allowances at click count n.

    alpha1 = sqrt(ln(1/eps) / (2n)) and
    alpha2 = sqrt(ln(1/eps) / (2(1/2 - alpha1)n)) always; the decoy family
    (beta, alpha4, alpha1'', alpha1', alpha3) only when ``decoy`` is given,
    computed in dependency order.  Division by a non-positive quantity
    yields an Infeasible marker in that slot.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    L = math.log(1.0 / params.epsilon)
    alpha1 = math.sqrt(L / (2.0 * n))
    a2_den = 0.5 - alpha1
    alpha2: Feasible
    if a2_den > 0.0:
        alpha2 = math.sqrt(L / (2.0 * a2_den * n))
    else:
        alpha2 = Infeasible("alpha2", f"1/2 - alpha1 = {a2_den:.4g} <= 0 at n={n}")
    if decoy is None:
        return FluctuationTerms(alpha1=alpha1, alpha2=alpha2)

    def _beta(count: float, name: str) -> Feasible:
        if count <= 0:
            return Infeasible(name, "no signal successes observed")
        return math.sqrt(L / (2.0 * count))

    beta_a = _beta(decoy.n_signal_a, "beta_a")
    beta_b = _beta(decoy.n_signal_b, "beta_b")

    def _alpha4(beta: Feasible, p_sig: float, f_sig: float, name: str) -> Feasible:
        if isinstance(beta, Infeasible):
            return Infeasible(name, f"depends on infeasible {beta.what}")
        if p_sig <= 0.0 or f_sig <= 0.0:
            return Infeasible(name, f"non-positive signal probability/fraction (p={p_sig}, f={f_sig})")
        return (2.0 / p_sig + 1.0 / f_sig) * beta

    alpha4_a = _alpha4(beta_a, decoy.p_signal_b, decoy.f_signal_b, "alpha4_a")
    alpha4_b = _alpha4(beta_b, decoy.p_signal_a, decoy.f_signal_a, "alpha4_b")

    if isinstance(alpha4_b, Infeasible):
        dep = Infeasible("alpha1_dprime", "depends on infeasible alpha4_b")
        return FluctuationTerms(alpha1, alpha2, beta_a, beta_b, alpha4_a, alpha4_b,
                                dep, Infeasible("alpha1_prime", dep.detail), Infeasible("alpha3", dep.detail))

    gb = decoy.gamma + alpha4_b
    one_minus = 1.0 - gb
    alpha1_dprime: Feasible
    if one_minus > 0.0:
        alpha1_dprime = math.sqrt(L / (2.0 * one_minus * n))
    else:
        alpha1_dprime = Infeasible("alpha1_dprime", f"1 - gamma - alpha4_b = {one_minus:.4g} <= 0")

    alpha1_prime: Feasible
    if isinstance(alpha1_dprime, Infeasible):
        alpha1_prime = Infeasible("alpha1_prime", "depends on infeasible alpha1_dprime")
    elif gb <= 0.0:
        alpha1_prime = Infeasible("alpha1_prime", "gamma + alpha4_b is zero")
    else:
        alpha1_prime = min(0.5, (alpha1 + one_minus * alpha1_dprime) / gb)

    alpha3: Feasible
    if isinstance(alpha1_prime, Infeasible):
        alpha3 = Infeasible("alpha3", "depends on infeasible alpha1_prime")
    else:
        bracket = 0.5 - alpha1_dprime - (0.5 + alpha1_prime) * gb
        if bracket > 0.0:
            alpha3 = math.sqrt(L / (2.0 * n * bracket))
        else:
            alpha3 = Infeasible("alpha3", f"bracket 1/2 - alpha1'' - (1/2+alpha1')(gamma+alpha4_b) = {bracket:.4g} <= 0")

    return FluctuationTerms(alpha1, alpha2, beta_a, beta_b, alpha4_a, alpha4_b,
                            alpha1_dprime, alpha1_prime, alpha3)


def min_entropy_rate(mode: Protocol, n: int, params: SecurityParams,
                     gamma_plus_alpha4: Optional[float] = None) -> Feasible:
    """Smooth min-entropy rate lower bound per retained round.

    bc-perfect: f(-D/n) - 1/n - log2(2/eps^2)/n (the smoothing term is
    dropped when ``params.lambda_smoothing`` is False).
    ot:         1/2 - 2*delta' with
                delta' = (2 - log2(sqrt(32 ln(1/eps)/n))) * sqrt(32 ln(1/eps)/n),
                valid only for n >= 32 ln(1/eps).
    bc-decoy:   f(-D/n) - (gamma + alpha4_a) - 1/n, with the caller-supplied
                gamma + alpha4_a.
    Returns Infeasible when the rate is not positive.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    eps = params.epsilon
    if mode is Protocol.BC_PERFECT:
        lam = bounded_storage_rate(-params.D / n) - 1.0 / n
        if params.lambda_smoothing:
            lam -= math.log2(2.0 / eps**2) / n
    elif mode is Protocol.OT:
        L = math.log(1.0 / eps)
        if n < 32.0 * L:
            return Infeasible("lambda", f"ot rate formula requires n >= 32 ln(1/eps) = {32 * L:.1f}")
        u = math.sqrt(32.0 * L / n)
        delta_prime = (2.0 - math.log2(u)) * u
        lam = 0.5 - 2.0 * delta_prime
    elif mode is Protocol.BC_DECOY:
        if gamma_plus_alpha4 is None:
            raise ValueError("bc-decoy rate needs gamma_plus_alpha4")
        lam = bounded_storage_rate(-params.D / n) - gamma_plus_alpha4 - 1.0 / n
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if lam <= 0.0:
        return Infeasible("lambda", f"rate {lam:.4g} <= 0 at n={n}")
    return lam


def conditional_min_entropy(joint) -> float:
    """Exact H_min(X|K) = -log2 sum_k max_x p(x, k) for a classical joint
    pmf given as a 2-D array with rows indexed by x and columns by k."""
    p = np.asarray(joint, dtype=float)
    if p.ndim != 2:
        raise ValueError(f"joint pmf must be 2-D, got shape {p.shape}")
    if np.any(p < 0.0):
        raise ValueError("joint pmf has negative entries")
    total = float(p.sum())
    if abs(total - 1.0) > 1e-12:
        raise ValueError(f"joint pmf sums to {total}, not 1 (tolerance 1e-12)")
    p_guess = float(p.max(axis=0).sum())
    return -math.log2(p_guess)


# ---------------------------------------------------------------------------
# Implicit round-count solvers
# ---------------------------------------------------------------------------

_BLOCKER_NAMES = {1: "alpha2", 2: "delta", 3: "lambda", 4: "margin", 5: "alpha_chain"}


def _bc_margins(mode: Protocol, n: np.ndarray, params: SecurityParams,
                p_as: float = 1.0, p_bs: float = 1.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Margin of the commitment round inequality (lhs - rhs, in bits) at each
    n, a computability mask, and per-n blocker codes where not satisfied.

    All n-dependent terms (alpha's, delta, lambda) are recomputed at each n.
    For bc-decoy the solver substitutes expectations for the not-yet-observed
    fractions and counts: f = p and n_signal = n / p.
    """
    eps = params.epsilon
    L = math.log(1.0 / eps)
    rhs = params.l + 2.0 * math.log2(1.0 / (2.0 * eps)) + L

    nf = n.astype(float)
    blocker = np.zeros(n.shape, dtype=np.int8)
    alpha1 = np.sqrt(L / (2.0 * nf))
    a2_den = 0.5 - alpha1
    ok = a2_den > 0.0
    blocker[~ok] = 1
    alpha2 = np.full_like(nf, np.nan)
    alpha2[ok] = np.sqrt(L / (2.0 * a2_den[ok] * nf[ok]))

    if mode is Protocol.BC_PERFECT:
        delta = 2.0 * params.e_err + 2.0 * alpha2
        lam = bounded_storage_rate(np.maximum(-params.D / nf, -2.0)) - 1.0 / nf
        if params.lambda_smoothing:
            lam = lam - math.log2(2.0 / eps**2) / nf
    else:  # BC_DECOY with expectation-substituted context
        beta_a = np.sqrt(L * p_bs / (2.0 * nf))    # counts n/p_bs
        beta_b = np.sqrt(L * p_as / (2.0 * nf))
        alpha4_a = (3.0 / p_bs) * beta_a           # (2/p + 1/f) with f = p
        alpha4_b = (3.0 / p_as) * beta_b
        gb = params.gamma + alpha4_b
        one_minus = 1.0 - gb
        chain_ok = ok & (one_minus > 0.0) & (gb > 0.0)
        blocker[ok & ~chain_ok] = 5
        ok = chain_ok
        a1dp = np.full_like(nf, np.nan)
        a1dp[ok] = np.sqrt(L / (2.0 * one_minus[ok] * nf[ok]))
        a1p = np.minimum(0.5, (alpha1 + one_minus * a1dp) / np.where(gb > 0, gb, np.nan))
        bracket = 0.5 - a1dp - (0.5 + a1p) * gb
        chain_ok = ok & (bracket > 0.0) & (a1p < 0.5)
        blocker[ok & ~chain_ok] = 5
        ok = chain_ok
        alpha3 = np.full_like(nf, np.nan)
        alpha3[ok] = np.sqrt(L / (2.0 * nf[ok] * bracket[ok]))
        with np.errstate(divide="ignore", invalid="ignore"):  # masked-out n only
            delta = 2.0 * ((0.5 + a1p) * gb + alpha3
                           + (params.e_err + alpha2) * (0.5 + alpha1) / ((0.5 - a1p) * one_minus))
        lam = (bounded_storage_rate(np.maximum(-params.D / nf, -2.0))
               - (params.gamma + alpha4_a) - 1.0 / nf)

    delta_ok = ok & (delta <= 1.0) & (delta >= 0.0)
    blocker[ok & ~delta_ok] = 2
    ok = delta_ok
    h_delta = np.zeros_like(nf)
    h_delta[ok] = binary_entropy(delta[ok])
    lam_ok = ok & (lam > 0.0)
    blocker[ok & ~lam_ok] = 3
    margin = np.where(ok, (lam - h_delta) * nf - rhs, -np.inf)
    blocker[lam_ok & (margin < 0.0)] = 4
    satisfied = ok & (margin >= 0.0)
    return margin, satisfied, blocker


def _ot_margins(n: np.ndarray, params: SecurityParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Margin of the transfer round inequality
    n*(lambda - 2*alpha1) - leak_total >= 2*(l + D + 1 - 2*log2(1 - sqrt(1-eps^2)))
    with leak_total = h(e_err)*n + c_ec*sqrt(n)."""
    eps = params.epsilon
    L = math.log(1.0 / eps)
    rhs = 2.0 * (params.l + params.D + 1.0 - 2.0 * math.log2(1.0 - math.sqrt(1.0 - eps**2)))
    nf = n.astype(float)
    blocker = np.zeros(n.shape, dtype=np.int8)
    ok = nf >= 32.0 * L
    blocker[~ok] = 3
    u = np.full_like(nf, np.nan)
    u[ok] = np.sqrt(32.0 * L / nf[ok])
    with np.errstate(invalid="ignore"):
        lam = 0.5 - 2.0 * (2.0 - np.log2(u)) * u
    lam_ok = ok & (lam > 0.0)
    blocker[ok & ~lam_ok] = 3
    ok = lam_ok
    alpha1 = np.sqrt(L / (2.0 * nf))
    leak = binary_entropy(params.e_err) * nf + params.c_ec * np.sqrt(nf)
    margin = np.where(ok, nf * (lam - 2.0 * alpha1) - leak - rhs, -np.inf)
    blocker[ok & (margin < 0.0)] = 4
    satisfied = ok & (margin >= 0.0)
    return margin, satisfied, blocker


def round_inequality_margin(mode: Protocol, n: int, params: SecurityParams,
                            p_as: float = 1.0, p_bs: float = 1.0) -> float:
    """Scalar margin (lhs - rhs, bits) of the mode's round inequality at n;
    -inf where the inequality is not even computable.  Shares its code with
    the solver scan, so re-verification sees the same arithmetic."""
    arr = np.asarray([n], dtype=np.int64)
    if mode is Protocol.OT:
        margin, _, _ = _ot_margins(arr, params)
    else:
        margin, _, _ = _bc_margins(mode, arr, params, p_as, p_bs)
    return float(margin[0])


def _smallest_total_rounds(n_star: int, p: float, L: float, cap: int) -> int | Infeasible:
    """Smallest N with (p - sqrt(L/(2N))) * N >= n_star."""
    if p <= 0.0:
        return Infeasible("retention", f"non-discard probability p = {p:.4g} <= 0")

    def holds(N: int) -> bool:
        return N > 0 and (p - math.sqrt(L / (2.0 * N))) * N >= n_star

    # closed-form seed from the quadratic in sqrt(N), then walk to the edge
    s = (math.sqrt(L / 2.0) + math.sqrt(L / 2.0 + 4.0 * p * n_star)) / (2.0 * p)
    N = max(1, int(s * s))
    while not holds(N):
        N += 1
        if N > cap:
            return Infeasible("total_rounds", f"no N <= {cap} reaches n* = {n_star}")
    while N > 1 and holds(N - 1):
        N -= 1
    return N


def solve_rounds(mode: Protocol, params: SecurityParams,
                 p_as: float = 1.0, p_bs: float = 1.0) -> RoundPlan | Infeasible:
    """Scan n = 1..n_max for the smallest click count satisfying the mode's
    round inequality, recomputing every n-dependent term at each n.

    For bc-decoy, additionally solves for the smallest total round count N
    with (p - sqrt(ln(1/eps)/(2N))) * N >= n*, where p = p_as*p_bs*(1-p_fail).
    The inequality is not provably monotone in n, so the scan is linear
    (vectorized in chunks); the returned n is the first satisfying one.
    """
    chunk = 1 << 17
    last_blocker = 0
    for lo in range(1, params.n_max + 1, chunk):
        hi = min(lo + chunk, params.n_max + 1)
        n_arr = np.arange(lo, hi, dtype=np.int64)
        if mode is Protocol.OT:
            margin, satisfied, blocker = _ot_margins(n_arr, params)
        else:
            margin, satisfied, blocker = _bc_margins(mode, n_arr, params, p_as, p_bs)
        if satisfied.any():
            idx = int(np.argmax(satisfied))
            n_star = int(n_arr[idx])
            plan = _finish_plan(mode, n_star, float(margin[idx]), params, p_as, p_bs)
            return plan
        last_blocker = int(blocker[-1])
    name = _BLOCKER_NAMES.get(last_blocker, "margin")
    return Infeasible("rounds", f"no n <= {params.n_max} satisfies the {mode.value} inequality "
                                f"(blocking factor at the cap: {name})")


def _finish_plan(mode: Protocol, n_star: int, margin: float, params: SecurityParams,
                 p_as: float, p_bs: float) -> RoundPlan | Infeasible:
    eps = params.epsilon
    L = math.log(1.0 / eps)
    terms = fluctuation_terms(n_star, params)
    if mode is Protocol.OT:
        lam = min_entropy_rate(Protocol.OT, n_star, params)
        rate = lam if not isinstance(lam, Infeasible) else float("nan")
        return RoundPlan(n=n_star, rate=rate, delta=params.e_err, margin=margin,
                         diagnostics={"alpha1": terms.alpha1})
    if mode is Protocol.BC_PERFECT:
        lam = min_entropy_rate(Protocol.BC_PERFECT, n_star, params)
        delta = 2.0 * params.e_err + 2.0 * terms.alpha2  # feasible at n_star by construction
        return RoundPlan(n=n_star, rate=float(lam), delta=float(delta), margin=margin,
                         diagnostics={"alpha1": terms.alpha1, "alpha2": float(terms.alpha2)})
    # bc-decoy: recover the expectation-substituted terms at n*, then N
    ctx = DecoyContext(gamma=params.gamma, p_signal_a=p_as, p_signal_b=p_bs,
                       f_signal_a=p_as, f_signal_b=p_bs,
                       n_signal_a=n_star / p_bs, n_signal_b=n_star / p_as)
    terms = fluctuation_terms(n_star, params, ctx)
    lam = min_entropy_rate(Protocol.BC_DECOY, n_star, params,
                           gamma_plus_alpha4=params.gamma + terms.alpha4_a)
    gb = params.gamma + terms.alpha4_b
    delta = 2.0 * ((0.5 + terms.alpha1_prime) * gb + terms.alpha3
                   + (params.e_err + terms.alpha2) * (0.5 + terms.alpha1)
                   / ((0.5 - terms.alpha1_prime) * (1.0 - gb)))
    p = p_as * p_bs * (1.0 - params.p_fail)
    N = _smallest_total_rounds(n_star, p, L, cap=max(params.n_max * 64, 1 << 30))
    if isinstance(N, Infeasible):
        return N
    return RoundPlan(n=n_star, N=N, rate=float(lam), delta=float(delta), margin=margin,
                     diagnostics={"alpha1": terms.alpha1, "alpha2": float(terms.alpha2),
                                  "alpha4_a": float(terms.alpha4_a), "alpha4_b": float(terms.alpha4_b),
                                  "retention_p": p})
