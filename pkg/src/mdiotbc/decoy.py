"""Decoy-state tallies and the single-photon lower bound.

The estimator collapses photon numbers to the two classes {1, >=2} and, per
(outcome, basis) cell, lower-bounds the number of single-photon rounds from
the observed per-intensity counts: either through the closed-form four-vertex
minimum (exactly two decoy intensities) or by enumerating the vertices of
the planar constraint polytope (any number of decoys).  Failure outcomes
never enter the tallies.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .bounds import chernoff_deviation, chernoff_fluctuations, chernoff_validity
from .channel import PartyView
from .errors import DegenerateIntensities, ValidityViolation

_OUTCOMES = (0, 1)   # success parities
_BASES = (0, 1)


@dataclass(frozen=True)
class ChernoffEps:
    """The four tail parameters of the single-photon estimation; the overall failure
    probability is 16*(epsilon + eps_var + eps_hat) + 8*eps1."""

    epsilon: float
    eps_var: float
    eps_hat: float
    eps1: float

    def __post_init__(self):
        for name in ("epsilon", "eps_var", "eps_hat", "eps1"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must be in (0,1), got {value}")

    @property
    def failure_probability(self) -> float:
        return 16.0 * (self.epsilon + self.eps_var + self.eps_hat) + 8.0 * self.eps1


@dataclass
class DecoyObservation:
    """Counts x[outcome][basis][intensity] of non-failure rounds."""

    labels: tuple[str, ...]
    counts: np.ndarray  # (2, 2, len(labels)) int64

    def cell(self, outcome: int, basis: int) -> dict[str, int]:
        return {lab: int(self.counts[outcome, basis, i]) for i, lab in enumerate(self.labels)}

    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("outcome,basis,intensity,count\n")
        for o in _OUTCOMES:
            for th in _BASES:
                for i, lab in enumerate(self.labels):
                    out.write(f"{o},{th},{lab},{int(self.counts[o, th, i])}\n")
        return out.getvalue()


def tally(view: PartyView, mask: Optional[np.ndarray] = None) -> DecoyObservation:
    """Count the view's non-failure rounds per (outcome, basis, intensity).

    ``mask`` further restricts which rounds are counted (it is intersected
    with the success mask); by default every non-failure round counts,
    whatever the intensity pairing, since the decoys themselves are what is
    being tallied.
    """
    keep = view.success if mask is None else (view.success & mask)
    counts = np.zeros((2, 2, len(view.labels)), dtype=np.int64)
    if keep.any():
        o = view.parity[keep].astype(np.int64)
        th = view.bases[keep].astype(np.int64)
        i = view.intensity[keep].astype(np.int64)
        np.add.at(counts, (o, th, i), 1)
    return DecoyObservation(labels=view.labels, counts=counts)


@dataclass(frozen=True)
class CondIntensityProbs:
    """Bayes-inverted intensity distributions p(intensity | photon class)."""

    labels: tuple[str, ...]
    p_given_1: np.ndarray
    p_given_2plus: np.ndarray

    def given_1(self, label: str) -> float:
        return float(self.p_given_1[self.labels.index(label)])

    def given_2plus(self, label: str) -> float:
        return float(self.p_given_2plus[self.labels.index(label)])


def intensity_given_count(choice_probs: Mapping[str, float],
                          intensities: Mapping[str, float]) -> CondIntensityProbs:
    """Invert the emission statistics: starting from Poisson photon numbers,
    p(k=1 | i) = i*exp(-i) and p(k>=2 | i) = 1 - exp(-i) - i*exp(-i), return
    p(i | k) = p_i p(k|i) / sum_j p_j p(k|j) for k in {1, >=2}."""
    labels = tuple(choice_probs.keys())
    if set(labels) != set(intensities.keys()):
        raise ValueError("probability and intensity labels differ")
    probs = np.array([choice_probs[x] for x in labels], dtype=float)
    if abs(probs.sum() - 1.0) > 1e-12:
        raise ValueError(f"choice probabilities sum to {probs.sum()}, not 1")
    mu = np.array([intensities[x] for x in labels], dtype=float)
    p1 = mu * np.exp(-mu)
    p2 = 1.0 - np.exp(-mu) - p1
    joint1 = probs * p1
    joint2 = probs * p2
    if joint1.sum() <= 0.0 or joint2.sum() <= 0.0:
        raise ValueError("degenerate photon statistics: a photon-class denominator is zero")
    return CondIntensityProbs(labels=labels, p_given_1=joint1 / joint1.sum(),
                              p_given_2plus=joint2 / joint2.sum())


@dataclass(frozen=True)
class S1Bound:
    value: float
    clamped: bool = False   # negative minimum or empty feasible region hit 0


def _decoy_labels(cond: CondIntensityProbs, signal_label: str) -> list[str]:
    return [lab for lab in cond.labels if lab != signal_label]


def s1_lower_bound(x_by_label: Mapping[str, float], cond: CondIntensityProbs,
                   eps: ChernoffEps, method: str = "closed-form",
                   signal_label: str = "s", fluctuation=None) -> S1Bound:
    """Lower bound on the single-photon round count in one (outcome, basis)
    cell from its per-intensity counts.

    ``closed-form`` requires exactly two decoy intensities and returns the
    minimum of the four constraint-line intersections; ``vertex-enum``
    accepts any q >= 2 decoys, enumerates all pairwise intersections of the
    2q band lines plus the coordinate axes, keeps the vertices feasible for
    every constraint with both coordinates >= 0, and minimizes the
    single-photon coordinate.  Negative minima and empty regions clamp to 0
    with the ``clamped`` flag set.

    ``fluctuation`` optionally replaces the Chernoff allowances: a callable
    count -> (delta, delta_hat), used by exactness tests to force zero slack.
    """
    fluct = fluctuation if fluctuation is not None else (
        lambda x: chernoff_fluctuations(x, eps.eps_var, eps.eps_hat))
    decoys = _decoy_labels(cond, signal_label)
    if method == "closed-form":
        if len(decoys) != 2:
            raise ValueError(f"closed-form bound needs exactly two decoy intensities, got {len(decoys)}")
        d1, d2 = decoys
        x1, x2 = float(x_by_label[d1]), float(x_by_label[d2])
        dlt1, dhat1 = fluct(x1)
        dlt2, dhat2 = fluct(x2)
        p11, p21 = cond.given_1(d1), cond.given_2plus(d1)
        p12, p22 = cond.given_1(d2), cond.given_2plus(d2)
        den = p11 * p22 - p21 * p12
        if abs(den) < 1e-15:
            raise DegenerateIntensities(
                f"p(d1|1)p(d2|>=2) - p(d1|>=2)p(d2|1) = {den:.3g}; decoy intensities do not separate the classes")

        # Cramer solve for the single-photon coordinate of the intersection
        # of the two constraint lines at constants (c1, c2); the four extreme
        # points take each line at its upper (+Delta) or lower (-Delta_hat)
        # constant.
        def vertex(c1: float, c2: float) -> float:
            return (c1 * p22 - c2 * p21) / den

        v1 = vertex(x1 + dlt1, x2 + dlt2)
        v2 = vertex(x1 + dlt1, x2 - dhat2)
        v3 = vertex(x1 - dhat1, x2 + dlt2)
        v4 = vertex(x1 - dhat1, x2 - dhat2)
        low = min(v1, v2, v3, v4)
        return S1Bound(value=max(low, 0.0), clamped=low < 0.0)

    if method != "vertex-enum":
        raise ValueError(f"unknown method {method!r}")
    if len(decoys) < 2:
        raise ValueError(f"vertex enumeration needs q >= 2 decoy intensities, got {len(decoys)}")
    # band lines a*s1 + b*s2 = c; axes s1 = 0 and s2 = 0
    lines: list[tuple[float, float, float]] = []
    bands: list[tuple[float, float, float, float]] = []  # a, b, low, high
    for lab in decoys:
        x = float(x_by_label[lab])
        dlt, dhat = fluct(x)
        a, b = cond.given_1(lab), cond.given_2plus(lab)
        lines.append((a, b, x + dlt))
        lines.append((a, b, x - dhat))
        bands.append((a, b, x - dhat, x + dlt))
    lines.append((1.0, 0.0, 0.0))
    lines.append((0.0, 1.0, 0.0))
    scale = max(1.0, max(h for _, _, _, h in bands))
    tol = 1e-9 * scale
    best = None
    for i in range(len(lines)):
        for j in range(i + 1, len(lines)):
            a1, b1, c1 = lines[i]
            a2, b2, c2 = lines[j]
            det = a1 * b2 - a2 * b1
            if abs(det) < 1e-15:
                continue
            s1 = (c1 * b2 - c2 * b1) / det
            s2 = (a1 * c2 - a2 * c1) / det
            if s1 < -tol or s2 < -tol:
                continue
            if all(lo - tol <= a * s1 + b * s2 <= hi + tol for a, b, lo, hi in bands):
                if best is None or s1 < best:
                    best = s1
    if best is None:
        return S1Bound(value=0.0, clamped=True)
    return S1Bound(value=max(best, 0.0), clamped=best < 0.0)


@dataclass
class L1Result:
    l1: float
    per_cell: dict[tuple[int, int], float]   # clamped per-(outcome, basis) summands
    s1_min: dict[tuple[int, int], S1Bound]
    eps: ChernoffEps


def single_photon_lower_bound(obs: DecoyObservation, cond: CondIntensityProbs,
                              eps: ChernoffEps, method: str = "closed-form",
                              signal_label: str = "s") -> L1Result:
    """L1 = sum over (outcome, basis) of
    p(signal | k=1) * |S1|_min - sqrt(2 p |S1|_min ln(1/eps1)), each summand
    clamped at 0.  Holds except with probability
    16(eps + eps_var + eps_hat) + 8*eps1.

    Every intensity cell must satisfy the Chernoff validity conditions;
    the first offender raises ValidityViolation naming its cell.
    """
    p_sig1 = cond.given_1(signal_label)
    per_cell: dict[tuple[int, int], float] = {}
    s1_min: dict[tuple[int, int], S1Bound] = {}
    total = 0.0
    for o in _OUTCOMES:
        for th in _BASES:
            x_by_label = obs.cell(o, th)
            cell_total = float(sum(x_by_label.values()))
            if cell_total == 0.0:
                # nothing observed in this cell: it contributes a vacuous 0,
                # and there is no tally for the validity conditions to judge
                per_cell[(o, th)] = 0.0
                s1_min[(o, th)] = S1Bound(value=0.0, clamped=True)
                continue
            for lab, x in x_by_label.items():
                try:
                    chernoff_validity(float(x), cell_total, eps.epsilon, eps.eps_var, eps.eps_hat)
                except ValidityViolation as bad:
                    raise ValidityViolation(bad.condition,
                                            f"cell (o={o}, basis={th}, intensity={lab}): {bad.detail}") from None
            bound = s1_lower_bound(x_by_label, cond, eps, method=method, signal_label=signal_label)
            s1_min[(o, th)] = bound
            scaled = p_sig1 * bound.value
            term = scaled - chernoff_deviation(scaled, eps.eps1) if scaled > 0.0 else 0.0
            term = max(term, 0.0)
            per_cell[(o, th)] = term
            total += term
    return L1Result(l1=total, per_cell=per_cell, s1_min=s1_min, eps=eps)


@dataclass(frozen=True)
class AbortDecision:
    abort: bool
    ratio: float
    threshold: float
    reason: str = ""


def multiphoton_abort_check(l1: float, n_signal_success: int, retained_fraction: float,
                            gamma: float, alpha4: float) -> AbortDecision:
    """Abort iff U2 / (f * (n1 + n>=2)) >= gamma + alpha4 (inclusive), with
    U2 = n_signal_success - L1 the implied multiphoton upper bound."""
    threshold = gamma + alpha4
    if n_signal_success == 0:
        return AbortDecision(abort=True, ratio=math.inf, threshold=threshold,
                             reason="no signal successes observed")
    if retained_fraction <= 0.0:
        raise ValueError(f"retained fraction must be positive, got {retained_fraction}")
    ratio = (n_signal_success - l1) / (retained_fraction * n_signal_success)
    return AbortDecision(abort=ratio >= threshold, ratio=ratio, threshold=threshold,
                         reason="multiphoton ratio at or above tolerance" if ratio >= threshold else "")
