"""Abstracted quantum layer: photon sources, the probabilistic
Bell-measurement channel, and the shared preparation phase.

The measurement station is modeled at the correlation level: per round it
announces failure or a parity bit; on matching bases the parity equals
x XOR x_hat XOR noise, on mismatched bases it is a fair coin.  Every
protocol step downstream consumes only this parity/failure interface.
Dark counts are out of scope: a round in which either source emits zero
photons is forced to Failure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Optional

import numpy as np

from .errors import NoProgress

REASON_NONE = 0
REASON_FAILURE = 1
REASON_INTENSITY = 2

_REASON_NAMES = {REASON_NONE: "", REASON_FAILURE: "failure", REASON_INTENSITY: "intensity-mismatch"}


@dataclass(frozen=True)
class SourceModel:
    """A photon source: either perfect single-photon or phase-randomized
    coherent with labeled intensities (Poisson photon statistics)."""

    kind: str
    labels: tuple[str, ...]
    intensities: tuple[float, ...]
    probs: tuple[float, ...]
    signal_label: str = "s"

    def __post_init__(self):
        if self.kind not in ("perfect", "coherent"):
            raise ValueError(f"unknown source kind {self.kind!r}")
        if abs(sum(self.probs) - 1.0) > 1e-12:
            raise ValueError(f"choice probabilities sum to {sum(self.probs)}, not 1")
        if self.kind == "coherent":
            if any(i <= 0 for i in self.intensities):
                raise ValueError("intensities must be positive")
            if len(set(self.intensities)) != len(self.intensities):
                raise ValueError("intensities must be distinct")
        if self.signal_label not in self.labels:
            raise ValueError(f"signal label {self.signal_label!r} not among {self.labels}")

    @staticmethod
    def perfect() -> "SourceModel":
        return SourceModel(kind="perfect", labels=("s",), intensities=(1.0,), probs=(1.0,))

    @staticmethod
    def coherent(intensities: Mapping[str, float], probs: Mapping[str, float],
                 signal_label: str = "s") -> "SourceModel":
        labels = tuple(intensities.keys())
        if set(labels) != set(probs.keys()):
            raise ValueError("intensity and probability labels differ")
        return SourceModel(kind="coherent", labels=labels,
                           intensities=tuple(intensities[x] for x in labels),
                           probs=tuple(probs[x] for x in labels),
                           signal_label=signal_label)

    @property
    def signal_index(self) -> int:
        return self.labels.index(self.signal_label)

    def intensity_map(self) -> Mapping[str, float]:
        return MappingProxyType(dict(zip(self.labels, self.intensities)))

    def prob_map(self) -> Mapping[str, float]:
        return MappingProxyType(dict(zip(self.labels, self.probs)))

    def sample_photon_count(self, label: str, rng: np.random.Generator) -> int:
        """Photon number for one emission at the given intensity label:
        always 1 for a perfect source, Poisson(intensity) for coherent."""
        if label not in self.labels:
            raise ValueError(f"unknown intensity label {label!r}")
        if self.kind == "perfect":
            return 1
        return int(rng.poisson(self.intensities[self.labels.index(label)]))

    def _sample_labels_counts(self, size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "perfect":
            return np.zeros(size, dtype=np.int8), np.ones(size, dtype=np.int64)
        if len(self.labels) == 1:
            idx = np.zeros(size, dtype=np.int8)
        else:
            idx = rng.choice(len(self.labels), size=size, p=np.asarray(self.probs)).astype(np.int8)
        lam = np.asarray(self.intensities)[idx]
        return idx, rng.poisson(lam).astype(np.int64)


def bell_round(x: int, theta: int, x_hat: int, theta_hat: int,
               e_err: float, p_fail: float, rng: np.random.Generator) -> Optional[int]:
    """One station measurement: None on failure, else the announced parity.

    Matching bases: parity = x ^ x_hat ^ Bernoulli(e_err); mismatched
    bases: a fair coin.  Bob's corrected bit is x_hat ^ parity, so with
    matching bases and no noise it equals x.
    """
    if rng.random() < p_fail:
        return None
    if theta == theta_hat:
        noise = 1 if rng.random() < e_err else 0
        return (x ^ x_hat ^ noise) & 1
    return int(rng.integers(0, 2))


@dataclass(frozen=True)
class UntilN:
    """Run until n successful (clicked) rounds are collected."""
    n: int


@dataclass(frozen=True)
class FixedN:
    """Run exactly N rounds."""
    N: int


@dataclass(frozen=True)
class RoundRecord:
    x: int
    theta: int
    x_hat: int
    theta_hat: int
    intensity_a: str
    intensity_b: str
    k_a: int
    k_b: int
    outcome: Optional[int]          # parity, or None on failure
    discarded: bool
    discard_reason: str
    corrected_bob_bit: Optional[int]


@dataclass
class PartyView:
    """One party's projection of the preparation phase: own bits, bases and
    intensity choices plus the public outcome stream.  Never contains the
    peer's private fields or either side's photon counts."""

    labels: tuple[str, ...]
    bits: np.ndarray
    bases: np.ndarray
    intensity: np.ndarray        # label indices
    success: np.ndarray
    parity: np.ndarray           # valid where success
    retained: np.ndarray
    corrected: Optional[np.ndarray] = None   # receiver side only

    def serialize(self) -> str:
        payload = {
            "labels": list(self.labels),
            "bits": self.bits.tolist(),
            "bases": self.bases.tolist(),
            "intensity": self.intensity.tolist(),
            "success": self.success.astype(int).tolist(),
            "parity": np.where(self.success, self.parity, 0).astype(int).tolist(),
            "retained": self.retained.astype(int).tolist(),
        }
        if self.corrected is not None:
            payload["corrected"] = np.where(self.success, self.corrected, 0).astype(int).tolist()
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    def retained_bases(self) -> np.ndarray:
        return self.bases[self.retained]

    def retained_bits(self) -> np.ndarray:
        return self.bits[self.retained]

    def retained_corrected(self) -> np.ndarray:
        if self.corrected is None:
            raise ValueError("view has no corrected bits (sender side)")
        return self.corrected[self.retained]


@dataclass
class Transcript:
    """Column-oriented record of every generated round (omniscient; use the
    per-party views for anything a protocol participant may see)."""

    labels_a: tuple[str, ...]
    labels_b: tuple[str, ...]
    x: np.ndarray
    theta: np.ndarray
    x_hat: np.ndarray
    theta_hat: np.ndarray
    intensity_a: np.ndarray
    intensity_b: np.ndarray
    k_a: np.ndarray
    k_b: np.ndarray
    success: np.ndarray
    parity: np.ndarray
    corrected: np.ndarray
    retained: np.ndarray
    discard_reason: np.ndarray
    total_rounds: int = field(init=False)

    def __post_init__(self):
        self.total_rounds = len(self.x)

    @property
    def n(self) -> int:
        return int(self.retained.sum())

    def round(self, i: int) -> RoundRecord:
        ok = bool(self.success[i])
        return RoundRecord(
            x=int(self.x[i]), theta=int(self.theta[i]),
            x_hat=int(self.x_hat[i]), theta_hat=int(self.theta_hat[i]),
            intensity_a=self.labels_a[self.intensity_a[i]],
            intensity_b=self.labels_b[self.intensity_b[i]],
            k_a=int(self.k_a[i]), k_b=int(self.k_b[i]),
            outcome=int(self.parity[i]) if ok else None,
            discarded=not bool(self.retained[i]),
            discard_reason=_REASON_NAMES[int(self.discard_reason[i])],
            corrected_bob_bit=int(self.corrected[i]) if ok else None,
        )

    def alice_view(self) -> PartyView:
        return PartyView(labels=self.labels_a, bits=self.x.copy(), bases=self.theta.copy(),
                         intensity=self.intensity_a.copy(), success=self.success.copy(),
                         parity=self.parity.copy(), retained=self.retained.copy())

    def bob_view(self) -> PartyView:
        return PartyView(labels=self.labels_b, bits=self.x_hat.copy(), bases=self.theta_hat.copy(),
                         intensity=self.intensity_b.copy(), success=self.success.copy(),
                         parity=self.parity.copy(), retained=self.retained.copy(),
                         corrected=self.corrected.copy())

    # convenience projections over retained rounds (protocol strings)
    def alice_string(self) -> np.ndarray:
        return self.x[self.retained]

    def alice_bases(self) -> np.ndarray:
        return self.theta[self.retained]

    def true_single_photon_signal(self, side: str, signal_index: int) -> int:
        """Oracle count of signal rounds with exactly one photon from the
        given side among successes (ground truth for estimator soundness)."""
        if side == "a":
            sig, k = self.intensity_a == signal_index, self.k_a
        else:
            sig, k = self.intensity_b == signal_index, self.k_b
        return int(np.sum(self.success & sig & (k == 1)))


def _simulate_block(size: int, src_a: SourceModel, src_b: SourceModel,
                    e_err: float, p_fail: float, rng: np.random.Generator) -> dict:
    x = rng.integers(0, 2, size=size, dtype=np.uint8)
    theta = rng.integers(0, 2, size=size, dtype=np.uint8)
    x_hat = rng.integers(0, 2, size=size, dtype=np.uint8)
    theta_hat = rng.integers(0, 2, size=size, dtype=np.uint8)
    ia, k_a = src_a._sample_labels_counts(size, rng)
    ib, k_b = src_b._sample_labels_counts(size, rng)
    station_fail = rng.random(size) < p_fail
    noise = (rng.random(size) < e_err).astype(np.uint8)
    coin = rng.integers(0, 2, size=size, dtype=np.uint8)
    vacuum = (k_a == 0) | (k_b == 0)  # no dark counts: empty pulses cannot click
    success = ~(station_fail | vacuum)
    parity = np.where(theta == theta_hat, x ^ x_hat ^ noise, coin).astype(np.uint8)
    corrected = (x_hat ^ parity).astype(np.uint8)
    return dict(x=x, theta=theta, x_hat=x_hat, theta_hat=theta_hat,
                intensity_a=ia, intensity_b=ib, k_a=k_a, k_b=k_b,
                success=success, parity=parity, corrected=corrected)


def _assemble(cols: dict, src_a: SourceModel, src_b: SourceModel, decoy_retention: bool) -> Transcript:
    success = cols["success"]
    reason = np.where(success, REASON_NONE, REASON_FAILURE).astype(np.uint8)
    retained = success.copy()
    if decoy_retention:
        both_signal = (cols["intensity_a"] == src_a.signal_index) & (cols["intensity_b"] == src_b.signal_index)
        reason = np.where(success & ~both_signal, REASON_INTENSITY, reason).astype(np.uint8)
        retained = success & both_signal
    return Transcript(labels_a=src_a.labels, labels_b=src_b.labels,
                      retained=retained, discard_reason=reason, **cols)


def run_preparation(src_a: SourceModel, src_b: SourceModel, mode: UntilN | FixedN,
                    e_err: float, p_fail: float, rng: np.random.Generator,
                    max_rounds: Optional[int] = None) -> Transcript:
    """Generate the shared preparation phase.

    UntilN stops at the round carrying the n-th success (the whole-round
    retention rule here is success-only); FixedN runs exactly N rounds and
    additionally flags success rounds whose intensities are not both signal
    (the decoy retention rule, applied to outputs later but recorded now).
    """
    if isinstance(mode, FixedN):
        chunks = []
        remaining = mode.N
        while remaining > 0:
            size = min(remaining, 1 << 18)
            chunks.append(_simulate_block(size, src_a, src_b, e_err, p_fail, rng))
            remaining -= size
        cols = {key: np.concatenate([c[key] for c in chunks]) for key in chunks[0]}
        return _assemble(cols, src_a, src_b, decoy_retention=True)

    target = mode.n
    cap = max_rounds if max_rounds is not None else max(10_000, 64 * target)
    chunks = []
    got = 0
    produced = 0
    while got < target:
        if produced >= cap:
            raise NoProgress(f"{got}/{target} successes after {produced} rounds (cap {cap})")
        size = min(max(2 * target, 4096), cap - produced)
        block = _simulate_block(size, src_a, src_b, e_err, p_fail, rng)
        produced += size
        successes = int(block["success"].sum())
        if got + successes >= target:
            cut = int(np.nonzero(block["success"])[0][target - got - 1]) + 1
            block = {key: val[:cut] for key, val in block.items()}
            got = target
        else:
            got += successes
        chunks.append(block)
    cols = {key: np.concatenate([c[key] for c in chunks]) for key in chunks[0]}
    return _assemble(cols, src_a, src_b, decoy_retention=False)


def sift(bob_view: PartyView, theta_reveal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bob's basis sifting over the retained rounds: the index set
    I = {i : theta_i == theta_hat_i} (indices into the retained string) and
    his corrected bits restricted to I, order preserved."""
    theta_hat = bob_view.retained_bases()
    if len(theta_reveal) != len(theta_hat):
        raise ValueError(f"theta reveal length {len(theta_reveal)} != retained count {len(theta_hat)}")
    I = np.nonzero(theta_reveal == theta_hat)[0]
    return I, bob_view.retained_corrected()[I]
