"""Exception types shared across the package.

Plain parameter-validation failures raise :class:`ValueError`; the classes
here mark conditions a caller may want to catch and handle distinctly.
"""

from __future__ import annotations


class ValidityViolation(Exception):
    """A concentration-bound validity condition failed for the observed data.

    Carries the failing condition so the run can be marked inconclusive
    instead of silently producing a meaningless bound.
    """

    def __init__(self, condition: str, detail: str = ""):
        self.condition = condition
        self.detail = detail
        super().__init__(f"{condition}" + (f": {detail}" if detail else ""))


class ScaleExceeded(Exception):
    """An exhaustive (desk-scale) operation was asked to run beyond its cap."""


class NoProgress(Exception):
    """An until-N preparation loop hit its round cap without collecting N successes."""


class PhaseError(Exception):
    """Protocol session method called out of phase order (a programming bug,
    not a protocol abort)."""


class DegenerateIntensities(Exception):
    """Decoy intensity configuration makes the estimation system singular."""


class StrategyImpossible(Exception):
    """A cheating strategy cannot be instantiated (e.g. no nonzero codeword)."""
