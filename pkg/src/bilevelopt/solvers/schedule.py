"""Power-law step sizes ``rho_t = alpha t^-a`` (z, v) and ``gamma_t = beta t^-b`` (x)."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

ALLOWED_EXPONENTS = (0.0, 1 / 3, 2 / 5, 1 / 2, 3 / 5)

# (a, b) per method: constant steps for SABA and the stocBiO-style loop,
# (2/5, 3/5) for SOBA, (1/2, 1/2) for the HIA-based two-loop (BSA-style).
DEFAULT_EXPONENTS = {
    "saba": (0.0, 0.0),
    "soba": (2 / 5, 3 / 5),
    "full-batch": (0.0, 0.0),
    "two-loop-shia": (0.0, 0.0),
    "two-loop-hia": (1 / 2, 1 / 2),
}


def _snap(e) -> float:
    """Accept ``0.4``, ``"2/5"`` or ``Fraction(2, 5)`` and return the allowed float."""
    value = float(Fraction(e)) if isinstance(e, str) else float(e)
    for allowed in ALLOWED_EXPONENTS:
        if abs(value - allowed) < 1e-9:
            return allowed
    raise ValueError(f"exponent {e} not in {{0, 1/3, 2/5, 1/2, 3/5}}")


@dataclass(frozen=True)
class StepSchedule:
    alpha: float
    beta: float
    a: float = 0.0
    b: float = 0.0

    def __post_init__(self):
        if self.alpha <= 0 or self.beta < 0:
            raise ValueError("alpha must be > 0 and beta >= 0")
        object.__setattr__(self, "a", _snap(self.a))
        object.__setattr__(self, "b", _snap(self.b))

    def rho(self, t: int) -> float:
        if t < 1:
            raise ValueError("schedules start at t = 1")
        return self.alpha if self.a == 0 else self.alpha * t ** (-self.a)

    def gamma(self, t: int) -> float:
        if t < 1:
            raise ValueError("schedules start at t = 1")
        return self.beta if self.b == 0 else self.beta * t ** (-self.b)

    @classmethod
    def from_ratio(cls, alpha: float, r: float, a=0.0, b=0.0) -> "StepSchedule":
        """``beta = alpha / r`` as in the grid-search parametrization."""
        return cls(alpha, alpha / r, a, b)

    @classmethod
    def for_method(cls, method: str, alpha: float, beta: float) -> "StepSchedule":
        a, b = DEFAULT_EXPONENTS[method]
        return cls(alpha, beta, a, b)
