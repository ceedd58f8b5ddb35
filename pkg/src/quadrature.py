"""
Quadrature Module for the Staircase Retraction Probe
Integrates products of powers of linear factors with inverse-square-root
endpoint singularities, in double precision (scipy QUADPACK) or extended precision (mpmath)
"""

import contextlib
import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, List, Sequence, Tuple

import numpy as np
from scipy import integrate

from errors import InvalidConfig, PrecisionError

try:
    import mpmath
except ImportError:  # extended precision is optional at install time
    mpmath = None

logger = logging.getLogger(__name__)

STANDARD = "standard"
EXTENDED = "extended"

# geometric cuts toward u = 0 for the tanh-sinh pass
_EXTENDED_LEVELS = 12

HALF_WIDTH = math.sqrt(0.5)


@dataclass(frozen=True)
class QuadratureSettings:
    rel_tol: float = 1e-11
    abs_tol: float = 1e-13
    limit: int = 200
    precision: str = STANDARD
    extended_dps: int = 32

    def validate(self) -> "QuadratureSettings":
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise InvalidConfig(f"Quadrature tolerances must be positive, got {self.rel_tol}, {self.abs_tol}")
        if self.limit < 1:
            raise InvalidConfig(f"limit must be at least 1, got {self.limit}")
        if self.precision not in (STANDARD, EXTENDED):
            raise InvalidConfig(f"Unknown precision mode: {self.precision}")
        if self.precision == EXTENDED and self.extended_dps < 16:
            raise InvalidConfig(f"extended_dps must be at least 16, got {self.extended_dps}")
        return self

    @property
    def extended(self) -> bool:
        return self.precision == EXTENDED

    def tightened(self, factor: float = 0.5) -> "QuadratureSettings":
        """Same settings with both tolerances scaled by factor"""
        return QuadratureSettings(self.rel_tol * factor, self.abs_tol * factor, self.limit,
                                  self.precision, self.extended_dps)


@dataclass(frozen=True)
class PowerFactor:
    """
    The factor |left + slope*y|**exponent on y in [0, L]

    ``right`` is the same factor's inner value at y = L, passed separately so
    that an endpoint lying exactly on a singularity is seen as an exact zero.
    """
    left: Any
    right: Any
    slope: Any
    exponent: float


@dataclass
class QuadratureResult:
    value: Any
    error: float
    converged: bool
    evaluations: int


def require_mpmath():
    """Return the mpmath module or fail loudly; extended mode never downgrades"""
    if mpmath is None:
        raise PrecisionError("Extended precision requested but mpmath is not installed",
                             code="precision-unavailable")
    return mpmath


class NumberContext:
    """
    Scalar arithmetic for one precision mode

    Standard mode works on Python floats and numpy; extended mode on mpmath
    numbers at the configured number of digits.
    """

    def __init__(self, settings: QuadratureSettings):
        self.extended = settings.extended
        self.dps = settings.extended_dps
        self.mp = require_mpmath() if self.extended else None

    def scope(self):
        """Context manager fixing the working precision"""
        if self.extended:
            return self.mp.workdps(self.dps)
        return contextlib.nullcontext()

    def number(self, value) -> Any:
        if self.extended:
            return self.mp.mpf(value)
        return float(value)

    def to_float(self, value) -> float:
        return float(value)

    def sqrt(self, value):
        return self.mp.sqrt(value) if self.extended else math.sqrt(value)

    def log(self, value):
        return self.mp.log(value) if self.extended else math.log(value)

    def exp(self, value):
        return self.mp.exp(value) if self.extended else math.exp(value)

    @property
    def pi(self):
        return +self.mp.pi if self.extended else math.pi

    def solve(self, matrix: Sequence[Sequence[Any]], rhs: Sequence[Any]) -> List[Any]:
        """Solve a small dense linear system"""
        if self.extended:
            solution = self.mp.lu_solve(self.mp.matrix([list(row) for row in matrix]), self.mp.matrix(list(rhs)))
            return [solution[i] for i in range(len(rhs))]
        a = np.array(matrix, dtype=float)
        b = np.array(rhs, dtype=float)
        solution, *_ = np.linalg.lstsq(a, b, rcond=None)
        return [float(v) for v in solution]


def _expand(factors: Sequence[PowerFactor], length, from_right: bool) -> Tuple[Any, float, list]:
    """
    Rewrite the integral over half of [0, L] in the variable u, y = L*u**2
    measured from the chosen endpoint

    Returns (coefficient, power of u, non-vanishing terms (anchor, slope, exponent)).
    """
    coefficient = 2 * length
    power = 1.0
    terms = []
    for factor in factors:
        anchor = factor.right if from_right else factor.left
        slope = -factor.slope if from_right else factor.slope
        if anchor == 0:
            coefficient *= abs(slope * length) ** factor.exponent
            power += 2 * factor.exponent
        else:
            terms.append((anchor, slope * length, factor.exponent))
    return coefficient, power, terms


def _scalar_integrand(coefficient, power, terms) -> Callable[[float], float]:
    coefficient = float(coefficient)
    terms = [(float(a), float(s), e) for a, s, e in terms]

    def f(u: float) -> float:
        u2 = u * u
        out = coefficient * u ** power
        for anchor, slope, exponent in terms:
            out *= abs(anchor + slope * u2) ** exponent
        return out

    return f


def _integrate_standard(factors, length, settings) -> QuadratureResult:
    value, error, evaluations = 0.0, 0.0, 0
    clean = True
    for from_right in (False, True):
        f = _scalar_integrand(*_expand(factors, length, from_right))
        out = integrate.quad(f, 0.0, HALF_WIDTH, epsabs=0.5 * settings.abs_tol, epsrel=settings.rel_tol,
                             limit=settings.limit, full_output=1)
        v, e, info = out[:3]
        if len(out) > 3:
            clean = False
            logger.debug(f"QUADPACK: {out[3]}")
        value += v
        error += e
        evaluations += info["neval"]
    converged = clean and error <= max(settings.abs_tol, settings.rel_tol * abs(value))
    return QuadratureResult(value, error, converged, evaluations)


def _integrate_extended(factors, length, settings) -> QuadratureResult:
    mp = require_mpmath()
    evaluations = 0
    with mp.workdps(settings.extended_dps):
        upper = mp.sqrt(mp.mpf(1) / 2)
        cuts = [mp.mpf(0)] + [upper / mp.mpf(4) ** k for k in range(_EXTENDED_LEVELS, 0, -1)] + [upper]
        value = mp.mpf(0)
        error = mp.mpf(0)
        for from_right in (False, True):
            coefficient, power, terms = _expand(factors, length, from_right)

            def f(u, coefficient=coefficient, power=power, terms=terms):
                nonlocal evaluations
                evaluations += 1
                u2 = u * u
                out = coefficient * u ** power if power != 0 else coefficient
                for anchor, slope, exponent in terms:
                    out *= abs(anchor + slope * u2) ** exponent
                return out

            v, e = mp.quad(f, cuts, error=True)
            value += v
            error += e
        converged = error <= max(settings.abs_tol, settings.rel_tol * abs(value))
    return QuadratureResult(value, float(error), bool(converged), evaluations)


def integrate_power_product(factors: Sequence[PowerFactor], length, settings: QuadratureSettings) -> QuadratureResult:
    """
    Integrate prod |left + slope*y|**exponent over y in [0, length]

    Args:
        factors: Linear factors with their exponents
        length: Interval length L (an empty interval integrates to exactly 0)
        settings: Tolerances and precision mode

    Returns:
        QuadratureResult; a result that misses the tolerance is returned with
        converged=False and a warning instead of an exception
    """
    if length == 0:
        zero = require_mpmath().mpf(0) if settings.extended else 0.0
        return QuadratureResult(zero, 0.0, True, 0)
    if settings.extended:
        result = _integrate_extended(factors, length, settings)
    else:
        result = _integrate_standard(factors, float(length), settings)
    if not result.converged:
        logger.warning(f"Quadrature tolerance not met: value {float(result.value):.17g}, error {result.error:.3g}")
    return result


def calibrate(settings: QuadratureSettings) -> dict:
    """Integrate x**(-1/2) and x**(1/2) over [0, 1] through the singular-endpoint path"""
    checks = {}
    for name, exponent, exact in (("inverse_sqrt", -0.5, 2.0), ("sqrt", 0.5, 2.0 / 3.0)):
        result = integrate_power_product([PowerFactor(0.0, 1.0, 1.0, exponent)], 1.0, settings)
        checks[name] = {
            "value": float(result.value),
            "exact": exact,
            "abs_error": abs(float(result.value) - exact),
            "estimate": result.error,
            "converged": result.converged,
        }
    logger.info("Quadrature calibration: " + ", ".join(f"{k} err {v['abs_error']:.2e}" for k, v in checks.items()))
    return checks
