"""
Schwarz-Christoffel Engine for the Staircase Retraction Probe
Side-length integrals of the staircase map, the forward map from accessory
parameters to staircase dimensions, and the inverse (accessory) solve
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from errors import InfeasibleTarget, InvalidConfig, NoConvergence, QuadratureError
from quadrature import NumberContext, PowerFactor, QuadratureSettings, integrate_power_product

logger = logging.getLogger(__name__)

SIDE_NAMES = ("a", "b", "c", "p", "q")

# (integral, left endpoint, right endpoint); None stands for infinity
INTERVALS = (
    ("A", None, "minus_one"),
    ("R", "minus_one", "eta1"),
    ("B", "eta1", "xi1"),
    ("Q", "xi1", "eta2"),
    ("C", "eta2", "xi2"),
    ("P", "xi2", "xi3"),
    ("V", "xi3", "one"),
    ("Jinv", "one", None),
)

# numerator points of the integrand carry +1/2, the others -1/2
_NUMERATOR = ("eta1", "eta2")
_DENOMINATOR = ("minus_one", "one", "xi1", "xi2", "xi3")

_PHASE_SAMPLES = (0.25, 0.5, 0.75)
_PHASE_TOL = 1e-8

# MINPACK step tolerance and the residual reported outside the gap chart
_HYBRID_XTOL = 1e-12
_INADMISSIBLE = 1e6


@dataclass(frozen=True)
class AccessoryConfig:
    """
    Prevertex positions of the staircase map

    eta1 = xi1 - s and eta2 = xi2 - t; the fields hold mpmath numbers when the
    engine runs in extended precision.
    """
    xi1: float
    xi2: float
    xi3: float
    s: float = 0.0
    t: float = 0.0

    @property
    def eta1(self):
        return self.xi1 - self.s

    @property
    def eta2(self):
        return self.xi2 - self.t

    def gaps(self) -> Tuple:
        """The six consecutive gaps between -1, eta1, xi1, eta2, xi2, xi3, 1 (they sum to 2)"""
        return (
            self.eta1 + 1,
            self.s,
            (self.xi2 - self.xi1) - self.t,
            self.t,
            self.xi3 - self.xi2,
            1 - self.xi3,
        )

    @classmethod
    def from_gaps(cls, gaps: Sequence) -> "AccessoryConfig":
        g0, g1, g2, g3, g4, _ = gaps
        xi1 = -1 + g0 + g1
        xi2 = xi1 + g2 + g3
        return cls(xi1, xi2, xi2 + g4, g1, g3)

    def with_st(self, s, t) -> "AccessoryConfig":
        return replace(self, s=s, t=t)

    @property
    def is_degenerate(self) -> bool:
        return self.s == 0 and self.t == 0

    def validate(self, eps_sep: float = 0.0) -> "AccessoryConfig":
        """Check the ordering -1 < eta1 <= xi1 < eta2 <= xi2 < xi3 < 1"""
        if self.s < 0 or self.t < 0:
            raise InvalidConfig(f"s and t must be non-negative, got s={float(self.s)}, t={float(self.t)}",
                                details={"s": float(self.s), "t": float(self.t)})
        names = ("eta1+1", "xi2-xi1-t", "xi3-xi2", "1-xi3")
        gaps = self.gaps()
        for name, gap in zip(names, (gaps[0], gaps[2], gaps[4], gaps[5])):
            if not gap > 0 or gap < eps_sep:
                raise InvalidConfig(f"Prevertex ordering violated: {name} = {float(gap):.3g}",
                                    details={"gap": name, "value": float(gap), "eps_sep": eps_sep})
        return self

    def to_dict(self) -> Dict[str, float]:
        return {"xi1": float(self.xi1), "xi2": float(self.xi2), "xi3": float(self.xi3),
                "s": float(self.s), "t": float(self.t)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AccessoryConfig":
        return cls(float(data["xi1"]), float(data["xi2"]), float(data["xi3"]),
                   float(data.get("s", 0.0)), float(data.get("t", 0.0)))


DEFAULT_BASE = AccessoryConfig(-0.5, 0.0, 0.5)


@dataclass
class IntegralBundle:
    """Magnitude integrals of the map derivative over the eight real intervals"""
    A: Any
    B: Any
    C: Any
    P: Any
    Q: Any
    Jinv: Any
    R: Any
    V: Any
    closure_vertical: Any = 0.0
    closure_horizontal: Any = 0.0
    errors: Dict[str, float] = field(default_factory=dict)
    converged: bool = True

    @property
    def J(self):
        return 1 / self.Jinv

    def value(self, name: str):
        return getattr(self, name)


@dataclass
class SideLengths:
    """Staircase dimensions; the polygon area is a + b(p+q) + cp"""
    a: Any
    b: Any
    c: Any
    p: Any
    q: Any
    closure_vertical: Any = 0.0
    closure_horizontal: Any = 0.0
    errors: Dict[str, float] = field(default_factory=dict)
    converged: bool = True

    def area(self):
        return self.a + self.b * (self.p + self.q) + self.c * self.p

    def values(self) -> Tuple:
        return (self.a, self.b, self.c, self.p, self.q)

    def check_target(self) -> "SideLengths":
        """Reject dimensions no staircase can have"""
        a, b, c, p, q = self.values()
        problems = []
        if not a > 0:
            problems.append("a must be positive")
        if b < 0 or c < 0:
            problems.append("b and c must be non-negative")
        if not (p > 0 and q > 0):
            problems.append("p and q must be positive")
        if not p + q < 1:
            problems.append("p + q must be below 1")
        if problems:
            raise InfeasibleTarget(f"Infeasible target {self.to_dict()}: {'; '.join(problems)}",
                                   details={"problems": problems})
        return self

    def to_dict(self) -> Dict[str, Any]:
        data = {name: float(value) for name, value in zip(SIDE_NAMES, self.values())}
        data["area"] = float(self.area())
        data["closure_vertical"] = float(self.closure_vertical)
        data["closure_horizontal"] = float(self.closure_horizontal)
        data["errors"] = {k: float(v) for k, v in self.errors.items()}
        data["converged"] = self.converged
        return data


@dataclass(frozen=True)
class SolverSettings:
    tolerance: float = 1e-8
    max_iter: int = 60
    eps_sep: float = 1e-12
    continuation_steps: int = 8
    polish_steps: int = 2  # extra Newton steps after the tolerance is met, while they still help

    def validate(self) -> "SolverSettings":
        if not self.tolerance > 0 or self.max_iter < 1 or self.eps_sep < 0 or self.continuation_steps < 1:
            raise InvalidConfig(f"Invalid solver settings: {self}")
        return self


def _points(cfg: AccessoryConfig, ctx: NumberContext) -> Dict[str, Tuple[Any, Any]]:
    """Singular points as (anchor, offset) so that eta1 - xi1 is exactly -s"""
    zero = ctx.number(0)
    xi1, xi2, xi3 = ctx.number(cfg.xi1), ctx.number(cfg.xi2), ctx.number(cfg.xi3)
    return {
        "minus_one": (ctx.number(-1), zero),
        "eta1": (xi1, -ctx.number(cfg.s)),
        "xi1": (xi1, zero),
        "eta2": (xi2, -ctx.number(cfg.t)),
        "xi2": (xi2, zero),
        "xi3": (xi3, zero),
        "one": (ctx.number(1), zero),
    }


def _diff(p: Tuple[Any, Any], q: Tuple[Any, Any]):
    return (p[0] - q[0]) + (p[1] - q[1])


def _active_factors(cfg: AccessoryConfig) -> List[Tuple[str, float]]:
    """Singular points with their exponents; coincident numerator/denominator pairs cancel"""
    dropped = set()
    if cfg.s == 0:
        dropped.update(("eta1", "xi1"))
    if cfg.t == 0:
        dropped.update(("eta2", "xi2"))
    factors = [(name, 0.5) for name in _NUMERATOR if name not in dropped]
    factors += [(name, -0.5) for name in _DENOMINATOR if name not in dropped]
    return factors


def _interval_factors(points, active, left: Optional[str], right: Optional[str], ctx: NumberContext):
    """PowerFactors and length of one interval, mapping infinite ones to (0, 1] by x = +-1/w"""
    one = ctx.number(1)
    if left is not None and right is not None:
        lo, hi = points[left], points[right]
        factors = [PowerFactor(_diff(lo, points[name]), _diff(hi, points[name]), one, e) for name, e in active]
        return factors, _diff(hi, lo)
    factors = [PowerFactor(ctx.number(0), one, one, -0.5)]
    for name, e in active:
        sigma = points[name][0] + points[name][1]
        if right is None:
            # (1, inf): |1 - sigma*w|
            factors.append(PowerFactor(one, _diff(points["one"], points[name]), -sigma, e))
        else:
            # (-inf, -1): |1 + sigma*w|
            factors.append(PowerFactor(one, _diff(points[name], points["minus_one"]), sigma, e))
    return factors, one


def _check_phase(cfg: AccessoryConfig, points, active) -> None:
    """The integrand's phase must be one fixed power of i on every finite interval"""
    quarter_turns = np.array([1, 1j, -1, -1j])
    for name, left, right in INTERVALS:
        if left is None or right is None:
            continue
        lo = points[left]
        length = float(_diff(points[right], lo))
        if length == 0:
            continue
        phases = []
        for frac in _PHASE_SAMPLES:
            value = complex(1.0)
            for point, e in active:
                z = complex(float(_diff(lo, points[point])) + frac * length, 0.0)
                root = np.sqrt(z)
                value = value * (root if e > 0 else 1 / root)
            phases.append(value / abs(value))
        nearest = quarter_turns[np.argmin(np.abs(quarter_turns - phases[0]))]
        if any(abs(phase - nearest) > _PHASE_TOL for phase in phases):
            raise QuadratureError(f"Integrand phase is not constant on the {name} interval",
                                  code="phase-pattern",
                                  details={"interval": name, "config": cfg.to_dict()})


def side_integrals(cfg: AccessoryConfig, settings: QuadratureSettings) -> IntegralBundle:
    """
    Magnitude integrals of the staircase map derivative

    Args:
        cfg: Accessory parameters
        settings: Quadrature tolerances and precision mode

    Returns:
        IntegralBundle with the closure residuals J*V - (a+b+c) and
        J*R - (1-p-q); converged is False when some integral missed the tolerance

    Raises:
        InvalidConfig: ordering violated
        QuadratureError: phase pattern broken
    """
    cfg.validate()
    ctx = NumberContext(settings)
    with ctx.scope():
        points = _points(cfg, ctx)
        active = _active_factors(cfg)
        _check_phase(cfg, points, active)
        values = {}
        errors = {}
        converged = True
        for name, left, right in INTERVALS:
            factors, length = _interval_factors(points, active, left, right, ctx)
            result = integrate_power_product(factors, length, settings)
            values[name] = result.value
            errors[name] = result.error
            converged = converged and result.converged
        J = 1 / values["Jinv"]
        bundle = IntegralBundle(
            closure_vertical=J * (values["V"] - values["A"] - values["B"] - values["C"]),
            closure_horizontal=J * (values["R"] + values["P"] + values["Q"]) - 1,
            errors=errors,
            converged=converged,
            **values,
        )
    logger.debug(f"Integrals at {cfg.to_dict()}: " + ", ".join(f"{k}={float(v):.12g}" for k, v in values.items()))
    return bundle


def closure_limit(settings: QuadratureSettings, scale: float = 1.0) -> float:
    return 10 * max(settings.abs_tol, settings.rel_tol * max(1.0, scale))


def forward(cfg: AccessoryConfig, settings: QuadratureSettings) -> SideLengths:
    """Staircase dimensions a = J*A, b = J*B, c = J*C, p = J*P, q = J*Q"""
    bundle = side_integrals(cfg, settings)
    ctx = NumberContext(settings)
    with ctx.scope():
        J = bundle.J
        sides = [J * bundle.value(name) for name in ("A", "B", "C", "P", "Q")]
        rel_j = bundle.errors["Jinv"] / abs(float(bundle.Jinv))
        errors = {}
        for side, name, value in zip(SIDE_NAMES, ("A", "B", "C", "P", "Q"), sides):
            errors[side] = float(J) * bundle.errors[name] + abs(float(value)) * rel_j
        result = SideLengths(*sides, closure_vertical=bundle.closure_vertical,
                             closure_horizontal=bundle.closure_horizontal, errors=errors,
                             converged=bundle.converged)
    limit = closure_limit(settings, float(result.a + result.b + result.c))
    if abs(float(result.closure_vertical)) > limit or abs(float(result.closure_horizontal)) > limit:
        logger.warning(f"Closure residuals above {limit:.2g} at {cfg.to_dict()}: "
                       f"vertical {float(result.closure_vertical):.3g}, horizontal {float(result.closure_horizontal):.3g}")
    return result


class _GapChart:
    """
    Log-gap coordinates for the accessory solve

    The free gaps are 2*exp(z_i)/sum(exp(z)), the last free gap carrying z = 0;
    gaps of sides with zero length stay exactly 0.
    """

    def __init__(self, free: Sequence[int], ctx: NumberContext):
        self.free = list(free)
        self.ctx = ctx

    @property
    def dimension(self) -> int:
        return len(self.free) - 1

    def config(self, z: Sequence) -> AccessoryConfig:
        weights = [self.ctx.exp(v) for v in z] + [self.ctx.number(1)]
        total = sum(weights)
        gaps = [self.ctx.number(0)] * 6
        for index, w in zip(self.free, weights):
            gaps[index] = 2 * w / total
        return AccessoryConfig.from_gaps(gaps)

    def coordinates(self, cfg: AccessoryConfig) -> List:
        gaps = [self.ctx.number(g) for g in cfg.gaps()]
        ref = gaps[self.free[-1]]
        return [self.ctx.log(gaps[i] / ref) for i in self.free[:-1]]


def _free_gaps(target: SideLengths) -> Tuple[List[int], List[str]]:
    free = [0, 2, 4]
    names = ["a", "p", "q"]
    if target.b > 0:
        free.append(1)
        names.append("b")
    if target.c > 0:
        free.append(3)
        names.append("c")
    # the outermost gap is the reference with z = 0
    return sorted(free) + [5], names


def _residual_function(chart: _GapChart, target: SideLengths, names: Sequence[str],
                       quad: QuadratureSettings, solver: SolverSettings) -> Callable:
    scales = {name: abs(float(getattr(target, name))) for name in names}

    def residual(z):
        cfg = chart.config(z).validate(solver.eps_sep)
        sides = forward(cfg, quad)
        return [(getattr(sides, name) - getattr(target, name)) / scales[name] for name in names]

    return residual


def newton_solve(residual: Callable, z0: Sequence, ctx: NumberContext, tolerance: float, max_iter: int,
                 step: float, polish_steps: int = 0) -> Tuple[List, float, bool, int]:
    """
    Solve residual(z) = 0 for a square system

    Double precision goes through MINPACK's hybrid method (scipy.optimize.root),
    finished by damped Newton when MINPACK stops above the tolerance; extended
    precision runs the damped Newton iteration at the working precision.

    Returns:
        (best iterate, its max-norm residual, converged flag, solver steps used)
    """
    if ctx.extended:
        return _damped_newton(residual, z0, ctx, tolerance, max_iter, step, polish_steps)
    z, norm, converged, used = _hybrid_solve(residual, z0, tolerance, max_iter, step)
    if converged:
        return z, norm, converged, used
    logger.debug(f"MINPACK stopped at residual {norm:.3e}; switching to damped Newton")
    z, norm, converged, iterations = _damped_newton(residual, z, ctx, tolerance, max_iter, step, polish_steps)
    return z, norm, converged, used + iterations


def _hybrid_solve(residual: Callable, z0: Sequence, tolerance: float, max_iter: int,
                  step: float) -> Tuple[List, float, bool, int]:
    n = len(z0)

    def fun(z: np.ndarray) -> np.ndarray:
        try:
            return np.array([float(v) for v in residual(list(z))])
        except InvalidConfig:
            # outside the admissible chart; MINPACK shrinks its trust region
            return np.full(n, _INADMISSIBLE)

    start = np.array([float(v) for v in z0])
    start_norm = float(np.max(np.abs(fun(start))))
    # MINPACK reads eps as the relative accuracy of fun and differences with sqrt(eps)
    sol = optimize.root(fun, start, method="hybr",
                        options={"xtol": _HYBRID_XTOL, "eps": step * step, "maxfev": max_iter * (n + 1)})
    norm = float(np.max(np.abs(sol.fun)))
    logger.debug(f"MINPACK hybrid: {sol.message.strip()} after {sol.nfev} evaluations, residual {norm:.3e}")
    if norm > start_norm:
        return list(start), start_norm, start_norm <= tolerance, int(sol.nfev)
    return [float(v) for v in sol.x], norm, norm <= tolerance, int(sol.nfev)


def _damped_newton(residual: Callable, z0: Sequence, ctx: NumberContext, tolerance: float, max_iter: int,
                   step: float, polish_steps: int) -> Tuple[List, float, bool, int]:
    """
    Damped Newton iteration with a central-difference Jacobian

    Steps are halved until the max-norm residual decreases, so accepted
    iterates have strictly decreasing residuals.
    """
    z = list(z0)
    r = residual(z)
    norm = max(abs(float(v)) for v in r)
    h = ctx.number(step)
    polished = 0
    iterations = 0
    for iterations in range(1, max_iter + 1):
        if norm <= tolerance:
            if polished >= polish_steps:
                break
            polished += 1
        jac_columns = []
        for i in range(len(z)):
            plus = list(z)
            minus = list(z)
            plus[i] += h
            minus[i] -= h
            r_plus, r_minus = residual(plus), residual(minus)
            jac_columns.append([(rp - rm) / (2 * h) for rp, rm in zip(r_plus, r_minus)])
        jac = [[jac_columns[j][i] for j in range(len(z))] for i in range(len(r))]
        delta = ctx.solve(jac, [-v for v in r])
        damping = 1.0
        accepted = False
        for _ in range(30):
            trial = [zi + damping * di for zi, di in zip(z, delta)]
            try:
                r_trial = residual(trial)
            except InvalidConfig:
                damping /= 2
                continue
            trial_norm = max(abs(float(v)) for v in r_trial)
            if trial_norm < norm:
                z, r, norm = trial, r_trial, trial_norm
                accepted = True
                break
            damping /= 2
        logger.debug(f"Newton iteration {iterations}: residual {norm:.3e}, damping {damping:g}")
        if not accepted:
            break
    return z, norm, norm <= tolerance, iterations


def _seed(target: SideLengths, quad: QuadratureSettings, solver: SolverSettings,
          initial: Optional[AccessoryConfig]) -> AccessoryConfig:
    """Starting configuration: the given one, or the rectangle solve with s, t from the pole constants"""
    if initial is None:
        if target.b == 0 and target.c == 0:
            return DEFAULT_BASE
        rect = SideLengths(target.a, 0.0, 0.0, target.p, target.q)
        initial = solve_accessory(rect, quad, solver)
    s, t = initial.s, initial.t
    if (target.b > 0 and s == 0) or (target.c > 0 and t == 0):
        base = initial.with_st(0.0, 0.0)
        kb, kc = pole_constants(base)
        J = float(side_integrals(base, quad).J)
        if target.b > 0 and s == 0:
            s = min(float(target.b) / (J * kb), 0.5 * (float(base.xi1) + 1))
        if target.c > 0 and t == 0:
            t = min(float(target.c) / (J * kc), 0.5 * float(base.xi2 - base.xi1))
    if target.b == 0:
        s = 0.0
    if target.c == 0:
        t = 0.0
    return initial.with_st(s, t)


def solve_accessory(target: SideLengths, quad: QuadratureSettings, solver: SolverSettings = SolverSettings(),
                    initial: Optional[AccessoryConfig] = None) -> AccessoryConfig:
    """
    Find accessory parameters whose staircase has the target dimensions

    Args:
        target: Dimensions (a, b, c, p, q); b = c = 0 solves the rectangle
            problem in xi1, xi2, xi3 only
        quad: Quadrature settings used by the forward map
        solver: Newton settings
        initial: Optional starting configuration

    Returns:
        AccessoryConfig whose forward image matches the target within the
        solver tolerance (max relative component error)

    Raises:
        InfeasibleTarget: the target has no staircase
        NoConvergence: Newton and continuation both failed
    """
    target.check_target()
    solver.validate()
    ctx = NumberContext(quad)
    free, names = _free_gaps(target)
    chart = _GapChart(free, ctx)
    step = math.sqrt(quad.rel_tol)
    with ctx.scope():
        start = _seed(target, quad, solver, initial).validate(solver.eps_sep)
        z0 = chart.coordinates(start)
        residual = _residual_function(chart, target, names, quad, solver)
        z, norm, converged, iterations = newton_solve(residual, z0, ctx, solver.tolerance, solver.max_iter,
                                                      step, solver.polish_steps)
        if not converged:
            logger.info(f"Direct Newton stalled at residual {norm:.3e}; continuing from the forward image")
            z, norm, converged = _continuation(chart, start, target, names, quad, solver, step, ctx)
        best = chart.config(z)
    if not converged:
        raise NoConvergence(f"Accessory solve did not converge (residual {norm:.3e})", best=best, residual=norm)
    logger.info(f"Accessory solve converged: residual {norm:.2e} at {best.to_dict()}")
    return best


def _continuation(chart: _GapChart, start: AccessoryConfig, target: SideLengths, names: Sequence[str],
                  quad: QuadratureSettings, solver: SolverSettings, step: float, ctx: NumberContext):
    """March the target from forward(start) to the requested dimensions"""
    origin = forward(start, quad)
    z = chart.coordinates(start)
    norm = float("inf")
    steps = solver.continuation_steps
    for k in range(1, steps + 1):
        weight = ctx.number(k) / steps
        values = [o + weight * (v - o) for o, v in zip(origin.values(), target.values())]
        stage = SideLengths(*values)
        residual = _residual_function(chart, stage, names, quad, solver)
        z, norm, converged, _ = newton_solve(residual, z, ctx, solver.tolerance, solver.max_iter,
                                             step, solver.polish_steps if k == steps else 0)
        logger.debug(f"Continuation stage {k}/{steps}: residual {norm:.3e}")
        if not converged:
            return z, norm, False
    return z, norm, True


def pole_constants(base: AccessoryConfig) -> Tuple[float, float]:
    """
    Leading coefficients K_B, K_C of B(s, 0) and C(0, t) at a rectangle base

    K_B = pi / (2 sqrt(1-xi1) sqrt(1+xi1) sqrt(xi3-xi1)), K_C the same with xi2.
    """
    xi1, xi2, xi3 = float(base.xi1), float(base.xi2), float(base.xi3)
    kb = math.pi / (2 * math.sqrt(1 - xi1) * math.sqrt(1 + xi1) * math.sqrt(xi3 - xi1))
    kc = math.pi / (2 * math.sqrt(1 - xi2) * math.sqrt(1 + xi2) * math.sqrt(xi3 - xi2))
    return kb, kc


def constants_PQ(base: AccessoryConfig, settings: QuadratureSettings) -> Tuple[Any, Any]:
    """
    Constants of the leading logarithmic terms in p and q at a rectangle base

    Returns:
        (P_const, Q_const) = J/(2 sqrt(1-xi2) sqrt(1+xi2) sqrt(xi3-xi2)),
        J/(2 sqrt(1-xi1) sqrt(1+xi1) sqrt(xi3-xi1)); both positive
    """
    if not base.is_degenerate:
        raise InvalidConfig("constants_PQ needs a base with s = t = 0", details=base.to_dict())
    bundle = side_integrals(base, settings)
    ctx = NumberContext(settings)
    with ctx.scope():
        J = bundle.J
        xi1, xi2, xi3 = (ctx.number(v) for v in (base.xi1, base.xi2, base.xi3))
        p_const = J / (2 * ctx.sqrt(1 - xi2) * ctx.sqrt(1 + xi2) * ctx.sqrt(xi3 - xi2))
        q_const = J / (2 * ctx.sqrt(1 - xi1) * ctx.sqrt(1 + xi1) * ctx.sqrt(xi3 - xi1))
    return p_const, q_const


def linear_coefficients(base: AccessoryConfig, settings: QuadratureSettings, step: float = 1e-5) -> Tuple[float, float]:
    """
    A1 = da/ds and A2 = da/dt at a rectangle base

    One-sided second-order differences, since s and t cannot go negative.
    """
    if not base.is_degenerate:
        raise InvalidConfig("linear_coefficients needs a base with s = t = 0", details=base.to_dict())
    a0 = float(forward(base, settings).a)

    def derivative(make):
        a1 = float(forward(make(step), settings).a)
        a2 = float(forward(make(2 * step), settings).a)
        return (-3 * a0 + 4 * a1 - a2) / (2 * step)

    A1 = derivative(lambda h: base.with_st(h, 0.0))
    A2 = derivative(lambda h: base.with_st(0.0, h))
    logger.info(f"Linear coefficients of a: A1={A1:.10g}, A2={A2:.10g}")
    return A1, A2
