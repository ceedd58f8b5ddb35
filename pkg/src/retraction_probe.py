"""
Retraction Probe Module for the Staircase Retraction Probe
Evaluates the area function along the rectangle family R(x, y) and measures
second differences whose slow logarithmic drift no Taylor expansion can produce
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from asymptotics import DEFAULT_COND_LIMIT, FitResult, fit_model, parallel_map
from errors import FitError, NoConvergence, OutOfRange, PrecisionError, ProbeError
from quadrature import NumberContext, QuadratureSettings
from sc_engine import (
    AccessoryConfig, SideLengths, SolverSettings, constants_PQ, forward,
    newton_solve, solve_accessory,
)

logger = logging.getLogger(__name__)

OK = "ok"
EXCLUDED = "excluded"

# y/x ratios sampled when the off-axis polynomial fit is enabled
OFFAXIS_RATIOS = (0.5, 1.0)

# coefficient of x^2/ln(1/x) in the area along the x-axis
C2_TARGET = 2 * math.pi

# a C^3 area would shrink successive changes of D(h)/h^2 by about 1/2 per halving of h
SLOW_DECAY_RATE = 0.6


def family_target(a0, p0, q0, x, y) -> SideLengths:
    """The rectangle (a0, 0, 0, p0 - x, q0 - y)"""
    p, q = p0 - x, q0 - y
    if x < 0 or y < 0 or not a0 > 0 or not p > 0 or not q > 0 or not p + q < 1:
        raise OutOfRange(f"Family point (x, y) = ({float(x)}, {float(y)}) leaves the rectangle range "
                         f"for base ({float(a0)}, {float(p0)}, {float(q0)})",
                         details={"x": float(x), "y": float(y)})
    return SideLengths(a0, 0.0, 0.0, p, q)


def leading_order_guess(p_const, q_const, x, y) -> Tuple[float, float]:
    """
    s ~ (x+y)/(Q ln(1/(x+y))) and t ~ x/(P ln(1/x))

    Only a starting point: the corrections are relative O(1/ln(1/x)), so the
    located values sit near 0.5-0.7 of the guess at x = 2**-8 and close in slowly.
    """
    x, y = float(x), float(y)
    s = (x + y) / (float(q_const) * math.log(1.0 / (x + y)))
    t = x / (float(p_const) * math.log(1.0 / x))
    return s, t


def locate_st(base_rect: AccessoryConfig, p0, q0, x, y, quad: QuadratureSettings,
              solver: SolverSettings = SolverSettings()) -> Tuple[Any, Any, float]:
    """
    Find (s, t) at which the staircase over base_rect has p = p0 and q = q0

    Args:
        base_rect: Rectangle configuration solved for (a0, p0 - x, q0 - y)
        p0, q0: Target widths
        x, y: Family offsets
        quad: Quadrature settings
        solver: Newton settings

    Returns:
        (s, t, max relative residual); x = y = 0 gives (0, 0, 0) exactly

    Raises:
        OutOfRange: x = 0 < y, where t has no logarithmic scale
        NoConvergence: Newton failed
    """
    if x == 0 and y == 0:
        return 0.0, 0.0, 0.0
    if x <= 0:
        raise OutOfRange(f"Cannot locate (s, t) for x = {float(x)}, y = {float(y)}", code="degenerate-input",
                         details={"x": float(x), "y": float(y)})
    ctx = NumberContext(quad)
    with ctx.scope():
        p_const, q_const = constants_PQ(base_rect, quad)
        s0, t0 = leading_order_guess(p_const, q_const, x, y)
        p0n, q0n = ctx.number(p0), ctx.number(q0)

        def residual(z):
            cfg = base_rect.with_st(ctx.exp(z[0]), ctx.exp(z[1])).validate(solver.eps_sep)
            sides = forward(cfg, quad)
            return [(sides.p - p0n) / p0n, (sides.q - q0n) / q0n]

        z0 = [ctx.log(ctx.number(s0)), ctx.log(ctx.number(t0))]
        z, norm, converged, iterations = newton_solve(residual, z0, ctx, solver.tolerance, solver.max_iter,
                                                      math.sqrt(quad.rel_tol), solver.polish_steps)
        s, t = ctx.exp(z[0]), ctx.exp(z[1])
    if not converged:
        raise NoConvergence(f"Could not locate (s, t) for x = {float(x)}, y = {float(y)} (residual {norm:.3e})",
                            best=(s, t), residual=norm)
    logger.debug(f"Located s={float(s):.6e}, t={float(t):.6e} for x={float(x):.3e}, y={float(y):.3e} "
                 f"in {iterations} solver steps (guess s={s0:.6e}, t={t0:.6e})")
    return s, t, norm


@dataclass
class FValue:
    x: float
    y: float
    F: Any
    error: float
    s: Any
    t: Any
    locate_residual: float
    base_residual: float
    base: AccessoryConfig
    sides: SideLengths


def eval_F(a0, p0, q0, x, y, quad: QuadratureSettings, solver: SolverSettings = SolverSettings(),
           initial: Optional[AccessoryConfig] = None) -> FValue:
    """
    Area a + b(p0+q0) + c*p0 of the staircase reached from R(x, y)

    The rectangle base is solved for (a0, p0-x, q0-y), then (s, t) is located
    so that the staircase widths return to (p0, q0).
    """
    target = family_target(a0, p0, q0, x, y)
    base = solve_accessory(target, quad, solver, initial=initial)
    base_sides = forward(base, quad)
    base_residual = max(abs(float(getattr(base_sides, n) - getattr(target, n))) / abs(float(getattr(target, n)))
                        for n in ("a", "p", "q"))
    s, t, residual = locate_st(base, p0, q0, x, y, quad, solver)
    sides = base_sides if (s == 0 and t == 0) else forward(base.with_st(s, t), quad)
    ctx = NumberContext(quad)
    with ctx.scope():
        p0n, q0n = ctx.number(p0), ctx.number(q0)
        F = sides.a + sides.b * (p0n + q0n) + sides.c * p0n
    quad_error = sides.errors["a"] + sides.errors["b"] * float(p0 + q0) + sides.errors["c"] * float(p0)
    error = quad_error + (base_residual + residual) * abs(float(F))
    return FValue(float(x), float(y), F, error, s, t, residual, base_residual, base, sides)


@dataclass
class ProbeSample:
    x: float
    y: float
    s: float = 0.0
    t: float = 0.0
    residual: float = 0.0
    F: Any = None
    F_error: float = 0.0
    status: str = OK
    message: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "x": self.x, "y": self.y, "s": float(self.s), "t": float(self.t),
            "residual": float(self.residual),
            "F": None if self.F is None else float(self.F),
            "F_error": float(self.F_error), "status": self.status, "message": self.message,
        }


def _sample_worker(job) -> ProbeSample:
    a0, p0, q0, x, y, quad, solver, initial = job
    try:
        value = eval_F(a0, p0, q0, x, y, quad, solver, initial)
    except ProbeError as e:
        logger.warning(f"Sample ({x:.3e}, {y:.3e}) excluded: {e.code}: {e}")
        return ProbeSample(x, y, status=EXCLUDED, message=f"{e.code}: {e}")
    return ProbeSample(x, y, value.s, value.t, value.locate_residual, value.F, value.error)


def _collect(a0, p0, q0, points, quad, solver, initial, jobs) -> List[ProbeSample]:
    tasks = [(a0, p0, q0, x, y, quad, solver, initial) for x, y in points]
    return parallel_map(_sample_worker, tasks, jobs)


@dataclass
class ProbeScan:
    base: Tuple[float, float, float]
    samples: List[ProbeSample] = field(default_factory=list)
    table: List[Dict[str, float]] = field(default_factory=list)
    decreasing: bool = False
    decay_rates: List[float] = field(default_factory=list)
    slow_decay: bool = False
    log_scaled_increasing: bool = False
    fits: Dict[str, FitResult] = field(default_factory=dict)
    c2: Optional[float] = None
    c2_relative_error: Optional[float] = None
    linear_term: Optional[float] = None
    delta: Dict[str, float] = field(default_factory=dict)
    polynomial_residual: Optional[float] = None
    log_residual: Optional[float] = None
    excluded: List[Dict[str, Any]] = field(default_factory=list)
    precision_ok: bool = True
    control: Optional[Dict[str, Any]] = None

    @property
    def ratios(self) -> List[float]:
        return [row["D_over_h2"] for row in self.table]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "base": {"a0": self.base[0], "p0": self.base[1], "q0": self.base[2]},
            "samples": [sample.to_dict() for sample in self.samples],
            "table": self.table,
            "decreasing": self.decreasing,
            "decay_rates": self.decay_rates,
            "slow_decay": self.slow_decay,
            "log_scaled_increasing": self.log_scaled_increasing,
            "fits": {name: fit.to_dict() for name, fit in self.fits.items()},
            "c2": self.c2,
            "c2_target": C2_TARGET,
            "c2_relative_error": self.c2_relative_error,
            "linear_term": self.linear_term,
            "delta": self.delta,
            "polynomial_residual": self.polynomial_residual,
            "log_residual": self.log_residual,
            "excluded": self.excluded,
            "precision_ok": self.precision_ok,
            "control": self.control,
        }

    def to_frame(self) -> pd.DataFrame:
        columns = ["h", "F", "D", "D_over_h2", "D_log_scaled", "model"]
        return pd.DataFrame([{k: row.get(k) for k in columns} for row in self.table], columns=columns)


def log_second_difference(h, power: int = 1):
    """D(h)/h^2 of x^2/ln(1/x)^power, the shape the area's leading non-polynomial term leaves"""
    h = np.asarray(h, dtype=float)
    return 4.0 / np.log(1.0 / (2 * h)) ** power - 2.0 / np.log(1.0 / h) ** power


def _second_differences(values: Dict[float, ProbeSample], hs: List[float], origin: ProbeSample) -> List[Dict[str, float]]:
    """D(h) = F(2h) - 2F(h) + F(0) wherever all three samples are usable"""
    table = []
    for h in hs:
        one, two = values.get(h), values.get(2 * h)
        if one is None or two is None or one.status != OK or two.status != OK or origin.status != OK:
            continue
        D = float(two.F - 2 * one.F + origin.F)
        table.append({
            "h": h,
            "F": float(one.F),
            "D": D,
            "D_over_h2": D / (h * h),
            "D_log_scaled": D * math.log(1.0 / h) / (h * h),
            "D_error": two.F_error + 2 * one.F_error + origin.F_error,
        })
    return table


def _shape_checks(scan: ProbeScan) -> None:
    """
    Compare how D(h)/h^2 settles with what a C^3 function would do

    A C^3 function has D(h)/h^2 = 2 F''(0) + O(h): successive changes halve
    with every halving of h. The area instead carries 2 pi x^2/ln(1/x), so
    D(h)/h^2 creeps down like 4 pi/ln(1/h) and its changes shrink far slower.
    """
    ratios = scan.ratios
    if len(ratios) < 2:
        return
    scan.decreasing = all(b < a for a, b in zip(ratios, ratios[1:]))
    scaled = [row["D_log_scaled"] for row in scan.table]
    scan.log_scaled_increasing = all(b > a for a, b in zip(scaled, scaled[1:]))
    steps = [a - b for a, b in zip(ratios, ratios[1:])]
    scan.decay_rates = [later / earlier for earlier, later in zip(steps, steps[1:]) if earlier != 0]
    scan.slow_decay = bool(scan.decay_rates) and min(scan.decay_rates) > SLOW_DECAY_RATE


def nonsmooth_scan(a0, p0, q0, kmin: int, kmax: int, quad: QuadratureSettings,
                   solver: SolverSettings = SolverSettings(), jobs: int = 1, offaxis: bool = False,
                   cond_limit: float = DEFAULT_COND_LIMIT, strict: bool = False,
                   with_control: bool = True) -> ProbeScan:
    """
    Second differences of F along the x-axis of the rectangle family

    Args:
        a0, p0, q0: Base rectangle
        kmin, kmax: h = 2**-k for k = kmin..kmax (F is sampled at x = 2**-j, j = kmin-1..kmax)
        quad: Quadrature settings (extended precision for k beyond 16)
        solver: Newton settings
        jobs: Worker processes
        offaxis: Also sample y = x/2 and y = x for the two-variable polynomial fit
        cond_limit: Fit conditioning limit
        strict: Raise PrecisionError instead of flagging when D(h) drowns in the F error
        with_control: Run the a0-only control family alongside

    Returns:
        ProbeScan in grid order
    """
    limit = 24 if quad.extended else 16
    if kmin < 2 or kmax <= kmin or kmax > limit:
        raise OutOfRange(f"Scan range k = {kmin}..{kmax} outside 2..{limit} for {quad.precision} precision")
    family_target(a0, p0, q0, 2.0 ** -(kmin - 1), 0.0)

    base0 = solve_accessory(family_target(a0, p0, q0, 0.0, 0.0), quad, solver)
    xs = [2.0 ** -j for j in range(kmin - 1, kmax + 1)]
    points = [(0.0, 0.0)] + [(x, 0.0) for x in xs]
    if offaxis:
        points += [(x, r * x) for r in OFFAXIS_RATIOS for x in xs]
    samples = _collect(a0, p0, q0, points, quad, solver, base0, jobs)

    scan = ProbeScan((float(a0), float(p0), float(q0)), samples)
    scan.excluded = [s.to_dict() for s in samples if s.status != OK]
    origin = samples[0]
    on_axis = {s.x: s for s in samples[1:len(xs) + 1]}
    hs = [2.0 ** -k for k in range(kmin, kmax + 1)]
    scan.table = _second_differences(on_axis, hs, origin)
    _shape_checks(scan)
    _fit_scan(scan, xs, on_axis, origin, samples, offaxis, cond_limit)

    if scan.table:
        smallest = scan.table[-1]
        if smallest["D_error"] > abs(smallest["D"]) / 10:
            scan.precision_ok = False
            message = (f"F error {smallest['D_error']:.3g} exceeds D(h)/10 = {abs(smallest['D']) / 10:.3g} "
                       f"at h = {smallest['h']:.3g}")
            if strict:
                raise PrecisionError(message, code="precision-insufficient", details={"h": smallest["h"]})
            logger.warning(message)

    if with_control:
        scan.control = control_scan(a0, p0, q0, kmin, kmax, quad, solver, jobs)
    logger.info(f"Scan k={kmin}..{kmax}: {len(scan.table)} second differences, decreasing={scan.decreasing}, "
                f"slow decay={scan.slow_decay}, c2={scan.c2}, excluded={len(scan.excluded)}")
    return scan


def _fit_scan(scan: ProbeScan, xs, on_axis, origin, samples, offaxis, cond_limit) -> None:
    """Fit the second differences and F itself with logarithmic and polynomial models"""
    if len(scan.table) >= 4:
        h = np.array([row["h"] for row in scan.table])
        ratios = np.array(scan.ratios)
        try:
            fit = fit_model(h, ratios, [("x^2/ln(1/x)", lambda v: log_second_difference(v, 1)),
                                        ("x^2/ln^2(1/x)", lambda v: log_second_difference(v, 2))],
                            cond_limit)
            scan.fits["second_difference"] = fit
            scan.c2 = fit.coefficient("x^2/ln(1/x)")
            scan.c2_relative_error = abs(scan.c2 - C2_TARGET) / C2_TARGET
            for row, model in zip(scan.table, fit.model):
                row["model"] = float(model)
        except FitError as e:
            logger.warning(f"Second-difference fit skipped: {e}")

    usable = [on_axis[x] for x in xs if on_axis[x].status == OK]
    if origin.status != OK or len(usable) < 6:
        logger.warning(f"Only {len(usable)} usable on-axis samples; F fits skipped")
        return
    # (F - F(0))/x^2 keeps the small-x samples from vanishing in the residual
    x = np.array([s.x for s in usable])
    scaled = np.array([(float(s.F) - float(origin.F)) / (s.x * s.x) for s in usable])

    def inv_log(v):
        return 1.0 / np.log(1.0 / v)

    log_basis = [
        ("x", lambda v: 1.0 / v),
        ("x^2/ln(1/x)", inv_log),
        ("x^2/ln^2(1/x)", lambda v: inv_log(v) ** 2),
    ]
    poly_basis = [
        ("x", lambda v: 1.0 / v),
        ("x^2", lambda v: np.ones_like(v)),
        ("x^3", lambda v: v),
    ]
    try:
        log_fit = fit_model(x, scaled, log_basis, cond_limit)
        scan.fits["log_model"] = log_fit
        scan.linear_term = log_fit.coefficient("x")
        scan.log_residual = log_fit.residual_norm
        poly_fit = fit_model(x, scaled, poly_basis, cond_limit)
        scan.fits["polynomial"] = poly_fit
        scan.delta = {"delta1": poly_fit.coefficient("x"), "delta11": poly_fit.coefficient("x^2")}
        scan.polynomial_residual = poly_fit.residual_norm
    except FitError as e:
        logger.warning(f"F fits skipped: {e}")

    if offaxis:
        points = [s for s in samples[1:] if s.status == OK]
        if len(points) >= 10:
            X = np.array([[s.x, s.y] for s in points])
            v = np.array([float(s.F) - float(origin.F) for s in points])
            basis = [
                ("x", lambda p: p[:, 0]), ("y", lambda p: p[:, 1]),
                ("x^2", lambda p: p[:, 0] ** 2), ("xy", lambda p: p[:, 0] * p[:, 1]),
                ("y^2", lambda p: p[:, 1] ** 2),
            ]
            try:
                fit = fit_model(X, v, basis, cond_limit)
                scan.fits["polynomial_2d"] = fit
                scan.delta.update({"delta1": fit.coefficient("x"), "delta2": fit.coefficient("y"),
                                   "delta11": fit.coefficient("x^2"), "delta12": fit.coefficient("xy"),
                                   "delta22": fit.coefficient("y^2")})
            except FitError as e:
                logger.warning(f"Two-variable polynomial fit skipped: {e}")


def control_scan(a0, p0, q0, kmin: int, kmax: int, quad: QuadratureSettings,
                 solver: SolverSettings = SolverSettings(), jobs: int = 1) -> Dict[str, Any]:
    """
    Second differences of F along the smooth family a0 + h at x = y = 0

    F is linear in a0 there, so D(h)/h^2 must vanish within its error bar.
    """
    base0 = solve_accessory(family_target(a0, p0, q0, 0.0, 0.0), quad, solver)
    steps = [2.0 ** -j for j in range(kmin - 1, kmax + 1)]
    tasks = [(a0, p0, q0, 0.0, 0.0, quad, solver, base0)]
    tasks += [(a0 + step, p0, q0, 0.0, 0.0, quad, solver, base0) for step in steps]
    samples = parallel_map(_sample_worker, tasks, jobs)
    origin = samples[0]
    by_step = dict(zip(steps, samples[1:]))
    rows = []
    flat = True
    for k in range(kmin, kmax + 1):
        h = 2.0 ** -k
        one, two = by_step[h], by_step[2 * h]
        if one.status != OK or two.status != OK or origin.status != OK:
            continue
        D = float(two.F - 2 * one.F + origin.F)
        bar = two.F_error + 2 * one.F_error + origin.F_error
        within = abs(D) <= bar
        flat = flat and within
        rows.append({"h": h, "D": D, "D_over_h2": D / (h * h), "error_bar": bar / (h * h), "within": within})
    logger.info(f"Control family: {len(rows)} second differences, flat={flat}")
    return {"rows": rows, "flat": flat and bool(rows)}
