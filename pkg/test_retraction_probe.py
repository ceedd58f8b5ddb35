#!/usr/bin/env python
"""
Test script for the retraction probe
Checks the rectangle family, the (s, t) location step, F and the second-difference scans
"""

import functools
import logging
import math
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "src"))

import quadrature
from errors import OutOfRange
from quadrature import QuadratureSettings
from retraction_probe import (
    C2_TARGET, control_scan, eval_F, family_target, leading_order_guess,
    locate_st, nonsmooth_scan,
)
from sc_engine import SolverSettings, constants_PQ, forward, solve_accessory

logging.basicConfig(level=logging.INFO, format='%(levelname)s: %(message)s')
logger = logging.getLogger(__name__)

QUAD = QuadratureSettings()
SOLVER = SolverSettings()
SLOW = os.environ.get("STAIRCASE_SLOW") == "1"
A0, P0, Q0 = 1.0, 1 / 3, 1 / 3


def test_family_target():
    target = family_target(A0, P0, Q0, 0.0, 0.0)
    assert target.values() == (1.0, 0.0, 0.0, P0, Q0)
    shifted = family_target(A0, P0, Q0, 1e-3, 0.0)
    assert shifted.p == P0 - 1e-3 and shifted.q == Q0
    for x, y in ((P0, 0.0), (0.0, Q0), (-1e-3, 0.0)):
        try:
            family_target(A0, P0, Q0, x, y)
        except OutOfRange as e:
            assert e.code == "out-of-range"
        else:
            raise AssertionError(f"({x}, {y}) accepted")


def _base(x, y):
    return solve_accessory(family_target(A0, P0, Q0, x, y), QUAD, SOLVER)


@functools.lru_cache(maxsize=None)
def _scan(kmax):
    return nonsmooth_scan(A0, P0, Q0, 8, kmax, QUAD, SOLVER, with_control=False)


def test_locate_origin_and_degenerate():
    base = _base(0.0, 0.0)
    assert locate_st(base, P0, Q0, 0.0, 0.0, QUAD, SOLVER) == (0.0, 0.0, 0.0)
    try:
        locate_st(base, P0, Q0, 0.0, 1e-4, QUAD, SOLVER)
    except OutOfRange as e:
        assert e.code == "degenerate-input"
    else:
        raise AssertionError("x = 0 < y accepted")


def test_locate_approaches_leading_order():
    ks = (8, 10, 12, 14, 16) if SLOW else (8, 12, 16)
    gaps = []
    for k in ks:
        x = y = 2.0 ** -k
        base = _base(x, y)
        s, t, residual = locate_st(base, P0, Q0, x, y, QUAD, SOLVER)
        assert residual < 1e-8
        sides = forward(base.with_st(s, t), QUAD)
        assert abs(sides.p - P0) < 1e-8 and abs(sides.q - Q0) < 1e-8
        p_const, q_const = constants_PQ(base, QUAD)
        s_guess, t_guess = leading_order_guess(p_const, q_const, x, y)
        assert s > 0 and t > 0
        s_ratio, t_ratio = s / s_guess, t / t_guess
        assert 0.3 < s_ratio < 1.2 and 0.3 < t_ratio < 1.2, (k, s_ratio, t_ratio)
        gaps.append((abs(s_ratio - 1), abs(t_ratio - 1)))
    # logarithmic corrections: the ratios close in on 1 as x shrinks
    assert all(later[0] < earlier[0] for earlier, later in zip(gaps, gaps[1:])), gaps
    assert all(later[1] < earlier[1] for earlier, later in zip(gaps, gaps[1:])), gaps


def test_located_s_increases_with_y():
    x = 1e-4
    located = []
    for y in (5e-5, 1e-4, 2e-4):
        s, _, _ = locate_st(_base(x, y), P0, Q0, x, y, QUAD, SOLVER)
        located.append(s)
    assert located[0] < located[1] < located[2]


def test_eval_F_origin():
    value = eval_F(A0, P0, Q0, 0.0, 0.0, QUAD, SOLVER)
    assert abs(value.F - A0) < 1e-8
    assert value.s == 0 and value.t == 0


def test_eval_F_grows_along_x():
    origin = eval_F(A0, P0, Q0, 0.0, 0.0, QUAD, SOLVER).F
    for k in range(8, 13):
        value = eval_F(A0, P0, Q0, 2.0 ** -k, 0.0, QUAD, SOLVER)
        assert value.F > origin, k
        assert value.sides.b > 0 and value.sides.c > 0


def test_scan_second_differences_drift():
    kmax = 16 if SLOW else 14
    scan = _scan(kmax)
    assert not scan.excluded
    assert abs(scan.samples[0].F - A0) < 1e-8
    assert all(r > 0 for r in scan.ratios), scan.ratios
    # D(h)/h^2 creeps toward zero instead of settling on 2 F''(0)
    assert scan.decreasing, scan.ratios
    assert scan.slow_decay, scan.decay_rates
    assert scan.log_scaled_increasing, [row["D_log_scaled"] for row in scan.table]
    assert all(row["D_log_scaled"] < 2 * C2_TARGET for row in scan.table)
    frame = scan.to_frame()
    assert list(frame.columns) == ["h", "F", "D", "D_over_h2", "D_log_scaled", "model"]
    assert len(frame) == kmax - 8 + 1
    data = scan.to_dict()
    assert data["c2_target"] == 2 * math.pi


def test_scan_log_coefficient():
    scan = _scan(14)
    assert "second_difference" in scan.fits
    assert scan.c2 > 0
    assert scan.c2_relative_error < 0.35, scan.c2
    # the linear term cancels at rectangle bases
    assert abs(scan.linear_term) < 1e-3, scan.linear_term
    assert scan.polynomial_residual > 2 * scan.log_residual, (scan.polynomial_residual, scan.log_residual)


def test_control_family_is_flat():
    control = control_scan(A0, P0, Q0, 8, 12, QUAD, SOLVER)
    assert control["flat"], control["rows"]


def test_scan_range_checked():
    try:
        nonsmooth_scan(A0, P0, Q0, 8, 20, QUAD, SOLVER)
    except OutOfRange:
        pass
    else:
        raise AssertionError("k = 20 accepted in standard precision")


def test_extended_scan_c2():
    if not SLOW or quadrature.mpmath is None:
        logger.info("Extended precision scan runs with STAIRCASE_SLOW=1 and mpmath installed")
        return
    quad = QuadratureSettings(rel_tol=1e-24, abs_tol=1e-26, precision="extended", extended_dps=32)
    solver = SolverSettings(tolerance=1e-20)
    scan = nonsmooth_scan(A0, P0, Q0, 8, 24, quad, solver, jobs=os.cpu_count() or 1, with_control=False)
    assert scan.precision_ok
    assert scan.decreasing and scan.slow_decay, scan.ratios
    assert scan.c2_relative_error is not None and scan.c2_relative_error < 0.3, scan.c2


def main():
    """Run every test and report"""
    print("=== RETRACTION PROBE TESTS ===")
    tests = [(name, func) for name, func in globals().items() if name.startswith("test_") and callable(func)]
    failed = 0
    for name, func in tests:
        try:
            func()
            print(f"✅ {name}")
        except Exception as e:
            failed += 1
            logger.error(f"{name} failed: {e}", exc_info=True)
            print(f"❌ {name}")
    print(f"\n=== {len(tests) - failed}/{len(tests)} PASSED ===")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
