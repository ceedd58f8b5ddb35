#!/usr/bin/env python
"""
Test script for the singular-endpoint quadrature
Checks calibration integrals, exact zeros and the extended precision path
"""

import logging
import math
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "src"))

import quadrature
from errors import InvalidConfig, PrecisionError
from quadrature import (
    NumberContext, PowerFactor, QuadratureSettings, calibrate, integrate_power_product,
)

logging.basicConfig(level=logging.INFO, format='%(levelname)s: %(message)s')
logger = logging.getLogger(__name__)

SETTINGS = QuadratureSettings()


def test_calibration():
    checks = calibrate(SETTINGS)
    assert abs(checks["inverse_sqrt"]["value"] - 2.0) < 1e-12
    assert abs(checks["sqrt"]["value"] - 2.0 / 3.0) < 1e-12
    assert all(check["converged"] for check in checks.values())


def test_empty_interval_is_exact_zero():
    result = integrate_power_product([PowerFactor(0.0, 0.0, 1.0, -0.5)], 0.0, SETTINGS)
    assert result.value == 0.0 and result.converged and result.evaluations == 0


def test_both_endpoints_singular():
    # the integral of 1/sqrt(y(1-y)) over [0, 1] is pi
    factors = [PowerFactor(0.0, 1.0, 1.0, -0.5), PowerFactor(1.0, 0.0, -1.0, -0.5)]
    result = integrate_power_product(factors, 1.0, SETTINGS)
    assert abs(result.value - math.pi) < 1e-12
    assert result.error < 1e-10


def test_scaled_interval():
    # 1/sqrt(y(L-y)) integrates to pi on any [0, L]
    length = 1e-9
    factors = [PowerFactor(0.0, length, 1.0, -0.5), PowerFactor(length, 0.0, -1.0, -0.5)]
    result = integrate_power_product(factors, length, SETTINGS)
    assert abs(result.value - math.pi) < 1e-11


def test_near_singular_factor():
    # sqrt(t + y)/sqrt(y) on [0, 1] has a boundary layer of width t
    t = 1e-8
    factors = [PowerFactor(0.0, 1.0, 1.0, -0.5), PowerFactor(t, 1.0 + t, 1.0, 0.5)]
    result = integrate_power_product(factors, 1.0, SETTINGS)
    exact = math.sqrt(1 + t) + t * math.asinh(1 / math.sqrt(t))
    assert abs(result.value - exact) < 1e-10
    assert result.converged


def test_regular_factors():
    # (1 + y)**2 on [0, 2] has no singular endpoint
    result = integrate_power_product([PowerFactor(1.0, 3.0, 1.0, 2.0)], 2.0, SETTINGS)
    assert abs(result.value - 26.0 / 3.0) < 1e-12
    assert result.converged and result.evaluations > 0


def test_subinterval_limit_reported():
    # a single subinterval cannot resolve the interior branch point at y = 0.3; flagged, not raised
    factors = [PowerFactor(-0.3, 0.7, 1.0, 0.5)]
    result = integrate_power_product(factors, 1.0, QuadratureSettings(limit=1))
    assert not result.converged
    assert math.isfinite(result.value)


def test_refinement_is_monotone():
    factors = [PowerFactor(0.0, 1.0, 1.0, -0.5), PowerFactor(0.5, 1.5, 1.0, 0.5), PowerFactor(2.0, 1.0, -1.0, -0.5)]
    coarse = integrate_power_product(factors, 1.0, QuadratureSettings(rel_tol=1e-8, abs_tol=1e-10))
    fine = integrate_power_product(factors, 1.0, QuadratureSettings(rel_tol=1e-8, abs_tol=1e-10).tightened())
    assert abs(fine.value - coarse.value) <= max(coarse.error, 1e-15)


def test_invalid_settings():
    for bad in (QuadratureSettings(rel_tol=0.0), QuadratureSettings(precision="quad"), QuadratureSettings(limit=0)):
        try:
            bad.validate()
        except InvalidConfig as e:
            assert e.code == "invalid-config"
        else:
            raise AssertionError(f"{bad} accepted")


def test_extended_precision():
    if quadrature.mpmath is None:
        logger.info("mpmath not installed; extended path skipped")
        return
    settings = QuadratureSettings(rel_tol=1e-25, abs_tol=1e-28, precision="extended", extended_dps=32)
    ctx = NumberContext(settings)
    with ctx.scope():
        factors = [PowerFactor(ctx.number(0), ctx.number(1), ctx.number(1), -0.5),
                   PowerFactor(ctx.number(1), ctx.number(0), ctx.number(-1), -0.5)]
        result = integrate_power_product(factors, ctx.number(1), settings)
        assert abs(result.value - quadrature.mpmath.pi) < quadrature.mpmath.mpf("1e-25")
    checks = calibrate(settings)
    assert checks["inverse_sqrt"]["abs_error"] < 1e-15


def test_extended_without_mpmath():
    saved = quadrature.mpmath
    quadrature.mpmath = None
    try:
        NumberContext(QuadratureSettings(precision="extended"))
    except PrecisionError as e:
        assert e.code == "precision-unavailable"
    else:
        raise AssertionError("extended precision silently downgraded")
    finally:
        quadrature.mpmath = saved


def main():
    """Run every test and report"""
    print("=== QUADRATURE TESTS ===")
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
