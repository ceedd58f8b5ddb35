#!/usr/bin/env python
"""
Test script for the asymptotic coefficient fits
Checks the least-squares helper and the B, C, P, Q and area expansions at the default base
"""

import logging
import math
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "src"))

from asymptotics import (
    BASES, fit_model, geometric_grid, refinement_check, run_expansion_check,
)
from errors import FitError, InvalidConfig
from quadrature import QuadratureSettings
from sc_engine import DEFAULT_BASE, pole_constants

logging.basicConfig(level=logging.INFO, format='%(levelname)s: %(message)s')
logger = logging.getLogger(__name__)

QUAD = QuadratureSettings()
SLOW = os.environ.get("STAIRCASE_SLOW") == "1"
KMAX = 30 if SLOW else 22


def test_fit_exact_basis():
    s = np.array(geometric_grid(4, 20))
    fit = fit_model(s, 3 * s + 5 * s ** 2, [BASES["s"], BASES["s2"]])
    assert abs(fit.coefficient("s") - 3) < 1e-12
    assert abs(fit.coefficient("s^2") - 5) < 1e-6
    assert fit.residual_norm < 1e-15


def test_fit_log_basis():
    s = np.array(geometric_grid(10, 30))
    fit = fit_model(s, s * np.log(1 / s), [BASES["slog"], BASES["s"]])
    assert abs(fit.coefficient("s ln(1/s)") - 1) < 1e-10
    assert abs(fit.coefficient("s")) < 1e-9


def test_fit_noise_bound():
    s = np.array(geometric_grid(4, 20))
    rng = np.random.default_rng(3)
    noise = 1e-12 * rng.standard_normal(len(s))
    clean = fit_model(s, 3 * s + 5 * s ** 2, [BASES["s"], BASES["s2"]])
    noisy = fit_model(s, 3 * s + 5 * s ** 2 + noise, [BASES["s"], BASES["s2"]])
    design = np.column_stack([s, s ** 2])
    norms = np.linalg.norm(design, axis=0)
    smallest = np.linalg.svd(design / norms, compute_uv=False)[-1]
    bound = np.linalg.norm(noise) / smallest
    shift = np.abs(noisy.coefficients - clean.coefficients) * norms
    assert np.all(shift <= bound * (1 + 1e-6) + 1e-15)


def test_fit_zero_data():
    s = np.array(geometric_grid(10, 20))
    fit = fit_model(s, np.zeros(len(s)), [BASES["slog"], BASES["s"]])
    assert np.all(fit.coefficients == 0)
    assert np.all(fit.model == 0)


def test_fit_errors():
    s = np.array(geometric_grid(10, 12))
    try:
        fit_model(s, s, [BASES["s"], BASES["s2"]])
    except FitError as e:
        assert e.code == "too-few-samples"
    else:
        raise AssertionError("three samples accepted for two unknowns")
    s = np.array(geometric_grid(10, 20))
    try:
        fit_model(s, s, [BASES["s"], ("zero", lambda v: 0 * v)])
    except FitError as e:
        assert e.code == "rank-deficient"
    else:
        raise AssertionError("vanishing column accepted")
    try:
        fit_model(s, s, [BASES["s"], ("s again", lambda v: 2 * v)])
    except FitError as e:
        assert e.code in ("fit-ill-conditioned", "rank-deficient")
    else:
        raise AssertionError("duplicated column accepted")


def test_geometric_grid():
    grid = geometric_grid(10, 30)
    assert len(grid) == 21 and grid[0] == 2.0 ** -10
    assert all(b < a for a, b in zip(grid, grid[1:]))
    try:
        geometric_grid(5, 4)
    except InvalidConfig:
        pass
    else:
        raise AssertionError("empty grid accepted")


def test_expansion_B():
    report = run_expansion_check("B", DEFAULT_BASE, geometric_grid(10, KMAX), QUAD)
    assert report.passed["K_B"], report.relative_errors
    assert abs(report.predictions["K_B"] - math.pi / math.sqrt(3)) < 1e-14
    assert report.measured["K_B"] > 0


def test_expansion_C():
    report = run_expansion_check("C", DEFAULT_BASE, geometric_grid(10, KMAX), QUAD)
    assert report.passed["K_C"], report.relative_errors


def test_expansion_P_shares_C_constant():
    report = run_expansion_check("P", DEFAULT_BASE, geometric_grid(10, KMAX), QUAD)
    assert report.passed["alpha"], report.relative_errors
    _, kc = pole_constants(DEFAULT_BASE)
    assert report.measured["alpha"] > 0
    assert abs(report.predictions["alpha"] - kc / math.pi) < 1e-15


def test_expansion_Q_sign_flip():
    p_report = run_expansion_check("P", DEFAULT_BASE, geometric_grid(10, KMAX), QUAD)
    report = run_expansion_check("Q", DEFAULT_BASE, geometric_grid(10, KMAX), QUAD)
    assert report.passed["alpha_prime"], report.relative_errors
    assert report.passed["minus_alpha"], report.relative_errors
    assert report.passed["sign_flip"]
    minus_alpha = report.measured["minus_alpha"]
    alpha = p_report.measured["alpha"]
    assert minus_alpha < 0 < alpha
    assert abs(abs(minus_alpha) - alpha) < 0.05 * alpha


def test_expansion_area():
    report = run_expansion_check("AREA", DEFAULT_BASE, geometric_grid(10, KMAX), QUAD)
    assert report.passed["beta11"], report.relative_errors
    assert report.passed["beta22"], report.relative_errors
    assert report.measured["beta11"] > 0 and report.measured["beta22"] > 0
    assert report.ok, report.passed
    for name in ("beta1", "beta2"):
        assert abs(report.measured[name]) < 1e-2 * report.extras[f"{name}_scale"], report.measured
        assert abs(report.predictions[name]) < 1e-4 * report.extras[f"{name}_scale"], report.predictions
    assert "A1" in report.extras and "A2" in report.extras
    frame = report.to_frame()
    assert list(frame.columns) == ["which", "axis", "abscissa", "raw", "model"]
    assert len(frame) == 2 * len(report.grid)


def test_report_serialises():
    report = run_expansion_check("B", DEFAULT_BASE, geometric_grid(10, 16), QUAD)
    data = report.to_dict()
    assert data["which"] == "B"
    assert data["fits"]["s"]["names"] == ["s", "s^2"]
    assert data["samples"]["s"]["abscissa"][0] == 2.0 ** -10


def test_bad_inputs():
    for which, base, grid in (("X", DEFAULT_BASE, geometric_grid(10, 16)),
                              ("B", DEFAULT_BASE.with_st(1e-3, 0.0), geometric_grid(10, 16)),
                              ("B", DEFAULT_BASE, [1e-1, 1e-2, 1e-3, 1e-4])):
        try:
            run_expansion_check(which, base, grid, QUAD)
        except InvalidConfig:
            pass
        else:
            raise AssertionError(f"{which} on {grid[:2]} accepted")


def test_refinement_stability():
    if not SLOW:
        logger.info("Grid refinement check runs with STAIRCASE_SLOW=1")
        return
    report = run_expansion_check("P", DEFAULT_BASE, geometric_grid(10, 26), QUAD)
    changes = refinement_check(report, QUAD)
    assert abs(changes["alpha"]["change"]) < 0.05 * abs(changes["alpha"]["before"])


def main():
    """Run every test and report"""
    print("=== ASYMPTOTICS TESTS ===")
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
