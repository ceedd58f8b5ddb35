#!/usr/bin/env python
"""
Test script for the configuration layer
Checks default creation, missing sections, fraction parsing and the settings builders
"""

import logging
import os
import sys
import tempfile

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "src"))

from config import Config, DEFAULTS
from errors import InvalidConfig

logging.basicConfig(level=logging.INFO, format='%(levelname)s: %(message)s')
logger = logging.getLogger(__name__)


def _temp_path(name="config.ini"):
    return os.path.join(tempfile.mkdtemp(prefix="staircase_cfg_"), name)


def test_defaults_written_when_missing():
    path = _temp_path()
    config = Config(path)
    assert os.path.exists(path)
    for section in DEFAULTS:
        assert section in config.config
    assert config.get_quadrature('precision') == 'standard'
    reread = Config(path)
    assert reread.get_probe('p0') == '1/3'


def test_missing_section_created():
    path = _temp_path()
    with open(path, 'w') as f:
        f.write("[General]\njobs = 2\n")
    config = Config(path)
    assert 'Probe' in config.config
    assert config.jobs() == 2
    # Keys absent from the file fall back to the built-in defaults
    assert config.get_solver('max_iter') == '60'


def test_fraction_values_parse():
    config = Config(_temp_path())
    probe = config.probe_defaults()
    assert probe['p0'] == 1 / 3 and probe['q0'] == 1 / 3
    assert probe['offaxis'] is False
    config.set_probe('offaxis', 'yes')
    assert config.probe_defaults()['offaxis'] is True


def test_invalid_value_rejected():
    config = Config(_temp_path())
    config.set_quadrature('rel_tol', 'tight')
    try:
        config.quadrature_settings()
    except InvalidConfig as e:
        assert e.code == "invalid-config"
        assert e.details["key"] == 'rel_tol'
    else:
        raise AssertionError("non-numeric tolerance accepted")
    config.set_quadrature('rel_tol', '1e-11')
    config.set_quadrature('precision', 'quadruple')
    try:
        config.quadrature_settings()
    except InvalidConfig:
        pass
    else:
        raise AssertionError("unknown precision mode accepted")


def test_settings_builders():
    config = Config(_temp_path())
    quad = config.quadrature_settings()
    assert quad.rel_tol == 1e-11 and not quad.extended
    solver = config.solver_settings()
    assert solver.tolerance == 1e-8 and solver.max_iter == 60
    fit = config.fit_defaults()
    assert fit['kmin'] == 10 and fit['kmax'] == 30
    assert config.max_trace_steps() == 10000
    config.set_general('jobs', '0')
    assert config.jobs() == 1


def test_save_round_trip():
    path = _temp_path()
    config = Config(path)
    config.set_solver('tolerance', '1e-10')
    config.save()
    assert Config(path).solver_settings().tolerance == 1e-10


def main():
    """Run every test and report"""
    print("=== CONFIG TESTS ===")
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
