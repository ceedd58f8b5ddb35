"""
Configuration Module for the Staircase Retraction Probe
Handles loading and saving configuration and builds the engine settings from it
"""

import os
import logging
import configparser
from fractions import Fraction

from errors import InvalidConfig
from quadrature import QuadratureSettings
from sc_engine import SolverSettings

logger = logging.getLogger(__name__)

DEFAULTS = {
    'General': {
        'log_file': 'staircase_probe.log',
        'log_level': 'INFO',
        'jobs': '1',
    },
    'Quadrature': {
        'rel_tol': '1e-11',
        'abs_tol': '1e-13',
        'limit': '200',
        'precision': 'standard',  # Options: standard, extended
        'extended_dps': '32',
    },
    'Solver': {
        'tolerance': '1e-8',
        'max_iter': '60',
        'eps_sep': '1e-12',
        'continuation_steps': '8',
    },
    'Surface': {
        'max_steps': '10000',
    },
    'Asymptotics': {
        'kmin': '10',
        'kmax': '30',
        'cond_limit': '1e12',
    },
    'Probe': {
        'a0': '1',
        'p0': '1/3',
        'q0': '1/3',
        'kmin': '8',
        'kmax': '16',
        'offaxis': 'false',
    },
}


class Config:
    """
    Configuration manager for the application
    """

    def __init__(self, config_path='config.ini'):
        """
        Initialize the configuration manager

        Args:
            config_path: Path to the configuration file
        """
        self.config_path = config_path
        self.config = configparser.ConfigParser()

        # Load configuration
        if os.path.exists(config_path):
            self.load()
        else:
            self.create_default()
            self.save()

        logger.info(f"Configuration loaded from {config_path}")

    def load(self):
        """Load configuration from file"""
        try:
            self.config.read(self.config_path)

            # Ensure all required sections exist
            self._ensure_sections()

            logger.debug("Configuration loaded successfully")
        except configparser.Error as e:
            logger.error(f"Error loading configuration: {e}", exc_info=True)
            self.create_default()

    def save(self):
        """Save configuration to file"""
        try:
            with open(self.config_path, 'w') as f:
                self.config.write(f)
            logger.debug("Configuration saved successfully")
        except OSError as e:
            logger.error(f"Error saving configuration: {e}", exc_info=True)

    def create_default(self):
        """Create default configuration"""
        self.config.clear()
        for section, values in DEFAULTS.items():
            self.config[section] = dict(values)
        logger.debug("Default configuration created")

    def _ensure_sections(self):
        """Ensure all required sections exist in the configuration"""
        for section in DEFAULTS:
            if section not in self.config:
                self.config[section] = {}
                logger.warning(f"Missing section '{section}' created in configuration")

    def get_general(self, key, default=None):
        """Get a value from the General section"""
        return self._get_value('General', key, default)

    def get_quadrature(self, key, default=None):
        """Get a value from the Quadrature section"""
        return self._get_value('Quadrature', key, default)

    def get_solver(self, key, default=None):
        """Get a value from the Solver section"""
        return self._get_value('Solver', key, default)

    def get_probe(self, key, default=None):
        """Get a value from the Probe section"""
        return self._get_value('Probe', key, default)

    def _get_value(self, section, key, default=None):
        """
        Get a value from the configuration

        Args:
            section: Section name
            key: Key name
            default: Default value if key doesn't exist (the built-in default when None)

        Returns:
            Configuration value or default
        """
        if default is None:
            default = DEFAULTS.get(section, {}).get(key)

        if section not in self.config:
            logger.warning(f"Section '{section}' not found in configuration")
            return default

        if key not in self.config[section]:
            logger.warning(f"Key '{key}' not found in section '{section}'")
            return default

        return self.config[section][key]

    def set_general(self, key, value):
        """Set a value in the General section"""
        self._set_value('General', key, value)

    def set_quadrature(self, key, value):
        """Set a value in the Quadrature section"""
        self._set_value('Quadrature', key, value)

    def set_solver(self, key, value):
        """Set a value in the Solver section"""
        self._set_value('Solver', key, value)

    def set_probe(self, key, value):
        """Set a value in the Probe section"""
        self._set_value('Probe', key, value)

    def _set_value(self, section, key, value):
        """
        Set a value in the configuration

        Args:
            section: Section name
            key: Key name
            value: Value to set
        """
        if section not in self.config:
            self.config[section] = {}
            logger.warning(f"Created missing section '{section}'")

        self.config[section][key] = str(value)

    def _number(self, section, key, kind=float):
        """Typed read; fractions such as 1/3 are accepted for floats"""
        raw = self._get_value(section, key)
        try:
            if kind is int:
                return int(raw)
            if kind is bool:
                return str(raw).strip().lower() in ('1', 'true', 'yes', 'on')
            return float(Fraction(str(raw).strip()))
        except (TypeError, ValueError, ZeroDivisionError):
            raise InvalidConfig(f"Invalid value '{raw}' for {section}.{key}",
                                details={"section": section, "key": key, "value": raw})

    def quadrature_settings(self):
        """
        Build the quadrature settings

        Returns:
            Validated QuadratureSettings
        """
        return QuadratureSettings(
            rel_tol=self._number('Quadrature', 'rel_tol'),
            abs_tol=self._number('Quadrature', 'abs_tol'),
            limit=self._number('Quadrature', 'limit', int),
            precision=str(self.get_quadrature('precision')).strip().lower(),
            extended_dps=self._number('Quadrature', 'extended_dps', int),
        ).validate()

    def solver_settings(self):
        return SolverSettings(
            tolerance=self._number('Solver', 'tolerance'),
            max_iter=self._number('Solver', 'max_iter', int),
            eps_sep=self._number('Solver', 'eps_sep'),
            continuation_steps=self._number('Solver', 'continuation_steps', int),
        ).validate()

    def probe_defaults(self):
        """Base rectangle and scan range of the probe"""
        return {
            'a0': self._number('Probe', 'a0'),
            'p0': self._number('Probe', 'p0'),
            'q0': self._number('Probe', 'q0'),
            'kmin': self._number('Probe', 'kmin', int),
            'kmax': self._number('Probe', 'kmax', int),
            'offaxis': self._number('Probe', 'offaxis', bool),
        }

    def fit_defaults(self):
        return {
            'kmin': self._number('Asymptotics', 'kmin', int),
            'kmax': self._number('Asymptotics', 'kmax', int),
            'cond_limit': self._number('Asymptotics', 'cond_limit'),
        }

    def max_trace_steps(self):
        return self._number('Surface', 'max_steps', int)

    def jobs(self):
        return max(1, self._number('General', 'jobs', int))
