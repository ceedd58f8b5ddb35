#!/usr/bin/env python3
"""
Staircase Retraction Probe
Command-line entry point: staircase maps, coefficient fits, the retraction probe and exact surface tools
"""

import sys
import json
import math
import logging
import argparse
from fractions import Fraction

from config import Config
from errors import ProbeError, PrecisionError, InvalidSurface
from artifacts import RunManifest, companion_csv, dumps, write_csv, write_json
from quadrature import calibrate, require_mpmath
from sc_engine import (
    DEFAULT_BASE, AccessoryConfig, SideLengths, constants_PQ, forward, linear_coefficients,
    pole_constants, side_integrals, solve_accessory,
)
from asymptotics import CHECKS, geometric_grid, refinement_check, run_expansion_check
from retraction_probe import nonsmooth_scan
from flat_surface import (
    StaircaseSpec, build_pillowcase, build_rect_marked, build_staircase, format_rational, from_json,
    label_angles, polydisk_act, rot, stratum, to_json, trace_vertical,
)
from surgery import reduce_pillowcase

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2
EXIT_PRECISION = 3

# Worked pillowcases for `surgery run`
INSTANCES = {
    "b": ((1, Fraction(1, 2), Fraction(3, 4)), (1, 1, 1)),
    "c": ((1, Fraction(3, 2), 1), (1, 1, 1)),
}


def setup_logging(log_file, log_level='INFO', debug=False):
    """Log to the configured file and to stderr; stdout carries the JSON result"""
    if logging.getLogger().handlers:
        # Embedded use (tests, notebooks) keeps the caller's handlers
        if debug:
            logging.getLogger().setLevel(logging.DEBUG)
        return
    logging.basicConfig(
        level=logging.DEBUG if debug else getattr(logging, str(log_level).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler()
        ]
    )
    if debug:
        logging.getLogger().setLevel(logging.DEBUG)
        logger.debug("Debug mode enabled")


def _rational(text):
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a rational number: {text!r}")


def _real(text):
    return float(_rational(text))


def _add_base_arguments(parser, with_st=False):
    parser.add_argument('--xi1', type=_real, default=DEFAULT_BASE.xi1, help='First pole prevertex')
    parser.add_argument('--xi2', type=_real, default=DEFAULT_BASE.xi2, help='Second pole prevertex')
    parser.add_argument('--xi3', type=_real, default=DEFAULT_BASE.xi3, help='Third prevertex')
    if with_st:
        parser.add_argument('--s', type=_real, default=0.0, help='Gap xi1 - eta1')
        parser.add_argument('--t', type=_real, default=0.0, help='Gap xi2 - eta2')


def parse_arguments(argv=None):
    """Parse command line arguments"""
    parser = argparse.ArgumentParser(description='Staircase Schwarz-Christoffel engine and retraction probe')
    parser.add_argument('--config', type=str, default='config.ini', help='Path to configuration file')
    parser.add_argument('--debug', action='store_true', help='Enable debug mode')
    parser.add_argument('--jobs', type=int, help='Worker processes for grid sweeps')
    parser.add_argument('--precision', choices=('standard', 'extended'), help='Arithmetic backend')
    parser.add_argument('--tol', type=float, help='Relative quadrature tolerance')
    parser.add_argument('--max-iter', type=int, help='Root solver iteration budget')
    commands = parser.add_subparsers(dest='command', required=True)

    sub = commands.add_parser('forward', help='Side lengths of the staircase map for given prevertices')
    _add_base_arguments(sub, with_st=True)
    sub.add_argument('--out', type=str, help='Write the JSON result here instead of stdout')

    sub = commands.add_parser('solve', help='Prevertices for target side lengths')
    for name in ('a', 'b', 'c', 'p', 'q'):
        sub.add_argument(f'--{name}', type=_real, required=True, help=f'Target {name}')
    sub.add_argument('--out', type=str)

    sub = commands.add_parser('coeffs', help='Closed-form and measured coefficients at a rectangle base')
    _add_base_arguments(sub)
    sub.add_argument('--out', type=str)

    sub = commands.add_parser('calibrate', help='Quadrature calibration integrals')
    sub.add_argument('--out', type=str)

    sub = commands.add_parser('fit', help='Fit one asymptotic expansion and compare with its closed form')
    sub.add_argument('--prop', choices=CHECKS, required=True, help='Expansion to check')
    sub.add_argument('--kmin', type=int, help='Largest abscissa is 2**-kmin')
    sub.add_argument('--kmax', type=int, help='Smallest abscissa is 2**-kmax')
    sub.add_argument('--refine', action='store_true', help='Refit on a grid extended by one decade')
    _add_base_arguments(sub)
    sub.add_argument('--out', type=str, help='JSON report; the sample table goes to the same name with .csv')

    sub = commands.add_parser('probe', help='Second-difference scan of the area functional')
    sub.add_argument('--a0', type=_rational)
    sub.add_argument('--p0', type=_rational)
    sub.add_argument('--q0', type=_rational)
    sub.add_argument('--kmin', type=int)
    sub.add_argument('--kmax', type=int)
    sub.add_argument('--offaxis', action='store_true', help='Also sample y = x/2 and y = x')
    sub.add_argument('--strict', action='store_true', help='Fail when the F error swamps D(h)')
    sub.add_argument('--no-control', action='store_true', help='Skip the a0-only control family')
    sub.add_argument('--out', type=str, help='JSON report; the scan table goes to the same name with .csv')

    surface = commands.add_parser('surface', help='Exact cylinder-diagram operations')
    actions = surface.add_subparsers(dest='action', required=True)
    sub = actions.add_parser('build', help='Build a staircase, marked rectangle or pillowcase')
    sub.add_argument('--type', choices=('staircase', 'rect', 'pillow-b', 'pillow-c'), required=True)
    for name in ('a', 'b', 'c', 'p', 'q'):
        sub.add_argument(f'--{name}', type=_rational)
    sub.add_argument('--widths', type=_rational, nargs=3)
    sub.add_argument('--heights', type=_rational, nargs=3)
    sub.add_argument('--out', type=str)
    sub = actions.add_parser('act', help='Polydisk action on one cylinder')
    sub.add_argument('--input', type=str, required=True)
    sub.add_argument('--cyl', type=int, required=True)
    sub.add_argument('--re', type=_rational, default=Fraction(0))
    sub.add_argument('--im', type=_rational, default=Fraction(1))
    sub.add_argument('--out', type=str)
    for action, text in (('rot', 'Rotate by a quarter turn'), ('trace', 'Vertical cylinder decomposition'),
                         ('stratum', 'Cone points and labelled angles')):
        sub = actions.add_parser(action, help=text)
        sub.add_argument('--input', type=str, required=True)
        sub.add_argument('--out', type=str)

    surgery = commands.add_parser('surgery', help='Reduce a pillowcase to a staircase')
    runs = surgery.add_subparsers(dest='action', required=True)
    sub = runs.add_parser('run', help='Run the reduction on a worked instance or an input surface')
    sub.add_argument('instance', nargs='?', choices=sorted(INSTANCES), help='Worked pillowcase instance')
    sub.add_argument('--input', type=str, help='Surface JSON to reduce instead')
    sub.add_argument('--out', type=str)

    return parser.parse_args(argv)


def _apply_overrides(args, config):
    """Command line flags take precedence over the configuration file"""
    if args.jobs is not None:
        config.set_general('jobs', args.jobs)
        logger.info(f"Using {args.jobs} worker processes")
    if args.precision:
        config.set_quadrature('precision', args.precision)
    if args.tol is not None:
        config.set_quadrature('rel_tol', args.tol)
        config.set_quadrature('abs_tol', args.tol / 100)
    if args.max_iter is not None:
        config.set_solver('max_iter', args.max_iter)
    if args.command == 'probe':
        for key in ('a0', 'p0', 'q0', 'kmin', 'kmax'):
            if getattr(args, key) is not None:
                config.set_probe(key, getattr(args, key))
        if args.offaxis:
            config.set_probe('offaxis', 'true')


def _settings(config):
    return {section: dict(config.config[section]) for section in config.config.sections()}


def _read_surface(path):
    try:
        with open(path, encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidSurface(f"Cannot read surface from {path}: {e}")
    return from_json(data.get('surface', data))


def cmd_forward(args, config):
    quad = config.quadrature_settings()
    cfg = AccessoryConfig(args.xi1, args.xi2, args.xi3, args.s, args.t)
    sides = forward(cfg, quad)
    return {"config": cfg.to_dict(), "sides": sides.to_dict()}, dict(sides.errors), None


def cmd_solve(args, config):
    quad = config.quadrature_settings()
    target = SideLengths(args.a, args.b, args.c, args.p, args.q)
    logger.info(f"Solving for {target} with tolerance {config.get_solver('tolerance')}, "
                f"at most {config.get_solver('max_iter')} solver iterations")
    cfg = solve_accessory(target, quad, config.solver_settings())
    sides = forward(cfg, quad)
    residual = max(abs(float(getattr(sides, n)) - float(getattr(target, n))) for n in ('a', 'b', 'c', 'p', 'q'))
    payload = {"target": target.to_dict(), "config": cfg.to_dict(), "sides": sides.to_dict(), "residual": residual}
    return payload, {"residual": residual, **sides.errors}, None


def cmd_coeffs(args, config):
    quad = config.quadrature_settings()
    base = AccessoryConfig(args.xi1, args.xi2, args.xi3)
    bundle = side_integrals(base, quad)
    kb, kc = pole_constants(base)
    p_const, q_const = constants_PQ(base, quad)
    A1, A2 = linear_coefficients(base, quad)
    payload = {
        "base": base.to_dict(),
        "J": float(bundle.J),
        "K_B": kb,
        "K_C": kc,
        "P_const": float(p_const),
        "Q_const": float(q_const),
        "beta11": math.pi * float(p_const) ** 2,
        "beta22": math.pi * float(q_const) ** 2,
        "A1": A1,
        "A2": A2,
        "sides": forward(base, quad).to_dict(),
    }
    return payload, dict(bundle.errors), None


def cmd_calibrate(args, config):
    checks = calibrate(config.quadrature_settings())
    return {"calibration": checks}, {k: v["abs_error"] for k, v in checks.items()}, None


def cmd_fit(args, config):
    quad = config.quadrature_settings()
    defaults = config.fit_defaults()
    kmin = args.kmin if args.kmin is not None else defaults['kmin']
    kmax = args.kmax if args.kmax is not None else defaults['kmax']
    base = AccessoryConfig(args.xi1, args.xi2, args.xi3)
    report = run_expansion_check(args.prop, base, geometric_grid(kmin, kmax), quad,
                                 defaults['cond_limit'], config.jobs())
    payload = report.to_dict()
    payload["ok"] = report.ok
    if args.refine:
        payload["refinement"] = refinement_check(report, quad, cond_limit=defaults['cond_limit'], jobs=config.jobs())
    return payload, dict(report.relative_errors), report.to_frame()


def cmd_probe(args, config):
    quad = config.quadrature_settings()
    values = config.probe_defaults()
    logger.info(f"Probe base a0={config.get_probe('a0')} p0={config.get_probe('p0')} q0={config.get_probe('q0')}")
    scan = nonsmooth_scan(values['a0'], values['p0'], values['q0'], values['kmin'], values['kmax'], quad,
                          config.solver_settings(), jobs=config.jobs(),
                          offaxis=values['offaxis'],
                          cond_limit=config.fit_defaults()['cond_limit'], strict=args.strict,
                          with_control=not args.no_control)
    errors = {"max_D_error": max((row["D_error"] for row in scan.table), default=0.0),
              "precision_ok": scan.precision_ok}
    return scan.to_dict(), errors, scan.to_frame()


def _built_surface(args):
    if args.type == 'staircase':
        spec = StaircaseSpec(args.a, args.b, args.c, args.p, args.q)
        return build_staircase(spec)
    if args.type == 'rect':
        return build_rect_marked(args.a, args.p, args.q)
    if args.widths is None or args.heights is None:
        raise InvalidSurface("Pillowcases need --widths and --heights", code="invalid-dims")
    return build_pillowcase(args.type[-1], args.widths, args.heights)


def _decomposition(decomposition):
    return {
        "area": format_rational(decomposition.area),
        "cylinders": [
            {"width": format_rational(v.width), "length": format_rational(v.length),
             "crossings": [[j, format_rational(start), format_rational(width), up]
                           for j, start, width, up in v.crossings]}
            for v in decomposition.cylinders
        ],
        "adjacency": [list(pair) for pair in decomposition.adjacency],
    }


def cmd_surface(args, config):
    max_steps = config.max_trace_steps()
    if args.action == 'build':
        return {"surface": to_json(_built_surface(args))}, {}, None
    surface = _read_surface(args.input)
    if args.action == 'act':
        return {"surface": to_json(polydisk_act(surface, args.cyl, (args.re, args.im)))}, {}, None
    if args.action == 'rot':
        return {"surface": to_json(rot(surface, max_steps))}, {}, None
    if args.action == 'trace':
        return {"decomposition": _decomposition(trace_vertical(surface, max_steps))}, {}, None
    signature = stratum(surface)
    return {"stratum": str(signature), "orders": list(signature.orders), "angles": label_angles(surface)}, {}, None


def cmd_surgery(args, config):
    if args.input:
        surface = _read_surface(args.input)
    elif args.instance:
        widths, heights = INSTANCES[args.instance]
        surface = build_pillowcase(args.instance, widths, heights)
    else:
        raise InvalidSurface("surgery run needs an instance (b or c) or --input", code="invalid-dims")
    staircase, trace = reduce_pillowcase(surface, config.max_trace_steps())
    payload = trace.to_json()
    payload["result"] = to_json(staircase)
    return payload, {}, None


COMMANDS = {
    'forward': cmd_forward,
    'solve': cmd_solve,
    'coeffs': cmd_coeffs,
    'calibrate': cmd_calibrate,
    'fit': cmd_fit,
    'probe': cmd_probe,
    'surface': cmd_surface,
    'surgery': cmd_surgery,
}


def _emit(args, payload, manifest, frame):
    if args.out:
        write_json(args.out, payload, manifest)
        if frame is not None:
            write_csv(companion_csv(args.out), frame)
    else:
        sys.stdout.write(dumps(payload, manifest))


def parse_and_dispatch(argv):
    """
    Run one command

    Args:
        argv: Arguments without the program name

    Returns:
        Exit code: 0 success, 1 domain error, 2 usage error, 3 extended precision unavailable
    """
    try:
        args = parse_arguments(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    try:
        config = Config(args.config)
        setup_logging(config.get_general('log_file'), config.get_general('log_level'), args.debug)
        _apply_overrides(args, config)
        if config.quadrature_settings().extended:
            require_mpmath()

        manifest = RunManifest(['staircase-probe'] + list(argv), _settings(config))
        payload, errors, frame = COMMANDS[args.command](args, config)
        manifest.error_estimates = errors
        _emit(args, payload, manifest.finish(), frame)
    except PrecisionError as e:
        logger.error(f"{e}")
        sys.stderr.write(dumps(e.to_dict()))
        return EXIT_PRECISION if e.code == "precision-unavailable" else EXIT_DOMAIN
    except ProbeError as e:
        logger.error(f"{args.command} failed: {e}", exc_info=args.debug)
        sys.stderr.write(dumps(e.to_dict()))
        return EXIT_DOMAIN

    return EXIT_OK


def main():
    """Main application entry point"""
    return parse_and_dispatch(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
