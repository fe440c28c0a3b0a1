"""Command-line interface of imaginav.

Subcommands::

    imaginav gen-suite spec.json --seed S --n 100 --out suite/
    imaginav run suite/ --config c.json
    imaginav ablate suite/ --config c.json
    imaginav sweep-theta suite/ --thetas 0,0.2,0.4,0.6,0.8,1.0
    imaginav render log.jsonl --out dir/

Exit status is 0 on success, 1 when any episode was invalid and 2 on
configuration or suite errors.
"""

import argparse
import json
import logging
import os
import sys

from ._version import __version__
from .harness.config import ConfigError, default_output_dir, load_config
from .harness.metrics import ReportError
from .harness.render import plot_theta_sweep, render_log
from .harness.suite import (ABLATION_MODES, SuiteError, ablate, generate_suite, load_suite_spec, run_suite,
                            sweep_theta)


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_CONFIG = 2


def _thetas(text):
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f'Expected comma-separated numbers, got {text!r}.') from e


def _parse_args(argv=None):
    parser = argparse.ArgumentParser(prog='imaginav', description='Imagination-to-value navigation planner.')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    parser.add_argument('-v', '--verbose', action='count', default=0, help='-v for INFO, -vv for DEBUG')
    sub = parser.add_subparsers(dest='command', required=True)

    def with_out(p):
        p.add_argument('--out', default=None, help='output directory (default: $IMAGINAV_OUTPUT_DIR or .)')
        return p

    def with_suite(p):
        p.add_argument('suite', help='suite directory')
        p.add_argument('--config', default=None, help='JSON run configuration')
        p.add_argument('--parallelism', type=int, default=None, help='worker processes')
        return with_out(p)

    gen = with_out(sub.add_parser('gen-suite', help='generate a procedural episode suite'))
    gen.add_argument('spec', help='JSON suite specification')
    gen.add_argument('--seed', type=int, default=0)
    gen.add_argument('--n', type=int, default=100)

    run = with_suite(sub.add_parser('run', help='run a suite and write the report'))
    run.add_argument('--logs', action='store_true', help='write one JSONL trajectory log per episode')

    abl = with_suite(sub.add_parser('ablate', help='run the ablation ladder'))
    abl.add_argument('--modes', default=','.join(ABLATION_MODES))

    sweep = with_suite(sub.add_parser('sweep-theta', help='sweep the gate threshold'))
    sweep.add_argument('--thetas', type=_thetas, default=[0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
    sweep.add_argument('--plot', action='store_true', help='also write theta_sweep.png')

    ren = with_out(sub.add_parser('render', help='render a trajectory log'))
    ren.add_argument('log', help='JSONL trajectory log')
    return parser.parse_args(argv)


def _configure_logging(verbosity):
    level = logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format='%(asctime)s %(levelname)s %(name)s: %(message)s')


def _status(reports):
    invalid = [r.episode_id for rep in reports for r in rep.invalid]
    if invalid:
        logger.warning('%d invalid episodes: %s', len(invalid), ', '.join(invalid))
        return EXIT_INVALID
    return EXIT_OK


def main(argv=None):
    args = _parse_args(argv)
    _configure_logging(args.verbose)
    out = args.out or default_output_dir()
    try:
        if args.command == 'gen-suite':
            generator, episode_cfg = load_suite_spec(args.spec)
            generate_suite(out, args.n, args.seed, generator, episode_cfg)
            return EXIT_OK
        if args.command == 'render':
            render_log(args.log, out)
            return EXIT_OK
        config = load_config(args.config)
        os.makedirs(out, exist_ok=True)
        if args.command == 'run':
            report = run_suite(args.suite, config, args.parallelism,
                               log_dir=os.path.join(out, 'logs') if args.logs else None)
            report.save(os.path.join(out, 'report.json'))
            print(json.dumps(report.aggregates, indent=2, sort_keys=True))
            return _status([report])
        if args.command == 'ablate':
            modes = [m.strip() for m in args.modes.split(',') if m.strip()]
            reports = ablate(args.suite, config, modes, os.path.join(out, 'ablation.csv'), args.parallelism)
            for mode, report in reports.items():
                cells = '  '.join(f'{k} {report.aggregates[k]:.3f}' for k in ('TL', 'NE', 'SR', 'SPL'))
                print(f'{mode:>14s}  {cells}')
            return _status(reports.values())
        rows = sweep_theta(args.suite, args.thetas, config, out_csv=os.path.join(out, 'theta_sweep.csv'),
                           parallelism=args.parallelism)
        if args.plot:
            plot_theta_sweep(os.path.join(out, 'theta_sweep.png'), rows)
        for row in rows:
            print(f'theta {row["theta"]:.2f}  SR {row["SR"]:.3f}  SPL {row["SPL"]:.3f}  '
                  f'fallback {row["fallback_rate"]:.3f}')
        return EXIT_INVALID if any(row['invalid'] for row in rows) else EXIT_OK
    except (ConfigError, SuiteError, ReportError) as e:
        logger.error('%s', e)
        print(f'imaginav: error: {e}', file=sys.stderr)
        return EXIT_CONFIG


if __name__ == '__main__':
    sys.exit(main())
