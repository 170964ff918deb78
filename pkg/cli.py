"""Command-line entry point: ``python cli.py <stage> --config PATH [--out DIR] [--seed INT]``.

Exit codes: 0 success, 2 configuration error, 3 numerical abort, 4 I/O error.
"""

import argparse
import logging
import sys

from dotenv import load_dotenv

from mgan.config import load_config, preset
from mgan.errors import ConfigurationError, MganError, NumericalError
from mgan.pipeline import cmd_evaluate, cmd_generate, cmd_kr_oracle, cmd_mcmc, cmd_train
from mgan.settings import configure_logging, progress_enabled

logger = logging.getLogger('mgan.cli')

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4
STAGES = ('generate', 'train', 'evaluate', 'mcmc', 'kr-oracle')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='mgan', description='Monotone GAN transport experiments')
    subparsers = parser.add_subparsers(dest='stage', required=True)
    for stage in STAGES:
        sub = subparsers.add_parser(stage)
        source = sub.add_mutually_exclusive_group(required=True)
        source.add_argument('--config', help='experiment config (JSON)')
        source.add_argument('--preset', help='use the built-in preset for a problem id')
        sub.add_argument('--out', help='experiment directory (defaults to the config output_dir)')
        sub.add_argument('--seed', type=int, help='override every stage seed in the config')
        if stage == 'train':
            sub.add_argument('--dataset', help='dataset file (defaults to <out>/data/dataset.csv)')
            sub.add_argument('--progress', action='store_true', help='show a per-epoch progress bar')
        if stage in ('evaluate', 'kr-oracle'):
            sub.add_argument('--checkpoints', help='training directory holding the saved maps')
        if stage == 'evaluate':
            sub.add_argument('--reference', help='directory of MCMC reference chains')
        if stage == 'kr-oracle':
            sub.add_argument('--resolution', type=int, default=101, help='grid points per axis')
    return parser


def run(args: argparse.Namespace) -> None:
    config = load_config(args.config) if args.config else preset(args.preset)
    if args.seed is not None:
        config = config.with_seed(args.seed)

    if args.stage == 'generate':
        cmd_generate(config, out=args.out)
    elif args.stage == 'train':
        cmd_train(config, dataset_path=args.dataset, out=args.out, progress=args.progress or progress_enabled())
    elif args.stage == 'evaluate':
        cmd_evaluate(config, checkpoints=args.checkpoints, reference=args.reference, out=args.out)
    elif args.stage == 'mcmc':
        cmd_mcmc(config, out=args.out)
    else:
        cmd_kr_oracle(config, checkpoints=args.checkpoints, out=args.out, resolution=args.resolution)


def main(argv: list[str] | None = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    try:
        configure_logging()
        run(args)
    except ConfigurationError as exc:
        logger.error('configuration error: %s', exc)
        return EXIT_CONFIG
    except NumericalError as exc:
        logger.error('numerical abort: %s', exc)
        return EXIT_NUMERICAL
    except OSError as exc:
        logger.error('I/O error: %s', exc)
        return EXIT_IO
    except MganError as exc:
        logger.error('%s', exc)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
