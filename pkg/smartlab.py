#!/usr/bin/env python3
"""
Command-line entry point for the SMaRt toy laboratory.

Each subcommand loads the flat configuration, sets up logging, runs one
phase into the run directory given by --out and returns an exit status:
0 on success, 1 on a lab error or failed check, 2 on bad arguments.
"""

import argparse
import os
import sys
from typing import Callable, Dict, List, Optional

# Add src directory to path
sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), 'src'))

from src.config import TrainConfig, load_logging_config, parse_config
from src.exceptions import LabError
from src.experiment import SMART_MODES, Experiment
from src.logging_config import get_logger, log_config_summary, setup_logging


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with one subparser per phase."""
    parser = argparse.ArgumentParser(
        prog='smartlab',
        description='Score-matching regularity for GANs on a 49-mode toy grid',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s train-dpm --out runs/dpm
  %(prog)s train-gan --smart oracle --out runs/smart
  %(prog)s train-gan --smart on --dpm runs/dpm/dpm.ckpt --out runs/smart-dpm
  %(prog)s eval --checkpoint runs/smart/gan.ckpt --out runs/smart-eval
  %(prog)s verify --out runs/verify
        """
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', '-c', type=str, help='Flat key = value configuration file')
    common.add_argument('--out', '-o', type=str, required=True, help='Run directory for every artifact')
    common.add_argument('--seed', type=int, help='Override the configured seed')

    sub = parser.add_subparsers(dest='command', required=True)
    sub.add_parser('train-dpm', parents=[common], help='Train and checkpoint the noise predictor')

    gan = sub.add_parser('train-gan', parents=[common], help='Train a GAN with or without the regularity')
    gan.add_argument('--smart', choices=SMART_MODES, default='oracle',
                     help='off: vanilla GAN; on: trained predictor (--dpm); oracle: analytic predictor')
    gan.add_argument('--dpm', type=str, help='Noise predictor checkpoint for --smart on')

    evaluate = sub.add_parser('eval', parents=[common], help='Score a GAN or diffusion checkpoint')
    evaluate.add_argument('--checkpoint', type=str, required=True)

    refine = sub.add_parser('refine-demo', parents=[common], help='Iterate the one-step refinement')
    refine.add_argument('--dpm', type=str, help='Use a trained predictor instead of the oracle')

    sub.add_parser('verify', parents=[common], help='Run every numerical theorem check')

    render = sub.add_parser('render', parents=[common], help='Draw the data or a GAN checkpoint as SVG')
    render.add_argument('--checkpoint', type=str, help='GAN checkpoint; the true data when omitted')
    return parser


def load_config(args: argparse.Namespace) -> TrainConfig:
    logger = get_logger(__name__)
    cfg = parse_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise LabError(f"--seed must be >= 0, got {args.seed}")
        cfg.seed = args.seed
    log_config_summary(logger, args.config or 'defaults', cfg.to_flat())
    return cfg


def cmd_train_dpm(exp: Experiment, args: argparse.Namespace) -> int:
    exp.train_dpm()
    return 0


def cmd_train_gan(exp: Experiment, args: argparse.Namespace) -> int:
    exp.train_gan(args.smart, args.dpm)
    return 0


def cmd_eval(exp: Experiment, args: argparse.Namespace) -> int:
    exp.evaluate_checkpoint(args.checkpoint)
    return 0


def cmd_refine_demo(exp: Experiment, args: argparse.Namespace) -> int:
    exp.refine_demo(args.dpm)
    return 0


def cmd_verify(exp: Experiment, args: argparse.Namespace) -> int:
    summary = exp.verify()
    for check in summary.checks:
        print(f"{'PASS' if check.passed else 'FAIL'}  {check.name}: {check.detail}")
    print(f"{len(summary.checks) - len(summary.failed)}/{len(summary.checks)} checks passed")
    return 0 if summary.passed else 1


def cmd_render(exp: Experiment, args: argparse.Namespace) -> int:
    path = exp.render(args.checkpoint)
    print(path)
    return 0


COMMANDS: Dict[str, Callable[[Experiment, argparse.Namespace], int]] = {
    'train-dpm': cmd_train_dpm,
    'train-gan': cmd_train_gan,
    'eval': cmd_eval,
    'refine-demo': cmd_refine_demo,
    'verify': cmd_verify,
    'render': cmd_render,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    args = build_parser().parse_args(argv)

    try:
        setup_logging(load_logging_config())
        logger = get_logger(__name__)
        cfg = load_config(args)
        experiment = Experiment(cfg, args.out, command=args.command)
        logger.info(f"Starting {args.command} (run {experiment.manifest.run_id}, seed {cfg.seed})")
        return COMMANDS[args.command](experiment, args)

    except LabError as e:
        # Don't rely on the logger here; the failure may predate logging setup
        print(f"{args.command}: {e}", file=sys.stderr)
        return 1

    except KeyboardInterrupt:
        print("Interrupted", file=sys.stderr)
        return 130


if __name__ == '__main__':
    sys.exit(main())
