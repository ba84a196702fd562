"""
Command-line interface

Description:
    The ``tui`` module provides the logger setup shared by every routine and
    the ``wtawp`` command with its subcommands.

License:
    This software is released under the GNU General Public License v3.0 (GPL-3.0).
    For details, see: https://www.gnu.org/licenses/gpl-3.0.html


Overview
--------

.. code-block:: bash

    wtawp train --config toy.json --out runs
    wtawp sweep --config cora_sweep.json --out runs --jobs 4
    wtawp paired --config toy_paired.json --out runs
    wtawp diagnose --config toy.json --which landscape bound
    wtawp attack --config cora_dice.json --seed 3
    wtawp gen-toy --config toy.json --out data

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.

"""
import sys
import logging
import argparse

COMMANDS = ("train", "sweep", "paired", "diagnose", "attack", "gen-toy")


def logger_setup(logger_name="wtawp", streamhandler=True, filehandler=False, logfile=None):
    """Get a named logger with optional console and file handlers

    :param logger_name: logger name
    :type logger_name: str
    :param streamhandler: add a console handler
    :type streamhandler: bool
    :param filehandler: add a file handler
    :type filehandler: bool
    :param logfile: path to the log file. If None, ``wtawp.log``
    :type logfile: str
    :return: logger
    :rtype: :class:`logging.Logger`
    """
    # ---------------------- LOGGER ----------------------
    logger = logging.getLogger(logger_name)
    logger.setLevel(logging.INFO)
    logger.propagate = False
    # drop handlers left by an interrupted run
    for handler in list(logger.handlers):
        handler.close()
        logger.removeHandler(handler)

    # ---------------------- FORMAT ----------------------
    formatter = logging.Formatter(
        "%(asctime)s  %(levelname)8s >>> %(message)s ",
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    # ---------------------- CONSOLE ----------------------
    if streamhandler:
        console_handler = logging.StreamHandler()
        console_handler.setLevel(logging.INFO)
        console_handler.setFormatter(formatter)
        logger.addHandler(console_handler)

    # ---------------------- FILE ----------------------
    if filehandler:
        if logfile is None:
            logfile = "wtawp.log"
        file_handler = logging.FileHandler(logfile)
        file_handler.setLevel(logging.INFO)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)
    return logger


def build_parser():
    """Get the ``wtawp`` argument parser

    :return: parser
    :rtype: :class:`argparse.ArgumentParser`
    """
    from wtawp.tools import DIAGNOSTICS

    parser = argparse.ArgumentParser(
        prog="wtawp",
        description="Weighted truncated adversarial weight perturbation for graph neural networks",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        sub = subparsers.add_parser(command, formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        sub.add_argument("--config", type=str, required=(command != "gen-toy"), help="experiment JSON file")
        sub.add_argument("--out", type=str, default="runs", help="output folder")
        sub.add_argument("--seed", type=int, default=None, help="override the base seed")
        sub.add_argument("--quiet", action="store_true", help="log to the run folder only")
        if command in ("sweep", "paired", "attack"):
            sub.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        if command == "diagnose":
            sub.add_argument(
                "--which", type=str, nargs="+", choices=DIAGNOSTICS, default=None, help="diagnostics to run"
            )
        if command == "gen-toy":
            sub.add_argument(
                "--kind", type=str, choices=["linear_toy", "two_moons"], default=None,
                help="dataset kind when no config is given",
            )
    return parser


def run(args):
    """Dispatch parsed arguments to the tool routines

    :return: tool result
    :rtype: dict
    """
    from wtawp import tools

    if args.config is None:
        cfg = tools.ExperimentConfig(name=args.kind or "linear_toy", dataset={"kind": args.kind or "linear_toy"})
        if args.seed is not None:
            cfg.set({"seed": args.seed})
    else:
        cfg = tools.load_config(args.config, seed=args.seed)
    talk = not args.quiet
    if args.command == "train":
        return tools.TRAIN(cfg, outdir=args.out, talk=talk)
    if args.command == "sweep":
        return tools.SWEEP(cfg, outdir=args.out, jobs=args.jobs, talk=talk)
    if args.command == "paired":
        return tools.PAIRED(cfg, outdir=args.out, jobs=args.jobs, talk=talk)
    if args.command == "diagnose":
        return tools.DIAGNOSE(cfg, outdir=args.out, which=args.which, talk=talk)
    if args.command == "attack":
        return tools.ATTACK(cfg, outdir=args.out, jobs=args.jobs, talk=talk)
    return tools.GENTOY(cfg, outdir=args.out, talk=talk)


def main(argv=None):
    """Entry point of the ``wtawp`` command

    :param argv: arguments. If None, ``sys.argv[1:]``
    :type argv: list
    :return: exit code
    :rtype: int
    """
    from wtawp.root import ConfigError, WtawpError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors and 0 on --help
        return int(e.code or 0)
    logger = logger_setup(logger_name="wtawp.cli", streamhandler=True)
    exit_code = 0
    try:
        result = run(args)
        logger.info("done: {}".format(result["outdir"]))
    except ConfigError as e:
        logger.error("configuration error: {}".format(e))
        exit_code = 2
    except (WtawpError, RuntimeError, ValueError, OSError) as e:
        logger.error("{} failed: {}".format(args.command, e))
        exit_code = 1
    finally:
        for handler in list(logger.handlers):
            logger.removeHandler(handler)
    return exit_code


if __name__ == "__main__":
    sys.exit(main())
