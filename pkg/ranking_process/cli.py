"""
Command-line interface: ``analytic``, ``simulate``, ``compare`` and ``pde-check``.
"""
import argparse
import logging
from typing import List, Optional

from .config import default_log_level, default_threads, load_config
from .errors import ConfigError, RankingProcessError
from .report_generator import ReportGenerator
from .workflow import ExperimentWorkflow

COMMANDS = {
    "analytic": "analytic",
    "simulate": "simulate",
    "compare": "compare",
    "pde-check": "pde_check",
}

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ranking-process",
        description="Hydrodynamic limits and simulation of the move-to-front stochastic ranking process.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="experiment TOML file")
        cmd.add_argument("--seed", type=int, default=None, help="override the config seed")
        cmd.add_argument("--out", default=None, help="output directory")
        cmd.add_argument("--threads", type=int, default=None,
                         help="worker processes (default: RANKING_PROCESS_THREADS or 1)")
        cmd.add_argument("--format", choices=["csv", "json"], default=None, dest="fmt")
        cmd.add_argument("--verbose", action="store_true", help="debug logging")
    return parser


def configure_logging(verbose: bool = False):
    logging.basicConfig(
        level=logging.DEBUG if verbose else default_log_level(),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        force=True,
    )


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one subcommand.

    Args:
        argv (list[str], optional): Arguments without the program name.

    Returns:
        int: 0 on success (and, for ``compare``, when every record passes),
            1 when ``compare`` has failing records or a stage errors, 2 on a bad config.
    """
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)

    try:
        config = load_config(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None or args.fmt is not None:
            output = config.output.model_copy(update={
                k: v for k, v in (("dir", args.out), ("format", args.fmt)) if v is not None
            })
            overrides["output"] = output
        if overrides:
            config = config.model_copy(update=overrides)
        threads = args.threads if args.threads is not None else default_threads()
        workflow = ExperimentWorkflow(config, threads=threads)
    except ConfigError as e:
        logging.error(f"Configuration error: {str(e)}")
        return EXIT_CONFIG

    stage = COMMANDS[args.command]
    try:
        result = workflow.process_stage(stage)
    except RankingProcessError as e:
        logging.error(f"Stage {stage} failed: {str(e)}")
        return EXIT_FAILED

    writer = ReportGenerator(config.output.dir, config.output.format)
    writer.write_stage(config.name, stage, config.seed, result)

    if stage == "compare":
        report = result["report"]
        logging.info(f"compare: {'PASS' if report.passed else 'FAIL'} ({len(report.records)} records)")
        return EXIT_OK if report.passed else EXIT_FAILED
    return EXIT_OK
