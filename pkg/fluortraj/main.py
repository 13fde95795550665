import argparse
import logging
import sys
from typing import List, Optional

from dotenv import load_dotenv

from fluortraj.routers import average, correlate, cv_reconstruct, mlp, mlp_ideal, simulate, sme
from fluortraj.routers.common import EXIT_CONFIG, EXIT_OK, CommandError, RunContext, load_config
from fluortraj.services.settings_service import get_settings

# Load environment variables
load_dotenv()

logger = logging.getLogger("fluortraj")

ROUTERS = (simulate, average, mlp, mlp_ideal, correlate, sme, cv_reconstruct)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH", help="JSON run config")
    common.add_argument("--out", metavar="DIR", help="Output directory (default FLUOR_OUT or ./out)")
    common.add_argument("--seed", type=int, help="Override the config seed")
    common.add_argument("--threads", type=int, help="Worker threads (default FLUOR_THREADS or 1)")
    common.add_argument("--quiet", action="store_true", help="Only log warnings and errors")

    parser = argparse.ArgumentParser(prog="fluortraj", description="Heterodyne fluorescence trajectories")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for router in ROUTERS:
        router.register(subparsers, [common])
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG

    try:
        level = "WARNING" if args.quiet else get_settings().log_level
    except ValueError as e:
        logger.error(f"Error reading settings: {str(e)}")
        return EXIT_CONFIG
    logging.getLogger().setLevel(level)

    try:
        config = load_config(args.config, args.command)
        ctx = RunContext.from_args(args, config)
        logger.info(f"Running {args.command} into {ctx.out_dir}")
        args.handler(ctx)
    except CommandError as e:
        logger.error(f"{args.command} failed: {e.detail}")
        return e.exit_code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
