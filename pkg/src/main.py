import sys

from components.commands import (
    DEFAULT_ORDERS,
    DEFAULT_RANK_LIST,
    DEFAULT_SAMPLES,
    cmd_balance,
    cmd_run,
    cmd_scaling,
    cmd_verify,
)
from components.input import ArgumentParser, add_config_arguments, config_from_namespace
from utils.errors import InfeasibleRunError, UsageError
from utils.logger import logger, set_verbosity

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3


def _int_list(text):
    try:
        values = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise UsageError(f"Expected a comma-separated list of integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise UsageError(f"Expected positive integers, got {text!r}")
    return values


def build_parser():
    parser = ArgumentParser(prog="fmm", description="Simulated distributed FMM experiments")
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    def command(name, help):
        sub = subparsers.add_parser(name, help=help)
        add_config_arguments(sub)
        sub.add_argument("--allow-large", action="store_true", help="skip the desk-size guard")
        sub.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
        return sub

    run = command("run", help="simulate time steps and write per-phase metrics")
    run.add_argument("--trace", help="write the event trace as JSON to this path")
    run.add_argument("--oracle", action="store_true", help="check potentials against the direct sum")

    scaling = command("scaling", help="strong scaling sweep over rank counts")
    scaling.add_argument("--rank-list", default=",".join(map(str, DEFAULT_RANK_LIST)))

    verify = command("verify", help="accuracy sweep over expansion orders")
    verify.add_argument("--orders", default=",".join(map(str, DEFAULT_ORDERS)))
    verify.add_argument("--samples", type=int, default=DEFAULT_SAMPLES)

    command("balance", help="traverse balance for every distribution")
    return parser


def main(argv=None):
    """
    Command entry point.

    Returns 0 on success, 2 on a usage error and 3 when the run is refused as too large.
    """
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = build_parser().parse_args(argv)
        config = config_from_namespace(args)
        set_verbosity(not args.quiet)

        if args.command == "run":
            cmd_run(config, allow_large=args.allow_large, trace=args.trace, oracle=args.oracle)
        elif args.command == "scaling":
            cmd_scaling(config, _int_list(args.rank_list), allow_large=args.allow_large)
        elif args.command == "verify":
            cmd_verify(config, _int_list(args.orders), samples=args.samples, allow_large=args.allow_large)
        else:
            cmd_balance(config, config.weighting, allow_large=args.allow_large)
    except UsageError as e:
        logger.error(f"Usage error: {e}")
        return EXIT_USAGE
    except InfeasibleRunError as e:
        logger.error(str(e))
        return EXIT_INFEASIBLE
    except Exception as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
