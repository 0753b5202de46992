import argparse
import logging
import sys
from collections.abc import Sequence

from pydantic import ValidationError

from erlang_reward_checker import __version__
from erlang_reward_checker.config import settings
from erlang_reward_checker.routes import HANDLERS

EX_USAGE = 64
EX_SOFTWARE = 70


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise _UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> list[int]:
    """``3,4,5`` or the inclusive range ``3..5``."""
    try:
        if ".." in text:
            low, high = (int(part) for part in text.split("..", 1))
            return list(range(low, high + 1))
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"invalid integer list '{text}'") from e


def _str_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _add_model_arguments(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument(
        "model" if required else "--model",
        help="model file path or bundled:<name>",
    )
    parser.add_argument("--target", help="label whose states become absorbing")
    parser.add_argument("--mode", choices=("probability", "reward"), default="reward")
    parser.add_argument("--discretize", type=float, metavar="DELTA")
    parser.add_argument("--keep-transition-rewards", action="store_true")


def _add_fit_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--k", type=int, default=3, help="moments to match")
    parser.add_argument("--n", type=int, default=3, help="mixture components")
    parser.add_argument("--shapes", default="exponential:3", help="dense | linear:c | exponential:c")
    parser.add_argument("--gamma", type=float, default=1.0, help="entropy weight")
    parser.add_argument("--restarts", type=int, default=settings.fit_restarts)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=settings.default_seed)
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--log-level", default=settings.log_level)

    parser = _Parser(
        prog="erlang-reward-checker",
        description="Distributional checking of cumulative rewards in absorbing DTMCs.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    validate = commands.add_parser("validate", parents=[common], help="check DTMC invariants")
    _add_model_arguments(validate)

    moments = commands.add_parser("moments", parents=[common], help="raw reward moments")
    _add_model_arguments(moments)
    moments.add_argument("--k", type=int, default=3)

    fit = commands.add_parser("fit", parents=[common], help="fit an Erlang mixture")
    _add_model_arguments(fit)
    _add_fit_arguments(fit)
    fit.add_argument("--out", help="write the mixture as JSON")
    fit.add_argument("--cdf-grid", type=int, metavar="POINTS")
    fit.add_argument("--cdf-out", help="write the CDF grid as CSV")

    check = commands.add_parser("check", parents=[common], help="decide a chance constraint")
    _add_model_arguments(check)
    _add_fit_arguments(check)
    check.add_argument("--property", required=True, help='e.g. "P[X <= 5] >= 0.9"')
    check.add_argument("--orders", type=_int_list, help="bound orders to try, e.g. 2,3")
    check.add_argument("--bound-only", action="store_true")
    check.add_argument("--margin", type=float, default=settings.marginal_margin)

    simulate = commands.add_parser("simulate", parents=[common], help="Monte Carlo samples")
    _add_model_arguments(simulate)
    simulate.add_argument("--runs", type=int, default=100_000)
    simulate.add_argument("--max-steps", type=int, default=settings.sim_max_steps)
    simulate.add_argument("--out", help="write samples as CSV")
    simulate.add_argument("--cdf-grid", type=int, metavar="POINTS")
    simulate.add_argument("--cdf-out", help="write the empirical CDF grid as CSV")

    compare = commands.add_parser("compare", parents=[common], help="D_KS of a fit vs samples")
    _add_model_arguments(compare, required=False)
    _add_fit_arguments(compare)
    compare.add_argument("--mixture", help="mixture JSON written by fit --out")
    compare.add_argument("--samples", help="sample CSV written by simulate --out")
    compare.add_argument("--runs", type=int, default=100_000)

    grid = commands.add_parser("grid", parents=[common], help="(K, n) sweep")
    _add_model_arguments(grid)
    _add_fit_arguments(grid)
    grid.add_argument("--k-range", type=_int_list, default=[3, 4, 5])
    grid.add_argument("--n-range", type=_int_list, default=list(range(3, 10)))
    grid.add_argument("--shape-rules", type=_str_list)
    grid.add_argument("--samples", help="sample CSV; adds D_KS per cell")
    return parser


def run_cli(argv: Sequence[str] | None = None) -> int:
    """Run one command; the report goes to stdout and the exit code is returned."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EX_USAGE

    level = args.log_level.upper()
    logging.basicConfig(
        level=level if level in logging.getLevelNamesMapping() else "INFO",
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )

    request_type, handler = HANDLERS[args.command]
    values = {key: value for key, value in vars(args).items() if value is not None}
    values.pop("log_level", None)
    try:
        request = request_type(**values)
        report = handler(request)
    except (ValueError, ValidationError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EX_USAGE
    except ArithmeticError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EX_SOFTWARE

    print(report.to_json())
    return report.exit_code


def run() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    run()
