"""
pf-regen Command Line
    python cli.py solve matrix.txt [--z Z] [--tol TOL]
    python cli.py mc matrix.txt --seed 42 --n-cycles 100000
    python cli.py conditions matrix.txt [--m-max 4]
    python cli.py split matrix.txt [--engine exact|mc]
    python cli.py example bd --p 0.3 --L 2000
    python cli.py example kernel --cycles 100000 --seed 7

Exit codes: 0 success, 1 usage error, 2 model error. One JSON report per run.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from config import configure_logging
from core.errors import PFError
from core.reports import ErrorInfo, RunReport, error_report
from services.pf_service import BD_POWER_TERMS, KERNELS, PFService

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MODEL = 2


class UsageError(Exception):
    pass


class ReportArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> ReportArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--tol", type=float, default=None, help="Root-finding tolerance (default: PF_TOL)")
    shared.add_argument("--output", type=Path, default=None, help="Report path (default: stdout)")
    shared.add_argument("--log-level", default=None, help="Override PF_LOG_LEVEL")

    state = argparse.ArgumentParser(add_help=False)
    state.add_argument("--z", type=int, default=None, help="Regeneration state (default: largest row sum)")

    sampling = argparse.ArgumentParser(add_help=False)
    sampling.add_argument("--seed", type=int, default=None, help="Random seed (default: PF_SEED or fresh entropy)")
    sampling.add_argument("--threads", type=int, default=None, help="Worker threads for simulation")

    parser = ReportArgumentParser(prog="pf-regen", description="Regenerative Perron-Frobenius solver")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=ReportArgumentParser)

    solve = commands.add_parser("solve", parents=[shared, state], help="Exact eigenpair, twist and power limit")
    solve.add_argument("matrix_file", type=Path)

    mc = commands.add_parser("mc", parents=[shared, state, sampling], help="Regenerative Monte Carlo estimate")
    mc.add_argument("matrix_file", type=Path)
    mc.add_argument("--n-cycles", type=int, default=None, help="Regeneration cycles (default: PF_N_CYCLES)")
    mc.add_argument("--n-max", type=int, default=None, help="Per-cycle step cap (default: PF_N_MAX)")
    mc.add_argument("--ci-level", type=float, default=None, help="Confidence level (default: PF_CI_LEVEL)")
    mc.add_argument("--ci-method", choices=["delta", "bootstrap"], default="delta")
    mc.add_argument("--u-cycles", type=int, default=0, help="Cycles per state for u* (0 skips)")

    conditions = commands.add_parser("conditions", parents=[shared], help="Irreducibility, period, A1 and minorization")
    conditions.add_argument("matrix_file", type=Path)
    conditions.add_argument("--m-max", type=int, default=4)

    split = commands.add_parser("split", parents=[shared, sampling], help="Split-chain solve from a minorization certificate")
    split.add_argument("matrix_file", type=Path)
    split.add_argument("--m-max", type=int, default=4)
    split.add_argument("--engine", choices=["exact", "mc"], default="exact")
    split.add_argument("--n-cycles", type=int, default=None)

    example = commands.add_parser("example", parents=[shared, sampling], help="Built-in benchmarks")
    example.add_argument("name", choices=["bd", "kernel"])
    example.add_argument("--p", type=float, default=0.3, help="bd: up-step probability")
    example.add_argument("--L", type=int, default=2000, help="bd: truncation level")
    example.add_argument("--boundary", choices=["killed", "reflecting"], default="killed")
    example.add_argument("--power-terms", type=int, default=BD_POWER_TERMS)
    example.add_argument("--kernel", choices=list(KERNELS), default="gaussian_mixture")
    example.add_argument("--cycles", type=int, default=None, help="kernel: regeneration cycles")
    example.add_argument("--grid", type=int, default=200, help="kernel: oracle grid size")
    example.add_argument("--u-cycles", type=int, default=2000)
    return parser


def _read_matrix(path: Path) -> str:
    try:
        return path.read_text()
    except OSError as e:
        raise UsageError(f"Cannot read matrix file {path}: {e.strerror or e}") from e


def run_command(args: argparse.Namespace, service: PFService) -> RunReport:
    if args.command == "solve":
        return service.solve(_read_matrix(args.matrix_file), args.z, args.tol)
    if args.command == "mc":
        return service.mc(
            _read_matrix(args.matrix_file),
            seed=args.seed,
            n_cycles=args.n_cycles,
            n_max=args.n_max,
            z=args.z,
            ci_level=args.ci_level,
            ci_method=args.ci_method,
            u_cycles=args.u_cycles,
            threads=args.threads,
            tol=args.tol,
        )
    if args.command == "conditions":
        return service.conditions(_read_matrix(args.matrix_file), args.m_max, args.tol)
    if args.command == "split":
        return service.split(
            _read_matrix(args.matrix_file),
            m_max=args.m_max,
            engine=args.engine,
            seed=args.seed,
            n_cycles=args.n_cycles,
            threads=args.threads,
            tol=args.tol,
        )
    if args.name == "bd":
        return service.example_bd(args.p, args.L, args.boundary, args.tol, args.power_terms)
    return service.example_kernel(
        cycles=args.cycles,
        seed=args.seed,
        grid=args.grid,
        kernel=args.kernel,
        u_cycles=args.u_cycles,
        threads=args.threads,
    )


def _config_echo(args: argparse.Namespace) -> Dict[str, Any]:
    return {key: str(value) if isinstance(value, Path) else value for key, value in vars(args).items() if key != "output"}


def _emit(report: RunReport, output: Optional[Path]):
    text = report.to_json()
    if output is None:
        sys.stdout.write(text + "\n")
    else:
        output.write_text(text + "\n")


def main(argv: Optional[List[str]] = None, service: Optional[PFService] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    service = service or PFService()

    try:
        report = run_command(args, service)
        code = EXIT_OK
    except UsageError as e:
        report = RunReport(command=args.command, config=_config_echo(args), error=ErrorInfo(kind="io", message=str(e)))
        code = EXIT_USAGE
    except PFError as e:
        logger.warning("%s failed: %s", args.command, e.message)
        report = error_report(args.command, _config_echo(args), e)
        code = e.exit_code

    _emit(report, args.output)
    return code


if __name__ == "__main__":
    sys.exit(main())
