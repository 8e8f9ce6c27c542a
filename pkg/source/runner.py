"""
Command line entry point.

    python source/runner.py run configs/heat_torus1.toml --out out/heat
    python source/runner.py ab-seq 1 2 10 --csv
    python source/runner.py verify gaussian-step --seed 7 --threads 4

Exit codes: 0 every check passed, 1 a check failed or the run aborted with a
numerical error (reports are still written), 2 the input could not be used
(bad config, regime violation, unknown suite).
"""
from __future__ import annotations
import argparse
import logging
import sys
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

from pydantic import ValidationError  # noqa: E402

from numerics.errors import ConfigError, JkoLabError, RegimeError  # noqa: E402
from numerics.schemas.reports import RunStatus, RunSummary  # noqa: E402
from numerics.schemas.run_config import load_run_config  # noqa: E402
from numerics.settings import default_log_level, default_out_dir, default_seed, default_threads  # noqa: E402
from numerics.utils.file_utils import generate_md5  # noqa: E402
from pipelines.ab_estimates import ab_sequence  # noqa: E402
from pipelines.pipeline_orchestration import run_pipeline, write_summary  # noqa: E402
from pipelines.utils.pipeline_utils import configure_logging, update_suite_status  # noqa: E402
from pipelines.verify_suites import SUITES, run_suite  # noqa: E402

log = logging.getLogger("runner")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, default=None, help="Output directory (default $JKOLAB_OUT_DIR)")
    common.add_argument("--seed", type=int, default=None, help="Seed for randomized suites (default $JKOLAB_SEED)")
    common.add_argument("--threads", type=int, default=None, help="Worker threads for verify suites")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")

    parser = argparse.ArgumentParser(prog="jkolab", description="JKO schemes and Aronson-Bénilan certification")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="Run one experiment from a TOML config")
    run.add_argument("config", type=Path)
    run.add_argument("--dump-fields", action="store_true", default=None, help="Write fields/*.bin + *.json")

    seq = sub.add_parser("ab-seq", parents=[common], help="Print the universal sequence X_k")
    seq.add_argument("d", type=int)
    seq.add_argument("m", type=float)
    seq.add_argument("K", type=int)
    seq.add_argument("--csv", action="store_true", help="Also write ab_sequence.csv to the output directory")

    verify = sub.add_parser("verify", parents=[common], help="Run a property/oracle suite")
    verify.add_argument("suite", choices=sorted(SUITES))
    return parser


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = load_run_config(args.config)
    except ValidationError as err:
        log.error(f"[ERROR] invalid config {args.config}:\n{err}")
        return RunStatus.CONFIG_ERROR.exit_code
    except ConfigError as err:
        log.error(f"[ERROR] {err}")
        return RunStatus.CONFIG_ERROR.exit_code

    out_dir = args.out or config.output.dir or default_out_dir() / config.name
    seed = args.seed if args.seed is not None else config.seed if config.seed is not None else default_seed()
    try:
        summary = run_pipeline(config, out_dir, seed=seed, dump_fields=args.dump_fields)
    except ConfigError as err:
        log.error(f"[ERROR] {err}")
        return RunStatus.CONFIG_ERROR.exit_code
    print(f"{summary.status.value}: {Path(out_dir) / 'summary.json'}")
    return summary.exit_code


def cmd_ab_seq(args: argparse.Namespace) -> int:
    try:
        seq = ab_sequence(args.d, args.m, args.K)
    except (RegimeError, ValueError) as err:
        log.error(f"[ERROR] {err}")
        return RunStatus.CONFIG_ERROR.exit_code
    print("k,X_k,one_minus_X_k,k_alpha_X_k")
    for row in seq.rows():
        print(f"{row['k']},{row['X_k']!r},{row['one_minus_X_k']!r},{row['k_alpha_X_k']!r}")
    if args.csv:
        out_dir = args.out or default_out_dir()
        path = seq.to_csv(Path(out_dir) / "ab_sequence.csv")
        log.info(f"[TRACE] wrote {path}")
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else default_seed()
    threads = args.threads if args.threads is not None else default_threads()
    out_dir = Path(args.out or default_out_dir() / f"verify-{args.suite}")
    error = None
    try:
        report = run_suite(args.suite, seed=seed, threads=max(1, threads))
        checks = report.checks
    except JkoLabError as err:
        error = f"{type(err).__name__}: {err}"
        log.error(f"[ERROR] suite {args.suite} aborted: {error}")
        checks = []
    if error is not None:
        status = RunStatus.RUNTIME_ERROR
    else:
        status = RunStatus.PASSED if all(c.ok for c in checks) else RunStatus.CHECK_FAILED
        update_suite_status(out_dir, report)
    status_file = out_dir / f"{args.suite}_status.json"
    summary = RunSummary(
        run_name=f"verify-{args.suite}", status=status, exit_code=status.exit_code, seed=seed,
        params={"suite": args.suite, "threads": threads}, checks=checks, error=error,
        artifacts={status_file.name: generate_md5(status_file)} if status_file.exists() else {},
    )
    write_summary(summary, out_dir)
    print(f"{status.value}: {out_dir / 'summary.json'}")
    return status.exit_code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level or default_log_level())
    handlers = {"run": cmd_run, "ab-seq": cmd_ab_seq, "verify": cmd_verify}
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
