import logging
import time
from contextlib import contextmanager
from pathlib import Path

from numerics.schemas.reports import CheckStatus, SuiteReport
from numerics.utils.file_utils import write_json

LOG_FORMAT = "%(asctime)s  %(levelname)-8s  %(message)s"
LOG_DATEFMT = "%H:%M:%S"


def configure_logging(level: str = "INFO", log_file: str | Path | None = None) -> None:
    """Console logging in the pipeline format, optionally mirrored to a file."""
    handlers: list[logging.Handler] = [logging.StreamHandler()]
    if log_file is not None:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format=LOG_FORMAT,
        datefmt=LOG_DATEFMT,
        handlers=handlers,
        force=True,
    )


@contextmanager
def timed(label: str):
    t0 = time.perf_counter()
    try:
        yield
    finally:
        dt = time.perf_counter() - t0
        logging.info(f"[TIMER] {label:<35} {dt:6.2f} s")


def update_suite_status(out_dir: Path, report: SuiteReport) -> None:
    """Write one suite's verdict next to its artifacts."""
    try:
        write_json(out_dir / f"{report.name}_status.json", report.model_dump(mode="json"))
    except OSError as err:
        logging.error(f"[ERROR] Failed to write status for {report.name}: {err}")
    if report.status is CheckStatus.FAIL:
        logging.error(f"[ERROR] suite {report.name} failed: {'; '.join(report.failures)}")
