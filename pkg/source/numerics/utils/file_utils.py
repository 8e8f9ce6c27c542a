import csv
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

log = logging.getLogger(__name__)


def generate_md5(file_path: str | Path) -> str:
    """MD5 hash of the file's contents."""

    log.debug(f"[TRACE] Generating MD5 hash for file: {file_path}")
    hash_md5 = hashlib.md5()
    with open(file_path, "rb") as f:
        for chunk in iter(lambda: f.read(4096), b""):
            hash_md5.update(chunk)
    return hash_md5.hexdigest()


def _cell(value: Any) -> Any:
    # repr keeps every bit of a float so reruns compare byte for byte
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    return value


def write_csv(path: str | Path, rows: Iterable[Mapping[str, Any]], fieldnames: list[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(row.get(k)) for k in fieldnames})
    log.debug(f"[TRACE] wrote {path}")
    return path


def write_json(path: str | Path, payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    return path


def dump_field(
    out_dir: str | Path,
    name: str,
    k: int,
    values: np.ndarray,
    domain: str,
    bounds: list[list[float]],
) -> tuple[Path, Path]:
    """Raw little-endian float64 (C order) plus a JSON header describing it."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(values, dtype="<f8")
    bin_path = out_dir / f"{name}_k{k}.bin"
    arr.tofile(bin_path)
    header = {
        "shape": list(arr.shape),
        "dtype": "float64",
        "byteorder": "little",
        "order": "C",
        "domain": domain,
        "bounds": bounds,
        "k": int(k),
    }
    head_path = write_json(out_dir / f"{name}_k{k}.json", header)
    return bin_path, head_path


def load_field(bin_path: str | Path) -> np.ndarray:
    bin_path = Path(bin_path)
    with open(bin_path.with_suffix(".json"), encoding="utf-8") as fh:
        header = json.load(fh)
    return np.fromfile(bin_path, dtype="<f8").reshape(header["shape"])


__all__ = ["generate_md5", "write_csv", "write_json", "dump_field", "load_field"]
