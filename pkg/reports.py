"""
Report writers shared by every command.

Every CSV starts with a `# config_hash=<h> seed=<n>` comment line and every
JSON artifact carries `config_hash` and `seed` keys, so two runs with the same
configuration produce byte-identical files.
"""

import csv
import json
import os
from typing import Any, Dict, Iterable, List, Optional, Sequence

from errors import DatasetIOError


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(parent, exist_ok=True)
    except OSError as e:
        raise DatasetIOError(f"cannot create directory: {e}", parent) from e


def format_value(value: Any) -> Any:
    """Fixed float formatting keeps CSVs byte-stable across platforms."""
    if isinstance(value, float):
        return f"{value:.6g}"
    return value


def write_csv(
    path: str,
    fieldnames: Sequence[str],
    rows: Iterable[Dict[str, Any]],
    config_hash: str = "",
    seed: Optional[int] = None,
) -> str:
    _ensure_parent(path)
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            f.write(f"# config_hash={config_hash} seed={seed}\n")
            writer = csv.DictWriter(f, fieldnames=list(fieldnames), lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: format_value(row.get(k, "")) for k in fieldnames})
    except OSError as e:
        raise DatasetIOError(f"cannot write CSV: {e}", path) from e
    return path


def read_csv(path: str) -> List[Dict[str, str]]:
    """Read a CSV written by write_csv (comment lines skipped)."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = [line for line in f if not line.startswith("#")]
    except OSError as e:
        raise DatasetIOError(f"cannot read CSV: {e}", path) from e
    return list(csv.DictReader(lines))


def write_json(path: str, payload: Dict[str, Any], config_hash: str = "", seed: Optional[int] = None) -> str:
    _ensure_parent(path)
    body = dict(payload)
    body.setdefault("config_hash", config_hash)
    body.setdefault("seed", seed)
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(body, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise DatasetIOError(f"cannot write JSON: {e}", path) from e
    return path


def read_json(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except OSError as e:
        raise DatasetIOError(f"cannot read JSON: {e}", path) from e
    except json.JSONDecodeError as e:
        raise DatasetIOError(f"malformed JSON: {e}", path) from e
