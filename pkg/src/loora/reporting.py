"""Machine-readable records, run manifests, and human tables.

Machine output is line-delimited: one JSON object per line with insertion-
ordered keys and floats printed with 17 significant digits, so identical runs
produce identical bytes and reading a file back loses nothing. The manifest
(which carries wall time) always goes to its own sidecar file to keep report
bytes reproducible.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np


def format_float(value: float) -> str:
    """Full-precision decimal rendering (17 significant digits)."""
    return format(float(value), ".17g")


def _render(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None:
        return "null"
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_render(v) for v in value) + "]"
    if isinstance(value, dict):
        return "{" + ", ".join(f"{json.dumps(k)}: {_render(v)}" for k, v in value.items()) + "}"
    raise TypeError(f"cannot render {type(value)} in a record")


def record_line(record: dict) -> str:
    """One machine record as a single JSON line with stable formatting."""
    return _render(dict(record))


def write_records(path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            handle.write(record_line(record))
            handle.write("\n")


def read_records(path) -> list[dict]:
    with open(path, encoding="utf-8") as handle:
        return [json.loads(line) for line in handle if line.strip()]


def config_hash(config: dict) -> str:
    """Platform-stable digest of a configuration mapping."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class RunManifest:
    """Provenance of one CLI run."""

    command: str
    config_hash: str
    seed: int | None
    version: str
    wall_time_s: float
    outputs: tuple[str, ...]

    def to_record(self) -> dict:
        return {
            "record_type": "run_manifest",
            "command": self.command,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "version": self.version,
            "wall_time_s": self.wall_time_s,
            "outputs": list(self.outputs),
        }


def manifest_path(out_path: str) -> str:
    return f"{out_path}.manifest.json"


def write_manifest(out_path: str, manifest: RunManifest) -> str:
    path = manifest_path(out_path)
    write_records(path, [manifest.to_record()])
    return path


def format_table(headers, rows) -> str:
    """Plain aligned text table for stdout."""
    cells = [[str(h) for h in headers]] + [[str(c) for c in row] for row in rows]
    widths = [max(len(row[j]) for row in cells) for j in range(len(headers))]
    lines = []
    for i, row in enumerate(cells):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * widths[j] for j in range(len(headers))))
    return "\n".join(lines)
