"""Metric reports as two-line JSON: a volatile header line, then the stable body."""

from __future__ import annotations

import datetime as _dt
import json
from pathlib import Path

REPORT_SCHEMA_VERSION = 1


def write_report(path: str | Path, kind: str, body: dict, wall_time_s: float) -> Path:
    """Write a report; only the first line carries the timestamp and wall time."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "wall_time_s": round(wall_time_s, 3),
    }
    payload = {"schema_version": REPORT_SCHEMA_VERSION, "report": kind, **body}
    path.write_text(json.dumps(header) + "\n" + json.dumps(payload, sort_keys=True) + "\n")
    return path


def read_report(path: str | Path) -> dict:
    lines = Path(path).read_text().splitlines()
    return json.loads(lines[1])
