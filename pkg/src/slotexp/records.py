"""Line-delimited record files (trace and experiment log).

Each record is one JSON object per line with a fixed key order. The exact bytes
are the determinism surface, so serialization goes through :func:`dump_line`
only.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable, Iterator

LOG_FIELDS = (
    "slot",
    "source",
    "role",
    "payload_type",
    "sample_ts",
    "physical_sent_ts",
    "rewritten_sent_ts",
    "payload",
    "run_id",
)

TRACE_FIELDS = (
    "slot",
    "module",
    "role",
    "event",
    "lane",
    "steps",
    "input_slot",
    "sample_ts",
    "virtual_time",
    "sent_ts",
    "payload_type",
    "payload",
    "run_id",
)


def canonical_payload(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def dump_line(record: dict[str, Any], fields: tuple[str, ...]) -> str:
    ordered = {name: record.get(name) for name in fields}
    return json.dumps(ordered, separators=(",", ":"))


def write_lines(path: Path, records: Iterable[dict[str, Any]], fields: tuple[str, ...]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(dump_line(record, fields))
            fh.write("\n")


def read_lines(path: Path) -> Iterator[dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)
