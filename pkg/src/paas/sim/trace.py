"""Trace files: reading, hashing and replaying a recorded run."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .. import __version__
from ..errors import TraceCorrupt
from .runner import TRACE_FORMAT, Run
from .scenario import from_dict


def trace_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def read_header(lines) -> dict:
    if not lines:
        raise TraceCorrupt("empty trace")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise TraceCorrupt(f"header is not JSON: {exc}") from None
    if not isinstance(header, dict) or header.get("format") != TRACE_FORMAT:
        raise TraceCorrupt(f"not a {TRACE_FORMAT} trace")
    for key in ("seed", "scenario", "scenario_hash"):
        if key not in header:
            raise TraceCorrupt(f"header lacks {key!r}")
    return header


@dataclass
class ReplayReport:
    matched: int
    diffs: list = field(default_factory=list)  # (line number, recorded, replayed)
    warnings: list = field(default_factory=list)

    @property
    def identical(self) -> bool:
        return not self.diffs


def replay(path, limit=20) -> ReplayReport:
    """Re-run the scenario embedded in a trace and compare the output line by line."""
    lines = Path(path).read_text().splitlines()
    header = read_header(lines)
    warnings = []
    if header.get("code_version") != __version__:
        warnings.append(f"trace written by version {header.get('code_version')}, "
                        f"replaying with {__version__}")
    scenario = from_dict(header["scenario"])
    if scenario.digest() != header["scenario_hash"]:
        raise TraceCorrupt("scenario hash does not match embedded scenario")
    fresh = Run(scenario).execute().trace_lines
    diffs = []
    matched = 0
    for n in range(max(len(lines), len(fresh))):
        a = lines[n] if n < len(lines) else None
        b = fresh[n] if n < len(fresh) else None
        if a == b:
            matched += 1
        elif len(diffs) < limit:
            diffs.append((n + 1, a, b))
        else:
            diffs.append((n + 1, "...", "..."))
            break
    return ReplayReport(matched, diffs, warnings)
