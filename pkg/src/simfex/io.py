"""
CSV ingestion and delimited output with a run-metadata header.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from .exceptions import DataError
from .glm import Dataset

__all__ = [
    "ColumnMapping",
    "IngestReport",
    "ingest",
    "config_hash",
    "run_metadata",
    "format_value",
    "render_table",
    "write_output",
]

MIN_ROWS = 50
MISSING = {"", "na", "nan", "null", "none", "."}
NON_SEMANTIC = frozenset({"out", "format", "figures", "jobs"})


@dataclass(frozen=True)
class ColumnMapping:
    """Which input columns play which role.

    ``covariate`` defaults to the first replicate column.
    """

    response: str | None
    replicates: tuple[str, ...]
    covariate: str | None = None
    covariates: tuple[str, ...] = ()
    group: str | None = None

    @property
    def primary(self) -> str:
        return self.covariate or self.replicates[0]

    def columns(self) -> list[str]:
        cols = [self.response, self.primary, *self.replicates, *self.covariates]
        cols = [c for c in cols if c]
        if self.group:
            cols.append(self.group)
        seen = []
        for c in cols:
            if c not in seen:
                seen.append(c)
        return seen


@dataclass
class IngestReport:
    """Row accounting from :func:`ingest` (row indices are 1-based data rows)."""

    n_read: int = 0
    n_used: int = 0
    missing_rows: list = field(default_factory=list)
    rejected_rows: list = field(default_factory=list)

    @property
    def n_missing(self) -> int:
        return len(self.missing_rows)

    def summary(self) -> str:
        text = f"read {self.n_read} rows, used {self.n_used}, dropped {self.n_missing} with missing values"
        if self.rejected_rows:
            shown = ", ".join(str(r) for r in self.rejected_rows[:20])
            more = " ..." if len(self.rejected_rows) > 20 else ""
            text += f", rejected {len(self.rejected_rows)} with non-positive covariate (rows {shown}{more})"
        return text


def _sniff(sample: str) -> str:
    try:
        return csv.Sniffer().sniff(sample, delimiters=",\t;").delimiter
    except csv.Error:
        return ","


def ingest(path, mapping: ColumnMapping):
    """Read a delimited UTF-8 file with a header row.

    Rows with a missing value in any mapped column are dropped; rows whose
    contaminated covariate or a replicate is not strictly positive are
    rejected. Both are counted in the returned report.

    Returns
    -------
    (Dataset, ndarray of shape (n, R), IngestReport)

    Raises
    ------
    DataError
        A mapped column is absent, a value is not numeric, or fewer than 50
        usable rows remain.
    """
    path = Path(path)
    if len(mapping.replicates) < 2:
        raise DataError("at least two replicate columns are required")
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise DataError(f"input file not found: {path}") from exc
    except UnicodeDecodeError as exc:
        raise DataError(f"input file is not UTF-8: {exc}") from exc
    reader = csv.reader(text.splitlines(), delimiter=_sniff(text[:4096]))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError("input file is empty") from None
    cols = mapping.columns()
    for c in cols:
        if c not in header:
            raise DataError(f"column {c!r} not found in input (have: {', '.join(header)})")
    pos = {c: header.index(c) for c in cols}
    numeric = [c for c in cols if c != mapping.group]
    positive = [mapping.primary, *mapping.replicates]

    report = IngestReport()
    values = {c: [] for c in cols}
    for i, rec in enumerate(reader, start=1):
        if not rec or all(not v.strip() for v in rec):
            continue
        report.n_read += 1
        raw = {c: (rec[pos[c]].strip() if pos[c] < len(rec) else "") for c in cols}
        if any(raw[c].lower() in MISSING for c in cols):
            report.missing_rows.append(i)
            continue
        parsed = {}
        for c in numeric:
            try:
                parsed[c] = float(raw[c])
            except ValueError:
                raise DataError(f"row {i}: column {c!r} is not numeric: {raw[c]!r}") from None
            if not math.isfinite(parsed[c]):
                raise DataError(f"row {i}: column {c!r} is not finite")
        if any(parsed[c] <= 0 for c in positive):
            report.rejected_rows.append(i)
            continue
        for c in numeric:
            values[c].append(parsed[c])
        if mapping.group:
            values[mapping.group].append(raw[mapping.group])
    report.n_used = len(values[mapping.primary])
    if report.n_used < MIN_ROWS:
        raise DataError(f"only {report.n_used} usable rows (need at least {MIN_ROWS}); {report.summary()}")

    z = np.column_stack([values[c] for c in mapping.covariates]) if mapping.covariates else None
    group = np.asarray(values[mapping.group]) if mapping.group else None
    w = np.asarray(values[mapping.primary])
    y = np.asarray(values[mapping.response]) if mapping.response else np.zeros_like(w)
    data = Dataset(y, w, z, group)
    reps = np.column_stack([values[c] for c in mapping.replicates])
    return data, reps, report


def _canonical(value):
    if isinstance(value, dict):
        return {str(k): _canonical(v) for k, v in sorted(value.items())}
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    if isinstance(value, (bool, str)) or value is None:
        return value
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return int(v) if v.is_integer() else repr(v)
    return str(value)


def config_hash(config: dict) -> str:
    """SHA-256 over the semantically meaningful fields of a run configuration.

    Output destination, output format, figure toggles and worker counts are
    ignored; numbers are normalised so ``1`` and ``1.0`` hash alike.
    """
    payload = {k: v for k, v in config.items() if k not in NON_SEMANTIC}
    blob = json.dumps(_canonical(payload), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def run_metadata(config: dict, seed) -> dict:
    from . import __version__

    return {
        "seed": seed,
        "simfex_version": __version__,
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
        "python_version": platform.python_version(),
        "config_hash": config_hash(config),
    }


def format_value(v) -> str:
    """Shortest round-trip text for floats; ``str`` otherwise."""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return "" if v is None else str(v)


def render_table(columns, rows, digits: int = 4) -> str:
    """Right-aligned plain-text table."""
    def cell(v):
        if isinstance(v, (float, np.floating)):
            return "-" if not math.isfinite(v) else f"{v:.{digits}f}"
        return format_value(v)

    body = [[str(c) for c in columns]] + [[cell(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in body) for i in range(len(columns))]
    return "\n".join("  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in body) + "\n"


def write_output(path, sections, meta: dict, fmt: str = "csv") -> str:
    """Write named tables to ``path`` (or return the text when ``path`` is None).

    ``sections`` is a list of ``(name, columns, rows)``. CSV output starts
    with ``# key: value`` metadata lines and separates sections with a
    ``# section: name`` line.
    """
    lines = [f"# {k}: {v}" for k, v in meta.items()]
    if fmt == "csv":
        import io as _io

        for name, columns, rows in sections:
            buf = _io.StringIO()
            wr = csv.writer(buf, lineterminator="\n")
            wr.writerow(columns)
            for r in rows:
                wr.writerow([format_value(v) for v in r])
            lines.append(f"# section: {name}")
            lines.append(buf.getvalue().rstrip("\n"))
        text = "\n".join(lines) + "\n"
    else:
        parts = ["\n".join(lines)]
        for name, columns, rows in sections:
            parts.append(f"[{name}]\n" + render_table(columns, rows).rstrip("\n"))
        text = "\n\n".join(parts) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
