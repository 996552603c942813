"""File formats: JSON objects, the metrics CSV and truth-table bit arrays.

JSON formats
    ``DiscreteRV``  ``{"atoms": [...], "probs": [...]}``
    ``YesNoPair``   ``{"ell", "mu", "yes": <rv>, "no": <rv>}``
    ``QueryMatrix`` ``{"n": n, "rows": [[+-1, ...], ...]}`` (unscaled signs)
    ``LTF``         ``{"weights": [...]}`` with an optional ``"threshold"``

Metrics CSV
    One header row with the columns in :data:`CSV_COLUMNS`; every data row
    carries :data:`CSV_SCHEMA_VERSION` in its first column.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .instances import LTF, QueryMatrix
from .momentlab import DiscreteRV, YesNoPair
from .monodist import TruthTable

CSV_SCHEMA_VERSION = 1
CSV_COLUMNS = ("schema_version", "metric", "n", "d", "ell", "mu", "method",
               "value", "stderr", "samples", "seed")


class FormatError(ValueError):
    """A file does not follow the expected layout."""


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------


def _default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Fraction):
        return str(obj)
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int | None = 2) -> str:
    """JSON text with numpy scalars/arrays, Fractions and ``to_dict`` objects handled."""
    return json.dumps(obj, default=_default, indent=indent, sort_keys=False)


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj) + "\n")
    return path


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed JSON ({exc.msg} at line {exc.lineno})") from exc


def _build(cls, data, path):
    try:
        return cls.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: not a valid {cls.__name__} ({exc})") from exc


def load_rv(path) -> DiscreteRV:
    return _build(DiscreteRV, read_json(path), path)


def load_pair(path) -> YesNoPair:
    return _build(YesNoPair, read_json(path), path)


def load_query_matrix(path) -> QueryMatrix:
    return _build(QueryMatrix, read_json(path), path)


def load_ltf(path) -> LTF:
    return _build(LTF, read_json(path), path)


def save(path, obj) -> Path:
    """Write any object with ``to_dict`` (RV, pair, query matrix, LTF, trace)."""
    return write_json(path, obj.to_dict())


def load_truth_table(path, n: int | None = None) -> TruthTable:
    try:
        return TruthTable.load(path, n)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Metrics CSV
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricRow:
    """One numeric result with the provenance needed to replay it."""

    metric: str
    value: float
    method: str
    stderr: float = 0.0
    samples: int = 0
    seed: int | None = None
    n: int | None = None
    d: int | None = None
    ell: int | None = None
    mu: int | None = None

    def as_record(self) -> dict:
        rec = asdict(self)
        rec["schema_version"] = CSV_SCHEMA_VERSION
        return {c: _cell(rec[c]) for c in CSV_COLUMNS}


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_metrics_csv(path, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row.as_record())
    return path


def read_metrics_csv(path) -> list[MetricRow]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise FormatError(f"{path}: header {reader.fieldnames} does not match schema v{CSV_SCHEMA_VERSION}")
        out = []
        for rec in reader:
            if int(rec["schema_version"]) != CSV_SCHEMA_VERSION:
                raise FormatError(f"{path}: unsupported schema version {rec['schema_version']}")

            def opt(key, cast=int):
                return cast(rec[key]) if rec[key] != "" else None

            out.append(MetricRow(metric=rec["metric"], value=float(rec["value"]), method=rec["method"],
                                 stderr=float(rec["stderr"]), samples=int(rec["samples"]), seed=opt("seed"),
                                 n=opt("n"), d=opt("d"), ell=opt("ell"), mu=opt("mu")))
        return out
