"""Artifact emission: results files, metrics tables and histogram data."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, SchemaError
from .estimators import EstimateRecord
from .harness import DEFAULT_FENCE, MetricsRow, ReplicateRecord, ScenarioResults, fence_mask

RESULT_COLUMNS = ("replicate", "estimator", "chi1", "chi0", "ate", "flags", "error")
TABLE_COLUMNS = ("estimator", "% Bias", "% M-Bias", "SE", "Relative Uncertainty", "Dropped")


def _float(x: float) -> str:
    return repr(float(x))


def write_results(results: ScenarioResults, path: "str | Path | None" = None) -> str:
    """Serialize every replicate record; floats use ``repr`` so reading back is exact."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in results.records:
        rec = r.record
        w.writerow([r.replicate, rec.estimator, _float(rec.chi1), _float(rec.chi0), _float(rec.ate),
                    ";".join(sorted(rec.flags)), rec.error or ""])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_results(source: "str | Path") -> ScenarioResults:
    """Inverse of :func:`write_results`; ``source`` is a file or a run directory."""
    path = Path(source)
    if path.is_dir():
        path = path / "results.csv"
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err}") from None
    rows = list(csv.DictReader(io.StringIO(text)))
    if rows and set(rows[0]) != set(RESULT_COLUMNS):
        raise SchemaError(f"{path}: expected columns {RESULT_COLUMNS}")
    records = []
    for row in rows:
        flags = frozenset(f for f in row["flags"].split(";") if f)
        rec = EstimateRecord(row["estimator"], float(row["chi1"]), float(row["chi0"]), float(row["ate"]),
                             flags, row["error"] or None)
        records.append(ReplicateRecord(int(row["replicate"]), rec))
    return ScenarioResults(records)


def _bias(x: float, decimals: int) -> str:
    if not math.isfinite(x):
        return "nan"
    s = f"{x:+.{decimals}f}"
    return s[1:] if float(s) == 0 else s


def _table_rows(metrics: Sequence[MetricsRow], bias_decimals: int):
    for m in metrics:
        yield [m.estimator, _bias(m.pct_bias, bias_decimals), _bias(m.pct_m_bias, bias_decimals),
               f"{m.se:.3f}", f"{m.relative_uncertainty:.3f}", str(m.dropped)]


def emit_table(metrics: Sequence[MetricsRow], fmt: str = "csv", bias_decimals: int = 1) -> str:
    """Render metrics as csv or a markdown table.

    Bias columns are signed, with ``bias_decimals`` decimals (0 gives integers).
    When the truth is zero the bias columns carry absolute rather than percent bias.
    """
    if not metrics:
        raise ConfigError("no metrics to emit")
    header = list(TABLE_COLUMNS)
    if any(m.absolute for m in metrics):
        header[1:3] = ["Bias", "M-Bias"]
    rows = list(_table_rows(metrics, bias_decimals))
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return buf.getvalue()
    if fmt == "markdown":
        lines = ["| " + " | ".join(header) + " |",
                 "|" + "|".join(["---"] + ["---:"] * (len(header) - 1)) + "|"]
        lines += ["| " + " | ".join(r) + " |" for r in rows]
        return "\n".join(lines) + "\n"
    raise ConfigError(f"unknown table format {fmt!r}; use csv or markdown")


def parse_table(text: str) -> list[MetricsRow]:
    """Read a csv table produced by :func:`emit_table` back into MetricsRows."""
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    absolute = header[1] == "Bias"
    return [MetricsRow(r[0], float(r[1]), float(r[2]), float(r[3]), float(r[4]), int(r[5]), absolute=absolute)
            for r in body]


def histogram(ates: Iterable[float], bins: int = 30, fence: float = DEFAULT_FENCE):
    """Equal-width histogram over the kept (finite, within-fence) estimates."""
    if bins < 1:
        raise ConfigError("bins must be at least 1")
    ates = np.asarray(list(ates), dtype=float)
    v = ates[fence_mask(ates, fence)]
    if v.size == 0:
        raise ConfigError("no kept estimates to bin")
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        centers = np.array([lo])
        counts = np.array([v.size])
        return centers, counts
    counts, edges = np.histogram(v, bins=bins, range=(lo, hi))
    return 0.5 * (edges[:-1] + edges[1:]), counts


def emit_histogram_data(results: ScenarioResults, estimator: str, bins: int = 30,
                        fence: float = DEFAULT_FENCE) -> str:
    groups = results.by_estimator()
    if estimator not in groups:
        raise ConfigError(f"estimator {estimator!r} not in results; present: {sorted(groups)}")
    centers, counts = histogram([r.ate for r in groups[estimator]], bins, fence)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_center", "count"])
    for c, k in zip(centers, counts):
        w.writerow([_float(c), int(k)])
    return buf.getvalue()
