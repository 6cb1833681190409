"""Summary statistics and report tables computed from per-exchange CSV rows."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import reference
from .estimation import classify_gap
from .power import exchange_charge, lifetime_hours, regime_current
from .simulator import MEASUREMENT_COLUMNS

TABLE_IDS = ("precision", "comparison", "nlos", "power")
NUMERIC_COLUMNS = {
    "time_s", "true_distance_m", "barrier_mm", "distance_raw_m", "distance_m",
    "p_rxl_dbm", "p_fp_dbm", "fp_gap_db", "rssi_dbm",
}
INT_COLUMNS = {"point", "tag", "anchor", "mode", "received", "los", "nlos_flag"}
LIFETIME_CAPACITY_MAH = 200.0


class ReportError(ValueError):
    pass


# -- CSV I/O ----------------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return "" if math.isnan(value) else repr(value)
    return str(value)


def format_csv(rows: Iterable[dict], columns: Iterable[str]) -> str:
    columns = list(columns)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def write_csv(path: str | Path, rows: Iterable[dict], columns: Iterable[str]) -> None:
    Path(path).write_text(format_csv(rows, columns), encoding="utf-8", newline="\n")


def read_csv(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"file not found: {path}")
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ReportError(f"{path}: empty CSV, no header row")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if None in row or any(v is None for v in row.values()):
                raise ReportError(f"{path}: malformed rows: {line_no} (wrong number of fields)")
            rows.append(row)
    return rows


def _parse_measurements(rows: list[dict], source: str) -> list[dict]:
    parsed, bad = [], []
    for line_no, raw in enumerate(rows, start=2):
        row = dict(raw)
        try:
            for key, value in raw.items():
                if key in NUMERIC_COLUMNS:
                    row[key] = float(value) if value != "" else None
                elif key in INT_COLUMNS:
                    row[key] = int(value) if value != "" else None
        except ValueError:
            bad.append(line_no)
            continue
        parsed.append(row)
    if bad:
        raise ReportError(f"{source}: malformed rows: {', '.join(map(str, bad))}")
    return parsed


def load_measurements(path: str | Path) -> list[dict]:
    """Read measurement rows from a run/sweep directory, a CSV file or a result JSON."""
    path = Path(path)
    if path.is_dir():
        path = path / "measurements.csv"
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    if path.suffix == ".json":
        data = json.loads(path.read_text(encoding="utf-8"))
        return data.get("measurements", [])
    return _parse_measurements(read_csv(path), str(path))


# -- statistics -------------------------------------------------------------------

@dataclass
class ReportRow:
    keys: dict
    count: int = 0
    received: int = 0
    mean: float = math.nan
    std: float = math.nan
    max_deviation: float = math.nan
    reception_rate: float = math.nan
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = dict(self.keys)
        out.update(count=self.count, received=self.received, mean=self.mean, std=self.std,
                   max_deviation=self.max_deviation, reception_rate=self.reception_rate)
        out.update(self.extra)
        return out


def _sample_std(values) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else math.nan


def compute_stats(rows: list[dict], column: str = "distance_m", truth_column: str | None = "true_distance_m",
                  truth: float | None = None, by: Iterable[str] = (), source: str = "<csv>") -> list[ReportRow]:
    """Mean, sample std, max |value - truth| and reception rate per group.

    Rows whose ``received`` column is 0 only count toward the reception rate.
    Any row with an unparseable value raises :class:`ReportError` naming every
    offending row number.
    """
    by = list(by)
    if rows and column not in rows[0]:
        raise ReportError(f"{source}: no column {column!r}")
    use_truth_col = truth is None and truth_column is not None and rows and truth_column in rows[0]
    for key in by:
        if rows and key not in rows[0]:
            raise ReportError(f"{source}: no column {key!r} to group by")

    groups: dict[tuple, dict] = defaultdict(lambda: {"count": 0, "values": [], "truths": []})
    bad = []
    for line_no, row in enumerate(rows, start=2):
        try:
            rec = row.get("received", "1")
            rec = 1 if rec in ("", None) else int(float(rec))
            if rec not in (0, 1):
                raise ValueError
            key = tuple(row[k] for k in by)
            g = groups[key]
            value = truth_value = None
            if rec:
                value = float(row[column])
                if math.isnan(value):
                    raise ValueError
                if use_truth_col:
                    truth_value = float(row[truth_column])
                elif truth is not None:
                    truth_value = float(truth)
        except (TypeError, ValueError):
            bad.append(line_no)
            continue
        g["count"] += 1
        if rec:
            g["values"].append(value)
            g["truths"].append(truth_value)
    if bad:
        raise ReportError(f"{source}: malformed rows: {', '.join(map(str, bad))}")

    out = []
    for key in sorted(groups, key=lambda k: tuple(str(x) for x in k)):
        g = groups[key]
        vals = np.asarray(g["values"], float)
        row = ReportRow(dict(zip(by, key)), count=g["count"], received=len(vals))
        row.reception_rate = len(vals) / g["count"] if g["count"] else math.nan
        if len(vals):
            row.mean = float(vals.mean())
            row.std = _sample_std(vals)
            if g["truths"] and g["truths"][0] is not None:
                row.max_deviation = float(np.max(np.abs(vals - np.asarray(g["truths"], float))))
        out.append(row)
    return out


STATS_COLUMNS = ("count", "received", "mean", "std", "max_deviation", "reception_rate")


# -- report tables ------------------------------------------------------------------

def _rel(value, ref):
    if value is None or ref is None or ref == 0 or (isinstance(value, float) and math.isnan(value)):
        return None
    return (value - ref) / ref


def _with_reference(group: dict, metrics: dict, refs: dict, names: list[str]) -> dict:
    row = dict(group)
    for name in names:
        row[name] = metrics.get(name)
    for name in names:
        row[f"ref_{name}"] = refs.get(name)
    for name in names:
        value, ref = metrics.get(name), refs.get(name)
        row[f"rel_dev_{name}"] = _rel(value, ref) if isinstance(ref, (int, float)) else None
    return row


def _columns(keys: list[str], names: list[str]) -> list[str]:
    return keys + names + [f"ref_{n}" for n in names] + [f"rel_dev_{n}" for n in names]


def _per_distance_std(rows: list[dict], value: str, limit: float) -> float | None:
    by_d = defaultdict(list)
    for r in rows:
        if r["true_distance_m"] is not None and r["true_distance_m"] <= limit + 1e-9:
            by_d[round(r["true_distance_m"], 6)].append(r[value])
    stds = [_sample_std(v) for v in by_d.values() if len(v) > 1]
    return float(np.mean(stds)) if stds else None


def _avg_dev_at(rows: list[dict], distance: float) -> float | None:
    devs = [abs(r["distance_m"] - r["true_distance_m"]) for r in rows
            if r["true_distance_m"] is not None and abs(r["true_distance_m"] - distance) < 1e-6]
    return float(np.mean(devs)) * 100 if devs else None


def _max_dev_cm(rows: list[dict]) -> float | None:
    devs = [abs(r["distance_m"] - r["true_distance_m"]) for r in rows]
    return float(max(devs)) * 100 if devs else None


def _scale(value, factor):
    return None if value is None else value * factor


def _received(rows, method):
    return [r for r in rows if r["method"] == method and r["received"] == 1 and r["distance_m"] is not None]


PRECISION_METRICS = ["std_0_30m_cm", "std_0_10m_cm", "max_difference_cm"]


def precision_table(rows: list[dict]) -> tuple[list[str], list[dict]]:
    """Per-mode UWB precision: mean of per-distance std over 0-30 m and 0-10 m, and max difference."""
    uwb = _received(rows, "uwb")
    out = []
    for mode_id in sorted({r["mode"] for r in uwb}):
        sel = [r for r in uwb if r["mode"] == mode_id]
        metrics = {
            "std_0_30m_cm": _scale(_per_distance_std(sel, "distance_m", 30.0), 100),
            "std_0_10m_cm": _scale(_per_distance_std(sel, "distance_m", 10.0), 100),
            "max_difference_cm": _max_dev_cm(sel),
        }
        out.append(_with_reference({"mode": mode_id, "samples": len(sel)}, metrics,
                                   reference.PRECISION_CM.get(mode_id, {}), PRECISION_METRICS))
    return _columns(["mode", "samples"], PRECISION_METRICS), out


COMPARISON_METRICS = ["reception_rate", "std_0_30m_cm", "std_0_10m_cm", "max_deviation_cm",
                      "avg_deviation_250cm_cm", "avg_deviation_750cm_cm", "std_0_30m_db", "std_0_10m_db"]


def comparison_table(rows: list[dict]) -> tuple[list[str], list[dict]]:
    """UWB and BLE distance estimation side by side, split by LOS/NLOS."""
    out = []
    for method in ("uwb", "ble"):
        for los, label in ((1, "los"), (0, "nlos")):
            attempts = [r for r in rows if r["method"] == method and r["los"] == los]
            if not attempts:
                continue
            got = [r for r in attempts if r["received"] == 1 and r["distance_m"] is not None]
            metrics = {
                "reception_rate": len(got) / len(attempts),
                "std_0_30m_cm": _scale(_per_distance_std(got, "distance_m", 30.0), 100),
                "std_0_10m_cm": _scale(_per_distance_std(got, "distance_m", 10.0), 100),
                "max_deviation_cm": _max_dev_cm(got),
                "avg_deviation_250cm_cm": _avg_dev_at(got, 2.5),
                "avg_deviation_750cm_cm": _avg_dev_at(got, 7.5),
            }
            if method == "ble":
                metrics["std_0_30m_db"] = _per_distance_std(got, "rssi_dbm", 30.0)
                metrics["std_0_10m_db"] = _per_distance_std(got, "rssi_dbm", 10.0)
            key = f"{method}_{label}"
            out.append(_with_reference({"link": key, "samples": len(attempts)}, metrics,
                                       reference.COMPARISON[key], COMPARISON_METRICS))
    return _columns(["link", "samples"], COMPARISON_METRICS), out


NLOS_METRICS = ["distance_cm", "fp_gap_db"]


def nlos_table(rows: list[dict], threshold: float = 7.0) -> tuple[list[str], list[dict]]:
    """First-path diagnostics and link classification grouped by barrier thickness."""
    uwb = [r for r in _received(rows, "uwb") if r["fp_gap_db"] is not None]
    out = []
    for barrier in sorted({r["barrier_mm"] for r in uwb}):
        sel = [r for r in uwb if r["barrier_mm"] == barrier]
        gap = float(np.mean([r["fp_gap_db"] for r in sel]))
        metrics = {"distance_cm": float(np.mean([r["distance_m"] for r in sel])) * 100, "fp_gap_db": gap}
        ref = reference.NLOS_DIAGNOSTICS.get(int(round(barrier)), {})
        row = _with_reference({"barrier_mm": barrier, "samples": len(sel)}, metrics, ref, NLOS_METRICS)
        row.update(
            p_rxl_dbm=float(np.mean([r["p_rxl_dbm"] for r in sel])),
            p_fp_dbm=float(np.mean([r["p_fp_dbm"] for r in sel])),
            nlos_rate=float(np.mean([r["fp_gap_db"] >= threshold for r in sel])),
            **{"class": classify_gap(gap, threshold).value, "ref_class": ref.get("class")},
        )
        out.append(row)
    cols = _columns(["barrier_mm", "samples"], NLOS_METRICS) + ["p_rxl_dbm", "p_fp_dbm", "nlos_rate", "class",
                                                                "ref_class"]
    return cols, out


POWER_METRICS = ["avg_current_ma", "lifetime_continuous_h"]


def power_table(rows: list[dict], capacity_mah: float = LIFETIME_CAPACITY_MAH) -> tuple[list[str], list[dict]]:
    """Per-mode exchange current and continuous-ranging battery lifetime."""
    out = []
    for mode_id in sorted({r["mode"] for r in rows if r["method"] == "uwb"}):
        exchanges = sum(1 for r in rows if r["method"] == "uwb" and r["mode"] == mode_id)
        metrics = {
            "avg_current_ma": exchange_charge(mode_id).average_current_ma,
            "lifetime_continuous_h": lifetime_hours(capacity_mah, regime_current(mode_id)),
        }
        refs = {"avg_current_ma": reference.EXCHANGE_AVG_CURRENT_MA.get(mode_id)}
        if mode_id == 4:
            refs["lifetime_continuous_h"] = reference.LIFETIME_H["continuous_mode4"]
        out.append(_with_reference({"mode": mode_id, "exchanges": exchanges}, metrics, refs, POWER_METRICS))
    return _columns(["mode", "exchanges"], POWER_METRICS), out


TABLES = {
    "precision": precision_table,
    "comparison": comparison_table,
    "nlos": nlos_table,
    "power": power_table,
}


def render_table(table_id: str, rows: list[dict]) -> tuple[list[str], list[dict]]:
    if table_id not in TABLES:
        raise ReportError(f"unknown table {table_id!r}; choose from {', '.join(TABLE_IDS)}")
    return TABLES[table_id](rows)


def measurement_csv(rows: list[dict]) -> str:
    return format_csv(rows, MEASUREMENT_COLUMNS)
