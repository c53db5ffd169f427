"""Ingestion of the hourly air-quality multisensor record.

The public file is semicolon-delimited with decimal commas, separate ``Date``
(dd/mm/yyyy) and ``Time`` (HH.MM.SS) columns, and ``-200`` marking missing
values. Comma-delimited files with a single timestamp column also work.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .data import DataError, MultiFidelityDataset

log = logging.getLogger(__name__)

DEFAULT_COLUMNS = {
    "levels": ["T", "RH", "PT08.S1(CO)", "PT08.S5(O3)"],
    "target": "C6H6(GT)",
}


class SchemaError(DataError):
    pass


@dataclass
class AirWindow:
    start: str = "2004-10-03 00:00"
    train_end: str = "2005-01-16 00:00"
    test_end: str = "2005-04-04 23:00"
    max_gap: int = 3  # hours bridged by linear interpolation


@dataclass
class ColumnMap:
    levels: list[str] = field(default_factory=lambda: list(DEFAULT_COLUMNS["levels"]))
    target: str = DEFAULT_COLUMNS["target"]
    date: str = "Date"
    time: str = "Time"

    @classmethod
    def parse(cls, text: str) -> "ColumnMap":
        """``"levels=T,RH,CO,O3;target=C6H6(GT)"``-style override string."""
        kw = {}
        for part in filter(None, (p.strip() for p in text.split(";"))):
            key, _, value = part.partition("=")
            key = key.strip()
            if key == "levels":
                kw["levels"] = [v.strip() for v in value.split(",") if v.strip()]
            elif key in ("target", "date", "time"):
                kw[key] = value.strip()
            else:
                raise SchemaError(f"unknown column-map key {key!r}")
        return cls(**kw)


def read_table(path, delimiter: str | None = None, decimal: str | None = None) -> pd.DataFrame:
    text = Path(path).read_text(encoding="utf-8", errors="replace")
    if not text.strip():
        raise DataError(f"{path} is empty")
    header = text.splitlines()[0]
    if delimiter is None:
        delimiter = ";" if header.count(";") > header.count(",") else ","
    if decimal is None:
        decimal = "," if delimiter == ";" else "."
    df = pd.read_csv(io.StringIO(text), sep=delimiter, dtype=str, quoting=csv.QUOTE_MINIMAL, skip_blank_lines=True)
    df = df.loc[:, [c for c in df.columns if not str(c).startswith("Unnamed")]]
    df.columns = [str(c).strip() for c in df.columns]
    df = df.dropna(how="all")
    if df.empty:
        raise DataError(f"{path} has a header but no data rows")
    df.attrs["decimal"] = decimal
    return df


def _timestamps(df: pd.DataFrame, cols: ColumnMap) -> pd.DatetimeIndex:
    if cols.date in df.columns and cols.time in df.columns:
        raw = df[cols.date].str.strip() + " " + df[cols.time].str.strip().str.replace(".", ":", regex=False)
        return pd.DatetimeIndex(pd.to_datetime(raw, format="%d/%m/%Y %H:%M:%S"))
    for name in ("timestamp", "datetime", "time", cols.date):
        if name in df.columns:
            return pd.DatetimeIndex(pd.to_datetime(df[name].str.strip()))
    raise SchemaError(f"no timestamp column: expected {cols.date!r}+{cols.time!r} or 'timestamp'")


def _numeric(series: pd.Series, decimal: str) -> np.ndarray:
    s = series.str.strip()
    if decimal == ",":
        s = s.str.replace(",", ".", regex=False)
    return pd.to_numeric(s, errors="coerce").to_numpy(dtype=np.float64)


def _fill_short_gaps(values: np.ndarray, max_gap: int) -> tuple[np.ndarray, np.ndarray]:
    """Linearly bridge interior NaN runs of at most ``max_gap`` steps.

    Returns the filled series and a flag array marking imputed cells.
    Longer or boundary runs stay NaN.
    """
    out = values.copy()
    flags = np.zeros(values.shape, dtype=bool)
    missing = np.isnan(values)
    n = len(values)
    i = 0
    while i < n:
        if not missing[i]:
            i += 1
            continue
        j = i
        while j < n and missing[j]:
            j += 1
        if i > 0 and j < n and j - i <= max_gap:
            w = np.arange(1, j - i + 1) / (j - i + 1)
            out[i:j] = values[i - 1] + w * (values[j] - values[i - 1])
            flags[i:j] = True
        i = j
    return out, flags


def ingest_air_quality(csv_path, column_map: ColumnMap | None = None, missing_marker: float = -200.0,
                       window: AirWindow | None = None, delimiter: str | None = None,
                       decimal: str | None = None) -> MultiFidelityDataset:
    """Build a four-level dataset (one input channel per level) predicting the target.

    Rows are placed on a regular hourly grid over ``[window.start,
    window.test_end]``. Cells equal to ``missing_marker`` (or absent hours) are
    gaps: interior gaps of at most ``window.max_gap`` hours are linearly
    interpolated and flagged in ``extras["imputed"]``; any longer gap splits the
    record into separate contiguous segments, one sample each. Steps up to and
    including ``window.train_end`` form the training prefix, later ones the
    test set.
    """
    cols = column_map or ColumnMap()
    window = window or AirWindow()
    df = read_table(csv_path, delimiter, decimal)
    wanted = [*cols.levels, cols.target]
    for name in wanted:
        if name not in df.columns:
            raise SchemaError(f"column {name!r} not found in {csv_path}")

    stamps = _timestamps(df, cols)
    t0, t_train, t_end = (pd.Timestamp(window.start), pd.Timestamp(window.train_end), pd.Timestamp(window.test_end))
    hours = pd.date_range(t0, t_end, freq="h")
    table = np.full((len(hours), len(wanted)), np.nan)
    values = np.column_stack([_numeric(df[c], df.attrs["decimal"]) for c in wanted])
    values[values == missing_marker] = np.nan
    frame = pd.DataFrame(values, index=stamps)
    frame = frame[~frame.index.duplicated(keep="first")].reindex(hours)
    table[:] = frame.to_numpy()

    filled = np.empty_like(table)
    imputed = np.zeros(table.shape, dtype=bool)
    for c in range(table.shape[1]):
        filled[:, c], imputed[:, c] = _fill_short_gaps(table[:, c], window.max_gap)
    valid = ~np.isnan(filled).any(axis=1)

    segments = []
    i = 0
    while i < len(hours):
        if not valid[i]:
            i += 1
            continue
        j = i
        while j < len(hours) and valid[j]:
            j += 1
        segments.append((i, j))
        i = j
    if not segments:
        raise DataError("no valid rows inside the requested window")

    K = max(j - i for i, j in segments)
    N = len(segments)
    n_lv = len(cols.levels)
    inputs = [np.zeros((N, K, 1)) for _ in range(n_lv)]
    targets = np.zeros((N, K, 1))
    times = np.zeros((N, K))
    flags = np.zeros((N, K, len(wanted)))
    lengths = np.zeros(N, dtype=np.int64)
    train_mask = np.zeros((N, K), dtype=bool)
    test_mask = np.zeros((N, K), dtype=bool)
    hours_since = ((hours - t0) / pd.Timedelta(hours=1)).to_numpy(dtype=np.float64)
    train_hours = (t_train - t0) / pd.Timedelta(hours=1)
    for s, (i, j) in enumerate(segments):
        n = j - i
        lengths[s] = n
        for l in range(n_lv):
            inputs[l][s, :n, 0] = filled[i:j, l]
        targets[s, :n, 0] = filled[i:j, -1]
        times[s, :n] = hours_since[i:j]
        # pad times past the end so they stay increasing
        times[s, n:] = hours_since[j - 1] + np.arange(1, K - n + 1)
        flags[s, :n] = imputed[i:j]
        train_mask[s, :n] = hours_since[i:j] <= train_hours
        test_mask[s, :n] = hours_since[i:j] > train_hours

    n_imputed = int(imputed[valid].sum())
    log.info("air-quality: %d segment(s), %d steps, %d imputed cell(s)", N, int(lengths.sum()), n_imputed)
    return MultiFidelityDataset(
        inputs=inputs,
        targets=targets,
        times=times,
        sample_ids=np.arange(N, dtype=np.float64),
        train_mask=train_mask,
        test_mask=test_mask,
        lengths=lengths,
        extras={"imputed": flags},
        meta={
            "experiment": "air",
            "columns": wanted,
            "t0": str(t0),
            "train_end": str(t_train),
            "test_end": str(t_end),
            "missing_marker": missing_marker,
            "max_gap_hours": window.max_gap,
            "n_imputed": n_imputed,
            "segments": [[str(hours[i]), str(hours[j - 1])] for i, j in segments],
        },
    )


UCI_COLUMNS = ["Date", "Time", "CO(GT)", "PT08.S1(CO)", "NMHC(GT)", "C6H6(GT)", "PT08.S2(NMHC)", "NOx(GT)",
               "PT08.S3(NOx)", "NO2(GT)", "PT08.S4(NO2)", "PT08.S5(O3)", "T", "RH", "AH"]


def write_synthetic_record(path, start: str = "2004-10-01 00:00", hours: int = 24 * 200, seed: int = 0,
                           gaps: list[tuple[int, int]] = (), missing_marker: float = -200.0):
    """Write a stand-in hourly record in the public file's layout.

    Benzene follows a daily traffic cycle modulated by a slow weather signal.
    Temperature and humidity correlate with it only loosely, the two chemical
    sensors respond to it with their own noise. ``gaps`` lists ``(first_hour,
    n_hours)`` runs written as ``missing_marker`` in every sensor column.
    """
    rng = np.random.default_rng(seed)
    stamps = pd.date_range(start, periods=hours, freq="h")
    h = np.arange(hours, dtype=float)
    day = 2 * np.pi * h / 24
    weather = np.convolve(rng.normal(size=hours + 96), np.ones(96) / 96 ** 0.5, mode="same")[:hours] * 0.4
    season = np.cos(2 * np.pi * h / (24 * 365))
    traffic = 1.0 + 0.8 * np.maximum(np.sin(day - 1.8), 0) + 0.5 * np.maximum(np.sin(2 * day - 0.5), 0)
    benzene = np.clip(6.0 * traffic * np.exp(0.5 * weather) + rng.normal(0, 0.3, hours), 0.2, None)
    temp = 15 + 8 * season + 4 * np.sin(day - 2.0) - 2.0 * weather + rng.normal(0, 0.5, hours)
    rh = np.clip(55 - 1.2 * (temp - 15) + 8 * weather + rng.normal(0, 3, hours), 5, 95)
    s_co = 800 + 55 * benzene + rng.normal(0, 25, hours)
    s_o3 = 600 + 70 * benzene + 3 * (temp - 15) + rng.normal(0, 15, hours)
    cols = {
        "CO(GT)": 0.25 * benzene, "PT08.S1(CO)": s_co, "NMHC(GT)": np.full(hours, missing_marker),
        "C6H6(GT)": benzene, "PT08.S2(NMHC)": 700 + 40 * benzene, "NOx(GT)": 20 * benzene,
        "PT08.S3(NOx)": 1200 - 30 * benzene, "NO2(GT)": 8 * benzene, "PT08.S4(NO2)": 1500 + 10 * temp,
        "PT08.S5(O3)": s_o3, "T": temp, "RH": rh, "AH": 0.01 * rh * np.exp(0.06 * temp),
    }
    for first, n in gaps:
        for name in cols:
            cols[name][first:first + n] = missing_marker

    def fmt(v):
        return f"{v:.1f}".replace(".", ",") if v != missing_marker else f"{missing_marker:g}"

    lines = [";".join(UCI_COLUMNS) + ";;"]
    for k, ts in enumerate(stamps):
        row = [ts.strftime("%d/%m/%Y"), ts.strftime("%H.%M.%S")] + [fmt(cols[c][k]) for c in UCI_COLUMNS[2:]]
        lines.append(";".join(row) + ";;")
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)
