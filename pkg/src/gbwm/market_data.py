"""Monthly two-asset return history: loading, validation and train/test split."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Raised for malformed or inconsistent return data."""


@dataclass(frozen=True)
class ReturnSeries:
    """Aligned monthly simple returns for a bond and a stock asset.

    ``months`` is an int array of shape (N, 2) holding (year, month) pairs.
    """

    months: np.ndarray
    bond_returns: np.ndarray
    stock_returns: np.ndarray

    def __post_init__(self):
        months = np.asarray(self.months, dtype=np.int64).reshape(-1, 2)
        bond = np.asarray(self.bond_returns, dtype=np.float64)
        stock = np.asarray(self.stock_returns, dtype=np.float64)
        if not (len(months) == len(bond) == len(stock)):
            raise DataError("months, bond_returns and stock_returns differ in length")
        if len(months) < 1:
            raise DataError("empty return series")
        idx = month_index(months)
        if np.any(np.diff(idx) != 1):
            bad = int(np.argmax(np.diff(idx) != 1))
            raise DataError(
                f"non-consecutive months at position {bad + 1}: "
                f"{_fmt(months[bad])} followed by {_fmt(months[bad + 1])}"
            )
        if np.any(~np.isfinite(bond)) or np.any(~np.isfinite(stock)):
            raise DataError("non-finite return value")
        if np.any(bond <= -1.0) or np.any(stock <= -1.0):
            raise DataError("return <= -1 (price would not stay positive)")
        object.__setattr__(self, "months", months)
        object.__setattr__(self, "bond_returns", bond)
        object.__setattr__(self, "stock_returns", stock)

    def __len__(self) -> int:
        return len(self.bond_returns)

    @property
    def returns(self) -> np.ndarray:
        """(N, 2) array with columns (bond, stock)."""
        return np.column_stack([self.bond_returns, self.stock_returns])

    @property
    def first_month(self) -> tuple[int, int]:
        return tuple(int(v) for v in self.months[0])

    @property
    def last_month(self) -> tuple[int, int]:
        return tuple(int(v) for v in self.months[-1])

    def slice(self, start: int, stop: int) -> "ReturnSeries":
        return ReturnSeries(
            self.months[start:stop],
            self.bond_returns[start:stop],
            self.stock_returns[start:stop],
        )


def month_index(months) -> np.ndarray:
    months = np.asarray(months, dtype=np.int64).reshape(-1, 2)
    return months[:, 0] * 12 + (months[:, 1] - 1)


def _fmt(ym) -> str:
    return f"{int(ym[0]):04d}-{int(ym[1]):02d}"


_DATE_PATTERNS = [
    re.compile(r"^(\d{4})[-/.](\d{1,2})(?:[-/.]\d{1,2})?$"),  # 1991-01, 1991-01-31
    re.compile(r"^(\d{4})\.(\d{2})$"),  # Shiller style 1991.01
    re.compile(r"^(\d{4})(\d{2})$"),  # 199101
]


def parse_month(text: str) -> tuple[int, int]:
    """Parse a calendar month from ``YYYY-MM``, ``YYYY-MM-DD``, ``YYYY.MM`` or ``YYYYMM``."""
    s = text.strip()
    for pat in _DATE_PATTERNS:
        m = pat.match(s)
        if m:
            year, month = int(m.group(1)), int(m.group(2))
            if not 1 <= month <= 12:
                break
            return year, month
    raise ValueError(f"unparseable month {text!r}")


def load_returns(
    path,
    date_col: str = "date",
    bond_col: str = "bond_return",
    stock_col: str = "stock_return",
    delimiter: str | None = None,
) -> ReturnSeries:
    """Read a delimited text file with a header row into a validated ReturnSeries.

    Canonical files written by :func:`save_returns` have separate ``year`` and
    ``month`` columns; those are detected automatically when ``date_col`` is absent.
    Rows are sorted chronologically before validation.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    with path.open(newline="") as fh:
        text = fh.read()
    if delimiter is None:
        try:
            delimiter = csv.Sniffer().sniff(text.splitlines()[0], delimiters=",;\t").delimiter
        except (csv.Error, IndexError):
            delimiter = ","
    reader = csv.DictReader(text.splitlines(), delimiter=delimiter)
    header = reader.fieldnames or []
    split_date = date_col not in header and {"year", "month"} <= set(header)
    needed = ([] if split_date else [date_col]) + [bond_col, stock_col]
    missing = [c for c in needed if c not in header]
    if missing:
        raise DataError(f"{path}: missing column(s) {missing}; header is {header}")

    months, bond, stock = [], [], []
    for row_no, row in enumerate(reader, start=2):
        try:
            if split_date:
                ym = (int(row["year"]), int(row["month"]))
                if not 1 <= ym[1] <= 12:
                    raise ValueError(f"bad month {ym[1]}")
            else:
                ym = parse_month(row[date_col] or "")
            b = float(row[bond_col])
            s = float(row[stock_col])
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}: unparseable row {row_no}: {exc}") from None
        months.append(ym)
        bond.append(b)
        stock.append(s)
    if not months:
        raise DataError(f"{path}: no data rows")

    months_arr = np.array(months, dtype=np.int64)
    order = np.argsort(month_index(months_arr), kind="stable")
    return ReturnSeries(months_arr[order], np.array(bond)[order], np.array(stock)[order])


def save_returns(series: ReturnSeries, path) -> None:
    """Write the canonical ``year,month,bond_return,stock_return`` CSV.

    Floats use ``repr`` so that :func:`load_returns` round-trips bit-exactly.
    """
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "month", "bond_return", "stock_return"])
        for (y, m), b, s in zip(series.months, series.bond_returns, series.stock_returns):
            w.writerow([int(y), int(m), repr(float(b)), repr(float(s))])


def split_train_test(series: ReturnSeries, boundary) -> tuple[ReturnSeries, ReturnSeries]:
    """Split at ``boundary`` (a (year, month) pair or ``YYYY-MM`` string).

    The first part holds all months strictly before the boundary.
    """
    if isinstance(boundary, str):
        boundary = parse_month(boundary)
    b = int(month_index([boundary])[0])
    idx = month_index(series.months)
    if not idx[0] < b <= idx[-1]:
        raise DataError(
            f"split boundary {_fmt(boundary)} outside series range "
            f"{_fmt(series.months[0])}..{_fmt(series.months[-1])}"
        )
    cut = int(b - idx[0])
    return series.slice(0, cut), series.slice(cut, len(series))
