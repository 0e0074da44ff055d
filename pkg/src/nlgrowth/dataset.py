"""Wide-format longitudinal data with individual measurement occasions.

One row per individual.  Each longitudinal variable owns a list of value
columns and a parallel list of time columns (the definition variables);
time-invariant covariates are single columns.
"""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .exceptions import MissingColumn, NonMonotoneTimes, OrphanObservation, UnknownRole

NA_TOKENS = ("", "NA")


@dataclass(frozen=True)
class ColumnRoles:
    """Assignment of CSV columns to model roles.

    ``longitudinal`` maps a variable name to ``(value_columns, time_columns)``
    of equal length; ``tics`` lists time-invariant covariate columns.
    """

    longitudinal: Mapping[str, tuple[tuple[str, ...], tuple[str, ...]]]
    tics: tuple[str, ...] = ()

    def __post_init__(self):
        for name, (vals, times) in self.longitudinal.items():
            if len(vals) != len(times):
                raise ValueError(f"{name}: {len(vals)} value columns but {len(times)} time columns")
            if not vals:
                raise ValueError(f"{name}: no waves declared")

    @classmethod
    def from_records(cls, variables: Mapping[str, Sequence[int]], t_var: str = "T", tics: Iterable[str] = ()):
        """Build roles from the ``Y1..YJ`` / ``T1..TJ`` naming convention."""
        longit = {
            v: (tuple(f"{v}{k}" for k in recs), tuple(f"{t_var}{k}" for k in recs))
            for v, recs in variables.items()
        }
        return cls(longit, tuple(tics))

    @property
    def time_columns(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for _, times in self.longitudinal.values():
            for t in times:
                seen.setdefault(t, None)
        return tuple(seen)

    def columns(self) -> list[str]:
        cols: dict[str, None] = {}
        for vals, times in self.longitudinal.values():
            for c in (*vals, *times):
                cols.setdefault(c, None)
        for c in self.tics:
            cols.setdefault(c, None)
        return list(cols)

    def merged(self, other: "ColumnRoles") -> "ColumnRoles":
        longit = dict(self.longitudinal)
        longit.update(other.longitudinal)
        tics = tuple(dict.fromkeys((*self.tics, *other.tics)))
        return ColumnRoles(longit, tics)


@dataclass(frozen=True)
class IndividualRecord:
    id: str
    values: Mapping[str, float | None]
    mask: Mapping[str, tuple[bool, ...]]


@dataclass(frozen=True)
class LongitudinalDataset:
    """Immutable wide-format dataset.

    Numeric role columns are stored as float arrays with NaN for absent cells.
    Columns that carry no role are kept verbatim so the file can be written
    back unchanged.
    """

    ids: tuple[str, ...]
    roles: ColumnRoles
    numeric: Mapping[str, np.ndarray]
    header: tuple[str, ...] = ()
    raw: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    id_column: str | None = None

    def __post_init__(self):
        for arr in self.numeric.values():
            arr.setflags(write=False)
        _validate(self)

    # -- shapes -----------------------------------------------------------
    @property
    def n_individuals(self) -> int:
        return len(self.ids)

    def __len__(self) -> int:
        return len(self.ids)

    def wave_count(self, variable: str) -> int:
        return len(self._role(variable)[0])

    def _role(self, variable):
        try:
            return self.roles.longitudinal[variable]
        except KeyError:
            raise UnknownRole(variable) from None

    # -- array access -----------------------------------------------------
    def values(self, variable: str) -> np.ndarray:
        """(N, J) outcome values of a longitudinal variable, NaN where absent."""
        vals, _ = self._role(variable)
        return np.column_stack([self.numeric[c] for c in vals])

    def times(self, variable: str) -> np.ndarray:
        _, times = self._role(variable)
        return np.column_stack([self.numeric[c] for c in times])

    def mask(self, variable: str) -> np.ndarray:
        return ~np.isnan(self.values(variable))

    def column(self, name: str) -> np.ndarray:
        try:
            return self.numeric[name]
        except KeyError:
            raise MissingColumn(name) from None

    def tic_matrix(self, names: Sequence[str]) -> np.ndarray:
        if not names:
            return np.empty((len(self.ids), 0))
        return np.column_stack([self.column(n) for n in names])

    def fingerprint(self) -> str:
        """Content hash used to check that fits refer to the same data."""
        h = hashlib.sha256()
        for c in sorted(self.numeric):
            h.update(c.encode())
            h.update(np.ascontiguousarray(self.numeric[c]).tobytes())
        return h.hexdigest()[:16]

    # -- records ----------------------------------------------------------
    def record(self, i: int) -> IndividualRecord:
        values = {c: (None if np.isnan(a[i]) else float(a[i])) for c, a in self.numeric.items()}
        mask = {
            v: tuple(values[c] is not None for c in cols)
            for v, (cols, _) in self.roles.longitudinal.items()
        }
        return IndividualRecord(self.ids[i], values, mask)

    @property
    def individuals(self) -> list[IndividualRecord]:
        return [self.record(i) for i in range(len(self.ids))]

    def subset(self, rows: Sequence[int] | np.ndarray) -> "LongitudinalDataset":
        rows = np.asarray(rows, dtype=int)
        numeric = {c: a[rows].copy() for c, a in self.numeric.items()}
        raw = {c: tuple(v[r] for r in rows) for c, v in self.raw.items()}
        return LongitudinalDataset(tuple(self.ids[r] for r in rows), self.roles, numeric,
                                   self.header, raw, self.id_column)

    def with_roles(self, roles: ColumnRoles) -> "LongitudinalDataset":
        missing = [c for c in roles.columns() if c not in self.numeric and c not in self.raw]
        if missing:
            raise MissingColumn(", ".join(missing))
        numeric = dict(self.numeric)
        raw = dict(self.raw)
        for c in roles.columns():
            if c not in numeric:
                numeric[c] = _parse_column(raw.pop(c), c)
        return LongitudinalDataset(self.ids, roles, numeric, self.header, raw, self.id_column)

    # -- pandas interop ---------------------------------------------------
    @classmethod
    def from_frame(cls, frame, roles: ColumnRoles, id_column: str | None = None) -> "LongitudinalDataset":
        missing = [c for c in roles.columns() if c not in frame.columns]
        if missing:
            raise MissingColumn(", ".join(missing))
        ids = (tuple(str(v) for v in frame[id_column]) if id_column
               else tuple(str(i + 1) for i in range(len(frame))))
        numeric = {c: np.asarray(frame[c], dtype=float).copy() for c in roles.columns()}
        return cls(ids, roles, numeric, tuple(str(c) for c in frame.columns), {}, id_column)

    def to_frame(self):
        import pandas as pd

        cols = {}
        if self.id_column:
            cols[self.id_column] = list(self.ids)
        for c in self.header or list(self.numeric):
            if c in self.numeric:
                cols[c] = np.asarray(self.numeric[c])
            elif c in self.raw:
                cols[c] = list(self.raw[c])
        return pd.DataFrame(cols)


def _validate(ds: LongitudinalDataset) -> None:
    n = len(ds.ids)
    for c, a in ds.numeric.items():
        if a.shape != (n,):
            raise ValueError(f"column {c} has shape {a.shape}, expected ({n},)")
    for v, (vals, times) in ds.roles.longitudinal.items():
        for c in (*vals, *times):
            if c not in ds.numeric:
                raise MissingColumn(c)
        y = np.column_stack([ds.numeric[c] for c in vals])
        t = np.column_stack([ds.numeric[c] for c in times])
        orphan = ~np.isnan(y) & np.isnan(t)
        if orphan.any():
            i, j = np.argwhere(orphan)[0]
            raise OrphanObservation(f"individual {ds.ids[i]!r}: {vals[j]} present but {times[j]} absent")
    for c in ds.roles.tics:
        if c not in ds.numeric:
            raise MissingColumn(c)
    tcols = ds.roles.time_columns
    if tcols:
        t = np.column_stack([ds.numeric[c] for c in tcols])
        for i in range(n):
            row = t[i][~np.isnan(t[i])]
            if row.size > 1 and np.any(np.diff(row) <= 0):
                raise NonMonotoneTimes(f"individual {ds.ids[i]!r}: times {row.tolist()} not strictly increasing")


def _parse_cell(s: str, column: str, na_tokens=NA_TOKENS) -> float:
    s = s.strip()
    if s in na_tokens:
        return np.nan
    try:
        return float(s)
    except ValueError:
        raise ValueError(f"column {column}: cannot parse {s!r} as a number") from None


def _parse_column(cells: Sequence[str], column: str, na_tokens=NA_TOKENS) -> np.ndarray:
    return np.array([_parse_cell(s, column, na_tokens) for s in cells], dtype=float)


def load_wide_csv(path, roles: ColumnRoles, id_column: str | None = None,
                  na_tokens: Sequence[str] = NA_TOKENS) -> LongitudinalDataset:
    """Read a wide CSV (header row required) into a :class:`LongitudinalDataset`.

    Empty cells and ``NA`` are treated as absent.  Raises ``MissingColumn``
    when a declared column is not in the header.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    index = {c: k for k, c in enumerate(header)}
    needed = roles.columns() + ([id_column] if id_column else [])
    missing = [c for c in needed if c not in index]
    if missing:
        raise MissingColumn(", ".join(missing))
    for r in rows:
        if len(r) != len(header):
            raise ValueError(f"row has {len(r)} fields, header has {len(header)}")
    role_cols = set(roles.columns())
    numeric = {c: _parse_column([r[index[c]] for r in rows], c, na_tokens) for c in roles.columns()}
    raw = {c: tuple(r[index[c]] for r in rows) for c in header if c not in role_cols and c != id_column}
    ids = (tuple(r[index[id_column]] for r in rows) if id_column
           else tuple(str(i + 1) for i in range(len(rows))))
    return LongitudinalDataset(ids, roles, numeric, tuple(header), raw, id_column)


def _fmt(x: float) -> str:
    return "" if np.isnan(x) else repr(float(x))


def write_wide_csv(ds: LongitudinalDataset, path) -> None:
    """Write ``ds`` back to CSV; finite values round-trip bit-exactly."""
    header = list(ds.header) if ds.header else ([ds.id_column] if ds.id_column else []) + list(ds.numeric)
    if ds.id_column and ds.id_column not in header:
        header.insert(0, ds.id_column)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(ds.ids)):
            row = []
            for c in header:
                if c == ds.id_column:
                    row.append(ds.ids[i])
                elif c in ds.numeric:
                    row.append(_fmt(ds.numeric[c][i]))
                else:
                    row.append(ds.raw[c][i])
            w.writerow(row)


def observed_subvector(rec: IndividualRecord, variable: str, roles: ColumnRoles | None = None):
    """Present entries of one longitudinal variable and their 1-based wave positions.

    ``roles`` supplies the column order; without it the record's own
    ``mask`` and the ``<variable><k>`` naming convention are used.
    """
    if variable not in rec.mask:
        raise UnknownRole(variable)
    if roles is not None:
        cols = roles.longitudinal[variable][0]
    else:
        cols = [c for c in rec.values if c.startswith(variable) and c[len(variable):].isdigit()]
        cols.sort(key=lambda c: int(c[len(variable):]))
    values, indices = [], []
    for k, (c, present) in enumerate(zip(cols, rec.mask[variable]), start=1):
        if present:
            values.append(rec.values[c])
            indices.append(k)
    return tuple(values), tuple(indices)
