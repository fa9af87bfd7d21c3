"""Subject records, datasets and CSV ingestion.

A dataset is stored column-wise (numpy arrays) because every estimator works
on whole columns; :class:`SubjectRecord` is the row view used at the edges.
"""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np


class DataError(ValueError):
    """Base class for dataset problems."""


class SchemaError(DataError):
    pass


class ValidityError(DataError):
    pass


class ParseError(DataError):
    pass


@dataclass(frozen=True)
class SubjectRecord:
    id: str
    y: float
    delta: int
    a: int
    x: tuple[float, ...]
    r: int

    def __post_init__(self):
        _check_row(self.y, self.delta, self.a, self.r, where=f"subject {self.id}")


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing evaluation times ending at the horizon ``tau``."""

    times: np.ndarray
    tau: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size == 0:
            raise ValueError("time grid must be a nonempty 1-d array")
        if t[0] <= 0 or np.any(np.diff(t) <= 0):
            raise ValueError("time grid must be positive and strictly increasing")
        if t[-1] != self.tau:
            raise ValueError("last grid time must equal tau")
        object.__setattr__(self, "times", t)

    @property
    def left_points(self) -> np.ndarray:
        """Left endpoints ``0, t_1, ..., t_{K-1}`` of the integration cells."""
        return np.concatenate(([0.0], self.times[:-1]))

    @property
    def widths(self) -> np.ndarray:
        return np.diff(np.concatenate(([0.0], self.times)))

    @classmethod
    def from_times(cls, times: Iterable[float], tau: float) -> "TimeGrid":
        """Grid of the unique positive ``times`` below ``tau`` with ``tau`` appended."""
        t = np.unique(np.asarray(list(times) if not isinstance(times, np.ndarray) else times, dtype=float))
        t = t[(t > 0) & (t < tau)]
        return cls(np.append(t, float(tau)), float(tau))


def _check_row(y, delta, a, r, where):
    if not np.isfinite(y) or y < 0:
        raise ValidityError(f"{where}: follow-up time must be nonnegative, got {y}")
    if delta not in (0, 1):
        raise ValidityError(f"{where}: delta must be 0 or 1, got {delta}")
    if a not in (0, 1):
        raise ValidityError(f"{where}: a must be 0 or 1, got {a}")
    if r not in (0, 1):
        raise ValidityError(f"{where}: r must be 0 or 1, got {r}")
    if r == 0 and a == 1:
        raise ValidityError(f"{where}: external control (r=0) cannot be treated (a=1)")


@dataclass(frozen=True)
class Dataset:
    """Column-oriented collection of subjects.

    ``x`` has shape ``(n, p)``; ``r == 1`` marks trial subjects and
    ``r == 0`` external controls.
    """

    ids: np.ndarray
    y: np.ndarray
    delta: np.ndarray
    a: np.ndarray
    r: np.ndarray
    x: np.ndarray
    covariate_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        n = len(self.ids)
        ids = np.asarray(self.ids).astype(str)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        delta = np.asarray(self.delta, dtype=np.int8).reshape(-1)
        a = np.asarray(self.a, dtype=np.int8).reshape(-1)
        r = np.asarray(self.r, dtype=np.int8).reshape(-1)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(n, -1)
        if not all(len(v) == n for v in (y, delta, a, r, x)):
            raise SchemaError("column lengths differ")
        names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise SchemaError("covariate_names does not match the covariate count")
        if len(set(ids.tolist())) != n:
            raise ValidityError("subject ids must be unique")
        bad = (~np.isfinite(y)) | (y < 0) | ((delta != 0) & (delta != 1)) | ((a != 0) & (a != 1))
        bad |= ((r != 0) & (r != 1)) | ((r == 0) & (a == 1))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            _check_row(y[i], int(delta[i]), int(a[i]), int(r[i]), where=f"row {i + 1} (id {ids[i]})")
        for k, v in (("ids", ids), ("y", y), ("delta", delta), ("a", a), ("r", r), ("x", x)):
            v.setflags(write=False)
            object.__setattr__(self, k, v)
        object.__setattr__(self, "covariate_names", names)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def n_trial(self) -> int:
        return int(self.r.sum())

    @property
    def n_external(self) -> int:
        return len(self) - self.n_trial

    @property
    def records(self) -> list[SubjectRecord]:
        return [
            SubjectRecord(str(self.ids[i]), float(self.y[i]), int(self.delta[i]), int(self.a[i]),
                          tuple(float(v) for v in self.x[i]), int(self.r[i]))
            for i in range(len(self))
        ]

    @classmethod
    def from_records(cls, records: Sequence[SubjectRecord],
                     covariate_names: Sequence[str] = ()) -> "Dataset":
        if not records:
            p = len(covariate_names)
            return cls(np.array([], dtype=str), np.zeros(0), np.zeros(0), np.zeros(0),
                       np.zeros(0), np.zeros((0, p)), tuple(covariate_names))
        return cls(
            ids=np.array([rec.id for rec in records]),
            y=np.array([rec.y for rec in records]),
            delta=np.array([rec.delta for rec in records]),
            a=np.array([rec.a for rec in records]),
            r=np.array([rec.r for rec in records]),
            x=np.array([rec.x for rec in records], dtype=float),
            covariate_names=tuple(covariate_names),
        )

    def subset(self, mask_or_index) -> "Dataset":
        idx = np.asarray(mask_or_index)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return Dataset(self.ids[idx], self.y[idx], self.delta[idx], self.a[idx],
                       self.r[idx], self.x[idx], self.covariate_names)

    def trial_only(self) -> "Dataset":
        return self.subset(self.r == 1)

    def cell(self, r: int, a: int) -> np.ndarray:
        """Indices of the ``(r, a)`` cell in dataset order."""
        return np.flatnonzero((self.r == r) & (self.a == a))


def header(p: int) -> list[str]:
    return ["id", "y", "delta", "a", "r"] + [f"x{j + 1}" for j in range(p)]


def write_dataset(dataset: Dataset, stream: IO[str]) -> None:
    """Write ``dataset`` as CSV with header ``id,y,delta,a,r,x1,...,xp``.

    Floats are written with ``repr`` so a read back reproduces them exactly.
    """
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(header(dataset.p))
    for i in range(len(dataset)):
        w.writerow([dataset.ids[i], repr(float(dataset.y[i])), int(dataset.delta[i]),
                    int(dataset.a[i]), int(dataset.r[i])]
                   + [repr(float(v)) for v in dataset.x[i]])


def dataset_to_csv(dataset: Dataset) -> str:
    buf = io.StringIO()
    write_dataset(dataset, buf)
    return buf.getvalue()


def _parse_int(text: str, column: str, line: int) -> int:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"line {line}: column {column!r} is not numeric: {text!r}") from None
    if v != int(v):
        raise ParseError(f"line {line}: column {column!r} must be an integer, got {text!r}")
    return int(v)


def load_dataset(source: IO[str] | IO[bytes] | str | os.PathLike, p: int | None = None) -> Dataset:
    """Read and validate a dataset CSV.

    ``source`` is a text or binary stream, or a path. When ``p`` is given the
    header must list exactly ``x1..xp``; otherwise ``p`` is inferred from it.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            return load_dataset(fh, p)
    text = source.read()
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    reader = csv.reader(io.StringIO(text))
    try:
        cols = [c.strip() for c in next(reader)]
    except StopIteration:
        raise SchemaError("empty input: missing header") from None

    if p is None:
        p = sum(1 for c in cols if c.startswith("x"))
    expected = header(p)
    for c in expected:
        if c not in cols:
            raise SchemaError(f"missing column {c!r}")
    for c in cols:
        if c not in expected:
            raise SchemaError(f"unexpected column {c!r}")
    if cols != expected:
        raise SchemaError(f"columns out of order; expected {','.join(expected)}")

    ids, y, delta, a, r, x = [], [], [], [], [], []
    for line, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(expected):
            raise ParseError(f"line {line}: expected {len(expected)} fields, got {len(row)}")
        ids.append(row[0])
        try:
            y.append(float(row[1]))
        except ValueError:
            raise ParseError(f"line {line}: column 'y' is not numeric: {row[1]!r}") from None
        delta.append(_parse_int(row[2], "delta", line))
        a.append(_parse_int(row[3], "a", line))
        r.append(_parse_int(row[4], "r", line))
        xi = []
        for j, v in enumerate(row[5:]):
            try:
                xi.append(float(v))
            except ValueError:
                raise ParseError(f"line {line}: column 'x{j + 1}' is not numeric: {v!r}") from None
        x.append(xi)
        _check_row(y[-1], delta[-1], a[-1], r[-1], where=f"line {line} (id {row[0]})")
    return Dataset(np.array(ids, dtype=str), np.array(y), np.array(delta), np.array(a),
                   np.array(r), np.array(x, dtype=float).reshape(len(ids), p),
                   tuple(expected[5:]))
