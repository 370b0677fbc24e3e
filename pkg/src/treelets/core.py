"""Data model, validation, and the correlation/covariance primitives shared by all analyses."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

# Columns whose sample variance falls at or below this floor are rejected at
# ingestion: correlations against them are undefined.
VARIANCE_FLOOR = 1e-12

# Substream tags keeping the package's seeded RNG streams disjoint.
STREAM_FOLDS = 1
STREAM_BOOTSTRAP = 2
STREAM_DESIGN = 3
STREAM_NOISE = 4


class TreeletError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(TreeletError, ValueError):
    """Input data or parameters violate a documented precondition."""


class NumericalError(TreeletError, ArithmeticError):
    """An iterative numerical routine failed to converge."""


def seeded_rng(*key: int) -> np.random.Generator:
    """Deterministic generator for a (stream tag, seed, indices...) key."""
    for part in key:
        if part < 0:
            raise ValidationError("RNG key parts must be non-negative integers")
    return np.random.default_rng(np.random.SeedSequence(list(key)))


def check_seed(seed: int) -> int:
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool):
        raise ValidationError(f"seed must be an integer, got {seed!r}")
    if not 0 <= int(seed) < 2**64:
        raise ValidationError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    return int(seed)


@dataclass(frozen=True)
class DataMatrix:
    """An n x p numeric sample matrix; rows are samples, columns are named variables."""

    values: np.ndarray
    variable_names: tuple[str, ...]

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise ValidationError("data matrix must be two-dimensional")
        n, p = values.shape
        if n < 2 or p < 2:
            raise ValidationError(f"need at least 2 samples and 2 variables, got n={n}, p={p}")
        names = tuple(str(name) for name in self.variable_names)
        if len(names) != p:
            raise ValidationError(f"expected {p} variable names, got {len(names)}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("data matrix contains non-finite entries")
        variances = values.var(axis=0, ddof=1)
        dead = np.nonzero(variances <= VARIANCE_FLOOR)[0]
        if dead.size:
            listed = ", ".join(names[k] for k in dead)
            raise ValidationError(f"zero-variance column(s): {listed}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "variable_names", names)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ResponseVector:
    """A length-n numeric response."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if values.size == 0:
            raise ValidationError("response vector is empty")
        if not np.all(np.isfinite(values)):
            raise ValidationError("response vector contains non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def check_paired(self, X: DataMatrix) -> None:
        if self.n != X.n:
            raise ValidationError(f"response has {self.n} entries but data has {X.n} rows")


@dataclass(frozen=True)
class SimilarityMatrix:
    """Symmetric p x p matrix of absolute correlations, unit diagonal, entries in [0, 1]."""

    s: np.ndarray

    def __post_init__(self):
        s = np.array(self.s, dtype=float)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ValidationError("similarity matrix must be square")
        if s.shape[0] < 2:
            raise ValidationError("similarity matrix needs at least 2 variables")
        if not np.all(np.isfinite(s)):
            raise ValidationError("similarity matrix contains non-finite entries")
        if not np.array_equal(s, s.T):
            raise ValidationError("similarity matrix must be exactly symmetric")
        if not np.all(np.diag(s) == 1.0):
            raise ValidationError("similarity matrix diagonal must equal 1")
        if s.min() < 0.0 or s.max() > 1.0:
            raise ValidationError("similarity entries must lie in [0, 1]")
        s.setflags(write=False)
        object.__setattr__(self, "s", s)

    @property
    def p(self) -> int:
        return self.s.shape[0]


def _parse_cell(token: str, row_number: int, column_name: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ValidationError(
            f"row {row_number}, column {column_name!r}: non-numeric value {token!r}"
        ) from None
    if not np.isfinite(value):
        raise ValidationError(
            f"row {row_number}, column {column_name!r}: non-finite value {token!r}"
        )
    return value


def ingest_csv(path, has_header: bool = True) -> DataMatrix:
    """Read a rectangular numeric CSV (rows = samples, columns = variables).

    Column names come from the header row when present, otherwise they are
    generated as V1..Vp.
    """
    with open(path, newline="", encoding="utf-8-sig") as handle:
        rows = [row for row in csv.reader(handle) if row]
    if not rows:
        raise ValidationError(f"{path}: empty CSV file")

    if has_header:
        names = tuple(cell.strip() for cell in rows[0])
        data_rows = rows[1:]
        first_data_row = 2
    else:
        names = tuple(f"V{k + 1}" for k in range(len(rows[0])))
        data_rows = rows
        first_data_row = 1

    p = len(names)
    parsed = np.empty((len(data_rows), p), dtype=float)
    for r, row in enumerate(data_rows):
        row_number = first_data_row + r
        if len(row) != p:
            raise ValidationError(
                f"row {row_number}: expected {p} fields, got {len(row)} (ragged row)"
            )
        for c, token in enumerate(row):
            parsed[r, c] = _parse_cell(token.strip(), row_number, names[c])
    return DataMatrix(parsed, names)


def ingest_response_csv(path, has_header: bool = True) -> ResponseVector:
    """Read a single-column numeric CSV as a response vector."""
    with open(path, newline="", encoding="utf-8-sig") as handle:
        rows = [row for row in csv.reader(handle) if row]
    if not rows:
        raise ValidationError(f"{path}: empty CSV file")
    if has_header:
        name = rows[0][0].strip() if rows[0] else "y"
        data_rows = rows[1:]
        first_data_row = 2
    else:
        name = "y"
        data_rows = rows
        first_data_row = 1
    values = np.empty(len(data_rows), dtype=float)
    for r, row in enumerate(data_rows):
        row_number = first_data_row + r
        if len(row) != 1:
            raise ValidationError(f"row {row_number}: expected a single response field")
        values[r] = _parse_cell(row[0].strip(), row_number, name)
    return ResponseVector(values)


def covariance_matrix(X: DataMatrix) -> np.ndarray:
    """Unbiased sample covariance (divisor n - 1), exactly symmetric."""
    values = X.values
    centered = values - values.mean(axis=0)
    C = centered.T @ centered / (values.shape[0] - 1)
    # mirror the upper triangle so C[i, j] == C[j, i] bit for bit
    upper = np.triu(C)
    return upper + np.triu(C, 1).T


def correlation_similarity(X: DataMatrix) -> SimilarityMatrix:
    """Similarity s[i, j] = |Pearson correlation of columns i and j|, clamped to [0, 1]."""
    C = covariance_matrix(X)
    scale = np.sqrt(np.diag(C))
    s = np.abs(C) / np.outer(scale, scale)
    np.clip(s, 0.0, 1.0, out=s)
    upper = np.triu(s, 1)
    s = upper + upper.T
    np.fill_diagonal(s, 1.0)
    return SimilarityMatrix(s)


def matrix_values(X) -> np.ndarray:
    """Accept a DataMatrix or a plain 2-d array and return the ndarray view."""
    if isinstance(X, DataMatrix):
        return X.values
    values = np.asarray(X, dtype=float)
    if values.ndim != 2:
        raise ValidationError("expected a two-dimensional matrix")
    return values
