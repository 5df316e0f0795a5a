"""Observed-data container for trials with monotone dropout.

A subject contributes baseline covariates ``X``, a binary treatment ``A`` and
outcomes ``Y_1..Y_t`` that are observed up to the dropout time and absent
afterwards.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed input data (parse errors, invalid patterns)."""


@dataclass(frozen=True)
class Schema:
    treatment: str
    covariates: Sequence[str]
    outcomes: Sequence[str]
    strata: str | None = None
    missing: Sequence[str] = ("",)
    delimiter: str = ","

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        missing = d.get("missing", [""])
        if isinstance(missing, str):
            missing = [missing]
        return cls(
            treatment=d["treatment"],
            covariates=list(d["covariates"]),
            outcomes=list(d["outcomes"]),
            strata=d.get("strata"),
            missing=tuple(missing),
            delimiter=d.get("delimiter", ","),
        )


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TrialDataset:
    """Immutable subject-level table.

    ``outcomes`` holds NaN wherever the outcome is absent; the response matrix
    is derived from it.
    """

    covariates: np.ndarray
    treatment: np.ndarray
    outcomes: np.ndarray
    strata: np.ndarray | None = None
    covariate_names: tuple[str, ...] = ()
    outcome_names: tuple[str, ...] = ()
    diagnostics: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        x = np.asarray(self.covariates, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(self.outcomes, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        a = np.asarray(self.treatment)
        n = x.shape[0]
        if n == 0:
            raise DataError("empty dataset")
        if a.shape != (n,) or y.shape[0] != n:
            raise DataError("covariates, treatment and outcomes must have the same row count")
        if x.shape[1] < 1 or y.shape[1] < 1:
            raise DataError("need at least one covariate and one outcome column")
        if not np.all(np.isfinite(x)):
            raise DataError("covariates must be finite and fully observed")
        if not np.all((a == 0) | (a == 1)):
            raise DataError("treatment values must be 0 or 1")
        if np.any(np.isinf(y)):
            raise DataError("outcomes must be finite where present")
        r = ~np.isnan(y)
        bad = np.argwhere(~r[:, :-1] & r[:, 1:])
        if len(bad):
            pairs = ", ".join(f"(subject {i}, time {s + 2})" for i, s in bad[:20])
            raise DataError(f"non-monotone missingness: outcome present after dropout at {pairs}")
        object.__setattr__(self, "covariates", _frozen(x))
        object.__setattr__(self, "treatment", _frozen(a.astype(np.int64)))
        object.__setattr__(self, "outcomes", _frozen(y))
        if self.strata is not None:
            st = np.asarray(self.strata).astype(str)
            if st.shape != (n,):
                raise DataError("strata must have one entry per subject")
            object.__setattr__(self, "strata", _frozen(st))
        if not self.covariate_names:
            object.__setattr__(self, "covariate_names", tuple(f"X{j + 1}" for j in range(x.shape[1])))
        if not self.outcome_names:
            object.__setattr__(self, "outcome_names", tuple(f"Y{s + 1}" for s in range(y.shape[1])))

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def t(self) -> int:
        return self.outcomes.shape[1]

    @property
    def p(self) -> int:
        """Width of the baseline block (covariates plus strata dummies)."""
        return self.baseline.shape[1]

    @property
    def response(self) -> np.ndarray:
        return (~np.isnan(self.outcomes)).astype(np.int64)

    @property
    def response_full(self) -> np.ndarray:
        """Response indicators R_0..R_t, with R_0 = 1."""
        return np.column_stack([np.ones(self.n, dtype=np.int64), self.response])

    @property
    def baseline(self) -> np.ndarray:
        if self.strata is None:
            return self.covariates
        return np.column_stack([self.covariates, strata_dummies(self.strata)])

    def subset(self, rows: np.ndarray) -> "TrialDataset":
        """Rows in the given order (duplicates allowed, as in bootstrap resamples)."""
        rows = np.asarray(rows)
        return TrialDataset(
            covariates=self.covariates[rows],
            treatment=self.treatment[rows],
            outcomes=self.outcomes[rows],
            strata=None if self.strata is None else self.strata[rows],
            covariate_names=self.covariate_names,
            outcome_names=self.outcome_names,
        )


def strata_dummies(strata: np.ndarray) -> np.ndarray:
    """One-hot encoding with the first (sorted) level as reference."""
    levels = np.unique(strata)
    return np.column_stack([(strata == lv).astype(float) for lv in levels[1:]]) if len(levels) > 1 \
        else np.empty((len(strata), 0))


def dropout_time(ds: TrialDataset) -> np.ndarray:
    """D_i = 1 + sum_s R_{i,s}; completers get t + 1."""
    return 1 + ds.response.sum(axis=1)


def history_matrix(
    ds: TrialDataset,
    s: int,
    where: np.ndarray | Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Rows H_{s-1} = (X, Y_1..Y_{s-1}) for the selected subjects.

    ``where`` is a boolean mask or a predicate ``f(A, R_full) -> mask`` where
    ``R_full`` has columns R_0..R_t. Returns the matrix and the subject indices.
    """
    if not 1 <= s <= ds.t:
        raise ValueError(f"time index s={s} outside 1..{ds.t}")
    if where is None:
        mask = np.ones(ds.n, dtype=bool)
    elif callable(where):
        mask = np.asarray(where(ds.treatment, ds.response_full), dtype=bool)
    else:
        mask = np.asarray(where, dtype=bool)
    rows = np.flatnonzero(mask)
    if s > 1 and np.any(ds.response[rows, s - 2] == 0):
        raise RuntimeError(f"history H_{s - 1} requested for subjects not observed at time {s - 1}")
    h = np.column_stack([ds.baseline[rows], ds.outcomes[rows, : s - 1]])
    return h, rows


def history(ds: TrialDataset, i: int, s: int) -> np.ndarray:
    """Single-subject history H_{s-1}; defined only when R_{i,s-1} = 1."""
    if s > 1 and ds.response[i, s - 2] == 0:
        raise ValueError(f"subject {i} is not observed at time {s - 1}")
    return np.concatenate([ds.baseline[i], ds.outcomes[i, : s - 1]])


def _parse_float(tok: str, row: int, col: str) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise DataError(f"row {row}, column {col!r}: cannot parse {tok!r} as a number") from None
    if not math.isfinite(v):
        raise DataError(f"row {row}, column {col!r}: non-finite value {tok!r}")
    return v


def load_csv(path: str | Path, schema: Schema, drop_invalid: bool = False) -> TrialDataset:
    """Read a wide-format CSV (one row per subject).

    With ``drop_invalid`` rows having absent covariates/treatment/strata or a
    non-monotone outcome pattern are removed and listed in ``diagnostics``;
    otherwise they raise :class:`DataError`.
    """
    path = Path(path)
    missing = set(schema.missing)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        needed = [schema.treatment, *schema.covariates, *schema.outcomes]
        if schema.strata:
            needed.append(schema.strata)
        absent = [c for c in needed if c not in header]
        if absent:
            raise DataError(f"{path}: columns not found: {absent}")
        idx = {c: header.index(c) for c in needed}
        xs, as_, ys, sts, problems, dropped = [], [], [], [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) < len(header):
                raise DataError(f"row {lineno}: expected {len(header)} fields, got {len(rec)}")
            cell = {c: rec[idx[c]].strip() for c in needed}
            issue = None
            miss_base = [c for c in [schema.treatment, *schema.covariates] if cell[c] in missing]
            if schema.strata and cell[schema.strata] in missing:
                miss_base.append(schema.strata)
            if miss_base:
                issue = f"row {lineno}: absent value in {miss_base}"
            else:
                a = _parse_float(cell[schema.treatment], lineno, schema.treatment)
                if a not in (0.0, 1.0):
                    raise DataError(f"row {lineno}, column {schema.treatment!r}: treatment must be 0/1, got {a}")
                y = [np.nan if cell[c] in missing else _parse_float(cell[c], lineno, c) for c in schema.outcomes]
                obs = ~np.isnan(y)
                if np.any(~obs[:-1] & obs[1:]):
                    issue = f"row {lineno}: non-monotone missingness in outcomes"
            if issue:
                if drop_invalid:
                    dropped.append(issue)
                    continue
                problems.append(issue)
                continue
            xs.append([_parse_float(cell[c], lineno, c) for c in schema.covariates])
            as_.append(int(a))
            ys.append(y)
            if schema.strata:
                sts.append(cell[schema.strata])
        if problems:
            raise DataError("invalid rows:\n  " + "\n  ".join(problems))
        if not xs:
            raise DataError(f"{path}: no usable rows")
    return TrialDataset(
        covariates=np.array(xs, dtype=float),
        treatment=np.array(as_),
        outcomes=np.array(ys, dtype=float),
        strata=np.array(sts) if schema.strata else None,
        covariate_names=tuple(schema.covariates),
        outcome_names=tuple(schema.outcomes),
        diagnostics=tuple(f"dropped {d}" for d in dropped),
    )


def write_csv(ds: TrialDataset, path: str | Path, treatment: str = "A", strata: str = "site") -> Schema:
    """Write a dataset in the format :func:`load_csv` reads; returns the schema."""
    path = Path(path)
    cols = [treatment, *ds.covariate_names, *ds.outcome_names]
    if ds.strata is not None:
        cols.append(strata)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for i in range(ds.n):
            row = [str(int(ds.treatment[i]))]
            row += [repr(float(v)) for v in ds.covariates[i]]
            row += ["" if np.isnan(v) else repr(float(v)) for v in ds.outcomes[i]]
            if ds.strata is not None:
                row.append(str(ds.strata[i]))
            w.writerow(row)
    return Schema(treatment=treatment, covariates=list(ds.covariate_names), outcomes=list(ds.outcome_names),
                  strata=strata if ds.strata is not None else None)
