"""Multi-environment observational datasets.

A :class:`Dataset` is stored column-wise (numpy arrays) and is immutable once
built. Row-level access goes through :class:`Observation`.

CSV layout::

    env,x1,...,xd,t,y[,p_obs]

``p_obs`` is the behaviour-policy probability of the *observed* treatment.
"""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .exceptions import (
    DataError,
    IndexOutOfRange,
    MissingColumn,
    MissingPropensity,
    NonFiniteValue,
    PropensityOutOfRange,
    TreatmentOutOfRange,
)

BASELINE_TREATMENT = 0
PROPENSITY_CLIP = 1e-6

_X_COLUMN = re.compile(r"^x(\d+)$")


class Observation(NamedTuple):
    env: str
    x: np.ndarray
    t: int
    y: float
    p_obs: float | None


def as_subset(indices: Sequence[int] = (), d: int | None = None) -> tuple[int, ...]:
    """Normalise covariate indices (0-based) to a sorted tuple."""
    out = tuple(sorted(int(i) for i in indices))
    if len(set(out)) != len(out):
        raise DataError(f"duplicate covariate index in {indices!r}")
    if out and out[0] < 0:
        raise IndexOutOfRange(f"negative covariate index in {indices!r}")
    if d is not None and out and out[-1] >= d:
        raise IndexOutOfRange(f"covariate index {out[-1]} out of range for d={d}")
    return out


def complement(subset: Sequence[int], d: int) -> tuple[int, ...]:
    s = set(subset)
    return tuple(j for j in range(d) if j not in s)


def parse_subset(text: str, d: int | None = None) -> tuple[int, ...]:
    """Parse a 1-based comma list such as ``"1,3"`` (matching ``x1, x3``)."""
    text = text.strip().strip("{}")
    if not text:
        return ()
    return as_subset([int(tok) - 1 for tok in text.split(",") if tok.strip()], d)


def format_subset(subset: Sequence[int]) -> str:
    return "{" + ",".join(f"X{j + 1}" for j in subset) + "}"


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observations ``(env_i, x_i, t_i, y_i, p_obs_i)`` from several environments.

    ``env`` holds integer codes into ``env_labels``; labels are ordered by
    first appearance and the first one is the reference environment.
    """

    env: np.ndarray
    x: np.ndarray
    t: np.ndarray
    y: np.ndarray
    env_labels: tuple[str, ...]
    k: int = 2
    p_obs: np.ndarray | None = None
    propensity_source: str = "given"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        env = np.asarray(self.env, dtype=np.intp)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1) if x.size else x.reshape(len(env), 0)
        t = np.asarray(self.t, dtype=np.intp)
        y = np.asarray(self.y, dtype=float)
        n = len(env)
        if not (x.shape[0] == len(t) == len(y) == n):
            raise DataError("column lengths differ")
        if n == 0:
            raise DataError("empty dataset")
        bad = np.flatnonzero(~np.isfinite(x).all(axis=1) | ~np.isfinite(y))
        if bad.size:
            raise NonFiniteValue(int(bad[0]))
        bad = np.flatnonzero((t < 0) | (t >= self.k))
        if bad.size:
            raise TreatmentOutOfRange(int(bad[0]), int(t[bad[0]]))
        counts = np.bincount(env, minlength=len(self.env_labels))
        if env.min() < 0 or len(counts) != len(self.env_labels) or (counts == 0).any():
            raise DataError("every declared environment needs at least one row")
        arrays = dict(env=env, x=x, t=t, y=y)
        if self.p_obs is not None:
            p = np.asarray(self.p_obs, dtype=float)
            if p.shape != (n,):
                raise DataError("p_obs length differs")
            bad = np.flatnonzero(~np.isfinite(p) | (p <= 0.0) | (p > 1.0))
            if bad.size:
                raise PropensityOutOfRange(int(bad[0]), float(p[bad[0]]))
            arrays["p_obs"] = p
        for name, arr in arrays.items():
            arr = arr.copy() if arr is getattr(self, name) else arr
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "env_labels", tuple(str(e) for e in self.env_labels))

    @classmethod
    def from_arrays(cls, env, x, t, y, p_obs=None, k=None, **kwargs) -> "Dataset":
        """Build a dataset from raw label/array columns."""
        labels: dict[str, int] = {}
        codes = np.empty(len(env), dtype=np.intp)
        for i, e in enumerate(env):
            codes[i] = labels.setdefault(str(e), len(labels))
        t = np.asarray(t)
        if k is None:
            k = max(2, int(t.max()) + 1) if len(t) else 2
        return cls(codes, x, t, y, tuple(labels), k=k, p_obs=p_obs, **kwargs)

    # -- basic shape -------------------------------------------------------
    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def n_envs(self) -> int:
        return len(self.env_labels)

    def __len__(self) -> int:
        return self.n

    def env_counts(self) -> dict[str, int]:
        counts = np.bincount(self.env, minlength=self.n_envs)
        return dict(zip(self.env_labels, counts.tolist()))

    def env_names(self) -> np.ndarray:
        return np.asarray(self.env_labels, dtype=object)[self.env]

    def row(self, i: int) -> Observation:
        p = None if self.p_obs is None else float(self.p_obs[i])
        return Observation(self.env_labels[self.env[i]], self.x[i].copy(), int(self.t[i]), float(self.y[i]), p)

    def __iter__(self) -> Iterator[Observation]:
        return (self.row(i) for i in range(self.n))

    # -- derived views -----------------------------------------------------
    def take(self, idx) -> "Dataset":
        """Rows ``idx`` (mask or index array); unused environments are dropped."""
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        used = np.unique(self.env[idx])
        remap = np.full(self.n_envs, -1, dtype=np.intp)
        # keep first-appearance order of the original labels
        remap[used] = np.arange(len(used))
        return Dataset(
            remap[self.env[idx]],
            self.x[idx],
            self.t[idx],
            self.y[idx],
            tuple(self.env_labels[j] for j in used),
            k=self.k,
            p_obs=None if self.p_obs is None else self.p_obs[idx],
            propensity_source=self.propensity_source,
            meta=dict(self.meta),
        )

    def filter_envs(self, labels: Sequence[str]) -> "Dataset":
        wanted = {str(lab) for lab in labels}
        unknown = wanted - set(self.env_labels)
        if unknown:
            raise DataError(f"unknown environment(s) {sorted(unknown)}")
        codes = [j for j, lab in enumerate(self.env_labels) if lab in wanted]
        return self.take(np.isin(self.env, codes))

    def require_propensity(self) -> np.ndarray:
        if self.p_obs is None:
            raise MissingPropensity("dataset has no behaviour propensities")
        return self.p_obs

    def propensity_treated(self) -> np.ndarray:
        """Behaviour probability of ``t=1`` per row (binary data only)."""
        p = self.require_propensity()
        if self.k != 2:
            raise DataError("treated propensity is defined for binary treatments only")
        return np.where(self.t == 1, p, 1.0 - p)


def project_subset(ds_or_x, subset: Sequence[int]) -> np.ndarray:
    """Covariate columns ``subset`` (row order kept); empty subset gives ``n x 0``."""
    x = ds_or_x.x if isinstance(ds_or_x, Dataset) else np.atleast_2d(np.asarray(ds_or_x, dtype=float))
    subset = tuple(subset)
    d = x.shape[1]
    for j in subset:
        if j < 0 or j >= d:
            raise IndexOutOfRange(f"covariate index {j} out of range for d={d}")
    return x[:, list(subset)]


# -- CSV ---------------------------------------------------------------------

def _finite(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise NonFiniteValue(row, column) from None
    if not math.isfinite(value):
        raise NonFiniteValue(row, column)
    return value


def ingest_csv(path, schema: dict | None = None, behavior_mode: str = "given", k: int | None = None) -> Dataset:
    """Read and validate a dataset CSV.

    ``schema`` optionally renames columns, e.g. ``{"env": "user", "x": ["a", "b"]}``.
    With ``behavior_mode="fit_logistic"`` the ``p_obs`` column must be absent
    and propensities are filled in from a pooled logistic fit of ``t`` on
    ``(1, x)``. Error row numbers are 0-based data rows.
    """
    if behavior_mode not in ("given", "fit_logistic"):
        raise ValueError(f"unknown behavior_mode {behavior_mode!r}")
    schema = dict(schema or {})
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MissingColumn("empty file") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]

    env_col = schema.get("env", "env")
    t_col = schema.get("t", "t")
    y_col = schema.get("y", "y")
    p_col = schema.get("p_obs", "p_obs")
    if "x" in schema:
        x_cols = list(schema["x"])
    else:
        found = [(int(m.group(1)), h) for h in header if (m := _X_COLUMN.match(h))]
        x_cols = [h for _, h in sorted(found)]
    needed = [env_col, *x_cols, t_col, y_col]
    if behavior_mode == "given":
        needed.append(p_col)
    elif p_col in header:
        raise DataError("p_obs column present but behavior_mode='fit_logistic'")
    missing = [c for c in needed if c not in header]
    if missing:
        raise MissingColumn(f"missing column(s): {', '.join(missing)}")
    pos = {h: i for i, h in enumerate(header)}

    n = len(rows)
    env = []
    x = np.empty((n, len(x_cols)))
    t = np.empty(n, dtype=np.intp)
    y = np.empty(n)
    p = np.empty(n) if behavior_mode == "given" else None
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise DataError(f"row {i} has {len(r)} fields, expected {len(header)}")
        env.append(r[pos[env_col]].strip())
        for j, c in enumerate(x_cols):
            x[i, j] = _finite(r[pos[c]], i, c)
        t_raw = r[pos[t_col]].strip()
        try:
            t_val = float(t_raw)
        except ValueError:
            raise TreatmentOutOfRange(i, t_raw) from None
        if not t_val.is_integer() or t_val < 0 or (k is not None and t_val >= k):
            raise TreatmentOutOfRange(i, t_raw)
        t[i] = int(t_val)
        y[i] = _finite(r[pos[y_col]], i, y_col)
        if p is not None:
            value = _finite(r[pos[p_col]], i, p_col)
            if not 0.0 < value <= 1.0:
                raise PropensityOutOfRange(i, value)
            p[i] = value

    if behavior_mode == "fit_logistic":
        p = fit_behavior_propensity(x, t)
        source = "fitted"
    else:
        source = "given"
    return Dataset.from_arrays(env, x, t, y, p_obs=p, k=k, propensity_source=source)


def fit_behavior_propensity(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Pooled logistic fit of binary ``t`` on ``(1, x)``; returns p of observed t."""
    from .stats import logistic_fit, sigmoid

    t = np.asarray(t)
    if t.max() > 1:
        raise DataError("fit_logistic behaviour mode supports binary treatments only")
    design = np.column_stack([np.ones(len(t)), x])
    coef = logistic_fit(design, t)
    p1 = np.clip(sigmoid(design @ coef), PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP)
    return np.where(t == 1, p1, 1.0 - p1)


def export_csv(ds: Dataset, path) -> Path:
    """Write ``ds`` in the ingestion format (17 significant digits, round-trip exact)."""
    path = Path(path)
    header = ["env", *(f"x{j + 1}" for j in range(ds.d)), "t", "y"]
    if ds.p_obs is not None:
        header.append("p_obs")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(ds.n):
            rec = [ds.env_labels[ds.env[i]], *(format(v, ".17g") for v in ds.x[i]), str(int(ds.t[i])), format(ds.y[i], ".17g")]
            if ds.p_obs is not None:
                rec.append(format(ds.p_obs[i], ".17g"))
            w.writerow(rec)
    return path


def read_covariates(path) -> np.ndarray:
    """Covariate matrix from a CSV with ``x1..xd`` columns (other columns ignored)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        found = sorted((int(m.group(1)), i) for i, h in enumerate(header) if (m := _X_COLUMN.match(h)))
        if not found:
            raise MissingColumn("no x1..xd columns")
        cols = [i for _, i in found]
        out = [[_finite(r[c], row, header[c]) for c in cols] for row, r in enumerate(reader) if r]
    return np.asarray(out, dtype=float).reshape(-1, len(cols))
