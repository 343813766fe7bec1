"""Column store for coarsened observations (L_c, A, Y, S, S * L_p)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DomainError, SchemaError


@dataclass(frozen=True)
class CoarsenedData:
    """One row per subject; partially missing confounders are NaN when ``S == 0``.

    ``columns`` maps variable names (``L1``.., ``A``, ``Y``, ``S``) to
    one-dimensional float arrays. Arrays are copied and frozen on
    construction, and L_p values of incomplete rows are masked so nothing
    downstream can peek at them.
    """

    columns: Mapping[str, np.ndarray]
    lc_names: tuple[str, ...]
    lp_names: tuple[str, ...]
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        cols = {}
        for k, v in self.columns.items():
            arr = np.array(v, dtype=float)
            if arr.ndim != 1:
                raise SchemaError(f"column {k!r} must be one-dimensional")
            cols[k] = arr
        for k in ("A", "Y", "S", *self.lc_names, *self.lp_names):
            if k not in cols:
                raise SchemaError(f"column {k!r} is required")
        n = cols["A"].shape[0]
        if any(c.shape[0] != n for c in cols.values()):
            raise SchemaError("columns have different lengths")
        for k in ("A", "S"):
            if not np.all((cols[k] == 0) | (cols[k] == 1)):
                raise DomainError(f"{k} must be 0/1")
        for k in ("Y", *self.lc_names):
            if not np.all(np.isfinite(cols[k])):
                raise DomainError(f"{k} must be fully observed")
        cc = cols["S"] == 1
        for k in self.lp_names:
            if np.isnan(cols[k][cc]).any():
                raise DomainError(f"complete cases must carry {k}")
            cols[k][~cc] = np.nan
        for arr in cols.values():
            arr.setflags(write=False)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "lc_names", tuple(self.lc_names))
        object.__setattr__(self, "lp_names", tuple(self.lp_names))

    def __len__(self):
        return self.columns["A"].shape[0]

    @property
    def n(self) -> int:
        return len(self)

    @property
    def a(self) -> np.ndarray:
        return self.columns["A"]

    @property
    def y(self) -> np.ndarray:
        return self.columns["Y"]

    @property
    def s(self) -> np.ndarray:
        return self.columns["S"]

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise SchemaError(f"variable {name!r} is not in the data") from None

    def lc(self) -> dict[str, np.ndarray]:
        return {k: self.columns[k] for k in self.lc_names}

    def lp(self) -> dict[str, np.ndarray]:
        return {k: self.columns[k] for k in self.lp_names}

    def take(self, idx) -> "CoarsenedData":
        idx = np.asarray(idx)
        return CoarsenedData({k: v[idx] for k, v in self.columns.items()},
                             self.lc_names, self.lp_names, dict(self.meta))

    def complete_cases(self) -> "CoarsenedData":
        return self.take(np.flatnonzero(self.s == 1))

    def with_columns(self, **updates: np.ndarray) -> "CoarsenedData":
        cols = dict(self.columns)
        cols.update(updates)
        return CoarsenedData(cols, self.lc_names, self.lp_names, dict(self.meta))

    def records(self) -> list[dict[str, float]]:
        keys = list(self.columns)
        return [{k: float(self.columns[k][i]) for k in keys} for i in range(self.n)]

    def canonical_order(self) -> np.ndarray:
        """Row order that depends only on row contents, not on storage order."""
        keys = [np.nan_to_num(self.columns[k], nan=-np.inf) for k in sorted(self.columns)]
        return np.lexsort(keys[::-1])

    @classmethod
    def from_records(cls, records: Iterable[Mapping[str, float]], lc_names: Sequence[str],
                     lp_names: Sequence[str]) -> "CoarsenedData":
        records = list(records)
        keys = ["A", "Y", "S", *lc_names, *lp_names]
        cols = {k: np.array([r.get(k, np.nan) for r in records], dtype=float) for k in keys}
        return cls(cols, tuple(lc_names), tuple(lp_names))


def concat(parts: Sequence[CoarsenedData]) -> CoarsenedData:
    first = parts[0]
    cols = {k: np.concatenate([p.columns[k] for p in parts]) for k in first.columns}
    return CoarsenedData(cols, first.lc_names, first.lp_names, dict(first.meta))
