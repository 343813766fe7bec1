"""Model terms and design matrices.

Only four term shapes exist: an intercept, a main effect, a square and a
product of two distinct variables. Terms are written the R way, e.g.
``"(Intercept)"``, ``"L2"``, ``"L2^2"``, ``"A:L1"``.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..errors import ConfigError, MissingDataError, SchemaError

VAR_PATTERN = re.compile(r"^(L[1-9][0-9]*|A|Y)$")

INTERCEPT = "intercept"
MAIN = "main"
SQUARE = "square"
INTERACTION = "interaction"


@dataclass(frozen=True, order=True)
class TermSpec:
    kind: str
    vars: tuple[str, ...] = ()

    def __post_init__(self):
        expected = {INTERCEPT: 0, MAIN: 1, SQUARE: 1, INTERACTION: 2}
        if self.kind not in expected:
            raise ConfigError(f"unknown term kind {self.kind!r}")
        if len(self.vars) != expected[self.kind]:
            raise ConfigError(f"{self.kind} term needs {expected[self.kind]} variable(s)")
        for v in self.vars:
            if not VAR_PATTERN.match(v):
                raise ConfigError(f"illegal variable name {v!r} in term")
        if self.kind == INTERACTION and self.vars[0] == self.vars[1]:
            raise ConfigError("interaction variables must be distinct; use a square term")

    @property
    def name(self) -> str:
        if self.kind == INTERCEPT:
            return "(Intercept)"
        if self.kind == MAIN:
            return self.vars[0]
        if self.kind == SQUARE:
            return f"{self.vars[0]}^2"
        return f"{self.vars[0]}:{self.vars[1]}"

    def __str__(self):
        return self.name

    def evaluate(self, env: Mapping[str, np.ndarray]):
        """Value of the term, broadcast over whatever shapes ``env`` holds."""
        if self.kind == INTERCEPT:
            return 1.0
        vals = [_lookup(env, v) for v in self.vars]
        if self.kind == MAIN:
            return vals[0]
        if self.kind == SQUARE:
            return vals[0] * vals[0]
        return vals[0] * vals[1]


def _lookup(env, var):
    try:
        return env[var]
    except KeyError:
        raise SchemaError(f"variable {var!r} is not available") from None


def parse_term(text: str) -> TermSpec:
    s = text.strip().replace(" ", "")
    if s in ("(Intercept)", "1", "Intercept"):
        return TermSpec(INTERCEPT)
    if s.endswith("^2"):
        return TermSpec(SQUARE, (s[:-2],))
    for sep in (":", "*", "\u00d7"):
        if sep in s:
            left, right = s.split(sep, 1)
            return TermSpec(INTERACTION, (left, right))
    if not VAR_PATTERN.match(s):
        raise ConfigError(f"cannot parse term {text!r}")
    return TermSpec(MAIN, (s,))


def as_terms(terms: Iterable[TermSpec | str]) -> tuple[TermSpec, ...]:
    out = tuple(t if isinstance(t, TermSpec) else parse_term(t) for t in terms)
    if sum(t.kind == INTERCEPT for t in out) > 1:
        raise ConfigError("term list contains more than one intercept")
    if len(set(out)) != len(out):
        raise ConfigError("duplicate terms in term list")
    return out


def term_vars(terms: Iterable[TermSpec]) -> set[str]:
    return {v for t in terms for v in t.vars}


def main_terms(names: Sequence[str], intercept: bool = True) -> tuple[TermSpec, ...]:
    head = (TermSpec(INTERCEPT),) if intercept else ()
    return head + tuple(TermSpec(MAIN, (v,)) for v in names)


def pairwise_terms(names: Sequence[str], intercept: bool = True) -> tuple[TermSpec, ...]:
    """Main effects plus every product of two distinct variables."""
    pairs = tuple(TermSpec(INTERACTION, (a, b)) for a, b in itertools.combinations(names, 2))
    return main_terms(names, intercept) + pairs


def _columns(records) -> Mapping[str, np.ndarray]:
    if isinstance(records, Mapping):
        return records
    cols = getattr(records, "columns", None)
    if isinstance(cols, Mapping):
        return cols
    records = list(records)
    keys = set().union(*(r.keys() for r in records)) if records else set()
    return {k: np.array([r.get(k, np.nan) for r in records], dtype=float) for k in keys}


def build_design(terms: Sequence[TermSpec | str], records) -> np.ndarray:
    """Design matrix with one row per record and one column per term.

    ``records`` is a column mapping (name -> 1-d array), a
    :class:`~ccmar.data.CoarsenedData`, or an iterable of per-record dicts.
    """
    terms = as_terms(terms)
    cols = _columns(records)
    n = None
    for v in term_vars(terms):
        arr = np.asarray(_lookup(cols, v), dtype=float)
        if arr.ndim != 1:
            raise SchemaError(f"column {v!r} must be one-dimensional")
        if n is None:
            n = arr.shape[0]
        elif arr.shape[0] != n:
            raise SchemaError("columns have different lengths")
        if np.isnan(arr).any():
            raise MissingDataError(f"variable {v!r} is missing for {int(np.isnan(arr).sum())} row(s)")
    if n is None:
        n = len(next(iter(cols.values()))) if cols else 0
    X = np.empty((n, len(terms)))
    for j, t in enumerate(terms):
        X[:, j] = t.evaluate({v: np.asarray(cols[v], dtype=float) for v in t.vars})
    return X


def linear_predictor(terms: Sequence[TermSpec], coef: np.ndarray, env: Mapping[str, np.ndarray]):
    """Sum of coef * term over ``env`` using numpy broadcasting.

    Cheaper than building a design when the inputs live on a quadrature grid.
    """
    out = 0.0
    for c, t in zip(coef, terms):
        if c == 0.0:
            continue
        out = out + c * t.evaluate(env)
    return np.asarray(out, dtype=float)
