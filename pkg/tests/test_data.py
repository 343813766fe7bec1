import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccmar.data import CoarsenedData, concat
from ccmar.errors import DomainError, SchemaError


def _cols(n=4):
    return {"L1": np.arange(n, dtype=float), "A": np.array([0, 1] * (n // 2), dtype=float),
            "Y": np.linspace(0, 1, n), "S": np.array([1, 0] * (n // 2), dtype=float),
            "L4": np.arange(n, dtype=float) + 10}


def test_incomplete_rows_are_masked():
    d = CoarsenedData(_cols(), ("L1",), ("L4",))
    assert np.all(np.isnan(d["L4"][d.s == 0]))
    np.testing.assert_array_equal(d["L4"][d.s == 1], [10, 12])
    with pytest.raises(ValueError):
        d["A"][0] = 5.0


def test_input_arrays_are_copied():
    cols = _cols()
    d = CoarsenedData(cols, ("L1",), ("L4",))
    cols["Y"][0] = 99
    assert d.y[0] == 0


@pytest.mark.parametrize("mutate,err", [
    (lambda c: c.pop("Y"), SchemaError),
    (lambda c: c.update(A=np.array([0, 1, 2, 0.0])), DomainError),
    (lambda c: c.update(S=np.array([1, 0.5, 1, 0])), DomainError),
    (lambda c: c.update(L1=np.array([0, np.nan, 1, 1])), DomainError),
    (lambda c: c.update(L4=np.array([np.nan, 1, 2, 3])), DomainError),
    (lambda c: c.update(Y=np.zeros(3)), SchemaError),
    (lambda c: c.update(Y=np.zeros((4, 1))), SchemaError),
])
def test_validation(mutate, err):
    cols = _cols()
    mutate(cols)
    with pytest.raises(err):
        CoarsenedData(cols, ("L1",), ("L4",))


def test_unknown_variable_is_a_schema_error():
    with pytest.raises(SchemaError):
        CoarsenedData(_cols(), ("L1",), ("L4",))["L9"]


def test_take_complete_cases_and_concat():
    d = CoarsenedData(_cols(6), ("L1",), ("L4",))
    cc = d.complete_cases()
    assert cc.n == 3 and np.all(cc.s == 1)
    both = concat([d.take([0, 1]), d.take([2, 3, 4, 5])])
    for k in d.columns:
        np.testing.assert_array_equal(both[k], d[k])


def test_records_round_trip():
    d = CoarsenedData(_cols(), ("L1",), ("L4",))
    back = CoarsenedData.from_records(d.records(), ("L1",), ("L4",))
    for k in d.columns:
        np.testing.assert_array_equal(back[k], d[k])


@settings(max_examples=25)
@given(st.integers(4, 30).flatmap(lambda n: st.tuples(st.just(n), st.permutations(list(range(n))))))
def test_canonical_order_ignores_storage_order(arg):
    n, perm = arg
    rng = np.random.default_rng(n)
    cols = {"L1": rng.integers(0, 2, n).astype(float), "A": rng.integers(0, 2, n).astype(float),
            "Y": rng.integers(0, 3, n).astype(float), "S": rng.integers(0, 2, n).astype(float),
            "L4": rng.random(n)}
    d = CoarsenedData(cols, ("L1",), ("L4",))
    p = d.take(np.array(perm))
    a, b = d.take(d.canonical_order()), p.take(p.canonical_order())
    for k in d.columns:
        np.testing.assert_array_equal(a[k], b[k])
