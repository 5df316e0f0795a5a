import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from j2r.dataset import (DataError, Schema, TrialDataset, dropout_time, history, history_matrix, load_csv,
                         strata_dummies, write_csv)

from conftest import random_dataset


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_four_row_file_parses_by_hand(tmp_path):
    p = _write(tmp_path, "A,X1,Y1\n1,0.1,3\n1,-0.2,\n0,0.3,1\n0,0.0,2\n")
    ds = load_csv(p, Schema("A", ["X1"], ["Y1"]))
    assert (ds.n, ds.t) == (4, 1)
    assert ds.response[:, 0].tolist() == [1, 0, 1, 1]
    assert ds.treatment.tolist() == [1, 1, 0, 0]
    assert ds.covariates[:, 0].tolist() == [0.1, -0.2, 0.3, 0.0]


def test_non_monotone_row_is_named(tmp_path):
    p = _write(tmp_path, "A,X1,Y1,Y2\n1,0,1,2\n0,1,,5\n1,2,1,\n")
    with pytest.raises(DataError, match="row 3"):
        load_csv(p, Schema("A", ["X1"], ["Y1", "Y2"]))


def test_drop_invalid_is_explicit(tmp_path):
    p = _write(tmp_path, "A,X1,Y1,Y2,site\n1,0,1,2,a\n0,1,,5,a\n1,2,1,,\n0,3,4,4,b\n")
    ds = load_csv(p, Schema("A", ["X1"], ["Y1", "Y2"], strata="site"), drop_invalid=True)
    assert ds.n == 2
    assert len(ds.diagnostics) == 2


def test_complete_data_dropout_is_t_plus_one(tmp_path):
    p = _write(tmp_path, "A,X1,Y1,Y2\n1,0,1,2\n0,1,3,5\n")
    ds = load_csv(p, Schema("A", ["X1"], ["Y1", "Y2"]))
    assert np.all(ds.response == 1)
    assert dropout_time(ds).tolist() == [3, 3]


def test_parse_errors_carry_location(tmp_path):
    p = _write(tmp_path, "A,X1,Y1\n1,abc,3\n")
    with pytest.raises(DataError, match="row 2.*X1"):
        load_csv(p, Schema("A", ["X1"], ["Y1"]))
    with pytest.raises(DataError, match="columns not found"):
        load_csv(p, Schema("A", ["X2"], ["Y1"]))
    with pytest.raises(DataError, match="0/1"):
        load_csv(_write(tmp_path, "A,X1,Y1\n2,0,3\n", "b.csv"), Schema("A", ["X1"], ["Y1"]))


def test_missing_token_and_delimiter(tmp_path):
    p = _write(tmp_path, "A;X1;Y1;Y2\n1;0;1;NA\n0;1;NA;NA\n")
    ds = load_csv(p, Schema("A", ["X1"], ["Y1", "Y2"], missing=("NA",), delimiter=";"))
    assert ds.response.tolist() == [[1, 0], [0, 0]]


@pytest.mark.parametrize("r,d", [((1, 1, 1), 4), ((0, 0, 0), 1), ((1, 1, 0), 3)])
def test_dropout_time(r, d):
    y = np.where(np.array(r) == 1, 1.0, np.nan)[None, :]
    ds = TrialDataset(covariates=[[0.0]], treatment=[1], outcomes=y)
    assert dropout_time(ds)[0] == d


def test_history_matrix_examples(toy4):
    h, rows = history_matrix(toy4, 1)
    np.testing.assert_array_equal(h, toy4.covariates)
    y = np.array([[3.0, 1.0], [np.nan, np.nan], [1.0, 2.0], [2.0, np.nan]])
    ds = TrialDataset(covariates=toy4.covariates, treatment=toy4.treatment, outcomes=y)
    h, rows = history_matrix(ds, 2, lambda a, r: (a == 0) & (r[:, 1] == 1))
    assert rows.tolist() == [2, 3]
    np.testing.assert_array_equal(h, [[0.3, 1.0], [0.0, 2.0]])
    h, rows = history_matrix(ds, 2, np.zeros(4, dtype=bool))
    assert h.shape == (0, 2)


def test_history_of_unobserved_subject_fails():
    ds = TrialDataset(covariates=[[0.0], [1.0]], treatment=[0, 1], outcomes=[[1.0, 2.0], [np.nan, np.nan]])
    with pytest.raises(ValueError):
        history(ds, 1, 2)
    with pytest.raises(RuntimeError):
        history_matrix(ds, 2)
    np.testing.assert_array_equal(history(ds, 0, 2), [0.0, 1.0])


def test_strata_first_level_is_reference():
    d = strata_dummies(np.array(["b", "a", "c", "a"]))
    np.testing.assert_array_equal(d, [[1, 0], [0, 0], [0, 1], [0, 0]])


def test_dataset_is_immutable(toy4):
    with pytest.raises(ValueError):
        toy4.outcomes[0, 0] = 5.0


def test_empty_and_invalid_construction():
    with pytest.raises(DataError):
        TrialDataset(covariates=np.empty((0, 1)), treatment=[], outcomes=np.empty((0, 1)))
    with pytest.raises(DataError, match="non-monotone"):
        TrialDataset(covariates=[[0.0]], treatment=[1], outcomes=[[np.nan, 1.0]])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4), st.booleans())
def test_round_trip_is_bitwise(tmp_path_factory, seed, t, with_strata):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, n=15, t=t)
    if with_strata:
        ds = TrialDataset(covariates=ds.covariates, treatment=ds.treatment, outcomes=ds.outcomes,
                          strata=rng.choice(["s1", "s2", "s3"], size=ds.n))
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    schema = write_csv(ds, path)
    back = load_csv(path, schema)
    assert back.covariates.tobytes() == ds.covariates.tobytes()
    assert back.outcomes.tobytes() == ds.outcomes.tobytes()
    assert np.array_equal(back.treatment, ds.treatment)
    if with_strata:
        assert np.array_equal(back.strata, ds.strata)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_dropout_is_unique_switch_point(seed):
    ds = random_dataset(np.random.default_rng(seed), n=20, t=3)
    r = np.column_stack([np.ones(ds.n), ds.response, np.zeros(ds.n)])
    d = dropout_time(ds)
    for i in range(ds.n):
        switches = [s for s in range(1, ds.t + 2) if r[i, s - 1] == 1 and r[i, s] == 0]
        assert switches == [d[i]]
