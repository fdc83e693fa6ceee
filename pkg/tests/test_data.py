import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qinireg import (
    DataValidationError,
    RandomSeed,
    UpliftCoefficients,
    UpliftDataset,
    load_csv,
    predict_prob,
    predict_uplift,
    save_csv,
    uplift_scores,
)

from conftest import random_dataset


def write_csv(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_csv_happy_path(tmp_path):
    f = write_csv(tmp_path / "d.csv", "a,t,b,y\n1.0,1,2.0,1\n3,0,4,0\n5,1,6,1\n7,0,8,0\n")
    ds = load_csv(f, "t", "y")
    assert ds.n == 4 and ds.p == 2
    assert ds.feature_names == ("a", "b")
    assert np.array_equal(ds.treatment, [1, 0, 1, 0])
    assert np.array_equal(ds.features[:, 1], [2.0, 4.0, 6.0, 8.0])


def test_load_csv_non_binary_treatment(tmp_path):
    f = write_csv(tmp_path / "d.csv", "t,y,x\n1,1,0.5\n2,0,0.1\n0,1,0.2\n")
    with pytest.raises(DataValidationError, match="non-binary treatment at row 3"):
        load_csv(f, "t", "y")


def test_load_csv_empty_control_arm(tmp_path):
    f = write_csv(tmp_path / "d.csv", "t,y,x\n1,1,0.5\n1,0,0.1\n")
    with pytest.raises(DataValidationError, match="empty control arm"):
        load_csv(f, "t", "y")


def test_load_csv_missing_column(tmp_path):
    f = write_csv(tmp_path / "d.csv", "t,x\n1,0.5\n0,0.1\n")
    with pytest.raises(DataValidationError, match="missing column 'y'"):
        load_csv(f, "t", "y")


def test_load_csv_unparseable_cell(tmp_path):
    f = write_csv(tmp_path / "d.csv", "t,y,x\n1,1,0.5\n0,0,oops\n")
    with pytest.raises(DataValidationError, match="row 3.*column 'x'"):
        load_csv(f, "t", "y")


def test_csv_round_trip(tmp_path):
    ds = random_dataset(40, 3, seed=5)
    path = tmp_path / "out.csv"
    save_csv(ds, path, "t", "y")
    again = load_csv(path, "t", "y")
    assert ds.equals(again)
    save_csv(again, tmp_path / "out2.csv", "t", "y")
    assert (tmp_path / "out.csv").read_bytes() == (tmp_path / "out2.csv").read_bytes()


def test_dataset_invariants():
    with pytest.raises(DataValidationError, match="at least 2"):
        UpliftDataset(np.zeros((1, 1)), [1], [0], ("a",))
    with pytest.raises(DataValidationError, match="empty treated arm"):
        UpliftDataset(np.zeros((3, 1)), [0, 0, 0], [0, 1, 0], ("a",))
    with pytest.raises(DataValidationError, match="distinct"):
        UpliftDataset(np.zeros((2, 2)), [0, 1], [0, 1], ("a", "a"))
    with pytest.raises(DataValidationError, match="non-finite"):
        UpliftDataset(np.array([[np.nan], [0.0]]), [0, 1], [0, 1], ("a",))


def test_dataset_is_immutable():
    ds = random_dataset(10, 2, seed=1)
    with pytest.raises(ValueError):
        ds.features[0, 0] = 99.0
    with pytest.raises(ValueError):
        ds.treatment[0] = 0


def test_predict_prob_fixtures():
    c = UpliftCoefficients(0.0, np.zeros(2), 0.0, np.zeros(2))
    assert predict_prob(c, [1.0, -2.0], 0) == pytest.approx(0.5, abs=1e-15)

    c = UpliftCoefficients(0.0, np.zeros(2), math.log(3.0), np.zeros(2))
    assert predict_prob(c, [0.3, 0.7], 1) == pytest.approx(0.75, abs=1e-12)

    c = UpliftCoefficients(math.log(3.0), np.zeros(1), 0.0, np.zeros(1))
    assert predict_prob(c, [5.0], 0) == pytest.approx(0.75, abs=1e-12)


def test_predict_uplift_fixtures():
    c = UpliftCoefficients(0.0, np.zeros(2), 0.0, np.zeros(2))
    assert predict_uplift(c, [1.0, 2.0]) == 0.0

    c_pos = UpliftCoefficients(0.0, np.zeros(2), math.log(3.0), np.zeros(2))
    assert predict_uplift(c_pos, [1.0, 2.0]) == pytest.approx(0.25, abs=1e-12)

    c_neg = UpliftCoefficients(0.0, np.zeros(2), -math.log(3.0), np.zeros(2))
    assert predict_uplift(c_neg, [1.0, 2.0]) == pytest.approx(-0.25, abs=1e-12)


def test_predict_dimension_mismatch():
    c = UpliftCoefficients(0.0, np.zeros(2), 0.0, np.zeros(2))
    with pytest.raises(DataValidationError, match="dimension"):
        predict_prob(c, [1.0], 1)
    with pytest.raises(DataValidationError, match="dimension"):
        uplift_scores(c, np.zeros((4, 3)))


@given(
    theta0=st.floats(-5, 5),
    gamma=st.floats(-5, 5),
    coefs=st.lists(st.floats(-3, 3), min_size=1, max_size=4),
    x_scale=st.floats(-2, 2),
)
@settings(max_examples=60, deadline=None)
def test_predict_uplift_bounded_and_antisymmetric(theta0, gamma, coefs, x_scale):
    p = len(coefs)
    x = x_scale * np.arange(1, p + 1, dtype=float)
    c = UpliftCoefficients(theta0, np.asarray(coefs), gamma, np.asarray(coefs)[::-1].copy())
    u = predict_uplift(c, x)
    assert -1.0 < u < 1.0
    # with no intercept/main effects, negating the treatment part negates the uplift
    c_plus = UpliftCoefficients(0.0, np.zeros(p), gamma, np.asarray(coefs))
    c_minus = UpliftCoefficients(0.0, np.zeros(p), -gamma, -np.asarray(coefs))
    assert predict_uplift(c_plus, x) == pytest.approx(-predict_uplift(c_minus, x), abs=1e-15)


def test_coefficients_flat_round_trip():
    c = UpliftCoefficients(0.5, [1.0, 0.0], -0.25, [0.0, 2.0])
    again = UpliftCoefficients.from_flat(c.flat())
    assert again.intercept == c.intercept and again.treat == c.treat
    assert np.array_equal(again.main, c.main) and np.array_equal(again.interact, c.interact)
    # penalized layout: [main_1, main_2, treat, interact_1, interact_2]
    assert c.support() == (0, 2, 4)
    assert c.n_nonzero() == 3


def test_random_seed_streams():
    s = RandomSeed(42)
    a = s.stream("task").random(5)
    b = RandomSeed(42).stream("task").random(5)
    assert np.array_equal(a, b)
    c = s.stream("other").random(5)
    assert not np.array_equal(a, c)
    assert s.child("x").seed != s.child("y").seed
    with pytest.raises(DataValidationError):
        RandomSeed(-1)
    with pytest.raises(DataValidationError):
        RandomSeed(2**64)
