import numpy as np
import pytest

from qinireg import (
    DataValidationError,
    LhsConfig,
    MetricKind,
    NmOptions,
    RandomSeed,
    UpliftCoefficients,
    evaluate,
    fit_lasso_path,
    fit_mle,
    lambda_sequence,
    latin_hypercube,
    lhs_search,
    nelder_mead,
    nelder_mead_search,
    uplift_scores,
)

from conftest import random_dataset


def occupancy_counts(samples, center, width, n_strata):
    """Stratum occupancy oracle: count samples per equal-width stratum."""
    lo = center - width
    positions = (samples - lo) / (2 * width / n_strata)
    strata = np.floor(positions).astype(int)
    strata = np.clip(strata, 0, n_strata - 1)  # boundary-safe
    return np.bincount(strata, minlength=n_strata)


def test_latin_property_small_design():
    center = UpliftCoefficients(1.0, [2.0], -0.5, [0.25])
    cfg = LhsConfig(samples_per_center=4, radius_rel=0.5, radius_floor=0.1,
                    perturb_support_only=False, seed=RandomSeed(3))
    samples = latin_hypercube(center, cfg)
    flat = np.array([s.flat() for s in samples])
    center_flat = center.flat()
    for j in range(flat.shape[1]):
        width = max(0.5 * abs(center_flat[j]), 0.1)
        counts = occupancy_counts(flat[:, j], center_flat[j], width, 4)
        assert np.all(counts == 1)


def test_latin_property_many_seeds():
    rng = np.random.default_rng(17)
    for trial in range(25):
        p = int(rng.integers(1, 5))
        L = int(rng.integers(2, 33))
        center = UpliftCoefficients(
            rng.normal(), rng.normal(size=p), rng.normal(), rng.normal(size=p)
        )
        cfg = LhsConfig(L, 0.5, 0.1, False, RandomSeed(int(rng.integers(0, 2**32))))
        flat = np.array([s.flat() for s in latin_hypercube(center, cfg)])
        center_flat = center.flat()
        for j in range(flat.shape[1]):
            width = max(0.5 * abs(center_flat[j]), 0.1)
            assert np.all(occupancy_counts(flat[:, j], center_flat[j], width, L) == 1)


def test_support_preservation():
    center = UpliftCoefficients(0.3, [1.0, 0.0], 0.0, [0.0, -0.4])
    cfg = LhsConfig(samples_per_center=16, seed=RandomSeed(5))
    for s in latin_hypercube(center, cfg):
        assert s.main[1] == 0.0
        assert s.interact[0] == 0.0
        assert s.main[0] != 0.0 and s.interact[1] != 0.0


def test_lhs_config_validation():
    with pytest.raises(DataValidationError, match="cannot both be zero"):
        LhsConfig(radius_rel=0.0, radius_floor=0.0)
    with pytest.raises(DataValidationError):
        LhsConfig(samples_per_center=0)
    with pytest.raises(DataValidationError):
        LhsConfig(radius_rel=-0.1)


def test_latin_hypercube_deterministic():
    center = UpliftCoefficients(0.1, [0.5], 0.2, [0.0])
    cfg = LhsConfig(samples_per_center=8, seed=RandomSeed(11))
    a = np.array([s.flat() for s in latin_hypercube(center, cfg)])
    b = np.array([s.flat() for s in latin_hypercube(center, cfg)])
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# lhs_search


@pytest.fixture(scope="module")
def small_path():
    ds = random_dataset(300, 3, seed=51)
    path = fit_lasso_path(ds, lambda_sequence(ds, length=12, eps=1e-2))
    return ds, path


def test_lhs_search_degenerate_equals_best_center(small_path):
    ds, path = small_path
    cfg = LhsConfig(1, 0.0, 1e-12, True, RandomSeed(0))
    result = lhs_search(path, ds, MetricKind.ADJUSTED_QINI, 5, cfg)
    center_values = []
    for c in path.coeffs:
        center_values.append(evaluate(ds, uplift_scores(c, ds.features), 5).adjusted_qini)
    assert result.value == max(center_values)


def test_lhs_search_never_below_centers(small_path):
    ds, path = small_path
    cfg = LhsConfig(20, 0.5, 0.1, True, RandomSeed(1))
    result = lhs_search(path, ds, MetricKind.ADJUSTED_QINI, 5, cfg)
    for c in path.coeffs:
        value = evaluate(ds, uplift_scores(c, ds.features), 5).adjusted_qini
        assert result.value >= value


def test_lhs_search_deterministic_and_reproducible(small_path):
    ds, path = small_path
    cfg = LhsConfig(10, 0.5, 0.1, True, RandomSeed(7))
    a = lhs_search(path, ds, MetricKind.QINI, 5, cfg)
    b = lhs_search(path, ds, MetricKind.QINI, 5, cfg)
    assert a.value == b.value and a.origin == b.origin
    assert np.array_equal(a.coefficients.flat(), b.coefficients.flat())


def test_lhs_search_reevaluation_is_bit_identical(small_path):
    ds, path = small_path
    cfg = LhsConfig(10, 0.5, 0.1, True, RandomSeed(9))
    result = lhs_search(path, ds, MetricKind.ADJUSTED_QINI, 5, cfg)
    pred = uplift_scores(result.coefficients, ds.features)
    assert evaluate(ds, pred, 5).adjusted_qini == result.value


def test_lhs_search_log_and_counts(small_path):
    ds, path = small_path
    cfg = LhsConfig(4, 0.5, 0.1, True, RandomSeed(2))
    result = lhs_search(path, ds, MetricKind.KENDALL, 5, cfg, keep_log=True)
    assert result.n_evaluations == path.n_lambdas * (1 + 4)
    assert len(result.evaluation_log) == result.n_evaluations
    payload = result.to_json_dict(verbose=True)
    assert len(payload["evaluations"]) == result.n_evaluations


# ---------------------------------------------------------------------------
# Nelder-Mead


def test_nelder_mead_smooth_surrogate():
    target = np.array([0.3, -1.2, 0.8, 2.0, -0.5])
    for d in (2, 3, 5):
        t = target[:d]

        def objective(x):
            return -float(np.sum((x - t) ** 2))

        x_best, f_best, trace, n_eval = nelder_mead(objective, np.zeros(d))
        assert np.max(np.abs(x_best - t)) < 1e-3
        assert n_eval <= 500 * (d + 2)
        assert np.all(np.diff(np.asarray(trace)) >= 0.0)


def test_nelder_mead_constant_objective_returns_start():
    x_best, f_best, _, _ = nelder_mead(lambda x: 1.0, np.array([2.0, 3.0]),
                                       NmOptions(max_iter=50))
    assert f_best == 1.0
    assert np.allclose(x_best, [2.0, 3.0])


def test_nelder_mead_search_never_worse_than_init():
    ds = random_dataset(250, 2, seed=52)
    init, _ = fit_mle(ds)
    init_value = evaluate(ds, uplift_scores(init, ds.features), 5).adjusted_qini
    result = nelder_mead_search(init, ds, MetricKind.ADJUSTED_QINI, 5)
    assert result.value >= init_value
    pred = uplift_scores(result.coefficients, ds.features)
    assert evaluate(ds, pred, 5).adjusted_qini == result.value


def test_nelder_mead_search_respects_support():
    ds = random_dataset(250, 3, seed=53)
    init = UpliftCoefficients(0.2, [0.5, 0.0, 0.0], 0.0, [0.0, 0.0, -0.3])
    result = nelder_mead_search(init, ds, MetricKind.ADJUSTED_QINI, 5,
                                NmOptions(max_iter=40))
    c = result.coefficients
    assert c.main[1] == 0.0 and c.main[2] == 0.0
    assert c.interact[0] == 0.0 and c.interact[1] == 0.0


def test_nelder_mead_improves_adjusted_qini_in_most_runs():
    improved = 0
    runs = 20
    for s in range(runs):
        ds = random_dataset(500, 3, seed=600 + s)
        init, _ = fit_mle(ds)
        init_value = evaluate(ds, uplift_scores(init, ds.features), 5).adjusted_qini
        result = nelder_mead_search(init, ds, MetricKind.ADJUSTED_QINI, 5,
                                    NmOptions(max_iter=300))
        if result.value > init_value:
            improved += 1
    assert improved >= 0.9 * runs
