"""Qini curve, Qini coefficient, Kendall uplift rank correlation and adjusted Qini.

All metrics depend on predictions only through their ordering: observations are
ranked by predicted uplift (descending, ties kept in original order by a stable
sort) and grouped into J contiguous bins of near-equal size.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import BinConstructionError, DataValidationError, UpliftDataset


def descending_order(pred) -> np.ndarray:
    """Stable ordering by predicted uplift, highest first; ties keep original index order."""
    pred = np.asarray(pred, dtype=float)
    if pred.ndim != 1:
        raise DataValidationError("predictions must be a 1-d vector")
    if not np.all(np.isfinite(pred)):
        raise DataValidationError("predictions must be finite")
    return np.argsort(-pred, kind="stable")


def _bin_boundaries(n: int, n_bins: int) -> np.ndarray:
    """Cumulative cut points ceil(k*n/J), k=0..J; bin sizes differ by at most 1."""
    if n_bins < 1:
        raise DataValidationError(f"bin count must be >= 1, got {n_bins}")
    if n_bins > n:
        raise DataValidationError(f"cannot form {n_bins} bins from {n} observations")
    k = np.arange(n_bins + 1, dtype=np.int64)
    return -((-k * n) // n_bins)


@dataclass(frozen=True)
class BinTable:
    """Per-bin statistics for J contiguous groups ranked by predicted uplift.

    ``pred_max``/``pred_min`` are the largest/smallest prediction inside each
    bin; two bins have exactly equal mean prediction if and only if
    ``pred_max[i] == pred_min[j]`` for the upper bin i, which is how exact
    ties are detected without floating-point averaging noise.
    """

    counts: np.ndarray
    pred_mean: np.ndarray
    obs_uplift: np.ndarray
    n_treated: np.ndarray
    n_control: np.ndarray
    pred_max: np.ndarray
    pred_min: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ("counts", "pred_mean", "obs_uplift", "n_treated", "n_control",
                     "pred_max", "pred_min"):
            arr = np.asarray(getattr(self, name))
            arrays[name] = arr
            if arr.ndim != 1 or arr.shape[0] != arrays["counts"].shape[0]:
                raise DataValidationError(f"BinTable field {name} has inconsistent shape")
        if arrays["counts"].shape[0] < 1:
            raise DataValidationError("BinTable needs at least one bin")
        if np.any(arrays["n_treated"] < 1) or np.any(arrays["n_control"] < 1):
            raise BinConstructionError("every bin must contain both treated and control units")
        if np.any(arrays["n_treated"] + arrays["n_control"] != arrays["counts"]):
            raise DataValidationError("bin arm counts must sum to the bin size")
        # Bins are descending blocks: the smallest prediction of an upper bin
        # cannot be below the largest prediction of the bin after it.
        if np.any(arrays["pred_min"][:-1] < arrays["pred_max"][1:]):
            raise DataValidationError("bins must be ordered by decreasing predicted uplift")
        for name in ("counts", "n_treated", "n_control"):
            object.__setattr__(self, name, _ro(arrays[name].astype(np.int64)))
        for name in ("pred_mean", "obs_uplift", "pred_max", "pred_min"):
            object.__setattr__(self, name, _ro(arrays[name].astype(float)))

    @property
    def n_bins(self) -> int:
        return self.counts.shape[0]

    @classmethod
    def from_values(cls, pred_mean, obs_uplift, counts=None, n_treated=None, n_control=None):
        """Build a table directly from per-bin summary values (fixtures, reports)."""
        pred_mean = np.asarray(pred_mean, dtype=float)
        j = pred_mean.shape[0]
        counts = np.full(j, 2, dtype=np.int64) if counts is None else np.asarray(counts)
        n_treated = counts // 2 if n_treated is None else np.asarray(n_treated)
        n_control = counts - n_treated if n_control is None else np.asarray(n_control)
        return cls(counts, pred_mean, np.asarray(obs_uplift, dtype=float),
                   n_treated, n_control, pred_mean, pred_mean)

    @classmethod
    def from_predictions(cls, ds: UpliftDataset, pred, n_bins: int) -> "BinTable":
        return _ranked_core(ds, pred, n_bins)[0]

    def to_csv(self, path) -> None:
        """Columns: bin,n,pred_uplift,obs_uplift,n_treat,n_control."""
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin", "n", "pred_uplift", "obs_uplift", "n_treat", "n_control"])
            for k in range(self.n_bins):
                writer.writerow([
                    k + 1, int(self.counts[k]), repr(float(self.pred_mean[k])),
                    repr(float(self.obs_uplift[k])), int(self.n_treated[k]),
                    int(self.n_control[k]),
                ])


def _ro(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class QiniCurve:
    """Relative incremental uplift g evaluated on a grid 0 = phi_1 < ... < phi_{J+1} = 1."""

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape or grid.shape[0] < 2:
            raise DataValidationError("curve grid and values must be equal-length vectors")
        if grid[0] != 0.0 or grid[-1] != 1.0 or np.any(np.diff(grid) <= 0):
            raise DataValidationError("grid must increase strictly from 0 to 1")
        if values[0] != 0.0:
            raise DataValidationError("g(0) must be 0")
        if not np.all(np.isfinite(values)):
            raise DataValidationError("curve values must be finite")
        object.__setattr__(self, "grid", _ro(grid))
        object.__setattr__(self, "values", _ro(values))

    @property
    def overall(self) -> float:
        """g(1), the overall sample observed uplift."""
        return float(self.values[-1])

    def to_csv(self, path) -> None:
        """Columns: phi,g."""
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["phi", "g"])
            for phi, g in zip(self.grid, self.values):
                writer.writerow([repr(float(phi)), repr(float(g))])


@dataclass(frozen=True)
class EvaluationReport:
    qini: float
    kendall: float
    adjusted_qini: float
    bins: BinTable
    curve: QiniCurve


def overall_uplift(ds: UpliftDataset) -> float:
    """Two-proportion difference between the treated and control response rates."""
    t = ds.treatment
    y = ds.outcome
    n_t = t.sum()
    n_c = ds.n - n_t
    return float((y @ t) / n_t - (y @ (1 - t)) / n_c)


def _prefix_uplift(y_sorted, t_sorted):
    """Cumulative arm sums over the ranked observations, for h at any prefix."""
    treated_resp = np.cumsum(y_sorted * t_sorted)
    control_resp = np.cumsum(y_sorted * (1 - t_sorted))
    treated = np.cumsum(t_sorted)
    control = np.cumsum(1 - t_sorted)
    return treated_resp, control_resp, treated, control


def _h_at(prefix, m: int) -> float:
    """Incremental uplift of the top-m prefix; m = 0 is 0 by definition."""
    if m == 0:
        return 0.0
    treated_resp, control_resp, treated, control = prefix
    i = m - 1
    if control[i] == 0:
        raise BinConstructionError(
            f"no control observations among the top {m} predictions; "
            "use a smaller bin count or a coarser grid"
        )
    return float(treated_resp[i] - control_resp[i] * (treated[i] / control[i]))


def incremental_uplift(ds: UpliftDataset, pred, phi: float) -> float:
    """Incremental number of responses among the top ceil(phi*n) predicted units,
    normalized to the treated count inside that group."""
    if not 0.0 <= phi <= 1.0:
        raise DataValidationError(f"phi must lie in [0, 1], got {phi}")
    order = descending_order(pred)
    if order.shape[0] != ds.n:
        raise DataValidationError("predictions must have one value per observation")
    m = int(np.ceil(phi * ds.n - 1e-9))
    prefix = _prefix_uplift(ds.outcome[order].astype(float), ds.treatment[order].astype(float))
    return _h_at(prefix, m)




def _kendall_from_bins(bins: BinTable) -> float:
    j = bins.n_bins
    if j < 2:
        raise DataValidationError("Kendall uplift correlation needs at least 2 bins")
    upper, lower = np.triu_indices(j, k=1)
    # Bins are descending blocks, so the predicted sign for a pair is +1 unless
    # the two bins tie exactly, which happens iff the largest prediction of the
    # lower bin equals the smallest prediction of the upper bin.
    pred_sign = np.where(bins.pred_max[upper] == bins.pred_min[lower], 0.0, 1.0)
    obs_sign = np.sign(bins.obs_uplift[upper] - bins.obs_uplift[lower])
    # Signs are exact small integers, so the summation order cannot matter.
    total = float(np.sum(pred_sign * obs_sign))
    return 2.0 * total / (j * (j - 1))


def kendall_uplift_correlation(bins: BinTable) -> float:
    """Pairwise-sign agreement between per-bin predicted and observed uplift."""
    return _kendall_from_bins(bins)


def qini_coefficient(curve: QiniCurve) -> float:
    """Trapezoid-rule area between the curve and the random-targeting diagonal."""
    q_vals = curve.values - curve.grid * curve.overall
    widths = np.diff(curve.grid)
    return float(0.5 * np.sum(widths * (q_vals[1:] + q_vals[:-1])))


def adjusted_qini(q_hat: float, rho: float) -> float:
    """rho * max(0, q_hat): area under the curve discounted by bin ordering quality."""
    if not -1.0 - 1e-12 <= rho <= 1.0 + 1e-12:
        raise DataValidationError(f"rho must lie in [-1, 1], got {rho}")
    return float(rho * max(0.0, q_hat))


def _ranked_core(ds: UpliftDataset, pred, n_bins: int) -> tuple[BinTable, QiniCurve]:
    pred = np.asarray(pred, dtype=float)
    order = descending_order(pred)
    if order.shape[0] != ds.n:
        raise DataValidationError("predictions must have one value per observation")
    n = ds.n
    bounds = _bin_boundaries(n, n_bins)
    y_sorted = ds.outcome[order].astype(float)
    t_sorted = ds.treatment[order].astype(float)
    p_sorted = pred[order]

    starts = bounds[:-1]
    counts = np.diff(bounds)
    bin_treated = np.add.reduceat(t_sorted, starts)
    bin_control = counts - bin_treated
    if np.any(bin_treated < 1) or np.any(bin_control < 1):
        k = int(np.argmax((bin_treated < 1) | (bin_control < 1)))
        raise BinConstructionError(
            f"bin {k + 1} of {n_bins} lacks a treated or control observation; "
            "use a smaller bin count"
        )
    bin_treated_resp = np.add.reduceat(y_sorted * t_sorted, starts)
    bin_control_resp = np.add.reduceat(y_sorted * (1 - t_sorted), starts)
    obs_uplift = bin_treated_resp / bin_treated - bin_control_resp / bin_control
    pred_mean = np.add.reduceat(p_sorted, starts) / counts
    pred_max = p_sorted[starts]
    pred_min = p_sorted[bounds[1:] - 1]
    bins = BinTable(counts, pred_mean, obs_uplift, bin_treated.astype(np.int64),
                    bin_control.astype(np.int64), pred_max, pred_min)

    prefix = _prefix_uplift(y_sorted, t_sorted)
    total_treated = float(ds.treatment.sum())
    grid = np.arange(n_bins + 1, dtype=float) / n_bins
    values = np.array([_h_at(prefix, int(m)) / total_treated for m in bounds])
    return bins, QiniCurve(grid, values)


def qini_curve(ds: UpliftDataset, pred, n_bins: int) -> QiniCurve:
    """g evaluated at phi_j = j/J for j = 0..J, using the same partition as the bins."""
    return _ranked_core(ds, pred, n_bins)[1]


def evaluate(ds: UpliftDataset, pred, n_bins: int) -> EvaluationReport:
    """Full evaluation of one prediction vector: Qini, Kendall, adjusted Qini,
    bin table and curve, all from a single ranking pass."""
    bins, curve = _ranked_core(ds, pred, n_bins)
    q_hat = qini_coefficient(curve)
    rho = _kendall_from_bins(bins)
    return EvaluationReport(q_hat, rho, adjusted_qini(q_hat, rho), bins, curve)


def uplift_rmse(true_u, pred_u) -> float:
    """Root mean squared error between known and predicted individual uplift."""
    true_u = np.asarray(true_u, dtype=float)
    pred_u = np.asarray(pred_u, dtype=float)
    if true_u.shape != pred_u.shape or true_u.ndim != 1:
        raise DataValidationError("uplift vectors must be 1-d and of equal length")
    if not (np.all(np.isfinite(true_u)) and np.all(np.isfinite(pred_u))):
        raise DataValidationError("uplift vectors must be finite")
    return float(np.sqrt(np.mean((true_u - pred_u) ** 2)))


def default_bins(n: int) -> int:
    """Advisory bin count that balances trapezoid bias against per-bin noise,
    growing like the sixth root of the sample size; clamped to [2, 10]."""
    if n < 2:
        raise DataValidationError(f"need at least 2 observations, got {n}")
    return int(np.clip(round(float(n) ** (1.0 / 6.0)), 2, 10))


def resolve_bins(n: int, requested: int | None) -> int:
    """User value if given, else deciles for large samples and default_bins otherwise."""
    if requested is not None:
        if requested < 1:
            raise DataValidationError(f"bin count must be positive, got {requested}")
        return int(requested)
    return 10 if n >= 1000 else default_bins(n)
