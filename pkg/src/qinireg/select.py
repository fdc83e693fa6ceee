"""Model selection over the penalized path: in-sample two-stage selection,
K-fold cross-validated metric selection, and the one-standard-error rule.

Folds are stratified jointly on (treatment, outcome); the penalty sequence is
computed once on the full data and held fixed across folds so per-penalty fold
metrics are comparable.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    BinConstructionError,
    DataValidationError,
    FoldError,
    RandomSeed,
    UpliftCoefficients,
    UpliftDataset,
    as_seed,
    clamp_eta,
    uplift_scores,
)
from .glm import FitDiagnostics, LassoPath, fit_lasso_path, fit_mle, lambda_sequence
from .metrics import evaluate
from .search import MetricKind, metric_value

log = logging.getLogger(__name__)

RULE_ARGMAX = "ARGMAX"
RULE_OSE = "OSE"
RULE_CV_LOGLIK = "CV_LOGLIK"


@dataclass(frozen=True)
class CvTable:
    """Per-penalty fold metrics with their mean and standard error."""

    lambdas: np.ndarray
    fold_values: np.ndarray  # shape (n_lambdas, K)
    mean: np.ndarray
    se: np.ndarray
    metric_label: str
    warnings: tuple[str, ...] = ()

    @property
    def n_folds(self) -> int:
        return self.fold_values.shape[1]

    @classmethod
    def from_fold_values(cls, lambdas, fold_values, metric_label, warnings=()):
        fold_values = np.asarray(fold_values, dtype=float)
        mean = fold_values.mean(axis=1)
        se = fold_values.std(axis=1, ddof=1) / np.sqrt(fold_values.shape[1])
        return cls(np.asarray(lambdas, dtype=float), fold_values, mean, se,
                   metric_label, tuple(warnings))

    def to_csv(self, path) -> None:
        """Columns: lambda, mean, se, fold_1..fold_K."""
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["lambda", "mean", "se"]
                            + [f"fold_{k + 1}" for k in range(self.n_folds)])
            for i in range(self.lambdas.shape[0]):
                writer.writerow([repr(float(self.lambdas[i])), repr(float(self.mean[i])),
                                repr(float(self.se[i]))]
                                + [repr(float(v)) for v in self.fold_values[i]])


@dataclass(frozen=True)
class SelectionResult:
    chosen_lambda: float
    chosen_index: int
    support: tuple[int, ...]
    coefficients: UpliftCoefficients
    rule: str
    diagnostics: FitDiagnostics
    warning: str | None = None
    cv_table: CvTable | None = None
    path_metric_values: tuple[float, ...] | None = None


def _argmax_prefer_sparse(values: np.ndarray) -> int:
    """Index of the maximum; ties go to the smaller index (larger penalty)."""
    return int(np.argmax(values))


def _refit(path: LassoPath, ds: UpliftDataset, index: int):
    support = path.coeffs[index].support()
    coeffs, diag = fit_mle(ds, support)
    return support, coeffs, diag


def q_lasso_select(path: LassoPath, ds: UpliftDataset, n_bins: int) -> SelectionResult:
    """Two-stage selection: pick the penalty whose path solution maximizes the
    in-sample adjusted Qini, then refit its support by maximum likelihood."""
    if path.n_lambdas == 0:
        raise DataValidationError("cannot select from an empty path")
    values = np.full(path.n_lambdas, -np.inf)
    for i, coeffs in enumerate(path.coeffs):
        pred = uplift_scores(coeffs, ds.features)
        try:
            values[i] = metric_value(evaluate(ds, pred, n_bins), MetricKind.ADJUSTED_QINI)
        except BinConstructionError as exc:
            log.warning("path solution %d not evaluable: %s", i, exc)
    warning = None
    if np.all(values[np.isfinite(values)] == 0.0):
        index = 0
        warning = "adjusted Qini is zero along the whole path; keeping the sparsest model"
    else:
        index = _argmax_prefer_sparse(values)
    support, coeffs, diag = _refit(path, ds, index)
    return SelectionResult(float(path.lambdas[index]), index, support, coeffs,
                           RULE_ARGMAX, diag, warning,
                           path_metric_values=tuple(float(v) for v in values))


def rank_of_lambda(path_metric_values, target_index: int) -> int:
    """1-based position of the target penalty when penalties are ordered by
    decreasing metric, ties toward the larger penalty (smaller index)."""
    values = np.asarray(path_metric_values, dtype=float)
    if not 0 <= target_index < values.shape[0]:
        raise DataValidationError(f"target index {target_index} out of range")
    order = sorted(range(values.shape[0]), key=lambda i: (-values[i], i))
    return order.index(target_index) + 1


def stratified_folds(ds: UpliftDataset, n_folds: int, rng: np.random.Generator):
    """Held-out index arrays, stratified jointly on (treatment, outcome)."""
    if n_folds < 2:
        raise FoldError(f"need at least 2 folds, got {n_folds}")
    if n_folds > ds.n:
        raise FoldError(f"cannot make {n_folds} folds from {ds.n} observations")
    held_out = [[] for _ in range(n_folds)]
    for t_val in (0, 1):
        for y_val in (0, 1):
            cell = np.flatnonzero((ds.treatment == t_val) & (ds.outcome == y_val))
            cell = cell[rng.permutation(cell.shape[0])]
            for k in range(n_folds):
                held_out[k].extend(cell[k::n_folds].tolist())
    folds = [np.asarray(sorted(idx), dtype=int) for idx in held_out]
    for k, fold in enumerate(folds):
        if fold.size == 0:
            raise FoldError(f"fold {k + 1} is empty; reduce the fold count")
        train = np.setdiff1d(np.arange(ds.n), fold)
        t_train = ds.treatment[train]
        if t_train.sum() < 1 or (1 - t_train).sum() < 1:
            raise FoldError(
                f"training part of fold {k + 1} lost a treatment arm; "
                "the sample is too small for this fold count"
            )
        if np.unique(ds.outcome[train]).size < 2:
            raise FoldError(
                f"training part of fold {k + 1} has a constant outcome; "
                "the sample is too small for this fold count"
            )
    return folds


def _held_out_metric(train_path: LassoPath, held: UpliftDataset, metric: MetricKind,
                     n_bins: int) -> tuple[np.ndarray, int]:
    """Metric of every path solution on the held-out data.

    If the requested bin count is infeasible on this fold, the largest feasible
    value >= 2 is used for the whole fold so values stay comparable across the
    path.  Returns (values, bins actually used).
    """
    for bins_try in range(min(n_bins, held.n), 1, -1):
        values = np.empty(train_path.n_lambdas)
        try:
            for i, coeffs in enumerate(train_path.coeffs):
                pred = uplift_scores(coeffs, held.features)
                values[i] = metric_value(evaluate(held, pred, bins_try), metric)
        except BinConstructionError:
            continue
        return values, bins_try
    raise FoldError(
        "held-out fold cannot form 2 uplift bins with both arms; "
        "use fewer folds or more data"
    )


def _held_out_loglik(train_path: LassoPath, held: UpliftDataset) -> np.ndarray:
    y = held.outcome.astype(float)
    values = np.empty(train_path.n_lambdas)
    for i, coeffs in enumerate(train_path.coeffs):
        eta0 = coeffs.intercept + held.features @ coeffs.main
        eta1 = eta0 + coeffs.treat + held.features @ coeffs.interact
        eta = clamp_eta(np.where(held.treatment == 1, eta1, eta0))
        values[i] = float(np.mean(y * eta - np.logaddexp(0.0, eta)))
    return values


def _cross_validate(ds: UpliftDataset, n_folds: int, seed: RandomSeed,
                    fold_metric, metric_label: str, *,
                    lambda_count: int = 100, lambda_eps: float | None = None):
    lambdas = lambda_sequence(ds, lambda_count, lambda_eps)
    full_path = fit_lasso_path(ds, lambdas)
    folds = stratified_folds(ds, n_folds, seed.stream("cv-folds"))
    all_rows = np.arange(ds.n)
    fold_values = np.empty((lambdas.shape[0], n_folds))
    warnings: list[str] = []
    for k, held_idx in enumerate(folds):
        train = ds.take(np.setdiff1d(all_rows, held_idx))
        held = ds.take(held_idx)
        train_path = fit_lasso_path(train, lambdas)
        values, note = fold_metric(train_path, held)
        fold_values[:, k] = values
        if note:
            warnings.append(f"fold {k + 1}: {note}")
    table = CvTable.from_fold_values(lambdas, fold_values, metric_label, warnings)
    return table, full_path


def cross_validated_select(ds: UpliftDataset, n_folds: int, metric: MetricKind,
                           n_bins: int, seed: RandomSeed | int, rule: str = RULE_ARGMAX,
                           *, lambda_count: int = 100, lambda_eps: float | None = None):
    """K-fold selection of the penalty by a held-out uplift metric.

    ``rule`` is ``ARGMAX`` (best mean metric) or ``OSE`` (largest penalty whose
    mean metric is within one standard error of the best).  The chosen support
    is refit on the full data by maximum likelihood.
    Returns ``(CvTable, SelectionResult)``.
    """
    if rule not in (RULE_ARGMAX, RULE_OSE):
        raise DataValidationError(f"unknown selection rule {rule!r}")
    seed = as_seed(seed)

    def fold_metric(train_path, held):
        values, bins_used = _held_out_metric(train_path, held, metric, n_bins)
        note = (f"bin count reduced to {bins_used}" if bins_used < n_bins else None)
        return values, note

    table, full_path = _cross_validate(ds, n_folds, seed, fold_metric, metric.value,
                                       lambda_count=lambda_count, lambda_eps=lambda_eps)
    best = _argmax_prefer_sparse(table.mean)
    if rule == RULE_OSE:
        threshold = table.mean[best] - table.se[best]
        index = int(np.flatnonzero(table.mean >= threshold)[0])
    else:
        index = best
    support, coeffs, diag = _refit(full_path, ds, index)
    result = SelectionResult(float(table.lambdas[index]), index, support, coeffs,
                             rule, diag, None, table)
    return table, result


def loglik_cv_select(ds: UpliftDataset, n_folds: int, seed: RandomSeed | int, *,
                     lambda_count: int = 100,
                     lambda_eps: float | None = None) -> SelectionResult:
    """Classical penalty choice: maximize the cross-validated log-likelihood."""
    seed = as_seed(seed)

    def fold_metric(train_path, held):
        return _held_out_loglik(train_path, held), None

    table, full_path = _cross_validate(ds, n_folds, seed, fold_metric, "loglik",
                                       lambda_count=lambda_count, lambda_eps=lambda_eps)
    index = _argmax_prefer_sparse(table.mean)
    support, coeffs, diag = _refit(full_path, ds, index)
    return SelectionResult(float(table.lambdas[index]), index, support, coeffs,
                           RULE_CV_LOGLIK, diag, None, table)
