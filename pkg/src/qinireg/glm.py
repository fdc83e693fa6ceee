"""Likelihood fitting for the interaction logistic model.

Two solvers live here: a damped-Newton maximizer of the unpenalized
log-likelihood (optionally restricted to a coordinate support), and an
L1-penalized path solver that reweights a quadratic approximation of the
log-likelihood and runs cyclic coordinate descent with soft-thresholding,
warm-starting each penalty value from the previous one.

Scaling conventions: the penalized objective is the per-observation mean
log-likelihood minus ``lam * ||theta||_1`` over internally standardized
columns (intercept unpenalized, never standardized away).  Solutions are
reported un-standardized, on the original feature scale.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import (
    DataValidationError,
    NumericalError,
    UpliftCoefficients,
    UpliftDataset,
    clamp_eta,
    sigmoid,
)

COEF_BOUND = 35.0  # standardized-scale magnitude treated as separation


def interaction_design(ds: UpliftDataset) -> np.ndarray:
    """n x (2p+1) penalized design: [x, t, t*x]."""
    t = ds.treatment.astype(float)[:, None]
    return np.hstack([ds.features, t, t * ds.features])


@dataclass(frozen=True)
class Standardization:
    mean: np.ndarray
    scale: np.ndarray  # 1.0 for constant columns, which stay pinned at zero

    @classmethod
    def fit(cls, design: np.ndarray) -> "Standardization":
        mean = design.mean(axis=0)
        scale = design.std(axis=0)
        scale = np.where(scale > 0.0, scale, 1.0)
        return cls(mean, scale)

    def apply(self, design: np.ndarray) -> np.ndarray:
        return (design - self.mean) / self.scale

    def coefficients_to_original(self, intercept: float, theta: np.ndarray):
        coefs = theta / self.scale
        return float(intercept - coefs @ self.mean), coefs


def _penalized_to_coeffs(vec: np.ndarray, intercept: float, p: int) -> UpliftCoefficients:
    return UpliftCoefficients(intercept, vec[:p], vec[p], vec[p + 1 :])


def _mean_loglik(eta: np.ndarray, y: np.ndarray) -> float:
    eta = clamp_eta(eta)
    # log(1 + exp(eta)) evaluated stably
    softplus = np.logaddexp(0.0, eta)
    return float(np.mean(y * eta - softplus))


@dataclass(frozen=True)
class FitDiagnostics:
    loglik: float
    n_iter: int
    grad_max: float
    converged: bool
    separation: bool = False
    loglik_trace: tuple[float, ...] = ()


def fit_mle(ds: UpliftDataset, support: Sequence[int] | None = None, *,
            tol: float = 1e-6, max_iter: int = 100):
    """Maximum-likelihood fit, optionally restricted to a penalized-coordinate support.

    Off-support coordinates are exactly zero in the returned coefficients.
    Convergence means the standardized mean-log-likelihood gradient has
    max-norm at most ``tol``.  Returns ``(UpliftCoefficients, FitDiagnostics)``;
    non-convergence is reported through the diagnostics, not an exception.
    """
    p = ds.p
    d_full = 2 * p + 1
    if support is None:
        active = np.arange(d_full)
    else:
        active = np.asarray(sorted(set(int(j) for j in support)), dtype=int)
        if active.size and (active.min() < 0 or active.max() >= d_full):
            raise DataValidationError(
                f"support indices must lie in [0, {d_full}), got {support}"
            )
    if ds.n <= active.size + 1:
        raise DataValidationError(
            f"n={ds.n} observations cannot identify {active.size + 1} parameters"
        )
    y = ds.outcome.astype(float)

    if active.size:
        design = interaction_design(ds)[:, active]
        std = Standardization.fit(design)
        if np.any(design.std(axis=0) == 0.0):
            raise NumericalError("active design contains a constant column")
        Z = std.apply(design)
    else:
        std = None
        Z = np.zeros((ds.n, 0))

    ybar = float(np.clip(y.mean(), 1e-12, 1 - 1e-12))
    b0 = math.log(ybar / (1 - ybar))
    theta = np.zeros(active.size)
    n = ds.n

    def loglik(b, th):
        return _mean_loglik(b + Z @ th, y)

    current = loglik(b0, theta)
    trace = [current * n]
    A = np.hstack([np.ones((n, 1)), Z])
    grad_max = math.inf
    n_iter = 0
    converged = False
    for n_iter in range(1, max_iter + 1):
        eta = b0 + Z @ theta
        prob = sigmoid(eta)
        resid = y - prob
        g0 = float(resid.mean())
        g = Z.T @ resid / n
        grad_max = max(abs(g0), float(np.max(np.abs(g))) if g.size else 0.0)
        if grad_max <= tol:
            converged = True
            break
        w = prob * (1.0 - prob)
        H = (A * w[:, None]).T @ A / n
        H[np.diag_indices_from(H)] += 1e-12
        try:
            step = np.linalg.solve(H, np.concatenate(([g0], g)))
        except np.linalg.LinAlgError:
            raise NumericalError("singular Hessian in maximum-likelihood fit") from None
        scale = 1.0
        accepted = False
        while scale > 1e-10:
            cand = loglik(b0 + scale * step[0], theta + scale * step[1:])
            if cand >= current - 1e-12:
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            break
        b0 += scale * step[0]
        theta = theta + scale * step[1:]
        current = max(current, cand)
        trace.append(current * n)
    else:
        eta = b0 + Z @ theta
        resid = y - sigmoid(eta)
        grad_max = max(abs(float(resid.mean())),
                       float(np.max(np.abs(Z.T @ resid / n))) if theta.size else 0.0)
        converged = grad_max <= tol

    separation = bool(np.any(np.abs(theta) > COEF_BOUND) or abs(b0) > COEF_BOUND)
    if separation:
        theta = np.clip(theta, -COEF_BOUND, COEF_BOUND)
        b0 = float(np.clip(b0, -COEF_BOUND, COEF_BOUND))
        current = loglik(b0, theta)

    penalized = np.zeros(d_full)
    if active.size:
        intercept, coefs = std.coefficients_to_original(b0, theta)
        penalized[active] = coefs
    else:
        intercept = b0
    coeffs = _penalized_to_coeffs(penalized, intercept, p)
    diag = FitDiagnostics(current * n, n_iter, grad_max, converged, separation, tuple(trace))
    return coeffs, diag


# ---------------------------------------------------------------------------
# Penalized path


def lambda_sequence(ds: UpliftDataset, length: int = 100, eps: float | None = None) -> np.ndarray:
    """Log-spaced decreasing penalty values from the smallest all-zeroing value.

    The top value is ``max_j |z_j'(y - ybar)| / n`` over standardized penalized
    columns, at or above which every penalized coefficient is zero.
    """
    if length < 2:
        raise DataValidationError(f"sequence length must be >= 2, got {length}")
    p = ds.p
    if eps is None:
        eps = 1e-2 if 2 * p + 1 >= ds.n else 1e-4
    if not 0.0 < eps < 1.0:
        raise DataValidationError(f"eps must lie in (0, 1), got {eps}")
    y = ds.outcome.astype(float)
    centered = y - y.mean()
    if np.all(centered == 0.0):
        raise DataValidationError("outcome is constant; the penalty sequence is undefined")
    design = interaction_design(ds)
    Z = Standardization.fit(design).apply(design)
    lam_max = float(np.max(np.abs(Z.T @ centered)) / ds.n)
    if lam_max <= 0.0:
        raise DataValidationError("all penalized columns are constant")
    return np.exp(np.linspace(math.log(lam_max), math.log(eps * lam_max), length))


@dataclass(frozen=True)
class LassoPath:
    """Solutions of the penalized likelihood along a decreasing penalty sequence.

    ``coeffs`` are on the original feature scale; ``std_solutions`` keeps the
    (intercept, theta) pairs on the standardized scale used internally, one row
    of length 2p+2 per penalty value.
    """

    lambdas: np.ndarray
    coeffs: tuple[UpliftCoefficients, ...]
    support_sizes: tuple[int, ...]
    feature_names: tuple[str, ...]
    std_solutions: np.ndarray
    standardization: Standardization
    converged: tuple[bool, ...]
    objective_traces: tuple[tuple[float, ...], ...]

    @property
    def n_lambdas(self) -> int:
        return self.lambdas.shape[0]

    def to_csv(self, path) -> None:
        """Columns: lambda, support_size, intercept, then one column per coefficient."""
        names = list(self.feature_names)
        header = (["lambda", "support_size", "intercept"]
                  + [f"main:{s}" for s in names] + ["treat"]
                  + [f"interact:{s}" for s in names])
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i, c in enumerate(self.coeffs):
                row = [repr(float(self.lambdas[i])), self.support_sizes[i],
                       repr(c.intercept)]
                row += [repr(float(v)) for v in c.main]
                row.append(repr(c.treat))
                row += [repr(float(v)) for v in c.interact]
                writer.writerow(row)

    def to_json(self, path) -> None:
        payload = {
            "lambdas": [float(v) for v in self.lambdas],
            "support_sizes": list(self.support_sizes),
            "feature_names": list(self.feature_names),
            "converged": list(self.converged),
            "solutions": [
                {
                    "intercept": c.intercept,
                    "main": [float(v) for v in c.main],
                    "treat": c.treat,
                    "interact": [float(v) for v in c.interact],
                }
                for c in self.coeffs
            ],
        }
        Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def _soft_threshold(value: float, threshold: float) -> float:
    if value > threshold:
        return value - threshold
    if value < -threshold:
        return value + threshold
    return 0.0


def _penalized_objective(b0, theta, Z, y, lam):
    return -_mean_loglik(b0 + Z @ theta, y) + lam * float(np.sum(np.abs(theta)))


def _kkt_residual(score: np.ndarray, theta: np.ndarray, lam: float) -> float:
    """Worst violation of the stationarity conditions on the standardized scale."""
    zero = theta == 0.0
    err = 0.0
    if np.any(zero):
        err = max(err, float(np.max(np.maximum(np.abs(score[zero]) - lam, 0.0))))
    if np.any(~zero):
        err = max(err, float(np.max(np.abs(score[~zero] - lam * np.sign(theta[~zero])))))
    return err


def fit_lasso_path(ds: UpliftDataset, lambdas, *, inner_tol: float = 1e-7,
                   outer_tol: float = 1e-6, max_outer: int = 100,
                   max_sweeps: int = 5000, kkt_tol: float = 1e-7) -> LassoPath:
    """Solve the L1-penalized likelihood at each penalty value, largest first.

    Each value warm-starts from the previous solution.  Convergence requires
    both a small change between reweighting steps and a small stationarity
    residual of the exact objective; non-convergence at a value is flagged in
    ``converged`` and the path is still returned.
    """
    lambdas = np.asarray(lambdas, dtype=float).reshape(-1)
    if lambdas.size == 0:
        raise DataValidationError("empty penalty sequence")
    if np.any(lambdas <= 0.0):
        raise DataValidationError("penalty values must be positive")
    if lambdas.size > 1 and np.any(np.diff(lambdas) >= 0.0):
        raise DataValidationError("penalty values must be strictly decreasing")

    p = ds.p
    design = interaction_design(ds)
    std = Standardization.fit(design)
    Z = std.apply(design)
    y = ds.outcome.astype(float)
    n, d = Z.shape

    ybar = float(np.clip(y.mean(), 1e-12, 1 - 1e-12))
    b0 = math.log(ybar / (1 - ybar))
    theta = np.zeros(d)

    solutions = np.zeros((lambdas.size, d + 1))
    converged_flags: list[bool] = []
    traces: list[tuple[float, ...]] = []
    coeffs_list: list[UpliftCoefficients] = []
    support_sizes: list[int] = []

    for li, lam in enumerate(lambdas):
        obj = _penalized_objective(b0, theta, Z, y, lam)
        trace = [obj]
        converged = False
        for _ in range(max_outer):
            b0_prev, theta_prev, obj_prev = b0, theta.copy(), obj
            eta = b0 + Z @ theta
            prob = sigmoid(eta)
            w = prob * (1.0 - prob)
            v = (w @ (Z * Z)) / n
            sum_w = float(w.sum())
            # Residual of the local quadratic model: (y - p) - W (eta - eta_bar),
            # maintained incrementally; at the linearization point it is y - p.
            resid = y - prob
            for _sweep in range(max_sweeps):
                max_delta = 0.0
                for j in range(d):
                    vj = v[j]
                    if vj <= 1e-12:
                        continue
                    zj = Z[:, j]
                    rho = float(zj @ resid) / n + vj * theta[j]
                    new = _soft_threshold(rho, lam) / vj
                    delta = new - theta[j]
                    if delta != 0.0:
                        resid -= (w * zj) * delta
                        theta[j] = new
                        max_delta = max(max_delta, abs(delta))
                if sum_w > 1e-12:
                    delta0 = float(resid.sum()) / sum_w
                    if delta0 != 0.0:
                        b0 += delta0
                        resid -= w * delta0
                        max_delta = max(max_delta, abs(delta0))
                if max_delta < inner_tol:
                    break
            obj = _penalized_objective(b0, theta, Z, y, lam)
            # The quadratic model can overshoot; halve back toward the previous
            # iterate until the exact objective stops increasing.
            halvings = 0
            while obj > obj_prev + 1e-12 and halvings < 10:
                b0 = 0.5 * (b0 + b0_prev)
                theta = 0.5 * (theta + theta_prev)
                obj = _penalized_objective(b0, theta, Z, y, lam)
                halvings += 1
            if obj > obj_prev + 1e-12:
                b0, theta, obj = b0_prev, theta_prev, obj_prev
                break
            trace.append(obj)
            change = max(abs(b0 - b0_prev),
                         float(np.max(np.abs(theta - theta_prev))) if d else 0.0)
            if change < outer_tol:
                score = Z.T @ (y - sigmoid(b0 + Z @ theta)) / n
                if _kkt_residual(score, theta, lam) <= kkt_tol:
                    converged = True
                    break

        # Coordinates below the numerical noise floor are exact zeros of the
        # solution (they arise from sub-ulp rounding of the threshold test).
        exported = np.where(np.abs(theta) < 1e-10, 0.0, theta)
        solutions[li, 0] = b0
        solutions[li, 1:] = exported
        converged_flags.append(converged)
        traces.append(tuple(trace))
        intercept, coefs = std.coefficients_to_original(b0, exported)
        coeffs_list.append(_penalized_to_coeffs(coefs, intercept, p))
        support_sizes.append(int(np.count_nonzero(exported)))

    return LassoPath(
        lambdas=lambdas,
        coeffs=tuple(coeffs_list),
        support_sizes=tuple(support_sizes),
        feature_names=ds.feature_names,
        std_solutions=solutions,
        standardization=std,
        converged=tuple(converged_flags),
        objective_traces=tuple(traces),
    )


def penalized_score(ds: UpliftDataset, intercept_std: float, theta_std: np.ndarray) -> np.ndarray:
    """Standardized-scale gradient of the mean log-likelihood, used for KKT checks."""
    design = interaction_design(ds)
    Z = Standardization.fit(design).apply(design)
    prob = sigmoid(intercept_std + Z @ theta_std)
    return Z.T @ (ds.outcome.astype(float) - prob) / ds.n


# ---------------------------------------------------------------------------
# Interpretation helpers

Z_95 = 1.959963984540054  # two-sided 95% normal quantile


def odds_ratio(coeffs: UpliftCoefficients, j: int, t: int) -> float:
    """Multiplicative change in the response odds per unit of feature j under arm t."""
    if not 0 <= j < coeffs.p:
        raise IndexError(f"feature index {j} out of range for p={coeffs.p}")
    if t not in (0, 1):
        raise DataValidationError(f"t must be 0 or 1, got {t}")
    return float(math.exp(coeffs.main[j]) * math.exp(coeffs.interact[j] * t))


def group_odds_ratio(coeffs: UpliftCoefficients, j: int, t: int,
                     mean_a: float, mean_b: float) -> float:
    """Odds ratio between two groups whose feature-j means differ by mean_a - mean_b."""
    if not (math.isfinite(mean_a) and math.isfinite(mean_b)):
        raise DataValidationError("group means must be finite")
    return float(odds_ratio(coeffs, j, t) ** (mean_a - mean_b))


def coefficient_covariance(coeffs: UpliftCoefficients, ds: UpliftDataset) -> np.ndarray:
    """Inverse observed information at the fitted coefficients.

    Returned as a full (2p+2) x (2p+2) matrix in flat layout with zero rows and
    columns for coordinates outside the active support.  The fit must be a
    maximum-likelihood solution for the numbers to mean anything.
    """
    p = ds.p
    active = np.asarray(coeffs.support(), dtype=int)
    design = interaction_design(ds)[:, active] if active.size else np.zeros((ds.n, 0))
    A = np.hstack([np.ones((ds.n, 1)), design])
    eta0 = coeffs.intercept + ds.features @ coeffs.main
    eta1 = eta0 + coeffs.treat + ds.features @ coeffs.interact
    prob = sigmoid(np.where(ds.treatment == 1, eta1, eta0))
    w = prob * (1.0 - prob)
    info = (A * w[:, None]).T @ A
    try:
        chol = np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        raise NumericalError("singular information matrix") from None
    inv_chol = np.linalg.solve(chol, np.eye(info.shape[0]))
    cov_active = inv_chol.T @ inv_chol
    full = np.zeros((2 * p + 2, 2 * p + 2))
    # flat layout index of penalized coordinate j is j + 1
    idx = np.concatenate(([0], active + 1))
    full[np.ix_(idx, idx)] = cov_active
    return full
