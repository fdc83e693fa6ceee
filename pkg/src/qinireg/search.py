"""Derivative-free maximization of uplift metrics over coefficient space.

Two strategies: Latin hypercube sampling in boxes around each penalized-path
solution (the path solutions themselves stay in the candidate set, so the
search can never fall below the best path solution), and Nelder-Mead simplex
refinement from a single starting point.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .data import (
    BinConstructionError,
    DataValidationError,
    RandomSeed,
    UpliftCoefficients,
    UpliftDataset,
    as_seed,
    sigmoid,
)
from .glm import LassoPath
from .metrics import EvaluationReport, evaluate

log = logging.getLogger(__name__)


class MetricKind(enum.Enum):
    QINI = "qini"
    KENDALL = "kendall"
    ADJUSTED_QINI = "adjusted_qini"

    @classmethod
    def from_string(cls, name: str) -> "MetricKind":
        key = name.strip().lower().replace("-", "_")
        aliases = {"qini": cls.QINI, "q": cls.QINI,
                   "kendall": cls.KENDALL, "rho": cls.KENDALL,
                   "adjusted_qini": cls.ADJUSTED_QINI, "qadj": cls.ADJUSTED_QINI}
        if key not in aliases:
            raise DataValidationError(f"unknown metric {name!r}")
        return aliases[key]


def metric_value(report: EvaluationReport, kind: MetricKind) -> float:
    if kind is MetricKind.QINI:
        return report.qini
    if kind is MetricKind.KENDALL:
        return report.kendall
    return report.adjusted_qini


def evaluate_flat(flat: np.ndarray, X: np.ndarray, ds: UpliftDataset,
                  n_bins: int, kind: MetricKind) -> float:
    """Metric of one flat coefficient vector on a dataset."""
    p = X.shape[1]
    eta0 = flat[0] + X @ flat[1 : p + 1]
    eta1 = eta0 + flat[p + 1] + X @ flat[p + 2 :]
    pred = sigmoid(eta1) - sigmoid(eta0)
    return metric_value(evaluate(ds, pred, n_bins), kind)


@dataclass(frozen=True)
class LhsConfig:
    """Box and sample-count settings for the Latin hypercube exploration.

    Each perturbed coordinate j gets the box [c_j - w_j, c_j + w_j] with
    half-width w_j = max(radius_rel * |c_j|, radius_floor).  With
    ``perturb_support_only`` (the default), coordinates that are exactly zero
    at the center stay exactly zero; the intercept and the treatment effect
    are always perturbed.
    """

    samples_per_center: int = 100
    radius_rel: float = 0.5
    radius_floor: float = 0.1
    perturb_support_only: bool = True
    seed: RandomSeed = field(default_factory=lambda: RandomSeed(0))

    def __post_init__(self):
        if self.samples_per_center < 1:
            raise DataValidationError("samples_per_center must be >= 1")
        if self.radius_rel < 0 or self.radius_floor < 0:
            raise DataValidationError("radii must be nonnegative")
        if self.radius_rel == 0 and self.radius_floor == 0:
            raise DataValidationError("radius_rel and radius_floor cannot both be zero")
        object.__setattr__(self, "seed", as_seed(self.seed))


@dataclass(frozen=True)
class SearchResult:
    coefficients: UpliftCoefficients
    value: float
    origin: str
    n_evaluations: int
    evaluation_log: tuple[tuple[str, float], ...] = ()

    def to_json_dict(self, verbose: bool = False) -> dict:
        payload = {
            "value": self.value,
            "origin": self.origin,
            "n_evaluations": self.n_evaluations,
            "coefficients": {
                "intercept": self.coefficients.intercept,
                "main": [float(v) for v in self.coefficients.main],
                "treat": self.coefficients.treat,
                "interact": [float(v) for v in self.coefficients.interact],
            },
        }
        if verbose:
            payload["evaluations"] = [
                {"origin": o, "value": v} for o, v in self.evaluation_log
            ]
        return payload


def _perturbed_indices(center_flat: np.ndarray, p: int, support_only: bool) -> np.ndarray:
    if not support_only:
        return np.arange(center_flat.size)
    always = {0, p + 1}  # intercept and treatment effect
    nonzero = set(int(i) for i in np.flatnonzero(center_flat != 0.0))
    return np.asarray(sorted(always | nonzero), dtype=int)


def _lhs_flat(center_flat: np.ndarray, perturbed: np.ndarray, cfg: LhsConfig,
              rng: np.random.Generator) -> np.ndarray:
    """L flat rows; per perturbed coordinate, each of the L equal strata of the
    box holds exactly one sample, strata paired across coordinates by a random
    permutation."""
    L = cfg.samples_per_center
    out = np.tile(center_flat, (L, 1))
    for j in perturbed:
        c = center_flat[j]
        width = max(cfg.radius_rel * abs(c), cfg.radius_floor)
        strata = rng.permutation(L)
        offsets = rng.random(L)
        out[:, j] = (c - width) + (strata + offsets) * (2.0 * width / L)
    return out


def latin_hypercube(center: UpliftCoefficients, cfg: LhsConfig, *,
                    label: str = "lhs") -> list[UpliftCoefficients]:
    """Latin hypercube sample of coefficient vectors around a center."""
    flat = center.flat()
    perturbed = _perturbed_indices(flat, center.p, cfg.perturb_support_only)
    rows = _lhs_flat(flat, perturbed, cfg, cfg.seed.stream(label))
    return [UpliftCoefficients.from_flat(row) for row in rows]


def lhs_search(path: LassoPath, ds: UpliftDataset, metric: MetricKind,
               n_bins: int, cfg: LhsConfig, *, keep_log: bool = False) -> SearchResult:
    """Maximize the metric over every path solution plus L hypercube samples
    around each of them.

    Ties go to the sparser end of the path (larger penalty), then to the lower
    sample index; candidates whose metric cannot be evaluated are skipped with
    a logged warning.  Deterministic given the configuration seed.
    """
    results = _lhs_search_multi(path, ds, (metric,), n_bins, cfg, keep_log=keep_log)
    return results[metric]


def _lhs_search_multi(path: LassoPath, ds: UpliftDataset, metrics: tuple[MetricKind, ...],
                      n_bins: int, cfg: LhsConfig, *, keep_log: bool = False):
    """One candidate sweep scored under several metrics at once.

    Every candidate, center or sample, goes through the exact same evaluation
    path as a standalone call, so re-evaluating a winner reproduces its value
    bit-for-bit and the per-metric argmax can never fall below any path center.
    """
    if path.n_lambdas == 0:
        raise DataValidationError("cannot search an empty path")
    X = ds.features
    p = ds.p
    best_value = {m: -np.inf for m in metrics}
    best_flat: dict[MetricKind, np.ndarray | None] = {m: None for m in metrics}
    best_origin = {m: "" for m in metrics}
    n_eval = 0
    log_rows: dict[MetricKind, list[tuple[str, float]]] = {m: [] for m in metrics}

    for li in range(path.n_lambdas):
        center_flat = path.coeffs[li].flat()
        perturbed = _perturbed_indices(center_flat, p, cfg.perturb_support_only)
        rng = cfg.seed.stream(f"lhs-center-{li}")
        samples = _lhs_flat(center_flat, perturbed, cfg, rng)
        candidates = np.vstack([center_flat[None, :], samples])
        for ci in range(candidates.shape[0]):
            origin = (f"lambda[{li}].center" if ci == 0
                      else f"lambda[{li}].sample[{ci - 1}]")
            n_eval += 1
            flat = candidates[ci]
            eta0 = flat[0] + X @ flat[1 : p + 1]
            eta1 = eta0 + flat[p + 1] + X @ flat[p + 2 :]
            pred = sigmoid(eta1) - sigmoid(eta0)
            try:
                report = evaluate(ds, pred, n_bins)
            except BinConstructionError as exc:
                log.warning("skipping candidate %s: %s", origin, exc)
                continue
            for m in metrics:
                value = metric_value(report, m)
                if keep_log:
                    log_rows[m].append((origin, value))
                if value > best_value[m]:
                    best_value[m] = value
                    best_flat[m] = flat.copy()
                    best_origin[m] = origin

    out: dict[MetricKind, SearchResult] = {}
    for m in metrics:
        if best_flat[m] is None:
            raise BinConstructionError("no search candidate could be evaluated")
        out[m] = SearchResult(UpliftCoefficients.from_flat(best_flat[m]), best_value[m],
                              best_origin[m], n_eval, tuple(log_rows[m]))
    return out


# ---------------------------------------------------------------------------
# Nelder-Mead


@dataclass(frozen=True)
class NmOptions:
    max_iter: int = 500
    spread_tol: float = 1e-8
    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5


def nelder_mead(objective, x0, opts: NmOptions = NmOptions(), *, initial_step=None):
    """Simplex maximization of a black-box objective.

    Returns ``(x_best, f_best, trace, n_evaluations)`` where the best point is
    tracked over every evaluation (so the result is never worse than the start)
    and ``trace`` is the best-so-far value after each iteration.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    d = x0.size
    if initial_step is None:
        initial_step = np.maximum(0.05 * np.abs(x0), 0.01)
    else:
        initial_step = np.asarray(initial_step, dtype=float).reshape(-1)

    best_x = x0.copy()
    best_f = -np.inf
    n_eval = 0

    def f(x):
        nonlocal best_x, best_f, n_eval
        value = float(objective(x))
        n_eval += 1
        if value > best_f:
            best_f = value
            best_x = np.asarray(x, dtype=float).copy()
        return value

    simplex = [x0.copy()]
    for j in range(d):
        vertex = x0.copy()
        vertex[j] += initial_step[j]
        simplex.append(vertex)
    values = [f(v) for v in simplex]
    trace = [best_f]

    for _ in range(opts.max_iter):
        order = np.argsort(values)[::-1]  # best first (maximization)
        simplex = [simplex[i] for i in order]
        values = [values[i] for i in order]
        spread = values[0] - values[-1]
        if np.isfinite(spread) and spread < opts.spread_tol:
            break
        centroid = np.mean(simplex[:-1], axis=0)
        worst = simplex[-1]
        reflected = centroid + opts.reflection * (centroid - worst)
        f_r = f(reflected)
        if f_r > values[0]:
            expanded = centroid + opts.expansion * (reflected - centroid)
            f_e = f(expanded)
            if f_e > f_r:
                simplex[-1], values[-1] = expanded, f_e
            else:
                simplex[-1], values[-1] = reflected, f_r
        elif f_r > values[-2]:
            simplex[-1], values[-1] = reflected, f_r
        else:
            contracted = centroid + opts.contraction * (worst - centroid)
            f_c = f(contracted)
            if f_c > values[-1]:
                simplex[-1], values[-1] = contracted, f_c
            else:
                for i in range(1, d + 1):
                    simplex[i] = simplex[0] + opts.shrink * (simplex[i] - simplex[0])
                    values[i] = f(simplex[i])
        trace.append(best_f)

    return best_x, best_f, trace, n_eval


def nelder_mead_search(init: UpliftCoefficients, ds: UpliftDataset,
                       metric: MetricKind, n_bins: int,
                       opts: NmOptions = NmOptions()) -> SearchResult:
    """Refine a starting coefficient vector by simplex search over its active
    coordinates (support of the start plus intercept and treatment effect)."""
    flat = init.flat()
    active = _perturbed_indices(flat, init.p, support_only=True)
    X = ds.features

    def objective(values_active):
        candidate = flat.copy()
        candidate[active] = values_active
        try:
            return evaluate_flat(candidate, X, ds, n_bins, metric)
        except BinConstructionError:
            return -np.inf

    x_best, f_best, _trace, n_eval = nelder_mead(objective, flat[active], opts)
    out = flat.copy()
    out[active] = x_best
    return SearchResult(UpliftCoefficients.from_flat(out), f_best,
                        "nelder-mead", n_eval)
