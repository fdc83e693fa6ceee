"""Synthetic ground truth and the replicated simulation harness.

A small bagged ensemble of uplift decision trees (split on the divergence
between treated and control outcome rates) serves as the data-generating
process: its per-leaf arm rates define true response probabilities under both
arms, hence a known individual uplift.  The harness repeatedly subsamples a
base population, rebuilds the ground truth, draws synthetic outcomes, fits the
requested estimators on a random predictor subset and aggregates their scores.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (
    DataValidationError,
    RandomSeed,
    UpliftDataset,
    as_seed,
    sigmoid,
    uplift_scores,
)
from .glm import fit_lasso_path, fit_mle, lambda_sequence
from .metrics import evaluate, uplift_rmse
from .search import (
    LhsConfig,
    MetricKind,
    NmOptions,
    _lhs_search_multi,
    nelder_mead_search,
)

log = logging.getLogger(__name__)

ESTIMATORS = (
    "Baseline",
    "Q+lasso",
    "Q+LHS_q",
    "Q+LHS_rho",
    "Q+LHS_qadj",
    "Base+NM",
    "Q+NM",
    "RF-truth-benchmark",
)

METRIC_COLUMNS = ("qini", "kendall", "adjusted_qini", "rmse", "rrmse")

_LHS_METRIC_BY_ESTIMATOR = {
    "Q+LHS_q": MetricKind.QINI,
    "Q+LHS_rho": MetricKind.KENDALL,
    "Q+LHS_qadj": MetricKind.ADJUSTED_QINI,
}


# ---------------------------------------------------------------------------
# Uplift decision tree


@dataclass(frozen=True)
class _Leaf:
    p_treated: float
    p_control: float


@dataclass(frozen=True)
class _Split:
    feature: int
    threshold: float
    left: "_Split | _Leaf"
    right: "_Split | _Leaf"


def _smoothed_divergence(resp_t, n_t, resp_c, n_c):
    """KL divergence between the arm response distributions, add-one smoothed."""
    pt = (resp_t + 1.0) / (n_t + 2.0)
    pc = (resp_c + 1.0) / (n_c + 2.0)
    return pt * np.log(pt / pc) + (1.0 - pt) * np.log((1.0 - pt) / (1.0 - pc))


@dataclass(frozen=True)
class UpliftTree:
    """Axis-aligned binary partition whose leaves hold per-arm response rates."""

    root: "_Split | _Leaf"
    depth_limit: int
    feature_gain: np.ndarray  # accumulated split gain per feature

    def predict_pair(self, X: np.ndarray):
        """(treated rate, control rate) for every row."""
        X = np.asarray(X, dtype=float)
        n = X.shape[0]
        p1 = np.empty(n)
        p0 = np.empty(n)

        def fill(node, rows):
            if isinstance(node, _Leaf):
                p1[rows] = node.p_treated
                p0[rows] = node.p_control
                return
            go_left = X[rows, node.feature] <= node.threshold
            fill(node.left, rows[go_left])
            fill(node.right, rows[~go_left])

        fill(self.root, np.arange(n))
        return p1, p0


def _best_split(X, t, y, rows, min_node, max_thresholds):
    """Highest-gain (feature, threshold) with at least min_node observations of
    each arm in both children; None when no split qualifies."""
    t_node = t[rows]
    y_node = y[rows]
    n_node = rows.shape[0]
    nt = float(t_node.sum())
    nc = n_node - nt
    st = float((y_node * t_node).sum())
    sc = float((y_node * (1 - t_node)).sum())
    d_node = _smoothed_divergence(st, nt, sc, nc)

    best = None
    best_gain = 1e-12
    for f in range(X.shape[1]):
        vals = X[rows, f]
        order = np.argsort(vals, kind="stable")
        v_sorted = vals[order]
        change = np.flatnonzero(v_sorted[:-1] < v_sorted[1:])
        if change.size == 0:
            continue
        cuts = change + 1  # left child = first `cut` sorted rows
        if cuts.size > max_thresholds:
            pick = np.unique(np.round(np.linspace(0, cuts.size - 1, max_thresholds)).astype(int))
            cuts = cuts[pick]
        t_sorted = t_node[order].astype(float)
        y_sorted = y_node[order].astype(float)
        cum_t = np.cumsum(t_sorted)
        cum_st = np.cumsum(t_sorted * y_sorted)
        cum_c = np.cumsum(1.0 - t_sorted)
        cum_sc = np.cumsum((1.0 - t_sorted) * y_sorted)

        nt_l = cum_t[cuts - 1]
        nc_l = cum_c[cuts - 1]
        nt_r = nt - nt_l
        nc_r = nc - nc_l
        valid = (nt_l >= min_node) & (nc_l >= min_node) & (nt_r >= min_node) & (nc_r >= min_node)
        if not np.any(valid):
            continue
        st_l = cum_st[cuts - 1]
        sc_l = cum_sc[cuts - 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            d_left = _smoothed_divergence(st_l, nt_l, sc_l, nc_l)
            d_right = _smoothed_divergence(st - st_l, nt_r, sc - sc_l, nc_r)
        w_left = cuts / n_node
        gain = w_left * d_left + (1.0 - w_left) * d_right - d_node
        gain = np.where(valid, gain, -np.inf)
        arg = int(np.argmax(gain))
        if gain[arg] > best_gain:
            cut = int(cuts[arg])
            threshold = 0.5 * (v_sorted[cut - 1] + v_sorted[cut])
            best = (f, float(threshold))
            best_gain = float(gain[arg])
    return (best, best_gain) if best is not None else (None, 0.0)


def fit_uplift_tree(ds: UpliftDataset, depth: int, *, min_node: int = 30,
                    max_thresholds: int = 32) -> UpliftTree:
    """Greedy recursive partition maximizing the smoothed divergence gain
    between arm outcome distributions; unsplittable nodes become leaves."""
    if depth < 0:
        raise DataValidationError(f"depth must be >= 0, got {depth}")
    X = ds.features
    t = ds.treatment
    y = ds.outcome
    feature_gain = np.zeros(ds.p)

    def leaf(rows) -> _Leaf:
        t_node = t[rows]
        y_node = y[rows]
        nt = int(t_node.sum())
        nc = rows.shape[0] - nt
        p1 = float((y_node * t_node).sum()) / nt
        p0 = float((y_node * (1 - t_node)).sum()) / nc
        return _Leaf(p1, p0)

    def build(rows, remaining):
        # a split needs min_node of each arm in both children
        if remaining == 0 or rows.shape[0] < 4 * min_node:
            return leaf(rows)
        split, gain = _best_split(X, t, y, rows, min_node, max_thresholds)
        if split is None:
            return leaf(rows)
        f, threshold = split
        feature_gain[f] += gain * rows.shape[0]
        go_left = X[rows, f] <= threshold
        return _Split(f, threshold,
                      build(rows[go_left], remaining - 1),
                      build(rows[~go_left], remaining - 1))

    root = build(np.arange(ds.n), depth)
    return UpliftTree(root, depth, feature_gain)


@dataclass(frozen=True)
class SyntheticTruth:
    """Bagged uplift trees exposing true arm probabilities and true uplift."""

    trees: tuple[UpliftTree, ...]

    def predict_pair(self, X: np.ndarray):
        p1 = np.zeros(X.shape[0])
        p0 = np.zeros(X.shape[0])
        for tree in self.trees:
            a, b = tree.predict_pair(X)
            p1 += a
            p0 += b
        k = len(self.trees)
        return p1 / k, p0 / k

    def uplift(self, X: np.ndarray) -> np.ndarray:
        p1, p0 = self.predict_pair(X)
        return p1 - p0

    def feature_importance(self) -> np.ndarray:
        return np.sum([tree.feature_gain for tree in self.trees], axis=0)


def _bootstrap_rows(ds: UpliftDataset, rng: np.random.Generator, *,
                    max_tries: int = 100) -> np.ndarray:
    for _ in range(max_tries):
        rows = rng.integers(0, ds.n, ds.n)
        t = ds.treatment[rows]
        if t.sum() >= 1 and (1 - t).sum() >= 1:
            return rows
    raise DataValidationError("bootstrap cannot retain both treatment arms")


def build_truth(ds: UpliftDataset, depth: int, n_trees: int,
                seed: RandomSeed | int, *, min_node: int = 30,
                max_thresholds: int = 32) -> SyntheticTruth:
    """Fit one tree per bootstrap resample; probabilities are ensemble means."""
    if n_trees < 1:
        raise DataValidationError(f"need at least one tree, got {n_trees}")
    rng = as_seed(seed).stream("truth-bootstrap")
    trees = []
    for _ in range(n_trees):
        rows = _bootstrap_rows(ds, rng)
        trees.append(fit_uplift_tree(ds.take(rows), depth, min_node=min_node,
                                     max_thresholds=max_thresholds))
    return SyntheticTruth(tuple(trees))


@dataclass(frozen=True)
class SyntheticData:
    data: UpliftDataset
    true_uplift: np.ndarray


def generate_synthetic(truth: SyntheticTruth, base: UpliftDataset,
                       seed: RandomSeed | int) -> SyntheticData:
    """Bootstrap the base rows and draw both potential outcomes per row; the
    observed outcome follows the row's kept treatment indicator and the true
    uplift is attached for error measurement."""
    rng = as_seed(seed).stream("synthetic-outcomes")
    n = base.n
    for _ in range(100):
        rows = rng.integers(0, n, n)
        X = base.features[rows]
        t = base.treatment[rows]
        p1, p0 = truth.predict_pair(X)
        y1 = (rng.random(n) < p1).astype(np.int64)
        y0 = (rng.random(n) < p0).astype(np.int64)
        y = np.where(t == 1, y1, y0)
        if t.sum() >= 1 and (1 - t).sum() >= 1:
            ds = UpliftDataset(X, t, y, base.feature_names)
            return SyntheticData(ds, p1 - p0)
    raise DataValidationError("synthetic sample cannot retain both treatment arms")


# ---------------------------------------------------------------------------
# Base population


def make_base_population(n: int, p: int, seed: RandomSeed | int, *,
                         treated_fraction: float = 0.5) -> UpliftDataset:
    """Configurable stand-in for a campaign population: independent standard
    normal features interleaved with Bernoulli dummies, randomized treatment,
    and outcomes from a sparse latent logistic model with treatment
    interactions so the ground-truth ensemble has real structure to find."""
    if n < 10 or p < 1:
        raise DataValidationError("base population needs n >= 10 and p >= 1")
    if not 0.0 < treated_fraction < 1.0:
        raise DataValidationError("treated_fraction must lie strictly between 0 and 1")
    seed = as_seed(seed)
    rng = seed.stream("base-features")
    X = np.empty((n, p))
    for j in range(p):
        if j % 2 == 0:
            X[:, j] = rng.standard_normal(n)
        else:
            X[:, j] = (rng.random(n) < rng.uniform(0.1, 0.9)).astype(float)
    t = (seed.stream("base-treatment").random(n) < treated_fraction).astype(np.int64)

    # Signal spread over about half the features with moderate weights: the
    # resulting tree-ensemble truth stays largely expressible by the logistic
    # interaction model even when modeling uses a random predictor subset.
    coef_rng = seed.stream("base-coefficients")
    main = np.zeros(p)
    interact = np.zeros(p)
    n_main = max(1, p // 2)
    n_inter = max(1, p // 2)
    main[coef_rng.choice(p, n_main, replace=False)] = coef_rng.normal(0.0, 0.4, n_main)
    interact[coef_rng.choice(p, n_inter, replace=False)] = coef_rng.normal(0.0, 0.7, n_inter)
    intercept = 0.5
    gamma = coef_rng.normal(0.0, 0.1)

    eta = intercept + X @ main + t * (gamma + X @ interact)
    y = (seed.stream("base-outcomes").random(n) < sigmoid(eta)).astype(np.int64)
    names = tuple(f"x{j + 1:02d}" for j in range(p))
    return UpliftDataset(X, t, y, names)


# ---------------------------------------------------------------------------
# Simulation harness


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation scenario: ground-truth tree depth, number of modeling
    covariates, synthetic sample size and replication count."""

    depth: int
    k: int
    n_s: int
    replications: int
    seed: RandomSeed
    n_bins: int = 10
    p: int = 20
    n_base: int | None = None
    treated_fraction: float = 0.5
    n_trees: int = 50
    min_node: int = 30
    lambda_count: int = 100
    lambda_eps: float | None = None
    lhs_samples: int = 100
    lhs_radius_rel: float = 0.5
    lhs_radius_floor: float = 0.1
    predictor_selection: str = "random"

    def __post_init__(self):
        object.__setattr__(self, "seed", as_seed(self.seed))
        if self.depth < 0:
            raise DataValidationError("depth must be >= 0")
        if not 1 <= self.k <= self.p:
            raise DataValidationError(f"k must lie in [1, p={self.p}], got {self.k}")
        if self.n_s < 10:
            raise DataValidationError("n_s must be at least 10")
        if self.replications < 1:
            raise DataValidationError("need at least one replication")
        if self.predictor_selection not in ("random", "importance"):
            raise DataValidationError(
                f"unknown predictor_selection {self.predictor_selection!r}"
            )

    @property
    def base_size(self) -> int:
        return self.n_base if self.n_base else 2 * self.n_s


@dataclass(frozen=True)
class SimulationResult:
    """Per-(estimator, metric) means and standard errors plus the per-replication
    values they were computed from."""

    config: ScenarioConfig
    estimators: tuple[str, ...]
    rows: tuple[dict, ...]  # estimator, metric, mean, se, M
    per_replication: dict  # estimator -> metric -> list of values
    first_stage_adjusted_qini: tuple[float, ...]
    n_failed: int

    def to_csv(self, path) -> None:
        """Columns: estimator, metric, mean, se, M."""
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["estimator", "metric", "mean", "se", "M"])
            for row in self.rows:
                writer.writerow([row["estimator"], row["metric"], repr(row["mean"]),
                                 repr(row["se"]), row["M"]])

    def to_text(self) -> str:
        """Fixed-width summary, one estimator per line, mean (se) per metric."""
        by_est = {}
        for row in self.rows:
            by_est.setdefault(row["estimator"], {})[row["metric"]] = row
        header = f"{'estimator':<20}" + "".join(f"{m:>18}" for m in METRIC_COLUMNS)
        lines = [header, "-" * len(header)]
        for est in self.estimators:
            cells = []
            for m in METRIC_COLUMNS:
                row = by_est[est][m]
                cells.append(f"{row['mean']:9.3f} ({row['se']:.3f})")
            lines.append(f"{est:<20}" + "".join(f"{c:>18}" for c in cells))
        if self.n_failed:
            lines.append(f"excluded replications: {self.n_failed}")
        return "\n".join(lines) + "\n"


def _stratified_subsample(base: UpliftDataset, size: int, rng: np.random.Generator) -> np.ndarray:
    """Rows drawn without replacement, allocated across (treatment, outcome)
    cells proportionally with largest-remainder rounding."""
    if size > base.n:
        raise DataValidationError(f"cannot subsample {size} rows from {base.n}")
    cells = []
    for t_val in (0, 1):
        for y_val in (0, 1):
            idx = np.flatnonzero((base.treatment == t_val) & (base.outcome == y_val))
            if idx.size:
                cells.append(idx)
    raw = np.array([c.size * size / base.n for c in cells])
    alloc = np.floor(raw).astype(int)
    remainder_order = np.argsort(-(raw - alloc), kind="stable")
    for i in remainder_order:
        if alloc.sum() >= size:
            break
        if alloc[i] < cells[i].size:
            alloc[i] += 1
    # round-robin top-up in case largest-remainder hit a cell-size cap
    i = 0
    while alloc.sum() < size:
        if alloc[i] < cells[i].size:
            alloc[i] += 1
        i = (i + 1) % len(cells)
    chosen = [rng.choice(c, size=a, replace=False) for c, a in zip(cells, alloc)]
    return np.sort(np.concatenate(chosen))


def _first_stage_values(path, ds, n_bins):
    values = np.full(path.n_lambdas, -np.inf)
    for i, coeffs in enumerate(path.coeffs):
        pred = uplift_scores(coeffs, ds.features)
        try:
            values[i] = evaluate(ds, pred, n_bins).adjusted_qini
        except Exception:  # infeasible bins for this solution
            continue
    return values


def _run_replication(cfg: ScenarioConfig, estimators, base: UpliftDataset, m: int):
    rep_seed = cfg.seed.child(f"rep-{m}")
    rows = _stratified_subsample(base, cfg.n_s, rep_seed.stream("subsample"))
    sample = base.take(rows)
    truth = build_truth(sample, cfg.depth, cfg.n_trees, rep_seed.child("truth"),
                        min_node=cfg.min_node)
    synthetic = generate_synthetic(truth, sample, rep_seed.child("outcomes"))

    if cfg.predictor_selection == "importance":
        importance = truth.feature_importance()
        cols = np.sort(np.argsort(-importance, kind="stable")[: cfg.k])
    else:
        cols = np.sort(rep_seed.stream("predictors").choice(cfg.p, cfg.k, replace=False))
    ds = synthetic.data.select_features(cols)
    true_u = synthetic.true_uplift
    n_bins = cfg.n_bins

    predictions: dict[str, np.ndarray] = {}
    baseline_coeffs, _ = fit_mle(ds)
    predictions["Baseline"] = uplift_scores(baseline_coeffs, ds.features)

    needs_path = any(e in estimators for e in
                     ("Q+lasso", "Q+LHS_q", "Q+LHS_rho", "Q+LHS_qadj", "Q+NM"))
    first_stage = math.nan
    if needs_path:
        lambdas = lambda_sequence(ds, cfg.lambda_count, cfg.lambda_eps)
        path = fit_lasso_path(ds, lambdas)
        stage_values = _first_stage_values(path, ds, n_bins)
        stage_index = int(np.argmax(stage_values))
        first_stage = float(stage_values[stage_index])
        if "Q+lasso" in estimators:
            support = path.coeffs[stage_index].support()
            refit, _ = fit_mle(ds, support)
            predictions["Q+lasso"] = uplift_scores(refit, ds.features)
        lhs_kinds = tuple(_LHS_METRIC_BY_ESTIMATOR[e] for e in estimators
                          if e in _LHS_METRIC_BY_ESTIMATOR)
        if lhs_kinds:
            lhs_cfg = LhsConfig(cfg.lhs_samples, cfg.lhs_radius_rel, cfg.lhs_radius_floor,
                                True, rep_seed.child("lhs"))
            found = _lhs_search_multi(path, ds, lhs_kinds, n_bins, lhs_cfg)
            for est, kind in _LHS_METRIC_BY_ESTIMATOR.items():
                if est in estimators:
                    predictions[est] = uplift_scores(found[kind].coefficients, ds.features)
        if "Q+NM" in estimators:
            result = nelder_mead_search(path.coeffs[stage_index], ds,
                                        MetricKind.ADJUSTED_QINI, n_bins)
            predictions["Q+NM"] = uplift_scores(result.coefficients, ds.features)
    if "Base+NM" in estimators:
        result = nelder_mead_search(baseline_coeffs, ds, MetricKind.ADJUSTED_QINI, n_bins)
        predictions["Base+NM"] = uplift_scores(result.coefficients, ds.features)
    if "RF-truth-benchmark" in estimators:
        predictions["RF-truth-benchmark"] = true_u.copy()

    baseline_rmse = uplift_rmse(true_u, predictions["Baseline"])
    scores: dict[str, dict[str, float]] = {}
    for est in estimators:
        pred = predictions[est]
        report = evaluate(ds, pred, n_bins)
        rmse = uplift_rmse(true_u, pred)
        scores[est] = {
            "qini": report.qini,
            "kendall": report.kendall,
            "adjusted_qini": report.adjusted_qini,
            "rmse": rmse,
            "rrmse": rmse / baseline_rmse if baseline_rmse > 0 else math.nan,
        }
    return scores, first_stage


def run_simulation(cfg: ScenarioConfig, estimators, *, base: UpliftDataset | None = None,
                   threads: int = 1) -> SimulationResult:
    """Replicate the scenario and aggregate per-estimator metric means and
    standard errors.  Output is a pure function of (config, estimators, seed,
    base); the thread count only controls how replications are scheduled."""
    estimators = tuple(estimators)
    if not estimators:
        raise DataValidationError("estimator list is empty")
    unknown = [e for e in estimators if e not in ESTIMATORS]
    if unknown:
        raise DataValidationError(
            f"unknown estimators {unknown}; choose from {list(ESTIMATORS)}"
        )
    if base is None:
        base = make_base_population(cfg.base_size, cfg.p, cfg.seed.child("base"),
                                    treated_fraction=cfg.treated_fraction)
    elif base.p != cfg.p:
        raise DataValidationError(
            f"base population has p={base.p} features but the scenario expects {cfg.p}"
        )

    failures: list[tuple[int, str]] = []

    def work(m):
        try:
            scores, stage = _run_replication(cfg, estimators, base, m)
            return ("ok", scores, stage)
        except Exception as exc:
            return ("failed", f"{type(exc).__name__}: {exc}", math.nan)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(cfg.replications)))
    else:
        results = [work(m) for m in range(cfg.replications)]

    per_rep = {est: {m: [] for m in METRIC_COLUMNS} for est in estimators}
    first_stage: list[float] = []
    for m, (status, payload, stage) in enumerate(results):
        if status == "failed":
            failures.append((m, payload))
            log.warning("replication %d failed: %s", m, payload)
            continue
        scores = payload
        first_stage.append(stage)
        for est in estimators:
            for metric in METRIC_COLUMNS:
                per_rep[est][metric].append(scores[est][metric])

    n_ok = cfg.replications - len(failures)
    if n_ok == 0:
        raise DataValidationError("every replication failed; check the scenario")
    rows = []
    for est in estimators:
        for metric in METRIC_COLUMNS:
            vals = np.asarray(per_rep[est][metric], dtype=float)
            se = float(vals.std(ddof=1) / math.sqrt(n_ok)) if n_ok > 1 else 0.0
            rows.append({"estimator": est, "metric": metric,
                         "mean": float(vals.mean()), "se": se, "M": n_ok})
    return SimulationResult(cfg, estimators, tuple(rows), per_rep,
                            tuple(first_stage), len(failures))
