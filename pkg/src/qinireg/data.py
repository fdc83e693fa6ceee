"""Core data model: datasets, model coefficients, CSV ingestion and seeded RNG streams.

Everything here is immutable after construction and safe to share between
concurrent readers; all operations are pure.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

# Linear predictors are clamped before exponentiation so probabilities stay
# strictly inside (0, 1) at float64 precision.
LINEAR_PREDICTOR_CLAMP = 35.0


class UpliftError(Exception):
    """Base class for errors raised by this package."""


class DataValidationError(UpliftError):
    """Input data violates a documented contract (bad CSV, bad shapes, ...)."""


class BinConstructionError(UpliftError):
    """Observations cannot be partitioned into usable uplift bins."""


class FoldError(UpliftError):
    """A cross-validation fold cannot be constructed or evaluated."""


class NumericalError(UpliftError):
    """A numerical routine cannot produce a usable result."""


def _as_float_matrix(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 2:
        raise DataValidationError(f"{name} must be a 2-d matrix, got ndim={arr.ndim}")
    return arr


def _as_binary_vector(x, name: str, n: int) -> np.ndarray:
    arr = np.asarray(x)
    if arr.ndim != 1 or arr.shape[0] != n:
        raise DataValidationError(f"{name} must be a length-{n} vector")
    values = np.unique(arr)
    if not np.all(np.isin(values, (0, 1))):
        raise DataValidationError(f"{name} must contain only 0/1 values")
    return arr.astype(np.int64)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class UpliftDataset:
    """Feature matrix plus binary treatment and binary outcome vectors."""

    features: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    feature_names: tuple[str, ...]

    def __post_init__(self):
        X = _as_float_matrix(self.features, "features")
        n = X.shape[0]
        if n < 2:
            raise DataValidationError(f"need at least 2 observations, got {n}")
        if not np.all(np.isfinite(X)):
            bad = np.argwhere(~np.isfinite(X))[0]
            raise DataValidationError(
                f"non-finite feature value at row {bad[0]}, column {bad[1]}"
            )
        t = _as_binary_vector(self.treatment, "treatment", n)
        y = _as_binary_vector(self.outcome, "outcome", n)
        if t.sum() < 1:
            raise DataValidationError("empty treated arm")
        if (1 - t).sum() < 1:
            raise DataValidationError("empty control arm")
        names = tuple(str(s) for s in self.feature_names)
        if len(names) != X.shape[1]:
            raise DataValidationError(
                f"feature_names has {len(names)} entries for {X.shape[1]} columns"
            )
        if len(set(names)) != len(names):
            raise DataValidationError("feature_names must be distinct")
        object.__setattr__(self, "features", _freeze(X))
        object.__setattr__(self, "treatment", _freeze(t))
        object.__setattr__(self, "outcome", _freeze(y))
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def n_treated(self) -> int:
        return int(self.treatment.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated

    def take(self, rows) -> "UpliftDataset":
        """Row subset (indices may repeat, e.g. bootstrap draws)."""
        rows = np.asarray(rows)
        return UpliftDataset(
            self.features[rows], self.treatment[rows], self.outcome[rows], self.feature_names
        )

    def select_features(self, columns: Sequence[int]) -> "UpliftDataset":
        """Column subset, preserving the given order."""
        cols = list(columns)
        return UpliftDataset(
            self.features[:, cols],
            self.treatment,
            self.outcome,
            tuple(self.feature_names[c] for c in cols),
        )

    def equals(self, other: "UpliftDataset") -> bool:
        return (
            self.feature_names == other.feature_names
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.treatment, other.treatment)
            and np.array_equal(self.outcome, other.outcome)
        )


@dataclass(frozen=True)
class UpliftCoefficients:
    """Parameters of the interaction logistic model.

    ``intercept`` is the free intercept, ``main`` the per-feature main
    effects, ``treat`` the treatment main effect and ``interact`` the
    per-feature treatment interactions.

    The flat layout used throughout the package is
    ``[intercept, main_1..main_p, treat, interact_1..interact_p]``;
    penalized-coordinate indices run over ``main`` (0..p-1), ``treat`` (p)
    and ``interact`` (p+1..2p).
    """

    intercept: float
    main: np.ndarray
    treat: float
    interact: np.ndarray

    def __post_init__(self):
        main = np.asarray(self.main, dtype=float).reshape(-1)
        interact = np.asarray(self.interact, dtype=float).reshape(-1)
        if main.shape != interact.shape:
            raise DataValidationError(
                f"main ({main.size}) and interact ({interact.size}) must have equal length"
            )
        values = np.concatenate(([self.intercept, self.treat], main, interact))
        if not np.all(np.isfinite(values)):
            raise DataValidationError("coefficients must be finite")
        object.__setattr__(self, "intercept", float(self.intercept))
        object.__setattr__(self, "treat", float(self.treat))
        object.__setattr__(self, "main", _freeze(main))
        object.__setattr__(self, "interact", _freeze(interact))

    @property
    def p(self) -> int:
        return self.main.shape[0]

    def flat(self) -> np.ndarray:
        """[intercept, main..., treat, interact...] as a fresh array."""
        return np.concatenate(([self.intercept], self.main, [self.treat], self.interact))

    @classmethod
    def from_flat(cls, vec) -> "UpliftCoefficients":
        vec = np.asarray(vec, dtype=float).reshape(-1)
        if vec.size < 2 or vec.size % 2 != 0:
            raise DataValidationError(f"flat coefficient vector has invalid length {vec.size}")
        p = (vec.size - 2) // 2
        return cls(vec[0], vec[1 : p + 1], vec[p + 1], vec[p + 2 :])

    @classmethod
    def zeros(cls, p: int) -> "UpliftCoefficients":
        return cls(0.0, np.zeros(p), 0.0, np.zeros(p))

    def penalized(self) -> np.ndarray:
        """[main..., treat, interact...]: the 2p+1 penalized coordinates."""
        return np.concatenate((self.main, [self.treat], self.interact))

    def support(self) -> tuple[int, ...]:
        """Indices of nonzero penalized coordinates."""
        return tuple(int(j) for j in np.flatnonzero(self.penalized() != 0.0))

    def n_nonzero(self) -> int:
        return int(np.count_nonzero(self.penalized()))


def clamp_eta(eta: np.ndarray | float):
    return np.clip(eta, -LINEAR_PREDICTOR_CLAMP, LINEAR_PREDICTOR_CLAMP)


def sigmoid(eta):
    return 1.0 / (1.0 + np.exp(-clamp_eta(eta)))


def _check_dim(coeffs: UpliftCoefficients, width: int):
    if width != coeffs.p:
        raise DataValidationError(
            f"feature vector has dimension {width}, coefficients expect {coeffs.p}"
        )


def predict_prob(coeffs: UpliftCoefficients, x, t: int) -> float:
    """Response probability for one unit with features ``x`` under arm ``t``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    _check_dim(coeffs, x.size)
    if t not in (0, 1):
        raise DataValidationError(f"t must be 0 or 1, got {t}")
    eta = coeffs.intercept + x @ coeffs.main
    if t == 1:
        eta += coeffs.treat + x @ coeffs.interact
    return float(sigmoid(eta))


def predict_uplift(coeffs: UpliftCoefficients, x) -> float:
    """Predicted individual uplift: treated minus control response probability."""
    return predict_prob(coeffs, x, 1) - predict_prob(coeffs, x, 0)


def uplift_scores(coeffs: UpliftCoefficients, features: np.ndarray) -> np.ndarray:
    """Vectorized predicted uplift for every row of an n-by-p matrix."""
    X = _as_float_matrix(features, "features")
    _check_dim(coeffs, X.shape[1])
    eta0 = coeffs.intercept + X @ coeffs.main
    eta1 = eta0 + coeffs.treat + X @ coeffs.interact
    return sigmoid(eta1) - sigmoid(eta0)


def response_probabilities(coeffs: UpliftCoefficients, ds: UpliftDataset) -> np.ndarray:
    """Fitted response probability of every observation under its own arm."""
    eta0 = coeffs.intercept + ds.features @ coeffs.main
    eta1 = eta0 + coeffs.treat + ds.features @ coeffs.interact
    return sigmoid(np.where(ds.treatment == 1, eta1, eta0))


# ---------------------------------------------------------------------------
# Seeded randomness


def _label_spawn_key(label: str) -> tuple[int, ...]:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))


@dataclass(frozen=True)
class RandomSeed:
    """Master seed; substreams are derived by hashing (seed, label) so results
    do not depend on execution order."""

    seed: int

    def __post_init__(self):
        if not isinstance(self.seed, (int, np.integer)):
            raise DataValidationError("seed must be an integer")
        if not 0 <= int(self.seed) < 2**64:
            raise DataValidationError("seed must fit in an unsigned 64-bit integer")
        object.__setattr__(self, "seed", int(self.seed))

    def stream(self, label: str) -> np.random.Generator:
        """Independent generator for the named task."""
        ss = np.random.SeedSequence(self.seed, spawn_key=_label_spawn_key(label))
        return np.random.default_rng(ss)

    def child(self, label: str) -> "RandomSeed":
        """Derived master seed for a named subsystem."""
        digest = hashlib.sha256(f"{self.seed}:{label}".encode("utf-8")).digest()
        return RandomSeed(int.from_bytes(digest[:8], "little"))


def as_seed(seed: "int | RandomSeed") -> RandomSeed:
    return seed if isinstance(seed, RandomSeed) else RandomSeed(seed)


# ---------------------------------------------------------------------------
# CSV ingestion

def _parse_binary(cell: str, column: str, row: int, kind: str) -> int:
    try:
        value = float(cell)
    except ValueError:
        raise DataValidationError(
            f"unparseable {kind} value {cell!r} at row {row}, column {column!r}"
        ) from None
    if value == 0.0:
        return 0
    if value == 1.0:
        return 1
    raise DataValidationError(f"non-binary {kind} at row {row}, column {column!r}: {cell!r}")


def load_csv(path, treatment_col: str, outcome_col: str) -> UpliftDataset:
    """Read a UTF-8, comma-separated file with a header row into a dataset.

    All columns other than the named treatment/outcome columns become
    features, in file order.  Rows are numbered from 1 (the header) in error
    messages.
    """
    path = Path(path)
    if not path.exists():
        raise DataValidationError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataValidationError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for required in (treatment_col, outcome_col):
            if required not in header:
                raise DataValidationError(f"{path}: missing column {required!r}")
        if treatment_col == outcome_col:
            raise DataValidationError("treatment and outcome columns must differ")
        t_idx = header.index(treatment_col)
        y_idx = header.index(outcome_col)
        feat_idx = [i for i in range(len(header)) if i not in (t_idx, y_idx)]
        feat_names = [header[i] for i in feat_idx]

        rows, t_vals, y_vals = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataValidationError(
                    f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}"
                )
            t_vals.append(_parse_binary(row[t_idx], treatment_col, lineno, "treatment"))
            y_vals.append(_parse_binary(row[y_idx], outcome_col, lineno, "outcome"))
            parsed = []
            for i in feat_idx:
                cell = row[i]
                try:
                    value = float(cell)
                except ValueError:
                    raise DataValidationError(
                        f"{path}: unparseable cell {cell!r} at row {lineno}, "
                        f"column {header[i]!r}"
                    ) from None
                if not math.isfinite(value):
                    raise DataValidationError(
                        f"{path}: non-finite value at row {lineno}, column {header[i]!r}"
                    )
                parsed.append(value)
            rows.append(parsed)

    if not rows:
        raise DataValidationError(f"{path}: no data rows")
    features = np.asarray(rows, dtype=float).reshape(len(rows), len(feat_idx))
    return UpliftDataset(features, np.asarray(t_vals), np.asarray(y_vals), tuple(feat_names))


def save_csv(ds: UpliftDataset, path, treatment_col: str = "treatment",
             outcome_col: str = "outcome") -> None:
    """Serialize a dataset back to the CSV layout accepted by :func:`load_csv`."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([treatment_col, outcome_col, *ds.feature_names])
        for i in range(ds.n):
            writer.writerow(
                [int(ds.treatment[i]), int(ds.outcome[i])]
                + [repr(float(v)) for v in ds.features[i]]
            )


# ---------------------------------------------------------------------------
# Model persistence: {intercept, main, treat, interact, feature_names, meta}

def write_model(coeffs: UpliftCoefficients, feature_names: Sequence[str], path,
                meta: dict | None = None) -> None:
    names = list(feature_names)
    if len(names) != coeffs.p:
        raise DataValidationError("feature_names length does not match coefficients")
    payload = {
        "intercept": coeffs.intercept,
        "main": [float(v) for v in coeffs.main],
        "treat": coeffs.treat,
        "interact": [float(v) for v in coeffs.interact],
        "feature_names": names,
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_model(path) -> tuple[UpliftCoefficients, tuple[str, ...], dict]:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataValidationError(f"cannot read model file {path}: {exc}") from None
    try:
        coeffs = UpliftCoefficients(
            payload["intercept"],
            np.asarray(payload["main"], dtype=float),
            payload["treat"],
            np.asarray(payload["interact"], dtype=float),
        )
        names = tuple(str(s) for s in payload["feature_names"])
    except KeyError as exc:
        raise DataValidationError(f"model file {path} is missing field {exc}") from None
    if len(names) != coeffs.p:
        raise DataValidationError(f"model file {path}: feature_names length mismatch")
    return coeffs, names, payload.get("meta", {})
