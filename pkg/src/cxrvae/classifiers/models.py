"""Random forest, extremely randomized trees, gradient boosting and KNN,
each fitted one-vs-rest over the columns of an :class:`EmbeddingTable`."""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError, StructuralError
from ..numerics import RngStream, sigmoid
from .table import EmbeddingTable
from .tree import Tree, fit_classification_tree, fit_regression_tree

log = logging.getLogger(__name__)

FOREST_KINDS = ("RF", "XRT")
ALL_KINDS = ("GB", "XRT", "KNN", "RF")
KNN_METRICS = ("euclidean", "manhattan")


@dataclass(frozen=True)
class ForestParams:
    n_estimators: int = 200
    max_depth: int | None = 10
    min_samples_split: int = 2
    min_samples_leaf: int = 2
    # "sqrt" -> ceil(sqrt(D)); an int is used as-is; None means all features
    max_features: int | str | None = "sqrt"

    def __post_init__(self):
        if self.n_estimators < 1:
            raise DomainError("n_estimators must be >= 1")

    def features_per_split(self, d: int) -> int:
        if self.max_features is None:
            return d
        if self.max_features == "sqrt":
            return max(1, math.ceil(math.sqrt(d)))
        return max(1, min(int(self.max_features), d))


@dataclass(frozen=True)
class GbmParams:
    n_estimators: int = 1000
    max_depth: int = 3
    learning_rate: float = 0.1
    min_samples_split: int = 2
    min_samples_leaf: int = 1

    def __post_init__(self):
        if self.n_estimators < 0 or self.learning_rate <= 0:
            raise DomainError("n_estimators must be >= 0 and learning_rate > 0")


@dataclass(frozen=True)
class KnnParams:
    k: int = 10
    metric: str = "euclidean"

    def __post_init__(self):
        if self.metric not in KNN_METRICS:
            raise DomainError(f"metric must be one of {KNN_METRICS}, got {self.metric!r}")


def table2_params(kind: str, full: bool = False):
    """Tuned hyperparameters per classifier family; ``full`` restores the
    2000-tree forests (desk-scale default is 200)."""
    n_trees = 2000 if full else 200
    if kind == "RF":
        return ForestParams(n_trees, 10, min_samples_split=2, min_samples_leaf=2)
    if kind == "XRT":
        return ForestParams(n_trees, 10, min_samples_split=5, min_samples_leaf=1)
    if kind == "GB":
        return GbmParams(1000, 3)
    if kind == "KNN":
        return KnnParams(10)
    raise DomainError(f"unknown classifier kind {kind!r}")


def params_from_dict(kind: str, values: dict):
    cls = {"RF": ForestParams, "XRT": ForestParams, "GB": GbmParams, "KNN": KnnParams}[kind]
    base = dataclasses.asdict(table2_params(kind))
    base.update(values)
    return cls(**base)


def _check_dim(model_dim: int, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model_dim:
        raise StructuralError(f"expected an N x {model_dim} feature matrix, got {X.shape}")
    return X


# ------------------------------------------------------------------ forests

def _fit_one_tree(args):
    X, y, kind, params, seed, stream = args
    rng = RngStream(seed, stream).generator
    if kind == "RF":
        rows = rng.integers(0, X.shape[0], size=X.shape[0])
        Xt, yt = X[rows], y[rows]
    else:
        Xt, yt = X, y
    return fit_classification_tree(
        Xt, yt, rng=rng,
        max_features=params.features_per_split(X.shape[1]),
        max_depth=params.max_depth,
        min_samples_split=params.min_samples_split,
        min_samples_leaf=params.min_samples_leaf,
        random_thresholds=(kind == "XRT"),
    )


@dataclass
class ForestModel:
    kind: str
    params: ForestParams
    seed: int
    dim: int
    class_names: tuple[str, ...]
    trees: list[list[Tree]] = field(repr=False)
    # classes whose training targets were single-valued
    degenerate: tuple[int, ...] = ()

    def predict_proba(self, X) -> np.ndarray:
        X = _check_dim(self.dim, X)
        out = np.empty((X.shape[0], len(self.trees)))
        for k, forest in enumerate(self.trees):
            acc = np.zeros(X.shape[0])
            for tree in forest:
                acc += tree.predict(X)
            out[:, k] = acc / len(forest)
        return out


def fit_forest(data: EmbeddingTable, kind: str = "RF", params: ForestParams | None = None,
               seed: int = 0, n_jobs: int = 1) -> ForestModel:
    """One forest per target column. RF trees see a bootstrap sample and pick
    the best Gini threshold; XRT trees see all rows and draw thresholds."""
    if kind not in FOREST_KINDS:
        raise DomainError(f"forest kind must be RF or XRT, got {kind!r}")
    params = params or table2_params(kind)
    X, Y = data.features, data.targets
    if X.shape[0] < 1:
        raise DomainError("cannot fit a forest on an empty table")
    jobs, degenerate = [], []
    for k in range(Y.shape[1]):
        y = Y[:, k].astype(np.float64)
        if y.min() == y.max():
            degenerate.append(k)
        for t in range(params.n_estimators):
            jobs.append((X, y, kind, params, seed, f"{kind}/class{k}/tree{t}"))
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as pool:
            flat = list(pool.map(_fit_one_tree, jobs, chunksize=max(1, len(jobs) // (4 * n_jobs))))
    else:
        flat = [_fit_one_tree(j) for j in jobs]
    n = params.n_estimators
    trees = [flat[k * n:(k + 1) * n] for k in range(Y.shape[1])]
    if degenerate:
        log.warning("%s: classes %s have single-valued targets; constant models", kind, degenerate)
    return ForestModel(kind, params, seed, X.shape[1], data.class_names, trees, tuple(degenerate))


# ------------------------------------------------------------------ boosting

@dataclass
class GbmModel:
    params: GbmParams
    seed: int
    dim: int
    class_names: tuple[str, ...]
    init_score: np.ndarray
    stages: list[list[Tree]] = field(repr=False)
    degenerate: tuple[int, ...] = ()
    kind: str = "GB"

    def decision_function(self, X, n_stages: int | None = None) -> np.ndarray:
        X = _check_dim(self.dim, X)
        out = np.empty((X.shape[0], len(self.stages)))
        for k, trees in enumerate(self.stages):
            f = np.full(X.shape[0], self.init_score[k])
            for tree in trees[:n_stages]:
                f += self.params.learning_rate * tree.predict(X)
            out[:, k] = f
        return out

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.decision_function(X))


def binomial_deviance(y, score) -> float:
    """Mean negative binomial log-likelihood (x2) of log-odds ``score``."""
    y = np.asarray(y, dtype=np.float64)
    score = np.asarray(score, dtype=np.float64)
    return float(-2.0 * np.mean(y * score - np.logaddexp(0.0, score)))


def fit_gbm(data: EmbeddingTable, params: GbmParams | None = None, seed: int = 0,
            track_deviance: bool = False):
    """Binomial-deviance gradient boosting, one model per target column.

    Starts from the log-odds of the base rate; every stage fits a regression
    tree to the residual ``y - p`` with Newton leaf values, shrunk by the
    learning rate. With ``track_deviance`` also returns the per-class training
    deviance after each stage.
    """
    params = params or GbmParams()
    X, Y = data.features, data.targets
    init, stages, degenerate, curves = [], [], [], []
    for k in range(Y.shape[1]):
        y = Y[:, k].astype(np.float64)
        rate = y.mean()
        if rate in (0.0, 1.0):
            # constant model: sigmoid(+-inf) is exactly the base rate
            degenerate.append(k)
            init.append(np.inf if rate == 1.0 else -np.inf)
            stages.append([])
            curves.append([])
            continue
        f0 = math.log(rate / (1.0 - rate))
        f = np.full(y.size, f0)
        trees, curve = [], []
        for _ in range(params.n_estimators):
            p = sigmoid(f)
            tree = fit_regression_tree(
                X, y - p, p * (1.0 - p),
                max_depth=params.max_depth,
                min_samples_split=params.min_samples_split,
                min_samples_leaf=params.min_samples_leaf,
            )
            f = f + params.learning_rate * tree.predict(X)
            trees.append(tree)
            if track_deviance:
                curve.append(binomial_deviance(y, f))
        init.append(f0)
        stages.append(trees)
        curves.append(curve)
    model = GbmModel(params, seed, X.shape[1], data.class_names, np.asarray(init), stages, tuple(degenerate))
    if track_deviance:
        return model, curves
    return model


# ----------------------------------------------------------------------- knn

@dataclass
class KnnModel:
    features: np.ndarray = field(repr=False)
    targets: np.ndarray = field(repr=False)
    k: int
    class_names: tuple[str, ...]
    table_digest: str = ""
    metric: str = "euclidean"
    kind: str = "KNN"
    seed: int = 0

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def params(self) -> KnnParams:
        return KnnParams(self.k, self.metric)

    def neighbors(self, X, chunk: int = 256) -> np.ndarray:
        """Indices of the k nearest stored rows; ties go to the lower row index."""
        X = _check_dim(self.dim, X)
        out = np.empty((X.shape[0], self.k), dtype=np.int64)
        for start in range(0, X.shape[0], chunk):
            q = X[start:start + chunk]
            diff = q[:, None, :] - self.features[None, :, :]
            if self.metric == "manhattan":
                dist = np.abs(diff).sum(axis=2)
            else:
                dist = np.einsum("qnd,qnd->qn", diff, diff)
            out[start:start + chunk] = np.argsort(dist, axis=1, kind="stable")[:, :self.k]
        return out

    def predict_proba(self, X) -> np.ndarray:
        nb = self.neighbors(X)
        return self.targets[nb].astype(np.float64).mean(axis=1)


def fit_knn(data: EmbeddingTable, k: int = 10, metric: str = "euclidean") -> KnnModel:
    if not 1 <= k <= data.n_rows:
        raise DomainError(f"k must lie in [1, {data.n_rows}], got {k}")
    KnnParams(k, metric)
    return KnnModel(data.features, data.targets, int(k), data.class_names, data.digest(), metric)


# ------------------------------------------------------------------- generic

def fit_model(kind: str, data: EmbeddingTable, params=None, seed: int = 0, n_jobs: int = 1):
    params = params if params is not None else table2_params(kind)
    if kind in FOREST_KINDS:
        return fit_forest(data, kind, params, seed, n_jobs)
    if kind == "GB":
        return fit_gbm(data, params, seed)
    if kind == "KNN":
        return fit_knn(data, params.k, params.metric)
    raise DomainError(f"unknown classifier kind {kind!r}")


def predict_proba(model, features) -> np.ndarray:
    """N x K class probabilities in [0, 1]."""
    return model.predict_proba(features)
