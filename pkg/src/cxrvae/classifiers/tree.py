"""Array-backed binary decision trees.

A tree is stored as parallel arrays indexed by node id (root = 0), the layout
used by the model files:

* ``feature``   split feature, -1 for leaves
* ``threshold`` samples with ``x[feature] <= threshold`` go left
* ``left`` / ``right`` child ids, -1 for leaves
* ``value``     leaf output (positive fraction, or boosting leaf value)
* ``count``     training samples that reached the node
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError, StructuralError


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def is_leaf(self) -> np.ndarray:
        return self.left < 0

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):
            if self.left[node] >= 0:
                depths[self.left[node]] = depths[node] + 1
                depths[self.right[node]] = depths[node] + 1
        return int(depths.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf id reached by every row of ``X``."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.left[node] >= 0
        while active.any():
            r = rows[active]
            nd = node[r]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.left[node] >= 0
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


class _Builder:
    """Depth-first growth with a pluggable split search."""

    def __init__(self, max_depth, min_samples_split, min_samples_leaf):
        if min_samples_split < 2 or min_samples_leaf < 1:
            raise DomainError("min_samples_split must be >= 2 and min_samples_leaf >= 1")
        if max_depth is not None and max_depth < 0:
            raise DomainError("max_depth must be >= 0 or None")
        self.max_depth = max_depth
        self.min_split = min_samples_split
        self.min_leaf = min_samples_leaf
        self.feature, self.threshold, self.left, self.right = [], [], [], []
        self.value, self.count = [], []

    def _new(self, value, count):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        self.count.append(int(count))
        return len(self.feature) - 1

    def grow(self, X, y, leaf_value, find_split, is_pure):
        root_idx = np.arange(X.shape[0])
        root = self._new(leaf_value(root_idx), root_idx.size)
        stack = [(root, root_idx, 0)]
        while stack:
            node, idx, depth = stack.pop()
            n = idx.size
            if ((self.max_depth is not None and depth >= self.max_depth)
                    or n < self.min_split or n < 2 * self.min_leaf or is_pure(idx)):
                continue
            split = find_split(idx)
            if split is None:
                continue
            feat, thr = split
            mask = X[idx, feat] <= thr
            li, ri = idx[mask], idx[~mask]
            if li.size < self.min_leaf or ri.size < self.min_leaf:
                continue
            lnode = self._new(leaf_value(li), li.size)
            rnode = self._new(leaf_value(ri), ri.size)
            self.feature[node] = int(feat)
            self.threshold[node] = float(thr)
            self.left[node] = lnode
            self.right[node] = rnode
            # right pushed first so the left subtree gets the lower ids
            stack.append((rnode, ri, depth + 1))
            stack.append((lnode, li, depth + 1))
        return Tree(
            np.asarray(self.feature, dtype=np.int32),
            np.asarray(self.threshold, dtype=np.float64),
            np.asarray(self.left, dtype=np.int32),
            np.asarray(self.right, dtype=np.int32),
            np.asarray(self.value, dtype=np.float64),
            np.asarray(self.count, dtype=np.int32),
        )


def _midpoints(lo, hi):
    mid = 0.5 * (lo + hi)
    # guard against rounding up to the right value for adjacent floats
    return np.where(mid < hi, mid, lo)


def _candidate_features(Xn, order, m):
    """The first ``m`` features (in ``order``) that are not constant on the node."""
    span = Xn.max(axis=0) - Xn.min(axis=0)
    usable = [f for f in order if span[f] > 0]
    return np.asarray(usable[:m], dtype=np.int64)


def fit_classification_tree(
    X, y, *, rng: np.random.Generator, max_features: int, max_depth=None,
    min_samples_split=2, min_samples_leaf=1, random_thresholds=False,
) -> Tree:
    """Gini tree on binary targets ``y`` (0/1).

    ``random_thresholds=False``: best threshold over the sampled features
    (random forest). ``True``: one uniform threshold per sampled feature, best
    feature by Gini (extremely randomized trees). Leaves hold the positive
    fraction of their samples.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise StructuralError("X must be N x D and y of length N")
    d = X.shape[1]
    m = max(1, min(int(max_features), d))
    min_leaf = min_samples_leaf

    def leaf_value(idx):
        return y[idx].mean()

    def is_pure(idx):
        s = y[idx].sum()
        return s == 0 or s == idx.size

    def best_split(idx):
        Xn = X[idx]
        feats = _candidate_features(Xn, rng.permutation(d), m)
        if feats.size == 0:
            return None
        n = idx.size
        yn = y[idx]
        V = Xn[:, feats]
        order = np.argsort(V, axis=0, kind="stable")
        SV = np.take_along_axis(V, order, axis=0)
        cpos = np.cumsum(yn[order], axis=0)[:-1]
        n_left = np.arange(1, n, dtype=np.float64)[:, None]
        n_right = n - n_left
        tot = yn.sum()
        pl = cpos / n_left
        pr = (tot - cpos) / n_right
        imp = n_left * pl * (1 - pl) + n_right * pr * (1 - pr)
        valid = SV[:-1] < SV[1:]
        valid[: min_leaf - 1] = False
        if min_leaf > 1:
            valid[n - min_leaf:] = False
        if not valid.any():
            return None
        imp = np.where(valid, imp, np.inf)
        # first minimum in (feature order, position) for deterministic ties
        flat = np.argmin(imp.T)
        j, i = divmod(int(flat), n - 1)
        return int(feats[j]), float(_midpoints(SV[i, j], SV[i + 1, j]))

    def random_split(idx):
        Xn = X[idx]
        feats = _candidate_features(Xn, rng.permutation(d), m)
        if feats.size == 0:
            return None
        n = idx.size
        yn = y[idx]
        V = Xn[:, feats]
        lo, hi = V.min(axis=0), V.max(axis=0)
        thr = lo + (hi - lo) * rng.random(feats.size)
        thr = np.where(thr < hi, thr, lo)
        go_left = V <= thr
        n_left = go_left.sum(axis=0).astype(np.float64)
        n_right = n - n_left
        pos_left = (go_left * yn[:, None]).sum(axis=0)
        pos_total = yn.sum()
        with np.errstate(invalid="ignore", divide="ignore"):
            pl = pos_left / n_left
            pr = (pos_total - pos_left) / n_right
            imp = n_left * pl * (1 - pl) + n_right * pr * (1 - pr)
        valid = (n_left >= min_leaf) & (n_right >= min_leaf)
        if not valid.any():
            return None
        imp = np.where(valid, imp, np.inf)
        j = int(np.argmin(imp))
        return int(feats[j]), float(thr[j])

    builder = _Builder(max_depth, min_samples_split, min_samples_leaf)
    return builder.grow(X, y, leaf_value, random_split if random_thresholds else best_split, is_pure)


def fit_regression_tree(
    X, residual, hessian, *, max_depth=3, min_samples_split=2, min_samples_leaf=1,
) -> Tree:
    """Least-squares tree on ``residual`` whose leaves take one Newton step:
    sum(residual) / sum(hessian). All features are searched at every node."""
    X = np.asarray(X, dtype=np.float64)
    r = np.asarray(residual, dtype=np.float64)
    hess = np.asarray(hessian, dtype=np.float64)
    n_all, d = X.shape
    min_leaf = min_samples_leaf

    def leaf_value(idx):
        den = hess[idx].sum()
        if den < 1e-150:
            return 0.0
        return r[idx].sum() / den

    def is_pure(idx):
        v = r[idx]
        return v.max() == v.min()

    def best_split(idx):
        n = idx.size
        Xn = X[idx]
        order = np.argsort(Xn, axis=0, kind="stable")
        SV = np.take_along_axis(Xn, order, axis=0)
        cs = np.cumsum(r[idx][order], axis=0)[:-1]
        total = r[idx].sum()
        n_left = np.arange(1, n, dtype=np.float64)[:, None]
        # maximizing S_L^2/n_L + S_R^2/n_R minimizes the summed squared error
        gain = cs * cs / n_left + (total - cs) ** 2 / (n - n_left)
        valid = SV[:-1] < SV[1:]
        valid[: min_leaf - 1] = False
        if min_leaf > 1:
            valid[n - min_leaf:] = False
        if not valid.any():
            return None
        gain = np.where(valid, gain, -np.inf)
        flat = np.argmax(gain.T)
        j, i = divmod(int(flat), n - 1)
        return j, float(_midpoints(SV[i, j], SV[i + 1, j]))

    builder = _Builder(max_depth, min_samples_split, min_samples_leaf)
    return builder.grow(X, r, leaf_value, best_split, is_pure)
