import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cxrvae.classifiers import (
    EmbeddingTable, ForestParams, GbmParams, GridSpec, KnnParams, fit_forest, fit_gbm, fit_knn,
    fit_model, grid_search, predict_proba, table2_params,
)
from cxrvae.classifiers.models import binomial_deviance
from cxrvae.classifiers.persist import load_model, model_bytes, read_header, save_model
from cxrvae.classifiers.tree import fit_classification_tree
from cxrvae.errors import DataError, DomainError, StructuralError
from cxrvae.metrics import auroc


def blobs(n=120, d=4, k=2, seed=0, sep=1.5):
    rng = np.random.default_rng(seed)
    y = rng.random((n, k)) < 0.4
    X = rng.normal(size=(n, d))
    X[:, :k] += sep * y
    return EmbeddingTable(X, y)


SMALL_FOREST = ForestParams(n_estimators=15, max_depth=6)


def gini_root_oracle(X, y, min_leaf=1):
    """Best (impurity, feature, threshold) over every feature and every gap, by brute force."""
    best = (math.inf, None, None)
    n = len(y)
    for f in range(X.shape[1]):
        values = sorted(set(X[:, f]))
        for a, b in zip(values, values[1:]):
            thr = 0.5 * (a + b)
            left = y[X[:, f] <= thr]
            right = y[X[:, f] > thr]
            if len(left) < min_leaf or len(right) < min_leaf:
                continue
            imp = sum(len(s) * s.mean() * (1 - s.mean()) for s in (left, right))
            if imp < best[0] - 1e-12:
                best = (imp, f, thr)
    return best


class TestTables:
    def test_rejects_non_finite(self):
        with pytest.raises(StructuralError):
            EmbeddingTable(np.array([[np.nan, 1.0]]), np.array([[True]]))

    def test_rejects_misaligned(self):
        with pytest.raises(StructuralError):
            EmbeddingTable(np.zeros((3, 2)), np.zeros((2, 1)))

    def test_subset_keeps_ids(self):
        t = blobs(10)
        s = t.subset([3, 1])
        assert s.row_ids == ("3", "1")
        assert np.array_equal(s.features[0], t.features[3])


class TestTrees:
    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_root_split_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        n, d = int(rng.integers(4, 25)), int(rng.integers(1, 4))
        X = rng.integers(0, 6, size=(n, d)).astype(float)
        y = (rng.random(n) < 0.5).astype(float)
        tree = fit_classification_tree(X, y, rng=rng, max_features=d, max_depth=1)
        imp, f, thr = gini_root_oracle(X, y)
        if f is None or y.min() == y.max():
            assert tree.n_nodes == 1
            return
        assert tree.n_nodes == 3
        left = y[X[:, tree.feature[0]] <= tree.threshold[0]]
        right = y[X[:, tree.feature[0]] > tree.threshold[0]]
        got = sum(len(s) * s.mean() * (1 - s.mean()) for s in (left, right))
        assert got == pytest.approx(imp, abs=1e-9)

    def test_children_partition_and_leaf_fraction(self):
        data = blobs(80, seed=1)
        y = data.targets[:, 0].astype(float)
        tree = fit_classification_tree(data.features, y, rng=np.random.default_rng(0), max_features=2,
                                       max_depth=4)
        leaves = tree.apply(data.features)
        for leaf in np.unique(leaves):
            members = y[leaves == leaf]
            assert tree.value[leaf] == pytest.approx(members.mean())
            assert tree.count[leaf] == members.size
        internal = np.flatnonzero(~tree.is_leaf())
        for node in internal:
            assert tree.count[node] == tree.count[tree.left[node]] + tree.count[tree.right[node]]
        assert tree.depth() <= 4

    @pytest.mark.parametrize("kind", ["RF", "XRT"])
    def test_single_sample(self, kind):
        t = EmbeddingTable(np.array([[0.3, -1.0]]), np.array([[True, False]]))
        model = fit_forest(t, kind, ForestParams(n_estimators=5))
        assert all(tree.n_nodes == 1 for forest in model.trees for tree in forest)
        p = model.predict_proba(np.array([[5.0, 5.0], [-2.0, 0.0]]))
        assert np.array_equal(p, [[1.0, 0.0], [1.0, 0.0]])
        assert model.degenerate == (0, 1)

    def test_one_deep_tree_memorizes(self):
        data = blobs(60, seed=2, sep=0.3)
        model = fit_forest(data, "XRT", ForestParams(n_estimators=1, max_depth=None, min_samples_leaf=1))
        p = model.predict_proba(data.features)
        for k in range(data.n_classes):
            assert auroc(p[:, k], data.targets[:, k]) == 1.0


class TestForests:
    def test_table_values(self):
        rf = table2_params("RF", full=True)
        assert (rf.n_estimators, rf.max_depth, rf.min_samples_split, rf.min_samples_leaf) == (2000, 10, 2, 2)
        xrt = table2_params("XRT", full=True)
        assert (xrt.n_estimators, xrt.max_depth, xrt.min_samples_split, xrt.min_samples_leaf) == (2000, 10, 5, 1)
        assert table2_params("RF").n_estimators == 200
        gb = table2_params("GB")
        assert (gb.n_estimators, gb.max_depth, gb.learning_rate) == (1000, 3, 0.1)
        assert table2_params("KNN").k == 10
        assert ForestParams().features_per_split(16) == 4
        assert ForestParams().features_per_split(17) == 5

    @pytest.mark.parametrize("kind", ["RF", "XRT"])
    def test_fixed_seed_is_reproducible(self, kind):
        data = blobs()
        probe = np.random.default_rng(9).normal(size=(30, 4))
        a = fit_forest(data, kind, SMALL_FOREST, seed=3).predict_proba(probe)
        b = fit_forest(data, kind, SMALL_FOREST, seed=3).predict_proba(probe)
        c = fit_forest(data, kind, SMALL_FOREST, seed=4).predict_proba(probe)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_parallel_matches_serial(self):
        data = blobs()
        a = fit_forest(data, "RF", SMALL_FOREST, seed=1, n_jobs=1)
        b = fit_forest(data, "RF", SMALL_FOREST, seed=1, n_jobs=2)
        assert np.array_equal(a.predict_proba(data.features), b.predict_proba(data.features))

    @pytest.mark.parametrize("kind", ["RF", "XRT"])
    def test_structure_and_range(self, kind):
        data = blobs()
        model = fit_forest(data, kind, SMALL_FOREST)
        assert all(len(f) == 15 for f in model.trees)
        assert all(t.depth() <= 6 for f in model.trees for t in f)
        p = model.predict_proba(np.random.default_rng(1).normal(scale=10, size=(50, 4)))
        assert np.all((p >= 0) & (p <= 1))

    def test_all_positive_class_predicts_one(self):
        t = EmbeddingTable(np.random.default_rng(0).normal(size=(20, 3)), np.ones((20, 1), dtype=bool))
        assert np.all(fit_forest(t, "RF", SMALL_FOREST).predict_proba(t.features) == 1.0)

    def test_dimension_mismatch(self):
        model = fit_forest(blobs(), "RF", SMALL_FOREST)
        with pytest.raises(StructuralError):
            model.predict_proba(np.zeros((3, 5)))

    def test_learns_separable_signal(self):
        data = blobs(300, seed=4, sep=3.0)
        test = blobs(300, seed=5, sep=3.0)
        for kind in ("RF", "XRT"):
            p = fit_forest(data, kind, SMALL_FOREST).predict_proba(test.features)
            assert auroc(p[:, 0], test.targets[:, 0]) > 0.9


class TestGbm:
    def test_zero_stages_is_base_rate(self):
        data = blobs(50, seed=3)
        model = fit_gbm(data, GbmParams(n_estimators=0))
        p = model.predict_proba(data.features)
        assert np.allclose(p, data.targets.mean(axis=0)[None, :], atol=1e-12)

    def test_balanced_starts_at_half(self):
        y = np.array([True, False] * 10)
        model = fit_gbm(EmbeddingTable(np.arange(20.0)[:, None], y), GbmParams(n_estimators=0))
        assert model.init_score[0] == 0.0
        assert np.all(model.predict_proba(np.zeros((1, 1))) == 0.5)

    def test_separable_1d(self):
        x = np.linspace(-1, 1, 40)[:, None]
        y = x[:, 0] > 0.1
        model = fit_gbm(EmbeddingTable(x, y), GbmParams(n_estimators=50))
        assert auroc(model.predict_proba(x)[:, 0], y) == 1.0

    def test_deviance_non_increasing(self):
        data = blobs(150, seed=6, sep=0.8)
        _, curves = fit_gbm(data, GbmParams(n_estimators=60), track_deviance=True)
        for k, curve in enumerate(curves):
            y = data.targets[:, k]
            rate = y.mean()
            start = binomial_deviance(y, np.full(y.size, math.log(rate / (1 - rate))))
            full = [start, *curve]
            assert all(b <= a + 1e-12 for a, b in zip(full, full[1:]))

    def test_score_zero_is_half(self):
        model = fit_gbm(EmbeddingTable(np.arange(4.0)[:, None], np.array([1, 0, 1, 0])), GbmParams(0))
        assert model.decision_function(np.zeros((1, 1)))[0, 0] == 0.0
        assert model.predict_proba(np.zeros((1, 1)))[0, 0] == 0.5

    def test_single_valued_class(self):
        t = EmbeddingTable(np.random.default_rng(0).normal(size=(10, 2)), np.c_[np.zeros(10), np.ones(10)])
        p = fit_gbm(t, GbmParams(5)).predict_proba(t.features)
        assert np.all(p[:, 0] == 0.0) and np.all(p[:, 1] == 1.0)

    def test_output_open_interval(self):
        data = blobs(80, seed=7)
        p = fit_gbm(data, GbmParams(30)).predict_proba(np.random.default_rng(0).normal(size=(40, 4)))
        assert np.all((p > 0) & (p < 1))


class TestKnn:
    def test_self_match_k1(self):
        data = blobs(30, seed=8)
        p = fit_knn(data, 1).predict_proba(data.features)
        assert np.array_equal(p, data.targets.astype(float))

    def test_k_equals_n(self):
        data = blobs(25, seed=9)
        p = fit_knn(data, 25).predict_proba(np.random.default_rng(1).normal(size=(7, 4)))
        assert np.allclose(p, data.targets.mean(axis=0)[None, :])

    def test_k_too_large(self):
        with pytest.raises(DomainError):
            fit_knn(blobs(5), 6)
        with pytest.raises(DomainError):
            fit_knn(blobs(5), 0)

    def test_seven_of_ten(self):
        X = np.arange(20.0)[:, None]
        y = np.zeros(20, dtype=bool)
        y[[0, 2, 3, 5, 6, 8, 9]] = True
        p = fit_knn(EmbeddingTable(X, y), 10).predict_proba(np.array([[4.5]]))
        assert p[0, 0] == pytest.approx(0.7)

    def test_ties_prefer_lower_rows(self):
        X = np.array([[1.0], [-1.0], [1.0]])
        model = fit_knn(EmbeddingTable(X, np.array([True, False, False])), 2)
        assert model.neighbors(np.array([[0.0]])).tolist() == [[0, 1]]

    def test_matches_brute_force(self):
        rng = np.random.default_rng(10)
        data = blobs(60, seed=10)
        queries = rng.normal(size=(15, 4))
        for metric, dist in (("euclidean", lambda a, b: np.sqrt(((a - b) ** 2).sum())),
                             ("manhattan", lambda a, b: np.abs(a - b).sum())):
            model = fit_knn(data, 5, metric)
            for q, row in zip(queries, model.neighbors(queries)):
                ds = [dist(q, x) for x in data.features]
                assert sorted(row.tolist()) == sorted(np.argsort(ds, kind="stable")[:5].tolist())

    def test_unknown_metric(self):
        with pytest.raises(DomainError):
            KnnParams(5, "cosine")

    @given(st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_row_order_free_and_rational(self, seed):
        rng = np.random.default_rng(seed)
        data = blobs(40, seed=seed)
        perm = rng.permutation(40)
        q = rng.normal(size=(10, 4))
        a = fit_knn(data, 7).predict_proba(q)
        b = fit_knn(data.subset(perm), 7).predict_proba(q)
        assert np.array_equal(a, b)
        assert np.allclose(a * 7, np.round(a * 7))


class TestGrid:
    def test_single_point(self):
        data, held = blobs(80, seed=11), blobs(60, seed=12)
        res = grid_search(data, held, GridSpec({"n_estimators": [5], "max_depth": [3]}), "XRT")
        assert (res.best.n_estimators, res.best.max_depth) == (5, 3)
        assert len(res.table) == 1

    def test_duplicates_do_not_matter(self):
        data, held = blobs(80, seed=13), blobs(60, seed=14)
        a = grid_search(data, held, GridSpec({"n_estimators": [5], "max_depth": [2, 4]}), "RF", seed=1)
        b = grid_search(data, held, GridSpec({"n_estimators": [5, 5], "max_depth": [4, 2, 2, 4]}), "RF", seed=1)
        assert a.best == b.best and a.best_score == b.best_score

    def test_selected_depth_reproducible(self):
        data, held = blobs(100, seed=15, sep=1.0), blobs(80, seed=16, sep=1.0)
        grid = GridSpec({"n_estimators": [10], "max_depth": [2, 4, 8]})
        a = grid_search(data, held, grid, "XRT", seed=2)
        b = grid_search(data, held, grid, "XRT", seed=2)
        assert a.best.max_depth in (2, 4, 8)
        assert a == b

    def test_knn_grid(self):
        res = grid_search(blobs(60, seed=17), blobs(40, seed=18), GridSpec({"k": [1, 5, 15]}), "KNN")
        assert res.best.k in (1, 5, 15)

    def test_empty_candidates(self):
        with pytest.raises(DomainError):
            GridSpec({"max_depth": []})


class TestPersistence:
    @pytest.mark.parametrize("kind", ["RF", "XRT", "GB", "KNN"])
    def test_roundtrip(self, kind, tmp_path):
        data = blobs(60, seed=19)
        params = {"RF": SMALL_FOREST, "XRT": SMALL_FOREST, "GB": GbmParams(10), "KNN": KnnParams(4)}[kind]
        model = fit_model(kind, data, params, seed=5)
        path = tmp_path / "m.cxm"
        save_model(model, path, extra={"source": "unit"})
        back = load_model(path, table=data if kind == "KNN" else None)
        probe = np.random.default_rng(0).normal(size=(20, 4))
        assert np.array_equal(predict_proba(model, probe), predict_proba(back, probe))
        assert read_header(path)["extra"] == {"source": "unit"}
        assert model_bytes(back, {"source": "unit"}) == path.read_bytes()

    def test_degenerate_gbm_roundtrip(self, tmp_path):
        t = EmbeddingTable(np.random.default_rng(0).normal(size=(10, 2)), np.c_[np.zeros(10), np.ones(10)])
        save_model(fit_gbm(t, GbmParams(3)), tmp_path / "g.cxm")
        p = load_model(tmp_path / "g.cxm").predict_proba(t.features)
        assert np.all(p[:, 0] == 0.0) and np.all(p[:, 1] == 1.0)

    def test_knn_needs_matching_table(self, tmp_path):
        data = blobs(30, seed=20)
        save_model(fit_knn(data, 3), tmp_path / "k.cxm")
        with pytest.raises(DataError):
            load_model(tmp_path / "k.cxm")
        with pytest.raises(DataError):
            load_model(tmp_path / "k.cxm", table=blobs(30, seed=21))

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.cxm").write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(DataError):
            load_model(tmp_path / "x.cxm")
