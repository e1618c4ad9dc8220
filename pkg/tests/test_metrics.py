import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cxrvae.errors import StructuralError, UndefinedMetricError
from cxrvae.metrics import (
    auroc, auroc_report, band, read_report_csv, report_csv, roc_csv, roc_points,
)

from oracles import auroc_pairs


def random_instance(rng, n_max=100):
    n = int(rng.integers(2, n_max + 1))
    labels = rng.random(n) < rng.uniform(0.1, 0.9)
    labels[0], labels[1] = True, False
    # few distinct values so ties are common
    scores = rng.integers(0, max(2, n // 3), size=n) / 7.0
    return scores, labels


class TestAuroc:
    def test_examples(self):
        assert auroc([0.9, 0.8, 0.3, 0.2], [1, 1, 0, 0]) == 1.0
        assert auroc([0.9, 0.6, 0.4, 0.2], [1, 0, 1, 0]) == 0.75
        assert auroc([0.5, 0.5], [1, 0]) == 0.5

    def test_single_class(self):
        with pytest.raises(UndefinedMetricError) as info:
            auroc([0.1, 0.2], [1, 1])
        assert (info.value.n_pos, info.value.n_neg) == (2, 0)

    def test_length_mismatch(self):
        with pytest.raises(StructuralError):
            auroc([0.1, 0.2], [1])
        with pytest.raises(StructuralError):
            auroc([], [])

    def test_pair_count_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            s, y = random_instance(rng)
            assert auroc(s, y) == pytest.approx(auroc_pairs(s, y), abs=1e-12)

    def test_monotone_transforms(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            s, y = random_instance(rng)
            a = auroc(s, y)
            assert auroc(s ** 3, y) == a
            assert auroc(2 * s + 1, y) == a

    @given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.booleans()), min_size=2, max_size=60))
    def test_complement_sums_to_one(self, pairs):
        s, y = map(np.array, zip(*pairs))
        if y.all() or not y.any():
            return
        assert auroc(s, y) + auroc(s, ~y) == pytest.approx(1.0, abs=1e-12)

    def test_random_scores_near_half(self):
        rng = np.random.default_rng(2)
        a = auroc(rng.random(10_000), rng.random(10_000) < 0.5)
        assert abs(a - 0.5) <= 0.02


class TestReport:
    def test_perfect_and_inverted(self):
        T = np.array([[1, 0], [1, 1], [0, 1], [0, 0]], dtype=bool)
        P = T.astype(float)
        r = auroc_report(P, T)
        assert r.per_class == (1.0, 1.0) and r.mean == 1.0 and r.bands == ("outstanding",) * 2
        r = auroc_report(1 - P, T)
        assert r.per_class == (0.0, 0.0) and r.mean == 0.0

    def test_single_valued_class_excluded(self):
        T = np.array([[1, 0], [0, 0], [1, 0]], dtype=bool)
        P = np.array([[0.9, 0.1], [0.2, 0.3], [0.8, 0.5]])
        r = auroc_report(P, T, ("A", "B"))
        assert math.isnan(r.per_class[1]) and r.excluded == ("B",)
        assert r.mean == 1.0

    def test_mean_of_table_row(self):
        vals = (0.805, 0.796, 0.862, 0.746, 0.872)
        assert sum(vals) / 5 == pytest.approx(0.816, abs=5e-4)

    def test_mean_column_matches_classes(self):
        rng = np.random.default_rng(3)
        T = rng.random((60, 5)) < 0.4
        r = auroc_report(rng.random((60, 5)), T)
        assert r.mean == pytest.approx(np.mean(r.per_class), abs=1e-15)

    @pytest.mark.parametrize("value,name", [(0.95, "outstanding"), (0.9, "very-good"), (0.85, "very-good"),
                                            (0.8, "acceptable"), (0.7, "below"), (0.701, "acceptable")])
    def test_bands(self, value, name):
        assert band(value) == name

    def test_shape_mismatch(self):
        with pytest.raises(StructuralError):
            auroc_report(np.zeros((3, 2)), np.zeros((3, 1)))

    def test_csv_roundtrip(self, tmp_path):
        rng = np.random.default_rng(4)
        T = rng.random((40, 3)) < 0.5
        reports = [auroc_report(rng.random((40, 3)), T, ("a", "b", "c"), tag=f"m{i}") for i in range(3)]
        text = report_csv(reports, tmp_path / "r.csv")
        assert text.splitlines()[0] == "model,a,b,c,mean"
        back = read_report_csv(tmp_path / "r.csv")
        for r, (tag, per, mean) in zip(reports, back):
            assert tag == r.tag and per == list(r.per_class) and mean == r.mean
        assert report_csv(reports, digits=3).splitlines()[1].count(".") == 4


class TestRoc:
    def test_trapezoid_area_equals_auroc(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            s, y = random_instance(rng)
            pts = roc_points(s, y)
            area = np.sum(np.diff(pts[:, 0]) * (pts[1:, 1] + pts[:-1, 1]) / 2)
            assert area == pytest.approx(auroc(s, y), abs=1e-12)
            assert tuple(pts[-1, :2]) == (1.0, 1.0)

    def test_csv_skips_undefined(self, tmp_path):
        T = np.array([[1, 0], [0, 0]], dtype=bool)
        roc_csv(np.array([[0.6, 0.1], [0.4, 0.2]]), T, ("a", "b"), tmp_path / "roc.csv")
        lines = (tmp_path / "roc.csv").read_text().splitlines()
        assert lines[0] == "class,fpr,tpr,threshold"
        assert all(line.startswith("a,") for line in lines[1:])
