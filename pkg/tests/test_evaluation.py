import numpy as np
import pytest

from surgfb.evaluation import (
    MetricsReport,
    ScoredInstance,
    UndefinedMetricError,
    aggregate_seeds,
    auroc,
    confidence_bins,
    per_group_f1,
    precision_recall_f1,
)


def brute_force_auroc(scores, labels):
    """O(n^2) pair-counting oracle: positives above negatives, ties at 0.5."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


class TestAuroc:
    def test_hand_example(self):
        assert auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)

    def test_perfect_separation(self):
        assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_all_ties(self):
        assert auroc([0.5] * 6, [0, 1, 0, 1, 0, 1]) == 0.5

    def test_single_class_rejected(self):
        with pytest.raises(UndefinedMetricError):
            auroc([0.1, 0.9], [1, 1])

    def test_label_complement(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            scores = rng.permutation(np.linspace(0, 1, 12))  # tie-free
            labels = rng.integers(0, 2, 12)
            if labels.min() == labels.max():
                continue
            assert auroc(scores, labels) + auroc(scores, 1 - labels) == pytest.approx(1.0)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(1)
        scores = rng.random(30)
        labels = (rng.random(30) < 0.5).astype(int)
        labels[0], labels[1] = 0, 1
        base = auroc(scores, labels)
        assert auroc(np.exp(5 * scores), labels) == pytest.approx(base)
        assert auroc(scores**3 + 2, labels) == pytest.approx(base)

    def test_matches_brute_force_oracle_with_ties(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            n = int(rng.integers(2, 60))
            # coarse grid forces frequent ties
            scores = rng.integers(0, 5, n) / 4.0
            labels = rng.integers(0, 2, n)
            if labels.min() == labels.max():
                continue
            assert abs(auroc(scores, labels) - brute_force_auroc(scores, labels)) < 1e-12


class TestPrecisionRecallF1:
    def test_perfect(self):
        prf = precision_recall_f1([0, 1, 1, 0], [0, 1, 1, 0])
        assert prf.as_tuple() == (1.0, 1.0, 1.0)
        assert not prf.degenerate

    def test_all_predicted_positive(self):
        prf = precision_recall_f1([1, 1, 1, 1], [1, 0, 1, 0])
        assert prf.precision == pytest.approx(0.5)
        assert prf.recall == pytest.approx(1.0)
        assert prf.f1 == pytest.approx(2.0 / 3.0)

    def test_no_predicted_positives_degenerate(self):
        prf = precision_recall_f1([0, 0, 0], [1, 0, 1])
        assert prf.precision == 0.0
        assert prf.recall == 0.0
        assert prf.f1 == 0.0
        assert prf.degenerate


def _inst(i, score, label, surgery="typeA", trainer="T1"):
    return ScoredInstance(
        clip_id=f"c{i}", score=score, label=label, surgery_type=surgery, trainer_id=trainer
    )


class TestScoredInstance:
    def test_predicted_threshold(self):
        assert _inst(0, 0.5, 1).predicted == 1
        assert _inst(0, 0.49, 1).predicted == 0

    def test_confidence(self):
        assert _inst(0, 0.8, 1).confidence == pytest.approx(0.8)
        assert _inst(0, 0.2, 1).confidence == pytest.approx(0.8)
        assert _inst(0, 0.5, 1).confidence == 0.5


class TestPerGroupF1:
    def test_single_group_matches_global(self):
        instances = [_inst(i, s, y) for i, (s, y) in enumerate([(0.9, 1), (0.2, 0), (0.8, 0), (0.6, 1)])]
        rows = per_group_f1(instances, "surgery_type")
        global_f1 = precision_recall_f1(
            [i.predicted for i in instances], [i.label for i in instances]
        ).f1
        assert rows == [("typeA", 4, global_f1)]

    def test_three_groups_counts_sum(self):
        rng = np.random.default_rng(0)
        instances = [
            _inst(i, float(rng.random()), int(rng.integers(2)),
                  surgery=f"type{rng.integers(3)}")
            for i in range(60)
        ]
        rows = per_group_f1(instances, "surgery_type")
        assert len(rows) == 3
        assert sum(count for _, count, _ in rows) == 60
        assert [name for name, _, _ in rows] == sorted(name for name, _, _ in rows)

    def test_missing_group_field_rejected(self):
        with pytest.raises(ValueError):
            per_group_f1([_inst(0, 0.5, 1, surgery="")], "surgery_type")

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError):
            per_group_f1([_inst(0, 0.5, 1)], "hospital")


class TestConfidenceBins:
    def test_default_five_rows_pct_non_decreasing(self):
        rng = np.random.default_rng(3)
        instances = [_inst(i, float(rng.random()), int(rng.integers(2))) for i in range(200)]
        rows = confidence_bins(instances)
        assert [t for t, _, _ in rows] == [0.9, 0.85, 0.8, 0.75, 0.7]
        pcts = [pct for _, pct, _ in rows]
        assert all(a <= b for a, b in zip(pcts, pcts[1:]))

    def test_all_below_thresholds(self):
        instances = [_inst(i, 0.6, 1) for i in range(10)]
        rows = confidence_bins(instances)
        assert all(pct == 0.0 and acc is None for _, pct, acc in rows)

    def test_accuracy_computation(self):
        instances = [_inst(0, 0.95, 1), _inst(1, 0.95, 0), _inst(2, 0.55, 1)]
        rows = confidence_bins(instances, thresholds=(0.9,))
        t, pct, acc = rows[0]
        assert pct == pytest.approx(2 / 3)
        assert acc == pytest.approx(0.5)

    def test_threshold_validation(self):
        with pytest.raises(ValueError):
            confidence_bins([], thresholds=(0.7, 0.9))  # ascending
        with pytest.raises(ValueError):
            confidence_bins([], thresholds=(1.2,))


class TestAggregateSeeds:
    def _report(self, auroc_v, seed):
        return MetricsReport(auroc=auroc_v, precision=0.5, recall=0.5, f1=0.5, seeds=[seed])

    def test_identical_reports_zero_std(self):
        agg = aggregate_seeds([self._report(0.7, 0), self._report(0.7, 1)])
        assert agg.auroc == pytest.approx(0.7)
        assert agg.std["auroc"] == 0.0

    def test_hand_arithmetic(self):
        agg = aggregate_seeds([self._report(a, i) for i, a in enumerate([0.68, 0.70, 0.72])])
        assert agg.auroc == pytest.approx(0.70)
        assert agg.std["auroc"] == pytest.approx(0.02)
        assert agg.seeds == [0, 1, 2]

    def test_single_report_rejected(self):
        with pytest.raises(ValueError):
            aggregate_seeds([self._report(0.7, 0)])


class TestMetricsReportFromInstances:
    def test_populates_tables(self):
        rng = np.random.default_rng(4)
        instances = [
            _inst(i, float(rng.random()), int(rng.integers(2)),
                  surgery=f"type{rng.integers(2)}", trainer=f"T{rng.integers(2)}")
            for i in range(40)
        ]
        rep = MetricsReport.from_instances(instances, seed=7)
        assert 0.0 <= rep.auroc <= 1.0
        assert sum(c for _, c, _ in rep.per_surgery) == 40
        assert sum(c for _, c, _ in rep.per_trainer) == 40
        assert len(rep.confidence) == 5
        assert rep.seeds == [7]
