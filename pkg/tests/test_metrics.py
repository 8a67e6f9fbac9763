import numpy as np
import pytest

from abet.errors import DomainError
from abet.metrics import (
    ScoredSet,
    analytic_bounds,
    auprc_exact,
    auroc_exact,
    build_histograms,
    fpr_at_tpr,
    metrics_exact,
    metrics_from_histograms,
)
from oracles import auroc_pair_counting, average_precision_stepwise, fpr_threshold_enumeration


def oodness(idness):
    return [-v for v in idness]


class TestAurocExact:
    def test_perfect_separation(self):
        s = ScoredSet(id_scores=[-5.0, -4.0], ood_scores=[-1.0, 0.0])
        assert auroc_exact(s) == 1.0

    def test_pair_counting_example(self):
        # ID idness {0.9, 0.4}, OOD idness {0.5, 0.1}: 3 of 4 pairs correct
        s = ScoredSet(oodness([0.9, 0.4]), oodness([0.5, 0.1]))
        assert auroc_exact(s, "id") == 0.75

    def test_positive_class_symmetry(self):
        rng = np.random.default_rng(0)
        s = ScoredSet(rng.standard_normal(31), rng.standard_normal(17) + 0.5)
        assert auroc_exact(s, "id") == auroc_exact(s, "ood")

    def test_matches_bruteforce_with_ties(self):
        rng = np.random.default_rng(1)
        for trial in range(50):
            n, m = rng.integers(1, 201), rng.integers(1, 201)
            # coarse grid forces plenty of exact ties
            ids = rng.integers(0, 12, n) / 4.0
            oods = rng.integers(0, 12, m) / 4.0
            s = ScoredSet(ids, oods)
            assert auroc_exact(s, "id") == auroc_pair_counting(ids, oods, "id")

    def test_strictly_increasing_transform_invariance(self):
        rng = np.random.default_rng(2)
        ids = rng.standard_normal(40)
        oods = rng.standard_normal(25) + 1.0
        base = auroc_exact(ScoredSet(ids, oods))
        for f in (lambda v: 2 * v + 7, np.exp):
            assert auroc_exact(ScoredSet(f(ids), f(oods))) == base

    def test_shuffle_invariance(self):
        rng = np.random.default_rng(3)
        ids = rng.standard_normal(30)
        oods = rng.standard_normal(20)
        base = metrics_exact(ScoredSet(ids, oods))
        shuffled = metrics_exact(ScoredSet(rng.permutation(ids), rng.permutation(oods)))
        assert base.auroc == shuffled.auroc
        assert base.auprc == shuffled.auprc
        assert base.fpr_at_95tpr == shuffled.fpr_at_95tpr

    def test_empty_side_rejected(self):
        with pytest.raises(DomainError):
            ScoredSet([], [1.0])


class TestAuprcExact:
    def test_perfect_separation(self):
        s = ScoredSet(id_scores=[-3.0, -2.0], ood_scores=[0.0])
        assert auprc_exact(s, "id") == 1.0

    def test_hand_step_curve(self):
        # positives (ID) idness {0.9, 0.4}, negative idness {0.5}
        s = ScoredSet(oodness([0.9, 0.4]), oodness([0.5]))
        assert auprc_exact(s, "id") == pytest.approx(0.5 + 0.5 * (2 / 3), abs=1e-15)

    def test_all_tied_gives_prevalence(self):
        s = ScoredSet([1.0, 1.0, 1.0], [1.0])
        assert auprc_exact(s, "id") == 0.75
        assert auprc_exact(s, "ood") == 0.25

    def test_matches_stepwise_oracle(self):
        rng = np.random.default_rng(4)
        for trial in range(200):
            n, m = rng.integers(1, 15), rng.integers(1, 15)
            ids = rng.integers(0, 8, n) / 2.0
            oods = rng.integers(0, 8, m) / 2.0
            s = ScoredSet(ids, oods)
            for positive in ("id", "ood"):
                assert auprc_exact(s, positive) == average_precision_stepwise(ids, oods, positive)


class TestFprAtTpr:
    def test_threshold_enumeration_example(self):
        s = ScoredSet(oodness([0.9, 0.8, 0.7, 0.6]), oodness([0.65, 0.3]))
        assert fpr_at_tpr(s, 0.95) == 0.5

    def test_all_ood_below(self):
        s = ScoredSet(oodness([0.9, 0.8]), oodness([0.1, 0.2]))
        assert fpr_at_tpr(s) == 0.0

    def test_all_ood_above(self):
        s = ScoredSet(oodness([0.5, 0.4]), oodness([0.9, 0.8]))
        assert fpr_at_tpr(s) == 1.0

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(5)
        for trial in range(100):
            n, m = rng.integers(1, 60), rng.integers(1, 60)
            ids = rng.integers(0, 10, n) / 3.0
            oods = rng.integers(0, 10, m) / 3.0
            s = ScoredSet(ids, oods)
            for target in (0.5, 0.8, 0.95, 1.0):
                assert fpr_at_tpr(s, target) == fpr_threshold_enumeration(ids, oods, target)

    def test_monotone_as_ood_idness_decreases(self):
        rng = np.random.default_rng(6)
        ids = rng.standard_normal(50)
        oods = rng.standard_normal(30)
        base = fpr_at_tpr(ScoredSet(ids, oods))
        worse_idness = fpr_at_tpr(ScoredSet(ids, oods + 1.0))  # oodness up = idness down
        assert worse_idness <= base


class TestHistograms:
    def test_minmax_endpoints(self):
        h = build_histograms(ScoredSet([0.3], [2.7]), bin_count=100)
        assert h.id_counts[0] == 1 and h.ood_counts[99] == 1

    def test_top_edge_inclusive(self):
        h = build_histograms(ScoredSet([0.0, 1.0], [0.5]), bin_count=10, bounds=(0.0, 1.0))
        assert h.id_counts[9] == 1  # the 1.0 lands in the last bin

    def test_proportional_scaling_to_cap(self):
        ids = np.linspace(0.0, 1.0, 6_000_000)
        oods = np.linspace(0.0, 1.0, 6_000_000)
        h = build_histograms(ScoredSet(ids, oods), bin_count=10, bounds=(0.0, 1.0))
        total = h.id_counts.sum() + h.ood_counts.sum()
        assert total == pytest.approx(1e7, rel=1e-12)
        ratio = h.id_counts / h.ood_counts
        assert np.max(np.abs(ratio - 1.0)) < 1e-9

    def test_degenerate_range_flagged(self):
        h = build_histograms(ScoredSet([1.0, 1.0], [1.0]), bin_count=5)
        assert h.degenerate
        assert h.id_counts[0] == 2 and h.ood_counts[0] == 1
        report = metrics_from_histograms(h)
        assert report.degenerate_range
        assert report.auroc == 0.5  # single shared bin: total tie

    def test_separated_masses(self):
        h = build_histograms(ScoredSet([0.0] * 4, [1.0] * 3), bin_count=100, bounds=(0.0, 1.0))
        report = metrics_from_histograms(h)
        assert report.auroc == 1.0
        assert report.fpr_at_95tpr == 0.0
        assert report.auprc == 1.0

    def test_binned_metrics_match_exact_on_quantized_scores(self):
        rng = np.random.default_rng(7)
        for trial in range(20):
            ids = rng.normal(0.3, 0.1, 400)
            oods = rng.normal(0.7, 0.15, 300)
            s = ScoredSet(ids, oods)
            h = build_histograms(s, bin_count=100, bounds=(-1.0, 2.0))
            hist_report = metrics_from_histograms(h)
            # quantize through the same binning, then run the exact path
            def bins(v):
                x = np.clip((v - -1.0) / 3.0, 0, 1)
                return np.minimum((x * 100).astype(int), 99).astype(float)
            exact_on_binned = metrics_exact(ScoredSet(bins(ids), bins(oods)))
            assert hist_report.auroc == pytest.approx(exact_on_binned.auroc, abs=1e-12)
            assert hist_report.auprc == pytest.approx(exact_on_binned.auprc, abs=1e-12)
            assert hist_report.fpr_at_95tpr == pytest.approx(exact_on_binned.fpr_at_95tpr, abs=1e-12)

    def test_histogram_close_to_exact_on_gaussian_mixtures(self):
        rng = np.random.default_rng(8)
        for trial in range(10):
            mu = rng.uniform(-1, 1)
            ids = np.concatenate([rng.normal(mu, 0.5, 5000), rng.normal(mu - 1.0, 0.3, 5000)])
            oods = np.concatenate([rng.normal(mu + 1.2, 0.5, 5000), rng.normal(mu + 2.2, 0.4, 5000)])
            s = ScoredSet(ids, oods)
            exact = metrics_exact(s)
            hist = metrics_from_histograms(build_histograms(s, bin_count=100))
            assert abs(hist.auroc - exact.auroc) <= 0.02
            assert abs(hist.auprc - exact.auprc) <= 0.02
            assert abs(hist.fpr_at_95tpr - exact.fpr_at_95tpr) <= 0.02


class TestAnalyticBounds:
    def test_known_scorers(self):
        assert analytic_bounds("entropy") == (0.0, 1.0)
        assert analytic_bounds("temperature") == (0.0, 1.0)
        assert analytic_bounds("msp", 4) == (-1.0, -0.25)
        assert analytic_bounds("abet") is None

    def test_msp_affine_map_lands_in_range(self):
        # negated max softmax for C classes lies in [-1, -1/C]
        bounds = analytic_bounds("msp", 5)
        h = build_histograms(ScoredSet([-1.0, -0.2], [-0.21]), bin_count=10, bounds=bounds)
        assert h.id_counts[0] == 1 and h.id_counts[9] == 1


class TestReportSerialization:
    def test_dict_round_trip_fields(self):
        s = ScoredSet([0.1, 0.2], [0.8, 0.9])
        doc = metrics_exact(s).to_dict()
        assert set(doc) == {
            "auroc", "auprc", "fpr_at_95tpr", "method", "auroc_positive",
            "auprc_positive", "n_id", "n_ood", "degenerate_range",
        }
        assert doc["method"] == "exact"
        assert doc["auroc"] == 1.0
