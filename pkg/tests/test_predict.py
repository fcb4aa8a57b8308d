import itertools

import numpy as np
import pytest

from metablock import (
    DataError,
    EdgeData,
    PRESENT,
    UNOBSERVED,
    Mask,
    PosteriorSample,
    affinity_graph,
    auc,
    auc_scores,
    make_mask,
    predict_links,
    synth_single,
    variational_distance,
)
from metablock.predict import PredictionTable, read_auc_report, write_auc_report


def brute_force_auc(scores, labels):
    """Independent oracle: explicit loop over all (positive, negative) pairs."""
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def _sample(v, A, B, ga=1.0, gb=1.0):
    return PosteriorSample(v=np.asarray(v, float), A=np.asarray(A, np.int64),
                           B=np.asarray(B, np.int64), gamma_a=ga, gamma_b=gb,
                           iteration=0)


class TestMask:
    def test_hidden_fraction_binomial(self):
        data, _ = synth_single(0)
        n_obs = data.n_observed
        fracs = []
        for seed in range(10):
            _, mask = make_mask(data, 0.5, seed)
            fracs.append(mask.triples.shape[0] / n_obs)
        se = np.sqrt(0.25 / n_obs)
        assert all(abs(f - 0.5) < 3 * se for f in fracs)

    def test_deterministic(self):
        data, _ = synth_single(0)
        _, m1 = make_mask(data, 0.3, 42)
        _, m2 = make_mask(data, 0.3, 42)
        np.testing.assert_array_equal(m1.triples, m2.triples)

    def test_partition_reconstructs_data(self):
        data, _ = synth_single(0)
        train, mask = make_mask(data, 0.5, 7)
        rebuilt = train.copy()
        t = mask.triples
        rebuilt.obs[t[:, 0], t[:, 1], t[:, 2]] = data.obs[t[:, 0], t[:, 1], t[:, 2]]
        assert np.array_equal(rebuilt.obs, data.obs)
        # hidden entries really are unobserved in train
        assert np.all(train.obs[t[:, 0], t[:, 1], t[:, 2]] == UNOBSERVED)

    def test_rejects_bad_probability(self):
        data, _ = synth_single(0)
        with pytest.raises(DataError):
            make_mask(data, 0.0, 1)
        with pytest.raises(DataError):
            make_mask(data, 1.0, 1)

    def test_json_roundtrip(self, tmp_path):
        data, _ = synth_single(0)
        _, mask = make_mask(data, 0.5, 3)
        mask.to_json(tmp_path / "m.json")
        back = Mask.from_json(tmp_path / "m.json")
        np.testing.assert_array_equal(back.triples, mask.triples)
        assert back.seed == mask.seed and back.probability == mask.probability


class TestPredictLinks:
    def test_single_sample_degenerate_membership(self):
        # pi effectively one-hot on community 0; What = (3+1)/(3+1+1+1) = 4/6
        smp = _sample(v=[[500.0, 500.0]], A=[[[3]]], B=[[[1]]])
        table = predict_links([smp], [(0, 1, 0)])
        assert table.p_hat[0] == pytest.approx(4 / 6, abs=1e-12)

    def test_tail_only_gives_prior_mean(self):
        smp = _sample(v=[[-500.0, -500.0]], A=[[[0]]], B=[[[0]]])
        table = predict_links([smp], [(0, 1, 0)])
        assert table.p_hat[0] == pytest.approx(0.5, abs=1e-12)

    def test_identical_samples_average_to_single_value(self):
        smp = _sample(v=[[1.0, -0.5]], A=[[[2]]], B=[[[5]]])
        t1 = predict_links([smp], [(0, 1, 0)])
        t3 = predict_links([smp, smp, smp], [(0, 1, 0)])
        assert t1.p_hat[0] == pytest.approx(t3.p_hat[0], abs=1e-15)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(0)
        samples = [_sample(v=rng.normal(size=(3, 4)),
                           A=rng.integers(0, 5, (3, 3, 1)),
                           B=rng.integers(0, 5, (3, 3, 1))) for _ in range(5)]
        queries = [(0, 1, 0), (2, 3, 0), (3, 0, 0)]
        p1 = predict_links(samples, queries).p_hat
        p2 = predict_links(samples[::-1], queries).p_hat
        np.testing.assert_allclose(p1, p2, atol=1e-15)

    def test_empty_samples_error(self):
        with pytest.raises(DataError):
            predict_links([], [(0, 1, 0)])

    def test_hand_computed_mixture(self):
        # two communities, explicit sums against the formula
        v = np.array([[0.0, 1.0], [0.5, -1.0]])
        A = np.array([[[4, 0], [1, 2]]]).reshape(2, 2, 1)
        B = np.array([[[1, 3], [0, 2]]]).reshape(2, 2, 1)
        smp = _sample(v=v, A=A, B=B)
        from metablock.model import stick_weights
        sw0, sw1 = stick_weights(v[:, 0]), stick_weights(v[:, 1])
        w_hat = (A + 1) / (A + B + 2)
        expected = 0.0
        for k in range(2):
            for l in range(2):
                expected += sw0.pi[k] * sw1.pi[l] * w_hat[k, l, 0]
        covered = (1 - sw0.tail) * (1 - sw1.tail)
        expected += (1 - covered) * 0.5
        table = predict_links([smp], [(0, 1, 0)])
        assert table.p_hat[0] == pytest.approx(expected, abs=1e-12)


class TestAUC:
    def test_perfect_separation(self):
        assert auc_scores([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0

    def test_all_ties(self):
        assert auc_scores([0.5, 0.5, 0.5], [1, 0, 1]) == 0.5

    def test_derived_examples(self):
        # brute-force oracle: (0.9,0.4,0.6)/(1,0,1) -> both positives beat
        # the negative; (0.4,0.9,0.6)/(1,0,1) -> neither does.
        assert brute_force_auc([0.9, 0.4, 0.6], [1, 0, 1]) == 1.0
        assert auc_scores([0.9, 0.4, 0.6], [1, 0, 1]) == 1.0
        assert brute_force_auc([0.4, 0.9, 0.6], [1, 0, 1]) == 0.0
        assert auc_scores([0.4, 0.9, 0.6], [1, 0, 1]) == 0.0

    def test_single_class_errors(self):
        with pytest.raises(DataError):
            auc_scores([0.5, 0.6], [1, 1])

    def test_brute_force_equivalence_all_small_label_sets(self):
        # exact agreement with the pair-counting oracle on every label
        # pattern of up to 6 points, with tie-heavy score grids
        rng = np.random.default_rng(0)
        for n in range(2, 7):
            scores = rng.integers(0, 3, size=n) / 2.0  # many ties
            for labels in itertools.product([0, 1], repeat=n):
                if 0 < sum(labels) < n:
                    expected = brute_force_auc(scores, labels)
                    got = auc_scores(scores, np.array(labels))
                    assert got == pytest.approx(expected, abs=1e-12)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(1)
        scores = rng.random(50)
        labels = rng.integers(0, 2, 50)
        labels[0], labels[1] = 0, 1
        a1 = auc_scores(scores, labels)
        a2 = auc_scores(np.exp(3 * scores) - 1, labels)
        assert a1 == pytest.approx(a2, abs=1e-12)

    def test_table_roundtrip_and_auc(self, tmp_path):
        table = PredictionTable(
            i=np.array([0, 1, 2]), j=np.array([1, 2, 0]), m=np.zeros(3, int),
            p_hat=np.array([0.9, 0.2, 0.5]), y_true=np.array([1.0, 0.0, np.nan]))
        path = tmp_path / "p.csv"
        table.to_csv(path)
        back = PredictionTable.from_csv(path)
        np.testing.assert_allclose(back.p_hat, table.p_hat)
        assert np.isnan(back.y_true[2])
        assert auc(back) == 1.0


class TestVariationalDistance:
    def test_identical_memberships(self):
        pi = np.tile([[0.3], [0.4]], (1, 3))
        tail = np.full(3, 0.3)
        D = variational_distance(pi, tail)
        np.testing.assert_allclose(D, 0.0, atol=1e-15)

    def test_disjoint_degenerate(self):
        pi = np.array([[1.0, 0.0], [0.0, 1.0]])
        D = variational_distance(pi, np.zeros(2))
        assert D[0, 1] == pytest.approx(1.0)

    def test_hand_computed_value(self):
        # includes the tail as a pseudo-community
        pi = np.array([[0.5, 0.25], [0.5, 0.25]])
        tail = np.array([0.0, 0.5])
        D = variational_distance(pi, tail)
        assert D[0, 1] == pytest.approx(0.5, abs=1e-15)

    def test_metric_properties(self):
        rng = np.random.default_rng(2)
        raw = rng.dirichlet(np.ones(4), size=6)
        pi, tail = raw[:, :3].T, raw[:, 3]
        D = variational_distance(pi, tail)
        assert np.allclose(D, D.T)
        assert np.allclose(np.diag(D), 0.0)
        assert np.all(D >= -1e-15) and np.all(D <= 1 + 1e-15)
        for a, b, c in itertools.permutations(range(6), 3):
            assert D[a, c] <= D[a, b] + D[b, c] + 1e-12


class TestAffinityGraph:
    def test_all_distant_gives_no_edges(self):
        D = 1.0 - np.eye(3)
        dot = affinity_graph(D)
        assert "--" not in dot

    def test_all_identical_gives_complete_graph(self):
        D = np.zeros((4, 4))
        dot = affinity_graph(D)
        assert dot.count("--") == 6
        assert "weight=1.000000" in dot

    def test_strict_threshold_boundary(self):
        # weight exactly 0.5 is excluded under the strict-greater rule
        D = np.zeros((2, 2))
        D[0, 1] = D[1, 0] = 0.5
        assert "--" not in affinity_graph(D, threshold=0.5)
        D[0, 1] = D[1, 0] = 0.499
        assert '"0" -- "1"' in affinity_graph(D, threshold=0.5)

    def test_community_colors_and_names(self):
        D = np.zeros((2, 2))
        dot = affinity_graph(D, communities=[0, 1], names=["alice", "bob"])
        assert '"alice"' in dot and 'community="1"' in dot and "fillcolor" in dot


def test_auc_report_roundtrip(tmp_path):
    path = tmp_path / "auc.txt"
    write_auc_report(path, [0.7, 0.8, 0.75])
    rec = read_auc_report(path)
    assert rec["n_masks"] == 3
    assert rec["mean_auc"] == pytest.approx(0.75, abs=1e-6)
    assert rec["mask_001_auc"] == pytest.approx(0.8, abs=1e-6)
