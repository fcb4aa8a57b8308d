import numpy as np
import pytest

from metablock import (
    ABSENT,
    PRESENT,
    UNOBSERVED,
    DataError,
    EdgeData,
    HyperParams,
    Metadata,
    NumericalError,
    SynthMixedConfig,
    SynthSingleConfig,
    LatentRecord,
    logistic,
    simulate_network,
    stick_matrix,
    stick_weights,
    synth_mixed,
    synth_single,
)


class TestLogistic:
    def test_symmetry_point(self):
        assert logistic(0.0) == 0.5

    def test_reflection_identity(self):
        p = logistic(3.7)
        assert logistic(-3.7) == pytest.approx(1.0 - p, abs=1e-15)

    def test_saturation_no_overflow(self):
        val = logistic(500.0)
        assert 1.0 - 1e-12 < val <= 1.0
        assert logistic(-500.0) >= 0.0
        assert np.isfinite(logistic(np.array([-800.0, 800.0]))).all()


class TestStickWeights:
    def test_zero_scores(self):
        sw = stick_weights(np.zeros(3))
        np.testing.assert_allclose(sw.pi, [0.5, 0.25, 0.125], atol=1e-15)
        assert sw.tail == pytest.approx(0.125, abs=1e-15)

    def test_saturation(self):
        sw = stick_weights(np.array([40.0, 0.0]))
        assert sw.pi[0] == pytest.approx(1.0, abs=1e-12)
        assert sw.tail == pytest.approx(0.0, abs=1e-12)

    def test_term_by_term_product(self):
        # frozen from a 50-digit mpmath evaluation of the stick products
        sw = stick_weights(np.array([-1.2, 0.4, 2.0]))
        np.testing.assert_allclose(
            sw.pi,
            [0.23147521650098235707, 0.46010630437145563418, 0.2716540952099391436],
            rtol=1e-14)
        assert sw.tail == pytest.approx(0.036764383917622865144, rel=1e-14)

    @pytest.mark.parametrize("seed", range(20))
    def test_normalization_invariant(self, seed):
        rng = np.random.default_rng(seed)
        k = rng.integers(1, 40)
        v = rng.normal(0, rng.uniform(0.5, 25.0), size=k)
        sw = stick_weights(v)
        assert abs(sw.pi.sum() + sw.tail - 1.0) < 1e-12
        assert np.all(sw.pi > 0) and np.all(sw.pi < 1)
        assert 0.0 <= sw.tail < 1.0

    def test_log_space_branch_matches_linear(self):
        v = np.array([31.0, -5.0, 2.0])  # triggers the |v| > 30 branch
        sw = stick_weights(v)
        c = 1 / (1 + np.exp(-v))
        rem = np.concatenate([[1.0], np.cumprod(1 - c)])
        np.testing.assert_allclose(sw.pi, c * rem[:-1], rtol=1e-12)

    def test_monotone_decay_for_nonpositive_mean(self):
        rng = np.random.default_rng(0)
        pis = np.array([stick_weights(rng.normal(-0.5, 1.0, 6)).pi
                        for _ in range(20000)])
        means = pis.mean(axis=0)
        assert np.all(np.diff(means) < 0)

    def test_matrix_form_matches_single_column(self):
        rng = np.random.default_rng(3)
        v = rng.normal(size=(5, 4))
        pi, tail = stick_matrix(v)
        for i in range(4):
            sw = stick_weights(v[:, i])
            np.testing.assert_allclose(pi[:, i], sw.pi, rtol=1e-13)
            assert tail[i] == pytest.approx(sw.tail, rel=1e-13)


class TestEdgeData:
    def test_diagonal_forced_unobserved(self):
        obs = np.zeros((3, 3, 1), dtype=np.int8)
        obs[0, 1, 0] = PRESENT
        data = EdgeData(obs)
        assert np.all(data.obs[np.arange(3), np.arange(3), :] == UNOBSERVED)
        assert data.n_observed == 7  # 9 - 3 diagonal + nothing else hidden

    def test_rejects_bad_codes(self):
        with pytest.raises(DataError):
            EdgeData(np.full((2, 2, 1), 7, dtype=np.int8))

    def test_rejects_all_unobserved(self):
        with pytest.raises(DataError):
            EdgeData(np.full((2, 2, 1), UNOBSERVED, dtype=np.int8))

    def test_observed_index_order_and_values(self):
        obs = np.full((2, 2, 2), UNOBSERVED, dtype=np.int8)
        obs[0, 1, 0] = PRESENT
        obs[0, 1, 1] = ABSENT
        obs[1, 0, 1] = PRESENT
        data = EdgeData(obs)
        i, j, m, y = data.observed_index()
        assert list(zip(i, j, m, y)) == [(0, 1, 0, 1), (0, 1, 1, 0), (1, 0, 1, 1)]


class TestHyperParams:
    def test_rejects_nonpositive(self):
        with pytest.raises(DataError):
            HyperParams(a_F=0.0)
        with pytest.raises(DataError):
            HyperParams(gamma_b=-1.0)


class TestSimulate:
    def test_deterministic(self):
        hyper = HyperParams()
        phi = Metadata.intercept_only(12)
        d1, r1 = simulate_network(hyper, phi, 2, seed=5)
        d2, r2 = simulate_network(hyper, phi, 2, seed=5)
        assert np.array_equal(d1.obs, d2.obs)
        assert np.array_equal(r1.v, r2.v)
        assert np.array_equal(r1.s, r2.s)

    def test_symmetric_prior_gives_half_density(self):
        # gamma_a == gamma_b makes each edge marginally Bernoulli(1/2);
        # CLT oracle: the pooled density over many draws is 0.5 +- 3 sigma.
        hyper = HyperParams()
        phi = Metadata.intercept_only(15)
        rng = np.random.default_rng(77)
        edges = total = 0
        for _ in range(40):
            data, _ = simulate_network(hyper, phi, 1, rng, max_communities=10**5)
            edges += int((data.obs == PRESENT).sum())
            total += data.n_observed
        dens = edges / total
        se = np.sqrt(0.25 / total)
        assert abs(dens - 0.5) < 3 * se

    def test_lazy_extension_instrumentation(self):
        # every instantiated community was consulted and nothing beyond
        hyper = HyperParams()
        phi = Metadata.intercept_only(10)
        for seed in range(5):
            _, rec = simulate_network(hyper, phi, 1, seed=seed, max_communities=10**5)
            assert rec.max_stick_index == rec.K - 1
            assert rec.K >= rec.K_occupied

    def test_community_cap_raises(self):
        # a prior pushed far negative makes acceptance cumulate too slowly
        hyper = HyperParams(a_S=0.01, b_S=100.0)  # lambda_S tiny -> |mu| huge
        phi = Metadata.intercept_only(6)
        raised = False
        for seed in range(6):
            try:
                simulate_network(hyper, phi, 1, seed=seed, max_communities=30)
            except NumericalError:
                raised = True
        assert raised

    def test_shared_membership_limit(self):
        # phi = 1 and lambda_V -> infinity collapse every node onto one pi;
        # per-node indicator frequencies then agree within binomial error.
        hyper = HyperParams(a_V=1e8, b_V=1e2)
        phi = Metadata.intercept_only(16)
        data, rec = simulate_network(hyper, phi, 40, seed=9, max_communities=10**5)
        n, m_rel = 16, 40
        freq = np.zeros(n)
        draws = np.zeros(n)
        for i in range(n):
            src = rec.s[i, :, :]
            freq[i] = np.sum(src[src >= 0] == 0)
            draws[i] = np.sum(src >= 0)
        p = freq.sum() / draws.sum()
        se = np.sqrt(p * (1 - p) / draws[0])
        assert np.all(np.abs(freq / draws - p) < 4 * se)

    def test_latent_record_roundtrip(self, tmp_path):
        hyper = HyperParams()
        phi = Metadata.intercept_only(8)
        _, rec = simulate_network(hyper, phi, 2, seed=3)
        path = tmp_path / "latents.jsonl"
        rec.to_jsonl(path)
        back = LatentRecord.from_jsonl(path)
        np.testing.assert_array_equal(back.v, rec.v)
        np.testing.assert_array_equal(back.s, rec.s)
        w1, w2 = rec.w, back.w
        assert np.array_equal(np.isnan(w1), np.isnan(w2))
        np.testing.assert_allclose(w1[~np.isnan(w1)], w2[~np.isnan(w2)])
        assert back.max_stick_index == rec.max_stick_index


class TestSynthSingle:
    def test_block_structure(self):
        data, labels = synth_single(0)
        assert data.N == 80 and data.M == 1
        assert labels[0] == labels[15] == 0
        assert labels[16] == 1
        assert np.bincount(labels).tolist() == [16] * 5

    def test_block_densities_binomial_oracle(self):
        cfg = SynthSingleConfig()
        data, labels = synth_single(123, cfg)
        same = labels[:, None] == labels[None, :]
        off_diag = ~np.eye(80, dtype=bool)
        w_in = data.obs[:, :, 0][same & off_diag]
        w_out = data.obs[:, :, 0][~same]
        n_in, n_out = w_in.size, w_out.size
        p_in = (w_in == PRESENT).mean()
        p_out = (w_out == PRESENT).mean()
        assert abs(p_in - cfg.p_within) < 3 * np.sqrt(cfg.p_within * (1 - cfg.p_within) / n_in)
        assert abs(p_out - cfg.p_between) < 3 * np.sqrt(cfg.p_between * (1 - cfg.p_between) / n_out)

    def test_expected_edge_count(self):
        # closed form from the construction: 1200 within-pairs, 5120 between
        cfg = SynthSingleConfig()
        expected = 1200 * cfg.p_within + 5120 * cfg.p_between
        counts = [int((synth_single(s, cfg)[0].obs == PRESENT).sum()) for s in range(20)]
        sd = np.sqrt(1200 * cfg.p_within * (1 - cfg.p_within)
                     + 5120 * cfg.p_between * (1 - cfg.p_between))
        assert abs(np.mean(counts) - expected) < 3 * sd / np.sqrt(len(counts))

    def test_override_constants(self):
        cfg = SynthSingleConfig(n_blocks=2, block_size=4, p_within=0.8, p_between=0.05)
        data, labels = synth_single(1, cfg)
        assert data.N == 8
        assert np.bincount(labels).tolist() == [4, 4]


class TestSynthMixed:
    def test_membership_rows_sum_to_one(self):
        _, mem = synth_mixed(4)
        np.testing.assert_allclose(mem.sum(axis=1), 1.0, atol=1e-12)

    def test_deterministic(self):
        d1, m1 = synth_mixed(9)
        d2, m2 = synth_mixed(9)
        assert np.array_equal(d1.obs, d2.obs)
        np.testing.assert_array_equal(m1, m2)

    def test_mixedness(self):
        # Monte-Carlo over seeds: memberships are meaningfully mixed (a
        # sizable share of nodes carries real second memberships).
        cfg = SynthMixedConfig()
        ents, second = [], []
        for seed in range(10):
            _, mem = synth_mixed(seed, cfg)
            p = np.clip(mem, 1e-12, 1.0)
            ents.append(float(np.mean(-(p * np.log(p)).sum(axis=1))))
            second.append(float(np.mean(np.sort(mem, axis=1)[:, -2] > 0.1)))
        assert np.mean(ents) > 0.15
        assert np.mean(second) > 0.1

    def test_shape(self):
        data, mem = synth_mixed(0)
        assert data.N == 80 and data.M == 1
        assert mem.shape == (80, 4)
