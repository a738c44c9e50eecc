import numpy as np
import pytest

from sil.simgen import (Scenario, ScenarioConfig, block_support, gen_block_precision, gen_true_beta,
                        sample_study, stream)


def offdiag_support(omega):
    return {(j + 1, k + 1) for j, k in zip(*np.nonzero(np.tril(omega, -1)))}


def test_ring_and_hub_support():
    rng = np.random.default_rng(0)
    ring = gen_block_precision("ring", 3, rng)
    assert offdiag_support(ring) == {(2, 1), (3, 2), (3, 1)}
    hub = gen_block_precision(Scenario.HUB, 4, rng)
    assert offdiag_support(hub) == {(2, 1), (3, 1), (4, 1)}
    with pytest.raises(ValueError):
        gen_block_precision("ring", 1, rng)


@pytest.mark.parametrize("scenario", list(Scenario))
def test_precision_normalised_symmetric_pd(scenario):
    rng = np.random.default_rng(1)
    for _ in range(50):
        om = gen_block_precision(scenario, 10, rng)
        np.testing.assert_array_equal(om, om.T)
        assert np.linalg.eigvalsh(om).min() > 0
        np.testing.assert_allclose(np.diag(np.linalg.inv(om)), 1.0, atol=1e-8)


def test_construction_recipe_reproduced_independently():
    # ring lower triangle: (k, k-1) and (p_B, 1); U(-1.5, -0.5) draws in row-major order,
    # symmetrise, diagonal 0.5 - off-diagonal row sum, then D Omega D with D = sqrt(diag(Omega^-1))
    pB = 6
    om = gen_block_precision("ring", pB, np.random.default_rng(42))
    rng = np.random.default_rng(42)
    pos = sorted([(k, k - 1) for k in range(1, pB)] + [(pB - 1, 0)])
    raw = np.zeros((pB, pB))
    for (j, k), v in zip(pos, rng.uniform(-1.5, -0.5, size=len(pos))):
        raw[j, k] = raw[k, j] = v
    np.fill_diagonal(raw, 0.5 - raw.sum(axis=1))
    D = np.sqrt(np.diag(np.linalg.inv(raw)))
    np.testing.assert_allclose(om, D[:, None] * raw * D[None, :], rtol=1e-12)


def test_random_scenario_edge_count_mean():
    rng = np.random.default_rng(3)
    pB = 10
    counts = [int(block_support("random", pB, rng).sum()) for _ in range(4000)]
    mean = 3 * (pB - 1) / 2
    sd = np.sqrt(pB * (pB - 1) / 2 * (3 / pB) * (1 - 3 / pB))
    assert abs(np.mean(counts) - mean) < 4 * sd / np.sqrt(len(counts))


@pytest.mark.parametrize("scenario,per_block", [("ring", 10), ("hub", 9)])
def test_true_graph_matches_structure(scenario, per_block):
    st = sample_study(ScenarioConfig(scenario=scenario, blocks=4, n=5, n_validate=5, n_test=5, seed=7))
    assert st.graph.n_edges == 4 * per_block
    for m in range(st.config.M):
        A = st.precision(m) != 0
        np.fill_diagonal(A, False)
        assert np.array_equal(A, st.graph.adjacency_matrix() != 0)


def test_random_scenario_support_shared_across_datasets():
    st = sample_study(ScenarioConfig(scenario="random", blocks=3, n=5, n_validate=5, n_test=5, seed=2))
    pats = [st.precision(m) != 0 for m in range(st.config.M)]
    assert all(np.array_equal(pats[0], p) for p in pats)


def test_true_beta_rules():
    cfg = ScenarioConfig(blocks=3, block_size=5, M=4, seed=0)
    precs = [[gen_block_precision("ring", 5, stream(0, m, b)) for b in range(3)] for m in range(4)]
    B = gen_true_beta(cfg, precs, [stream(0, m, 99) for m in range(4)])
    assert np.all(B[10:] == 0) and np.all(B[:10] != 0)
    off = gen_true_beta(cfg.with_(p_ht=1.0), precs, [stream(0, m, 99) for m in range(4)])
    assert np.all(off[5:] == 0)
    e1 = np.zeros(5)
    e1[0] = 1.0
    unit = gen_true_beta(cfg.with_(alpha=tuple(e1)), precs, [stream(0, m, 99) for m in range(4)])
    for m in range(4):
        np.testing.assert_array_equal(unit[:5, m], precs[m][0][0])


def test_heterogeneity_fraction():
    cfg = ScenarioConfig(blocks=2, block_size=3, M=1, p_ht=0.3)
    precs = [[np.eye(3), np.eye(3)]]
    trials = 4000
    off = sum(not gen_true_beta(cfg, precs, [stream(5, k)]).any(axis=1)[3:].any() for k in range(trials))
    assert abs(off / trials - 0.3) < 3 * np.sqrt(0.3 * 0.7 / trials)


def test_empirical_covariance():
    cfg = ScenarioConfig(scenario="hub", blocks=2, block_size=6, M=2, n=50000, n_validate=1, n_test=1, seed=3)
    st = sample_study(cfg)
    for m in range(2):
        emp = np.cov(st.train.X[m], rowvar=False)
        assert np.max(np.abs(emp - st.covariance(m))) < 0.05


def test_signal_to_noise_scenario_one():
    st = sample_study(ScenarioConfig(n_test=2000, seed=11))
    snr = [np.var(x @ st.beta[:, m]) / st.config.sigma2 for m, x in enumerate(st.test.X)]
    assert 2.0 <= np.mean(snr) <= 3.0


def test_determinism_and_replicate_isolation():
    cfg = ScenarioConfig(blocks=2, M=2, n=20, n_validate=10, n_test=10, seed=5)
    a, b = sample_study(cfg, 3), sample_study(cfg, 3)
    for s in ("train", "validate", "test"):
        for xa, xb in zip(getattr(a, s).X, getattr(b, s).X):
            assert np.array_equal(xa, xb)
    np.testing.assert_array_equal(a.beta, b.beta)
    c = sample_study(cfg, 4)
    assert not np.array_equal(a.train.X[0], c.train.X[0])
    assert not np.array_equal(a.train.X[0], sample_study(cfg.with_(seed=6), 3).train.X[0])


def test_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(p_ht=1.5)
    with pytest.raises(ValueError):
        ScenarioConfig(sigma2=0.0)
    with pytest.raises(ValueError):
        ScenarioConfig(alpha=(1.0, 2.0))
    assert ScenarioConfig(scenario="2").scenario is Scenario.HUB
    assert ScenarioConfig().p == 100
    st = sample_study(ScenarioConfig(blocks=2, block_size=4, M=3, n=7, n_validate=8, n_test=9))
    assert st.train.n == (7, 7, 7) and st.validate.n == (8, 8, 8) and st.test.n == (9, 9, 9)
    assert st.beta.shape == (8, 3)


def test_with_recomputes_defaulted_alpha():
    hub = ScenarioConfig().with_(scenario="hub")
    assert hub == ScenarioConfig(scenario="hub")
    assert ScenarioConfig(block_size=4).with_(block_size=6) == ScenarioConfig(block_size=6)
    custom = ScenarioConfig(alpha=(1.0,) * 10).with_(scenario="hub")
    assert custom.alpha == (1.0,) * 10
