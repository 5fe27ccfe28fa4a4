import numpy as np

from gridsec.consistency import analyze, pvalue_ks_distance
from gridsec.model import build_local_models
from gridsec.simnet import Scenario, run_batch

from conftest import block_diagonal_model


def test_block_diagonal_is_consistent():
    m = block_diagonal_model(sizes=(2, 3), rows_per_block=4, seed=3)
    rep = analyze(m, build_local_models(m), T=200)
    assert abs(rep.ratio_to_centralized - 1.0) < 1e-9
    assert abs(rep.ratio_to_nominal - 1.0) < 1e-9
    for node in rep.nodes:
        np.testing.assert_allclose(node.chi_weights, 1.0, atol=1e-8)
        np.testing.assert_allclose(node.pi_weights, 1.0, atol=1e-6)


def test_true_mse_matches_monte_carlo(ieee14, ieee14_locals):
    rep = analyze(ieee14, ieee14_locals, T=300)
    b = run_batch(Scenario(T=300, on_alarm="observe", M=10), list(range(200)))
    mc = np.nanmean(b.mse_nodes[:, 100:, :], axis=(0, 1))
    exact = np.array([n.mse_true for n in rep.nodes])
    # 200 trials x 200 correlated steps: a few percent sampling error
    np.testing.assert_allclose(mc, exact, rtol=0.05)
    assert rep.ratio_to_centralized > 1.0


def test_ks_distance_of_exact_weights_is_small():
    assert pvalue_ks_distance(np.ones(5), n_samples=200_000) < 0.005
    assert pvalue_ks_distance(np.full(5, 1.3), n_samples=200_000) > 0.05
