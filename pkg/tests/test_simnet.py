import math

import numpy as np
import pytest

from gridsec.errors import ConfigError
from gridsec.ledger import export_ledger, verify_chain
from gridsec.model import GlobalSystemModel, build_local_models
from gridsec.simnet import (
    STREAM_ORDER,
    AttackSpec,
    Baselines,
    MisbehaviorSpec,
    Scenario,
    apply_attack,
    centralized_kalman_step,
    make_streams,
    robust_kalman_step,
    run,
    run_batch,
    step_truth,
)
from gridsec.estimator import GaussianBelief
from gridsec.simnet.engine import initial_estimate

from conftest import block_diagonal_model
from oracles import kalman_explicit


def test_step_truth_noiseless():
    m = block_diagonal_model(sigma2=0.0)
    x0 = np.arange(m.state_dim, dtype=float)
    x, y = step_truth(x0, m, np.random.default_rng(0))
    np.testing.assert_array_equal(x, x0)
    np.testing.assert_array_equal(y, m.H @ x0)


def test_step_truth_deterministic(ieee14):
    a = step_truth(ieee14.x0, ieee14, make_streams(11).truth)
    b = step_truth(ieee14.x0, ieee14, make_streams(11).truth)
    for u, v in zip(a, b):
        assert u.tobytes() == v.tobytes()
    assert STREAM_ORDER == ("truth", "attack", "miners", "init")


def test_step_truth_noise_variance(ieee14):
    rng = make_streams(3).truth
    n = ieee14.state_dim
    inc, res = [], []
    x = ieee14.x0
    for _ in range(100_000):
        xn, y = step_truth(x, ieee14, rng)
        inc.append(xn - x)
        res.append(y - ieee14.H @ xn)
        x = xn
    inc, res = np.array(inc), np.array(res)
    # sample variance of 1e5 normals has relative sd sqrt(2/1e5) = 0.45%
    np.testing.assert_allclose(inc.var(axis=0), 1e-4, rtol=0.03)
    np.testing.assert_allclose(res.var(axis=0), 1e-4, rtol=0.03)
    assert inc.shape[1] == n


def test_apply_attack_examples(ieee14):
    y = np.linspace(0, 1, ieee14.n_sensors)
    u = np.full(ieee14.n_sensors, 0.5)
    none = Scenario(attacks=(AttackSpec((1, 2), 10, 0.0),))
    np.testing.assert_array_equal(apply_attack(y, none, 20, u), y)
    sc = Scenario(attacks=(AttackSpec((1, 2), 10, 0.3),))
    np.testing.assert_array_equal(apply_attack(y, sc, 9, u), y)
    out = apply_attack(y, sc, 10, u)
    rows = list(ieee14.partition[0]) + list(ieee14.partition[1])
    others = [k for k in range(ieee14.n_sensors) if k not in rows]
    np.testing.assert_allclose(out[rows] - y[rows], 0.15)
    np.testing.assert_array_equal(out[others], y[others])


def test_attack_mean(ieee14):
    sc = Scenario(attacks=(AttackSpec((1,), 0, 0.3),))
    rng = make_streams(5).attack
    rows = list(ieee14.partition[0])
    d = np.array([apply_attack(np.zeros(ieee14.n_sensors), sc, 1, rng.random(ieee14.n_sensors))[rows] for _ in range(20_000)])
    assert d.min() >= 0 and d.max() < 0.3
    # mean of Uniform[0, 0.3] is 0.15 with sd 0.0866
    assert abs(d.mean() - 0.15) < 4 * 0.0866 / math.sqrt(d.size)


def test_scenario_validation():
    with pytest.raises(ConfigError):
        Scenario(M=1)
    with pytest.raises(ConfigError):
        Scenario(attacks=(AttackSpec((9,), 1, 0.1),))
    with pytest.raises(ConfigError):
        Scenario(misbehaviors=(MisbehaviorSpec(2, 1, 0.1), MisbehaviorSpec(2, 5, 0.1)))
    with pytest.raises(ConfigError):
        MisbehaviorSpec(2, 0, 0.1)
    with pytest.raises(ConfigError):
        Scenario(on_alarm="ignore")


def test_block_diagonal_matches_centralized():
    """No shared states: the distributed posterior is the centralized one."""
    m = block_diagonal_model(sizes=(2, 3, 2), rows_per_block=4, seed=1)
    T = 200
    sc = Scenario(model=m, T=T, seed=9, on_alarm="observe", M=10, difficulty=0, n_miners=1)
    rec = run(sc, keep_ledgers=False)
    streams = make_streams(sc.seed)
    mean = initial_estimate(m, streams.init)
    P = m.sigma_v2 * np.eye(m.state_dim)
    R = m.sigma_w2 * np.eye(m.n_sensors)
    Q = m.sigma_v2 * np.eye(m.state_dim)
    x = m.x0
    worst = 0.0
    for t in range(1, T + 1):
        x, y = step_truth(x, m, streams.truth)
        mean, P, _, _ = kalman_explicit(mean, P, m.A, Q, m.H, R, y)
        for nd in build_local_models(m):
            worst = max(worst, np.max(np.abs(rec.estimates[nd.node_id][t] - mean[nd.state_indices])))
    np.testing.assert_array_equal(rec.x_true[T], x)
    assert worst <= 1e-10


def test_centralized_step_matches_oracle(ieee14):
    rng = np.random.default_rng(0)
    b = GaussianBelief(rng.normal(size=13) * 0.01, 1e-4 * np.eye(13))
    y = rng.normal(size=23) * 0.01
    post = centralized_kalman_step(b, ieee14, y)
    ref, P_ref, _, _ = kalman_explicit(b.mean, b.cov, ieee14.A, 1e-4 * np.eye(13), ieee14.H, 1e-4 * np.eye(23), y)
    np.testing.assert_allclose(post.mean, ref, atol=1e-12)
    np.testing.assert_allclose(post.cov, P_ref, atol=1e-15)


def test_robust_step_examples(ieee14):
    b = GaussianBelief(np.zeros(13), 1e-4 * np.eye(13))
    y = ieee14.H @ np.full(13, 0.001)
    post, rej = robust_kalman_step(b, ieee14, y)
    assert not rej
    np.testing.assert_array_equal(post.mean, centralized_kalman_step(b, ieee14, y).mean)
    big = y + 10.0
    post, rej = robust_kalman_step(b, ieee14, big)
    assert rej
    np.testing.assert_array_equal(post.mean, b.mean)
    # no information arrived: the covariance is the predicted one
    np.testing.assert_allclose(post.cov, 2e-4 * np.eye(13), rtol=1e-12)


def test_robust_rejection_rate(ieee14):
    rng = np.random.default_rng(17)
    x = np.zeros(13)
    b = GaussianBelief(np.zeros(13), 1e-4 * np.eye(13))
    n, rejected = 10_000, 0
    for _ in range(n):
        x, y = step_truth(x, ieee14, rng)
        b, r = robust_kalman_step(b, ieee14, y)
        rejected += r
    # Binomial(1e4, 0.01) has sd 0.1% of n
    assert abs(rejected / n - 0.01) <= 0.003


def test_run_is_deterministic():
    sc = Scenario(T=80, seed=21, attacks=(AttackSpec((2,), 30, 0.3),), M=40)
    a, b = run(sc), run(sc)
    for k in a.mse:
        np.testing.assert_array_equal(a.mse[k], b.mse[k])
    assert a.gamma_net == b.gamma_net and a.events == b.events
    assert export_ledger(a.ledger) == export_ledger(b.ledger)
    assert verify_chain(a.ledger, a.registry).clean


@pytest.mark.parametrize(
    "sc",
    [
        Scenario(T=150, seed=4, attacks=(AttackSpec((1, 2), 60, 0.3),), M=30),
        Scenario(T=150, seed=5, attacks=(AttackSpec((1,), 40, 0.05),), M=20, on_alarm="restart", investigation_delay=5),
        Scenario(T=120, seed=6, misbehaviors=(MisbehaviorSpec(3, 1, 0.1),), M=30, on_alarm="observe"),
        Scenario(T=100, seed=7, misbehaviors=(MisbehaviorSpec(2, 20, 0.02, "random-estimate"),), M=30, on_alarm="observe"),
        Scenario(T=100, seed=8, misbehaviors=(MisbehaviorSpec(4, 30, 0.0, "constant-estimate"),), M=30, on_alarm="observe"),
    ],
)
def test_batch_matches_single_run(sc):
    rec = run(sc, keep_ledgers=False)
    b = run_batch(sc, [sc.seed], record_estimates=True, record_stats=True)
    assert b.gamma_net[0] == rec.gamma_net
    assert b.t_end[0] == rec.t_end
    for k in rec.mse:
        np.testing.assert_allclose(b.mse[k][0], rec.mse[k], rtol=1e-9, atol=1e-15)
    for i, arr in rec.estimates.items():
        np.testing.assert_allclose(b.estimates[i][0], arr, rtol=1e-9, atol=1e-15)
    np.testing.assert_allclose(b.chi[0], rec.chi, rtol=1e-9)
    for l in range(rec.pi.shape[1]):
        got = {int(t) for t in np.flatnonzero(np.isfinite(rec.pi[:, l]))}
        np.testing.assert_allclose(b.pi[0][sorted(got), l], rec.pi[sorted(got), l], rtol=1e-8)
    for l, t in rec.declared_at.items():
        assert b.declared_at[0, l - 1] == t
    assert (rec.t_R if rec.t_R is not None else -1) == b.t_R[0]


def test_case1_alarm_and_halt():
    sc = Scenario(T=300, seed=2, attacks=(AttackSpec((1, 2), 200, 0.3),))
    rec = run(sc, keep_ledgers=False)
    assert 200 <= rec.gamma_net <= 250
    assert rec.t_end == sc.T
    g = int(rec.gamma_net)
    # prediction only with A = I: the estimate stays where recovery put it
    for arr in rec.estimates.values():
        np.testing.assert_array_equal(arr[g + 1], arr[sc.T])


def test_case2_trust_declares_hacked_node():
    sc = Scenario(T=200, seed=3, misbehaviors=(MisbehaviorSpec(3, 1, 0.1),), on_alarm="observe", M=30)
    rec = run(sc, keep_ledgers=False)
    assert 3 in rec.declared_at
    assert 3 not in rec.meas_alarm_at
    assert np.isnan(rec.g_meas[1:, 2]).all()


def test_baselines_can_be_disabled():
    sc = Scenario(T=20, baselines=Baselines(nominal=False), M=10, on_alarm="observe")
    rec = run(sc, keep_ledgers=False)
    assert np.isnan(rec.mse["nominal"][1:]).all()
    assert np.isfinite(rec.mse["centralized"]).all()


def test_inline_model_runs():
    m = GlobalSystemModel(
        n_buses=3, A=np.diag([1.0, 0.95, 0.9]), H=np.array([[1.0, -1.0, 0.0], [0.0, 1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]),
        sigma_v2=1e-4, sigma_w2=1e-4, partition=((0, 2), (1, 3)), x0=np.zeros(3),
    )
    rec = run(Scenario(model=m, T=50, M=10, on_alarm="observe"))
    assert rec.t_end == 50 and np.isfinite(rec.mse["proposed"]).all()
