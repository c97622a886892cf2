import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridfreq.mpc import (
    MpcConfig,
    Snapshot,
    build_problem,
    difference_quotients,
    lipschitz_probe,
    make_snapshot,
    predict,
    solve,
)

from conftest import line3
from oracles import brute_force_mpc, euler_predict


def random_snapshot(net, cfg, rng, stress=True):
    """Snapshot near the lower band edge so the band rows matter."""
    f = rng.normal(size=net.m) * 0.3
    w = rng.uniform(-0.2, 0.05, size=net.n) if stress else rng.uniform(-0.05, 0.05, size=net.n)
    a = np.zeros(net.n)
    a[net.controlled_idx] = rng.uniform(-1.0, 1.0, size=len(net.controlled_idx))
    base = rng.normal(size=net.n) * 0.3 - (0.4 if stress else 0.0)
    P = np.tile(base, (cfg.N, 1)) + rng.normal(size=(cfg.N, net.n)) * 0.02
    return Snapshot(0.0, f, w, a, P)


def test_config_step_count():
    assert MpcConfig(weights=1.0).N == 100
    assert MpcConfig(weights=1.0, horizon=0.1, step=0.03).N == 4
    assert MpcConfig(weights=1.0, horizon=0.01, step=0.02).N == 1


def test_config_rejects_unstable_filter(net3):
    with pytest.raises(ValueError, match="< 1"):
        MpcConfig(weights=1.0, epsilon=2.0, filter_tau=0.5).validate(net3)
    with pytest.raises(ValueError, match="positive"):
        MpcConfig(weights={1: 1.0, 2: 0.0, 3: 1.0}).validate(net3)
    with pytest.raises(ValueError, match="below"):
        MpcConfig(weights=1.0, lower=0.2, upper=-0.2).validate(net3)


def test_problem_dimensions():
    net = line3(controlled=(1, 2, 3), monitored=(1, 3))
    from gridfreq.network import build_network

    nodes = [{"id": i, "M": 1.0, "E": 1.0} for i in range(1, 6)]
    edges = [{"from": i, "to": i + 1, "b": 1.0} for i in range(1, 5)]
    net = build_network(nodes, edges, controlled=[1, 2, 4, 5], monitored=[2, 5])
    cfg = MpcConfig(weights=1.0)
    snap = Snapshot(0.0, np.zeros(4), np.zeros(5), np.zeros(5), np.zeros((100, 5)))
    prob = build_problem(net, cfg, snap)
    assert prob.n_vars == 5
    assert prob.G.shape == (4 * 100 + 8 + 1, 5)


def test_prediction_matches_explicit_recursion(net3, cfg3, rng):
    for _ in range(5):
        snap = random_snapshot(net3, cfg3, rng)
        u = np.zeros(3)
        u[net3.controlled_idx] = rng.normal(size=3)
        F, W, A = predict(net3, cfg3, snap, u)
        Fo, Wo, Ao = euler_predict(net3, cfg3, snap, u)
        np.testing.assert_allclose(F, Fo, atol=1e-10)
        np.testing.assert_allclose(W, Wo, atol=1e-10)
        np.testing.assert_allclose(A, Ao, atol=1e-10)


def test_filter_trajectory_zero_off_controlled_set(rng):
    net = line3(controlled=(1, 3), monitored=(1,))
    cfg = MpcConfig(weights=1.0, horizon=0.1, step=0.02)
    snap = random_snapshot(net, cfg, rng)
    res = solve(net, cfg, snap)
    assert np.all(res.A[:, net.index[2]] == 0)
    assert res.u[net.index[2]] == 0


def test_zero_penalty_gives_zero_input(net3, cfg3, rng):
    snap = random_snapshot(net3, cfg3, rng)
    res = solve(net3, cfg3.with_penalty(0.0), snap)
    assert np.all(res.u == 0)
    # beta is the smallest slack that makes the zero input feasible
    W = euler_predict(net3, cfg3, snap, np.zeros(3))[1][1:, net3.monitored_idx]
    assert res.beta == pytest.approx(max(0.0, (-0.2 - W).max(), (W - 0.2).max()), abs=1e-12)


def test_feasible_free_response_needs_no_input(net3, cfg3):
    snap = Snapshot(0.0, np.zeros(2), np.zeros(3), np.array([0.3, -0.2, 0.1]), np.zeros((cfg3.N, 3)))
    res = solve(net3, cfg3, snap)
    np.testing.assert_allclose(res.u, 0, atol=1e-12)
    assert res.beta == pytest.approx(0, abs=1e-12)


def test_zero_filter_state_pins_input(net3, cfg3, rng):
    snap = random_snapshot(net3, cfg3, rng)
    snap.alpha_mpc[net3.index[2]] = 0.0
    res = solve(net3, cfg3, snap)
    assert res.u[net3.index[2]] == 0


def test_result_respects_constraints(net3, cfg3, rng):
    for _ in range(10):
        snap = random_snapshot(net3, cfg3, rng)
        res = solve(net3, cfg3, snap)
        bound = 1.9 * np.abs(snap.alpha_mpc)
        assert np.all(np.abs(res.u) <= bound + 1e-9)
        Wm = res.Omega[1:, net3.monitored_idx]
        assert np.all(Wm >= -0.2 - res.beta - 1e-8) and np.all(Wm <= 0.2 + res.beta + 1e-8)
        assert res.beta >= 0


def test_snapshot_validation(net3, cfg3):
    with pytest.raises(ValueError, match="forecast"):
        solve(net3, cfg3, Snapshot(0.0, np.zeros(2), np.zeros(3), np.zeros(3), np.zeros((3, 3))))
    net = line3(controlled=(1,), monitored=(1,))
    with pytest.raises(ValueError, match="controlled"):
        solve(net, MpcConfig(weights=1.0, horizon=0.1), Snapshot(0.0, np.zeros(2), np.zeros(3), np.ones(3), np.zeros((5, 3))))


def test_make_snapshot_samples_left_endpoints(net3, cfg3):
    calls = []

    def fc(t):
        calls.append(t)
        return np.full(3, t)

    snap = make_snapshot(net3, cfg3, 1.0, np.zeros(2), np.zeros(3), np.zeros(3), fc)
    np.testing.assert_allclose(calls, [1.0 + 0.02 * k for k in range(5)])
    np.testing.assert_allclose(snap.forecast[:, 0], calls)


def test_snapshot_vector_round_trip(net3, cfg3, rng):
    snap = random_snapshot(net3, cfg3, rng)
    z = snap.vector()
    again = Snapshot.from_vector(z, 0.0, cfg3.N, net3.m, net3.n)
    np.testing.assert_array_equal(again.vector(), z)
    d = Snapshot.from_dict(snap.to_dict())
    np.testing.assert_array_equal(d.vector(), z)


def test_unique_solution(net3, cfg3, rng):
    snap = random_snapshot(net3, cfg3, rng)
    a = solve(net3, cfg3, snap)
    b = solve(net3, cfg3, snap, x0=np.full(4, 0.3))
    np.testing.assert_allclose(a.u, b.u, atol=1e-8)
    assert a.beta == pytest.approx(b.beta, abs=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.2))
def test_widening_band_never_increases_optimum(seed, widen):
    net = line3()
    cfg = MpcConfig(weights={1: 1.0, 2: 2.0, 3: 4.0}, horizon=0.1, step=0.02)
    snap = random_snapshot(net, cfg, np.random.default_rng(seed))
    tight = solve(net, cfg, snap).objective
    wide = solve(net, MpcConfig(weights=cfg.weights, horizon=0.1, step=0.02, lower=-0.2 - widen, upper=0.2 + widen), snap)
    assert wide.objective <= tight + 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_matches_brute_force(seed):
    net = line3()
    cfg = MpcConfig(weights={1: 1.0, 2: 2.0, 3: 4.0}, horizon=0.1, step=0.02)
    snap = random_snapshot(net, cfg, np.random.default_rng(100 + seed))
    res = solve(net, cfg, snap)
    u_ref, beta_ref, obj_ref = brute_force_mpc(net, cfg, snap)
    assert res.objective == pytest.approx(obj_ref, abs=1e-4)
    np.testing.assert_allclose(res.u[net.controlled_idx], u_ref, atol=1e-3)
    assert res.beta == pytest.approx(beta_ref, abs=1e-3)


def test_lipschitz_probe_zero_radius(net3, cfg3, rng):
    assert lipschitz_probe(net3, cfg3, random_snapshot(net3, cfg3, rng), 0.0, 10) == 0.0
    with pytest.raises(ValueError):
        lipschitz_probe(net3, cfg3, random_snapshot(net3, cfg3, rng), -1.0, 10)


def stressed_snapshot():
    """Active band rows with inputs strictly inside their boxes."""
    return Snapshot(
        0.0,
        np.array([0.1, -0.05]),
        np.array([-0.18, -0.17, -0.19]),
        np.array([0.4, 0.3, 0.5]),
        np.tile([-1.5, -0.5, -1.0], (5, 1)),
    )


def test_difference_quotients_constant_inside_region(net3, cfg3, rng):
    snap = stressed_snapshot()
    d = rng.normal(size=snap.vector().size)
    q = difference_quotients(net3, cfg3, snap, d, [1e-7, 1e-6, 1e-5])
    assert q.max() > 0
    assert np.ptp(q) <= 1e-6 * q.mean()
