import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridfreq.control import (
    BARRIER_CLAMP,
    SafetySpec,
    barrier_feedback,
    compose,
    filter_condition_slack,
    lowpass_derivative,
    stability_filter,
    top_layer,
)
from gridfreq.plant import SystemState, derivative
from gridfreq.sim import _barrier_scalar

from conftest import line3

LIM1 = SafetySpec().arrays([0])
finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_stability_filter_examples():
    assert stability_filter(np.array([0.2]), np.array([0.5]), np.array([1.9]))[0] == pytest.approx(0.38)
    assert stability_filter(np.array([0.2]), np.array([-0.1]), np.array([1.9]))[0] == -0.1
    assert stability_filter(np.array([0.0]), np.array([7.0]), np.array([1.9]))[0] == 0.0
    assert stability_filter(np.array([-0.5]), np.array([-3.0]), np.array([1.9]))[0] == pytest.approx(-0.95)


@given(finite, finite, st.floats(1e-3, 10))
def test_filter_condition_property(a, u, eps):
    uh = stability_filter(np.array([a]), np.array([u]), np.array([eps]))
    assert filter_condition_slack(np.array([a]), uh, np.array([eps]))[0] >= 0
    assert abs(uh[0]) <= eps * abs(a)


def test_lowpass_examples():
    out = lowpass_derivative(np.array([0.1]), np.array([0.05]), np.array([0.0]), np.array([0.5]), np.array([True]))
    assert out[0] == pytest.approx(-0.25)
    assert np.all(lowpass_derivative(np.zeros(3), np.zeros(3), np.zeros(3), np.ones(3), np.array([0, 2])) == 0)
    # steady point alpha = T (uhat - omega)
    a = 0.5 * (0.3 - 0.1)
    assert lowpass_derivative(np.array([a]), np.array([0.1]), np.array([0.3]), np.array([0.5]), [0])[0] == pytest.approx(0)
    # zero off the controlled set
    out = lowpass_derivative(np.ones(2), np.ones(2), np.ones(2), np.full(2, 0.5), np.array([True, False]))
    assert out[1] == 0
    with pytest.raises(ValueError):
        lowpass_derivative(np.ones(1), np.ones(1), np.ones(1), np.zeros(1), [0])


def test_barrier_examples():
    assert barrier_feedback(np.array([0.0]), np.array([5.0]), LIM1)[0] == 0.0
    assert barrier_feedback(np.array([0.15]), np.array([-0.3]), LIM1)[0] == 0.0
    assert barrier_feedback(np.array([0.15]), np.array([-1.5]), LIM1)[0] == pytest.approx(-0.5)
    assert barrier_feedback(np.array([-0.15]), np.array([1.5]), LIM1)[0] == pytest.approx(0.5)
    assert barrier_feedback(np.array([-0.15]), np.array([0.3]), LIM1)[0] == 0.0


def test_barrier_clamped_near_threshold():
    w = np.array([np.nextafter(0.1, 1.0)])
    out = barrier_feedback(w, np.array([-1e6]), LIM1)
    assert np.isfinite(out[0]) and out[0] == 0.0  # clamp 1e12 dominates any realistic v
    assert BARRIER_CLAMP == 1e12


@given(st.floats(-0.5, 0.5), finite)
def test_dissipativity_sign(w, v):
    df = barrier_feedback(np.array([w]), np.array([v]), LIM1)[0]
    assert w * df <= 0


@given(st.floats(-0.5, 0.5), finite)
def test_scalar_barrier_is_bitwise_identical(w, v):
    lim = [tuple(LIM1[k][0] for k in ("lower", "upper", "lower_thr", "upper_thr", "gamma_lower", "gamma_upper"))]
    a = barrier_feedback(np.array([w]), np.array([v]), LIM1)[0]
    b = _barrier_scalar([w], [v], lim)[0]
    assert a == b


def test_safety_spec_validation():
    SafetySpec().validate([30, 37])
    with pytest.raises(ValueError, match="thresholds"):
        SafetySpec(lower_thr=-0.3).validate([30])
    with pytest.raises(ValueError, match="thresholds"):
        SafetySpec(upper_thr={30: 0.1, 37: 0.25}).validate([30, 37])
    with pytest.raises(ValueError, match="gains"):
        SafetySpec(gamma_upper=0.0).validate([30])
    arr = SafetySpec(upper={30: 0.3, 37: 0.2}).arrays([30, 37])
    np.testing.assert_array_equal(arr["upper"], [0.3, 0.2])


def test_top_layer_zero_off_monitored_and_v_formula():
    net = line3(controlled=(1, 2, 3), monitored=(1,))
    s = SystemState(np.array([0.2, 0.1]), np.array([-0.15, 0.0, 0.0]), np.array([0.3, 0.1, 0.0]))
    p = np.array([0.4, -0.2, -0.2])
    out = top_layer(net, s, p, SafetySpec())
    assert out[1] == 0 and out[2] == 0
    v = net.damping[0] * -0.15 + 0.2 - 0.4 - 0.3
    bar = 1.0 * (-0.2 + 0.15) / (-0.1 + 0.15)
    assert out[0] == pytest.approx(max(0.0, bar + v))


@settings(max_examples=200)
@given(st.integers(0, 2**31 - 1))
def test_top_layer_lipschitz_probe(seed):
    """Finite-difference quotients of the direct feedback stay bounded on a
    compact probe set away from the band edges."""
    r = np.random.default_rng(seed)
    net = line3(controlled=(1, 3), monitored=(1, 3))
    spec = SafetySpec()
    s = SystemState(r.normal(size=2), r.uniform(-0.19, 0.19, size=3), np.array([r.normal(), 0.0, r.normal()]))
    p = r.normal(size=3)
    d = r.normal(size=2) * 1e-7
    s2 = SystemState(s.f + d, s.omega, s.alpha_mpc)
    q = np.abs(top_layer(net, s2, p, spec) - top_layer(net, s, p, spec)).max() / np.abs(d).max()
    assert q < 10.0


def test_compose():
    a = np.array([0.1, 0.0, -0.2])
    np.testing.assert_array_equal(compose(a, np.zeros(3)), a)
    np.testing.assert_array_equal(compose(np.zeros(3), np.zeros(3)), 0)


@pytest.mark.parametrize("side", ["upper", "lower"])
def test_boundary_derivative_points_inward(side, rng):
    net = line3(controlled=(1, 2, 3), monitored=(1, 3))
    spec = SafetySpec()
    for _ in range(200):
        w = rng.uniform(-0.05, 0.05, size=3)
        w[0] = 0.2 if side == "upper" else -0.2
        a = np.array([rng.normal(), rng.normal(), rng.normal()])
        s = SystemState(rng.normal(size=2) * 3, w, a)
        p = rng.normal(size=3) * 3
        alpha = compose(a, top_layer(net, s, p, spec))
        wdot = derivative(net, s, p, alpha)[1][0]
        assert (wdot <= 1e-12) if side == "upper" else (wdot >= -1e-12)
