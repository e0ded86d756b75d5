import math
import re

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twochunk.models import DomainError, ModelKind, build_model
from twochunk.ode import (
    EventSpec,
    IntegratorSettings,
    PreconditionError,
    dfc_divergence_run,
    integrate,
    integrate_model,
    monitor,
    solve,
    threshold_event,
)


def friedman_run(start=(0.2, 3.0), horizon=50.0, **kw):
    return integrate_model(build_model("friedman", 1), start, IntegratorSettings(horizon=horizon, **kw))


def test_equilibrium_start_stays_put():
    tr = friedman_run((1.0, 1.0), horizon=100)
    assert tr.reason == "horizon"
    np.testing.assert_array_equal(tr.y, np.ones_like(tr.y))
    np.testing.assert_array_equal(tr(np.linspace(0, 100, 7)), np.ones((7, 2)))


def test_friedman_converges_monotonically():
    tr = friedman_run()
    x, y = tr(np.linspace(0, 50, 5001)).T
    # monotone while the deviation exceeds the integration tolerance, then inside it
    live = (np.abs(x - 1) > 1e-9)[:-1]
    assert np.all(np.diff(x)[live] > 0)
    live = (np.abs(y - 1) > 1e-9)[:-1]
    assert np.all(np.diff(y)[live] < 0)
    late = np.argmax(np.maximum(np.abs(x - 1), np.abs(y - 1)) <= 1e-9)
    assert np.all(np.abs(x[late:] - 1) <= 1e-9) and np.all(np.abs(y[late:] - 1) <= 1e-9)
    assert abs(x[-1] - 1) + abs(y[-1] - 1) <= 1e-6


def test_plain_divergence_crosses_threshold():
    model = build_model("plain", 1)
    ev = threshold_event(0, 1e3, "x-up", terminal=True)
    tr = integrate_model(model, (1.5, 0.5), IntegratorSettings(horizon=1e4), [ev])
    assert tr.reason == "event"
    (hit,) = tr.events
    assert hit.name == "x-up" and hit.terminal
    assert hit.state[0] == pytest.approx(1e3, rel=1e-9)
    assert hit.state[1] < 1e-3
    x = tr.y[:, 0]
    assert np.all(np.diff(x) > 0)


def test_dense_output_matches_nodes_and_reference():
    tr = solve(lambda t, u: -u, [1.0], IntegratorSettings(horizon=5.0, enforce_positivity=False))
    np.testing.assert_array_equal(tr(tr.t)[:, 0], tr.y[:, 0])
    ts = np.linspace(0, 5, 333)
    np.testing.assert_allclose(tr(ts)[:, 0], np.exp(-ts), rtol=1e-8)


def test_error_estimates_within_tolerance():
    tr = friedman_run()
    assert len(tr.error_norms) == len(tr.t) - 1
    assert np.all(tr.error_norms <= 1.0)


def test_time_dependent_right_hand_side():
    tr = solve(lambda t, u: np.array([math.cos(t)]), [0.0], IntegratorSettings(horizon=10, enforce_positivity=False))
    assert tr.final[0] == pytest.approx(math.sin(10), abs=1e-8)


def test_event_directions():
    # u = sin t crosses 0 downward at pi and upward at 2 pi
    f = lambda t, u: np.array([u[1], -u[0]])
    s = IntegratorSettings(horizon=7, enforce_positivity=False)
    events = [
        EventSpec(lambda u, t: u[0], "down", name="down"),
        EventSpec(lambda u, t: u[0], "up", name="up"),
    ]
    tr = solve(f, [0.0, 1.0], s, events)
    assert tr.event_times("down") == [pytest.approx(math.pi, abs=1e-8)]
    assert tr.event_times("up") == [pytest.approx(2 * math.pi, abs=1e-8)]


def test_blow_up_reported():
    tr = solve(lambda t, u: u * u, [1.0], IntegratorSettings(horizon=2.0, blow_up=1e8))
    assert tr.reason == "blow_up"
    assert tr.t_end < 1.0


def test_settings_validation():
    with pytest.raises(ValueError):
        IntegratorSettings(horizon=0)
    with pytest.raises(ValueError):
        IntegratorSettings(horizon=1, rtol=0)
    with pytest.raises(ValueError):
        IntegratorSettings(horizon=1, max_step=-1)
    with pytest.raises(ValueError):
        EventSpec(lambda u, t: 0, "sideways")


def test_initial_state_outside_domain():
    with pytest.raises(DomainError):
        friedman_run((-0.1, 1.0))
    with pytest.raises(DomainError):
        friedman_run((0.0, 0.0))


def test_constant_monitor_is_constant():
    series = monitor(friedman_run(), lambda s: 4.0, n_grid=101)
    assert np.all(series.values == 4.0)
    assert series.is_nonincreasing() and not series.is_strictly_decreasing()


# -- DFC divergence ------------------------------------------------------------------

def test_dfc_divergent_start():
    traj, v = dfc_divergence_run(1.0, (0.9, 1.5, 3.0, 0.3))
    assert v.relations_hold
    assert v.x_crossing is not None and v.b_crossing is not None
    assert v.y_decreasing and v.y_final <= 1e-3
    assert abs(v.a_final - 0.5) <= 0.005
    assert v.divergent
    assert traj.labels == ("A", "B", "X", "Y")


def test_dfc_curve_point_is_stationary():
    tr = integrate_model(build_model("dfc", 1), (1, 1, 1, 1), IntegratorSettings(horizon=100))
    np.testing.assert_array_equal(tr.final, [1, 1, 1, 1])


@pytest.mark.parametrize("start, broken", [
    ((0.9, 1.5, 3.0, 0.6), "y < lambda/2"),
    ((0.9, 3.5, 3.0, 0.3), "x > b > lambda"),
    ((0.5, 1.5, 3.0, 0.3), "a > (x+y)*lambda/(2x)"),
])
def test_dfc_precondition_names_the_inequality(start, broken):
    with pytest.raises(PreconditionError, match=re.escape(broken)):
        dfc_divergence_run(1.0, start)


# -- properties ------------------------------------------------------------------------

def test_convergence_order_on_friedman():
    ref = friedman_run(horizon=10, rtol=1e-13, atol=1e-15, max_step=0.01).final
    errs = [np.max(np.abs(friedman_run(horizon=10, rtol=r, atol=r * 1e-2).final - ref))
            for r in (1e-5, 1e-6, 1e-7, 1e-8)]
    assert all(a > b for a, b in zip(errs, errs[1:])), errs
    # a 5th-order pair under local error control gains roughly a decade per decade of tolerance
    for a, b in zip(errs, errs[1:]):
        assert 3 <= a / b <= 40, errs


@pytest.mark.parametrize("kind", list(ModelKind))
@settings(max_examples=8, deadline=None)
@given(data=st.data())
def test_domain_preserved_from_interior_starts(kind, data):
    start = data.draw(st.tuples(*[st.floats(0.01, 10)] * kind.dimension))
    model = build_model(kind, 1)
    if kind is ModelKind.DFC:
        ev = [threshold_event(2, 1e4, "x"), threshold_event(3, 1e4, "y")]
        ev = [EventSpec(e.g, "up", True, e.name) for e in ev]
    elif kind is ModelKind.PLAIN:
        ev = [EventSpec(lambda s, t: max(s) - 1e4, "up", True, "big")]
    else:
        ev = []
    tr = integrate_model(model, start, IntegratorSettings(horizon=200), ev)
    assert tr.reason in ("horizon", "event")
    dense = tr(np.linspace(0, tr.t_end, 2001))
    assert np.all(tr.y > 0) and np.all(dense > 0)


@pytest.mark.parametrize("kind", list(ModelKind))
@pytest.mark.parametrize("c", [2.0, 0.5, 4.0])
def test_time_scaling(kind, c):
    # lambda enters homogeneously: s_c(t) = c s_1(t) at the same t
    rng = np.random.default_rng([list(ModelKind).index(kind), int(10 * c)])
    s = rng.uniform(0.5, 2.0, kind.dimension)
    if kind is ModelKind.DFC:
        s = np.array([0.9, 1.5, 3.0, 0.3])
    T = 30.0
    one = integrate_model(build_model(kind, 1), s, IntegratorSettings(horizon=T))
    scaled = integrate_model(build_model(kind, c), c * s, IntegratorSettings(horizon=T))
    ts = np.linspace(0, T, 301)
    ref = one(ts)
    assert np.max(np.abs(scaled(ts) / c - ref)) <= 1e-8 * max(1.0, np.max(np.abs(ref)))


def test_delayed_sum_stays_above_two():
    model = build_model("delayed", 1)
    tr = integrate_model(model, (0, 0, 0.1, 9.9), IntegratorSettings(horizon=2000))
    ts = np.linspace(10, 2000, 20001)
    total = tr(ts)[:, 2:].sum(axis=1)
    assert total.min() >= 1.95
    series = monitor(tr, lambda s: s[2] + s[3], n_grid=20001, window=(0, 1000))
    assert len(series.local_maxima()) >= 5
