import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twochunk import models as m
from twochunk.models import DomainError, ModelKind, build_model, transition_rates, vector_field

KINDS = list(ModelKind)


def rate_of(model, state, label):
    for rule in model.transitions:
        if rule.label == label:
            return rule.rate(model.check_state(state))
    raise KeyError(label)


def rates_by_label(model, state):
    return {label: r for _, r, label in transition_rates(model, state)}


def states(kind, hi=100):
    return st.tuples(*[st.integers(0, hi)] * kind.dimension)


def interior(kind, lo=0.05, hi=20.0):
    return st.tuples(*[st.floats(lo, hi)] * kind.dimension)


def dyadic(kind):
    # k/64 makes floor(N x) exact for N = 10^6 and 10^7, so only the rate corrections remain;
    # the 1/N constant grows like lambda/(x+y), so stay at least 1/4 from the faces
    return st.tuples(*[st.integers(16, 511).map(lambda k: k / 64)] * kind.dimension)


# -- worked rate examples -------------------------------------------------------
# Expected numbers were produced by hand with exact fractions and frozen here.

def test_friedman_empty_state_rates():
    r = rates_by_label(build_model("friedman", 2), (0, 0))
    assert r == {"arrival-to-X": 1.0, "arrival-to-Y": 1.0}
    assert sum(r.values()) == 2.0


def test_plain_rates_at_three_one():
    model = build_model("plain", 1)
    assert rate_of(model, (3, 1), "arrival-to-X") == pytest.approx(0.7, abs=1e-15)
    assert rate_of(model, (3, 1), "X-departs") == pytest.approx(1.2, abs=1e-15)


def test_enforced_z_exit_split_at_full_state():
    model = build_model("enforced", 1)
    s = model.state(X=5, Y=5, Z=4)
    assert s == (4, 5, 5)
    to_x = rate_of(model, s, "Z-to-X")
    to_y = rate_of(model, s, "Z-to-Y")
    assert to_x + to_y == pytest.approx(3.0, abs=1e-12)
    assert to_x == pytest.approx(1.5, abs=1e-12)
    assert to_y == pytest.approx(1.5, abs=1e-12)


def test_friedman_origin_has_only_arrivals():
    r = rates_by_label(build_model("friedman", 1), (0, 0))
    assert r == {"arrival-to-X": 0.5, "arrival-to-Y": 0.5}


def test_dfc_rates_with_one_waiting_peer():
    model = build_model("dfc", 2)
    r = rates_by_label(model, (1, 0, 0, 0))
    assert r == {"arrival-to-A": 1.0, "arrival-to-B": 1.0, "A-to-X": 1.0}
    deltas = {label: d for d, _, label in transition_rates(model, (1, 0, 0, 0))}
    assert deltas["A-to-X"] == (-1, 0, 1, 0)


def test_enforced_waiting_room_drains_from_empty_system():
    # 3 (1/2) (1/2)^2 7 / 1^3 = 21/8 in each direction
    r = rates_by_label(build_model("enforced", 1), (7, 0, 0))
    assert r["Z-to-X"] == pytest.approx(21 / 8, abs=1e-14)
    assert r["Z-to-Y"] == pytest.approx(21 / 8, abs=1e-14)
    assert "X-departs" not in r and "Y-departs" not in r


# -- fields ----------------------------------------------------------------------

def test_friedman_field_vanishes_at_equilibrium():
    np.testing.assert_array_equal(vector_field(build_model("friedman", 1), (1, 1)), [0, 0])


def test_enforced_field_vanishes_at_equilibrium():
    f = vector_field(build_model("enforced", 1), (4 / 3, 1, 1))
    np.testing.assert_allclose(f, 0, atol=1e-15)


def test_plain_field_hand_value():
    f = vector_field(build_model("plain", 1), (2, 1))
    np.testing.assert_allclose(f, [0.0, -1 / 3], atol=1e-15)


@pytest.mark.parametrize("bad", [(-1, 1), (1, float("nan")), (0, 0), (1, 1, 1)])
def test_field_rejects_bad_points(bad):
    with pytest.raises(DomainError):
        vector_field(build_model("friedman", 1), bad)


@pytest.mark.parametrize("lam", [0, -1, float("nan"), float("inf"), "x"])
def test_build_model_rejects_bad_lambda(lam):
    with pytest.raises(DomainError):
        build_model("plain", lam)


def test_unknown_model_kind():
    with pytest.raises(ValueError, match="unknown model kind"):
        build_model("bittorrent", 1)


def test_state_rejects_bad_counts():
    model = build_model("plain", 1)
    with pytest.raises(DomainError):
        transition_rates(model, (1, -1))
    with pytest.raises(DomainError):
        transition_rates(model, (1, 2, 3))
    with pytest.raises(DomainError):
        transition_rates(model, (1.5, 2))


# -- (z, rho, beta) coordinates ----------------------------------------------------------

def test_transform_examples():
    assert m.to_transformed(1, 1) == (2, 0)
    assert m.to_transformed(3, 1) == (4, 0.25)
    assert m.from_transformed(4, 0.25, 1) == (3, 1)
    assert m.from_transformed(4, 0.25, -1) == (1, 3)


def test_transformed_field_examples():
    np.testing.assert_allclose(m.transformed_field((4 / 3, 2, 0)), 0, atol=1e-15)
    np.testing.assert_allclose(m.transformed_field((1, 1, 0)), [0.25, 0.25, 0.0], atol=1e-15)


@pytest.mark.parametrize("args", [(0, 1), (1, -2), (float("inf"), 1)])
def test_to_transformed_domain(args):
    with pytest.raises(DomainError):
        m.to_transformed(*args)


@pytest.mark.parametrize("args", [(0, 0.5), (1, 1.0), (1, -0.1), (1, 0.5, 0)])
def test_from_transformed_domain(args):
    with pytest.raises(DomainError):
        m.from_transformed(*args)


@pytest.mark.parametrize("state", [(0, 1, 0.5), (1, 1, 1.0), (1, 0, 0.2)])
def test_transformed_field_domain(state):
    with pytest.raises(DomainError):
        m.transformed_field(state)


@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_transform_round_trip(x, y):
    rho, beta = m.to_transformed(x, y)
    assert 0 <= beta < 1 and rho > 0
    xr, yr = m.from_transformed(rho, beta, 1 if x >= y else -1)
    assert xr == pytest.approx(x, rel=1e-12, abs=1e-12 * rho)
    assert yr == pytest.approx(y, rel=1e-12, abs=1e-12 * rho)


@settings(max_examples=100)
@given(st.floats(0.01, 10), st.floats(0.01, 10), st.floats(0.01, 10))
def test_transformed_field_matches_enforced_field(z, x, y):
    # chain rule through (x, y) -> (rho, beta) at lambda = 1
    zd, xd, yd = vector_field(build_model("enforced", 1), (z, x, y))
    rho = x + y
    d = x - y
    beta_dot = (2 * d * (xd - yd) * rho - 2 * d * d * (xd + yd)) / rho**3
    expected = [zd, xd + yd, beta_dot]
    got = m.transformed_field(m.enforced_to_transformed((z, x, y)))
    np.testing.assert_allclose(got, expected, rtol=1e-9, atol=1e-12)


# -- rate-table properties ----------------------------------------------------------------

@pytest.mark.parametrize("kind", KINDS)
@settings(max_examples=60)
@given(data=st.data(), lam=st.floats(0.01, 50))
def test_rates_nonnegative_and_finite(kind, data, lam):
    model = build_model(kind, lam)
    s = data.draw(states(kind))
    for rule in model.transitions:
        r = rule.rate(s)
        assert r >= 0 and math.isfinite(r)


@pytest.mark.parametrize("kind", KINDS)
@settings(max_examples=60)
@given(data=st.data())
def test_no_rule_removes_from_an_empty_component(kind, data):
    model = build_model(kind, 1.7)
    s = list(data.draw(states(kind, 30)))
    i = data.draw(st.integers(0, kind.dimension - 1))
    s[i] = 0
    for rule in model.transitions:
        if rule.delta[i] < 0:
            assert rule.rate(tuple(s)) == 0


@pytest.mark.parametrize("kind", [ModelKind.PLAIN, ModelKind.FRIEDMAN])
@given(x=st.integers(0, 10**6), y=st.integers(0, 10**6))
def test_arrival_rates_sum_to_lambda(kind, x, y):
    # exact in rationals; in floats to one rounding
    model = build_model(kind, 1)
    fr = [rule.rate((Fraction(x), Fraction(y))) for rule in model.transitions if rule.is_arrival]
    assert sum(fr) == 1
    fl = [rule.rate((x, y)) for rule in model.transitions if rule.is_arrival]
    assert sum(fl) == pytest.approx(1.0, rel=4e-16)


@given(z=st.integers(1, 200), x=st.integers(0, 200), y=st.integers(0, 200))
def test_enforced_split_matches_friedman_arrival_split(z, x, y):
    model = build_model("enforced", 1)
    s = tuple(Fraction(v) for v in (z, x, y))
    to_x = rate_of_exact(model, s, "Z-to-X")
    to_y = rate_of_exact(model, s, "Z-to-Y")
    assert to_x / (to_x + to_y) == Fraction(2 * y + 1, 2 * (x + y + 1))


def rate_of_exact(model, state, label):
    return next(r.rate(state) for r in model.transitions if r.label == label)


_SWAP = {
    ModelKind.PLAIN: [1, 0],
    ModelKind.FRIEDMAN: [1, 0],
    ModelKind.DFC: [1, 0, 3, 2],
    ModelKind.DELAYED: [1, 0, 3, 2],
    ModelKind.ENFORCED: [0, 2, 1],
}


@pytest.mark.parametrize("kind", KINDS)
@settings(max_examples=60)
@given(data=st.data())
def test_mirror_symmetry(kind, data):
    p = _SWAP[kind]
    model = build_model(kind, 1.3)
    s = data.draw(states(kind, 40))
    sw = tuple(s[i] for i in p)
    table = sorted((d, round(r, 12)) for d, r, _ in transition_rates(model, s))
    mirrored = sorted((tuple(d[i] for i in p), round(r, 12)) for d, r, _ in transition_rates(model, sw))
    assert table == mirrored

    pt = np.array(data.draw(interior(kind)))
    f = model.field(pt)
    np.testing.assert_allclose(model.field(pt[p])[p], f, rtol=1e-13, atol=1e-15)


@pytest.mark.parametrize("kind", KINDS)
@settings(max_examples=20, deadline=None)
@given(data=st.data())
def test_limit_consistency_is_first_order(kind, data):
    model = build_model(kind, data.draw(st.sampled_from([0.5, 1.0, 1.25, 2.0, 3.0])))
    pt = np.array(data.draw(dyadic(kind)))
    r1 = m.limit_consistency_residual(model, pt, 10**6)
    r2 = m.limit_consistency_residual(model, pt, 10**7)
    assert np.all(r1 <= 1e-5)
    big = r1 > 1e-12
    ratio = r2[big] / r1[big]
    assert np.all((0.05 <= ratio) & (ratio <= 0.2)), (pt, r1, r2)


@pytest.mark.parametrize("point", [(1, 1), (1, 1, 1)])
def test_limit_consistency_examples(point):
    kind = "friedman" if len(point) == 2 else "enforced"
    assert np.all(m.limit_consistency_residual(build_model(kind, 1), point, 10**6) <= 1e-5)


def test_limit_consistency_domain():
    model = build_model("friedman", 1)
    with pytest.raises(DomainError):
        m.limit_consistency_residual(model, (0.0, 1.0), 10**6)
    with pytest.raises(DomainError):
        m.limit_consistency_residual(model, (1.0, 1.0), 5)


def test_models_pickle():
    import pickle

    for kind in KINDS:
        model = build_model(kind, 2)
        clone = pickle.loads(pickle.dumps(model))
        assert transition_rates(clone, (1,) * kind.dimension) == transition_rates(model, (1,) * kind.dimension)
