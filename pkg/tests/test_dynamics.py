import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vdpsync.dynamics import (OscillatorSet, blended_rhs, coupled_rhs_scheduled, coupled_rhs_static,
                              linearize, stacked_rhs, vdp_jacobian, vdp_rhs)
from vdpsync.errors import DomainError
from vdpsync.graph import EdgeGainSet, chain_graph, complete_graph

MU4 = OscillatorSet([0.5, 3, 6, 10])
coord = st.floats(-3, 3, allow_nan=False)
mus = st.floats(0.05, 12, allow_nan=False)


def test_oscillator_set_validation():
    assert MU4.n == 4
    assert MU4.mean_mu == 4.875
    with pytest.raises(DomainError):
        OscillatorSet([1.0])
    with pytest.raises(DomainError):
        OscillatorSet([1.0, 0.0])
    with pytest.raises(DomainError):
        OscillatorSet([1.0, float("nan")])


@pytest.mark.parametrize("s, mu, expected", [
    ([2, 0], 0.5, [0, -2]),
    ([0, 1], 3, [1, 3]),
    ([1, 1], 10, [1, -1]),
])
def test_vdp_rhs_values(s, mu, expected):
    np.testing.assert_allclose(vdp_rhs(s, mu), expected, atol=1e-15)


@pytest.mark.parametrize("s, mu, expected", [
    ([2, 0], 1, [[0, 1], [-1, -3]]),
    ([0, 0], 7.5, [[0, 1], [-1, 7.5]]),
    ([1, 1], 2, [[0, 1], [-5, 0]]),
])
def test_vdp_jacobian_values(s, mu, expected):
    np.testing.assert_allclose(vdp_jacobian(s, mu), expected, atol=1e-15)


@pytest.mark.parametrize("s, mu, A, b", [
    ([2, 0], 1, [[0, 1], [-1, -3]], [0, 0]),
    ([1, 1], 2, [[0, 1], [-5, 0]], [0, 4]),
    ([0, 0], 5, [[0, 1], [-1, 5]], [0, 0]),
])
def test_linearize_values(s, mu, A, b):
    lin = linearize(s, mu)
    np.testing.assert_allclose(lin.A, A, atol=1e-15)
    np.testing.assert_allclose(lin.b, b, atol=1e-15)


def test_bad_local_inputs():
    with pytest.raises(DomainError):
        vdp_rhs([1, 2, 3], 1.0)
    with pytest.raises(DomainError):
        vdp_rhs([np.inf, 0], 1.0)
    with pytest.raises(DomainError):
        vdp_jacobian([0, 0], -1.0)


@settings(max_examples=200, deadline=None)
@given(coord, coord, mus)
def test_jacobian_matches_central_differences(x1, x2, mu):
    s = np.array([x1, x2])
    h = 1e-5
    fd = np.empty((2, 2))
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fd[:, k] = (vdp_rhs(s + e, mu) - vdp_rhs(s - e, mu)) / (2 * h)
    np.testing.assert_allclose(vdp_jacobian(s, mu), fd, atol=1e-6)


@settings(max_examples=200, deadline=None)
@given(coord, coord, mus)
def test_linearization_exact_at_expansion_point(x1, x2, mu):
    s = np.array([x1, x2])
    lin = linearize(s, mu)
    assert lin.A[0, 0] == 0 and lin.A[0, 1] == 1
    np.testing.assert_allclose(lin.A @ s + lin.b, vdp_rhs(s, mu), rtol=0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(coord, coord)
def test_blended_is_mean_mu_field(x1, x2):
    s = [x1, x2]
    np.testing.assert_allclose(blended_rhs(s, MU4), vdp_rhs(s, 4.875), atol=1e-13)
    direct = np.mean([vdp_rhs(s, m) for m in MU4.mu], axis=0)
    np.testing.assert_allclose(blended_rhs(s, MU4), direct, atol=1e-12)


def test_blended_special_cases():
    np.testing.assert_array_equal(blended_rhs([2, 0], OscillatorSet([1, 1])), [0, -2])
    np.testing.assert_array_equal(blended_rhs([0, 0], MU4), [0, 0])


def test_stacked_matches_local():
    rng = np.random.default_rng(0)
    x = rng.normal(size=8)
    expect = np.concatenate([vdp_rhs(x[2 * i: 2 * i + 2], m) for i, m in enumerate(MU4.mu)])
    np.testing.assert_allclose(stacked_rhs(x, MU4.as_array()), expect, atol=1e-14)


def test_static_coupling_hand_example():
    g = chain_graph(2)
    osc = OscillatorSet([1, 2])
    x = np.array([1.0, 0, 0, 0])
    f = stacked_rhs(x, osc.as_array())
    np.testing.assert_allclose(coupled_rhs_static(x, osc, g, 1.0), f + [-1, 0, 1, 0], atol=1e-15)
    np.testing.assert_array_equal(coupled_rhs_static(x, osc, g, 0.0), f)


@pytest.mark.parametrize("g", [chain_graph(4), complete_graph(4)])
def test_consensus_states_are_uncoupled(g):
    x = np.tile([0.7, -1.3], 4)
    f = stacked_rhs(x, MU4.as_array())
    np.testing.assert_allclose(coupled_rhs_static(x, MU4, g, 500.0), f, atol=1e-12)
    gains = np.random.default_rng(1).uniform(0, 300, size=(g.m, 2))
    np.testing.assert_allclose(coupled_rhs_scheduled(x, MU4, g, gains), f, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(coord, min_size=8, max_size=8), st.floats(0, 500))
def test_uniform_schedule_equals_static(xs, k):
    g = chain_graph(4)
    x = np.array(xs)
    a = coupled_rhs_scheduled(x, MU4, g, EdgeGainSet.uniform(g, k))
    b = coupled_rhs_static(x, MU4, g, k)
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-9)


def test_zero_gains_give_uncoupled_stack():
    g = complete_graph(4)
    x = np.arange(8, dtype=float) / 4
    np.testing.assert_array_equal(coupled_rhs_scheduled(x, MU4, g, np.zeros((12, 2))),
                                  stacked_rhs(x, MU4.as_array()))


def test_coupled_input_validation():
    g = chain_graph(4)
    with pytest.raises(DomainError):
        coupled_rhs_static(np.zeros(6), MU4, g, 1.0)
    with pytest.raises(DomainError):
        coupled_rhs_static(np.zeros(8), MU4, g, -1.0)
    with pytest.raises(DomainError):
        coupled_rhs_static(np.zeros(8), MU4, chain_graph(3), 1.0)
    with pytest.raises(DomainError):
        coupled_rhs_scheduled(np.zeros(8), MU4, g, -np.ones((6, 2)))
