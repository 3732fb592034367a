import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vdpsync.dynamics import OscillatorSet, linearize
from vdpsync.errors import DomainError
from vdpsync.gain_opt import (GainSchedule, SolverOptions, affine_lyapunov_data, grid_oracle, grid_search,
                              lambda_max, linearized_blocks, lyapunov_form, objective_value,
                              optimize_gains_at_sample, optimize_schedule, solve_affine_problem,
                              sync_metric, value_function)
from vdpsync.graph import EdgeGainSet, build_LK, chain_graph, complete_graph
from vdpsync.limit_cycle import find_limit_cycle, sample_cycle

MU4 = OscillatorSet([0.5, 3, 6, 10])


def pairwise_sum(x):
    p = x.reshape(-1, 2)
    n = len(p)
    return sum(float(np.sum((p[i] - p[j]) ** 2)) for i in range(n) for j in range(i + 1, n))


def blocks_at(states, mus):
    return [linearize(s, m).A for s, m in zip(states, mus)]


# -- P and V ---------------------------------------------------------------

def test_sync_metric_examples():
    np.testing.assert_array_equal(sync_metric(2), np.kron([[1, -1], [-1, 1]], np.eye(2)))
    P4 = sync_metric(4)
    assert np.all(np.diag(P4) == 3)
    assert P4[0, 2] == -1 and P4[0, 1] == 0
    np.testing.assert_allclose(np.linalg.eigvalsh(sync_metric(3)), [0, 0, 3, 3, 3, 3], atol=1e-12)
    with pytest.raises(DomainError):
        sync_metric(1)


def test_value_function_examples():
    P = sync_metric(2)
    assert value_function([1, 0, 0, 0], P) == 1
    assert value_function(np.tile([3.0, -1.0], 4), sync_metric(4)) == 0
    with pytest.raises(DomainError):
        value_function(np.zeros(6), P)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=8, max_size=8))
def test_value_function_is_pairwise_sum(xs):
    x = np.array(xs)
    assert abs(value_function(x, sync_metric(4)) - pairwise_sum(x)) <= 1e-12 * max(1.0, pairwise_sum(x))


# -- Lyapunov form ------------------------------------------------------------

def random_blocks(rng, n):
    return [linearize(rng.uniform(-2.5, 2.5, 2), m).A for m in rng.uniform(0.5, 10, n)]


def test_lyapunov_zero_gain_and_literal_n2():
    rng = np.random.default_rng(2)
    g = chain_graph(4)
    A = random_blocks(rng, 4)
    P = sync_metric(4)
    Ab = np.zeros((8, 8))
    for i, a in enumerate(A):
        Ab[2 * i:2 * i + 2, 2 * i:2 * i + 2] = a
    np.testing.assert_allclose(lyapunov_form(A, EdgeGainSet.uniform(g, 0), g, P),
                               0.5 * (Ab.T @ P + P @ Ab + (Ab.T @ P + P @ Ab).T), atol=1e-12)
    # n=2, A=0, unit gains: (A-L)^T P + P (A-L) with L = L (x) I
    g2 = chain_graph(2)
    L = np.kron([[1.0, -1.0], [-1.0, 1.0]], np.eye(2))
    P2 = sync_metric(2)
    np.testing.assert_allclose(lyapunov_form([np.zeros((2, 2))] * 2, EdgeGainSet.uniform(g2, 1.0), g2, P2),
                               -(L.T @ P2 + P2 @ L), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 50), st.floats(0, 50))
def test_lyapunov_form_affine_in_gains(seed, a, b):
    rng = np.random.default_rng(seed)
    g = complete_graph(3)
    P = sync_metric(3)
    A = random_blocks(rng, 3)
    K1, K2 = rng.uniform(0, 10, (2, g.m, 2))
    S = lambda K: lyapunov_form(A, K, g, P)
    lhs = S(a * K1 + b * K2) - S(np.zeros((g.m, 2)))
    rhs = a * (S(K1) - S(np.zeros((g.m, 2)))) + b * (S(K2) - S(np.zeros((g.m, 2))))
    np.testing.assert_allclose(lhs, rhs, atol=1e-8 * (1 + abs(a) + abs(b)) * 100)
    S0, G = affine_lyapunov_data(A, g, P)
    k = K1.reshape(-1)
    np.testing.assert_allclose(S0 - np.tensordot(k, G, axes=1), S(K1), atol=1e-9)


def test_consensus_direction_keeps_lambda_nonnegative():
    rng = np.random.default_rng(5)
    g, P = chain_graph(4), sync_metric(4)
    for _ in range(10):
        S = lyapunov_form(random_blocks(rng, 4), rng.uniform(0, 500, (g.m, 2)), g, P)
        assert lambda_max(S) >= -1e-9


# -- grid oracle ----------------------------------------------------------------

def naive_grid(S0, G, omega, top, step):
    best = np.inf
    for idx in itertools.product(range(top + 1), repeat=G.shape[0]):
        k = np.array(idx, dtype=float) * step
        best = min(best, objective_value(S0, G, k, omega))
    return best


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_grid_search_matches_naive_enumeration(seed):
    rng = np.random.default_rng(seed)
    g, P = chain_graph(2), sync_metric(2)
    S0, G = affine_lyapunov_data(random_blocks(rng, 2), g, P)
    res = grid_search(S0, G, 0.05, grid_max=9.0, grid_step=1.5)
    assert res.objective == pytest.approx(naive_grid(S0, G, 0.05, 6, 1.5), abs=1e-12)


def test_grid_search_single_entry_convex():
    # lambda_max(diag(1 - k, 2 - 3k)... ) style problem with one free entry
    S0 = np.diag([4.0, -1.0])
    G = np.array([np.diag([1.0, 0.0])])
    res = grid_search(S0, G, 0.5, grid_max=10, grid_step=0.25)
    # continuous minimizer: lambda = max(4-k, -1) + 0.5 k, minimized at k = 5
    assert abs(res.k[0] - 5.0) <= 0.25


def test_grid_max_zero_is_witness():
    rng = np.random.default_rng(4)
    g, P = chain_graph(2), sync_metric(2)
    A = random_blocks(rng, 2)
    sol = grid_oracle(A, g, P, 0.01, grid_max=0.0)
    assert sol.beta == 0 and np.all(sol.gains.values == 0)
    S0, _ = affine_lyapunov_data(A, g, P)
    assert sol.alpha == pytest.approx(lambda_max(S0))


def test_grid_rejects_large_problems():
    g, P = chain_graph(4), sync_metric(4)
    with pytest.raises(DomainError):
        grid_oracle(random_blocks(np.random.default_rng(0), 4), g, P, 0.01)


# -- solver -------------------------------------------------------------------------

def test_solver_matches_grid_on_stated_instance():
    g, P = chain_graph(2), sync_metric(2)
    A = blocks_at([[2, 0], [2, 0]], [0.5, 10])
    opts = SolverOptions(gain_cap=300.0)
    sol = optimize_gains_at_sample(A, g, P, 0.01, opts)
    ref = grid_oracle(A, g, P, 0.01, 300.0, 0.5)
    assert sol.converged
    assert abs(sol.objective - ref.objective) <= 0.01 * abs(ref.objective)
    assert sol.objective <= ref.objective + 1e-6  # continuous optimum beats the grid


def test_huge_omega_gives_zero_gains():
    rng = np.random.default_rng(8)
    g, P = chain_graph(4), sync_metric(4)
    A = random_blocks(rng, 4)
    sol = optimize_gains_at_sample(A, g, P, 1e6)
    S0, _ = affine_lyapunov_data(A, g, P)
    assert sol.beta <= 1e-3
    assert np.all(sol.gains.values <= 1e-3)
    assert abs(sol.alpha - lambda_max(S0)) <= 1e-3


@pytest.mark.parametrize("method", ["barrier", "subgradient"])
def test_never_worse_than_zero_witness(method):
    rng = np.random.default_rng(9)
    g, P = complete_graph(3), sync_metric(3)
    opts = SolverOptions(method=method, subgrad_iters=3000)
    for _ in range(3):
        A = random_blocks(rng, 3)
        S0, _ = affine_lyapunov_data(A, g, P)
        sol = optimize_gains_at_sample(A, g, P, 0.1, opts)
        assert sol.objective <= lambda_max(S0) + 1e-9


def test_subgradient_close_to_barrier():
    g, P = chain_graph(2), sync_metric(2)
    A = blocks_at([[2, 0], [2, 0]], [0.5, 10])
    S0, G = affine_lyapunov_data(A, g, P)
    bar = solve_affine_problem(S0, G, 0.1, SolverOptions())
    sub = solve_affine_problem(S0, G, 0.1, SolverOptions(method="subgradient"))
    assert sub.objective >= bar.objective - 1e-6
    assert sub.objective <= bar.objective + 0.02 * abs(bar.objective)


def test_returned_triple_is_feasible():
    rng = np.random.default_rng(11)
    g, P = chain_graph(4), sync_metric(4)
    for omega in (0.001, 0.01, 0.1):
        A = random_blocks(rng, 4)
        sol = optimize_gains_at_sample(A, g, P, omega)
        S = lyapunov_form(A, sol.gains, g, P)
        assert sol.alpha >= lambda_max(S) - 1e-7
        assert np.all(sol.gains.values >= 0)
        assert np.all(sol.gains.values <= sol.beta + 1e-7)
        assert sol.objective == pytest.approx(sol.alpha + omega * sol.beta, abs=1e-12)


def test_monotone_in_omega():
    rng = np.random.default_rng(12)
    g, P = chain_graph(4), sync_metric(4)
    A = random_blocks(rng, 4)
    omegas = [0.001, 0.01, 0.1, 1.0]
    sols = [optimize_gains_at_sample(A, g, P, w) for w in omegas]
    for lo, hi in zip(sols, sols[1:]):
        assert lo.beta >= hi.beta - 1e-4 * max(1.0, hi.beta)
        assert lo.alpha <= hi.alpha + 1e-4


@pytest.mark.filterwarnings("ignore:Solution may be inaccurate")
def test_solver_matches_independent_sdp():
    cp = pytest.importorskip("cvxpy")
    rng = np.random.default_rng(13)
    g, P = chain_graph(4), sync_metric(4)
    A = random_blocks(rng, 4)
    S0, G = affine_lyapunov_data(A, g, P)
    omega = 0.01
    k = cp.Variable(G.shape[0], nonneg=True)
    alpha, beta = cp.Variable(), cp.Variable()
    S = S0 - sum(k[q] * G[q] for q in range(G.shape[0]))
    prob = cp.Problem(cp.Minimize(alpha + omega * beta),
                      [alpha * np.eye(8) - 0.5 * (S + S.T) >> 0, k <= beta, beta <= 1e4])
    prob.solve(solver="CLARABEL")
    ours = optimize_gains_at_sample(A, g, P, omega)
    assert ours.objective == pytest.approx(prob.value, rel=1e-4, abs=1e-4)


def test_invalid_inputs():
    g, P = chain_graph(2), sync_metric(2)
    A = blocks_at([[2, 0], [2, 0]], [0.5, 10])
    with pytest.raises(DomainError):
        optimize_gains_at_sample(A, g, P, -1.0)
    with pytest.raises(DomainError):
        optimize_gains_at_sample(A[:1], g, P, 0.1)
    with pytest.raises(DomainError):
        SolverOptions(method="newton")


# -- schedules -------------------------------------------------------------------

@pytest.fixture(scope="module")
def cycle16():
    lc = find_limit_cycle(MU4)
    return sample_cycle(lc.anchor, lc.period, 16, MU4)


def test_schedule_shape_and_feasibility(cycle16):
    g = chain_graph(4)
    sch = optimize_schedule(cycle16, MU4, g, 0.01)
    assert sch.gains.shape == (16, 6, 2)
    assert np.all(sch.converged)
    assert np.all(sch.betas >= 0)
    sch.check_feasible(linearized_blocks(cycle16, MU4))
    assert sch.edge_averages().shape == (6,)
    assert sch.largest_gain().shape == (16,)
    np.testing.assert_allclose(sch.largest_gain(), sch.betas, atol=1e-9)
    again = optimize_schedule(cycle16, MU4, g, 0.01)
    np.testing.assert_array_equal(again.gains, sch.gains)


def test_schedule_workers_match_serial(cycle16):
    g = chain_graph(4)
    a = optimize_schedule(cycle16, MU4, g, 0.1, workers=1)
    b = optimize_schedule(cycle16, MU4, g, 0.1, workers=2)
    np.testing.assert_array_equal(a.gains, b.gains)


def test_homogeneous_large_omega_near_zero():
    osc = OscillatorSet([2, 2, 2, 2])
    lc = find_limit_cycle(osc)
    cyc = sample_cycle(lc.anchor, lc.period, 8, osc)
    sch = optimize_schedule(cyc, osc, chain_graph(4), 1e4)
    assert sch.betas.max() <= 1e-3


def test_linearized_blocks_follow_cycle(cycle16):
    blocks = linearized_blocks(cycle16, MU4)
    assert len(blocks) == 16 and len(blocks[0]) == 4
    np.testing.assert_array_equal(blocks[3][2], linearize(cycle16.phi_s[3], 6).A)
