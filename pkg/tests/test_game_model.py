import numpy as np
import pytest

from msgne.errors import ConfigurationError
from msgne.game_model import (
    AffineMap, AgentSpec, GmiGame, LinearCoupledCost, PwaAgent, TensorCost, ZeroCost, big_m_bounds,
    compile, enumerate_actions, expected_cost_vector, lift_integer_cost, pwa_rows, reformulate_pwa,
    relax_constraints,
)
from msgne.instances import (
    PENNIES, make_cournot_instance, make_dsm_instance, make_flow_instance, make_flow_integer_game,
    matching_pennies,
)
from msgne.regularizers import Box
from msgne.verify import finite_difference_check, monotonicity_sample, sample_actions


# ---------------------------------------------------------------------------
# actions


def test_enumerate_at_most_one():
    acts = enumerate_actions(3, membership=lambda a: a.sum() <= 1)
    np.testing.assert_array_equal(acts, [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])


def test_enumerate_binary_scalar():
    np.testing.assert_array_equal(enumerate_actions(1), [[0], [1]])


def test_enumerate_integer_box():
    np.testing.assert_array_equal(enumerate_actions(1, upper=2), [[0], [1], [2]])


def test_enumerate_exhaustive_and_capped():
    rng = np.random.default_rng(0)
    w = rng.integers(1, 4, size=5)
    acts = enumerate_actions(5, membership=lambda a: w @ a <= 5)
    brute = [np.array(t) for t in np.ndindex(*(2,) * 5) if w @ np.array(t) <= 5]
    assert {tuple(a) for a in acts} == {tuple(a) for a in brute}
    assert len({tuple(a) for a in acts}) == len(acts)
    with pytest.raises(ConfigurationError, match="2097152"):
        enumerate_actions(21)


def test_agent_rejects_duplicate_actions():
    with pytest.raises(ConfigurationError):
        AgentSpec(actions=[[0], [0]])


# ---------------------------------------------------------------------------
# expected costs


def test_pennies_expected_cost():
    cost = TensorCost(PENNIES)
    f = expected_cost_vector(cost, 0, [np.array([0.5, 0.5]), np.array([1.0, 0.0])])
    np.testing.assert_array_equal(f, [1.0, -1.0])
    f = expected_cost_vector(cost, 0, [np.array([0.5, 0.5]), np.array([0.5, 0.5])])
    np.testing.assert_array_equal(f, [0.0, 0.0])


def test_zero_cost():
    np.testing.assert_array_equal(expected_cost_vector(ZeroCost(), 1, [np.ones(2) / 2, np.ones(3) / 3]), 0)


def test_tensor_three_players_against_loop():
    rng = np.random.default_rng(4)
    T = rng.normal(size=(2, 3, 4))
    xs = [rng.dirichlet(np.ones(m)) for m in (2, 3, 4)]
    for i in range(3):
        ref = np.zeros(T.shape[i])
        for idx in np.ndindex(*T.shape):
            w = np.prod([xs[j][idx[j]] for j in range(3) if j != i])
            ref[idx[i]] += T[idx] * w
        np.testing.assert_allclose(expected_cost_vector(TensorCost(T), i, xs), ref, atol=1e-14)


def test_linear_coupled_matches_tensor():
    rng = np.random.default_rng(2)
    A = [enumerate_actions(2), enumerate_actions(2, membership=lambda a: a.sum() <= 1)]
    Am = [a.T.astype(float) for a in A]
    own = rng.normal(size=len(A[0]))
    M01 = rng.normal(size=(2, 2))
    lin = LinearCoupledCost(own, {1: M01})
    # J_0(a0, a1) = own[a0] + <M01 a1, a0>
    table = np.array([[own[j] + A[0][j] @ M01 @ A[1][k] for k in range(len(A[1]))] for j in range(len(A[0]))])
    for _ in range(100):
        xs = [rng.dirichlet(np.ones(len(A[0]))), rng.dirichlet(np.ones(len(A[1])))]
        np.testing.assert_allclose(expected_cost_vector(lin, 0, xs, Am),
                                   expected_cost_vector(TensorCost(table), 0, xs), atol=1e-12)


def test_skew_linear_coupled_is_monotone():
    rng = np.random.default_rng(9)
    A = enumerate_actions(2)
    M = rng.normal(size=(2, 2))
    acts = [A, A]
    game = GmiGame(agents=[
        AgentSpec(actions=A, discrete_cost=LinearCoupledCost(np.zeros(4), {1: M})),
        AgentSpec(actions=A, discrete_cost=LinearCoupledCost(np.zeros(4), {0: -M.T})),
    ])
    ms = compile(game)

    def sampler(r):
        return np.concatenate([r.dirichlet(np.ones(len(a))) for a in acts])

    assert monotonicity_sample(ms.Fd, sampler, 1000, seed=1).minimum >= -1e-10


# ---------------------------------------------------------------------------
# relaxed constraints


def test_relax_dsm_device():
    agent = AgentSpec(actions=[[0], [1]], local_discrete=lambda a: np.array([1.0 * a, -3.0 * a]), theta=[0, 0])
    Gd, Hd = relax_constraints(agent)
    np.testing.assert_array_equal(Gd, [[0, 1], [0, -3]])
    assert Hd.shape == (0, 2)


def test_relax_zero_coupling():
    agent = AgentSpec(actions=[[0], [1], [2]])
    _, Hd = relax_constraints(agent, n_rho=3)
    np.testing.assert_array_equal(Hd, np.zeros((3, 3)))


def test_cournot_has_no_discrete_coupling():
    ms = compile(make_cournot_instance(0, N=3, M=3))
    assert ms.Hd.shape[0] == 3 and not np.any(ms.Hd)


def test_expectation_identity_monte_carlo():
    ms = compile(make_cournot_instance(1, N=2, M=3))
    rng = np.random.default_rng(3)
    x = np.concatenate([rng.dirichlet(np.ones(sz)) for sz in ms.simplex_sizes])
    idx = sample_actions(ms, x, 10_000, seed=5)
    for b, st in enumerate(ms.simplex_starts):
        agent = b
        rows = slice(ms.mu_slices[agent].start, ms.mu_slices[agent].stop)
        g = ms.Gd[rows][:, st + idx[:, b]].T        # g(a) for every sample
        mean, se = g.mean(axis=0), g.std(axis=0, ddof=1) / np.sqrt(len(g))
        exact = ms.Gd[rows] @ x
        assert np.all(np.abs(mean - exact) <= 3 * se + 1e-12)


# ---------------------------------------------------------------------------
# compile


def test_compile_pennies():
    ms = compile(matching_pennies())
    assert ms.dims == (4, 0, 0, 0)
    x = np.array([0.3, 0.7, 0.6, 0.4])
    np.testing.assert_allclose(ms.Fd(x), np.r_[PENNIES @ x[2:], -PENNIES.T @ x[:2]])
    assert ms.is_finite_game


def test_compile_dsm_gradient_finite_differences():
    game = make_dsm_instance(0, N=3, T=4)
    ms = compile(game)
    assert not np.any(ms.Fd(ms.initial_x()))
    md = game.metadata
    P = np.asarray(md["inflexible"]).sum(axis=0)
    r = np.asarray(md["r"])
    N, T = md["N"], md["T"]

    def cost(i, y):
        Y = y.reshape(N, T)
        return float(np.sum(r * (P + Y.sum(axis=0)) * Y[i]))

    rng = np.random.default_rng(0)
    y = rng.uniform(0, 0.1, N * T)
    for i in range(N):
        sl = slice(i * T, (i + 1) * T)

        def fi(yi, i=i):
            z = y.copy()
            z[sl] = yi
            return cost(i, z)

        err = finite_difference_check(fi, lambda yi: ms.Fc(np.r_[y[:sl.start], yi, y[sl.stop:]])[sl], y[sl])
        assert err <= 1e-6


def test_compile_empty_coupling():
    ms = compile(matching_pennies())
    assert ms.Hd.shape == (0, 4) and ms.rho.shape == (0,)


def test_dsm_coupling_rows():
    ms = compile(make_dsm_instance(3, N=10, T=24))
    assert ms.n_rho == 48


def test_cournot_actions_count():
    game = make_cournot_instance(0, N=2, M=3, max_markets=1)
    assert all(a.m == 4 for a in game.agents)


def test_generators_deterministic():
    for make in (lambda: make_dsm_instance(5, N=3, T=6), lambda: make_cournot_instance(5),
                 lambda: make_flow_instance(5, N=4, L=3)):
        a, b = compile(make()), compile(make())
        np.testing.assert_array_equal(a.Gd, b.Gd)
        np.testing.assert_array_equal(a.Hd, b.Hd)
        np.testing.assert_array_equal(a.rho, b.rho)
        y = a.initial_y()
        np.testing.assert_array_equal(a.Fc(y), b.Fc(y))


def test_generator_caps():
    with pytest.raises(ConfigurationError):
        make_dsm_instance(0, N=31)
    with pytest.raises(ConfigurationError):
        make_dsm_instance(0, T=25)
    with pytest.raises(ConfigurationError):
        make_cournot_instance(0, M=11)


def test_cournot_strongly_monotone():
    game = make_cournot_instance(2)
    ms = compile(game)
    sigma = min(game.metadata["q"])
    rng = np.random.default_rng(1)
    for _ in range(500):
        u, v = rng.uniform(0, 5, ms.n), rng.uniform(0, 5, ms.n)
        assert (ms.Fc(u) - ms.Fc(v)) @ (u - v) >= sigma * np.sum((u - v) ** 2) - 1e-9


# ---------------------------------------------------------------------------
# lift


def test_lift_flow_rows():
    game = make_flow_integer_game(0, N=4, L=3, max_flow=3)
    lifted = lift_integer_cost(game, game.continuous_pseudogradient)
    for a0, a1 in zip(game.agents, lifted.agents):
        acts = a0.action_blocks[0][:, 0].astype(float)
        Gd, _ = relax_constraints(a1, lifted.n_rho)
        np.testing.assert_array_equal(Gd[-2], acts)
        np.testing.assert_array_equal(Gd[-1], -acts)
        np.testing.assert_array_equal(a1.local_continuous.matrix[-2:], [[-1.0], [1.0]])
        assert a1.n == 1


def test_lift_flow_agent_with_three_units():
    game = make_flow_integer_game(0, N=10, L=6, max_flow=3)
    lifted = lift_integer_cost(game, game.continuous_pseudogradient)
    widths = [a.m for a in lifted.agents]
    assert 4 in widths
    a = lifted.agents[widths.index(4)]
    Gd, _ = relax_constraints(a, lifted.n_rho)
    np.testing.assert_array_equal(Gd[-2], [0, 1, 2, 3])


def test_lift_zero_cost_game_unchanged():
    game = GmiGame(agents=[AgentSpec(actions=[[0], [1]]), AgentSpec(actions=[[0], [1], [2]])])
    assert lift_integer_cost(game) is game


def test_lift_rejects_table_costs():
    with pytest.raises(ConfigurationError):
        lift_integer_cost(matching_pennies())


def test_flow_gradient_finite_differences():
    game = make_flow_instance(0, N=10, L=6)
    ms = compile(game)
    md = game.metadata
    H = np.asarray(md["links"])
    rng = np.random.default_rng(0)
    v = np.array([rng.uniform(0.2, 0.8) * m for m in md["max_flow"]])
    for i, agent in enumerate(game.agents):
        sl = ms.y_slices[i]

        def fi(vi, i=i):
            w = v.copy()
            w[sl] = vi
            return agent.continuous_cost(w)

        def gi(vi, i=i):
            w = v.copy()
            w[sl] = vi
            return ms.Fc(w)[sl]

        assert finite_difference_check(fi, gi, v[sl]) <= 1e-5
    assert H.shape == (6, 10)


# ---------------------------------------------------------------------------
# piecewise-affine reformulation


def _feasible_patterns(agent, y, eps=1e-9):
    Gd_fn, Gc, theta, _ = pwa_rows(agent, eps)
    out = []
    for a in enumerate_actions(3 * agent.p):
        rhs = theta - Gd_fn(a) - Gc[:, 0] * y
        Z = Gc[:, 1:]
        # interval of each z_j
        lo = np.full(agent.p, -np.inf)
        hi = np.full(agent.p, np.inf)
        ok = True
        for r in range(len(theta)):
            nz = np.nonzero(Z[r])[0]
            if len(nz) == 0:
                ok &= rhs[r] >= -1e-12
            else:
                j = nz[0]
                if Z[r, j] > 0:
                    hi[j] = min(hi[j], rhs[r] / Z[r, j])
                else:
                    lo[j] = max(lo[j], rhs[r] / Z[r, j])
        if ok and np.all(lo <= hi + 1e-12):
            out.append((a, lo, hi))
    return out


def test_pwa_single_region():
    agent = PwaAgent(0.0, 2.0, [(0.0, 2.0)], [1.0], [0.0])
    assert big_m_bounds(1.0, 0.0, 0.0, 2.0) == (0.0, 2.0)
    _, _, _, bigm = pwa_rows(agent)
    assert bigm == [(0.0, 2.0)]
    pats = _feasible_patterns(agent, 1.5)
    on = [(lo, hi) for a, lo, hi in pats if a[0] == 1]
    assert on and all(lo[0] == pytest.approx(1.5) and hi[0] == pytest.approx(1.5) for lo, hi in on)


def test_pwa_two_regions_unique_activation():
    eps = 1e-9
    agent = PwaAgent(0.0, 2.0, [(0.0, 1.0), (1.0 + eps, 2.0)], [0.0, 1.0], [0.0, 0.0])
    pats = _feasible_patterns(agent, 0.5, eps)
    assert len(pats) == 1
    a, lo, hi = pats[0]
    np.testing.assert_array_equal(a[:2], [1, 0])
    assert lo.sum() == pytest.approx(0.0)


def test_pwa_product_rows_with_ones():
    agent = PwaAgent(0.0, 1.0, [(0.0, 1.0)], [0.0], [0.0])
    Gd_fn, Gc, theta, _ = pwa_rows(agent)
    lhs = Gd_fn(np.ones(3))[4:7]
    assert np.all(lhs <= theta[4:7])
    np.testing.assert_array_equal(lhs, theta[4:7])


def test_pwa_eleven_rows_per_region():
    agent = PwaAgent(0.0, 3.0, [(0.0, 1.0), (1.0 + 1e-9, 2.0), (2.0 + 2e-9, 3.0)], [1, -1, 0.5], [0, 2, 0])
    _, Gc, theta, _ = pwa_rows(agent)
    assert len(theta) == 33 and Gc.shape == (33, 4)


def test_pwa_overlapping_regions_rejected():
    from msgne.game_model import PwaGameSpec
    bad = PwaAgent(0.0, 2.0, [(0.0, 1.5), (1.0, 2.0)], [1.0, 1.0], [0.0, 0.0])
    with pytest.raises(ConfigurationError):
        reformulate_pwa(PwaGameSpec([bad], lambda y: y))
    gap = PwaAgent(0.0, 2.0, [(0.0, 0.5), (1.0, 2.0)], [1.0, 1.0], [0.0, 0.0])
    with pytest.raises(ConfigurationError):
        reformulate_pwa(PwaGameSpec([gap], lambda y: y))


# ---------------------------------------------------------------------------
# validation


def test_continuous_set_must_be_bounded():
    from msgne.regularizers import Free
    with pytest.raises(ConfigurationError):
        AgentSpec(actions=[[0]], continuous_set=Free(2))


def test_coupling_dimension_mismatch():
    agent = AgentSpec(actions=[[0], [1]], continuous_set=Box([0.0], [1.0]),
                      coupling_continuous=AffineMap(np.ones((2, 1))))
    with pytest.raises(ConfigurationError):
        compile(GmiGame(agents=[agent], rho=np.ones(3), continuous_affine=(np.eye(1), np.zeros(1))))
