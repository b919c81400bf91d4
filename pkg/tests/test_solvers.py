import dataclasses

import numpy as np
import pytest

from msgne.errors import ConfigurationError
from msgne.game_model import AffineMap, AgentSpec, GmiGame, TensorCost, compile
from msgne.instances import make_cournot_instance, make_dsm_instance, matching_pennies
from msgne.network import CommGraph, complete, ring
from msgne.operators import ALTERNATIVE, DISTRIBUTED, SEMI_DECENTRALIZED, build_problem, layout
from msgne.regularizers import Box, Free, RegularizerSpec, project_euclidean, project_simplex
from msgne.solvers import (
    CONVERGED, DIVERGED, MAX_ITERS, SolveConfig, backward, bforb_step, default_spec, dual_consensus_gap,
    initial_point, lyapunov_diagnostic, run_algorithm1, run_algorithm2, run_alternative, run_generic,
    thread_count,
)


@pytest.fixture(scope="module")
def pennies():
    return compile(matching_pennies())


@pytest.fixture(scope="module")
def cournot():
    return compile(make_cournot_instance(0))


def _gamma(problem, g):
    return problem.step_vector(np.full(problem.ms.n_agents, g), g)


# ---------------------------------------------------------------------------
# single steps


def test_step_fixes_a_solution(pennies):
    prob = build_problem(pennies, SEMI_DECENTRALIZED)
    w = np.full(4, 0.5)
    for entropy in (True, False):
        nxt, B = bforb_step(prob, default_spec(prob, entropy), _gamma(prob, 0.2), w, prob.forward(w))
        np.testing.assert_allclose(nxt, w, atol=1e-15)
        np.testing.assert_array_equal(B, 0.0)


def test_euclidean_step_is_forb(cournot):
    prob = build_problem(cournot, SEMI_DECENTRALIZED)
    spec = default_spec(prob, entropy=False)
    rng = np.random.default_rng(0)
    w0 = initial_point(cournot, SEMI_DECENTRALIZED)
    w1 = w0 + 0.01 * rng.random(w0.size)
    g = _gamma(prob, 0.01)
    got, _ = bforb_step(prob, spec, g, w1, prob.forward(w0))
    z = w1 - g * (2 * prob.forward(w1) - prob.forward(w0))
    ref = np.empty_like(z)
    for idx, s in prob.backward_sets:
        ref[idx] = project_euclidean(s, z[idx])
    np.testing.assert_array_equal(got, ref)


def test_free_space_step_is_unconstrained(cournot):
    prob = build_problem(cournot, SEMI_DECENTRALIZED)
    free = dataclasses.replace(prob, backward_sets=[(slice(0, prob.dim), Free(prob.dim))])
    free.__dict__.pop("_plans", None)
    rng = np.random.default_rng(1)
    w, w_prev = rng.normal(size=prob.dim), rng.normal(size=prob.dim)
    g = np.full(prob.dim, 0.03)
    got, _ = bforb_step(free, RegularizerSpec.euclidean(prob.dim), g, w, prob.forward(w_prev))
    np.testing.assert_array_equal(got, w - g * (2 * prob.forward(w) - prob.forward(w_prev)))


def test_entropy_step_with_constant_forward(pennies):
    prob = build_problem(pennies, SEMI_DECENTRALIZED)
    c = np.array([0.3, -1.2, 2.0, 0.7])
    const = dataclasses.replace(prob, forward=lambda w: c)
    w = np.array([0.2, 0.8, 0.6, 0.4])
    g = 0.7
    got, _ = bforb_step(const, default_spec(prob), _gamma(prob, g), w, c)
    for s in (slice(0, 2), slice(2, 4)):
        ref = w[s] * np.exp(-g * c[s])
        np.testing.assert_allclose(got[s], ref / ref.sum(), rtol=1e-14)


def test_one_forward_per_iteration(pennies):
    prob = build_problem(pennies, SEMI_DECENTRALIZED)
    n = [0]

    def counted(w):
        n[0] += 1
        return prob.forward(w)

    rep = run_generic(dataclasses.replace(prob, forward=counted), SolveConfig(epsilon=1e-12, max_iters=37, omega0=[0.9, 0.1, 0.3, 0.7]))
    assert rep.iterations == 37 and n[0] == 37


def test_backward_rejects_mismatched_spec(pennies, cournot):
    p1 = build_problem(pennies, SEMI_DECENTRALIZED)
    p2 = build_problem(cournot, SEMI_DECENTRALIZED)
    w = initial_point(cournot, SEMI_DECENTRALIZED)
    with pytest.raises(ConfigurationError):
        backward(p2, default_spec(p1), np.ones(w.size), w, w)


# ---------------------------------------------------------------------------
# stopping and configuration


def test_huge_epsilon_stops_after_one_iteration(cournot):
    rep = run_algorithm1(cournot, SolveConfig(epsilon=1e300))
    assert rep.status == CONVERGED and rep.iterations == 1
    assert rep.residual_trace.shape == (1, 4)


def test_max_iters_status(cournot):
    rep = run_algorithm1(cournot, SolveConfig(epsilon=1e-12, max_iters=5))
    assert rep.status == MAX_ITERS and rep.iterations == 5


def test_divergence_detected(cournot):
    prob = build_problem(cournot, SEMI_DECENTRALIZED)
    bad = dataclasses.replace(prob, forward=lambda w: -w - 1.0)
    rep = run_generic(bad, SolveConfig(gamma=0.5, check_steps=False))
    assert rep.status == DIVERGED
    assert np.isinf(rep.residual_trace[-1, 1])


@pytest.mark.parametrize("kw", [dict(epsilon=0.0), dict(max_iters=0), dict(trace_every=0),
                                dict(step_fraction=1.0)])
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        SolveConfig(**kw)


@pytest.mark.parametrize("gamma,zeta", [(0.0, None), (0.1, 0.0), (-1.0, None), (np.nan, None)])
def test_bad_steps_rejected(cournot, gamma, zeta):
    for run in (run_algorithm1, run_alternative):
        with pytest.raises(ConfigurationError):
            run(cournot, SolveConfig(gamma=gamma, zeta=zeta, regularizer="euclidean"))


def test_step_above_bound_rejected(pennies):
    with pytest.raises(ConfigurationError):
        run_algorithm1(pennies, SolveConfig(gamma=0.25))
    rep = run_algorithm1(pennies, SolveConfig(gamma=0.25, check_steps=False, max_iters=3,
                                                 omega0=[0.9, 0.1, 0.3, 0.7]))
    assert rep.iterations == 3


def test_thread_count(monkeypatch):
    monkeypatch.delenv("MSGNE_THREADS", raising=False)
    assert thread_count() == 1
    monkeypatch.setenv("MSGNE_THREADS", "4")
    assert thread_count() == 4
    monkeypatch.setenv("MSGNE_THREADS", "many")
    with pytest.raises(ConfigurationError):
        thread_count()


# ---------------------------------------------------------------------------
# drivers


def test_pennies_converges(pennies):
    rep = run_algorithm1(pennies, SolveConfig(epsilon=1e-6, omega0=[0.9, 0.1, 0.3, 0.7]))
    assert rep.status == CONVERGED
    np.testing.assert_allclose(rep.omega, 0.5, atol=1e-4)


def test_alternative_matches_algorithm1_on_pennies(pennies):
    a = run_algorithm1(pennies, SolveConfig(epsilon=1e-6, omega0=[0.9, 0.1, 0.3, 0.7]))
    b = run_alternative(pennies, SolveConfig(epsilon=1e-6, omega0=[0.9, 0.1, 0.3, 0.7], regularizer="euclidean"))
    assert b.status == CONVERGED
    np.testing.assert_allclose(b.omega, a.omega, atol=2e-4)


def _box_agent_game(theta):
    """Two agents, three actions, one continuous variable.

    The local row is ``E[a_i] + y_i <= theta``, inactive for large theta.
    """
    agents = []
    for i in range(2):
        agents.append(AgentSpec(
            actions=[[0], [1], [2]], continuous_set=Box([0.0], [2.0]),
            local_discrete=np.array([[0.0, 1.0, 2.0]]), local_continuous=AffineMap(np.array([[1.0]])),
            theta=np.array([theta]), coupling_discrete=np.array([[0.0, 1.0, 2.0]]),
            coupling_continuous=AffineMap(np.array([[1.0]])),
        ))
    rng = np.random.default_rng(3)
    A = rng.normal(size=(3, 3))
    agents[0] = dataclasses.replace(agents[0], discrete_cost=TensorCost(A))
    agents[1] = dataclasses.replace(agents[1], discrete_cost=TensorCost(-A.T))
    Q = np.array([[2.0, 0.5], [-0.5, 1.0]])
    return compile(GmiGame(agents=agents, rho=np.array([3.0]), continuous_affine=(Q, np.array([-1.0, -1.0]))))


def test_inactive_local_rows_match_separate_projections():
    ms = _box_agent_game(1e3)
    cfg = SolveConfig(epsilon=1e-9, max_iters=300, regularizer="euclidean", record_iterates=True, gamma=0.05)
    rep = run_alternative(ms, cfg)
    prob = build_problem(ms, ALTERNATIVE)
    lay = prob.layout
    g = _gamma(prob, 0.05)
    # the same iteration with the simplex and box projected separately
    w = initial_point(ms, ALTERNATIVE)
    B_prev = None
    for k, ref in enumerate(rep.iterates[1:]):
        B = prob.forward(w)
        d = 2 * B - (B if B_prev is None else B_prev)
        z = w - g * d
        nxt = np.empty_like(w)
        x = z[lay["x"]]
        nxt[lay["x"]] = np.concatenate([project_simplex(x[s]) for s in ms.x_slices])
        nxt[lay["y"]] = np.clip(z[lay["y"]], 0.0, 2.0)
        nxt[lay["lam"]] = np.maximum(z[lay["lam"]], 0.0)
        np.testing.assert_allclose(ref, nxt, atol=1e-10, err_msg=f"iteration {k + 1}")
        w, B_prev = nxt, B


def test_alternative_respects_active_local_rows():
    ms = _box_agent_game(0.8)
    rep = run_alternative(ms, SolveConfig(epsilon=1e-8, regularizer="euclidean"))
    assert rep.status == CONVERGED
    x, y = rep.omega[:6], rep.omega[6:8]
    assert ms.local_violation(x, y) <= 1e-8


def test_complete_graph_matches_algorithm1():
    ms = compile(make_cournot_instance(0, N=2, M=2))
    a = run_algorithm1(ms, SolveConfig(epsilon=1e-7))
    b = run_algorithm2(ms, complete(2), SolveConfig(epsilon=1e-7))
    assert a.status == b.status == CONVERGED
    lam = np.asarray(b.final_iterate.lam)
    for row in lam:
        np.testing.assert_allclose(row, a.final_iterate.lam, atol=1e-3)


def test_distributed_graph_checks(cournot):
    W = np.zeros((5, 5))
    W[0, 1] = W[1, 0] = 1.0
    with pytest.raises(ConfigurationError):
        run_algorithm2(cournot, CommGraph(W))
    with pytest.raises(ConfigurationError):
        run_algorithm2(cournot, ring(4))
    with pytest.raises(ConfigurationError):
        CommGraph.from_edges(2, [(0, 1, 0.0)])
    with pytest.raises(ConfigurationError):
        run_algorithm2(cournot, ring(5), mode="gossip")


def test_distributed_starts_with_equal_multipliers(cournot):
    w = initial_point(cournot, DISTRIBUTED)
    lay = layout(cournot, DISTRIBUTED)
    assert not np.any(w[lay["lam"]]) and not np.any(w[lay["nu"]])


def test_message_passing_matches_stacked(cournot):
    cfg = SolveConfig(epsilon=1e-12, max_iters=200)
    a = run_algorithm2(cournot, ring(5), cfg, mode="message_passing")
    b = run_algorithm2(cournot, ring(5), cfg, mode="stacked")
    np.testing.assert_allclose(a.omega, b.omega, atol=1e-12)
    np.testing.assert_allclose(a.residual_trace, b.residual_trace, atol=1e-12)


def test_dual_consensus_gap_zero_for_other_variants(pennies):
    rep = run_algorithm1(pennies, SolveConfig(epsilon=1e-3))
    assert dual_consensus_gap(rep, pennies) == 0.0


# ---------------------------------------------------------------------------
# invariants along trajectories


def _runs(ms):
    cfg = dict(epsilon=1e-9, max_iters=400, record_iterates=True)
    yield SEMI_DECENTRALIZED, run_algorithm1(ms, SolveConfig(**cfg))
    yield ALTERNATIVE, run_alternative(ms, SolveConfig(regularizer="euclidean", **cfg))
    yield DISTRIBUTED, run_algorithm2(ms, ring(ms.n_agents), SolveConfig(**cfg))


def _simplex_blocks(ms):
    out = []
    for a, s in zip(ms.game.agents, ms.x_slices):
        k = s.start
        for b in a.action_blocks:
            out.append(slice(k, k + len(b)))
            k += len(b)
    return out


@pytest.mark.parametrize("make", [lambda: make_cournot_instance(1), lambda: make_dsm_instance(1, N=3, T=4)],
                         ids=["cournot", "dsm"])
def test_simplex_and_dual_sign(make):
    ms = compile(make())
    for variant, rep in _runs(ms):
        lay = layout(ms, variant)
        for w in rep.iterates:
            x = w[lay["x"]]
            for s in _simplex_blocks(ms):
                assert abs(x[s].sum() - 1.0) <= 1e-12
                if variant == ALTERNATIVE:
                    assert np.all(x[s] >= 0.0)
                else:
                    assert np.all(x[s] > 0.0)
            for k in ("mu", "lam"):
                if k in lay:
                    assert np.all(w[lay[k]] >= 0.0)


def test_determinism(cournot, monkeypatch):
    cfg = SolveConfig(epsilon=1e-6)
    a = run_algorithm1(cournot, cfg)
    b = run_algorithm1(cournot, cfg)
    np.testing.assert_array_equal(a.omega, b.omega)
    np.testing.assert_array_equal(a.residual_trace, b.residual_trace)
    monkeypatch.setenv("MSGNE_THREADS", "4")
    c = run_alternative(cournot, SolveConfig(epsilon=1e-6, regularizer="euclidean"))
    monkeypatch.setenv("MSGNE_THREADS", "1")
    d = run_alternative(cournot, SolveConfig(epsilon=1e-6, regularizer="euclidean"))
    np.testing.assert_array_equal(c.omega, d.omega)
    assert c.iterations == d.iterations


@pytest.mark.parametrize("driver", ["alg1", "alt", "alg2"])
def test_fixed_point_residual_after_convergence(cournot, driver):
    eps = 1e-6
    if driver == "alg1":
        rep = run_algorithm1(cournot, SolveConfig(epsilon=eps))
        prob = build_problem(cournot, SEMI_DECENTRALIZED, lipschitz=rep.lipschitz)
    elif driver == "alt":
        rep = run_alternative(cournot, SolveConfig(epsilon=eps, regularizer="euclidean"))
        prob = build_problem(cournot, ALTERNATIVE, lipschitz=rep.lipschitz)
    else:
        rep = run_algorithm2(cournot, ring(5), SolveConfig(epsilon=eps))
        prob = build_problem(cournot, DISTRIBUTED, graph=ring(5), lipschitz=rep.lipschitz)
    assert rep.status == CONVERGED
    assert rep.last_residual <= eps
    nxt, _ = bforb_step(prob, rep.spec, rep.gamma, rep.omega, rep.final_iterate.cached_forward)
    assert np.max(np.abs(nxt - rep.omega)) <= 2 * eps


# ---------------------------------------------------------------------------
# Lyapunov quantity


def test_lyapunov_zero_at_solution(pennies):
    prob = build_problem(pennies, SEMI_DECENTRALIZED)
    w = np.full(4, 0.5)
    B = prob.forward(w)
    spec = default_spec(prob)
    assert lyapunov_diagnostic(spec, _gamma(prob, 0.2), w, w, w, B, B) == 0.0


def test_lyapunov_along_pennies_run(pennies):
    star = np.full(4, 0.5)
    rep = run_algorithm1(pennies, SolveConfig(epsilon=1e-8, omega0=[0.9, 0.1, 0.2, 0.8], omega_star=star))
    v = rep.lyapunov_trace
    assert len(v) == rep.iterations
    assert np.all(np.diff(v) <= 1e-9)
    assert np.all(v >= -1e-12)


def test_lyapunov_on_euclidean_cournot(cournot):
    ref = run_algorithm1(cournot, SolveConfig(epsilon=1e-11, regularizer="euclidean", max_iters=200_000))
    rep = run_algorithm1(cournot, SolveConfig(epsilon=1e-8, regularizer="euclidean", omega_star=ref.omega))
    assert np.all(np.diff(rep.lyapunov_trace) <= 1e-9)
    assert np.all(rep.lyapunov_trace >= -1e-9)


# ---------------------------------------------------------------------------
# trace output


def test_trace_csv(tmp_path, pennies):
    rep = run_algorithm1(pennies, SolveConfig(epsilon=1e-4, omega0=[0.9, 0.1, 0.3, 0.7], trace_every=5,
                                              omega_star=np.full(4, 0.5)))
    p = tmp_path / "t.csv"
    rep.write_trace(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "iter,residual_inf,coupling_violation,local_violation,lyapunov"
    assert len(lines) == 1 + len(rep.residual_trace)
    iters = [int(line.split(",")[0]) for line in lines[1:]]
    assert all(k % 5 == 0 for k in iters[:-1]) and iters[-1] == rep.iterations
    last = lines[-1].split(",")
    assert float(last[1]) == rep.residual_trace[-1, 1]
    assert float(last[4]) == rep.lyapunov_trace[-1]


def test_trace_without_lyapunov(tmp_path, pennies):
    rep = run_algorithm1(pennies, SolveConfig(epsilon=1e-3))
    p = tmp_path / "t.csv"
    rep.write_trace(p)
    assert p.read_text().splitlines()[0] == "iter,residual_inf,coupling_violation,local_violation"
