import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import minimize

from msgne.errors import ConfigurationError, DomainError, ProjectionError
from msgne.regularizers import (
    EUCLIDEAN, GIBBS_SHANNON, Box, BoxHalfspace, Halfspace, NonNegative, Polytope, Product,
    RegularizerSpec, Simplex, backward_step, bregman_distance, legendre_gradient, legendre_value,
    mirror_step_segments, mirror_step_simplex, project_euclidean, project_polytope, project_simplex,
)

finite = st.floats(-50, 50, allow_nan=False)


def _positive_simplex(draw_vec):
    w = np.abs(draw_vec) + 1e-3
    return w / w.sum()


# ---------------------------------------------------------------------------
# Bregman distances


def test_bregman_entropy_self_distance():
    spec = RegularizerSpec.entropy(2)
    assert bregman_distance(spec, [0.3, 0.7], [0.3, 0.7]) == pytest.approx(0.0, abs=1e-15)


def test_bregman_entropy_vertex_to_center():
    spec = RegularizerSpec.entropy(2)
    # x ln(x/y) summed, with 0 ln 0 = 0: ln(1/0.5)
    assert bregman_distance(spec, [1.0, 0.0], [0.5, 0.5]) == pytest.approx(np.log(2), abs=1e-15)
    # numeric cross-check from the definition with the values and gradient
    x, y = np.array([1.0, 0.0]), np.array([0.5, 0.5])
    direct = legendre_value(spec, x) - legendre_value(spec, y) - legendre_gradient(spec, y) @ (x - y)
    assert direct == pytest.approx(0.693147, abs=1e-6)


def test_bregman_euclidean():
    spec = RegularizerSpec.euclidean(2)
    assert bregman_distance(spec, [1.0, 2.0], [0.0, 0.0]) == 2.5


def test_bregman_domain_errors():
    spec = RegularizerSpec.entropy(2)
    with pytest.raises(DomainError):
        bregman_distance(spec, [-0.1, 1.1], [0.5, 0.5])
    with pytest.raises(DomainError):
        bregman_distance(spec, [0.5, 0.5], [1.0, 0.0])


@settings(max_examples=200, deadline=None)
@given(arrays(float, 5, elements=st.floats(0, 1)), arrays(float, 5, elements=st.floats(0, 1)),
       arrays(float, 3, elements=finite), arrays(float, 3, elements=finite))
def test_bregman_strong_convexity(a, b, u, v):
    spec = RegularizerSpec(((GIBBS_SHANNON, 5), (EUCLIDEAN, 3)))
    x = np.concatenate([_positive_simplex(a), u])
    y = np.concatenate([_positive_simplex(b), v])
    d = bregman_distance(spec, x, y)
    assert d >= 0.5 * spec.strong_convexity_modulus * np.sum((x - y) ** 2) - 1e-12


def test_legendre_gradient_finite_differences():
    rng = np.random.default_rng(1)
    spec = RegularizerSpec(((GIBBS_SHANNON, 4), (EUCLIDEAN, 3)))
    h = 1e-6
    for _ in range(20):
        x = np.concatenate([rng.uniform(0.1, 1.0, 4), rng.normal(size=3)])
        g = legendre_gradient(spec, x)
        for j in range(len(x)):
            e = np.zeros_like(x)
            e[j] = h
            fd = (legendre_value(spec, x + e) - legendre_value(spec, x - e)) / (2 * h)
            assert abs(fd - g[j]) <= 1e-6 * max(1.0, abs(g[j]))


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        RegularizerSpec((("quadratic", 2),))
    with pytest.raises(ConfigurationError):
        RegularizerSpec(((GIBBS_SHANNON, 0),))
    with pytest.raises(ConfigurationError):
        RegularizerSpec(((EUCLIDEAN, 2),), strong_convexity_modulus=0.0)


# ---------------------------------------------------------------------------
# mirror steps


def test_mirror_zero_direction():
    np.testing.assert_array_equal(mirror_step_simplex([0.5, 0.5], [0.0, 0.0], 0.1), [0.5, 0.5])


def test_mirror_ratio_three_to_one():
    out = mirror_step_simplex([0.5, 0.5], [-np.log(3.0), 0.0], 1.0)
    np.testing.assert_allclose(out, [0.75, 0.25], atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(arrays(float, 6, elements=st.floats(0, 1)), arrays(float, 6, elements=finite),
       st.floats(-1e3, 1e3), st.floats(1e-3, 5.0))
def test_mirror_shift_invariance(a, d, c, gamma):
    x = _positive_simplex(a)
    np.testing.assert_allclose(mirror_step_simplex(x, d, gamma), mirror_step_simplex(x, d + c, gamma),
                               rtol=1e-9, atol=1e-300)


def test_mirror_rejects_boundary_point():
    with pytest.raises(DomainError):
        mirror_step_simplex([1.0, 0.0], [0.0, 0.0], 0.1)
    with pytest.raises(DomainError):
        mirror_step_simplex([0.5, 0.5], [np.inf, 0.0], 0.1)
    with pytest.raises(ConfigurationError):
        mirror_step_simplex([0.5, 0.5], [0.0, 0.0], 0.0)


def test_mirror_large_steps_stay_finite_and_interior():
    x = np.array([0.2, 0.3, 0.5])
    out = mirror_step_simplex(x, np.array([700.0, -700.0, 0.0]), 1.0)
    assert np.all(np.isfinite(out)) and np.all(out > 0)
    assert abs(out.sum() - 1.0) <= 1e-12


def test_mirror_segments_match_single_blocks():
    rng = np.random.default_rng(3)
    sizes = [2, 3, 4]
    starts = np.cumsum([0] + sizes[:-1])
    x = np.concatenate([rng.dirichlet(np.ones(m)) for m in sizes])
    d = rng.normal(size=len(x)) * 10
    gam = np.repeat([0.1, 0.2, 0.3], sizes)
    out = mirror_step_segments(x, d, gam, starts)
    for s, m, g in zip(starts, sizes, [0.1, 0.2, 0.3]):
        np.testing.assert_allclose(out[s:s + m], mirror_step_simplex(x[s:s + m], d[s:s + m], g), rtol=1e-13)


def test_backward_step_dispatch():
    x = np.array([0.25, 0.75])
    d = np.array([1.0, -1.0])
    np.testing.assert_allclose(backward_step(GIBBS_SHANNON, Simplex(2), x, d, 0.5),
                               mirror_step_simplex(x, d, 0.5))
    np.testing.assert_allclose(backward_step(EUCLIDEAN, Simplex(2), x, d, 0.5), project_simplex(x - 0.5 * d),
                               atol=1e-12)
    with pytest.raises(ConfigurationError):
        backward_step(GIBBS_SHANNON, Box([0, 0], [1, 1]), x, d, 0.5)


# ---------------------------------------------------------------------------
# projections


def test_project_nonnegative():
    np.testing.assert_array_equal(project_euclidean(NonNegative(2), [-1.0, 2.0]), [0.0, 2.0])


def test_project_simplex_against_grid():
    got = project_euclidean(Simplex(2), [2.0, 0.0])
    np.testing.assert_array_equal(got, [1.0, 0.0])
    # brute force over the simplex at resolution 1e-3
    rng = np.random.default_rng(0)
    p = np.arange(1001) / 1000
    grid = np.column_stack([p, 1 - p])
    for _ in range(20):
        v = rng.normal(size=2) * 2
        best = grid[np.argmin(np.sum((grid - v) ** 2, axis=1))]
        assert np.max(np.abs(project_simplex(v) - best)) <= 1e-3


def test_project_halfspace():
    np.testing.assert_allclose(project_euclidean(Halfspace([1.0], 5.0), [3.0]), [5.0])


def test_project_empty_box_rejected():
    with pytest.raises(ConfigurationError):
        Box([1.0, 0.0], [0.0, 1.0])


def _qp_oracle(v, cons, bounds):
    lo = [-np.inf if b[0] is None else b[0] for b in bounds]
    hi = [np.inf if b[1] is None else b[1] for b in bounds]
    res = minimize(lambda z: 0.5 * np.sum((z - v) ** 2), np.clip(v, lo, hi),
                   jac=lambda z: z - v, constraints=cons, bounds=bounds, method="SLSQP",
                   options={"ftol": 1e-14, "maxiter": 1000})
    return res.x


def test_box_halfspace_against_qp():
    rng = np.random.default_rng(5)
    s = BoxHalfspace(np.zeros(4), np.full(4, 0.5), np.ones(4), 1.2)
    for _ in range(30):
        v = rng.normal(size=4)
        got = project_euclidean(s, v)
        ref = _qp_oracle(v, [{"type": "ineq", "fun": lambda z: z.sum() - 1.2, "jac": lambda z: np.ones(4)}],
                         [(0, 0.5)] * 4)
        assert s.contains(got, 1e-12)
        np.testing.assert_allclose(got, ref, atol=1e-6)


SETS = [
    NonNegative(3),
    Box(np.array([-1.0, 0.0, 2.0]), np.array([1.0, 0.5, 3.0])),
    Halfspace(np.array([1.0, -2.0, 0.5]), 0.3),
    Simplex(3),
    BoxHalfspace(np.zeros(3), np.ones(3), np.array([1.0, 1.0, 1.0]), 1.5),
    Product((Simplex(2), Box(np.array([0.0]), np.array([2.0])))),
]


@pytest.mark.parametrize("s", SETS, ids=lambda s: type(s).__name__)
def test_projection_idempotent_and_nonexpansive(s):
    rng = np.random.default_rng(11)
    for _ in range(1000):
        u, v = rng.normal(size=3) * 3, rng.normal(size=3) * 3
        pu, pv = project_euclidean(s, u), project_euclidean(s, v)
        assert s.contains(pu, 1e-9)
        np.testing.assert_allclose(project_euclidean(s, pu), pu, atol=1e-12)
        assert np.linalg.norm(pu - pv) <= np.linalg.norm(u - v) + 1e-12


@settings(max_examples=100, deadline=None)
@given(arrays(float, 5, elements=finite))
def test_euclidean_backward_on_simplex_is_projection(v):
    out = backward_step(EUCLIDEAN, Simplex(5), np.full(5, 0.2), -v, 1.0)
    np.testing.assert_allclose(out, project_simplex(0.2 + v), atol=1e-12)


# ---------------------------------------------------------------------------
# Dykstra polytope projection


def test_polytope_feasible_point_fixed():
    A = np.array([[0.0, 1.0, -1.0]])
    v = np.array([0.4, 0.6, 1.0])
    got = project_polytope((A, [0.0]), ([0, 0, 0], [1, 1, 3]), [(0, 2)], v)
    np.testing.assert_allclose(got, v, atol=1e-12)


def test_polytope_dsm_shaped_against_qp():
    # Delta^2 x [0, 3] with x_2 - y <= 0
    A = np.array([[0.0, 1.0, -1.0]])
    v = np.array([0.5, 0.5, -1.0])
    got = project_polytope((A, [0.0]), ([-np.inf, -np.inf, 0.0], [np.inf, np.inf, 3.0]), [(0, 2)], v)
    assert abs(got[:2].sum() - 1) <= 1e-8 and np.all(got >= -1e-8)
    assert got[1] - got[2] <= 1e-8 and 0 <= got[2] <= 3
    cons = [{"type": "eq", "fun": lambda z: z[0] + z[1] - 1},
            {"type": "ineq", "fun": lambda z: z[2] - z[1]}]
    ref = _qp_oracle(v, cons, [(0, None), (0, None), (0, 3)])
    np.testing.assert_allclose(got, ref, atol=1e-6)
    # by hand: with y = b the objective (a-.5)^2 + (b-.5)^2 + (b+1)^2 on a + b = 1
    # has zero slope at b = 0, so the vertex (1, 0, 0) is optimal
    np.testing.assert_allclose(got, [1.0, 0.0, 0.0], atol=1e-8)


def test_polytope_pure_box_matches_box():
    rng = np.random.default_rng(2)
    lo, up = np.array([-1.0, 0.0, 0.5]), np.array([1.0, 2.0, 0.7])
    for _ in range(50):
        v = rng.normal(size=3) * 3
        got = project_polytope(None, (lo, up), [], v)
        np.testing.assert_allclose(got, project_euclidean(Box(lo, up), v), atol=1e-12)


def test_polytope_random_against_qp():
    rng = np.random.default_rng(7)
    for _ in range(10):
        A = rng.normal(size=(3, 4))
        z0 = rng.dirichlet(np.ones(2)).tolist() + rng.uniform(0, 1, 2).tolist()
        b = A @ np.array(z0) + rng.uniform(0.0, 0.3, 3)
        v = rng.normal(size=4) * 2
        got = project_polytope((A, b), ([0, 0, 0, 0], [1, 1, 1, 1]), [(0, 2)], v)
        cons = [{"type": "eq", "fun": lambda z: z[0] + z[1] - 1},
                {"type": "ineq", "fun": lambda z, A=A, b=b: b - A @ z}]
        ref = _qp_oracle(v, cons, [(0, 1)] * 4)
        np.testing.assert_allclose(got, ref, atol=1e-5)
        poly = Polytope(A, b, np.zeros(4), np.ones(4), ((0, 2),))
        assert poly.contains(got, 1e-8)


def test_polytope_nonconvergence_reported():
    # a narrow wedge makes Dykstra crawl towards its apex (650 sweeps at tol 1e-12)
    A = np.array([[1.0, 0.1], [-1.0, 0.1]])
    with pytest.raises(ProjectionError) as err:
        project_polytope((A, [0.0, 0.0]), None, [], np.array([0.0, 1.0]), tol=1e-12, max_iter=30)
    assert err.value.residual > 0 and err.value.iterations == 30
    np.testing.assert_allclose(project_polytope((A, [0.0, 0.0]), None, [], np.array([0.0, 1.0]), tol=1e-12),
                               [0.0, 0.0], atol=1e-10)


def test_polytope_bad_tolerance():
    with pytest.raises(ConfigurationError):
        project_polytope(None, None, [], np.zeros(2), tol=0.0)
