"""Seeded benchmark games: matching pennies, demand-side management,
networked Cournot competition, discrete-flow control and a piecewise-affine
demo.

Every generator draws all its randomness from ``numpy.random.default_rng(seed)``
so equal arguments give equal games.
"""

import numpy as np

from .errors import ConfigurationError
from .game_model import (
    AffineMap, AgentSpec, GmiGame, PwaAgent, PwaGameSpec, SmoothIntegerCost, TensorCost,
    enumerate_actions, lift_integer_cost, reformulate_pwa,
)
from .regularizers import BoxHalfspace, Product

MAX_AGENTS = 30
MAX_SLOTS = 24
MAX_MARKETS = 10

PENNIES = np.array([[1.0, -1.0], [-1.0, 1.0]])


def _check(name, value, lo, hi):
    if not lo <= value <= hi:
        raise ConfigurationError(f"{name}={value} outside [{lo}, {hi}]")


def matching_pennies():
    """Two players, two actions; player 1 pays ``M[a1, a2]``, player 2 receives it."""
    acts = np.array([[0], [1]])
    return GmiGame(
        agents=[
            AgentSpec(actions=acts, discrete_cost=TensorCost(PENNIES), name="row"),
            AgentSpec(actions=acts, discrete_cost=TensorCost(-PENNIES), name="column"),
        ],
        name="matching_pennies",
        metadata={"generator": "matching_pennies"},
    )


# ---------------------------------------------------------------------------
# demand-side management


def household_profile(rng, T, base=(0.2, 0.4), morning=(0.5, 1.0), evening=(0.8, 1.6)):
    """Synthetic bimodal daily inflexible load in kW, sampled at ``T`` slots."""
    h = (np.arange(T) + 0.5) * 24.0 / T
    b = rng.uniform(*base)
    am, pm = rng.uniform(*morning), rng.uniform(*evening)
    tm, te = rng.uniform(7.0, 9.0), rng.uniform(18.5, 20.5)
    return b + am * np.exp(-0.5 * ((h - tm) / 1.5) ** 2) + pm * np.exp(-0.5 * ((h - te) / 2.0) ** 2)


def make_dsm_instance(seed, N=10, T=24, devices_per_agent=1, r=0.1, grid=(0.0, 24.0), peak_share=1 / 3):
    """Demand-side management game with on/off flexible devices.

    Quantities are in kW (per slot). Device ``j`` of agent ``i`` has a
    minimum energy ``E`` drawn in [0.16, 1.0] kWh and scaled by ``T/24``,
    an on-state range ``[y_lo, y_hi]`` with ``y_lo`` in [0.001, 0.018] and
    ``y_hi`` in [0.03, 0.18], and one on/off decision per slot. The price
    per unit at slot ``t`` is ``r * (total load at t)`` and the grid keeps
    the total load within ``grid``. ``E`` is capped at 60% of what the
    device can draw off peak, which keeps the instance feasible without
    peak consumption.

    Variables of agent ``i`` are ordered device by device, slot by slot;
    ``metadata["peak_slots"]`` lists the ``peak_share`` fraction of slots
    with the largest aggregate inflexible load.
    """
    _check("N", N, 1, MAX_AGENTS)
    _check("T", T, 1, MAX_SLOTS)
    _check("devices_per_agent", devices_per_agent, 1, 4)
    rng = np.random.default_rng(seed)
    D = devices_per_agent
    P = np.array([household_profile(rng, T) for _ in range(N)])
    total = P.sum(axis=0)
    n_peak = max(1, int(round(peak_share * T))) if T > 1 else 0
    peak = np.sort(np.argsort(-total, kind="stable")[:n_peak])
    n_off = T - len(peak)
    E = rng.uniform(0.16, 1.0, size=(N, D)) * T / 24.0
    y_lo = rng.uniform(0.001, 0.018, size=(N, D))
    y_hi = rng.uniform(0.03, 0.18, size=(N, D))
    E = np.minimum(E, 0.6 * max(n_off, 1) * y_hi)
    rt = np.full(T, float(r))
    p_lo, p_hi = grid

    onoff = np.array([[0], [1]])
    agents = []
    sums = []
    for i in range(N):
        k = D * T
        Gd = np.zeros((2 * k, 2 * k))
        Gc = np.zeros((2 * k, k))
        for j in range(D):
            for t in range(T):
                b = j * T + t
                Gd[2 * b, 2 * b + 1] = y_lo[i, j]
                Gd[2 * b + 1, 2 * b + 1] = -y_hi[i, j]
                Gc[2 * b, b] = -1.0
                Gc[2 * b + 1, b] = 1.0
        C = np.tile(np.eye(T), D)          # slot sums of the agent's devices
        sums.append(C)
        Y = Product(tuple(
            BoxHalfspace(np.zeros(T), np.full(T, y_hi[i, j]), np.ones(T), E[i, j]) for j in range(D)
        ))
        agents.append(AgentSpec(
            actions=[onoff] * k,
            continuous_set=Y,
            local_discrete=Gd,
            local_continuous=AffineMap(Gc),
            theta=np.zeros(2 * k),
            coupling_continuous=AffineMap(np.vstack([C, -C])),
            name=f"household{i}",
        ))
    Call = np.hstack(sums)
    Q = Call.T @ (rt[:, None] * Call)
    Q += _block_diag([S.T @ (rt[:, None] * S) for S in sums])
    q = Call.T @ (rt * total)
    rho = np.concatenate([p_hi - total, total - p_lo])
    return GmiGame(
        agents=agents,
        rho=rho,
        continuous_affine=(Q, q),
        name="dsm",
        metadata={
            "generator": "dsm", "seed": seed, "N": N, "T": T, "devices_per_agent": D,
            "unit": "kW", "peak_slots": peak.tolist(), "inflexible": P.tolist(),
            "energy": E.tolist(), "y_lo": y_lo.tolist(), "y_hi": y_hi.tolist(), "r": rt.tolist(),
        },
    )


def _block_diag(mats):
    rows = sum(m.shape[0] for m in mats)
    cols = sum(m.shape[1] for m in mats)
    out = np.zeros((rows, cols))
    r = c = 0
    for m in mats:
        out[r:r + m.shape[0], c:c + m.shape[1]] = m
        r += m.shape[0]
        c += m.shape[1]
    return out


def dsm_price(game, y):
    """Per-unit price ``r_t * total load`` at every slot."""
    md = game.metadata
    N, T, D = md["N"], md["T"], md["devices_per_agent"]
    flex = np.asarray(y).reshape(N, D, T).sum(axis=(0, 1))
    return np.asarray(md["r"]) * (np.asarray(md["inflexible"]).sum(axis=0) + flex)


def dsm_on_probability(game, x):
    """On-probabilities as an ``(N, devices, T)`` array."""
    md = game.metadata
    return np.asarray(x).reshape(md["N"], md["devices_per_agent"], md["T"], 2)[..., 1]


# ---------------------------------------------------------------------------
# networked Cournot


def make_cournot_instance(seed, N=5, M=4, max_markets=None):
    """Networked Cournot game with market-participation decisions.

    Firm ``i`` picks participation ``z_i in {0,1}^M`` with at most
    ``nu_i`` markets (``nu_i`` uniform on ``1..M`` unless ``max_markets``
    fixes it) and supplies ``y_i >= 0`` with ``sum(y_i) <= y_cap_i``. In
    expectation ``y_min * P(z^nu = 1) <= y^nu <= y_cap_i * P(z^nu = 1)``.
    Markets have capacities ``Y_cap`` and the cost is
    ``c_i(y_i) + y_i' D y_i - P' y_i + sum_{j != i} y_j' D y_i`` with
    ``c_i(y) = q_i |y|^2 / 2 + c_i' y``.

    Parameter rule: ``q_i ~ U[1, 8]``, ``c_i ~ U[1, 3]^M``,
    ``d ~ U[0.5, 1]``, ``P ~ U[10, 15]``, ``Y_cap ~ U[2, 4]``,
    ``y_min ~ U[0.05, 0.1]`` and ``y_cap_i ~ U[8, 12]``. Supplies start at
    the midpoint of the expected-participation rows under uniform
    strategies.
    """
    _check("N", N, 1, MAX_AGENTS)
    _check("M", M, 1, MAX_MARKETS)
    rng = np.random.default_rng(seed)
    q = rng.uniform(1.0, 8.0, size=N)
    c = rng.uniform(1.0, 3.0, size=(N, M))
    d = rng.uniform(0.5, 1.0, size=M)
    price = rng.uniform(10.0, 15.0, size=M)
    cap = rng.uniform(2.0, 4.0, size=M)
    y_min = rng.uniform(0.05, 0.1, size=M)
    y_cap = rng.uniform(8.0, 12.0, size=N)
    if max_markets is None:
        nu = rng.integers(1, M + 1, size=N)
    else:
        _check("max_markets", max_markets, 1, M)
        nu = np.full(N, int(max_markets))
    agents = []
    for i in range(N):
        acts = enumerate_actions(M, membership=lambda a, k=nu[i]: a.sum() <= k)
        A = acts.T.astype(float)
        Gd = np.vstack([y_min[:, None] * A, -y_cap[i] * A])
        Gc = np.vstack([-np.eye(M), np.eye(M)])
        p = A.mean(axis=1)
        y0 = 0.5 * (y_min + y_cap[i]) * p
        y0 *= min(1.0, 0.5 * y_cap[i] / y0.sum())
        y0 = np.maximum(y0, y_min * p)
        agents.append(AgentSpec(
            actions=acts,
            continuous_set=BoxHalfspace(np.zeros(M), np.full(M, y_cap[i]), -np.ones(M), -y_cap[i]),
            local_discrete=Gd,
            local_continuous=AffineMap(Gc),
            theta=np.zeros(2 * M),
            coupling_continuous=AffineMap(np.eye(M)),
            initial_continuous=y0,
            name=f"firm{i}",
        ))
    Dm = np.diag(d)
    Q = np.kron(np.diag(q), np.eye(M)) + np.kron(np.eye(N) + np.ones((N, N)), Dm)
    lin = (c - price[None, :]).ravel()
    return GmiGame(
        agents=agents,
        rho=cap,
        continuous_affine=(Q, lin),
        name="cournot",
        metadata={
            "generator": "cournot", "seed": seed, "N": N, "M": M, "q": q.tolist(),
            "max_markets": nu.tolist(), "y_min": y_min.tolist(), "y_cap": y_cap.tolist(),
            "market_capacity": cap.tolist(),
        },
    )


def cournot_cost(game, i, y):
    """``J_i^c(y)`` of a Cournot instance (used by finite-difference checks)."""
    Q, lin = game.continuous_affine
    M = game.metadata["M"]
    s = slice(i * M, (i + 1) * M)
    # J_i = 1/2 y_i' Q_ii y_i + y_i' (Q_i,-i y_-i + lin_i), with Q_ii = (q_i I + 2D)
    yi = y[s]
    Qii = Q[s, s]
    rest = Q[s] @ y - Qii @ yi
    return 0.5 * yi @ Qii @ yi + yi @ (rest + lin[s])


# ---------------------------------------------------------------------------
# discrete-flow control


def make_flow_integer_game(seed, N=10, L=6, max_flow=3, path_len=(1, 3), margin=3.0, normalize=True):
    """Integer flow-control game before the lift.

    Agent ``i`` sends an integer flow ``a_i in {0..a_max_i}`` over a random
    set of links ``P_i``. Its cost is the congestion term
    ``sum_{l in P_i} q_l / (b_l + rho_l - sum_{j: l in P_j} a_j)`` minus the
    throughput utility ``d_i ln(e_i (1 + a_i))``; link loads must stay
    within the capacities ``rho``. The offsets ``b_l`` keep every
    denominator at least ``margin`` over the whole action box, which
    bounds the Lipschitz constant of the congestion gradient by
    ``2 max(q) |H|^2 / margin^3``. With ``normalize`` the capacity rows
    are divided by the capacities (link utilization at most one).
    """
    _check("N", N, 1, MAX_AGENTS)
    _check("L", L, 1, 60)
    rng = np.random.default_rng(seed)
    a_max = rng.integers(2, max_flow + 1, size=N)
    H = np.zeros((L, N))
    for i in range(N):
        k = int(rng.integers(path_len[0], min(path_len[1], L) + 1))
        H[rng.choice(L, size=k, replace=False), i] = 1.0
    load_max = H @ a_max
    rho = np.maximum(1.0, np.floor(rng.uniform(0.4, 0.7, size=L) * load_max))
    b = load_max - rho + margin
    qs = rng.uniform(1.0, 2.0, size=L)
    d = rng.uniform(1.0, 2.0, size=N)
    e = rng.uniform(1.0, 2.0, size=N)

    def denom(v):
        return b + rho - H @ v

    def congestion_grad(v):
        return H.T @ (qs / denom(v) ** 2)

    agents = []
    for i in range(N):
        acts = np.arange(a_max[i] + 1).reshape(-1, 1)
        own = -d[i] * np.log(e[i] * (1.0 + acts[:, 0]))

        def partial(v, i=i):
            return congestion_grad(v)[i]

        def value(v, i=i):
            return float(H[:, i] @ (qs / denom(v)))

        agents.append(AgentSpec(
            actions=acts,
            coupling_discrete=np.outer(H[:, i] / (rho if normalize else 1.0), acts[:, 0]),
            discrete_cost=SmoothIntegerCost(partial=partial, value=value, own=own),
            name=f"flow{i}",
        ))
    norm = np.linalg.norm(H, 2)
    return GmiGame(
        agents=agents,
        rho=np.ones(L) if normalize else rho,
        continuous_pseudogradient=congestion_grad,
        lipschitz_hint={"Fc": float(2.0 * qs.max() * norm**2 / margin**3)},
        name="flow",
        metadata={
            "generator": "flow", "seed": seed, "N": N, "L": L, "links": H.tolist(),
            "max_flow": a_max.tolist(), "capacity": rho.tolist(), "q": qs.tolist(), "b": b.tolist(),
            "d": d.tolist(), "e": e.tolist(),
        },
    )


def make_flow_instance(seed, N=10, L=6, max_flow=3, **kw):
    """Lifted flow-control game (congestion cost on a continuous copy of the flow)."""
    game = make_flow_integer_game(seed, N, L, max_flow, **kw)
    return lift_integer_cost(game, pseudogradient=game.continuous_pseudogradient)


# ---------------------------------------------------------------------------
# piecewise-affine games


def random_pwa_agent(rng, p, lower=0.0, upper=4.0, epsilon=1e-9):
    """Continuous piecewise-affine cost on ``[lower, upper]`` with ``p`` pieces."""
    cuts = np.sort(rng.uniform(lower, upper, size=p - 1))
    if np.any(np.diff(np.r_[lower, cuts, upper]) < 0.05):
        cuts = lower + (upper - lower) * np.arange(1, p) / p
    ends = np.r_[lower, cuts, upper]
    regions = [(ends[0] if j == 0 else ends[j] + epsilon, ends[j + 1]) for j in range(p)]
    slopes = rng.uniform(-2.0, 2.0, size=p)
    intercepts = np.zeros(p)
    intercepts[0] = rng.uniform(-1.0, 1.0)
    for j in range(1, p):
        t = ends[j]
        intercepts[j] = slopes[j - 1] * t + intercepts[j - 1] - slopes[j] * t
    return PwaAgent(lower, upper, regions, slopes, intercepts)


def make_pwa_spec(seed, N=2, p_max=4, epsilon=1e-9):
    """Random game with piecewise-affine own costs and a quadratic coupling.

    The smooth part has pseudogradient ``(diag(s) + kappa (11' - I)) y``
    with ``s ~ U[1, 2]`` and ``kappa = 0.2 min(s) / N``, which is
    positive definite. The agents share ``sum_i y_i <= rho``.
    """
    _check("N", N, 1, MAX_AGENTS)
    _check("p_max", p_max, 1, 4)
    rng = np.random.default_rng(seed)
    agents = [random_pwa_agent(rng, int(rng.integers(1, p_max + 1)), epsilon=epsilon) for _ in range(N)]
    s = rng.uniform(1.0, 2.0, size=N)
    kappa = 0.2 * s.min() / N
    Q = np.diag(s) + kappa * (np.ones((N, N)) - np.eye(N))

    def grad(y):
        return Q @ y

    rho = np.array([rng.uniform(1.0, 2.0) * N])
    return PwaGameSpec(
        agents=agents,
        continuous_pseudogradient=grad,
        coupling=[np.ones(1) for _ in range(N)],
        rho=rho,
        epsilon=epsilon,
        lipschitz_hint={"Fc": float(max(np.linalg.norm(Q, 2), 1.0))},
    )


def make_pwa_instance(seed, N=2, p_max=4, epsilon=1e-9):
    return reformulate_pwa(make_pwa_spec(seed, N, p_max, epsilon))


def pwa_demo():
    """Two agents with two-piece costs on ``[0, 2]``."""
    eps = 1e-9
    a = PwaAgent(0.0, 2.0, [(0.0, 1.0), (1.0 + eps, 2.0)], [1.0, -0.5], [0.0, 1.5])
    b = PwaAgent(0.0, 2.0, [(0.0, 1.0), (1.0 + eps, 2.0)], [-1.0, 1.0], [1.0, -1.0])
    Q = np.array([[1.0, 0.1], [0.1, 1.0]])
    spec = PwaGameSpec(
        agents=[a, b],
        continuous_pseudogradient=lambda y: Q @ y,
        coupling=[np.ones(1), np.ones(1)],
        rho=np.array([3.0]),
        epsilon=eps,
        lipschitz_hint={"Fc": 1.1},
    )
    return reformulate_pwa(spec)


GENERATORS = {
    "matching_pennies": lambda seed=0: matching_pennies(),
    "dsm": make_dsm_instance,
    "cournot": make_cournot_instance,
    "flow": make_flow_instance,
    "pwa_demo": lambda seed=0: pwa_demo(),
    "pwa": make_pwa_instance,
}
