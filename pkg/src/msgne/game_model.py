"""Generalized mixed-integer games and their mixed-strategy extension.

A game is a list of :class:`AgentSpec` plus a shared coupling bound
``rho``. Agent ``i`` picks an integer action from a finite set (or one
action per independent discrete block) and a continuous vector ``y_i``.
In the mixed extension the integer choice becomes a probability vector
``x_i`` and every constraint involving integer actions is required in
expectation only, which turns ``g_i^d(a_i)`` into ``G_i^d x_i`` with the
``j``-th column of ``G_i^d`` equal to ``g_i^d(a_i^j)``.

:func:`compile` stacks all agent data into an :class:`MsGnep`, the object
consumed by the operator and solver modules.
"""

from dataclasses import dataclass, field
import itertools
from typing import Callable

import numpy as np

from .errors import ConfigurationError
from .regularizers import Box, Free

MAX_ACTIONS = 10**6
MAX_TENSOR_AGENTS = 4


# ---------------------------------------------------------------------------
# cost specifications


@dataclass(frozen=True, eq=False)
class ZeroCost:
    """No cost on the integer block."""


@dataclass(frozen=True, eq=False)
class TensorCost:
    """Full table of ``J_i^d`` over joint actions, shape ``(m_1, ..., m_N)``."""

    table: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "table", np.asarray(self.table, dtype=float))


@dataclass(frozen=True, eq=False)
class LinearCoupledCost:
    """Cost ``pi_i(a_i) + sum_{j != i} <M_ij a_j, a_i>``.

    Parameters
    ----------
    own : array_like
        Own-action cost per action of agent ``i`` (length ``m_i``). Any
        own quadratic term ``<M_ii a_i, a_i>`` belongs here.
    coupling : dict
        Maps an opponent index ``j`` to the block ``M_ij`` of shape
        ``(p_i, p_j)``.
    """

    own: np.ndarray
    coupling: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "own", np.asarray(self.own, dtype=float).ravel())
        object.__setattr__(
            self, "coupling",
            {int(j): np.atleast_2d(np.asarray(m, dtype=float)) for j, m in self.coupling.items()},
        )


@dataclass(frozen=True, eq=False)
class SmoothIntegerCost:
    """Integer cost with a differentiable continuous extension.

    Only meaningful as input to :func:`lift_integer_cost`, which moves the
    coupled part onto an auxiliary continuous variable.

    Parameters
    ----------
    partial : callable
        ``partial(v)`` returns ``dJ_i/dv_i`` at the vector ``v`` of all
        agents' (scalar) actions.
    value : callable, optional
        ``value(v)`` returns ``J_i(v)``.
    own : array_like, optional
        Per-action cost depending on the agent's own action only. It stays
        on the integer block, where its expectation is linear.
    """

    partial: Callable
    value: Callable | None = None
    own: np.ndarray | None = None


# ---------------------------------------------------------------------------
# constraint maps


@dataclass(frozen=True, eq=False)
class AffineMap:
    """``y -> matrix @ y + offset``."""

    matrix: np.ndarray
    offset: np.ndarray | None = None

    def __post_init__(self):
        mat = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        off = np.zeros(mat.shape[0]) if self.offset is None else np.asarray(self.offset, dtype=float).ravel()
        if off.shape != (mat.shape[0],):
            raise ConfigurationError("affine offset does not match the matrix rows")
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "offset", off)

    @property
    def out_dim(self):
        return self.matrix.shape[0]

    def __call__(self, y):
        return self.matrix @ y + self.offset

    def jacobian(self, y):
        return self.matrix


@dataclass(frozen=True, eq=False)
class SmoothMap:
    """Nonlinear constraint map with its Jacobian.

    ``lipschitz`` optionally bounds the Lipschitz constant of the
    Jacobian-transpose coupling; it is required by step-size selection.
    """

    fun: Callable
    jac: Callable
    out_dim: int
    lipschitz: float | None = None

    def __call__(self, y):
        return np.asarray(self.fun(y), dtype=float)

    def jacobian(self, y):
        return np.atleast_2d(np.asarray(self.jac(y), dtype=float))


def _as_map(obj, rows, n):
    if obj is None:
        return AffineMap(np.zeros((rows, n)))
    if isinstance(obj, (AffineMap, SmoothMap)):
        return obj
    return AffineMap(np.asarray(obj, dtype=float).reshape(rows, n))


# ---------------------------------------------------------------------------
# agents and games


def _action_blocks(actions):
    # a list of 2-D arrays declares several discrete blocks
    if isinstance(actions, (list, tuple)) and actions and all(np.ndim(b) == 2 for b in actions):
        blocks = actions
    else:
        blocks = [actions]
    out = []
    for blk in blocks:
        a = np.asarray(blk)
        if a.ndim == 1:
            a = a.reshape(-1, 1)
        if a.ndim != 2 or a.shape[0] < 1:
            raise ConfigurationError("an action set must be a nonempty list of integer vectors")
        if not np.all(a == np.round(a)):
            raise ConfigurationError("actions must be integer vectors")
        a = a.astype(np.int64)
        if len({tuple(r) for r in a}) != len(a):
            raise ConfigurationError("actions in a set must be distinct")
        out.append(a)
    return tuple(out)


@dataclass(eq=False)
class AgentSpec:
    """One agent of a generalized mixed-integer game.

    Parameters
    ----------
    actions : array_like or list of array_like
        Ordered action set, one integer vector per row. A list of such
        arrays declares independent discrete blocks whose mixed strategies
        are separate simplices (e.g. one on/off decision per time slot).
    continuous_set : set descriptor
        The set ``Y_i``; ``Free(0)`` when the agent has no continuous part.
    local_discrete : ndarray, callable or list of callables, optional
        ``G_i^d`` directly, or ``g_i^d`` evaluated on actions (one callable
        per discrete block; block contributions add up).
    local_continuous : AffineMap, SmoothMap or ndarray, optional
        ``g_i^c``.
    theta : array_like
        Local bound vector.
    coupling_discrete, coupling_continuous
        ``h_i^d`` and ``h_i^c``, as for the local maps.
    discrete_cost : cost specification
    continuous_gradient : callable, optional
        ``continuous_gradient(y)`` returns ``grad_{y_i} J_i^c`` at the
        stacked continuous profile ``y``.
    continuous_cost : callable, optional
        ``continuous_cost(y)`` returns ``J_i^c(y)``.
    initial_continuous : array_like, optional
        Starting value of ``y_i``; the center of ``Y_i`` when omitted.
    """

    actions: object
    continuous_set: object = None
    local_discrete: object = None
    local_continuous: object = None
    theta: object = None
    coupling_discrete: object = None
    coupling_continuous: object = None
    discrete_cost: object = None
    continuous_gradient: Callable | None = None
    continuous_cost: Callable | None = None
    initial_continuous: object = None
    name: str = ""

    def __post_init__(self):
        self.action_blocks = _action_blocks(self.actions)
        if self.continuous_set is None:
            self.continuous_set = Free(0)
        if self.discrete_cost is None:
            self.discrete_cost = ZeroCost()
        self.theta = np.zeros(0) if self.theta is None else np.atleast_1d(np.asarray(self.theta, dtype=float))
        if self.n > 0 and isinstance(self.continuous_set, Free):
            raise ConfigurationError("continuous sets must be bounded")

    @property
    def m(self):
        return sum(len(b) for b in self.action_blocks)

    @property
    def block_sizes(self):
        return [len(b) for b in self.action_blocks]

    @property
    def n(self):
        return self.continuous_set.dim

    @property
    def n_theta(self):
        return len(self.theta)

    @property
    def action_matrix(self):
        """Actions as columns, ``A_i = [a^1 ... a^m]`` (single-block agents)."""
        if len(self.action_blocks) != 1:
            raise ConfigurationError("action matrix is defined for single-block agents only")
        return self.action_blocks[0].T.astype(float)


@dataclass(eq=False)
class GmiGame:
    """A generalized mixed-integer game.

    Parameters
    ----------
    agents : list of AgentSpec
    rho : array_like
        Coupling bound vector.
    continuous_pseudogradient : callable, optional
        Vectorized ``y -> col(grad_{y_i} J_i^c)``; overrides the per-agent
        gradients when present.
    continuous_affine : tuple (Q, q), optional
        Declares ``Fc(y) = Q y + q`` exactly.
    lipschitz_hint : dict, optional
        Known constants, keys ``"Fd"`` and ``"Fc"``.
    metadata : dict, optional
        Free-form instance information (generator parameters, units).
    """

    agents: list
    rho: object = None
    continuous_pseudogradient: Callable | None = None
    continuous_affine: tuple | None = None
    lipschitz_hint: dict = field(default_factory=dict)
    name: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.agents:
            raise ConfigurationError("a game needs at least one agent")
        self.rho = np.zeros(0) if self.rho is None else np.atleast_1d(np.asarray(self.rho, dtype=float))
        if self.continuous_affine is not None:
            Q, q = self.continuous_affine
            Q = np.atleast_2d(np.asarray(Q, dtype=float))
            q = np.asarray(q, dtype=float).ravel()
            n = sum(a.n for a in self.agents)
            if Q.shape != (n, n) or q.shape != (n,):
                raise ConfigurationError("continuous affine pseudogradient has wrong dimensions")
            self.continuous_affine = (Q, q)

    @property
    def n_agents(self):
        return len(self.agents)

    @property
    def n_rho(self):
        return len(self.rho)


# ---------------------------------------------------------------------------
# actions, expected costs, relaxed constraints


def enumerate_actions(dim, membership=None, upper=1, limit=MAX_ACTIONS):
    """List the integer vectors of a box that satisfy a predicate.

    Parameters
    ----------
    dim : int
        Length of the action vectors.
    membership : callable, optional
        Predicate on an action vector; all box points are kept if omitted.
    upper : int or array_like
        Componentwise upper bound of the box ``{0, ..., upper}``; 1 gives
        binary vectors.
    limit : int
        Largest box volume accepted.

    Returns
    -------
    numpy.ndarray
        Actions as rows. The first component varies fastest, so ``{0,1}^3``
        is listed as 000, 100, 010, 110, 001, ...
    """
    if dim < 1:
        raise ConfigurationError("action dimension must be positive")
    upper = np.broadcast_to(np.asarray(upper, dtype=np.int64), (dim,))
    if np.any(upper < 0):
        raise ConfigurationError("action upper bounds must be nonnegative")
    count = int(np.prod([int(u) + 1 for u in upper], dtype=object))
    if count > limit:
        raise ConfigurationError(f"action box holds {count} points, above the cap of {limit}")
    out = []
    for t in itertools.product(*[range(int(u) + 1) for u in upper[::-1]]):
        a = np.array(t[::-1], dtype=np.int64)
        if membership is None or membership(a):
            out.append(a)
    if not out:
        raise ConfigurationError("no action satisfies the membership predicate")
    return np.array(out)


def expected_cost_vector(cost, i, strategies, action_matrices=None):
    """Expected cost of each pure action of agent ``i``.

    Parameters
    ----------
    cost : ZeroCost, TensorCost or LinearCoupledCost
    i : int
        Agent index.
    strategies : sequence of ndarray
        Mixed strategies of all agents; entry ``i`` only fixes the length.
    action_matrices : sequence of ndarray, optional
        ``A_j`` (actions as columns); required by LinearCoupledCost.

    Returns
    -------
    numpy.ndarray
        ``f_i(x_{-i})`` of length ``m_i``.
    """
    m_i = len(strategies[i])
    if isinstance(cost, ZeroCost):
        return np.zeros(m_i)
    if isinstance(cost, TensorCost):
        t = cost.table
        if t.shape != tuple(len(s) for s in strategies):
            raise ConfigurationError("tensor cost shape does not match the strategy profile")
        # contract from the last axis so the remaining axis numbers stay valid
        for j in reversed(range(len(strategies))):
            if j != i:
                t = np.tensordot(t, strategies[j], axes=([j], [0]))
        return np.asarray(t, dtype=float)
    if isinstance(cost, LinearCoupledCost):
        if action_matrices is None:
            raise ConfigurationError("linear coupled costs need the action matrices")
        if cost.own.shape != (m_i,):
            raise ConfigurationError("own cost vector does not match the action count")
        f = cost.own.copy()
        A_i = action_matrices[i]
        for j, M in cost.coupling.items():
            if j == i:
                raise ConfigurationError("own quadratic terms belong in the own cost vector")
            f += A_i.T @ (M @ (action_matrices[j] @ strategies[j]))
        return f
    raise ConfigurationError(f"unsupported cost specification {type(cost).__name__}")


def _relax_one(source, blocks, rows, what):
    m = sum(len(b) for b in blocks)
    if source is None:
        return np.zeros((rows, m))
    if callable(source) or (isinstance(source, (list, tuple)) and source and callable(source[0])):
        fns = source if isinstance(source, (list, tuple)) else [source]
        if len(fns) != len(blocks):
            raise ConfigurationError(f"{what}: one callable per discrete block is required")
        cols = []
        for fn, blk in zip(fns, blocks):
            for a in blk:
                arg = a[0] if len(a) == 1 else a
                cols.append(np.atleast_1d(np.asarray(fn(arg), dtype=float)))
        G = np.column_stack(cols) if cols else np.zeros((rows, 0))
    else:
        G = np.atleast_2d(np.asarray(source, dtype=float))
        if G.size == 0:
            G = G.reshape(rows, m)
    if G.shape != (rows, m):
        raise ConfigurationError(f"{what} has shape {G.shape}, expected {(rows, m)}")
    return G


def relax_constraints(agent, n_rho=0):
    """Expected-value matrices ``(G_i^d, H_i^d)`` of an agent.

    Column ``j`` of ``G_i^d`` is ``g_i^d(a_i^j)`` (blocks are concatenated
    in order), so ``E[g_i^d(a_i)] = G_i^d x_i`` for any mixed strategy.
    """
    Gd = _relax_one(agent.local_discrete, agent.action_blocks, agent.n_theta, "local discrete constraint")
    Hd = _relax_one(agent.coupling_discrete, agent.action_blocks, n_rho, "coupling discrete constraint")
    return Gd, Hd


# ---------------------------------------------------------------------------
# compiled mixed-strategy problem


def _block_diag(mats, rows, cols):
    out = np.zeros((sum(rows), sum(cols)))
    r = c = 0
    for M, nr, nc in zip(mats, rows, cols):
        out[r:r + nr, c:c + nc] = M
        r += nr
        c += nc
    return out


def _offsets(sizes):
    off = np.concatenate(([0], np.cumsum(sizes))).astype(int)
    return [slice(int(off[k]), int(off[k + 1])) for k in range(len(sizes))]


@dataclass(eq=False)
class MsGnep:
    """Mixed-strategy extension of a game in stacked operator form.

    Attributes
    ----------
    m, n, n_theta, n_rho : int
        Dimensions of ``x``, ``y``, ``mu`` and ``lambda``.
    x_slices, y_slices, mu_slices : list of slice
        Per-agent ranges inside the stacked vectors.
    simplex_starts, simplex_sizes : ndarray
        Start index and length of every simplex block of ``x``.
    y_sets : list
        Per-agent continuous sets.
    Gd, Hd : ndarray
        Relaxed discrete constraint matrices (``n_theta x m``, ``n_rho x m``).
    theta, rho : ndarray
    Fd_affine, Fc_affine : tuple or None
        ``(K, k)`` with ``F(v) = K v + k`` when the map is affine.
    """

    game: GmiGame
    m: int
    n: int
    n_theta: int
    n_rho: int
    x_slices: list
    y_slices: list
    mu_slices: list
    simplex_starts: np.ndarray
    simplex_sizes: np.ndarray
    y_sets: list
    Gd: np.ndarray
    Hd: np.ndarray
    theta: np.ndarray
    rho: np.ndarray
    gc_maps: list
    hc_maps: list
    Gc: np.ndarray | None
    gc_offset: np.ndarray | None
    Hc: np.ndarray | None
    hc_offset: np.ndarray | None
    Fd_affine: tuple | None
    Fc_affine: tuple | None
    _Fd: Callable = None
    _Fc: Callable = None

    @property
    def n_agents(self):
        return len(self.x_slices)

    @property
    def dims(self):
        return self.m, self.n, self.n_theta, self.n_rho

    @property
    def constraints_affine(self):
        return self.Gc is not None and self.Hc is not None

    @property
    def is_finite_game(self):
        """True when there is no continuous variable and no constraint."""
        return self.n == 0 and self.n_theta == 0 and self.n_rho == 0

    def Fd(self, x):
        return self._Fd(x)

    def Fc(self, y):
        return self._Fc(y)

    def gc(self, y):
        if self.Gc is not None:
            return self.Gc @ y + self.gc_offset
        if self.n_theta == 0:
            return np.zeros(0)
        return np.concatenate([g(y[s]) for g, s in zip(self.gc_maps, self.y_slices)])

    def gc_vjp(self, y, mu):
        """``grad g^c(y)^T mu`` for the stacked local maps."""
        if self.Gc is not None:
            return self.Gc.T @ mu
        out = np.zeros(self.n)
        for g, s, t in zip(self.gc_maps, self.y_slices, self.mu_slices):
            if g.out_dim:
                out[s] = g.jacobian(y[s]).T @ mu[t]
        return out

    def hc(self, y):
        if self.Hc is not None:
            return self.Hc @ y + self.hc_offset
        out = np.zeros(self.n_rho)
        for h, s in zip(self.hc_maps, self.y_slices):
            out += h(y[s])
        return out

    def hc_agent(self, i, y_i):
        return self.hc_maps[i](y_i)

    def hc_vjp(self, y, lam):
        """``grad h^c(y)^T lam`` for the summed coupling maps."""
        if self.Hc is not None:
            return self.Hc.T @ lam
        out = np.zeros(self.n)
        for h, s in zip(self.hc_maps, self.y_slices):
            out[s] = h.jacobian(y[s]).T @ lam
        return out

    def split_x(self, x):
        return [x[s] for s in self.x_slices]

    def split_y(self, y):
        return [y[s] for s in self.y_slices]

    def initial_x(self):
        return np.repeat(1.0 / self.simplex_sizes, self.simplex_sizes)

    def initial_y(self):
        if self.n == 0:
            return np.zeros(0)
        parts = []
        for a, s in zip(self.game.agents, self.y_sets):
            y0 = a.initial_continuous
            parts.append(s.center() if y0 is None else np.asarray(y0, dtype=float).reshape(s.dim))
        return np.concatenate(parts)

    def local_violation(self, x, y):
        if self.n_theta == 0:
            return 0.0
        return float(max(0.0, np.max(self.Gd @ x + self.gc(y) - self.theta)))

    def coupling_violation(self, x, y):
        if self.n_rho == 0:
            return 0.0
        return float(max(0.0, np.max(self.Hd @ x + self.hc(y) - self.rho)))


def _fd_oracle(game, agents, x_slices):
    """Build ``Fd`` and, when the map is affine, its matrix form."""
    N = len(agents)
    m = x_slices[-1].stop
    costs = [a.discrete_cost for a in agents]
    if all(isinstance(c, ZeroCost) for c in costs):
        K, k = np.zeros((m, m)), np.zeros(m)
        return (lambda x: np.zeros(m)), (K, k)
    for c in costs:
        if isinstance(c, SmoothIntegerCost):
            raise ConfigurationError("smooth integer costs must be lifted before compiling")
    if any(len(a.action_blocks) != 1 for a, c in zip(agents, costs) if not isinstance(c, ZeroCost)):
        raise ConfigurationError("tensor and linear coupled costs need single-block agents")
    mats = [a.action_matrix if isinstance(c, LinearCoupledCost) else None for a, c in zip(agents, costs)]
    if any(isinstance(c, TensorCost) for c in costs):
        if N > MAX_TENSOR_AGENTS:
            raise ConfigurationError(f"tensor costs are limited to {MAX_TENSOR_AGENTS} agents")
        if int(np.prod([a.m for a in agents], dtype=object)) > MAX_ACTIONS:
            raise ConfigurationError("tensor cost exceeds the joint-action cap")
        if N > 2:
            def Fd(x):
                xs = [x[s] for s in x_slices]
                return np.concatenate([expected_cost_vector(c, i, xs, mats) for i, c in enumerate(costs)])

            return Fd, None
    # two-player tables, linear coupled and zero costs are affine in x
    K, k = np.zeros((m, m)), np.zeros(m)
    for i, c in enumerate(costs):
        if isinstance(c, ZeroCost):
            continue
        if isinstance(c, TensorCost):
            if c.table.shape != tuple(a.m for a in agents):
                raise ConfigurationError("tensor cost shape does not match the action counts")
            K[x_slices[i], x_slices[1 - i]] = c.table if i == 0 else c.table.T
            continue
        if c.own.shape != (agents[i].m,):
            raise ConfigurationError("own cost vector does not match the action count")
        k[x_slices[i]] = c.own
        for j, M in c.coupling.items():
            if j == i:
                raise ConfigurationError("own quadratic terms belong in the own cost vector")
            K[x_slices[i], x_slices[j]] = mats[i].T @ M @ agents[j].action_matrix
    return (lambda x: K @ x + k), (K, k)


def _fc_oracle(game, agents, y_slices):
    n = y_slices[-1].stop if y_slices else 0
    if n == 0:
        return (lambda y: np.zeros(0)), (np.zeros((0, 0)), np.zeros(0))
    if game.continuous_affine is not None:
        Q, q = game.continuous_affine
        return (lambda y: Q @ y + q), (Q, q)
    if game.continuous_pseudogradient is not None:
        fn = game.continuous_pseudogradient
        return (lambda y: np.asarray(fn(y), dtype=float)), None
    for a in agents:
        if a.n > 0 and a.continuous_gradient is None:
            raise ConfigurationError("every agent with continuous variables needs a cost gradient")

    def Fc(y):
        out = np.empty(n)
        for a, s in zip(agents, y_slices):
            if a.n:
                out[s] = a.continuous_gradient(y)
        return out

    return Fc, None


def compile(game: GmiGame) -> MsGnep:
    """Compile a game into its mixed-strategy operator data."""
    agents = game.agents
    n_rho = game.n_rho
    x_slices = _offsets([a.m for a in agents])
    y_slices = _offsets([a.n for a in agents])
    mu_slices = _offsets([a.n_theta for a in agents])
    starts, sizes = [], []
    for a, s in zip(agents, x_slices):
        k = s.start
        for size in a.block_sizes:
            starts.append(k)
            sizes.append(size)
            k += size
    Gds, Hds, gcs, hcs = [], [], [], []
    for a in agents:
        Gd_i, Hd_i = relax_constraints(a, n_rho)
        Gds.append(Gd_i)
        Hds.append(Hd_i)
        g = _as_map(a.local_continuous, a.n_theta, a.n)
        h = _as_map(a.coupling_continuous, n_rho, a.n)
        if g.out_dim != a.n_theta or h.out_dim != n_rho:
            raise ConfigurationError("continuous constraint maps have the wrong number of rows")
        if isinstance(g, AffineMap) and g.matrix.shape[1] != a.n:
            raise ConfigurationError("local continuous matrix does not match the continuous dimension")
        if isinstance(h, AffineMap) and h.matrix.shape[1] != a.n:
            raise ConfigurationError("coupling continuous matrix does not match the continuous dimension")
        gcs.append(g)
        hcs.append(h)
    ms_sizes = [a.m for a in agents]
    ns = [a.n for a in agents]
    thetas = [a.n_theta for a in agents]
    Gd = _block_diag(Gds, thetas, ms_sizes)
    Hd = np.hstack(Hds) if Hds else np.zeros((n_rho, 0))
    Gc = gc_off = Hc = hc_off = None
    if all(isinstance(g, AffineMap) for g in gcs):
        Gc = _block_diag([g.matrix for g in gcs], thetas, ns)
        gc_off = np.concatenate([g.offset for g in gcs]) if gcs else np.zeros(0)
    if all(isinstance(h, AffineMap) for h in hcs):
        Hc = np.hstack([h.matrix for h in hcs])
        hc_off = np.sum([h.offset for h in hcs], axis=0) if n_rho else np.zeros(0)
    Fd, Fd_aff = _fd_oracle(game, agents, x_slices)
    Fc, Fc_aff = _fc_oracle(game, agents, y_slices)
    return MsGnep(
        game=game,
        m=sum(ms_sizes),
        n=sum(ns),
        n_theta=sum(thetas),
        n_rho=n_rho,
        x_slices=x_slices,
        y_slices=y_slices,
        mu_slices=mu_slices,
        simplex_starts=np.array(starts, dtype=np.int64),
        simplex_sizes=np.array(sizes, dtype=np.int64),
        y_sets=[a.continuous_set for a in agents],
        Gd=Gd,
        Hd=Hd,
        theta=np.concatenate([a.theta for a in agents]),
        rho=game.rho.copy(),
        gc_maps=gcs,
        hc_maps=hcs,
        Gc=Gc,
        gc_offset=gc_off,
        Hc=Hc,
        hc_offset=hc_off,
        Fd_affine=Fd_aff,
        Fc_affine=Fc_aff,
        _Fd=Fd,
        _Fc=Fc,
    )


# ---------------------------------------------------------------------------
# integer-cost lift


def lift_integer_cost(game, pseudogradient=None):
    """Move coupled integer costs onto auxiliary continuous variables.

    Every agent (all must carry a :class:`SmoothIntegerCost`) gains a scalar
    continuous variable ``v_i`` in ``[min a, max a]`` carrying the
    continuous extension of its cost, together with the two local rows
    ``E[a_i] - v_i <= 0`` and ``v_i - E[a_i] <= 0``. The integer block
    keeps only the own-action part of the cost (zero if none is given).
    A game whose agents all have zero cost is returned unchanged. The
    stacked continuous vector of the lifted game is ``v`` itself, which
    is what the ``partial`` oracles receive.

    Parameters
    ----------
    game : GmiGame
        Integer game: scalar integer actions, no continuous variables.
    pseudogradient : callable, optional
        Vectorized ``v -> col(dJ_i/dv_i)`` over the lifted agents.

    Returns
    -------
    GmiGame
    """
    smooth = [isinstance(a.discrete_cost, SmoothIntegerCost) for a in game.agents]
    for a in game.agents:
        if isinstance(a.discrete_cost, (TensorCost, LinearCoupledCost)):
            raise ConfigurationError(
                "lift needs a differentiable cost extension; table costs where actions "
                "enter opponents' costs cannot be lifted"
            )
    if not any(smooth):
        return game
    if not all(smooth):
        raise ConfigurationError("lift expects every agent to carry a smooth integer cost")
    for a, s in zip(game.agents, smooth):
        if a.n != 0:
            raise ConfigurationError("lift expects a purely integer game")
        if s and (len(a.action_blocks) != 1 or a.action_blocks[0].shape[1] != 1):
            raise ConfigurationError("lift expects scalar integer actions")
        if isinstance(a.local_continuous, SmoothMap) or isinstance(a.coupling_continuous, SmoothMap):
            raise ConfigurationError("lift expects no continuous constraint maps")
    n_rho = game.n_rho
    agents = []
    for a in game.agents:
        cost = a.discrete_cost
        acts = a.action_blocks[0][:, 0].astype(float)
        Gd_old, Hd_old = relax_constraints(a, n_rho)
        Gd = np.vstack([Gd_old, acts, -acts])
        Gc = np.vstack([np.zeros((a.n_theta, 1)), [[-1.0]], [[1.0]]])
        theta = np.concatenate([a.theta, [0.0, 0.0]])

        def grad(y, cost=cost):
            return np.atleast_1d(cost.partial(y))

        def value(y, cost=cost):
            return cost.value(y)

        own = LinearCoupledCost(cost.own) if cost.own is not None else ZeroCost()
        agents.append(AgentSpec(
            actions=a.action_blocks[0],
            continuous_set=Box([acts.min()], [acts.max()]),
            local_discrete=Gd,
            local_continuous=AffineMap(Gc),
            theta=theta,
            coupling_discrete=Hd_old,
            coupling_continuous=AffineMap(np.zeros((n_rho, 1))),
            discrete_cost=own,
            continuous_gradient=grad,
            continuous_cost=value if cost.value is not None else None,
            name=a.name,
        ))
    return GmiGame(
        agents=agents,
        rho=game.rho,
        continuous_pseudogradient=pseudogradient,
        lipschitz_hint=dict(game.lipschitz_hint),
        name=game.name,
        metadata=dict(game.metadata, lifted=True),
    )


# ---------------------------------------------------------------------------
# piecewise-affine reformulation


@dataclass(eq=False)
class PwaAgent:
    """Scalar continuous decision with a piecewise-affine cost term.

    Parameters
    ----------
    lower, upper : float
        Bounds of ``Y_i``.
    regions : list of (float, float)
        Intervals on which the cost is affine, in increasing order. Adjacent
        regions are separated by a gap of at least ``epsilon``.
    slopes, intercepts : array_like
        ``c^j`` and ``b^j`` of the affine piece on region ``j``.
    """

    lower: float
    upper: float
    regions: list
    slopes: np.ndarray
    intercepts: np.ndarray

    def __post_init__(self):
        self.regions = [(float(lo), float(hi)) for lo, hi in self.regions]
        self.slopes = np.asarray(self.slopes, dtype=float).ravel()
        self.intercepts = np.asarray(self.intercepts, dtype=float).ravel()

    @property
    def p(self):
        return len(self.regions)

    def value(self, y):
        """Piecewise-affine cost at ``y``; NaN outside every region."""
        for (lo, hi), c, b in zip(self.regions, self.slopes, self.intercepts):
            if lo <= y <= hi:
                return c * y + b
        return np.nan


@dataclass(eq=False)
class PwaGameSpec:
    """Game whose agents carry a piecewise-affine cost on a scalar ``y_i``.

    ``continuous_pseudogradient`` gives the smooth remainder of the costs
    as ``y -> col(grad_{y_i} J_i^c)``; ``coupling`` lists per-agent
    coefficients ``h_i`` so that ``sum_i h_i y_i <= rho``.
    """

    agents: list
    continuous_pseudogradient: Callable
    coupling: list | None = None
    rho: np.ndarray | None = None
    epsilon: float = 1e-9
    lipschitz_hint: dict = field(default_factory=dict)


def big_m_bounds(c, b, lower, upper):
    """Smallest and largest value of ``c y + b`` over a box, from its corners."""
    c = np.atleast_1d(np.asarray(c, dtype=float))
    lower = np.atleast_1d(lower)
    upper = np.atleast_1d(upper)
    lo = np.where(c > 0, lower, upper) @ c + b
    hi = np.where(c > 0, upper, lower) @ c + b
    return float(lo), float(hi)


def pwa_rows(agent, epsilon=1e-9):
    """Mixed-integer rows encoding one agent's piecewise-affine cost.

    Variables are ``a = (delta, alpha, beta)`` (binary, ``3p`` entries) and
    ``w = (y, z_1, ..., z_p)``. Returns ``(Gd_fn, Gc, theta, bigm)`` where
    ``Gd_fn(a)`` gives the action column, the rows read
    ``Gd_fn(a) + Gc w <= theta`` and ``bigm`` lists the per-region
    ``(min, max)`` of the affine pieces over ``Y_i``.
    """
    p = agent.p
    ylo, yhi = agent.lower, agent.upper
    eps = float(epsilon)
    bigm = [big_m_bounds(c, b, ylo, yhi) for c, b in zip(agent.slopes, agent.intercepts)]
    rows_c, theta, coef = [], [], []

    def add(yc, zc, disc, rhs):
        # one row: disc . a + yc * y + zc . z <= rhs
        r = len(theta)
        rows_c.append(np.r_[yc, zc])
        coef.extend((r, col, v) for col, v in disc)
        theta.append(rhs)

    none = np.zeros(p)
    for j, ((rlo, rhi), c, b) in enumerate(zip(agent.regions, agent.slopes, agent.intercepts)):
        d_, al, be = j, p + j, 2 * p + j
        m_lo, m_hi = bigm[j]
        ez = np.zeros(p)
        ez[j] = 1.0
        # alpha = 1 exactly when y <= upper end of the region
        add(1.0, none, [(al, yhi - rhi)], yhi)
        add(-1.0, none, [(al, ylo - rhi - eps)], -rhi - eps)
        # beta = 1 exactly when y >= lower end of the region
        add(-1.0, none, [(be, rlo - ylo)], -ylo)
        add(1.0, none, [(be, rlo - yhi - eps)], rlo - eps)
        # delta = alpha * beta
        add(0.0, none, [(al, -1.0), (d_, 1.0)], 0.0)
        add(0.0, none, [(be, -1.0), (d_, 1.0)], 0.0)
        add(0.0, none, [(al, 1.0), (be, 1.0), (d_, -1.0)], 1.0)
        # z_j = delta * (c y + b)
        add(0.0, -ez, [(d_, m_lo)], 0.0)
        add(-c, ez, [(d_, -m_lo)], b - m_lo)
        add(0.0, ez, [(d_, -m_hi)], 0.0)
        add(c, -ez, [(d_, m_hi)], m_hi - b)
    Gc = np.array(rows_c)
    theta = np.array(theta)
    n_rows = len(theta)
    D = np.zeros((n_rows, 3 * p))
    for r, col, v in coef:
        D[r, col] += v

    def Gd_fn(a):
        return D @ np.asarray(a, dtype=float)

    return Gd_fn, Gc, theta, bigm


def _check_regions(agent, eps):
    regs = agent.regions
    if len(agent.slopes) != len(regs) or len(agent.intercepts) != len(regs):
        raise ConfigurationError("one slope and one intercept per region are required")
    if not regs:
        raise ConfigurationError("at least one region is required")
    for lo, hi in regs:
        if lo > hi:
            raise ConfigurationError("region with lower end above its upper end")
    if abs(regs[0][0] - agent.lower) > eps or abs(regs[-1][1] - agent.upper) > eps:
        raise ConfigurationError("regions do not cover the continuous set")
    for (lo0, hi0), (lo1, hi1) in zip(regs, regs[1:]):
        gap = lo1 - hi0
        # consecutive regions must be separated by (about) the strictness tolerance
        if gap < eps * (1 - 1e-6) - 1e-15 * max(1.0, abs(hi0)):
            raise ConfigurationError("overlapping regions")
        if gap > max(10 * eps, 1e-12 * max(1.0, abs(hi0))) + eps:
            raise ConfigurationError("regions leave part of the continuous set uncovered")


def reformulate_pwa(pwa: PwaGameSpec) -> GmiGame:
    """Big-M reformulation of a game with piecewise-affine costs.

    Agent ``i`` gets binaries ``a_i = (delta, alpha, beta)`` (all
    ``2^{3p_i}`` patterns are actions), auxiliary costs ``z_i`` appended
    to its continuous vector, the cost ``1^T z_i`` and eleven rows per
    region. The auxiliary variables live in the box spanned by zero and
    the big-M constants so that ``Y_i`` stays compact.
    """
    eps = float(pwa.epsilon)
    if eps <= 0:
        raise ConfigurationError("epsilon must be positive")
    N = len(pwa.agents)
    coupling = pwa.coupling
    rho = np.zeros(0) if pwa.rho is None else np.atleast_1d(np.asarray(pwa.rho, dtype=float))
    n_rho = len(rho)
    agents = []
    for i, ag in enumerate(pwa.agents):
        _check_regions(ag, eps)
        p = ag.p
        Gd_fn, Gc, theta, bigm = pwa_rows(ag, eps)
        acts = enumerate_actions(3 * p)
        zlo = [min(lo, 0.0) for lo, _ in bigm]
        zhi = [max(hi, 0.0) for _, hi in bigm]
        h = np.zeros((n_rho, 1 + p))
        if coupling is not None:
            h[:, 0] = np.asarray(coupling[i], dtype=float).ravel()
        agents.append(AgentSpec(
            actions=acts,
            continuous_set=Box([ag.lower] + zlo, [ag.upper] + zhi),
            local_discrete=Gd_fn,
            local_continuous=AffineMap(Gc),
            theta=theta,
            coupling_continuous=AffineMap(h),
            name=f"pwa{i}",
        ))
    sizes = [1 + ag.p for ag in pwa.agents]
    y_idx = np.concatenate(([0], np.cumsum(sizes)[:-1])).astype(int)
    grad = pwa.continuous_pseudogradient

    def Fc(w):
        out = np.ones(len(w))
        out[y_idx] = grad(w[y_idx])
        return out

    return GmiGame(
        agents=agents,
        rho=rho,
        continuous_pseudogradient=Fc,
        lipschitz_hint=dict(pwa.lipschitz_hint),
        name="pwa",
        metadata={"pwa_agents": pwa.agents, "epsilon": eps, "y_index": y_idx.tolist()},
    )

