"""Splitting operators of the three formulations and their Lipschitz data.

Three stacked variables are used:

* ``semi_decentralized``: ``omega = (x, y, mu, lam)`` with the forward map
  ``T2 + T3 + T4`` and backward sets simplices x ``Y_i`` x orthants;
* ``alternative``: ``omega = (x, y, lam)`` where the local constraints move
  into the backward sets ``Omega_i`` (joint in ``x_i`` and ``y_i``);
* ``distributed``: ``omega = (x, y, mu, lam_1..lam_N, nu_1..nu_N)`` with
  per-agent dual copies tied together by a Laplacian consensus term.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError, LipschitzEstimationError
from .regularizers import (
    Box, BoxHalfspace, Free, Halfspace, NonNegative, Polytope, Product, Simplex,
    project_euclidean,
)

SEMI_DECENTRALIZED = "semi_decentralized"
ALTERNATIVE = "alternative"
DISTRIBUTED = "distributed"
VARIANTS = (SEMI_DECENTRALIZED, ALTERNATIVE, DISTRIBUTED)


# ---------------------------------------------------------------------------
# layouts


def layout(ms, variant):
    """Slices of each named block inside the stacked variable."""
    sizes = [("x", ms.m), ("y", ms.n)]
    if variant == SEMI_DECENTRALIZED:
        sizes += [("mu", ms.n_theta), ("lam", ms.n_rho)]
    elif variant == ALTERNATIVE:
        sizes += [("lam", ms.n_rho)]
    elif variant == DISTRIBUTED:
        k = ms.n_agents * ms.n_rho
        sizes += [("mu", ms.n_theta), ("lam", k), ("nu", k)]
    else:
        raise ConfigurationError(f"unknown variant {variant!r}")
    out, k = {}, 0
    for name, size in sizes:
        out[name] = slice(k, k + size)
        k += size
    out["dim"] = k
    return out


@dataclass
class Iterate:
    """Per-agent view of a stacked variable.

    ``lam`` is the shared multiplier (variants 1-2) or an ``(N, n_rho)``
    array of copies (distributed variant, together with ``nu``).
    """

    x: list
    y: list
    mu: list
    lam: np.ndarray
    nu: np.ndarray | None = None
    cached_forward: np.ndarray | None = None

    @classmethod
    def from_vector(cls, ms, variant, omega, cached_forward=None):
        lay = layout(ms, variant)
        x = ms.split_x(omega[lay["x"]])
        y = ms.split_y(omega[lay["y"]])
        mu = [omega[lay["mu"]][s] for s in ms.mu_slices] if "mu" in lay else []
        lam = omega[lay["lam"]]
        nu = None
        if variant == DISTRIBUTED:
            lam = lam.reshape(ms.n_agents, ms.n_rho)
            nu = omega[lay["nu"]].reshape(ms.n_agents, ms.n_rho)
        return cls([v.copy() for v in x], [v.copy() for v in y], [v.copy() for v in mu],
                   np.array(lam), None if nu is None else np.array(nu), cached_forward)

    def to_vector(self):
        parts = list(self.x) + list(self.y) + list(self.mu) + [np.ravel(self.lam)]
        if self.nu is not None:
            parts.append(np.ravel(self.nu))
        return np.concatenate([np.asarray(p, dtype=float) for p in parts]) if parts else np.zeros(0)


def split(ms, variant, omega):
    lay = layout(ms, variant)
    if omega.shape != (lay["dim"],):
        raise ConfigurationError(f"expected a vector of length {lay['dim']}, got shape {omega.shape}")
    return lay, {k: omega[v] for k, v in lay.items() if k != "dim"}


# ---------------------------------------------------------------------------
# forward operators


def eval_forward_T(ms, omega):
    """``(T2 + T3 + T4)(omega)`` for ``omega = (x, y, mu, lam)``."""
    lay, b = split(ms, SEMI_DECENTRALIZED, omega)
    x, y, mu, lam = b["x"], b["y"], b["mu"], b["lam"]
    out = np.empty_like(omega)
    out[lay["x"]] = ms.Fd(x) + ms.Gd.T @ mu + ms.Hd.T @ lam
    out[lay["y"]] = ms.Fc(y) + ms.gc_vjp(y, mu) + ms.hc_vjp(y, lam)
    out[lay["mu"]] = ms.theta - ms.Gd @ x - ms.gc(y)
    out[lay["lam"]] = ms.rho - ms.Hd @ x - ms.hc(y)
    return out


def eval_forward_S(ms, omega):
    """``(S2 + S3)(omega)`` for ``omega = (x, y, lam)``."""
    lay, b = split(ms, ALTERNATIVE, omega)
    x, y, lam = b["x"], b["y"], b["lam"]
    out = np.empty_like(omega)
    out[lay["x"]] = ms.Fd(x) + ms.Hd.T @ lam
    out[lay["y"]] = ms.Fc(y) + ms.hc_vjp(y, lam)
    out[lay["lam"]] = ms.rho - ms.Hd @ x - ms.hc(y)
    return out


@dataclass(eq=False)
class _AgentCoupling:
    """Block-diagonal coupling data for the per-agent dual copies."""

    Hd_blocks: list
    Hd_tilde: np.ndarray
    Hc_tilde: np.ndarray | None
    hc_offsets: np.ndarray | None


def agent_coupling(ms):
    data = getattr(ms, "_agent_coupling", None)
    if data is not None:
        return data
    N, nr = ms.n_agents, ms.n_rho
    Hd_blocks = [ms.Hd[:, s] for s in ms.x_slices]
    Hd_t = np.zeros((N * nr, ms.m))
    for i, s in enumerate(ms.x_slices):
        Hd_t[i * nr:(i + 1) * nr, s] = Hd_blocks[i]
    Hc_t = offs = None
    if ms.Hc is not None:
        Hc_t = np.zeros((N * nr, ms.n))
        offs = np.zeros((N, nr))
        for i, (h, s) in enumerate(zip(ms.hc_maps, ms.y_slices)):
            Hc_t[i * nr:(i + 1) * nr, s] = h.matrix
            offs[i] = h.offset
        offs = offs.ravel()
    data = _AgentCoupling(Hd_blocks, Hd_t, Hc_t, offs)
    ms._agent_coupling = data
    return data


def check_graph(ms, graph):
    if graph is None:
        raise ConfigurationError("the distributed variant needs a communication graph")
    if graph.n_nodes != ms.n_agents:
        raise ConfigurationError(f"graph has {graph.n_nodes} nodes but the game has {ms.n_agents} agents")
    if not graph.connected:
        raise ConfigurationError("communication graph must be connected")


def hc_tilde(ms, y):
    """Stacked per-agent coupling loads ``col(h_i^c(y_i))``."""
    ac = agent_coupling(ms)
    if ac.Hc_tilde is not None:
        return ac.Hc_tilde @ y + ac.hc_offsets
    return np.concatenate([h(y[s]) for h, s in zip(ms.hc_maps, ms.y_slices)])


def hc_tilde_vjp(ms, y, lam):
    ac = agent_coupling(ms)
    if ac.Hc_tilde is not None:
        return ac.Hc_tilde.T @ lam
    nr = ms.n_rho
    out = np.zeros(ms.n)
    for i, (h, s) in enumerate(zip(ms.hc_maps, ms.y_slices)):
        out[s] = h.jacobian(y[s]).T @ lam[i * nr:(i + 1) * nr]
    return out


def eval_forward_Ttilde(ms, graph, omega):
    """Forward map of the distributed formulation.

    The ``lam_i`` row is ``rho/N - H_i^d x_i - h_i^c(y_i) - sum_j w_ij (nu_i - nu_j)``
    and the ``nu`` row is ``(L ⊗ I) lam``.
    """
    check_graph(ms, graph)
    lay, b = split(ms, DISTRIBUTED, omega)
    x, y, mu, lam, nu = b["x"], b["y"], b["mu"], b["lam"], b["nu"]
    N, nr = ms.n_agents, ms.n_rho
    L = graph.laplacian
    ac = agent_coupling(ms)
    out = np.empty_like(omega)
    out[lay["x"]] = ms.Fd(x) + ms.Gd.T @ mu + ac.Hd_tilde.T @ lam
    out[lay["y"]] = ms.Fc(y) + ms.gc_vjp(y, mu) + hc_tilde_vjp(ms, y, lam)
    out[lay["mu"]] = ms.theta - ms.Gd @ x - ms.gc(y)
    Lnu = (L @ nu.reshape(N, nr)).ravel()
    out[lay["lam"]] = np.tile(ms.rho / N, N) - ac.Hd_tilde @ x - hc_tilde(ms, y) - Lnu
    out[lay["nu"]] = (L @ lam.reshape(N, nr)).ravel()
    return out


def consensus_operator(graph, n_rho, omega_lam, omega_nu):
    """``T5(lam, nu) = (-(L ⊗ I) nu, (L ⊗ I) lam)``, the skew consensus term."""
    L = graph.laplacian
    N = graph.n_nodes
    return (-(L @ omega_nu.reshape(N, n_rho)).ravel(), (L @ omega_lam.reshape(N, n_rho)).ravel())


# ---------------------------------------------------------------------------
# backward sets


def local_polytope(ms, i, tol=1e-10):
    """``Omega_i`` as a polytope over ``(x_i, y_i)``; needs affine ``g_i^c``."""
    g = ms.gc_maps[i]
    if not hasattr(g, "matrix"):
        raise ConfigurationError("the alternative variant needs affine local constraints")
    xs, ys, ts = ms.x_slices[i], ms.y_slices[i], ms.mu_slices[i]
    m_i, n_i = xs.stop - xs.start, ys.stop - ys.start
    rows = [np.hstack([ms.Gd[ts, xs], g.matrix])]
    rhs = [ms.theta[ts] - g.offset]
    lower = np.concatenate([np.full(m_i, -np.inf), np.full(n_i, -np.inf)])
    upper = np.concatenate([np.full(m_i, np.inf), np.full(n_i, np.inf)])

    def add_set(s, k):
        # k: offset of this part inside y_i
        if isinstance(s, Product):
            for p in s.parts:
                add_set(p, k)
                k += p.dim
            return
        sl = slice(m_i + k, m_i + k + s.dim)
        if isinstance(s, (Box, BoxHalfspace)):
            lower[sl] = s.lower
            upper[sl] = s.upper
        if isinstance(s, NonNegative):
            lower[sl] = 0.0
        if isinstance(s, (Halfspace, BoxHalfspace)):
            row = np.zeros(m_i + n_i)
            row[sl] = -s.a
            rows.append(row[None, :])
            rhs.append([-s.b])
        if not isinstance(s, (Box, BoxHalfspace, NonNegative, Halfspace, Free)):
            raise ConfigurationError(f"unsupported continuous set {type(s).__name__} in a polytope")

    add_set(ms.y_sets[i], 0)
    blocks = []
    for st, sz in zip(ms.simplex_starts, ms.simplex_sizes):
        if xs.start <= st < xs.stop:
            blocks.append((int(st - xs.start), int(sz)))
    return Polytope(np.vstack(rows), np.concatenate(rhs), lower, upper, tuple(blocks), tol)


@dataclass(eq=False)
class SplitProblem:
    """A monotone inclusion ``0 in A(omega) + B(omega)`` ready for B-FoRB.

    Attributes
    ----------
    variant : str
    ms : MsGnep
    layout : dict
        Slices of the named blocks.
    backward_sets : list of (index, set descriptor)
        ``index`` is a slice or an integer index array; together the
        indices cover every coordinate exactly once.
    forward : callable
        ``omega -> B(omega)``.
    lipschitz : float
        Lipschitz constant used for the step-size bound.
    agent_index : dict
        Per-block agent ownership used to spread per-agent step sizes.
    """

    variant: str
    ms: object
    layout: dict
    backward_sets: list
    forward: Callable
    lipschitz: float = 0.0
    graph: object = None
    lipschitz_info: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.layout["dim"]

    def owner(self):
        """Agent index of every coordinate; -1 marks the coordinator."""
        ms, lay = self.ms, self.layout
        own = np.full(self.dim, -1, dtype=np.int64)
        for i in range(ms.n_agents):
            own[lay["x"]][ms.x_slices[i]] = i
            own[lay["y"]][ms.y_slices[i]] = i
            if "mu" in lay:
                own[lay["mu"]][ms.mu_slices[i]] = i
        if self.variant == DISTRIBUTED:
            nr = ms.n_rho
            own[lay["lam"]] = np.repeat(np.arange(ms.n_agents), nr)
            own[lay["nu"]] = np.repeat(np.arange(ms.n_agents), nr)
        return own

    def step_vector(self, gamma, zeta=None):
        """Per-coordinate step sizes from per-agent ``gamma`` and coordinator ``zeta``."""
        N = self.ms.n_agents
        g = np.broadcast_to(np.asarray(gamma, dtype=float), (N,))
        own = self.owner()
        out = np.empty(self.dim)
        agent = own >= 0
        out[agent] = g[own[agent]]
        if np.any(~agent):
            if zeta is None:
                raise ConfigurationError("a coordinator step size is required")
            out[~agent] = float(zeta)
        return out


def build_problem(ms, variant, graph=None, lipschitz=None, seed=0):
    """Assemble the split problem of a variant.

    Parameters
    ----------
    ms : MsGnep
    variant : str
        ``semi_decentralized``, ``alternative`` or ``distributed``.
    graph : CommGraph, optional
        Required by the distributed variant.
    lipschitz : float, optional
        Overrides the estimated Lipschitz constant of ``B``.
    seed : int
        Seed of the power iterations and sampling estimates.
    """
    lay = layout(ms, variant)
    xs, ys = lay["x"], lay["y"]
    sets = []
    if variant == ALTERNATIVE:
        for i in range(ms.n_agents):
            idx = np.concatenate([np.arange(xs.start, xs.stop)[ms.x_slices[i]],
                                  np.arange(ys.start, ys.stop)[ms.y_slices[i]]])
            sets.append((idx, local_polytope(ms, i)))
    else:
        for st, sz in zip(ms.simplex_starts, ms.simplex_sizes):
            sets.append((slice(xs.start + st, xs.start + st + sz), Simplex(int(sz))))
        for s, Y in zip(ms.y_slices, ms.y_sets):
            if Y.dim:
                sets.append((slice(ys.start + s.start, ys.start + s.stop), Y))
    for name in ("mu", "lam"):
        if name in lay and lay[name].stop > lay[name].start:
            sets.append((lay[name], NonNegative(lay[name].stop - lay[name].start)))
    if variant == DISTRIBUTED:
        check_graph(ms, graph)
        if lay["nu"].stop > lay["nu"].start:
            sets.append((lay["nu"], Free(lay["nu"].stop - lay["nu"].start)))
        forward = lambda w: eval_forward_Ttilde(ms, graph, w)  # noqa: E731
    elif variant == ALTERNATIVE:
        forward = lambda w: eval_forward_S(ms, w)  # noqa: E731
    else:
        forward = lambda w: eval_forward_T(ms, w)  # noqa: E731
    problem = SplitProblem(variant, ms, lay, sets, forward, graph=graph)
    info = lipschitz_constants(ms, variant, graph, seed=seed)
    problem.lipschitz_info = info
    problem.lipschitz = float(lipschitz) if lipschitz is not None else info["B"]
    if not problem.lipschitz > 0:
        problem.lipschitz = 1.0
    return problem


def project_blocks(problem, omega):
    """Euclidean projection of ``omega`` onto the product of backward sets."""
    out = np.empty_like(omega)
    for idx, s in problem.backward_sets:
        out[idx] = project_euclidean(s, omega[idx])
    return out


# ---------------------------------------------------------------------------
# Lipschitz constants and step sizes


def estimate_lipschitz(linear_map, dim=None, iters=500, seed=0, tol=1e-8):
    """Largest singular value by power iteration on ``M^T M``.

    Parameters
    ----------
    linear_map : ndarray or (matvec, rmatvec)
        The matrix, or callables applying it and its transpose.
    dim : int, optional
        Input dimension; inferred from a matrix.
    iters : int
        Iteration cap.
    seed : int
        Seed of the random start vector.
    tol : float
        Relative change of the Rayleigh quotient that stops the iteration.

    Returns
    -------
    float

    Raises
    ------
    LipschitzEstimationError
        If the Rayleigh quotient has not settled after ``iters`` steps.
    """
    if isinstance(linear_map, tuple):
        matvec, rmatvec = linear_map
        if dim is None:
            raise ConfigurationError("dim is required for a callable linear map")
    else:
        M = np.atleast_2d(np.asarray(linear_map, dtype=float))
        matvec, rmatvec = (lambda v: M @ v), (lambda v: M.T @ v)
        dim = M.shape[1]
    if dim == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    rq_old = None
    rq = 0.0
    for _ in range(iters):
        w = rmatvec(matvec(v))
        rq = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if rq_old is not None and abs(rq - rq_old) <= tol * abs(rq):
            return float(np.sqrt(max(rq, 0.0)))
        rq_old = rq
    raise LipschitzEstimationError(
        f"power iteration did not settle in {iters} steps (last estimate {np.sqrt(max(rq, 0.0)):.6g})",
        float(np.sqrt(max(rq, 0.0))),
    )


def spectral_norm(linear_map, dim=None, seed=0):
    """Largest singular value: power iteration first, Lanczos if it stalls.

    Power iteration stalls when the top singular values cluster (block
    diagonal constraint matrices with near-identical blocks are typical);
    ARPACK's Lanczos iteration on ``M^T M`` resolves those cases.
    """
    try:
        return estimate_lipschitz(linear_map, dim=dim, seed=seed)
    except LipschitzEstimationError:
        pass
    from scipy.sparse.linalg import LinearOperator, eigsh

    if isinstance(linear_map, tuple):
        matvec, rmatvec = linear_map
    else:
        M = np.atleast_2d(np.asarray(linear_map, dtype=float))
        matvec, rmatvec = (lambda v: M @ v), (lambda v: M.T @ v)
        dim = M.shape[1]
    if dim <= 2:
        basis = np.eye(dim)
        G = np.array([rmatvec(matvec(e)) for e in basis])
        return float(np.sqrt(max(np.linalg.eigvalsh(0.5 * (G + G.T)).max(), 0.0)))
    op = LinearOperator((dim, dim), matvec=lambda v: rmatvec(matvec(np.ravel(v))), dtype=float)
    v0 = np.random.default_rng(seed).standard_normal(dim)
    top = eigsh(op, k=1, which="LA", v0=v0, tol=1e-12, return_eigenvectors=False)
    return float(np.sqrt(max(top[0], 0.0)))


def step_size_bound(ell, sigma=1.0):
    """Largest admissible step ``sigma / (2 ell)``."""
    if not ell > 0 or not sigma > 0:
        raise ConfigurationError("Lipschitz constant and modulus must be positive")
    return sigma / (2.0 * ell)


def sampled_lipschitz(F, sampler, n_pairs=10_000, seed=0, safety=2.0):
    """Safety factor times the largest ratio ``|F(u)-F(v)| / |u-v|`` over random pairs."""
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(n_pairs):
        u, v = sampler(rng), sampler(rng)
        d = np.linalg.norm(u - v)
        if d > 0:
            best = max(best, np.linalg.norm(F(u) - F(v)) / d)
    return safety * best


def sample_set(s, rng, scale=1.0):
    """Random point of a set descriptor (unbounded directions use ``scale``)."""
    if isinstance(s, Simplex):
        return rng.dirichlet(np.ones(s.dim))
    if isinstance(s, Box):
        lo = np.where(np.isfinite(s.lower), s.lower, -scale)
        hi = np.where(np.isfinite(s.upper), s.upper, scale)
        return rng.uniform(lo, hi)
    if isinstance(s, BoxHalfspace):
        return project_euclidean(s, rng.uniform(s.lower, s.upper))
    if isinstance(s, NonNegative):
        return rng.uniform(0.0, scale, size=s.dim)
    if isinstance(s, Free):
        return rng.uniform(-scale, scale, size=s.dim)
    if isinstance(s, Product):
        return np.concatenate([sample_set(p, rng, scale) for p in s.parts]) if s.parts else np.zeros(0)
    return project_euclidean(s, rng.uniform(-scale, scale, size=s.dim))


def domain_sampler(ms, variant, scale=1.0):
    """Sampler of stacked variables in the domain of a variant's backward sets.

    The alternative variant samples ``x`` and ``y`` from the simple sets
    only, which is enough for monotonicity checks of the forward map.
    """
    lay = layout(ms, variant)

    def sample(rng):
        w = np.empty(lay["dim"])
        w[lay["x"]] = np.concatenate([rng.dirichlet(np.ones(sz)) for sz in ms.simplex_sizes])
        if ms.n:
            w[lay["y"]] = np.concatenate([sample_set(Y, rng, scale) for Y in ms.y_sets])
        for name in ("mu", "lam"):
            if name in lay:
                w[lay[name]] = rng.uniform(0.0, scale, size=lay[name].stop - lay[name].start)
        if "nu" in lay:
            w[lay["nu"]] = rng.uniform(-scale, scale, size=lay["nu"].stop - lay["nu"].start)
        return w

    return sample


def _y_sampler(ms):
    def sample(rng):
        return np.concatenate([sample_set(Y, rng) for Y in ms.y_sets])
    return sample


def _map_lipschitz(maps, kind):
    vals = []
    for mp in maps:
        if hasattr(mp, "matrix"):
            continue
        if mp.lipschitz is None:
            raise ConfigurationError(f"nonlinear {kind} maps need a declared Lipschitz constant")
        vals.append(mp.lipschitz)
    return vals


def lipschitz_constants(ms, variant, graph=None, seed=0):
    """Lipschitz data of a variant.

    Returns a dictionary with the component constants (``Fd``, ``Fc``,
    ``F``, ``T3``/``S3``, ``T4``, ``cns``), ``composite_bound``, the largest of the
    components, and ``B``, a certified constant of the whole forward map.
    ``B`` is the spectral norm of the assembled map when it is affine, and
    ``ell_F`` plus the norm of the (skew) constraint part otherwise. The
    assembled norm can be smaller than ``composite_bound``.
    """
    hint = ms.game.lipschitz_hint
    info = {}
    if ms.Fd_affine is not None:
        info["Fd"] = spectral_norm(ms.Fd_affine[0], seed=seed)
    elif "Fd" in hint:
        info["Fd"] = float(hint["Fd"])
    else:
        sampler = lambda rng: np.concatenate([rng.dirichlet(np.ones(s)) for s in ms.simplex_sizes])  # noqa: E731
        info["Fd"] = sampled_lipschitz(ms.Fd, sampler, seed=seed)
    if ms.Fc_affine is not None:
        info["Fc"] = spectral_norm(ms.Fc_affine[0], seed=seed)
    elif "Fc" in hint:
        info["Fc"] = float(hint["Fc"])
    else:
        info["Fc"] = sampled_lipschitz(ms.Fc, _y_sampler(ms), seed=seed)
    info["F"] = max(info["Fd"], info["Fc"])

    local_affine = ms.Gc is not None
    coupling_affine = ms.Hc is not None
    K_local = np.hstack([ms.Gd, ms.Gc]) if local_affine else None
    K_coup = np.hstack([ms.Hd, ms.Hc]) if coupling_affine else None
    nl_local = _map_lipschitz(ms.gc_maps, "local")
    nl_coup = _map_lipschitz(ms.hc_maps, "coupling")
    if local_affine:
        info["T3"] = spectral_norm(K_local, seed=seed)
    else:
        info["T3"] = spectral_norm(ms.Gd, seed=seed) + max(nl_local)
    if coupling_affine:
        info["T4"] = spectral_norm(K_coup, seed=seed)
    else:
        info["T4"] = spectral_norm(ms.Hd, seed=seed) + max(nl_coup)

    if variant == ALTERNATIVE:
        info["S3"] = info["T4"]
        info["composite_bound"] = max(info["F"], info["S3"])
    elif variant == DISTRIBUTED:
        check_graph(ms, graph)
        ac = agent_coupling(ms)
        if coupling_affine:
            info["T4tilde"] = max(
                [spectral_norm(np.hstack([ac.Hd_blocks[i], ms.hc_maps[i].matrix]), seed=seed)
                 for i in range(ms.n_agents)] or [0.0])
        else:
            info["T4tilde"] = info["T4"]
        info["cns"] = graph.consensus_lipschitz
        info["composite_bound"] = max(info["F"], info["T3"], info["T4tilde"], info["cns"])
    else:
        info["composite_bound"] = max(info["F"], info["T3"], info["T4"])

    affine = ms.Fd_affine is not None and ms.Fc_affine is not None and local_affine and coupling_affine
    mv, rmv, dim = _constraint_operator(ms, variant, graph)
    skew = spectral_norm((mv, rmv), dim=dim, seed=seed) if dim else 0.0
    if affine:
        fmv, frmv = _full_operator(ms, variant, mv, rmv)
        info["B"] = spectral_norm((fmv, frmv), dim=dim, seed=seed)
        info["method"] = "spectral norm of the assembled affine map"
    else:
        nl = (max(nl_local) if nl_local and variant != ALTERNATIVE else 0.0) + (max(nl_coup) if nl_coup else 0.0)
        info["B"] = info["F"] + skew + nl
        info["method"] = "pseudogradient constant plus norm of the constraint coupling"
    info["skew"] = skew
    info["B"] = max(info["B"], 1e-12)
    return info


def _constraint_operator(ms, variant, graph):
    """Matvec pair of the linear skew part of ``B`` (affine pieces only)."""
    lay = layout(ms, variant)
    Gc = ms.Gc if ms.Gc is not None else np.zeros((ms.n_theta, ms.n))
    Hc = ms.Hc if ms.Hc is not None else np.zeros((ms.n_rho, ms.n))
    xs, ys = lay["x"], lay["y"]
    ac = agent_coupling(ms) if variant == DISTRIBUTED else None
    if variant == DISTRIBUTED:
        Hd_t = ac.Hd_tilde
        Hc_t = ac.Hc_tilde if ac.Hc_tilde is not None else np.zeros((Hd_t.shape[0], ms.n))
        L = graph.laplacian
        N, nr = ms.n_agents, ms.n_rho

    def mv(w):
        out = np.zeros_like(w)
        x, y = w[xs], w[ys]
        if "mu" in lay:
            mu = w[lay["mu"]]
            out[xs] += ms.Gd.T @ mu
            out[ys] += Gc.T @ mu
            out[lay["mu"]] = -(ms.Gd @ x + Gc @ y)
        lam = w[lay["lam"]]
        if variant == DISTRIBUTED:
            nu = w[lay["nu"]]
            out[xs] += Hd_t.T @ lam
            out[ys] += Hc_t.T @ lam
            out[lay["lam"]] = -(Hd_t @ x + Hc_t @ y) - (L @ nu.reshape(N, nr)).ravel()
            out[lay["nu"]] = (L @ lam.reshape(N, nr)).ravel()
        else:
            out[xs] += ms.Hd.T @ lam
            out[ys] += Hc.T @ lam
            out[lay["lam"]] = -(ms.Hd @ x + Hc @ y)
        return out

    # the operator is skew-symmetric, so its transpose is its negative
    def rmv(w):
        return -mv(w)

    return mv, rmv, lay["dim"]


def _full_operator(ms, variant, mv, rmv):
    lay = layout(ms, variant)
    Kd = ms.Fd_affine[0]
    Q = ms.Fc_affine[0]
    xs, ys = lay["x"], lay["y"]

    def fmv(w):
        out = mv(w)
        out[xs] += Kd @ w[xs]
        out[ys] += Q @ w[ys]
        return out

    def frmv(w):
        out = rmv(w)
        out[xs] += Kd.T @ w[xs]
        out[ys] += Q.T @ w[ys]
        return out

    return fmv, frmv
