"""Equilibrium certificates, audits and brute-force oracles."""

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError
from .operators import DISTRIBUTED, SEMI_DECENTRALIZED, SplitProblem, build_problem
from .solvers import bforb_step, default_spec


@dataclass(frozen=True)
class EquilibriumCertificate:
    """KKT-based quality measures of a candidate solution.

    ``exploitability`` is ``None`` unless the game is a plain finite game.
    """

    fixed_point_residual_inf: float
    coupling_violation_inf: float
    local_violation_inf: float
    complementarity_gap: float
    exploitability: float | None = None

    def to_dict(self):
        return asdict(self)


def kkt_residual(problem, spec=None, gamma=None, omega=None):
    """Certificate of a stacked iterate.

    Parameters
    ----------
    problem : SplitProblem or MsGnep
        An MsGnep is wrapped in its semi-decentralized problem.
    spec : RegularizerSpec, optional
        Entropy on simplices by default.
    gamma : float or ndarray, optional
        Per-coordinate steps (default: 0.9 of the admissible bound).
    omega : ndarray

    Notes
    -----
    The fixed-point residual is ``|omega - step(omega)|_inf`` for one
    B-FoRB step with a stationary cache (``omega_prev = omega``); it
    vanishes exactly at zeros of ``A + B``.
    """
    if not isinstance(problem, SplitProblem):
        problem = build_problem(problem, SEMI_DECENTRALIZED)
    if omega is None:
        raise ConfigurationError("an iterate is required")
    omega = np.asarray(omega, dtype=float)
    ms, lay = problem.ms, problem.layout
    spec = spec or default_spec(problem)
    if gamma is None:
        gamma = 0.9 / (2.0 * problem.lipschitz)
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), omega.shape)
    nxt, _ = bforb_step(problem, spec, gamma, omega, None)
    x, y = omega[lay["x"]], omega[lay["y"]]
    comp = 0.0
    if "mu" in lay and ms.n_theta:
        slack = ms.theta - ms.Gd @ x - ms.gc(y)
        comp = max(comp, float(np.max(np.abs(omega[lay["mu"]] * slack))))
    if ms.n_rho:
        lam = omega[lay["lam"]]
        if problem.variant == DISTRIBUTED:
            lam = lam.reshape(ms.n_agents, ms.n_rho).mean(axis=0)
        slack = ms.rho - ms.Hd @ x - ms.hc(y)
        comp = max(comp, float(np.max(np.abs(lam * slack))))
    expl = exploitability(ms, x) if ms.is_finite_game else None
    return EquilibriumCertificate(
        fixed_point_residual_inf=float(np.max(np.abs(nxt - omega), initial=0.0)),
        coupling_violation_inf=ms.coupling_violation(x, y),
        local_violation_inf=ms.local_violation(x, y),
        complementarity_gap=comp,
        exploitability=expl,
    )


def exploitability(ms, x):
    """Sum over agents of expected cost minus best pure-response cost.

    Only defined for finite games without continuous variables or
    constraints.
    """
    if not ms.is_finite_game:
        raise ConfigurationError("exploitability needs a finite game without constraints")
    x = np.asarray(x, dtype=float)
    f = ms.Fd(x)
    total = 0.0
    for st, sz in zip(ms.simplex_starts, ms.simplex_sizes):
        fi, xi = f[st:st + sz], x[st:st + sz]
        total += float(fi @ xi - fi.min())
    return max(total, 0.0)


def grid_search_equilibrium(ms, resolution=1e-3):
    """Least-exploitable profile on a grid (two players, at most three actions).

    Returns ``(x, exploitability)``.
    """
    sizes = list(ms.simplex_sizes)
    if len(sizes) != 2 or max(sizes) > 3:
        raise ConfigurationError("grid search covers two players with at most three actions")
    k = int(round(1.0 / resolution))

    def grid(m):
        if m == 1:
            return np.ones((1, 1))
        if m == 2:
            p = np.arange(k + 1) / k
            return np.column_stack([p, 1 - p])
        # coarser grid for three actions keeps the product tractable
        kk = min(k, 100)
        pts = [(a / kk, b / kk, (kk - a - b) / kk) for a in range(kk + 1) for b in range(kk + 1 - a)]
        return np.array(pts)

    g1, g2 = grid(sizes[0]), grid(sizes[1])
    K, k0 = ms.Fd_affine
    s1, s2 = ms.x_slices
    # f_1 = K12 x2 + k1, f_2 = K21 x1 + k2 (no self terms in a finite game)
    f1 = g2 @ K[s1, s2].T + k0[s1]          # (n2, m1)
    f2 = g1 @ K[s2, s1].T + k0[s2]          # (n1, m2)
    e1 = np.einsum("bj,aj->ab", f1, g1) - f1.min(axis=1)[None, :]
    e2 = np.einsum("aj,bj->ab", f2, g2) - f2.min(axis=1)[:, None]
    tot = e1 + e2
    a, b = np.unravel_index(np.argmin(tot), tot.shape)
    return np.concatenate([g1[a], g2[b]]), float(tot[a, b])


@dataclass(frozen=True)
class MonotonicitySample:
    """Smallest ``<F(u) - F(v), u - v>`` seen; ``pair`` certifies a failure."""

    minimum: float
    pair: tuple | None = None

    @property
    def failed(self):
        return self.pair is not None


def monotonicity_sample(F, sampler, n_pairs=1000, seed=0, threshold=-1e-8):
    """Sample pairs and record the smallest monotonicity inner product.

    Parameters
    ----------
    F : callable
    sampler : callable
        ``sampler(rng)`` returns a domain point.
    n_pairs : int
    seed : int
    threshold : float
        A minimum below this value is reported with its witness pair.
    """
    rng = np.random.default_rng(seed)
    best, pair = np.inf, None
    for _ in range(n_pairs):
        u, v = sampler(rng), sampler(rng)
        val = float((F(u) - F(v)) @ (u - v))
        if val < best:
            best = val
            if val < threshold:
                pair = (u, v)
    return MonotonicitySample(best, pair)


def round_to_pure(ms, x):
    """Most likely action of every discrete block, lowest index on ties.

    Returns a list (one entry per agent) of integer arrays with one action
    vector per discrete block of that agent.
    """
    x = np.asarray(x, dtype=float)
    out = []
    for agent, sl in zip(ms.game.agents, ms.x_slices):
        xi = x[sl]
        k = 0
        picks = []
        for block in agent.action_blocks:
            j = int(np.argmax(xi[k:k + len(block)]))
            picks.append(block[j])
            k += len(block)
        out.append(np.array(picks))
    return out


def finite_difference_check(fun, grad, point, h=1e-6):
    """Largest error between ``grad`` and central differences of ``fun``.

    The error of coordinate ``j`` is ``|fd_j - g_j| / max(1, |g_j|)``.
    """
    if not 1e-8 <= h <= 1e-4:
        raise ConfigurationError("h must lie in [1e-8, 1e-4]")
    p = np.asarray(point, dtype=float)
    g = np.atleast_1d(np.asarray(grad(p), dtype=float))
    err = 0.0
    for j in range(len(p)):
        e = np.zeros_like(p)
        e[j] = h
        fd = (fun(p + e) - fun(p - e)) / (2 * h)
        err = max(err, abs(fd - g[j]) / max(1.0, abs(g[j])))
    return float(err)


def sample_actions(ms, x, n_samples, seed=0):
    """Draw integer action indices from the strategy blocks of ``x``.

    Returns an ``(n_samples, n_blocks)`` array of within-block indices.
    """
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=float)
    cols = []
    for st, sz in zip(ms.simplex_starts, ms.simplex_sizes):
        p = np.clip(x[st:st + sz], 0.0, None)
        cols.append(rng.choice(sz, size=n_samples, p=p / p.sum()))
    return np.column_stack(cols)


def coupling_audit(ms, x, y, n_samples=10_000, seed=0, atol=1e-12):
    """Monte-Carlo check of the coupling constraints in expectation.

    Samples pure actions from ``x``, forms the realized coupling loads
    ``H^d e(a) + h^c(y)`` and compares their empirical mean with ``rho``.
    Returns ``(mean, standard_error, ok)`` where ``ok`` means every row
    satisfies ``mean <= rho + 3 standard_error + atol``. Rows without a
    discrete part have zero spread, so ``atol`` should cover the
    violation an iterate is allowed at stopping (``epsilon / zeta`` for
    the B-FoRB drivers).
    """
    idx = sample_actions(ms, x, n_samples, seed)
    starts = ms.simplex_starts
    hc = ms.hc(np.asarray(y, dtype=float))
    loads = np.tile(hc, (n_samples, 1))
    for b, st in enumerate(starts):
        loads += ms.Hd[:, st + idx[:, b]].T
    mean = loads.mean(axis=0)
    se = loads.std(axis=0, ddof=1) / np.sqrt(n_samples)
    return mean, se, bool(np.all(mean <= ms.rho + 3 * se + atol))


def pwa_cost_oracle(agent, epsilon=1e-9):
    """Brute-force oracle for the big-M rows of one piecewise-affine agent.

    Returns ``oracle(y) -> (cost, pattern)``: the cheapest ``1'z`` over all
    binary patterns ``a in {0,1}^{3p}`` feasible at ``y``, or
    ``(inf, None)`` when none is. For a fixed pattern every ``z_j``
    appears in four rows only, so its smallest feasible value is the
    largest of its lower bounds.
    """
    from .game_model import enumerate_actions, pwa_rows

    Gd_fn, Gc, theta, _ = pwa_rows(agent, epsilon)
    p = agent.p
    acts = enumerate_actions(3 * p)
    D = np.array([Gd_fn(a) for a in acts])          # (patterns, rows)
    Z = Gc[:, 1:]
    free = ~np.any(Z != 0, axis=1)
    zrows = [(r, int(np.nonzero(Z[r])[0][0])) for r in np.nonzero(~free)[0]]

    def oracle(y):
        rhs = theta[None, :] - D - Gc[:, 0][None, :] * y
        tol = 1e-12 * max(1.0, abs(y))
        ok = np.all(rhs[:, free] >= -tol, axis=1)
        z_lo = np.full((len(acts), p), -np.inf)
        z_hi = np.full((len(acts), p), np.inf)
        for r, j in zrows:
            coef = Z[r, j]
            if coef > 0:
                z_hi[:, j] = np.minimum(z_hi[:, j], rhs[:, r] / coef)
            else:
                z_lo[:, j] = np.maximum(z_lo[:, j], rhs[:, r] / coef)
        ok &= np.all(z_lo <= z_hi + tol, axis=1)
        if not np.any(ok):
            return np.inf, None
        cost = np.where(ok, z_lo.sum(axis=1), np.inf)
        k = int(np.argmin(cost))
        return float(cost[k]), acts[k]

    return oracle


def pwa_min_cost(agent, y, epsilon=1e-9):
    """One-off evaluation of :func:`pwa_cost_oracle`."""
    return pwa_cost_oracle(agent, epsilon)(y)
