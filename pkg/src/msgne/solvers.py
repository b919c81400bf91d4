"""Bregman forward-reflected-backward iteration and the algorithm drivers.

One step of the iteration reads

    omega+ = (grad phi + Gamma A)^{-1}(grad phi(omega) - Gamma (2 B(omega) - B(omega_prev)))

and is realized block by block: entropy blocks take the multiplicative
weights update on their simplex, Euclidean blocks project
``omega - gamma (2 B(omega) - B(omega_prev))`` onto their set. Only one
forward evaluation is needed per step; the reflected term reuses the
previous one.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import os

import numpy as np

from .errors import ConfigurationError
from .network import Mailboxes, synchronous_round
from .operators import (
    ALTERNATIVE, DISTRIBUTED, SEMI_DECENTRALIZED, Iterate, agent_coupling, build_problem,
    check_graph, hc_tilde, hc_tilde_vjp, step_size_bound,
)
from .regularizers import (
    EUCLIDEAN, GIBBS_SHANNON, Box, Free, NonNegative, RegularizerSpec, Simplex,
    mirror_step_segments, project_euclidean, project_polytope,
)

CONVERGED = "converged"
MAX_ITERS = "max_iters"
DIVERGED = "diverged"
DIVERGENCE_BOUND = 1e12


def thread_count():
    """Worker threads for per-agent work, from ``MSGNE_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("MSGNE_THREADS", "1")))
    except ValueError:
        raise ConfigurationError("MSGNE_THREADS must be a positive integer") from None


# ---------------------------------------------------------------------------
# regularizer specifications for a problem


def default_spec(problem, entropy=True):
    """Entropy on simplex blocks (if ``entropy``), Euclidean elsewhere."""
    blocks = []
    for idx, s in problem.backward_sets:
        kind = GIBBS_SHANNON if entropy and isinstance(s, Simplex) else EUCLIDEAN
        blocks.append((kind, s.dim))
    return RegularizerSpec(tuple(blocks))


def _check_spec(problem, spec):
    if len(spec.blocks) != len(problem.backward_sets):
        raise ConfigurationError("regularizer blocks do not match the backward sets")
    for (kind, dim), (idx, s) in zip(spec.blocks, problem.backward_sets):
        if dim != s.dim:
            raise ConfigurationError("regularizer block dimension does not match its set")
        if kind == GIBBS_SHANNON and not isinstance(s, Simplex):
            raise ConfigurationError("entropy blocks must be attached to simplices")


def _as_index(idx):
    if isinstance(idx, slice):
        return np.arange(idx.start, idx.stop)
    return np.asarray(idx)


@dataclass(eq=False)
class _Plan:
    """Grouped backward operations for one (problem, spec) pair."""

    runs: list          # (start, stop, segment starts relative to start) for entropy runs
    clamp: np.ndarray   # coordinates projected on the nonnegative orthant
    free: np.ndarray    # coordinates left unconstrained
    box_idx: np.ndarray
    box_lo: np.ndarray
    box_hi: np.ndarray
    other: list         # (index, set) projected one at a time


def _plan(problem, spec):
    cache = problem.__dict__.setdefault("_plans", {})
    if spec in cache:
        return cache[spec]
    _check_spec(problem, spec)
    gs, clamp, free, box_idx, box_lo, box_hi, other = [], [], [], [], [], [], []
    for (kind, _), (idx, s) in zip(spec.blocks, problem.backward_sets):
        if s.dim == 0:
            continue
        if kind == GIBBS_SHANNON:
            if not isinstance(idx, slice):
                raise ConfigurationError("entropy blocks must be contiguous")
            gs.append((idx.start, idx.stop))
        elif isinstance(s, NonNegative):
            clamp.append(_as_index(idx))
        elif isinstance(s, Free):
            free.append(_as_index(idx))
        elif isinstance(s, Box):
            box_idx.append(_as_index(idx))
            box_lo.append(s.lower)
            box_hi.append(s.upper)
        else:
            other.append((idx, s))
    gs.sort()
    runs = []
    for a, b in gs:
        if runs and runs[-1][1] == a:
            runs[-1][1] = b
            runs[-1][2].append(a)
        else:
            runs.append([a, b, [a]])
    runs = [(a, b, np.array(st, dtype=np.int64) - a) for a, b, st in runs]
    cat = lambda parts, dt=np.int64: np.concatenate(parts).astype(dt) if parts else np.zeros(0, dt)  # noqa: E731
    plan = _Plan(runs, cat(clamp), cat(free), cat(box_idx), cat(box_lo, float), cat(box_hi, float), other)
    cache[spec] = plan
    return plan


def backward(problem, spec, gamma, omega, d):
    """Apply the block-wise backward step to ``omega`` with direction ``d``."""
    plan = _plan(problem, spec)
    out = omega - gamma * d
    for a, b, starts in plan.runs:
        out[a:b] = mirror_step_segments(omega[a:b], d[a:b], gamma[a:b], starts)
    if plan.clamp.size:
        out[plan.clamp] = np.maximum(out[plan.clamp], 0.0)
    if plan.box_idx.size:
        out[plan.box_idx] = np.clip(out[plan.box_idx], plan.box_lo, plan.box_hi)
    for idx, s in plan.other:
        out[idx] = project_euclidean(s, out[idx])
    return out


def bforb_step(problem, spec, gamma, omega, B_prev=None):
    """One B-FoRB step.

    Parameters
    ----------
    problem : SplitProblem
    spec : RegularizerSpec
        One block per backward set of ``problem``.
    gamma : ndarray
        Per-coordinate step sizes (constant on every backward block).
    omega : ndarray
        Current iterate.
    B_prev : ndarray, optional
        Forward evaluation at the previous iterate; ``None`` means the
        previous iterate equals the current one.

    Returns
    -------
    omega_next : ndarray
    B_curr : ndarray
        ``B(omega)``, to be passed as ``B_prev`` at the next step.
    """
    B_curr = problem.forward(omega)
    if B_prev is None:
        B_prev = B_curr
    d = 2.0 * B_curr - B_prev
    return backward(problem, spec, gamma, omega, d), B_curr


# ---------------------------------------------------------------------------
# Lyapunov quantity


def lyapunov_diagnostic(spec, gamma, omega_star, omega_k, omega_km1, B_k, B_km1):
    """Lyapunov value of the B-FoRB iteration.

    ``dist(omega*, omega_k) + (s/4) |omega_k - omega_km1|^2
    + <B_k - B_km1, omega* - omega_k>`` where the distance uses the
    regularizer scaled by ``1/gamma`` and ``s = sigma / max(gamma)``.
    Along an iteration with admissible steps the value does not increase.
    """
    gamma = np.asarray(gamma, dtype=float)
    dist = 0.0
    for kind, s in spec.slices():
        a, b, g = omega_star[s], omega_k[s], gamma[s]
        if kind == EUCLIDEAN:
            dist += np.sum(0.5 * (a - b) ** 2 / g)
        else:
            xlx = np.where(a > 0, a * np.log(np.where(a > 0, a, 1.0) / b), 0.0)
            dist += np.sum((xlx - a + b) / g)
    sigma_hat = spec.strong_convexity_modulus / gamma.max()
    step = omega_k - omega_km1
    return float(dist + 0.25 * sigma_hat * step @ step + (B_k - B_km1) @ (omega_star - omega_k))


# ---------------------------------------------------------------------------
# configuration and reports


@dataclass
class SolveConfig:
    """Solver settings.

    Parameters
    ----------
    gamma : float or array_like, optional
        Per-agent step sizes; ``step_fraction`` times the admissible bound
        when omitted.
    zeta : float, optional
        Coordinator step size; defaults to the (largest) agent step.
    epsilon : float
        Stopping tolerance on ``max |omega_{k+1} - omega_k|``.
    max_iters : int
    regularizer : str or RegularizerSpec
        ``"entropy"`` (entropy on simplices) or ``"euclidean"``.
    trace_every : int
        Record one trace row every this many iterations (and the last).
    check_steps : bool
        Reject step sizes at or above the admissible bound.
    step_fraction : float
        Fraction of the bound used for default steps.
    lipschitz : float, optional
        Overrides the estimated Lipschitz constant.
    omega0 : array_like, optional
        Starting point (default: uniform strategies, centered continuous
        variables, zero multipliers).
    omega_star : array_like, optional
        Known solution; enables the Lyapunov trace.
    record_iterates : bool
        Keep every iterate in the report.
    seed : int
        Seed for the Lipschitz estimates.
    """

    gamma: object = None
    zeta: float | None = None
    epsilon: float = 1e-5
    max_iters: int = 100_000
    regularizer: object = "entropy"
    trace_every: int = 1
    check_steps: bool = True
    step_fraction: float = 0.9
    lipschitz: float | None = None
    omega0: object = None
    omega_star: object = None
    record_iterates: bool = False
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be at least 1")
        if self.trace_every < 1:
            raise ConfigurationError("trace_every must be at least 1")
        if not 0 < self.step_fraction < 1:
            raise ConfigurationError("step_fraction must lie in (0, 1)")


TRACE_COLUMNS = ("iter", "residual_inf", "coupling_violation", "local_violation")


@dataclass(frozen=True, eq=False)
class SolveReport:
    """Outcome of a solve.

    ``residual_trace`` has one row per recorded iteration with columns
    ``iter, residual_inf, coupling_violation, local_violation``; the
    residual and violations refer to the iterate produced by that
    iteration. ``lyapunov_trace`` (when a solution was supplied) holds the
    Lyapunov value at the iterate each recorded iteration started from.
    """

    status: str
    iterations: int
    final_iterate: Iterate
    omega: np.ndarray
    residual_trace: np.ndarray
    lyapunov_trace: np.ndarray | None
    variant: str
    gamma: np.ndarray
    lipschitz: float
    step_bound: float
    spec: RegularizerSpec
    lipschitz_info: dict = field(default_factory=dict)
    iterates: list | None = None

    @property
    def last_residual(self):
        return float(self.residual_trace[-1, 1]) if len(self.residual_trace) else float("nan")

    def write_trace(self, path):
        write_trace(self, path)


def write_trace(report, path):
    """Write the residual trace as CSV with 17 significant digits."""
    cols = list(TRACE_COLUMNS)
    lyap = report.lyapunov_trace
    if lyap is not None:
        cols.append("lyapunov")
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for k, row in enumerate(report.residual_trace):
            vals = [str(int(row[0]))] + [f"{v:.17g}" for v in row[1:]]
            if lyap is not None:
                vals.append(f"{lyap[k]:.17g}")
            fh.write(",".join(vals) + "\n")


def _steps(problem, cfg, spec):
    """Per-coordinate steps and the admissible bound."""
    bound = step_size_bound(problem.lipschitz, spec.strong_convexity_modulus)
    N = problem.ms.n_agents
    gamma = cfg.gamma
    if gamma is None:
        gamma = cfg.step_fraction * bound
    g = np.broadcast_to(np.asarray(gamma, dtype=float), (N,)).copy()
    zeta = cfg.zeta if cfg.zeta is not None else float(g.max())
    if np.any(~np.isfinite(g)) or np.any(g <= 0) or not np.isfinite(zeta) or zeta <= 0:
        raise ConfigurationError("step sizes must be positive and finite")
    if cfg.check_steps and (np.any(g >= bound) or zeta >= bound):
        raise ConfigurationError(
            f"step sizes must stay below {bound:.6g} (Lipschitz constant {problem.lipschitz:.6g})"
        )
    return problem.step_vector(g, zeta), bound


def _spec_for(problem, regularizer):
    if isinstance(regularizer, RegularizerSpec):
        return regularizer
    if regularizer == "entropy":
        return default_spec(problem, entropy=True)
    if regularizer == "euclidean":
        return default_spec(problem, entropy=False)
    raise ConfigurationError(f"unknown regularizer {regularizer!r}")


def initial_point(ms, variant):
    parts = [ms.initial_x(), ms.initial_y()]
    if variant != ALTERNATIVE:
        parts.append(np.zeros(ms.n_theta))
    k = ms.n_rho * (ms.n_agents if variant == DISTRIBUTED else 1)
    parts.append(np.zeros(k))
    if variant == DISTRIBUTED:
        parts.append(np.zeros(k))
    return np.concatenate(parts)


def _violations(ms, lay, omega):
    x, y = omega[lay["x"]], omega[lay["y"]]
    return ms.coupling_violation(x, y), ms.local_violation(x, y)


def iterate_loop(problem, spec, gamma, omega0, cfg, step=None, bound=float("nan")):
    """Run an iteration until stopping and package the report.

    ``step(omega, B_prev) -> (omega_next, B_curr)`` defaults to
    :func:`bforb_step` on ``problem``.
    """
    ms, lay = problem.ms, problem.layout
    if step is None:
        step = lambda w, Bp: bforb_step(problem, spec, gamma, w, Bp)  # noqa: E731
    omega = np.array(omega0, dtype=float)
    omega_prev = omega.copy()
    star = None if cfg.omega_star is None else np.asarray(cfg.omega_star, dtype=float)
    B_prev = None
    rows, lyap, iterates = [], [], ([omega.copy()] if cfg.record_iterates else None)
    status = MAX_ITERS
    k = 0
    for k in range(1, cfg.max_iters + 1):
        omega_next, B_curr = step(omega, B_prev)
        if star is not None:
            lyap_val = lyapunov_diagnostic(spec, gamma, star, omega, omega_prev, B_curr,
                                           B_curr if B_prev is None else B_prev)
        finite = np.all(np.isfinite(omega_next)) and np.all(np.isfinite(B_curr))
        if not finite or np.max(np.abs(omega_next), initial=0.0) > DIVERGENCE_BOUND:
            status = DIVERGED
            rows.append((k, float("inf"), float("nan"), float("nan")))
            if star is not None:
                lyap.append(lyap_val)
            break
        r = float(np.max(np.abs(omega_next - omega), initial=0.0))
        done = r <= cfg.epsilon
        if done or k % cfg.trace_every == 0 or k == cfg.max_iters:
            cv, lv = _violations(ms, lay, omega_next)
            rows.append((k, r, cv, lv))
            if star is not None:
                lyap.append(lyap_val)
        omega_prev, omega, B_prev = omega, omega_next, B_curr
        if iterates is not None:
            iterates.append(omega.copy())
        if done:
            status = CONVERGED
            break
    trace = np.array(rows, dtype=float).reshape(-1, 4)
    omega.setflags(write=False)
    trace.setflags(write=False)
    return SolveReport(
        status=status,
        iterations=k,
        final_iterate=Iterate.from_vector(ms, problem.variant, omega, cached_forward=B_prev),
        omega=omega,
        residual_trace=trace,
        lyapunov_trace=np.array(lyap) if star is not None else None,
        variant=problem.variant,
        gamma=gamma,
        lipschitz=problem.lipschitz,
        step_bound=bound,
        spec=spec,
        lipschitz_info=dict(problem.lipschitz_info),
        iterates=iterates,
    )


def _start(problem, cfg):
    if cfg.omega0 is None:
        return initial_point(problem.ms, problem.variant)
    w = np.array(cfg.omega0, dtype=float)
    if w.shape != (problem.dim,):
        raise ConfigurationError(f"starting point must have length {problem.dim}")
    return w


def run_generic(problem, cfg):
    """B-FoRB on an assembled split problem with the configured regularizer."""
    spec = _spec_for(problem, cfg.regularizer)
    gamma, bound = _steps(problem, cfg, spec)
    return iterate_loop(problem, spec, gamma, _start(problem, cfg), cfg, bound=bound)


# ---------------------------------------------------------------------------
# drivers


def run_algorithm1(ms, cfg=None):
    """Semi-decentralized B-FoRB.

    Agents update ``x_i`` by the entropic mirror step and ``y_i``, ``mu_i``
    by projected steps; the coordinator updates the shared multiplier
    ``lam`` with step ``zeta`` and broadcasts it.
    """
    cfg = cfg or SolveConfig()
    problem = build_problem(ms, SEMI_DECENTRALIZED, lipschitz=cfg.lipschitz, seed=cfg.seed)
    return run_generic(problem, cfg)


def _agent_map(fn, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def run_alternative(ms, cfg=None):
    """Forward-reflected-backward method with local constraints in the backward step.

    Every agent projects ``(x_i, y_i) - gamma_i (2 xi_i - xi_i_prev)`` onto
    its local feasible set ``Omega_i`` (Dykstra), where
    ``xi_i = (f_i + H_i^dT lam, grad J_i^c + grad h_i^cT lam)``; the
    coordinator updates ``lam`` as in the semi-decentralized method. The
    regularizer is Euclidean throughout.
    """
    cfg = cfg or SolveConfig(regularizer="euclidean")
    if cfg.regularizer != "euclidean" and not isinstance(cfg.regularizer, RegularizerSpec):
        cfg = SolveConfig(**{**cfg.__dict__, "regularizer": "euclidean"})
    problem = build_problem(ms, ALTERNATIVE, lipschitz=cfg.lipschitz, seed=cfg.seed)
    spec = default_spec(problem, entropy=False)
    gamma_vec, bound = _steps(problem, cfg, spec)
    lay = problem.layout
    N = ms.n_agents
    polys = [s for _, s in problem.backward_sets[:N]]
    g_agent = np.array([gamma_vec[lay["x"]][ms.x_slices[i]][0] for i in range(N)])
    zeta = gamma_vec[lay["lam"]][0] if ms.n_rho else 0.0
    threads = thread_count()
    xs, ys, ls = lay["x"], lay["y"], lay["lam"]

    def forward(w):
        x, y, lam = w[xs], w[ys], w[ls]
        fd, fc = ms.Fd(x), ms.Fc(y)
        xi = []
        for i in range(N):
            sx, sy = ms.x_slices[i], ms.y_slices[i]
            h = ms.hc_maps[i]
            xi.append((fd[sx] + ms.Hd[:, sx].T @ lam, fc[sy] + h.jacobian(y[sy]).T @ lam))
        load = ms.rho - ms.Hd @ x - ms.hc(y)
        return xi, load

    def flat(xi, load):
        out = np.empty(lay["dim"])
        for i, (fx, fy) in enumerate(xi):
            out[xs][ms.x_slices[i]] = fx
            out[ys][ms.y_slices[i]] = fy
        out[ls] = load
        return out

    def step(w, B_prev):
        xi, load = forward(w)
        B_curr = flat(xi, load)
        if B_prev is None:
            B_prev = B_curr
        x, y, lam = w[xs], w[ys], w[ls]
        prev_x, prev_y = B_prev[xs], B_prev[ys]

        def agent(i):
            sx, sy = ms.x_slices[i], ms.y_slices[i]
            fx, fy = xi[i]
            v = np.concatenate([x[sx] - g_agent[i] * (2 * fx - prev_x[sx]),
                                y[sy] - g_agent[i] * (2 * fy - prev_y[sy])])
            return project_euclidean(polys[i], v)

        new = _agent_map(agent, list(range(N)), threads)
        out = np.empty_like(w)
        for i, z in enumerate(new):
            m_i = ms.x_slices[i].stop - ms.x_slices[i].start
            out[xs][ms.x_slices[i]] = z[:m_i]
            out[ys][ms.y_slices[i]] = z[m_i:]
        out[ls] = np.maximum(lam - zeta * (2 * load - B_prev[ls]), 0.0)
        return out, B_curr

    return iterate_loop(problem, spec, gamma_vec, _start(problem, cfg), cfg, step=step, bound=bound)


def run_algorithm2(ms, graph, cfg=None, mode="message_passing"):
    """Distributed B-FoRB with per-agent multipliers and Laplacian consensus.

    Each agent keeps its own copy ``lam_i`` of the coupling multiplier
    and an auxiliary ``nu_i``. In every round the agents exchange
    ``(lam_i, nu_i)`` with their graph neighbors only, through the
    synchronous mailbox harness, and update

    * ``lam_i`` with the row ``rho/N - H_i^d x_i - h_i^c(y_i) - sum_j w_ij (nu_i - nu_j)``,
      projected on the nonnegative orthant;
    * ``nu_i`` with the row ``sum_j w_ij (lam_i - lam_j)``, unprojected.

    ``mode="stacked"`` evaluates the same forward map in one piece (used
    to cross-check the message-passing implementation).
    """
    cfg = cfg or SolveConfig()
    if mode not in ("message_passing", "stacked"):
        raise ConfigurationError(f"unknown mode {mode!r}")
    check_graph(ms, graph)
    problem = build_problem(ms, DISTRIBUTED, graph=graph, lipschitz=cfg.lipschitz, seed=cfg.seed)
    spec = _spec_for(problem, cfg.regularizer)
    gamma, bound = _steps(problem, cfg, spec)
    if mode == "stacked":
        return iterate_loop(problem, spec, gamma, _start(problem, cfg), cfg, bound=bound)

    lay = problem.layout
    N, nr = ms.n_agents, ms.n_rho
    ac = agent_coupling(ms)
    mail = Mailboxes(N)
    rounds = iter(range(10**18))
    xs, ys, ms_, ls, ns = lay["x"], lay["y"], lay["mu"], lay["lam"], lay["nu"]
    rho_share = ms.rho / N
    W = graph.weights

    def forward(w):
        x, y, mu = w[xs], w[ys], w[ms_]
        lam = w[ls].reshape(N, nr)
        nu = w[ns].reshape(N, nr)
        k = next(rounds)
        for i in range(N):
            mail.deposit(i, k, (lam[i].copy(), nu[i].copy()))
        inbox = synchronous_round(mail, graph, k)
        # consensus terms from neighbor messages only
        lap_nu = np.zeros((N, nr))
        lap_lam = np.zeros((N, nr))
        for i in range(N):
            for j, (lam_j, nu_j) in inbox[i]:
                lap_nu[i] += W[i, j] * (nu[i] - nu_j)
                lap_lam[i] += W[i, j] * (lam[i] - lam_j)
        out = np.empty_like(w)
        lam_flat = w[ls]
        out[xs] = ms.Fd(x) + ms.Gd.T @ mu + ac.Hd_tilde.T @ lam_flat
        out[ys] = ms.Fc(y) + ms.gc_vjp(y, mu) + hc_tilde_vjp(ms, y, lam_flat)
        out[ms_] = ms.theta - ms.Gd @ x - ms.gc(y)
        loads = (ac.Hd_tilde @ x + hc_tilde(ms, y)).reshape(N, nr)
        out[ls] = (rho_share[None, :] - loads - lap_nu).ravel()
        out[ns] = lap_lam.ravel()
        return out

    def step(w, B_prev):
        B_curr = forward(w)
        if B_prev is None:
            B_prev = B_curr
        return backward(problem, spec, gamma, w, 2.0 * B_curr - B_prev), B_curr

    return iterate_loop(problem, spec, gamma, _start(problem, cfg), cfg, step=step, bound=bound)


def dual_consensus_gap(report, ms):
    """Largest ``|lam_i - lam_j|`` over agent pairs of a distributed report."""
    lam = np.asarray(report.final_iterate.lam)
    if lam.ndim != 2 or lam.size == 0:
        return 0.0
    return float(np.max(lam.max(axis=0) - lam.min(axis=0)))
