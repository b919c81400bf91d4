"""JSON interchange format for games.

Layout::

    {
      "name": "...",
      "rho": [...],
      "coupling": {"Hd": [per-agent matrix], "Hc": [per-agent matrix]},
      "agents": [
        {
          "actions": [[0], [1]],
          "action_blocks": [[[0], [1]], [[0], [1]]],
          "y_box": {"lower": [...], "upper": [...]},
          "y_set": {"kind": "box_halfspace", ...},
          "Gd": [[...]], "Gc": [[...]], "theta": [...],
          "constraints": {"generator": "activation_bounds", "params": {...}},
          "cost": {"kind": "tensor" | "linear_coupled" | "zero" | "quadratic_continuous",
                   "data": ...}
        }
      ]
    }

``action_blocks`` replaces ``actions`` for agents with several discrete
blocks and ``y0`` optionally fixes the starting continuous point.
``cost`` may also be a list, typically one discrete and one
``quadratic_continuous`` entry. A ``quadratic_continuous`` cost gives the
agent's gradient rows ``grad_{y_i} J_i = Q_i y + q_i`` over the stacked
``y``. Matrices are row-major nested lists. Python's float repr keeps 17
significant digits, so reals round-trip exactly.
"""

import json

import numpy as np

from .errors import ConfigurationError
from .game_model import (
    AffineMap, AgentSpec, GmiGame, LinearCoupledCost, TensorCost, ZeroCost, relax_constraints,
)
from .regularizers import Box, BoxHalfspace, Free, Product


def _mat(v, rows=None, cols=None, what="matrix"):
    a = np.asarray(v, dtype=float)
    if a.size == 0 and rows is not None and cols is not None:
        return np.zeros((rows, cols))
    a = np.atleast_2d(a)
    if (rows is not None and a.shape[0] != rows) or (cols is not None and a.shape[1] != cols):
        raise ConfigurationError(f"{what} has shape {a.shape}, expected ({rows}, {cols})")
    return a


def _set_from_json(d):
    kind = d.get("kind", "box")
    if kind == "box":
        return Box(d["lower"], d["upper"])
    if kind == "box_halfspace":
        return BoxHalfspace(d["lower"], d["upper"], d["a"], d["b"])
    if kind == "product":
        return Product(tuple(_set_from_json(p) for p in d["parts"]))
    raise ConfigurationError(f"unknown set kind {kind!r}")


def _set_to_json(s):
    if isinstance(s, Box):
        return {"kind": "box", "lower": s.lower.tolist(), "upper": s.upper.tolist()}
    if isinstance(s, BoxHalfspace):
        return {"kind": "box_halfspace", "lower": s.lower.tolist(), "upper": s.upper.tolist(),
                "a": s.a.tolist(), "b": s.b}
    if isinstance(s, Product):
        return {"kind": "product", "parts": [_set_to_json(p) for p in s.parts]}
    raise ConfigurationError(f"sets of type {type(s).__name__} cannot be written")


def activation_bounds(actions, lower, upper):
    """Rows ``lower * a - y <= 0`` and ``y - upper * a <= 0``, componentwise.

    Ties each continuous component to the matching integer component, as
    in on/off devices or market participation.
    """
    A = np.asarray(actions, dtype=float).T          # (dim, m)
    k = A.shape[0]
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (k,))
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (k,))
    Gd = np.vstack([lower[:, None] * A, -upper[:, None] * A])
    Gc = np.vstack([-np.eye(k), np.eye(k)])
    return Gd, Gc, np.zeros(2 * k)


CONSTRAINT_GENERATORS = {"activation_bounds": activation_bounds}


def _costs(entry):
    c = entry.get("cost", {"kind": "zero"})
    return c if isinstance(c, list) else [c]


def game_from_dict(data):
    """Build a :class:`GmiGame` from the parsed JSON layout."""
    try:
        raw_agents = data["agents"]
    except (KeyError, TypeError):
        raise ConfigurationError("a game file needs an 'agents' list") from None
    rho = np.asarray(data.get("rho", []), dtype=float).ravel()
    n_rho = len(rho)
    coupling = data.get("coupling", {}) or {}
    Hd_all, Hc_all = coupling.get("Hd"), coupling.get("Hc")
    N = len(raw_agents)
    if Hd_all is not None and len(Hd_all) != N or Hc_all is not None and len(Hc_all) != N:
        raise ConfigurationError("coupling matrices must be given for every agent")
    agents, quad = [], []
    n_total = 0
    for i, d in enumerate(raw_agents):
        if "action_blocks" in d:
            blocks = [np.asarray(b).reshape(len(b), -1) for b in d["action_blocks"]]
            acts = blocks
        else:
            acts = np.asarray(d["actions"])
            if acts.ndim == 1:
                acts = acts.reshape(-1, 1)
            blocks = [acts]
        m = sum(len(b) for b in blocks)
        if "y_set" in d:
            Y = _set_from_json(d["y_set"])
        elif "y_box" in d:
            Y = Box(d["y_box"]["lower"], d["y_box"]["upper"])
        else:
            Y = Free(0)
        n = Y.dim
        if "constraints" in d:
            gen = d["constraints"]
            fn = CONSTRAINT_GENERATORS.get(gen.get("generator"))
            if fn is None:
                raise ConfigurationError(f"unknown constraint generator {gen.get('generator')!r}")
            if len(blocks) != 1:
                raise ConfigurationError("constraint generators need a single action block")
            Gd, Gc, theta = fn(acts, **gen.get("params", {}))
        else:
            theta = np.asarray(d.get("theta", []), dtype=float).ravel()
            Gd = _mat(d.get("Gd", []), len(theta), m, "Gd")
            Gc = _mat(d.get("Gc", []), len(theta), n, "Gc")
        Hd = _mat(Hd_all[i], n_rho, m, "Hd") if Hd_all is not None else np.zeros((n_rho, m))
        Hc = _mat(Hc_all[i], n_rho, n, "Hc") if Hc_all is not None else np.zeros((n_rho, n))
        dcost = ZeroCost()
        qc = None
        for c in _costs(d):
            kind, cd = c.get("kind"), c.get("data")
            if kind == "zero":
                continue
            if kind == "tensor":
                dcost = TensorCost(np.asarray(cd, dtype=float))
            elif kind == "linear_coupled":
                dcost = LinearCoupledCost(cd["own"], {int(j): M for j, M in cd.get("coupling", {}).items()})
            elif kind == "quadratic_continuous":
                qc = (np.atleast_2d(np.asarray(cd["Q"], dtype=float)), np.asarray(cd["q"], dtype=float).ravel())
            else:
                raise ConfigurationError(f"unknown cost kind {kind!r}")
        if n and qc is None:
            raise ConfigurationError(f"agent {i} has continuous variables but no continuous cost")
        quad.append(qc)
        agents.append(AgentSpec(
            actions=acts,
            continuous_set=Y,
            local_discrete=Gd,
            local_continuous=AffineMap(Gc),
            theta=theta,
            coupling_discrete=Hd,
            coupling_continuous=AffineMap(Hc),
            discrete_cost=dcost,
            initial_continuous=d.get("y0"),
            name=d.get("name", f"agent{i}"),
        ))
        n_total += n
    affine = None
    if n_total:
        rows, offs = [], []
        for a, qc in zip(agents, quad):
            if a.n == 0:
                continue
            Q, q = qc
            if Q.shape != (a.n, n_total) or q.shape != (a.n,):
                raise ConfigurationError("quadratic_continuous data must give n_i rows over the stacked y")
            rows.append(Q)
            offs.append(q)
        affine = (np.vstack(rows), np.concatenate(offs))
    return GmiGame(agents=agents, rho=rho, continuous_affine=affine, name=data.get("name", ""),
                   metadata={"source": "file"})


def game_to_dict(game):
    """Inverse of :func:`game_from_dict` for affine, table-cost games."""
    if any(a.n for a in game.agents) and game.continuous_affine is None:
        raise ConfigurationError("only affine continuous pseudogradients can be written")
    Q, q = game.continuous_affine if game.continuous_affine is not None else (None, None)
    agents, Hd_all, Hc_all = [], [], []
    k = 0
    for a in game.agents:
        Gd, Hd = relax_constraints(a, game.n_rho)
        g = a.local_continuous
        h = a.coupling_continuous
        for mp in (g, h):
            if mp is not None and not isinstance(mp, (AffineMap, np.ndarray, list)):
                raise ConfigurationError("only affine constraint maps can be written")
        Gc = np.zeros((a.n_theta, a.n)) if g is None else _as_matrix(g, a.n_theta, a.n)
        Hc = np.zeros((game.n_rho, a.n)) if h is None else _as_matrix(h, game.n_rho, a.n)
        if (g is not None and isinstance(g, AffineMap) and np.any(g.offset)) or (
                h is not None and isinstance(h, AffineMap) and np.any(h.offset)):
            raise ConfigurationError("constraint maps with offsets cannot be written")
        entry = {
            "name": a.name,
            "Gd": Gd.tolist(), "Gc": Gc.tolist(), "theta": a.theta.tolist(),
        }
        if len(a.action_blocks) == 1:
            entry["actions"] = a.action_blocks[0].tolist()
        else:
            entry["action_blocks"] = [b.tolist() for b in a.action_blocks]
        if a.n:
            entry["y_set"] = _set_to_json(a.continuous_set)
        if a.initial_continuous is not None:
            entry["y0"] = np.asarray(a.initial_continuous, dtype=float).tolist()
        costs = []
        c = a.discrete_cost
        if isinstance(c, TensorCost):
            costs.append({"kind": "tensor", "data": c.table.tolist()})
        elif isinstance(c, LinearCoupledCost):
            costs.append({"kind": "linear_coupled", "data": {
                "own": c.own.tolist(), "coupling": {str(j): M.tolist() for j, M in c.coupling.items()}}})
        elif not isinstance(c, ZeroCost):
            raise ConfigurationError(f"costs of type {type(c).__name__} cannot be written")
        if a.n:
            costs.append({"kind": "quadratic_continuous",
                          "data": {"Q": Q[k:k + a.n].tolist(), "q": q[k:k + a.n].tolist()}})
            k += a.n
        entry["cost"] = costs or [{"kind": "zero"}]
        agents.append(entry)
        Hd_all.append(Hd.tolist())
        Hc_all.append(Hc.tolist())
    return {
        "name": game.name,
        "rho": game.rho.tolist(),
        "coupling": {"Hd": Hd_all, "Hc": Hc_all},
        "agents": agents,
    }


def _as_matrix(mp, rows, cols):
    if isinstance(mp, AffineMap):
        return mp.matrix.reshape(rows, cols)
    return np.asarray(mp, dtype=float).reshape(rows, cols)


def load_game(path):
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"malformed game file: {exc}") from None
    try:
        return game_from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"malformed game file: {exc!r}") from None


def dump_game(game, path):
    with open(path, "w") as fh:
        json.dump(game_to_dict(game), fh, indent=1)
