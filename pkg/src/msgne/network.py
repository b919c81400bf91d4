"""Communication graphs and the synchronous message-exchange harness."""

from dataclasses import dataclass
import json

import numpy as np

from .errors import ConfigurationError, RoundAbort


def laplacian(W):
    """Weighted Laplacian ``diag(W 1) - W``.

    Parameters
    ----------
    W : array_like
        Symmetric, nonnegative weight matrix with zero diagonal.

    Returns
    -------
    numpy.ndarray
    """
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ConfigurationError("weight matrix must be square")
    if not np.array_equal(W, W.T):
        raise ConfigurationError("weight matrix must be symmetric")
    if np.any(W < 0):
        raise ConfigurationError("weights must be nonnegative")
    if np.any(np.diag(W) != 0):
        raise ConfigurationError("weight matrix must have a zero diagonal")
    return np.diag(W.sum(axis=1)) - W


def consensus_lipschitz(W):
    """Twice the largest weighted degree; bounds the norm of the Laplacian."""
    W = np.asarray(W, dtype=float)
    return 2.0 * float(W.sum(axis=1).max())


def is_connected(W):
    W = np.asarray(W)
    n = W.shape[0]
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    stack = [0]
    while stack:
        i = stack.pop()
        for j in np.nonzero(W[i] > 0)[0]:
            if not seen[j]:
                seen[j] = True
                stack.append(int(j))
    return bool(seen.all())


@dataclass(frozen=True, eq=False)
class CommGraph:
    """Weighted undirected communication graph.

    Parameters
    ----------
    weights : array_like
        Symmetric nonnegative matrix with zero diagonal; positive entries
        are edges.
    """

    weights: np.ndarray

    def __post_init__(self):
        W = np.array(self.weights, dtype=float)
        L = laplacian(W)
        if W.shape[0] < 1:
            raise ConfigurationError("a graph needs at least one node")
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "_L", L)
        object.__setattr__(self, "_nbrs", [tuple(int(j) for j in np.nonzero(W[i] > 0)[0])
                                           for i in range(W.shape[0])])

    @property
    def n_nodes(self):
        return self.weights.shape[0]

    @property
    def laplacian(self):
        return self._L

    @property
    def consensus_lipschitz(self):
        return consensus_lipschitz(self.weights)

    @property
    def connected(self):
        return is_connected(self.weights)

    def neighbors(self, i):
        """Neighbors of node ``i`` in ascending order."""
        return self._nbrs[i]

    def edges(self):
        n = self.n_nodes
        return [(i, j, float(self.weights[i, j])) for i in range(n) for j in range(i + 1, n)
                if self.weights[i, j] > 0]

    @classmethod
    def from_edges(cls, n, edges):
        W = np.zeros((n, n))
        for e in edges:
            i, j = int(e[0]), int(e[1])
            w = float(e[2]) if len(e) > 2 else 1.0
            if i == j:
                raise ConfigurationError("self loops are not allowed")
            if not (0 <= i < n and 0 <= j < n):
                raise ConfigurationError(f"edge ({i}, {j}) refers to a missing node")
            if w <= 0:
                raise ConfigurationError("edge weights must be positive")
            W[i, j] = W[j, i] = w
        return cls(W)

    def to_json(self):
        return {"n": self.n_nodes, "edges": [[i, j, w] for i, j, w in self.edges()]}

    @classmethod
    def from_json(cls, data):
        try:
            return cls.from_edges(int(data["n"]), data["edges"])
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed graph description: {exc}") from None


def load_graph(path):
    with open(path) as fh:
        return CommGraph.from_json(json.load(fh))


def save_graph(graph, path):
    with open(path, "w") as fh:
        json.dump(graph.to_json(), fh, indent=2)


# ---------------------------------------------------------------------------
# generators


def ring(n, weight=1.0):
    if n < 2:
        raise ConfigurationError("a ring needs at least two nodes")
    if n == 2:
        return CommGraph.from_edges(2, [(0, 1, weight)])
    return CommGraph.from_edges(n, [(i, (i + 1) % n, weight) for i in range(n)])


def path(n, weight=1.0):
    return CommGraph.from_edges(n, [(i, i + 1, weight) for i in range(n - 1)])


def star(n, weight=1.0):
    """Node 0 is the center."""
    return CommGraph.from_edges(n, [(0, i, weight) for i in range(1, n)])


def complete(n, weight=1.0):
    return CommGraph.from_edges(n, [(i, j, weight) for i in range(n) for j in range(i + 1, n)])


def erdos_renyi(n, p, seed, weights=(1.0, 1.0), max_tries=1000):
    """Connected Erdos-Renyi graph; redraws until the sample is connected.

    Edge weights are uniform on ``weights``.
    """
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        upper = np.triu(rng.random((n, n)) < p, 1)
        W = upper * rng.uniform(weights[0], weights[1], size=(n, n))
        W = W + W.T
        if n == 1 or is_connected(W):
            return CommGraph(W)
    raise ConfigurationError(f"no connected graph found after {max_tries} draws")


def make_graph(name, n, seed=0):
    """Graph generator by name: ring, star, complete, path or erdos_renyi."""
    if name == "ring":
        return ring(n)
    if name == "star":
        return star(n)
    if name == "complete":
        return complete(n)
    if name == "path":
        return path(n)
    if name == "erdos_renyi":
        return erdos_renyi(n, 0.5, seed)
    raise ConfigurationError(f"unknown graph generator {name!r}")


# ---------------------------------------------------------------------------
# synchronous message passing


class Mailboxes:
    """Per-round deposit boxes, one writer per node and round."""

    def __init__(self, n_nodes):
        self.n_nodes = n_nodes
        self._rounds = {}

    def deposit(self, node, round_index, value):
        box = self._rounds.setdefault(round_index, {})
        if node in box:
            raise ConfigurationError(f"node {node} already deposited for round {round_index}")
        box[node] = value

    def collect(self, round_index):
        """Remove and return the deposits of one round."""
        return self._rounds.pop(round_index, {})


def synchronous_round(mailboxes, graph, round_index):
    """Deliver every node its neighbors' values for one round.

    Parameters
    ----------
    mailboxes : Mailboxes
    graph : CommGraph
    round_index : int

    Returns
    -------
    list of list of (int, object)
        Entry ``i`` holds ``(j, value_j)`` for the neighbors ``j`` of
        ``i``, ascending in ``j``. Deposits made for later rounds are not
        touched.

    Raises
    ------
    RoundAbort
        If some node has not deposited for this round.
    """
    deposits = mailboxes.collect(round_index)
    for i in range(graph.n_nodes):
        if i not in deposits:
            raise RoundAbort(i)
    return [[(j, deposits[j]) for j in graph.neighbors(i)] for i in range(graph.n_nodes)]
