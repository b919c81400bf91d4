"""Legendre functions, Bregman distances and backward steps.

Two regularizers are supported block-wise: the Gibbs-Shannon entropy on
probability simplices and the squared Euclidean norm everywhere else.
Both are 1-strongly convex on their domains, so a mixed specification
keeps the modulus ``sigma = 1``.

The module also provides Euclidean projections onto the simple sets
that appear as backward sets (orthants, boxes, halfspaces, simplices and
box-halfspace intersections) and a Dykstra projection onto polytopes.
"""

from dataclasses import dataclass

import numba
import numpy as np

from .errors import ConfigurationError, DomainError, ProjectionError

EUCLIDEAN = "euclidean"
GIBBS_SHANNON = "gibbs_shannon"
_KINDS = (EUCLIDEAN, GIBBS_SHANNON)

# smallest probability kept by the mirror step
INTERIOR_FLOOR = 1e-300


# ---------------------------------------------------------------------------
# set descriptors


def _vec(v, name="vector"):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.ndim != 1:
        raise ConfigurationError(f"{name} must be one-dimensional")
    return v


@dataclass(frozen=True, eq=False)
class Free:
    """The whole space R^dim."""

    dim: int

    def contains(self, v, tol=1e-9):
        return len(v) == self.dim and bool(np.all(np.isfinite(v)))

    def center(self):
        return np.zeros(self.dim)


@dataclass(frozen=True, eq=False)
class NonNegative:
    """The nonnegative orthant of R^dim."""

    dim: int

    def contains(self, v, tol=1e-9):
        return bool(np.all(np.asarray(v) >= -tol))

    def center(self):
        return np.zeros(self.dim)


@dataclass(frozen=True, eq=False)
class Simplex:
    """The probability simplex of R^dim."""

    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError("simplex dimension must be positive")

    def contains(self, v, tol=1e-9):
        v = np.asarray(v)
        return bool(np.all(v >= -tol) and abs(v.sum() - 1.0) <= tol)

    def center(self):
        return np.full(self.dim, 1.0 / self.dim)


@dataclass(frozen=True, eq=False)
class Box:
    """Box ``{v : lower <= v <= upper}``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo, up = _vec(self.lower, "lower"), _vec(self.upper, "upper")
        if lo.shape != up.shape:
            raise ConfigurationError("box bounds have different lengths")
        if np.any(lo > up):
            raise ConfigurationError("empty box: some lower bound exceeds its upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)

    @property
    def dim(self):
        return len(self.lower)

    def contains(self, v, tol=1e-9):
        v = np.asarray(v)
        return bool(np.all(v >= self.lower - tol) and np.all(v <= self.upper + tol))

    def center(self):
        return 0.5 * (self.lower + self.upper)


@dataclass(frozen=True, eq=False)
class Halfspace:
    """Halfspace ``{v : a @ v >= b}``."""

    a: np.ndarray
    b: float

    def __post_init__(self):
        a = _vec(self.a, "normal")
        if not np.any(a != 0):
            raise ConfigurationError("halfspace normal must be nonzero")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))

    @property
    def dim(self):
        return len(self.a)

    def contains(self, v, tol=1e-9):
        return bool(self.a @ v >= self.b - tol)

    def center(self):
        return project_euclidean(self, np.zeros(self.dim))


@dataclass(frozen=True, eq=False)
class BoxHalfspace:
    """Intersection of a box with the halfspace ``{v : a @ v >= b}``."""

    lower: np.ndarray
    upper: np.ndarray
    a: np.ndarray
    b: float

    def __post_init__(self):
        box = Box(self.lower, self.upper)
        a = _vec(self.a, "normal")
        if a.shape != box.lower.shape:
            raise ConfigurationError("halfspace normal does not match the box")
        # the largest value of a @ v over the box decides emptiness
        best = np.where(a > 0, box.upper, box.lower) @ a
        if best < float(self.b) - 1e-12 * max(1.0, abs(float(self.b))):
            raise ConfigurationError("empty set: the halfspace misses the box")
        object.__setattr__(self, "lower", box.lower)
        object.__setattr__(self, "upper", box.upper)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))

    @property
    def dim(self):
        return len(self.lower)

    def contains(self, v, tol=1e-9):
        v = np.asarray(v)
        return bool(
            np.all(v >= self.lower - tol)
            and np.all(v <= self.upper + tol)
            and self.a @ v >= self.b - tol
        )

    def center(self):
        return project_euclidean(self, 0.5 * (self.lower + self.upper))


@dataclass(frozen=True, eq=False)
class Product:
    """Cartesian product of set descriptors, in order."""

    parts: tuple

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))

    @property
    def dim(self):
        return sum(p.dim for p in self.parts)

    def _split(self, v):
        out, k = [], 0
        for p in self.parts:
            out.append(v[k:k + p.dim])
            k += p.dim
        return out

    def contains(self, v, tol=1e-9):
        return all(p.contains(w, tol) for p, w in zip(self.parts, self._split(np.asarray(v))))

    def center(self):
        if not self.parts:
            return np.zeros(0)
        return np.concatenate([p.center() for p in self.parts])


@dataclass(frozen=True, eq=False)
class Polytope:
    """``{z : A z <= b} ∩ box ∩ simplex blocks``, projected by Dykstra.

    ``simplex_blocks`` lists ``(start, length)`` coordinate ranges that lie
    on a probability simplex.
    """

    A: np.ndarray
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    simplex_blocks: tuple = ()
    tol: float = 1e-10

    def __post_init__(self):
        lo, up = _vec(self.lower, "lower"), _vec(self.upper, "upper")
        n = len(lo)
        object.__setattr__(self, "A", np.atleast_2d(np.asarray(self.A, dtype=float)).reshape(-1, n))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float).reshape(-1))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)
        object.__setattr__(self, "simplex_blocks", tuple((int(s), int(m)) for s, m in self.simplex_blocks))

    @property
    def dim(self):
        return len(self.lower)

    def contains(self, v, tol=1e-9):
        v = np.asarray(v)
        ok = np.all(v >= self.lower - tol) and np.all(v <= self.upper + tol)
        ok = ok and (self.A.shape[0] == 0 or np.max(self.A @ v - self.b) <= tol)
        for s, m in self.simplex_blocks:
            ok = ok and np.all(v[s:s + m] >= -tol) and abs(v[s:s + m].sum() - 1) <= tol
        return bool(ok)

    def center(self):
        return project_euclidean(self, np.zeros(self.dim))


# ---------------------------------------------------------------------------
# Euclidean projections


def project_simplex(v):
    """Euclidean projection onto the probability simplex (sort method)."""
    v = np.asarray(v, dtype=float)
    n = len(v)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, n + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    tau = css[rho] / (rho + 1)
    return np.maximum(v - tau, 0.0)


def _project_box_halfspace(lower, upper, a, b, v):
    z = np.clip(v, lower, upper)
    if a @ z >= b:
        return z
    # g(t) = a @ clip(v + t a) is nondecreasing and piecewise linear in t;
    # locate the piece where it crosses b and interpolate exactly
    nz = a != 0
    bp = np.concatenate(((lower - v)[nz] / a[nz], (upper - v)[nz] / a[nz]))
    bp = np.unique(bp[bp > 0])
    vals = np.clip(v[None, :] + bp[:, None] * a[None, :], lower, upper) @ a
    if vals.size == 0 or vals[-1] < b - 1e-12 * max(1.0, abs(b)):
        raise ConfigurationError("empty set: the halfspace misses the box")
    j = int(np.searchsorted(vals, b, side="left"))
    j = min(j, len(bp) - 1)
    t1, g1 = bp[j], vals[j]
    if j == 0:
        t0, g0 = 0.0, a @ z
    else:
        t0, g0 = bp[j - 1], vals[j - 1]
    t = t1 if g1 == g0 else t0 + (b - g0) * (t1 - t0) / (g1 - g0)
    return np.clip(v + t * a, lower, upper)


def project_euclidean(set_descriptor, v):
    """Euclidean projection of ``v`` onto a simple set.

    Parameters
    ----------
    set_descriptor : set descriptor
        One of Free, NonNegative, Box, Halfspace, Simplex, BoxHalfspace,
        Polytope or Product.
    v : array_like
        Point to project.

    Returns
    -------
    numpy.ndarray
        The closest point of the set to ``v``.
    """
    s = set_descriptor
    v = np.asarray(v, dtype=float)
    if v.shape != (s.dim,):
        raise ConfigurationError(f"expected a vector of length {s.dim}, got shape {v.shape}")
    if isinstance(s, Free):
        return v.copy()
    if isinstance(s, NonNegative):
        return np.maximum(v, 0.0)
    if isinstance(s, Box):
        return np.clip(v, s.lower, s.upper)
    if isinstance(s, Halfspace):
        gap = s.b - s.a @ v
        if gap <= 0:
            return v.copy()
        return v + gap / (s.a @ s.a) * s.a
    if isinstance(s, Simplex):
        return project_simplex(v)
    if isinstance(s, BoxHalfspace):
        return _project_box_halfspace(s.lower, s.upper, s.a, s.b, v)
    if isinstance(s, Polytope):
        return project_polytope((s.A, s.b), (s.lower, s.upper), s.simplex_blocks, v, tol=s.tol)
    if isinstance(s, Product):
        if not s.parts:
            return v.copy()
        return np.concatenate([project_euclidean(p, w) for p, w in zip(s.parts, s._split(v))])
    raise ConfigurationError(f"unsupported set descriptor {type(s).__name__}")


# ---------------------------------------------------------------------------
# Dykstra projection onto polytopes


@numba.njit(cache=True)
def _simplex_inplace(x, start, length):
    u = np.sort(x[start:start + length])[::-1]
    css = 0.0
    tau = 0.0
    for k in range(length):
        css += u[k]
        t = (css - 1.0) / (k + 1)
        if u[k] - t > 0:
            tau = t
    for k in range(start, start + length):
        x[k] = max(x[k] - tau, 0.0)


@numba.njit(cache=True, nogil=True)
def _dykstra(v, A, b, lower, upper, seg_start, seg_len, tol, max_iter):
    n = v.shape[0]
    r = A.shape[0]
    norms = np.empty(r)
    for k in range(r):
        norms[k] = A[k] @ A[k]
    x = v.copy()
    p = np.zeros(n)
    q = np.zeros(r)
    x_old = np.empty(n)
    x_set = np.empty(n)
    change = np.inf
    viol = np.inf
    for it in range(1, max_iter + 1):
        x_old[:] = x
        # product of box and simplices
        w = x + p
        for k in range(n):
            x[k] = min(max(w[k], lower[k]), upper[k])
        for s in range(seg_start.shape[0]):
            for k in range(seg_start[s], seg_start[s] + seg_len[s]):
                x[k] = w[k]
            _simplex_inplace(x, seg_start[s], seg_len[s])
        p = w - x
        x_set[:] = x
        # halfspaces A[k] @ z <= b[k]; increments are multiples of A[k]
        for k in range(r):
            s_val = A[k] @ x + q[k] * norms[k]
            t = max(s_val - b[k], 0.0) / norms[k]
            x += (q[k] - t) * A[k]
            q[k] = t
        # a sweep can repeat itself before the product-set and halfspace
        # iterates meet, so their gap is part of the test
        change = 0.0
        gap = 0.0
        for k in range(n):
            change += (x[k] - x_old[k]) ** 2
            gap += (x[k] - x_set[k]) ** 2
        change = max(np.sqrt(change), np.sqrt(gap))
        # the product-set iterate is returned: simplices and box hold exactly
        viol = 0.0
        for k in range(r):
            viol = max(viol, A[k] @ x_set - b[k])
        if change <= tol and viol <= tol:
            return x_set, it, change, viol
    return x_set, -max_iter, change, viol


def project_polytope(halfspaces, box, simplex_blocks, v, tol=1e-10, max_iter=100_000):
    """Euclidean projection onto a polytope by Dykstra's algorithm.

    The polytope is ``{z : A z <= b} ∩ box ∩ (simplex blocks)``. Simplex
    blocks and the box restricted to the remaining coordinates form one
    product set whose projection is exact; every halfspace row is its own
    set.

    Parameters
    ----------
    halfspaces : tuple of (ndarray, ndarray) or None
        Rows ``A`` (r x n) and right-hand side ``b`` (r,).
    box : tuple of (ndarray, ndarray) or None
        Lower and upper bounds (may contain infinities).
    simplex_blocks : sequence of (start, length)
        Coordinate ranges constrained to a probability simplex.
    v : array_like
        Point to project.
    tol : float
        Sweeps stop once successive iterates differ by less than ``tol``,
        the halfspace pass moves the point by less than ``tol`` and no
        halfspace is violated by more than ``tol``. The returned point lies
        exactly in the box and the simplices.
    max_iter : int
        Cap on the number of sweeps.

    Returns
    -------
    numpy.ndarray

    Raises
    ------
    ProjectionError
        If the cap is reached first.
    """
    v = _vec(v, "point")
    n = len(v)
    if tol <= 0:
        raise ConfigurationError("tol must be positive")
    if halfspaces is None:
        A, b = np.zeros((0, n)), np.zeros(0)
    else:
        A = np.atleast_2d(np.asarray(halfspaces[0], dtype=float)).reshape(-1, n)
        b = _vec(halfspaces[1], "rhs").reshape(-1)
        if A.shape[0] != b.shape[0]:
            raise ConfigurationError("halfspace rows and right-hand side differ in length")
    if box is None:
        lower, upper = np.full(n, -np.inf), np.full(n, np.inf)
    else:
        lower = np.broadcast_to(np.asarray(box[0], dtype=float), (n,)).copy()
        upper = np.broadcast_to(np.asarray(box[1], dtype=float), (n,)).copy()
        if np.any(lower > upper):
            raise ConfigurationError("empty box: some lower bound exceeds its upper bound")
    starts = np.array([s for s, _ in simplex_blocks], dtype=np.int64)
    lens = np.array([m for _, m in simplex_blocks], dtype=np.int64)
    extra_rows, extra_rhs = [], []
    for s, m in zip(starts, lens):
        # box bounds on simplex coordinates that cut the simplex become rows
        for k in range(s, s + m):
            if lower[k] > 0:
                row = np.zeros(n)
                row[k] = -1.0
                extra_rows.append(row)
                extra_rhs.append(-lower[k])
            if upper[k] < 1:
                row = np.zeros(n)
                row[k] = 1.0
                extra_rows.append(row)
                extra_rhs.append(upper[k])
        lower[s:s + m] = -np.inf
        upper[s:s + m] = np.inf
    keep = np.any(A != 0, axis=1)
    if np.any(~keep & (b < 0)):
        raise ConfigurationError("infeasible zero row in the halfspace description")
    A, b = A[keep], b[keep]
    if extra_rows:
        A = np.vstack([A, np.array(extra_rows)])
        b = np.concatenate([b, extra_rhs])
    x, it, change, viol = _dykstra(
        v, np.ascontiguousarray(A), b, lower, upper, starts, lens, float(tol), int(max_iter)
    )
    if it < 0:
        raise ProjectionError(
            f"Dykstra projection stopped after {max_iter} sweeps "
            f"(change {change:.3e}, violation {viol:.3e})",
            residual=float(change),
            violation=float(viol),
            iterations=int(max_iter),
        )
    return x


# ---------------------------------------------------------------------------
# Legendre functions and Bregman distances


@dataclass(frozen=True)
class RegularizerSpec:
    """Block-wise assignment of Legendre functions.

    Parameters
    ----------
    blocks : sequence of (kind, dim)
        ``kind`` is ``"euclidean"`` or ``"gibbs_shannon"``.
    strong_convexity_modulus : float
        Modulus of the whole regularizer; 1 for any mixture of the two kinds.
    """

    blocks: tuple
    strong_convexity_modulus: float = 1.0

    def __post_init__(self):
        blocks = tuple((str(k), int(d)) for k, d in self.blocks)
        for kind, dim in blocks:
            if kind not in _KINDS:
                raise ConfigurationError(f"unknown regularizer kind {kind!r}")
            if dim < 0 or (kind == GIBBS_SHANNON and dim < 1):
                raise ConfigurationError("block dimensions must be positive")
        if self.strong_convexity_modulus <= 0:
            raise ConfigurationError("strong convexity modulus must be positive")
        object.__setattr__(self, "blocks", blocks)

    @property
    def dim(self):
        return sum(d for _, d in self.blocks)

    def slices(self):
        k = 0
        for kind, dim in self.blocks:
            yield kind, slice(k, k + dim)
            k += dim

    @classmethod
    def euclidean(cls, dim):
        return cls(((EUCLIDEAN, dim),))

    @classmethod
    def entropy(cls, dim):
        return cls(((GIBBS_SHANNON, dim),))


def _check_length(spec, v):
    v = _vec(v)
    if len(v) != spec.dim:
        raise DomainError(f"expected length {spec.dim}, got {len(v)}")
    return v


def _xlogx(x):
    return np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)


def legendre_value(spec, x):
    """Value of the regularizer, with ``0 ln 0 = 0`` on entropy blocks."""
    x = _check_length(spec, x)
    total = 0.0
    for kind, s in spec.slices():
        xs = x[s]
        if kind == EUCLIDEAN:
            total += 0.5 * xs @ xs
        else:
            if np.any(xs < 0):
                raise DomainError("negative component on an entropy block")
            total += _xlogx(xs).sum()
    return float(total)


def legendre_gradient(spec, x):
    """Gradient of the regularizer at an interior point."""
    x = _check_length(spec, x)
    g = np.empty_like(x)
    for kind, s in spec.slices():
        if kind == EUCLIDEAN:
            g[s] = x[s]
        else:
            if np.any(x[s] <= 0):
                raise DomainError("entropy gradient needs strictly positive components")
            g[s] = np.log(x[s]) + 1.0
    return g


def bregman_distance(spec, x, y):
    """Bregman distance ``phi(x) - phi(y) - <grad phi(y), x - y>``.

    Parameters
    ----------
    spec : RegularizerSpec
    x : array_like
        Point in the domain (nonnegative on entropy blocks).
    y : array_like
        Point in the interior (strictly positive on entropy blocks).

    Returns
    -------
    float
    """
    x = _check_length(spec, x)
    y = _check_length(spec, y)
    total = 0.0
    for kind, s in spec.slices():
        xs, ys = x[s], y[s]
        if kind == EUCLIDEAN:
            r = xs - ys
            total += 0.5 * r @ r
        else:
            if np.any(xs < 0):
                raise DomainError("negative component on an entropy block")
            if np.any(ys <= 0):
                raise DomainError("second argument must lie in the interior of the entropy domain")
            total += (_xlogx(xs) - xs * np.log(ys) - xs + ys).sum()
    return float(max(total, 0.0))


# ---------------------------------------------------------------------------
# backward steps


def mirror_step_simplex(x_prev, d, gamma):
    """Entropic mirror step on the simplex.

    Returns the point with components proportional to
    ``x_prev * exp(-gamma * d)``, evaluated in the log domain.

    Parameters
    ----------
    x_prev : array_like
        Strictly positive probability vector.
    d : array_like
        Finite direction (the reflected forward evaluation).
    gamma : float
        Positive step size.

    Returns
    -------
    numpy.ndarray
    """
    x_prev = _vec(x_prev)
    d = _vec(d)
    if x_prev.shape != d.shape:
        raise DomainError("x_prev and d differ in length")
    if np.any(x_prev <= 0):
        raise DomainError("mirror step needs a strictly positive starting point")
    if not np.all(np.isfinite(d)):
        raise DomainError("mirror step direction is not finite")
    if not gamma > 0:
        raise ConfigurationError("step size must be positive")
    # centering d first makes d and d + c (computed exactly) give identical bits
    z = np.log(x_prev) - gamma * (d - d.max())
    z -= z.max()
    w = np.exp(z)
    w /= w.sum()
    np.maximum(w, INTERIOR_FLOOR, out=w)
    return w / w.sum()


def mirror_step_segments(x_prev, d, gamma, starts):
    """Mirror step applied to consecutive simplex segments at once.

    ``starts`` holds the first index of every segment; the segments tile
    ``x_prev``. ``gamma`` is a scalar or a per-coordinate array constant
    on each segment.
    """
    lens = np.diff(np.append(starts, len(x_prev)))
    z = np.log(x_prev) - gamma * (d - np.repeat(np.maximum.reduceat(d, starts), lens))
    z -= np.repeat(np.maximum.reduceat(z, starts), lens)
    w = np.exp(z)
    w /= np.repeat(np.add.reduceat(w, starts), lens)
    np.maximum(w, INTERIOR_FLOOR, out=w)
    w /= np.repeat(np.add.reduceat(w, starts), lens)
    return w


def backward_step(kind, set_descriptor, x_prev, d, gamma):
    """Single-block backward step.

    Entropy blocks take the mirror step (the set must be a simplex);
    Euclidean blocks project ``x_prev - gamma * d`` onto the set.
    """
    if kind == GIBBS_SHANNON:
        if not isinstance(set_descriptor, Simplex):
            raise ConfigurationError("entropy blocks must be attached to a simplex")
        return mirror_step_simplex(x_prev, d, gamma)
    if kind == EUCLIDEAN:
        return project_euclidean(set_descriptor, np.asarray(x_prev) - gamma * np.asarray(d))
    raise ConfigurationError(f"unknown regularizer kind {kind!r}")

