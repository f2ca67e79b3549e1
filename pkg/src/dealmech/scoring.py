"""Proper scoring rules built from convex functions.

A convex ``g`` on the probability simplex together with a subgradient
oracle gives the tangent-plane rule

    S(p, w) = g(p) + g'(p) . (e_w - p)

whose expected score at the truth is exactly ``g(p)`` and never larger
anywhere else. In the binary case this is ``S(p, 1) = g(p) + (1 - p) g'(p)``
and ``S(p, 0) = g(p) - p g'(p)``.

Binary functions (:class:`ConvexFn`) take the probability of state 1 and
are expected to accept numpy arrays elementwise; simplex functions
(:class:`SimplexConvexFn`) take one vector at a time.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from .errors import NotConvexError, SimplexError

CONVEX = "convex"
STRICTLY_CONVEX = "strictly_convex"
NON_CONVEX = "non_convex"

SIMPLEX_SUM_TOL = 1e-9
SIMPLEX_NEG_TOL = 1e-12
SUBGRAD_TOL = 1e-12


@dataclass(frozen=True)
class ConvexFn:
    """A function on [0, 1] with a subgradient oracle.

    ``strictness`` is the caller's claim; :func:`verify_convex` checks it.
    ``non_convex`` exists so the tangent construction can be forced through
    for negative demonstrations.
    """

    eval: Callable
    subgrad: Callable
    strictness: str = CONVEX
    name: str = ""

    def __call__(self, p):
        return self.eval(p)


@dataclass(frozen=True)
class SimplexConvexFn:
    """A function on the ``state_count``-simplex with a subgradient oracle."""

    state_count: int
    eval: Callable[[np.ndarray], float]
    subgrad: Callable[[np.ndarray], np.ndarray]
    strictness: str = CONVEX
    name: str = ""

    def __call__(self, p):
        return self.eval(p)


def check_simplex(p, n: int | None = None) -> np.ndarray:
    """Validate ``p`` as a probability vector and return it as an array.

    Entries down to ``-1e-12`` are clamped to zero; anything more negative,
    or a sum further than ``1e-9`` from one, is rejected. No renormalization.
    """
    arr = np.asarray(p, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise SimplexError(f"expected a non-empty probability vector, got shape {arr.shape}")
    if n is not None and arr.size != n:
        raise SimplexError(f"expected {n} states, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise SimplexError(f"non-finite probability in {arr.tolist()}")
    if np.any(arr < -SIMPLEX_NEG_TOL):
        raise SimplexError(f"negative probability in {arr.tolist()}")
    if abs(arr.sum() - 1.0) > SIMPLEX_SUM_TOL:
        raise SimplexError(f"probabilities sum to {float(arr.sum()):.12g}, not 1")
    return np.clip(arr, 0.0, None)


def check_probability(p) -> float:
    p = float(p)
    if not np.isfinite(p) or p < -SIMPLEX_NEG_TOL or p > 1.0 + SIMPLEX_NEG_TOL:
        raise SimplexError(f"probability {p!r} outside [0, 1]")
    return min(max(p, 0.0), 1.0)


def simplex_grid(n: int, resolution: int) -> np.ndarray:
    """All points of the n-simplex with coordinates in multiples of 1/(resolution-1).

    Rows are in lexicographic order of their integer compositions, so the
    ordering is stable across runs. ``n == 1`` yields the single point [1].
    """
    if n < 1:
        raise ValueError("simplex dimension must be positive")
    if n == 1:
        return np.ones((1, 1))
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    steps = resolution - 1
    rows = []
    # stars and bars: choose n-1 bar positions among steps+n-1 slots
    for bars in combinations(range(steps + n - 1), n - 1):
        prev = -1
        parts = []
        for b in bars:
            parts.append(b - prev - 1)
            prev = b
        parts.append(steps + n - 1 - prev - 1)
        rows.append(parts)
    return np.asarray(rows, dtype=float) / steps


def subgrad_of_pointwise_max(linear_pieces: Sequence, p):
    """Slope of the first piece attaining ``max_k slope_k . p + intercept_k``."""
    if len(linear_pieces) == 0:
        raise ValueError("need at least one linear piece")
    values = [np.dot(slope, p) + intercept for slope, intercept in linear_pieces]
    return linear_pieces[int(np.argmax(values))][0]


def pointwise_max_fn(linear_pieces: Sequence[tuple[float, float]], name: str = "") -> ConvexFn:
    """Vectorized binary ConvexFn for the upper envelope of scalar lines.

    Ties go to the lowest piece index, matching :func:`subgrad_of_pointwise_max`.
    """
    if len(linear_pieces) == 0:
        raise ValueError("need at least one linear piece")
    slopes = np.array([s for s, _ in linear_pieces], dtype=float)
    intercepts = np.array([c for _, c in linear_pieces], dtype=float)

    def values(p):
        p = np.asarray(p, dtype=float)
        return np.multiply.outer(p, slopes) + intercepts

    def ev(p):
        return values(p).max(axis=-1)

    def sg(p):
        return slopes[values(p).argmax(axis=-1)]

    return ConvexFn(ev, sg, CONVEX, name)


def subgradient_violation(g: ConvexFn, points: int = 101):
    """Largest ``g(p) + g'(p)(q - p) - g(q)`` over a uniform grid of pairs.

    Returns ``(violation, p, q)``; a convex ``g`` gives a value <= ~0.
    """
    grid = np.linspace(0.0, 1.0, points)
    vals = np.asarray(g.eval(grid), dtype=float)
    slopes = np.asarray(g.subgrad(grid), dtype=float)
    # rows: tangent point p, columns: q
    tangent = vals[:, None] + slopes[:, None] * (grid[None, :] - grid[:, None])
    gap = tangent - vals[None, :]
    k = int(np.argmax(gap))
    i, j = divmod(k, points)
    return float(gap[i, j]), float(grid[i]), float(grid[j])


def strict_margin(g: ConvexFn, points: int = 101) -> float:
    """Smallest ``g(q) - tangent_p(q)`` over grid pairs with ``p != q``."""
    grid = np.linspace(0.0, 1.0, points)
    vals = np.asarray(g.eval(grid), dtype=float)
    slopes = np.asarray(g.subgrad(grid), dtype=float)
    tangent = vals[:, None] + slopes[:, None] * (grid[None, :] - grid[:, None])
    gap = vals[None, :] - tangent
    np.fill_diagonal(gap, np.inf)
    return float(gap.min())


def verify_convex(g: ConvexFn, points: int = 101, tol: float = SUBGRAD_TOL) -> None:
    """Raise :class:`NotConvexError` unless ``g`` passes the grid subgradient test."""
    violation, p, q = subgradient_violation(g, points)
    if violation > tol:
        raise NotConvexError(
            f"{g.name or 'function'} violates the subgradient inequality at "
            f"p={p:.6g}, q={q:.6g} by {violation:.3g}",
            witness=(p, q, violation),
        )
    if g.strictness == STRICTLY_CONVEX and strict_margin(g, points) <= 0.0:
        raise NotConvexError(f"{g.name or 'function'} is not strictly convex on the grid")


def simplex_subgradient_violation(g: SimplexConvexFn, resolution: int = 11):
    """Simplex analogue of :func:`subgradient_violation`: ``(violation, p, q)``."""
    grid = simplex_grid(g.state_count, resolution)
    vals = np.array([g.eval(x) for x in grid])
    grads = np.array([np.asarray(g.subgrad(x), dtype=float) for x in grid])
    # tangent[i, j] = g(x_i) + grad_i . (x_j - x_i)
    tangent = vals[:, None] + grads @ grid.T - np.sum(grads * grid, axis=1)[:, None]
    gap = tangent - vals[None, :]
    k = int(np.argmax(gap))
    i, j = divmod(k, len(grid))
    return float(gap[i, j]), grid[i], grid[j]


@dataclass(frozen=True)
class BinaryScoringRule:
    """Tangent rule of a binary ConvexFn. Reports are P(state 1)."""

    g: ConvexFn

    def score(self, p, omega):
        p = np.asarray(p, dtype=float) if np.ndim(p) else float(p)
        return self.g.eval(p) + (omega - p) * self.g.subgrad(p)

    def expected(self, report, truth):
        """``S(report; truth)``; elementwise over arrays, no validation."""
        return truth * self.score(report, 1) + (1.0 - truth) * self.score(report, 0)

    @property
    def state_count(self) -> int:
        return 2


@dataclass(frozen=True)
class SimplexScoringRule:
    """Savage rule of a SimplexConvexFn. States are indexed 0..n-1."""

    g: SimplexConvexFn

    @property
    def state_count(self) -> int:
        return self.g.state_count

    def scores(self, p) -> np.ndarray:
        """Score of report ``p`` in every state, as a vector."""
        p = check_simplex(p, self.state_count)
        grad = np.asarray(self.g.subgrad(p), dtype=float)
        if grad.shape != p.shape:
            raise SimplexError(f"subgradient has shape {grad.shape}, expected {p.shape}")
        return self.g.eval(p) + grad - float(grad @ p)

    def score(self, p, omega: int) -> float:
        if not 0 <= omega < self.state_count:
            raise SimplexError(f"state index {omega} out of range for {self.state_count} states")
        return float(self.scores(p)[omega])


def make_binary_rule(g: ConvexFn, *, allow_nonconvex: bool = False) -> BinaryScoringRule:
    """Tangent scoring rule of ``g``.

    The convexity claim on ``g`` is trusted; see :func:`verify_convex`.
    ``allow_nonconvex`` forces the construction for ``non_convex`` functions.
    """
    if not isinstance(g, ConvexFn):
        raise TypeError(f"expected a ConvexFn, got {type(g).__name__}")
    if g.strictness == NON_CONVEX and not allow_nonconvex:
        raise NotConvexError(f"{g.name or 'function'} is flagged non-convex")
    return BinaryScoringRule(g)


def make_simplex_rule(g: SimplexConvexFn, *, allow_nonconvex: bool = False) -> SimplexScoringRule:
    if g.strictness == NON_CONVEX and not allow_nonconvex:
        raise NotConvexError(f"{g.name or 'function'} is flagged non-convex")
    return SimplexScoringRule(g)


def _as_distribution(x, n: int) -> np.ndarray:
    if n == 2 and np.ndim(x) == 0:
        q = check_probability(x)
        return np.array([1.0 - q, q])
    return check_simplex(x, n)


def expected_score(rule, report, truth) -> float:
    """``sum_w truth_w * S(report, w)``.

    For binary rules, ``report`` and ``truth`` may be given either as the
    probability of state 1 or as ``(P(0), P(1))`` vectors.
    """
    n = rule.state_count
    r = _as_distribution(report, n)
    t = _as_distribution(truth, n)
    if isinstance(rule, BinaryScoringRule):
        return float(t[1] * rule.score(r[1], 1) + t[0] * rule.score(r[1], 0))
    return float(t @ rule.scores(r))


def finite_difference_gradient(f: Callable[[np.ndarray], float], p, step: float = 1e-6) -> np.ndarray:
    """Central differences of ``f`` along each coordinate axis at ``p``.

    Evaluation points may leave the simplex by ``step``; ``f`` must extend
    smoothly there.
    """
    p = np.asarray(p, dtype=float)
    grad = np.empty_like(p)
    for k in range(p.size):
        e = np.zeros_like(p)
        e[k] = step
        grad[k] = (f(p + e) - f(p - e)) / (2.0 * step)
    return grad
