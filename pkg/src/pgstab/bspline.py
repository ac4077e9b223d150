"""B-spline spaces on uniform meshes with Gaussian quadrature.

One- and two-dimensional tensor-product spline spaces with either maximal
smoothness (C^{p-1}) or C0 separators at element boundaries
(Lagrange-equivalent), optional zero boundary constraints, and point
evaluation of basis values and first derivatives.

Evaluation at an interior element boundary follows the left-limit
convention: the point is attributed to the element on its left (except at
the domain's left endpoint). Values are continuous so this only matters
for derivatives of C0-separated spaces.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "SMOOTH",
    "C0",
    "DomainError",
    "BSplineSpace1D",
    "BSplineSpace2D",
    "QuadratureRule",
    "eval_basis",
    "eval_basis_deriv",
    "gauss_rule",
    "collocation_matrix",
    "evaluate",
    "evaluate_grid",
]

SMOOTH = "smooth"
C0 = "c0"

_BOUNDARY_DROPS = {
    "none": (0, 0),
    "zero-left": (1, 0),
    "zero-right": (0, 1),
    "zero-both": (1, 1),
}


class DomainError(ValueError):
    """Evaluation point outside the space domain."""


@dataclass(frozen=True)
class BSplineSpace1D:
    """Uniform-mesh B-spline space of polynomial degree ``order``.

    ``continuity`` is either ``"smooth"`` (C^{order-1} across elements) or
    ``"c0"`` (knots of multiplicity ``order`` at interior element
    boundaries). ``boundary`` drops the endpoint-interpolating basis
    functions: one of ``"none"``, ``"zero-left"``, ``"zero-right"``,
    ``"zero-both"``.
    """

    order: int
    elements: int
    continuity: str = SMOOTH
    a: float = 0.0
    b: float = 1.0
    boundary: str = "none"

    def __post_init__(self):
        if self.order < 1:
            raise ValueError(f"order must be >= 1, got {self.order}")
        if self.elements < 1:
            raise ValueError(f"elements must be >= 1, got {self.elements}")
        if self.continuity not in (SMOOTH, C0):
            raise ValueError(f"unknown continuity {self.continuity!r}")
        if self.boundary not in _BOUNDARY_DROPS:
            raise ValueError(f"unknown boundary constraint {self.boundary!r}")
        if not self.a < self.b:
            raise ValueError("domain endpoints must satisfy a < b")
        if self.dim < 1:
            raise ValueError("boundary constraints leave an empty space")

    @cached_property
    def h(self) -> float:
        return (self.b - self.a) / self.elements

    @cached_property
    def breakpoints(self) -> np.ndarray:
        return np.linspace(self.a, self.b, self.elements + 1)

    @cached_property
    def knots(self) -> np.ndarray:
        p, n = self.order, self.elements
        mult = 1 if self.continuity == SMOOTH else p
        inner = np.repeat(self.breakpoints[1:-1], mult)
        return np.concatenate(
            [np.full(p + 1, self.a), inner, np.full(p + 1, self.b)]
        )

    @cached_property
    def dim_full(self) -> int:
        """Dimension before boundary constraints."""
        p, n = self.order, self.elements
        return n + p if self.continuity == SMOOTH else n * p + 1

    @property
    def _drops(self):
        return _BOUNDARY_DROPS[self.boundary]

    @property
    def dim(self) -> int:
        left, right = self._drops
        return self.dim_full - left - right

    @cached_property
    def _element_spans(self) -> np.ndarray:
        # knot-span index of each element: last knot position equal to the
        # element's left breakpoint
        spans = np.searchsorted(self.knots, self.breakpoints[:-1], side="right") - 1
        return spans.astype(np.intp)

    def element_of(self, x: float) -> int:
        """Element index containing x, left-limit at interior breakpoints."""
        if not (self.a <= x <= self.b):
            raise DomainError(f"x={x} outside domain [{self.a}, {self.b}]")
        t = (x - self.a) / self.h
        e = int(np.floor(t))
        if e >= 1 and x <= self.breakpoints[e]:
            e -= 1
        return min(max(e, 0), self.elements - 1)


def _basis_and_deriv(knots, p, span, x):
    """Nonzero basis values and first derivatives at x for the given span.

    Triangular-table recurrence (The NURBS Book, A2.3 restricted to first
    derivatives). Returns two arrays of length p+1 for global basis indices
    span-p .. span.
    """
    ndu = np.empty((p + 1, p + 1))
    left = np.empty(p + 1)
    right = np.empty(p + 1)
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = x - knots[span + 1 - j]
        right[j] = knots[span + j] - x
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved
    values = ndu[:, p].copy()
    derivs = np.zeros(p + 1)
    if p >= 1:
        for r in range(p + 1):
            d = 0.0
            if r >= 1:
                d += ndu[r - 1, p - 1] / ndu[p, r - 1]
            if r <= p - 1:
                d -= ndu[r, p - 1] / ndu[p, r]
            derivs[r] = p * d
    return values, derivs


def _eval(space: BSplineSpace1D, x: float):
    e = space.element_of(x)
    span = int(space._element_spans[e])
    values, derivs = _basis_and_deriv(space.knots, space.order, span, x)
    left_drop, _ = space._drops
    first = span - space.order - left_drop
    # trim basis functions removed by boundary constraints
    lo = max(0, -first)
    hi = min(len(values), space.dim - first)
    return first + lo, values[lo:hi], derivs[lo:hi]


def eval_basis(space: BSplineSpace1D, x: float):
    """Values of all basis functions nonzero at x.

    Returns ``(first_index, values)`` in the constrained numbering; all
    functions outside the returned window are zero at x.
    """
    first, values, _ = _eval(space, x)
    return first, values


def eval_basis_deriv(space: BSplineSpace1D, x: float):
    """First derivatives of all basis functions nonzero at x.

    At interior C0 separator knots the derivative is the left limit.
    """
    first, _, derivs = _eval(space, x)
    return first, derivs


@dataclass(frozen=True)
class BSplineSpace2D:
    """Tensor product of two 1D spaces; dofs ordered lexicographically,
    x-fastest: global index = iy * dim_x + ix."""

    x: BSplineSpace1D
    y: BSplineSpace1D

    @property
    def dim(self) -> int:
        return self.x.dim * self.y.dim

    def index(self, ix: int, iy: int) -> int:
        return iy * self.x.dim + ix


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre points/weights on the reference element [-1, 1]."""

    points: np.ndarray
    weights: np.ndarray


def gauss_rule(q: int) -> QuadratureRule:
    """Gauss-Legendre rule with q points; exact to polynomial degree 2q-1."""
    if not 1 <= q <= 10:
        raise ValueError(f"quadrature order must be in [1, 10], got {q}")
    pts, wts = np.polynomial.legendre.leggauss(q)
    return QuadratureRule(pts, wts)


def collocation_matrix(space: BSplineSpace1D, points, deriv: int = 0) -> np.ndarray:
    """Dense (len(points) x dim) matrix of basis values (or derivatives)."""
    points = np.atleast_1d(np.asarray(points, dtype=float))
    out = np.zeros((len(points), space.dim))
    for row, x in enumerate(points):
        first, vals, ders = _eval(space, x)
        out[row, first : first + len(vals)] = ders if deriv else vals
    return out


def evaluate(space: BSplineSpace1D, coeffs, x: float, deriv: int = 0) -> float:
    """Evaluate the spline with the given coefficients at a point."""
    first, vals, ders = _eval(space, x)
    window = ders if deriv else vals
    return float(np.dot(window, np.asarray(coeffs)[first : first + len(window)]))


def evaluate_grid(space2d: BSplineSpace2D, coeffs, xs, ys) -> np.ndarray:
    """Evaluate a 2D spline on a tensor grid; returns (len(ys), len(xs))."""
    bx = collocation_matrix(space2d.x, xs)
    by = collocation_matrix(space2d.y, ys)
    c = np.asarray(coeffs).reshape(space2d.y.dim, space2d.x.dim)
    return by @ c @ bx.T
