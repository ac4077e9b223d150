"""Model problems: 1D/2D Eriksson-Johnson and 2D Helmholtz.

Exact solutions, manufactured data, and error norms. All boundary-layer
exponentials are evaluated with nonpositive exponents only (arguments of
the form (x-1)/eps with x <= 1), so no overflow can occur for small eps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import bspline
from .bspline import BSplineSpace1D, BSplineSpace2D, C0, SMOOTH

__all__ = [
    "ProblemSpec",
    "ErrorReport",
    "ej1d",
    "ej2d",
    "helmholtz",
    "exact_ej1d",
    "exact_ej1d_deriv",
    "exact_ej2d",
    "exact_ej2d_grad",
    "helmholtz_data",
    "helmholtz_grad",
    "error_norms",
]

EJ1D = "ej1d"
EJ2D = "ej2d"
HELMHOLTZ = "helmholtz"


@dataclass(frozen=True)
class ProblemSpec:
    """Configuration of one model problem.

    ``mesh`` is ``(n,)`` in 1D and ``(nx, ny)`` in 2D. ``gram_kind`` selects
    the test-space inner product: ``"h1"`` (full H1) or ``"h1-semi"``.
    ``inflow_mode`` is the k in the EJ2D inflow data sin(k*pi*y).
    """

    kind: str
    mesh: tuple
    trial_order: int
    test_order: int
    test_continuity: str
    param_range: tuple
    gram_kind: str
    inflow_mode: int = 1

    def __post_init__(self):
        if self.kind == EJ2D and not self.test_order > self.trial_order:
            raise ValueError("EJ2D requires test order q > trial order p")
        if self.kind == EJ2D and self.inflow_mode not in (1, 2):
            raise ValueError("EJ2D inflow mode must be 1 or 2")

    # -- parameter handling -------------------------------------------------

    @property
    def param_name(self) -> str:
        return "kappa" if self.kind == HELMHOLTZ else "epsilon"

    def param_in_range(self, mu: float) -> bool:
        lo, hi = self.param_range
        return lo <= mu <= hi

    def theta(self) -> list:
        """Affine parameter maps, theta_0 == 1."""
        if self.kind == HELMHOLTZ:
            return [lambda mu: 1.0, lambda mu: mu * mu]
        return [lambda mu: 1.0, lambda mu: mu]

    # -- discrete spaces ----------------------------------------------------

    def trial_space(self):
        p = self.trial_order
        if self.kind == EJ1D:
            # u(1) = 0 is the only strong constraint; u(0) is free (Robin)
            return BSplineSpace1D(p, self.mesh[0], SMOOTH, boundary="zero-right")
        nx, ny = self.mesh
        return BSplineSpace2D(
            BSplineSpace1D(p, nx, SMOOTH), BSplineSpace1D(p, ny, SMOOTH)
        )

    def test_space(self):
        q, cont = self.test_order, self.test_continuity
        if self.kind == EJ1D:
            return BSplineSpace1D(q, self.mesh[0], cont, boundary="zero-right")
        nx, ny = self.mesh
        return BSplineSpace2D(
            BSplineSpace1D(q, nx, cont, boundary="zero-both"),
            BSplineSpace1D(q, ny, cont, boundary="zero-both"),
        )

    def galerkin_space(self):
        """Equal trial/test pair for the unstable Galerkin baseline.

        1D follows the Fig.-2-style baseline: the test-space order and
        continuity on both sides. 2D uses the trial-space order.
        """
        if self.kind == EJ1D:
            full = BSplineSpace1D(
                self.test_order, self.mesh[0], self.test_continuity,
                boundary="zero-right",
            )
            return full, full
        nx, ny = self.mesh
        p = self.trial_order
        full = BSplineSpace2D(
            BSplineSpace1D(p, nx, SMOOTH), BSplineSpace1D(p, ny, SMOOTH)
        )
        constrained = BSplineSpace2D(
            BSplineSpace1D(p, nx, SMOOTH, boundary="zero-both"),
            BSplineSpace1D(p, ny, SMOOTH, boundary="zero-both"),
        )
        return full, constrained

    # -- continuous data ----------------------------------------------------

    def exact(self, mu: float) -> Callable:
        if self.kind == EJ1D:
            return lambda x: exact_ej1d(mu, x)
        if self.kind == EJ2D:
            k = self.inflow_mode
            return lambda x, y: exact_ej2d(mu, k, x, y)
        return helmholtz_data(mu).u_exact

    def exact_grad(self, mu: float) -> Callable:
        if self.kind == EJ1D:
            return lambda x: exact_ej1d_deriv(mu, x)
        if self.kind == EJ2D:
            k = self.inflow_mode
            return lambda x, y: exact_ej2d_grad(mu, k, x, y)
        return helmholtz_grad(mu)

    def boundary_data(self, mu: float):
        """Dirichlet data g(x, y) on the boundary, or None if homogeneous."""
        if self.kind == EJ1D:
            return None
        if self.kind == EJ2D:
            k = self.inflow_mode

            def g(x, y):
                return np.where(np.asarray(x) == 0.0, np.sin(k * np.pi * np.asarray(y)), 0.0)

            return g
        return helmholtz_data(mu).g

    def source(self, mu: float):
        """Volume source f, or None when the load has no volume term."""
        if self.kind == HELMHOLTZ:
            return helmholtz_data(mu).f
        return None


def ej1d(elements=16, trial_order=1, test_order=2, test_continuity=C0,
         gram_kind="weighted-h1") -> ProblemSpec:
    """1D Eriksson-Johnson: -eps u'' + u' = 0, Robin at 0, u(1) = 0."""
    return ProblemSpec(EJ1D, (elements,), trial_order, test_order,
                       test_continuity, (1e-6, 1.0), gram_kind)


def ej2d(nx=26, ny=10, trial_order=2, test_order=3, test_continuity=SMOOTH,
         inflow_mode=1, gram_kind="h1-semi") -> ProblemSpec:
    """2D Eriksson-Johnson: -eps Lap(u) + u_x = 0, inflow sin(k pi y)."""
    return ProblemSpec(EJ2D, (nx, ny), trial_order, test_order,
                       test_continuity, (1e-6, 1.0), gram_kind, inflow_mode)


def helmholtz(nx=20, ny=20, trial_order=2, test_order=2, test_continuity=C0,
              gram_kind="h1") -> ProblemSpec:
    """2D Helmholtz: Lap(u) + kappa^2 u = f, manufactured solution."""
    return ProblemSpec(HELMHOLTZ, (nx, ny), trial_order, test_order,
                       test_continuity, (1.0, 10.0), gram_kind)


# -- exact solutions ---------------------------------------------------------


def exact_ej1d(eps: float, x):
    """u(x) = 1 - exp((x-1)/eps)."""
    x = np.asarray(x, dtype=float)
    return 1.0 - np.exp((x - 1.0) / eps)


def exact_ej1d_deriv(eps: float, x):
    x = np.asarray(x, dtype=float)
    return -np.exp((x - 1.0) / eps) / eps


def _ej2d_roots(eps: float, k: int):
    s = math.sqrt(1.0 + 4.0 * eps * eps * k * k * math.pi * math.pi)
    r1 = (1.0 + s) / (2.0 * eps)
    r2 = (1.0 - s) / (2.0 * eps)
    return r1, r2


def exact_ej2d(eps: float, k: int, x, y):
    """Separated solution sin(k pi y) * phi(x) with phi(0)=1, phi(1)=0.

    phi(x) = (exp(r1 (x-1)) - exp(r2 (x-1))) / (exp(-r1) - exp(-r2)) with
    r_{1,2} = (1 +- sqrt(1 + 4 eps^2 k^2 pi^2)) / (2 eps); r1 > 0 >= r2 so
    all exponents stay bounded for x in [0, 1].
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r1, r2 = _ej2d_roots(eps, k)
    denom = math.exp(-r1) - math.exp(-r2)
    phi = (np.exp(r1 * (x - 1.0)) - np.exp(r2 * (x - 1.0))) / denom
    return np.sin(k * np.pi * y) * phi


def exact_ej2d_grad(eps: float, k: int, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r1, r2 = _ej2d_roots(eps, k)
    denom = math.exp(-r1) - math.exp(-r2)
    e1 = np.exp(r1 * (x - 1.0))
    e2 = np.exp(r2 * (x - 1.0))
    phi = (e1 - e2) / denom
    dphi = (r1 * e1 - r2 * e2) / denom
    return (np.sin(k * np.pi * y) * dphi,
            k * np.pi * np.cos(k * np.pi * y) * phi)


class HelmholtzData(NamedTuple):
    f: Callable
    g: Callable
    u_exact: Callable


def helmholtz_data(kappa: float) -> HelmholtzData:
    """Manufactured data for u = sin(kappa pi x) sin(kappa pi y).

    f = Lap(u) + kappa^2 u = kappa^2 (1 - 2 pi^2) u; g = u on the boundary
    (identically zero for integer kappa).
    """
    kp = kappa * np.pi
    scale = kappa * kappa * (1.0 - 2.0 * np.pi * np.pi)

    def u_exact(x, y):
        return np.sin(kp * np.asarray(x)) * np.sin(kp * np.asarray(y))

    def f(x, y):
        return scale * u_exact(x, y)

    return HelmholtzData(f=f, g=u_exact, u_exact=u_exact)


def helmholtz_grad(kappa: float):
    kp = kappa * np.pi

    def grad(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return (kp * np.cos(kp * x) * np.sin(kp * y),
                kp * np.sin(kp * x) * np.cos(kp * y))

    return grad


# -- error norms --------------------------------------------------------------


@dataclass
class ErrorReport:
    """Quadrature error norms plus an overshoot metric from a sampling grid.

    ``samples`` holds columns (x, y, u_h, u_exact); y is zero in 1D.
    ``overshoot`` = max(0, max sampled u_h - max sampled exact).
    """

    l2: float
    h1_semi: float
    overshoot: float
    exact_l2: float
    samples: np.ndarray

    @property
    def relative_l2(self) -> float:
        return self.l2 / self.exact_l2 if self.exact_l2 > 0 else self.l2


def _fd_grad(exact, x, y, step=1e-6):
    dx = (exact(x + step, y) - exact(x - step, y)) / (2 * step)
    dy = (exact(x, y + step) - exact(x, y - step)) / (2 * step)
    return dx, dy


def error_norms(coefficients, space, exact, exact_grad=None,
                sample_points: int = 101) -> ErrorReport:
    """L2 / H1-seminorm errors via per-element Gauss quadrature of order
    q+2 (q = space order), and overshoot on a uniform sampling grid."""
    coefficients = np.asarray(coefficients, dtype=float)
    if isinstance(space, BSplineSpace1D):
        return _error_norms_1d(coefficients, space, exact, exact_grad, sample_points)
    return _error_norms_2d(coefficients, space, exact, exact_grad, sample_points)


def _error_norms_1d(coeffs, space, exact, exact_grad, sample_points):
    if len(coeffs) != space.dim:
        raise ValueError("coefficient vector does not match space dimension")
    rule = bspline.gauss_rule(min(space.order + 2, 10))
    l2 = h1 = ex2 = 0.0
    for e in range(space.elements):
        x0 = space.breakpoints[e]
        xs = x0 + (rule.points + 1) * space.h / 2
        ws = rule.weights * space.h / 2
        for x, w in zip(xs, ws):
            uh = bspline.evaluate(space, coeffs, x)
            duh = bspline.evaluate(space, coeffs, x, deriv=1)
            ue = float(exact(x))
            if exact_grad is None:
                due = float((exact(x + 1e-6) - exact(x - 1e-6)) / 2e-6)
            else:
                due = float(exact_grad(x))
            l2 += w * (uh - ue) ** 2
            h1 += w * (duh - due) ** 2
            ex2 += w * ue * ue
    grid = np.linspace(space.a, space.b, sample_points)
    uh_grid = bspline.collocation_matrix(space, grid) @ coeffs
    ue_grid = np.asarray(exact(grid), dtype=float)
    overshoot = max(0.0, float(uh_grid.max() - ue_grid.max()))
    samples = np.column_stack([grid, np.zeros_like(grid), uh_grid, ue_grid])
    return ErrorReport(math.sqrt(l2), math.sqrt(h1), overshoot, math.sqrt(ex2), samples)


def _error_norms_2d(coeffs, space, exact, exact_grad, sample_points):
    if len(coeffs) != space.dim:
        raise ValueError("coefficient vector does not match space dimension")
    sx, sy = space.x, space.y
    q = min(max(sx.order, sy.order) + 2, 10)
    rule = bspline.gauss_rule(q)
    c = coeffs.reshape(sy.dim, sx.dim)

    # quadrature nodes for all elements per direction
    def nodes(sp):
        pts = (sp.breakpoints[:-1, None] + (rule.points[None, :] + 1) * sp.h / 2).ravel()
        wts = np.tile(rule.weights * sp.h / 2, sp.elements)
        return pts, wts

    xs, wx = nodes(sx)
    ys, wy = nodes(sy)
    bx = bspline.collocation_matrix(sx, xs)
    by = bspline.collocation_matrix(sy, ys)
    dbx = bspline.collocation_matrix(sx, xs, deriv=1)
    dby = bspline.collocation_matrix(sy, ys, deriv=1)

    uh = by @ c @ bx.T
    uhx = by @ c @ dbx.T
    uhy = dby @ c @ bx.T
    xg, yg = np.meshgrid(xs, ys)
    ue = np.asarray(exact(xg, yg), dtype=float)
    if exact_grad is None:
        uex, uey = _fd_grad(exact, xg, yg)
    else:
        uex, uey = exact_grad(xg, yg)
    w2 = np.outer(wy, wx)
    l2 = float(np.sum(w2 * (uh - ue) ** 2))
    h1 = float(np.sum(w2 * ((uhx - uex) ** 2 + (uhy - uey) ** 2)))
    ex2 = float(np.sum(w2 * ue * ue))

    gx = np.linspace(sx.a, sx.b, sample_points)
    gy = np.linspace(sy.a, sy.b, sample_points)
    uh_grid = bspline.evaluate_grid(space, coeffs, gx, gy)
    gxg, gyg = np.meshgrid(gx, gy)
    ue_grid = np.asarray(exact(gxg, gyg), dtype=float)
    overshoot = max(0.0, float(uh_grid.max() - ue_grid.max()))
    samples = np.column_stack(
        [gxg.ravel(), gyg.ravel(), uh_grid.ravel(), ue_grid.ravel()]
    )
    return ErrorReport(math.sqrt(l2), math.sqrt(h1), overshoot, math.sqrt(ex2), samples)
