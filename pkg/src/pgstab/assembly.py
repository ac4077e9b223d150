"""Assembly of Gram matrices, affine parametric forms, loads, and lifting.

All matrices are CSR with sorted indices. On the uniform tensor meshes used
here, 2D forms are Kronecker products of 1D assembled factors; symmetric
matrices come out exactly symmetric because the 1D factors do.

Dirichlet data is imposed by column elimination plus lifting: the affine
parts keep only interior trial columns, boundary columns are stored
separately, and their contribution moves to the right-hand side with
coefficients from a 1D L2-projection of the boundary trace.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import bspline
from .bspline import BSplineSpace1D, BSplineSpace2D, gauss_rule
from .problems import EJ1D, EJ2D, HELMHOLTZ, ProblemSpec, helmholtz_data

__all__ = [
    "ConfigurationError",
    "ParameterRangeWarning",
    "AffineFormSet",
    "assemble_gram",
    "assemble_affine_parts",
    "assemble_load",
    "expand_solution",
]


class ConfigurationError(ValueError):
    """Invalid or inconsistent assembly configuration."""


class ParameterRangeWarning(UserWarning):
    """mu outside the declared parameter range of the problem."""


def _assemble_1d(test: BSplineSpace1D, trial: BSplineSpace1D, kind: str,
                 npoints: int | None = None) -> np.ndarray:
    """Dense 1D form matrix (test.dim x trial.dim).

    kind: "mass" = int v u, "stiff" = int v' u', "adv" = int v u'.
    """
    if npoints is None:
        npoints = max(test.order, trial.order) + 1
    rule = gauss_rule(npoints)
    out = np.zeros((test.dim, trial.dim))
    for e in range(test.elements):
        x0 = test.breakpoints[e]
        xs = x0 + (rule.points + 1) * test.h / 2
        ws = rule.weights * test.h / 2
        for x, w in zip(xs, ws):
            ti, tv = bspline.eval_basis(test, x)
            _, td = bspline.eval_basis_deriv(test, x)
            ui, uv = bspline.eval_basis(trial, x)
            _, ud = bspline.eval_basis_deriv(trial, x)
            if kind == "mass":
                block = np.outer(tv, uv)
            elif kind == "stiff":
                block = np.outer(td, ud)
            elif kind == "adv":
                block = np.outer(tv, ud)
            else:
                raise ValueError(f"unknown form kind {kind!r}")
            out[ti : ti + len(tv), ui : ui + len(uv)] += w * block
    return out


def _csr(dense_or_sparse) -> sp.csr_matrix:
    m = sp.csr_matrix(dense_or_sparse)
    m.sum_duplicates()
    m.sort_indices()
    return m


def _check_same_mesh(a: BSplineSpace1D, b: BSplineSpace1D):
    if a.elements != b.elements or a.a != b.a or a.b != b.b:
        raise ConfigurationError("trial and test spaces live on different meshes")


# gradient weight of the "weighted-h1" inner product; fixed (not mesh- or
# parameter-dependent) so the Gram factorization stays reusable across mu
WEIGHTED_H1_GRAD_WEIGHT = 1.0 / 32.0

_GRAM_KINDS = ("h1", "h1-semi", "weighted-h1")


def assemble_gram(test_space, inner_product_kind: str = "h1") -> sp.csr_matrix:
    """Gram matrix of the chosen inner product on the test space.

    ``"h1"`` is the full H1 product, ``"h1-semi"`` the H1 seminorm, and
    ``"weighted-h1"`` scales the gradient term by the fixed weight
    ``WEIGHTED_H1_GRAD_WEIGHT`` (an H1-equivalent norm that keeps residual
    minimization overshoot-free on unresolved layers). The seminorm
    requires a zero boundary constraint somewhere, otherwise the form is
    singular on constants.
    """
    if inner_product_kind not in _GRAM_KINDS:
        raise ConfigurationError(f"unknown inner product {inner_product_kind!r}")
    grad_w = WEIGHTED_H1_GRAD_WEIGHT if inner_product_kind == "weighted-h1" else 1.0
    if isinstance(test_space, BSplineSpace1D):
        if inner_product_kind == "h1-semi" and test_space.boundary == "none":
            raise ConfigurationError(
                "H1-seminorm Gram is singular without a zero boundary constraint"
            )
        g = grad_w * _assemble_1d(test_space, test_space, "stiff")
        if inner_product_kind != "h1-semi":
            g = g + _assemble_1d(test_space, test_space, "mass")
        return _csr(g)

    sx, sy = test_space.x, test_space.y
    if inner_product_kind == "h1-semi" and sx.boundary == "none" and sy.boundary == "none":
        raise ConfigurationError(
            "H1-seminorm Gram is singular without a zero boundary constraint"
        )
    mx = _csr(_assemble_1d(sx, sx, "mass"))
    my = _csr(_assemble_1d(sy, sy, "mass"))
    kx = _csr(_assemble_1d(sx, sx, "stiff"))
    ky = _csr(_assemble_1d(sy, sy, "stiff"))
    g = grad_w * (sp.kron(my, kx) + sp.kron(ky, mx))
    if inner_product_kind != "h1-semi":
        g = g + sp.kron(my, mx)
    return _csr(g)


@dataclass
class AffineFormSet:
    """Gram matrix plus affine parts realizing B_mu = B_0 + sum theta_k(mu) B_k.

    ``parts`` hold interior trial columns only (m x n); ``boundary_parts``
    hold the eliminated Dirichlet columns (m x n_bd) used for lifting.
    ``boundary_indices``/``interior_indices`` map into the full trial space.
    """

    gram: sp.csr_matrix
    parts: list
    theta: list
    trial_dim: int
    test_dim: int
    problem: ProblemSpec
    trial_space: object
    test_space: object
    boundary_parts: list = field(default_factory=list)
    boundary_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    interior_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def evaluate(self, mu: float) -> sp.csr_matrix:
        """B_mu = sum_k theta_k(mu) * parts_k (theta_0 == 1)."""
        b = self.parts[0] * self.theta[0](mu)
        for th, part in zip(self.theta[1:], self.parts[1:]):
            b = b + th(mu) * part
        return _csr(b)

    def lift_coefficients(self, mu: float) -> np.ndarray:
        """Coefficients of the Dirichlet lift on the boundary dofs."""
        return _lift_coefficients(self.problem, self, mu)


def _boundary_masks(space2d: BSplineSpace2D):
    dx, dy = space2d.x.dim, space2d.y.dim
    ix, iy = np.meshgrid(np.arange(dx), np.arange(dy))
    boundary = (ix == 0) | (ix == dx - 1) | (iy == 0) | (iy == dy - 1)
    flat = boundary.ravel()  # index = iy*dx + ix, y-major matches meshgrid rows
    return np.flatnonzero(flat), np.flatnonzero(~flat)


def assemble_affine_parts(problem: ProblemSpec, trial_space, test_space) -> AffineFormSet:
    """Assemble the Gram matrix and the affine parts of b_mu.

    EJ: parts = [advection (+ Robin trace term in 1D), diffusion stiffness],
    theta = [1, eps]. Helmholtz: parts = [negative stiffness, mass],
    theta = [1, kappa^2].
    """
    if problem.kind == EJ1D:
        _check_same_mesh(trial_space, test_space)
        if test_space.dim < trial_space.dim:
            raise ConfigurationError("test space smaller than trial space")
        adv = _assemble_1d(test_space, trial_space, "adv")
        stiff = _assemble_1d(test_space, trial_space, "stiff")
        # Robin term u(0) v(0) enters the parameter-independent part
        ti, tv = bspline.eval_basis(test_space, trial_space.a)
        ui, uv = bspline.eval_basis(trial_space, trial_space.a)
        adv[ti : ti + len(tv), ui : ui + len(uv)] += np.outer(tv, uv)
        gram = assemble_gram(test_space, problem.gram_kind)
        return AffineFormSet(
            gram=gram, parts=[_csr(adv), _csr(stiff)], theta=problem.theta(),
            trial_dim=trial_space.dim, test_dim=test_space.dim,
            problem=problem, trial_space=trial_space, test_space=test_space,
        )

    if problem.kind not in (EJ2D, HELMHOLTZ):
        raise ConfigurationError(f"unsupported problem kind {problem.kind!r}")

    _check_same_mesh(trial_space.x, test_space.x)
    _check_same_mesh(trial_space.y, test_space.y)
    mx = _csr(_assemble_1d(test_space.x, trial_space.x, "mass"))
    my = _csr(_assemble_1d(test_space.y, trial_space.y, "mass"))
    kx = _csr(_assemble_1d(test_space.x, trial_space.x, "stiff"))
    ky = _csr(_assemble_1d(test_space.y, trial_space.y, "stiff"))
    stiff = _csr(sp.kron(my, kx) + sp.kron(ky, mx))
    if problem.kind == EJ2D:
        ax = _csr(_assemble_1d(test_space.x, trial_space.x, "adv"))
        parts_full = [_csr(sp.kron(my, ax)), stiff]
    else:
        mass = _csr(sp.kron(my, mx))
        parts_full = [_csr(-stiff), mass]

    boundary, interior = _boundary_masks(trial_space)
    parts = [_csr(p[:, interior]) for p in parts_full]
    boundary_parts = [_csr(p[:, boundary]) for p in parts_full]
    if test_space.dim < len(interior):
        raise ConfigurationError("test space smaller than trial space")
    gram = assemble_gram(test_space, problem.gram_kind)
    return AffineFormSet(
        gram=gram, parts=parts, theta=problem.theta(),
        trial_dim=len(interior), test_dim=test_space.dim,
        problem=problem, trial_space=trial_space, test_space=test_space,
        boundary_parts=boundary_parts, boundary_indices=boundary,
        interior_indices=interior,
    )


# -- Dirichlet lifting --------------------------------------------------------


def _project_on_interior(space: BSplineSpace1D, values_fn: Callable) -> np.ndarray:
    """L2-projection of a trace function onto the zero-both 1D space."""
    interior = BSplineSpace1D(space.order, space.elements, space.continuity,
                              space.a, space.b, boundary="zero-both")
    mass = _assemble_1d(interior, interior, "mass")
    rule = gauss_rule(min(interior.order + 2, 10))
    rhs = np.zeros(interior.dim)
    for e in range(interior.elements):
        x0 = interior.breakpoints[e]
        xs = x0 + (rule.points + 1) * interior.h / 2
        ws = rule.weights * interior.h / 2
        for x, w in zip(xs, ws):
            fi, fv = bspline.eval_basis(interior, x)
            rhs[fi : fi + len(fv)] += w * float(values_fn(x)) * fv
    return np.linalg.solve(mass, rhs)


def _lift_coefficients(problem: ProblemSpec, forms: AffineFormSet, mu: float) -> np.ndarray:
    """Boundary-dof coefficients of the discrete Dirichlet lift.

    Corners are set by interpolation (endpoint basis functions are
    interpolatory); each edge gets a 1D L2-projection of the remaining
    trace. EJ1D has no lift (u(1)=0 is built into the trial space).
    """
    if problem.kind == EJ1D:
        return np.zeros(0)
    space = forms.trial_space
    dx, dy = space.x.dim, space.y.dim
    full = np.zeros(space.dim)
    g = problem.boundary_data(mu)

    xs = (space.x.a, space.x.b)
    ys = (space.y.a, space.y.b)
    corners = {(0, 0): (xs[0], ys[0]), (dx - 1, 0): (xs[1], ys[0]),
               (0, dy - 1): (xs[0], ys[1]), (dx - 1, dy - 1): (xs[1], ys[1])}
    for (ix, iy), (cx, cy) in corners.items():
        full[space.index(ix, iy)] = float(g(cx, cy))

    # edges x = a and x = b: functions ix fixed, iy interior
    for ix, xedge in ((0, xs[0]), (dx - 1, xs[1])):
        c00 = full[space.index(ix, 0)]
        c01 = full[space.index(ix, dy - 1)]

        def trace(y, xedge=xedge, c00=c00, c01=c01):
            tail = (c00 * _endpoint_value(space.y, y, 0)
                    + c01 * _endpoint_value(space.y, y, 1))
            return float(g(xedge, y)) - tail

        coeffs = _project_on_interior(space.y, trace)
        for j, val in enumerate(coeffs, start=1):
            full[space.index(ix, j)] = val
    # edges y = a and y = b
    for iy, yedge in ((0, ys[0]), (dy - 1, ys[1])):
        c00 = full[space.index(0, iy)]
        c10 = full[space.index(dx - 1, iy)]

        def trace(x, yedge=yedge, c00=c00, c10=c10):
            tail = (c00 * _endpoint_value(space.x, x, 0)
                    + c10 * _endpoint_value(space.x, x, 1))
            return float(g(x, yedge)) - tail

        coeffs = _project_on_interior(space.x, trace)
        for i, val in enumerate(coeffs, start=1):
            full[space.index(i, iy)] = val
    return full[forms.boundary_indices]


def _endpoint_value(space1d: BSplineSpace1D, x, which: int) -> float:
    """Value at x of the first (which=0) or last (which=1) basis function."""
    first, vals = bspline.eval_basis(space1d, float(x))
    idx = 0 if which == 0 else space1d.dim - 1
    off = idx - first
    if 0 <= off < len(vals):
        return float(vals[off])
    return 0.0


# -- load vectors --------------------------------------------------------------


def assemble_load(problem: ProblemSpec, forms: AffineFormSet, mu: float) -> np.ndarray:
    """Right-hand side L so the reduced system reads B^T W x = (L^T W)^T.

    Combines the source term ell(v) (v(0) for EJ1D, zero for EJ2D,
    int f v for Helmholtz) with the Dirichlet lifting contribution
    -b_mu(u_g, v).
    """
    if not problem.param_in_range(mu):
        warnings.warn(
            f"{problem.param_name}={mu} outside declared range {problem.param_range}",
            ParameterRangeWarning, stacklevel=2,
        )
    m = forms.test_dim
    load = np.zeros(m)
    if problem.kind == EJ1D:
        ti, tv = bspline.eval_basis(forms.test_space, forms.test_space.a)
        load[ti : ti + len(tv)] += tv
        return load

    if problem.kind == HELMHOLTZ:
        f = problem.source(mu)
        load += _volume_load_2d(forms.test_space, f)

    c = forms.lift_coefficients(mu)
    if len(c):
        for th, bpart in zip(forms.theta, forms.boundary_parts):
            load -= th(mu) * (bpart @ c)
    return load


def _volume_load_2d(test_space: BSplineSpace2D, f: Callable) -> np.ndarray:
    # one extra Gauss point vs the bilinear-form rule: the source is not
    # polynomial and must match a refined-quadrature oracle to 1e-12
    sx, sy = test_space.x, test_space.y
    q = min(max(sx.order, sy.order) + 2, 10)
    rule = gauss_rule(q)

    def nodes(spc):
        pts = (spc.breakpoints[:-1, None] + (rule.points[None, :] + 1) * spc.h / 2).ravel()
        wts = np.tile(rule.weights * spc.h / 2, spc.elements)
        return pts, wts

    xs, wx = nodes(sx)
    ys, wy = nodes(sy)
    bx = bspline.collocation_matrix(sx, xs)
    by = bspline.collocation_matrix(sy, ys)
    xg, yg = np.meshgrid(xs, ys)
    fv = np.asarray(f(xg, yg), dtype=float) * np.outer(wy, wx)
    return (by.T @ fv @ bx).ravel()


def expand_solution(forms: AffineFormSet, mu: float, x_interior) -> np.ndarray:
    """Full trial-space coefficients: interior solution plus Dirichlet lift."""
    x_interior = np.asarray(x_interior, dtype=float)
    if forms.problem.kind == EJ1D:
        return x_interior.copy()
    full = np.zeros(forms.trial_space.dim)
    full[forms.interior_indices] = x_interior
    full[forms.boundary_indices] = forms.lift_coefficients(mu)
    return full
