"""Scalar fields on planar domains, uniform grids, finite differences,
and 1-D adaptive quadrature.

Fields expose a uniform protocol: ``f(x, y)`` evaluates (vectorized) and
``f.partial(x, y, dx, dy)`` returns the mixed partial of order
``dx + dy``.  Expression-backed fields differentiate symbolically, so
all derivatives are exact; grid-backed fields use second-order finite
differences and stop at total order 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from . import expr as ex

__all__ = [
    "Grid",
    "GridSpec",
    "ScalarField",
    "ExprField",
    "GridField",
    "CallableField",
    "as_field",
    "sample",
    "fd_partial",
    "quad_1d",
    "quad_batch",
    "QuadratureError",
    "EmptyMaskError",
    "StencilError",
]


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the tolerance within budget."""

    def __init__(self, message, budget=None, achieved=None):
        self.budget = budget
        self.achieved = achieved
        super().__init__(message)


class EmptyMaskError(ValueError):
    pass


class StencilError(ValueError):
    pass


# --- grids ----------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Geometry of a uniform grid: node (i, j) sits at
    (origin[0] + i*h, origin[1] + j*h), 0 <= i < nx, 0 <= j < ny.
    Arrays are indexed [j, i] (row = y)."""

    origin: tuple
    h: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("grid spacing h must be positive")
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid must have at least one node per axis")

    def coords(self):
        xs = self.origin[0] + self.h * np.arange(self.nx)
        ys = self.origin[1] + self.h * np.arange(self.ny)
        return np.meshgrid(xs, ys)

    @staticmethod
    def cover(xmin, xmax, ymin, ymax, h) -> "GridSpec":
        nx = int(math.floor((xmax - xmin) / h + 1e-12)) + 1
        ny = int(math.floor((ymax - ymin) / h + 1e-12)) + 1
        return GridSpec((xmin, ymin), h, nx, ny)


@dataclass
class Grid:
    spec: GridSpec
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        shape = (self.spec.ny, self.spec.nx)
        self.values = np.asarray(self.values, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.shape != shape or self.mask.shape != shape:
            raise ValueError(f"grid arrays must have shape {shape}")

    def coords(self):
        return self.spec.coords()

    @property
    def h(self):
        return self.spec.h

    def interior_mask(self) -> np.ndarray:
        """Nodes whose four axis neighbours are all in the mask."""
        m = self.mask
        inner = np.zeros_like(m)
        inner[1:-1, 1:-1] = (
            m[1:-1, 1:-1]
            & m[1:-1, :-2]
            & m[1:-1, 2:]
            & m[:-2, 1:-1]
            & m[2:, 1:-1]
        )
        return inner


# --- scalar fields ----------------------------------------------------------


class ScalarField:
    """Protocol base.  Subclasses implement ``_value`` and ``_partial``."""

    variables = ("x", "y")
    max_order: int = 2

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return self._value(x, y)

    def partial(self, x, y, dx: int, dy: int):
        if dx == dy == 0:
            return self(x, y)
        if dx + dy > self.max_order:
            raise StencilError(
                f"derivative order {dx + dy} exceeds this field's capability "
                f"({self.max_order})"
            )
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return self._partial(x, y, dx, dy)

    def _value(self, x, y):
        raise NotImplementedError

    def _partial(self, x, y, dx, dy):
        raise NotImplementedError


class ExprField(ScalarField):
    """Field backed by a parsed expression; derivatives are symbolic."""

    max_order = 8  # practical bound, trees stay modest with peephole folding

    def __init__(self, source, variables: Sequence[str] = ("x", "y")):
        self.variables = tuple(variables)
        self.expr = ex.parse(source, self.variables) if isinstance(source, str) else source
        self._fns = {}
        self._exprs = {(0,) * len(self.variables): self.expr}

    def derivative_expr(self, orders: tuple) -> ex.Expr:
        if orders in self._exprs:
            return self._exprs[orders]
        # walk down one differentiation from a cached ancestor
        for i, o in enumerate(orders):
            if o > 0:
                below = orders[:i] + (o - 1,) + orders[i + 1 :]
                parent = self.derivative_expr(below)
                e = ex.differentiate(parent, self.variables[i])
                self._exprs[orders] = e
                return e
        raise AssertionError("unreachable")

    def _fn(self, orders: tuple):
        if orders not in self._fns:
            self._fns[orders] = ex.compile_fn(self.derivative_expr(orders), self.variables)
        return self._fns[orders]

    def _value(self, x, y):
        return self._fn((0, 0))(x, y)

    def _partial(self, x, y, dx, dy):
        return self._fn((dx, dy))(x, y)

    def evaluate_checked(self, point):
        """Scalar evaluation with domain-violation diagnosis."""
        return ex.evaluate(self.expr, point, self.variables)


class CallableField(ScalarField):
    """Field backed by vectorized closures, one per derivative order.

    ``partials`` maps (dx, dy) -> callable(x, y).  Orders not supplied
    are unavailable (this is how profile-backed and potential-backed
    fields advertise exactly what they can do).
    """

    def __init__(self, value: Callable, partials: Optional[dict] = None, max_order: int = None):
        self._valfn = value
        self._partials = dict(partials or {})
        if max_order is None:
            max_order = max((dx + dy for dx, dy in self._partials), default=0)
        self.max_order = max_order

    def _value(self, x, y):
        return np.asarray(self._valfn(x, y), dtype=float)

    def _partial(self, x, y, dx, dy):
        try:
            fn = self._partials[(dx, dy)]
        except KeyError:
            raise StencilError(f"partial ({dx},{dy}) not available on this field") from None
        return np.asarray(fn(x, y), dtype=float)


class GridField(ScalarField):
    """Field backed by grid samples; bilinear interpolation inside the
    mask, finite-difference derivatives up to total order 2 (accuracy
    O(h^2)).  Queries outside the mask raise, never extrapolate."""

    max_order = 2

    def __init__(self, grid: Grid):
        if not grid.mask.any():
            raise EmptyMaskError("grid has no in-domain nodes")
        self.grid = grid
        self._derived = {(0, 0): grid}

    def _derived_grid(self, dx, dy) -> Grid:
        key = (dx, dy)
        if key not in self._derived:
            if dx > 0:
                base = self._derived_grid(dx - 1, dy)
                self._derived[key] = fd_partial(base, "x", 1)
            else:
                base = self._derived_grid(dx, dy - 1)
                self._derived[key] = fd_partial(base, "y", 1)
        return self._derived[key]

    def _interp(self, grid: Grid, x, y):
        spec = grid.spec
        fx = (x - spec.origin[0]) / spec.h
        fy = (y - spec.origin[1]) / spec.h
        i = np.clip(np.floor(fx).astype(int), 0, spec.nx - 2)
        j = np.clip(np.floor(fy).astype(int), 0, spec.ny - 2)
        tx = fx - i
        ty = fy - j
        inside = (fx >= -1e-9) & (fx <= spec.nx - 1 + 1e-9) & (fy >= -1e-9) & (fy <= spec.ny - 1 + 1e-9)
        m = grid.mask
        ok = inside & m[j, i] & m[j, i + 1] & m[j + 1, i] & m[j + 1, i + 1]
        if not np.all(ok):
            bad = np.argwhere(~np.asarray(ok))
            raise EmptyMaskError(
                f"evaluation outside the grid mask ({bad.shape[0]} point(s), first index {tuple(bad[0])})"
            )
        v = grid.values
        return (
            v[j, i] * (1 - tx) * (1 - ty)
            + v[j, i + 1] * tx * (1 - ty)
            + v[j + 1, i] * (1 - tx) * ty
            + v[j + 1, i + 1] * tx * ty
        )

    def _value(self, x, y):
        return self._interp(self.grid, x, y)

    def _partial(self, x, y, dx, dy):
        # pure second orders use the dedicated 3-point stencil
        if (dx, dy) in ((2, 0), (0, 2)) and (dx, dy) not in self._derived:
            self._derived[(dx, dy)] = fd_partial(self.grid, "x" if dx else "y", 2)
        return self._interp(self._derived_grid(dx, dy), x, y)


def as_field(obj, variables=("x", "y")) -> ScalarField:
    if isinstance(obj, ScalarField):
        return obj
    if isinstance(obj, (str, ex.Expr)):
        return ExprField(obj, variables)
    if isinstance(obj, (int, float)):
        return ExprField(ex.Const(float(obj)), variables)
    if isinstance(obj, Grid):
        return GridField(obj)
    raise TypeError(f"cannot interpret {type(obj).__name__} as a scalar field")


# --- sampling and finite differences ---------------------------------------


def sample(f: ScalarField, spec: GridSpec, domain=None) -> Grid:
    """Evaluate ``f`` on the grid; nodes outside ``domain`` are masked
    out and hold nan.  Raises :class:`EmptyMaskError` when nothing is
    inside."""
    X, Y = spec.coords()
    if domain is not None:
        mask = np.asarray(domain.contains(X, Y), dtype=bool)
    else:
        mask = np.ones_like(X, dtype=bool)
    if not mask.any():
        raise EmptyMaskError("no grid node lies inside the domain")
    values = np.full(X.shape, np.nan)
    values[mask] = f(X[mask], Y[mask])
    return Grid(spec, values, mask)


def _shift(a: np.ndarray, d: int, axis: int) -> np.ndarray:
    """Shift with nan/False fill (values come from index i+d)."""
    out = np.full_like(a, np.nan if a.dtype.kind == "f" else False)
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if d >= 0:
        src[axis] = slice(d, None) if d else slice(None)
        dst[axis] = slice(None, a.shape[axis] - d) if d else slice(None)
    else:
        src[axis] = slice(None, d)
        dst[axis] = slice(-d, None)
    out[tuple(dst)] = a[tuple(src)]
    return out


def fd_partial(grid: Grid, var: str, order: int) -> Grid:
    """Finite-difference partial derivative of a masked grid.

    Central second-order stencils wherever both neighbours exist, else
    one-sided second-order stencils at the mask boundary.  The output
    mask shrinks where no stencil has support.
    """
    if var not in ("x", "y"):
        raise ValueError("var must be 'x' or 'y'")
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    axis = 1 if var == "x" else 0
    h = grid.spec.h
    v = np.where(grid.mask, grid.values, np.nan)
    m = grid.mask & np.isfinite(v)

    def sv(d):
        return _shift(v, d, axis)

    def sm(d):
        return _shift(m, d, axis)

    out = np.full_like(v, np.nan)
    if order == 1:
        central = m & sm(-1) & sm(1)
        fwd = m & sm(1) & sm(2) & ~central
        bwd = m & sm(-1) & sm(-2) & ~central & ~fwd
        with np.errstate(invalid="ignore"):
            out = np.where(central, (sv(1) - sv(-1)) / (2 * h), out)
            out = np.where(fwd, (-3 * v + 4 * sv(1) - sv(2)) / (2 * h), out)
            out = np.where(bwd, (3 * v - 4 * sv(-1) + sv(-2)) / (2 * h), out)
        new_mask = central | fwd | bwd
    else:
        central = m & sm(-1) & sm(1)
        fwd = m & sm(1) & sm(2) & sm(3) & ~central
        bwd = m & sm(-1) & sm(-2) & sm(-3) & ~central & ~fwd
        with np.errstate(invalid="ignore"):
            out = np.where(central, (sv(1) - 2 * v + sv(-1)) / h**2, out)
            out = np.where(fwd, (2 * v - 5 * sv(1) + 4 * sv(2) - sv(3)) / h**2, out)
            out = np.where(bwd, (2 * v - 5 * sv(-1) + 4 * sv(-2) - sv(-3)) / h**2, out)
        new_mask = central | fwd | bwd
    if not new_mask.any():
        raise StencilError("mask too thin for any finite-difference stencil")
    out[~new_mask] = np.nan
    return Grid(grid.spec, out, new_mask)


# --- quadrature -------------------------------------------------------------

_GL_CACHE = {}


def _gl(n: int):
    if n not in _GL_CACHE:
        _GL_CACHE[n] = leggauss(n)
    return _GL_CACHE[n]


def _gl_panel(f, a, b, n):
    xs, ws = _gl(n)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    nodes = mid + half * xs
    vals = _eval_vec(f, nodes)
    return half * float(np.dot(ws, vals))


def _eval_vec(f, nodes: np.ndarray) -> np.ndarray:
    try:
        vals = np.asarray(f(nodes), dtype=float)
        if vals.shape == nodes.shape:
            return vals
    except (TypeError, ValueError):
        pass
    return np.array([float(f(t)) for t in nodes])


def quad_1d(f, a: float, b: float, tol: float = 1e-10, max_intervals: int = 4096) -> float:
    """Adaptive composite Gauss-Legendre integral of ``f`` on [a, b].

    Per-interval error is estimated by comparing a 15-point rule with
    the sum of two 15-point halves; intervals failing the (length
    proportional) local tolerance are bisected.  Raises
    :class:`QuadratureError` when the interval budget is exhausted.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if a == b:
        return 0.0
    length = abs(b - a)
    stack = [(a, b, _gl_panel(f, a, b, 15))]
    total = 0.0
    used = 0
    while stack:
        lo, hi, coarse = stack.pop()
        mid = 0.5 * (lo + hi)
        left = _gl_panel(f, lo, mid, 15)
        right = _gl_panel(f, mid, hi, 15)
        fine = left + right
        err = abs(fine - coarse)
        local_tol = tol * abs(hi - lo) / length
        if err <= max(local_tol, 1e-16 * abs(fine)):
            total += fine
            continue
        used += 1
        if used > max_intervals:
            raise QuadratureError(
                f"quadrature did not converge within {max_intervals} interval splits "
                f"(last local error {err:.3e})",
                budget=max_intervals,
                achieved=err,
            )
        stack.append((lo, mid, left))
        stack.append((mid, hi, right))
    if not math.isfinite(total):
        raise QuadratureError("integrand produced a non-finite value")
    return total


def quad_batch(f, a: float, b: float, tol: float = 1e-10, n0: int = 32, max_doublings: int = 5):
    """Batched composite Gauss-Legendre quadrature.

    ``f(t)`` takes a 1-D array of nodes (m,) and returns an array of
    shape (m, ...) of integrand values for a whole batch of integrals;
    the result has the trailing shape.  Panels are doubled until two
    successive estimates agree to ``tol`` in max norm.  Used for the
    many-point pipelines (Calabi potentials along rays, twin path
    integrals) where per-point adaptive quadrature would be too slow.
    """
    xs, ws = _gl(n0)

    def estimate(panels: int):
        edges = np.linspace(a, b, panels + 1)
        mids = 0.5 * (edges[:-1] + edges[1:])
        half = 0.5 * (edges[1] - edges[0])
        nodes = (mids[:, None] + half * xs[None, :]).ravel()
        vals = np.asarray(f(nodes), dtype=float)
        vals = vals.reshape((panels, len(xs)) + vals.shape[1:])
        w = ws.reshape((1, len(xs)) + (1,) * (vals.ndim - 2))
        return half * np.sum(vals * w, axis=(0, 1))

    prev = estimate(1)
    panels = 2
    for _ in range(max_doublings):
        cur = estimate(panels)
        diff = np.max(np.abs(cur - prev))
        if diff <= tol:
            return cur
        prev = cur
        panels *= 2
    raise QuadratureError(
        f"batched quadrature did not reach tol={tol} after {panels // 2} panels "
        f"(last diff {diff:.3e})",
        budget=panels // 2,
        achieved=float(diff),
    )
