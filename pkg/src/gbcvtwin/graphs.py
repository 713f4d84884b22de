"""Vertical graphs z = u(x, y) in an ambient GBCV space.

For a graph in the riemannian space the auxiliary fields are

    alpha = u_x + y C,   beta = u_y - x C,
    omega = sqrt(1 + delta^2 (alpha^2 + beta^2)) >= 1,

and the mean curvature (average of principal curvatures, upward normal)
satisfies the divergence form

    2 H = delta^2 ( d/dx (alpha/omega) + d/dy (beta/omega) ).

In the lorentzian space the potential terms flip sign,

    alpha~ = u_x - y C,   beta~ = u_y + x C,
    omega~ = sqrt(1 - delta^2 (alpha~^2 + beta~^2)),

the graph is spacelike exactly where the radicand (the "margin") is
positive, and the same divergence form holds with tildes.  All the
per-point operations below are vectorized over arrays of points and
pure, so they can be evaluated concurrently.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .field import Grid, GridSpec, ScalarField, as_field, sample
from .spaces import GBCVSpace, LORENTZIAN, RIEMANNIAN

__all__ = [
    "GraphSurface",
    "NonSpacelikeError",
    "SPACELIKE_DEGENERATE_MARGIN",
]

# margins in (0, 1e-12] count as degenerate: omega~ -> 0 makes the
# divergence form numerically meaningless there
SPACELIKE_DEGENERATE_MARGIN = 1e-12


class NonSpacelikeError(ValueError):
    def __init__(self, message, margin=None):
        self.margin = margin
        super().__init__(message)


class GraphSurface:
    """Height function over a subdomain of the ambient base, with the
    upward-normal orientation fixed once and for all."""

    def __init__(self, space: GBCVSpace, height, domain=None):
        self.space = space
        self.height = as_field(height)
        self.domain = domain if domain is not None else space.base.domain

    # -- raw ingredients -----------------------------------------------------

    def _check_inside(self, x, y):
        inside = self.domain.contains(x, y) if self.domain is not None else True
        if not np.all(inside):
            raise ValueError("point outside the graph's domain")
        self.space.base.require_inside(x, y)

    def alpha_beta(self, x, y):
        """(alpha, beta) or (alpha~, beta~) following the ambient signature."""
        self._check_inside(x, y)
        s = self.space.sign
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        C = self.space.calabi(x, y)
        ux = self.height.partial(x, y, 1, 0)
        uy = self.height.partial(x, y, 0, 1)
        return ux + s * y * C, uy - s * x * C

    def _first_order(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        s = self.space.sign
        d = self.space.base.delta_at(x, y)
        C = self.space.calabi(x, y)
        ux = self.height.partial(x, y, 1, 0)
        uy = self.height.partial(x, y, 0, 1)
        a = ux + s * y * C
        b = uy - s * x * C
        q = a * a + b * b
        radicand = 1.0 + s * d * d * q
        return d, C, a, b, q, radicand

    def _full(self, x, y):
        """Everything the divergence forms need, in one pass."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        s = self.space.sign
        base = self.space.base
        d = base.delta_at(x, y)
        d_x = base.delta.partial(x, y, 1, 0)
        d_y = base.delta.partial(x, y, 0, 1)
        C = self.space.calabi(x, y)
        C_x = self.space.calabi_partial(x, y, "x")
        C_y = self.space.calabi_partial(x, y, "y")
        u = self.height
        ux = u.partial(x, y, 1, 0)
        uy = u.partial(x, y, 0, 1)
        uxx = u.partial(x, y, 2, 0)
        uxy = u.partial(x, y, 1, 1)
        uyy = u.partial(x, y, 0, 2)
        a = ux + s * y * C
        b = uy - s * x * C
        a_x = uxx + s * y * C_x
        a_y = uxy + s * (C + y * C_y)
        b_x = uxy - s * (C + x * C_x)
        b_y = uyy - s * x * C_y
        q = a * a + b * b
        radicand = 1.0 + s * d * d * q
        return dict(
            s=s, d=d, d_x=d_x, d_y=d_y, C=C, C_x=C_x, C_y=C_y,
            a=a, b=b, a_x=a_x, a_y=a_y, b_x=b_x, b_y=b_y, q=q,
            radicand=radicand,
        )

    # -- spacelike test --------------------------------------------------------

    def spacelike_margin(self, x, y):
        """1 - delta^2 (alpha~^2 + beta~^2); positive iff spacelike.
        Lorentzian ambient only."""
        if self.space.signature != LORENTZIAN:
            raise ValueError("spacelike test only applies in a lorentzian ambient")
        self._check_inside(x, y)
        *_, radicand = self._first_order(x, y)
        return radicand

    def is_spacelike(self, x, y):
        margin = self.spacelike_margin(x, y)
        return np.asarray(margin) > 0.0, margin

    def _omega(self, radicand, where="omega"):
        if self.space.sign < 0:
            bad = radicand <= SPACELIKE_DEGENERATE_MARGIN
            if np.any(bad):
                worst = float(np.min(np.asarray(radicand)))
                raise NonSpacelikeError(
                    f"{where}: graph is non-spacelike or degenerate "
                    f"(worst margin {worst:.3e})",
                    margin=worst,
                )
        return np.sqrt(radicand)

    # -- pointwise geometric quantities ---------------------------------------

    def omega(self, x, y):
        self._check_inside(x, y)
        *_, radicand = self._first_order(x, y)
        return self._omega(radicand)

    def angle_function(self, x, y):
        """1/omega (riemannian, in (0,1]) or 1/omega~ (lorentzian, >= 1)."""
        return 1.0 / self.omega(x, y)

    def unit_normal(self, x, y):
        """Coefficients of the upward unit normal in the orthonormal
        frame: (-alpha*delta/omega, -beta*delta/omega, 1/omega)."""
        self._check_inside(x, y)
        d, C, a, b, q, radicand = self._first_order(x, y)
        w = self._omega(radicand, "unit_normal")
        return np.stack(
            [np.broadcast_to(-a * d / w, np.shape(w)),
             np.broadcast_to(-b * d / w, np.shape(w)),
             np.broadcast_to(1.0 / w, np.shape(w))],
            axis=-1,
        )

    def unit_normal_coords(self, x, y):
        """Same normal in (x, y, z) coordinates (scalar point only)."""
        n = self.unit_normal(x, y)
        F = self.space.frame_at((float(x), float(y), 0.0))
        return n @ F

    def first_order_data(self, x, y, where="first_order_data") -> dict:
        """delta, C, alpha, beta and omega in one pass (no second
        derivatives of the height, no potential partials)."""
        d, C, a, b, q, radicand = self._first_order(x, y)
        w = self._omega(radicand, where)
        return dict(d=d, C=C, a=a, b=b, q=q, radicand=radicand, w=w)

    def divergence_data(self, x, y, where="divergence_data") -> dict:
        """`_full` augmented with omega and its partials:
        d omega / dx = s (delta delta_x q + delta^2 (a a_x + b b_x)) / omega."""
        f = self._full(x, y)
        s, d = f["s"], f["d"]
        w = self._omega(f["radicand"], where)
        f["w"] = w
        f["w_x"] = s * (d * f["d_x"] * f["q"] + d * d * (f["a"] * f["a_x"] + f["b"] * f["b_x"])) / w
        f["w_y"] = s * (d * f["d_y"] * f["q"] + d * d * (f["a"] * f["a_y"] + f["b"] * f["b_y"])) / w
        return f

    def mean_curvature(self, x, y, method: str = "quotient"):
        """Pointwise mean curvature from the divergence form.

        method 'quotient' expands delta^2 (d/dx (alpha/omega) + ...) by
        the quotient rule; 'intrinsic' expands the base-metric divergence
        of G/omega with the delta factors kept explicit.  The two are
        algebraically equal and serve as cross-checks of each other.
        """
        self._check_inside(x, y)
        f = self.divergence_data(x, y, "mean_curvature")
        d = f["d"]
        w, w_x, w_y = f["w"], f["w_x"], f["w_y"]
        if method == "quotient":
            div = (f["a_x"] * w - f["a"] * w_x) / w**2 + (f["b_y"] * w - f["b"] * w_y) / w**2
            return 0.5 * d * d * div
        if method == "intrinsic":
            # div_M X = delta^2 ( d/dx (delta^-2 X1) + d/dy (delta^-2 X2) )
            # with X = G/omega, G = delta^2 (a, b); the delta factors are
            # differentiated explicitly instead of cancelled.
            G1, G2 = d * d * f["a"], d * d * f["b"]
            G1_x = 2 * d * f["d_x"] * f["a"] + d * d * f["a_x"]
            G2_y = 2 * d * f["d_y"] * f["b"] + d * d * f["b_y"]
            ddm2_x = -2.0 * f["d_x"] / d**3
            ddm2_y = -2.0 * f["d_y"] / d**3
            term_x = ddm2_x * G1 / w + G1_x / (d * d * w) - G1 * w_x / (d * d * w * w)
            term_y = ddm2_y * G2 / w + G2_y / (d * d * w) - G2 * w_y / (d * d * w * w)
            return 0.5 * d * d * (term_x + term_y)
        raise ValueError(f"unknown method {method!r}")

    def induced_metric(self, x, y) -> np.ndarray:
        """First fundamental form at a point: pullback of the ambient
        metric along (x, y) -> (x, y, u(x, y)).  Scalar point only."""
        x = float(np.asarray(x))
        y = float(np.asarray(y))
        self._check_inside(x, y)
        g = self.space.metric_at((x, y, 0.0))
        ux = float(self.height.partial(x, y, 1, 0))
        uy = float(self.height.partial(x, y, 0, 1))
        Fx = np.array([1.0, 0.0, ux])
        Fy = np.array([0.0, 1.0, uy])
        I = np.array(
            [
                [Fx @ g @ Fx, Fx @ g @ Fy],
                [Fy @ g @ Fx, Fy @ g @ Fy],
            ]
        )
        return I

    # -- batch evaluation ------------------------------------------------------

    def evaluate_grid(self, spec: GridSpec) -> dict:
        """Per-node graph data over a grid, mean curvature by the
        pointwise engine.  Non-spacelike nodes are masked out (and
        counted) rather than raising, so whole-surface dumps stay
        usable."""
        X, Y = spec.coords()
        dom = self.domain
        mask = np.asarray(dom.contains(X, Y), dtype=bool)
        inside_base = np.asarray(self.space.base.domain.contains(X, Y), dtype=bool)
        mask &= inside_base
        lorentzian = self.space.sign < 0
        names = ["height", "alpha", "beta", "omega", "mean_curvature", "angle"]
        if lorentzian:
            names.append("margin")
        out = {k: np.full(X.shape, np.nan) for k in names}
        nonspacelike = 0
        mask_eff = mask.copy()
        if mask.any():
            xs, ys = X[mask], Y[mask]
            f = self._full(xs, ys)
            out["height"][mask] = self.height(xs, ys)
            out["alpha"][mask] = f["a"]
            out["beta"][mask] = f["b"]
            rad = f["radicand"]
            if lorentzian:
                out["margin"][mask] = rad
                ok = rad > SPACELIKE_DEGENERATE_MARGIN
                nonspacelike = int(np.sum(~ok))
            else:
                ok = np.ones_like(rad, dtype=bool)
            with np.errstate(invalid="ignore"):
                w = np.sqrt(np.where(ok, rad, np.nan))
            out["omega"][mask] = w
            out["angle"][mask] = 1.0 / w
            if np.any(ok):
                H = np.full(xs.shape, np.nan)
                H[ok] = self.mean_curvature(xs[ok], ys[ok])
                out["mean_curvature"][mask] = H
            mask_eff[np.where(mask)] = ok
        flat = ("height", "alpha", "beta", "margin")
        grids = {k: Grid(spec, v, mask if k in flat else mask_eff) for k, v in out.items()}
        return {"grids": grids, "nonspacelike_nodes": nonspacelike, "nodes": int(mask.sum())}
