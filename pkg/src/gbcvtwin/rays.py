"""Spectral calculus along rays through the origin.

Every potential-type integral in the twin pipeline has the form
int_0^1 phi(t p) dt (possibly with powers of t) for points p of a
star-shaped domain, and the nested potentials it contains are integrals
over sub-segments of the same ray.  Evaluating the integrands once at
Chebyshev nodes t_k per ray and applying a cumulative spectral
integration operator therefore replaces arbitrarily deep nested
quadrature by a single O(n) pass per point:

    C(t_k p)   = (2 / t_k^2) * int_0^{t_k} s w(s p) ds,      w = tau/delta^2
    C_x(t_k p) = (2 / t_k^3) * int_0^{t_k} s^2 w_x(s p) ds,
    g_x(t_k p) = (1 / t_k)   * int_0^{t_k} [P0 + s (P0_x p_x + Q0_x p_y)](s p) ds,

and so on.  For data analytic along the segment the Chebyshev
coefficients decay geometrically, so n of order 100 reaches quadrature-
limited accuracy; the coefficient tails are monitored and the node
count doubled when they fail to decay.

The small-t divisions look alarming but are harmless: everywhere a
potential value appears in the graph algebra it is multiplied by a
coordinate of t_k p, which restores the factor of t_k and keeps the
absolute error at machine scale.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
from numpy.polynomial import chebyshev as nch

from .field import CallableField, QuadratureError, ScalarField
from .graphs import GraphSurface, NonSpacelikeError, SPACELIKE_DEGENERATE_MARGIN
from .spaces import GBCVSpace, LORENTZIAN, RIEMANNIAN

__all__ = ["ChebRay", "TwinRayEngine", "RayPotentialField", "RayCalabiSpace"]

_RULE_CACHE = {}


class ChebRay:
    """Chebyshev (first-kind) nodes on [0, 1] with a cumulative
    integration matrix and total-integral weights.

    ``nodes`` are ordered as produced (decreasing); ``cum @ vals`` gives
    int_0^{t_k} and ``tot @ vals`` gives int_0^1 of the interpolant.
    """

    def __init__(self, n: int):
        self.n = n
        j = np.arange(n)
        theta = (2 * j + 1) * math.pi / (2 * n)
        xi = np.cos(theta)
        self.nodes = 0.5 * (1.0 + xi)
        # values at nodes -> chebyshev coefficients (discrete cosine sums)
        A = np.cos(np.outer(np.arange(n), theta)) * (2.0 / n)
        A[0, :] *= 0.5
        self._coef_matrix = A
        # antiderivative vanishing at xi=-1 (t=0); dt = dxi/2
        CI = nch.chebint(A, lbnd=-1.0, scl=0.5, axis=0)
        self.cum = nch.chebval(xi, CI).T  # [k_eval, j_input]
        self.tot = nch.chebval(1.0, CI)

    def coefficients(self, vals: np.ndarray) -> np.ndarray:
        return self._coef_matrix @ vals

    def tail_ratio(self, vals: np.ndarray) -> float:
        """Decay indicator: last coefficients relative to the largest.
        Near machine epsilon for resolved analytic integrands."""
        c = np.abs(self.coefficients(vals))
        top = max(float(np.max(c)), 1e-300)
        return float(np.max(c[-2:])) / top


def cheb_ray(n: int) -> ChebRay:
    if n not in _RULE_CACHE:
        _RULE_CACHE[n] = ChebRay(n)
    return _RULE_CACHE[n]


class TwinRayEngine:
    """One-pass evaluation of the whole twin stack along rays.

    Given a graph surface with smooth (order >= 2) height data in an
    ambient of either signature, a single evaluation of the base data at
    the ray nodes yields, for a batch of points p:

      * the ambient potential C and its first partials,
      * alpha, beta, omega and their partials, hence the mean curvature H,
      * the potential C_H of H for the twin ambient,
      * the twin height g, its first partials, and the twin's own
        (alpha~, beta~, omega~),
      * the inverse-reconstruction value (the involution) if requested.
    """

    def __init__(self, surface: GraphSurface, n: int = 96, n_max: int = 384,
                 tail_tol: float = 1e-9, H_override: Optional[ScalarField] = None,
                 chunk: int = 8192):
        if surface.height.max_order < 2:
            raise ValueError("ray engine needs height data with second derivatives")
        if not getattr(surface.domain, "star_shaped_about_origin", False):
            raise ValueError("ray engine integrates along rays from the origin; "
                             "the domain must be star-shaped about it")
        self.surface = surface
        self.n = n
        self.n_max = n_max
        self.tail_tol = tail_tol
        self.H_override = H_override
        self.chunk = chunk
        self._cache = {}

    # -- core pass -----------------------------------------------------------

    def _node_pass(self, px, py, rule: ChebRay, want_inverse: bool) -> dict:
        surf = self.surface
        s = float(surf.space.sign)
        st = -s  # twin ambient sign
        base = surf.space.base
        u = surf.height
        sig = rule.nodes[:, None]
        X = sig * px[None, :]
        Y = sig * py[None, :]

        d = base.delta_at(X, Y)
        d_x = base.delta.partial(X, Y, 1, 0)
        d_y = base.delta.partial(X, Y, 0, 1)
        tau = surf.space.tau(X, Y)
        tau_x = surf.space.tau.partial(X, Y, 1, 0)
        tau_y = surf.space.tau.partial(X, Y, 0, 1)

        w = tau / d**2
        w_x = tau_x / d**2 - 2.0 * tau * d_x / d**3
        w_y = tau_y / d**2 - 2.0 * tau * d_y / d**3

        tails = [rule.tail_ratio(sig * w)]
        C = 2.0 * (rule.cum @ (sig * w)) / sig**2
        C_x = 2.0 * (rule.cum @ (sig**2 * w_x)) / sig**3
        C_y = 2.0 * (rule.cum @ (sig**2 * w_y)) / sig**3

        ux = u.partial(X, Y, 1, 0)
        uy = u.partial(X, Y, 0, 1)
        uxx = u.partial(X, Y, 2, 0)
        uxy = u.partial(X, Y, 1, 1)
        uyy = u.partial(X, Y, 0, 2)

        a = ux + s * Y * C
        b = uy - s * X * C
        a_x = uxx + s * Y * C_x
        a_y = uxy + s * (C + Y * C_y)
        b_x = uxy - s * (C + X * C_x)
        b_y = uyy - s * X * C_y
        q = a * a + b * b
        rad = 1.0 + s * d * d * q
        if s < 0 and np.any(rad <= SPACELIKE_DEGENERATE_MARGIN):
            raise NonSpacelikeError(
                "source graph is non-spacelike along an integration ray",
                margin=float(np.min(rad)),
            )
        om = np.sqrt(rad)
        om_x = s * (d * d_x * q + d * d * (a * a_x + b * b_x)) / om
        om_y = s * (d * d_y * q + d * d * (a * a_y + b * b_y)) / om

        H = 0.5 * d * d * (
            (a_x * om - a * om_x) / om**2 + (b_y * om - b * om_y) / om**2
        )

        P0 = -s * b / om
        Q0 = s * a / om
        P0_x = -s * (b_x * om - b * om_x) / om**2
        P0_y = -s * (b_y * om - b * om_y) / om**2
        Q0_x = s * (a_x * om - a * om_x) / om**2
        Q0_y = s * (a_y * om - a * om_y) / om**2

        if self.H_override is not None:
            wH = self.H_override(X, Y) / d**2
        else:
            wH = H / d**2
        tails.append(rule.tail_ratio(sig * wH))

        g_int = P0 * px[None, :] + Q0 * py[None, :]
        tails.append(rule.tail_ratio(g_int))
        gx_int = P0 + sig * (P0_x * px[None, :] + Q0_x * py[None, :])
        gy_int = Q0 + sig * (P0_y * px[None, :] + Q0_y * py[None, :])

        out = {
            "tails": tails,
            "g1": rule.tot @ g_int,
            "gx1": rule.tot @ gx_int,
            "gy1": rule.tot @ gy_int,
            "CH1": 2.0 * (rule.tot @ (sig * wH)),
            "C1": 2.0 * (rule.tot @ (sig * w)),
            "Cx1": 2.0 * (rule.tot @ (sig**2 * w_x)),
            "Cy1": 2.0 * (rule.tot @ (sig**2 * w_y)),
        }
        if want_inverse:
            # twin data at the nodes feeds the inverse reconstruction
            CH = 2.0 * (rule.cum @ (sig * wH)) / sig**2
            gx = (rule.cum @ gx_int) / sig
            gy = (rule.cum @ gy_int) / sig
            ta = gx + st * Y * CH
            tb = gy - st * X * CH
            trad = 1.0 + st * d * d * (ta * ta + tb * tb)
            if st < 0 and np.any(trad <= SPACELIKE_DEGENERATE_MARGIN):
                raise NonSpacelikeError(
                    "twin graph is non-spacelike along an integration ray",
                    margin=float(np.min(trad)),
                )
            tom = np.sqrt(trad)
            iP0 = -st * tb / tom
            iQ0 = st * ta / tom
            inv_int = iP0 * px[None, :] + iQ0 * py[None, :]
            tails.append(rule.tail_ratio(inv_int))
            out["inv1"] = rule.tot @ inv_int
        return out

    def evaluate(self, x, y, want_inverse: bool = False) -> dict:
        """Batch evaluation at points (x, y); returns flat arrays.
        The last few batches are memoized, since the verification flows
        ask for several quantities over the same point set."""
        x = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
        y = np.atleast_1d(np.asarray(y, dtype=float)).ravel()
        key = (x.tobytes(), y.tobytes(), want_inverse)
        if key in self._cache:
            return self._cache[key]
        self.surface.space.base.require_inside(x, y)
        keys = None
        pieces = []
        for start in range(0, len(x), self.chunk):
            px = x[start:start + self.chunk]
            py = y[start:start + self.chunk]
            n = self.n
            while True:
                rule = cheb_ray(n)
                out = self._node_pass(px, py, rule, want_inverse)
                if max(out["tails"]) <= self.tail_tol or n >= self.n_max:
                    break
                n *= 2
            if max(out["tails"]) > self.tail_tol:
                raise QuadratureError(
                    f"ray integrands not resolved at n={n} "
                    f"(tail ratio {max(out['tails']):.3e})",
                    budget=n,
                    achieved=max(out["tails"]),
                )
            out.pop("tails")
            if keys is None:
                keys = list(out)
            pieces.append(out)
        result = {k: np.concatenate([p[k] for p in pieces]) for k in keys}
        if len(self._cache) >= 4:
            self._cache.pop(next(iter(self._cache)))
        self._cache[key] = result
        return result


class RayPotentialField(ScalarField):
    """Twin height function backed by a ray engine; values and first
    partials, normalized so value(p0) = c0."""

    max_order = 1

    def __init__(self, engine: TwinRayEngine, p0=(0.0, 0.0), c0: float = 0.0):
        self.engine = engine
        self.p0 = (float(p0[0]), float(p0[1]))
        self._shift = 0.0
        base = float(self.engine.evaluate([self.p0[0]], [self.p0[1]])["g1"][0])
        self._shift = c0 - base

    def _value(self, x, y):
        shape = np.broadcast(x, y).shape
        out = self.engine.evaluate(x, y)["g1"] + self._shift
        return out.reshape(shape)

    def _partial(self, x, y, dx, dy):
        shape = np.broadcast(x, y).shape
        key = "gx1" if (dx, dy) == (1, 0) else "gy1"
        return self.engine.evaluate(x, y)[key].reshape(shape)


class RayCalabiSpace(GBCVSpace):
    """Twin ambient whose potential comes from the ray engine (the
    bundle curvature is the source graph's mean curvature).  The
    potential's own partials fall back to Richardson differences; they
    are only needed by pointwise curvature queries on the twin, which
    the grid-based verifications do not use."""

    def __init__(self, base, tau_field, signature, engine: TwinRayEngine,
                 quad_tol=1e-11, fd_step: float = 1e-5):
        self._engine = engine
        self._fd_step = fd_step
        super().__init__(base, tau_field, signature, quad_tol=quad_tol, validate=False)

    def calabi(self, x, y):
        self.base.require_inside(x, y)
        scalar = np.isscalar(x) or (np.asarray(x).ndim == 0 and np.asarray(y).ndim == 0)
        shape = np.broadcast(np.asarray(x, dtype=float), np.asarray(y, dtype=float)).shape
        out = self._engine.evaluate(
            np.broadcast_to(np.asarray(x, dtype=float), shape).ravel(),
            np.broadcast_to(np.asarray(y, dtype=float), shape).ravel(),
        )["CH1"].reshape(shape)
        return float(out) if scalar else out

    def calabi_partial(self, x, y, var):
        h = self._fd_step
        hx, hy = (h, 0.0) if var == "x" else (0.0, h)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        c1 = (self.calabi(x + hx, y + hy) - self.calabi(x - hx, y - hy)) / (2 * h)
        c2 = (self.calabi(x + hx / 2, y + hy / 2) - self.calabi(x - hx / 2, y - hy / 2)) / h
        return (4.0 * c2 - c1) / 3.0
