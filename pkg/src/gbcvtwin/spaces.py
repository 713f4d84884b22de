"""Killing-submersion ambient spaces over a conformally flat base.

The base surface is an open, star-shaped (about the origin) planar
domain Omega with metric delta^-2 (dx^2 + dy^2).  Given a bundle
curvature function tau, the ambient 3-space is Omega x R with metric

    riemannian:  delta^-2 (dx^2 + dy^2) + (dz + C (y dx - x dy))^2
    lorentzian:  delta^-2 (dx^2 + dy^2) - (dz - C (y dx - x dy))^2

where C(x, y) = 2 * int_0^1 t * tau(t x, t y) / delta(t x, t y)^2 dt is
the radial potential that reconstructs the connection form from tau.
Star-shapedness makes the integral well defined: the segment from the
origin to any point of Omega stays inside Omega.

The potential satisfies the divergence identity

    d/dx (x C) + d/dy (y C) = 2 tau / delta^2,

which is what the twin construction rests on; ``verify_divergence_identity``
measures its finite-difference residual on a grid.

Orthonormal frames used throughout (note the second vector is a delta
multiple of d/dy; orthonormality under the metrics above forces this):

    E1 = delta (dx - y C dz),  E2 = delta (dy + x C dz),  E3 = dz
    L1 = delta (dx + y C dz),  L2 = delta (dy - x C dz),  L3 = dz
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .field import CallableField, GridSpec, ScalarField, as_field, quad_batch, sample, fd_partial

__all__ = [
    "PlaneDomain",
    "DiscDomain",
    "RectDomain",
    "RadialBoundDomain",
    "AnnulusDomain",
    "AnnularSectorDomain",
    "BaseSurface",
    "GBCVSpace",
    "RIEMANNIAN",
    "LORENTZIAN",
    "DomainMembershipError",
]

RIEMANNIAN = "riemannian"
LORENTZIAN = "lorentzian"


class DomainMembershipError(ValueError):
    pass


# --- planar domains --------------------------------------------------------


@dataclass(frozen=True)
class PlaneDomain:
    star_shaped_about_origin = True

    def contains(self, x, y):
        return np.ones(np.broadcast(np.asarray(x), np.asarray(y)).shape, dtype=bool)

    def bounding_box(self):
        return None

    def describe(self):
        return {"kind": "plane"}


@dataclass(frozen=True)
class DiscDomain:
    radius: float
    star_shaped_about_origin = True

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("disc radius must be positive")

    def contains(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return x * x + y * y < self.radius**2

    def bounding_box(self):
        r = self.radius
        return (-r, r, -r, r)

    def describe(self):
        return {"kind": "disc", "radius": self.radius}


@dataclass(frozen=True)
class RectDomain:
    xmin: float
    xmax: float
    ymin: float
    ymax: float
    star_shaped_about_origin = True

    def __post_init__(self):
        if not (self.xmin < 0 < self.xmax and self.ymin < 0 < self.ymax):
            raise ValueError("rectangle must contain the origin in its interior")

    def contains(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return (x > self.xmin) & (x < self.xmax) & (y > self.ymin) & (y < self.ymax)

    def bounding_box(self):
        return (self.xmin, self.xmax, self.ymin, self.ymax)

    def describe(self):
        return {
            "kind": "rect",
            "xmin": self.xmin,
            "xmax": self.xmax,
            "ymin": self.ymin,
            "ymax": self.ymax,
        }


class RadialBoundDomain:
    """Star-shaped region {r < r_max(theta)} given by an expression of
    the angle (variable name ``t``).  Positivity of r_max is checked on
    a dense angular sample at construction."""

    star_shaped_about_origin = True

    def __init__(self, rmax, check_points: int = 720):
        self.rmax = as_field_theta(rmax)
        thetas = np.linspace(0.0, 2 * math.pi, check_points, endpoint=False)
        vals = self.rmax(thetas)
        if not np.all(np.isfinite(vals)) or np.min(vals) <= 0:
            raise ValueError("r_max(theta) must be positive for all angles")
        self._rmax_max = float(np.max(vals))

    def contains(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        r = np.hypot(x, y)
        theta = np.arctan2(y, x)
        return r < self.rmax(theta)

    def bounding_box(self):
        m = self._rmax_max
        return (-m, m, -m, m)

    def describe(self):
        return {"kind": "radial", "rmax_upper": self._rmax_max}


@dataclass(frozen=True)
class AnnulusDomain:
    """Open annulus; not star-shaped about the origin, used only as a
    graph subdomain, never as a base domain."""

    inner: float
    outer: float
    star_shaped_about_origin = False

    def __post_init__(self):
        if not (0 <= self.inner < self.outer):
            raise ValueError("need 0 <= inner < outer")

    def contains(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        r2 = x * x + y * y
        return (r2 > self.inner**2) & (r2 < self.outer**2)

    def bounding_box(self):
        r = self.outer
        return (-r, r, -r, r)

    def describe(self):
        return {"kind": "annulus", "inner": self.inner, "outer": self.outer}


@dataclass(frozen=True)
class AnnularSectorDomain:
    """Open annular sector inner < r < outer, |theta| < half_angle."""

    inner: float
    outer: float
    half_angle: float
    star_shaped_about_origin = False

    def __post_init__(self):
        if not (0 <= self.inner < self.outer) or not (0 < self.half_angle <= math.pi):
            raise ValueError("invalid annular sector")

    def contains(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        r2 = x * x + y * y
        theta = np.arctan2(y, x)
        return (
            (r2 > self.inner**2)
            & (r2 < self.outer**2)
            & (np.abs(theta) < self.half_angle)
        )

    def bounding_box(self):
        r = self.outer
        return (-r, r, -r, r)

    def describe(self):
        return {
            "kind": "annular-sector",
            "inner": self.inner,
            "outer": self.outer,
            "half_angle": self.half_angle,
        }


class _ThetaField:
    """One-variable function of the angle with symbolic derivatives
    (expression variable ``t``)."""

    def __init__(self, source):
        from .field import ExprField

        if isinstance(source, (int, float)):
            source = repr(float(source))
        self._inner = ExprField(source, ("t",))

    def __call__(self, t):
        return self._inner._fn((0,))(np.asarray(t, dtype=float))

    def partial_t(self, t, order: int):
        return self._inner._fn((order,))(np.asarray(t, dtype=float))


def as_field_theta(obj) -> "_ThetaField":
    if isinstance(obj, _ThetaField):
        return obj
    return _ThetaField(obj)


# --- base surface ------------------------------------------------------------


class BaseSurface:
    """Conformally flat base: domain Omega plus positive conformal
    factor delta.  The metric is delta^-2 (dx^2 + dy^2)."""

    def __init__(self, domain, delta, *, known_cheeger: float | None = None,
                 known_curvature: float | None = None):
        if not getattr(domain, "star_shaped_about_origin", False):
            raise ValueError("base domain must be star-shaped about the origin")
        self.domain = domain
        self.delta = as_field(delta)
        # closed-form constants attached by presets (constant-curvature bases)
        self.known_cheeger = known_cheeger
        self.known_curvature = known_curvature

    def require_inside(self, x, y):
        inside = self.domain.contains(x, y)
        if not np.all(inside):
            raise DomainMembershipError("point outside the base domain")

    def delta_at(self, x, y):
        """delta values; positivity is a hard invariant."""
        d = self.delta(x, y)
        if np.any(~np.isfinite(d)) or np.any(d <= 0):
            raise ValueError("conformal factor delta must be positive on the domain")
        return d

    def grid_spec(self, h: float, pad: float = 0.0) -> GridSpec:
        box = self.domain.bounding_box()
        if box is None:
            raise ValueError("unbounded domain needs an explicit grid")
        xmin, xmax, ymin, ymax = box
        return GridSpec.cover(xmin + pad, xmax - pad, ymin + pad, ymax - pad, h)


# --- ambient space ------------------------------------------------------------


class GBCVSpace:
    """Ambient 3-space determined by (base, tau, signature).

    The potential C and its first partials are evaluated on demand by
    batched Gauss-Legendre quadrature along radial segments; expression-
    backed data therefore gets quadrature-limited accuracy at exact
    points (no interpolation error enters the identity tests).
    """

    def __init__(self, base: BaseSurface, tau, signature: str = RIEMANNIAN,
                 quad_tol: float = 1e-11, validate: bool = True):
        if signature not in (RIEMANNIAN, LORENTZIAN):
            raise ValueError(f"signature must be {RIEMANNIAN!r} or {LORENTZIAN!r}")
        self.base = base
        self.tau = as_field(tau)
        self.signature = signature
        self.quad_tol = quad_tol
        if validate:
            self._validate_frames()

    @property
    def sign(self) -> int:
        """+1 riemannian, -1 lorentzian (sign of <E3,E3> resp. <L3,L3>)."""
        return 1 if self.signature == RIEMANNIAN else -1

    # -- potential ----------------------------------------------------------

    def _ray_integrand(self, x, y, weight_power: int, fn):
        """Batched integrand t -> t^p * fn(t*x, t*y) for the points (x, y)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))

        def g(ts):
            tx = ts[:, None] * x[None, :]
            ty = ts[:, None] * y[None, :]
            return (ts[:, None] ** weight_power) * fn(tx, ty)

        return g

    def calabi(self, x, y):
        """Potential C at (x, y) (vectorized).  Requires (x, y) in Omega."""
        self.base.require_inside(x, y)
        scalar = np.isscalar(x) or (np.asarray(x).ndim == 0 and np.asarray(y).ndim == 0)
        shape = np.broadcast(np.asarray(x, dtype=float), np.asarray(y, dtype=float)).shape
        xf = np.broadcast_to(np.asarray(x, dtype=float), shape).ravel()
        yf = np.broadcast_to(np.asarray(y, dtype=float), shape).ravel()

        def w(px, py):
            return self.tau(px, py) / self.base.delta_at(px, py) ** 2

        out = 2.0 * quad_batch(self._ray_integrand(xf, yf, 1, w), 0.0, 1.0, self.quad_tol)
        out = out.reshape(shape)
        return float(out) if scalar else out

    def calabi_partial(self, x, y, var: str):
        """d C / d var by differentiation under the integral sign:
        dC/dx (p) = 2 int_0^1 t^2 (tau/delta^2)_x (t p) dt."""
        self.base.require_inside(x, y)
        scalar = np.isscalar(x) or (np.asarray(x).ndim == 0 and np.asarray(y).ndim == 0)
        shape = np.broadcast(np.asarray(x, dtype=float), np.asarray(y, dtype=float)).shape
        xf = np.broadcast_to(np.asarray(x, dtype=float), shape).ravel()
        yf = np.broadcast_to(np.asarray(y, dtype=float), shape).ravel()
        dx, dy = (1, 0) if var == "x" else (0, 1)

        def w(px, py):
            d = self.base.delta_at(px, py)
            dd = self.base.delta.partial(px, py, dx, dy)
            t = self.tau(px, py)
            dt = self.tau.partial(px, py, dx, dy)
            return dt / d**2 - 2.0 * t * dd / d**3

        out = 2.0 * quad_batch(self._ray_integrand(xf, yf, 2, w), 0.0, 1.0, self.quad_tol)
        out = out.reshape(shape)
        return float(out) if scalar else out

    @property
    def calabi_field(self) -> ScalarField:
        return CallableField(
            lambda x, y: self.calabi(x, y),
            {
                (1, 0): lambda x, y: self.calabi_partial(x, y, "x"),
                (0, 1): lambda x, y: self.calabi_partial(x, y, "y"),
            },
        )

    # -- metric and frames ----------------------------------------------------

    def metric_at(self, p3) -> np.ndarray:
        """3x3 coefficient matrix of the ambient metric at p3 = (x, y, z).

        Expands diag(delta^-2, delta^-2, 0) + s * w (x) w where w is the
        connection 1-form (s*C*y, -s*C*x, 1) and s is the signature sign.
        z never enters (vertical translations are isometries)."""
        x, y = float(p3[0]), float(p3[1])
        self.base.require_inside(x, y)
        d = float(self.base.delta_at(x, y))
        C = float(self.calabi(x, y))
        s = self.sign
        w = np.array([s * C * y, -s * C * x, 1.0])
        g = np.diag([d**-2, d**-2, 0.0]) + s * np.outer(w, w)
        return g

    def frame_at(self, p3) -> np.ndarray:
        """Rows are the coordinate components of the orthonormal frame
        (E1, E2, E3) or (L1, L2, L3) at p3."""
        x, y = float(p3[0]), float(p3[1])
        self.base.require_inside(x, y)
        d = float(self.base.delta_at(x, y))
        C = float(self.calabi(x, y))
        s = self.sign
        return np.array(
            [
                [d, 0.0, -s * d * y * C],
                [0.0, d, s * d * x * C],
                [0.0, 0.0, 1.0],
            ]
        )

    def frame_gram(self, p3) -> np.ndarray:
        g = self.metric_at(p3)
        F = self.frame_at(p3)
        return F @ g @ F.T

    def _validate_frames(self, npts: int = 4, tol: float = 1e-9):
        # light eager check that metric and frame wiring agree (also pins
        # the lorentzian signature (+,+,-))
        rng = np.random.default_rng(0)
        box = self.base.domain.bounding_box() or (-1.0, 1.0, -1.0, 1.0)
        want = np.diag([1.0, 1.0, float(self.sign)])
        found = 0
        for _ in range(64):
            x = rng.uniform(box[0], box[1]) * 0.5
            y = rng.uniform(box[2], box[3]) * 0.5
            if not bool(np.all(self.base.domain.contains(x, y))):
                continue
            G = self.frame_gram((x, y, 0.0))
            if not np.allclose(G, want, atol=tol):
                raise ValueError(
                    f"frame/metric mismatch at ({x:.3f},{y:.3f}): gram=\n{G}"
                )
            found += 1
            if found >= npts:
                return
        if found == 0:
            raise ValueError("could not sample any interior point for validation")

    # -- identity verification -------------------------------------------------

    def verify_divergence_identity(self, spec: GridSpec) -> dict:
        """Finite-difference residual of d/dx(x C) + d/dy(y C) - 2 tau/delta^2
        over the grid's central-stencil interior."""
        X, Y = spec.coords()
        mask = np.asarray(self.base.domain.contains(X, Y), dtype=bool)
        from .field import Grid, EmptyMaskError

        if not mask.any():
            raise EmptyMaskError("no grid node inside the base domain")
        C = np.full(X.shape, np.nan)
        C[mask] = self.calabi(X[mask], Y[mask])
        gx = Grid(spec, np.where(mask, X * C, np.nan), mask)
        gy = Grid(spec, np.where(mask, Y * C, np.nan), mask)
        ddx = fd_partial(gx, "x", 1)
        ddy = fd_partial(gy, "y", 1)
        interior = Grid(spec, C, mask).interior_mask() & ddx.mask & ddy.mask
        if not interior.any():
            raise EmptyMaskError("interior is empty at this resolution")
        rhs = np.full(X.shape, np.nan)
        rhs[mask] = 2.0 * self.tau(X[mask], Y[mask]) / self.base.delta_at(X[mask], Y[mask]) ** 2
        res = np.abs(ddx.values + ddy.values - rhs)[interior]
        return {
            "h": spec.h,
            "interior_nodes": int(interior.sum()),
            "max_residual": float(np.max(res)),
            "l2_residual": float(np.sqrt(np.mean(res**2))),
        }
