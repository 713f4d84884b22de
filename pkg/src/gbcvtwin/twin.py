"""Twin correspondence between graphs in the riemannian space and
spacelike graphs in the lorentzian space.

Given a graph z = f(x, y) with mean curvature H in the riemannian
ambient with bundle curvature tau, the 1-form

    dg = (-beta/omega + y C_H) dx + (alpha/omega - x C_H) dy

is closed (C_H is the potential of H), and its potential g is a
spacelike graph in the lorentzian ambient with bundle curvature H whose
mean curvature is tau.  The derived fields satisfy the twin relations

    (alpha~, beta~) = (-beta/omega, alpha/omega),   omega~ = 1/omega,

the spacelike margin equals 1/omega^2, and the map between the graphs
is conformal with factor 1/omega^2.  The inverse direction integrates

    df = (beta~/omega~ - y C_tau) dx + (-alpha~/omega~ + x C_tau) dy.

Numerically, g is reconstructed by integrating the 1-form along straight
segments from the origin (valid since the domain is star-shaped).  On
radial segments the rotational part C (y dx - x dy) annihilates the
direction vector identically, so the potential-term quadratures drop
out of both the value integral and the differentiated-under-the-integral
partials; what remains is an honest numerical object whose derivatives
recover the form components exactly when (and only when) the form is
closed, which is the content of the correspondence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from .field import (
    CallableField,
    EmptyMaskError,
    Grid,
    GridField,
    GridSpec,
    ScalarField,
    as_field,
    fd_partial,
    quad_batch,
    sample,
)
from .graphs import GraphSurface, NonSpacelikeError
from .spaces import GBCVSpace, LORENTZIAN, RIEMANNIAN

__all__ = [
    "OneForm",
    "PotentialField",
    "TwinPair",
    "mean_curvature_field",
    "twin_form",
    "integrate_exact_form",
    "twin",
    "twin_inverse",
    "verify_conformality",
]


def mean_curvature_field(surface: GraphSurface, spec: Optional[GridSpec] = None,
                         fd_step: float = 1e-5) -> ScalarField:
    """Mean curvature of a graph as a scalar field.

    Smooth-backed heights (symbolic or closure derivatives up to order
    two) get an exact pointwise field; its own first partials, needed
    only when this field feeds a nested potential, use Richardson
    central differences with step ``fd_step``.  Grid-backed heights are
    evaluated over ``spec`` and returned as a grid field.
    """
    if surface.height.max_order >= 2 and spec is None:
        def value(x, y):
            return surface.mean_curvature(x, y)

        def pd(var):
            def f(x, y):
                x = np.asarray(x, dtype=float)
                y = np.asarray(y, dtype=float)
                hx = fd_step if var == "x" else 0.0
                hy = fd_step if var == "y" else 0.0
                c1 = (value(x + hx, y + hy) - value(x - hx, y - hy)) / (2 * fd_step)
                c2 = (value(x + hx / 2, y + hy / 2) - value(x - hx / 2, y - hy / 2)) / fd_step
                return (4.0 * c2 - c1) / 3.0
            return f

        return CallableField(value, {(1, 0): pd("x"), (0, 1): pd("y")})
    if spec is None:
        raise ValueError("grid-backed surface needs a grid spec for its curvature field")
    data = surface.evaluate_grid(spec)
    return GridField(data["grids"]["mean_curvature"])


@dataclass
class OneForm:
    """P dx + Q dy split as (P0 + y*rot) dx + (Q0 - x*rot) dy.

    ``rot`` is the coefficient of the rotational part y dx - x dy (the
    ambient potential term in the twin construction); keeping it
    separate lets radial-path integration skip it, because it vanishes
    identically on rays through the origin.
    """

    P0: Callable
    Q0: Callable
    P0_x: Optional[Callable] = None
    P0_y: Optional[Callable] = None
    Q0_x: Optional[Callable] = None
    Q0_y: Optional[Callable] = None
    rot: Optional[Callable] = None

    def components(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        P = np.asarray(self.P0(x, y), dtype=float)
        Q = np.asarray(self.Q0(x, y), dtype=float)
        if self.rot is not None:
            c = np.asarray(self.rot(x, y), dtype=float)
            P = P + y * c
            Q = Q - x * c
        return P, Q

    def closedness_residual(self, spec: GridSpec, domain=None) -> dict:
        """Max/L2 norms of |dQ/dx - dP/dy| by central differences over
        the grid interior; zero in exact arithmetic when the form is
        exact, so this measures pipeline error only."""
        X, Y = spec.coords()
        mask = np.asarray(domain.contains(X, Y), dtype=bool) if domain is not None \
            else np.ones(X.shape, dtype=bool)
        if not mask.any():
            raise EmptyMaskError("no grid node inside the domain")
        P = np.full(X.shape, np.nan)
        Q = np.full(X.shape, np.nan)
        P[mask], Q[mask] = self.components(X[mask], Y[mask])
        qx = fd_partial(Grid(spec, Q, mask), "x", 1)
        py = fd_partial(Grid(spec, P, mask), "y", 1)
        common = qx.mask & py.mask
        res = np.abs(qx.values - py.values)[common]
        return {
            "h": spec.h,
            "nodes": int(common.sum()),
            "max_residual": float(np.max(res)),
            "l2_residual": float(np.sqrt(np.mean(res**2))),
        }


class PotentialField(ScalarField):
    """Potential of an exact 1-form, integrated along straight segments
    from the origin; first partials by differentiation under the
    integral (available when the form carries component derivatives).
    Normalized so that value(p0) = c0."""

    def __init__(self, form: OneForm, p0=(0.0, 0.0), c0: float = 0.0,
                 quad_tol: float = 1e-11):
        self.form = form
        self.max_order = 1 if form.P0_x is not None else 0
        self.quad_tol = quad_tol
        self.p0 = (float(p0[0]), float(p0[1]))
        self._shift = 0.0
        self._shift = c0 - float(self._raw_value(np.array([self.p0[0]]), np.array([self.p0[1]]))[0])

    def _raw_value(self, x, y):
        P0, Q0 = self.form.P0, self.form.Q0

        def integrand(ts):
            tx = ts[:, None] * x[None, :]
            ty = ts[:, None] * y[None, :]
            return P0(tx, ty) * x[None, :] + Q0(tx, ty) * y[None, :]

        return quad_batch(integrand, 0.0, 1.0, self.quad_tol)

    def _value(self, x, y):
        shape = np.broadcast(x, y).shape
        xf = np.broadcast_to(x, shape).ravel()
        yf = np.broadcast_to(y, shape).ravel()
        return (self._raw_value(xf, yf) + self._shift).reshape(shape)

    def _partial(self, x, y, dx, dy):
        f = self.form
        if f.P0_x is None:
            raise ValueError("this potential was built without form derivatives")
        shape = np.broadcast(x, y).shape
        xf = np.broadcast_to(x, shape).ravel()
        yf = np.broadcast_to(y, shape).ravel()
        if (dx, dy) == (1, 0):
            comp, d1, d2 = f.P0, f.P0_x, f.Q0_x
        else:
            comp, d1, d2 = f.Q0, f.P0_y, f.Q0_y

        def integrand(ts):
            tx = ts[:, None] * xf[None, :]
            ty = ts[:, None] * yf[None, :]
            return comp(tx, ty) + ts[:, None] * (
                d1(tx, ty) * xf[None, :] + d2(tx, ty) * yf[None, :]
            )

        return quad_batch(integrand, 0.0, 1.0, self.quad_tol).reshape(shape)


class PolarPathPotential(ScalarField):
    """Potential integrated along an arc-then-radial path from an
    anchor point, for annular-sector domains that rays from the origin
    would exit.  Value only (no analytic partials)."""

    max_order = 0

    def __init__(self, form: OneForm, anchor, c0: float = 0.0, quad_tol: float = 1e-11):
        self.form = form
        self.quad_tol = quad_tol
        self.anchor = (float(anchor[0]), float(anchor[1]))
        self.c0 = float(c0)
        self._ra = math.hypot(*self.anchor)
        self._ta = math.atan2(self.anchor[1], self.anchor[0])

    def _value(self, x, y):
        shape = np.broadcast(x, y).shape
        xf = np.broadcast_to(x, shape).ravel()
        yf = np.broadcast_to(y, shape).ravel()
        r = np.hypot(xf, yf)
        th = np.arctan2(yf, xf)
        ra, ta = self._ra, self._ta

        def arc_integrand(ss):
            ang = ta + ss[:, None] * (th[None, :] - ta)
            px = ra * np.cos(ang)
            py = ra * np.sin(ang)
            P, Q = self.form.components(px, py)
            dth = (th - ta)[None, :]
            return (-P * ra * np.sin(ang) + Q * ra * np.cos(ang)) * dth

        def radial_integrand(ss):
            rr = ra + ss[:, None] * (r[None, :] - ra)
            px = rr * np.cos(th)[None, :]
            py = rr * np.sin(th)[None, :]
            P, Q = self.form.components(px, py)
            dr = (r - ra)[None, :]
            return (P * np.cos(th)[None, :] + Q * np.sin(th)[None, :]) * dr

        arc = quad_batch(arc_integrand, 0.0, 1.0, self.quad_tol)
        rad = quad_batch(radial_integrand, 0.0, 1.0, self.quad_tol)
        return (self.c0 + arc + rad).reshape(shape)

    def value_swapped_path(self, x, y):
        """Radial-leg-first alternative, for path-independence checks."""
        shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
        xf = np.broadcast_to(np.asarray(x, dtype=float), shape).ravel()
        yf = np.broadcast_to(np.asarray(y, dtype=float), shape).ravel()
        r = np.hypot(xf, yf)
        th = np.arctan2(yf, xf)
        ra, ta = self._ra, self._ta

        def radial_integrand(ss):
            rr = ra + ss[:, None] * (r[None, :] - ra)
            px = rr * math.cos(ta)
            py = rr * math.sin(ta)
            P, Q = self.form.components(px, py)
            dr = (r - ra)[None, :]
            return (P * math.cos(ta) + Q * math.sin(ta)) * dr

        def arc_integrand(ss):
            ang = ta + ss[:, None] * (th[None, :] - ta)
            px = r[None, :] * np.cos(ang)
            py = r[None, :] * np.sin(ang)
            P, Q = self.form.components(px, py)
            dth = (th - ta)[None, :]
            return (-P * np.sin(ang) + Q * np.cos(ang)) * r[None, :] * dth

        rad = quad_batch(radial_integrand, 0.0, 1.0, self.quad_tol)
        arc = quad_batch(arc_integrand, 0.0, 1.0, self.quad_tol)
        return (self.c0 + rad + arc).reshape(shape)


# --- the correspondence ----------------------------------------------------


def _surface_form_components(surface: GraphSurface):
    """Closures for (-beta/omega, alpha/omega) when the ambient is
    riemannian, or (beta~/omega~, -alpha~/omega~) when lorentzian (the
    inverse relations), plus their x/y partials when the height carries
    second derivatives (else None: the potential is then value-only)."""
    # sign conventions: riemannian s=+1 gives (P0, Q0) = (-b, a)/w,
    # lorentzian s=-1 gives (b, -a)/w, i.e. (P0, Q0) = s*(-b, a)/w
    s = float(surface.space.sign)

    def P0(x, y):
        f = surface.first_order_data(x, y, "twin form")
        return -s * f["b"] / f["w"]

    def Q0(x, y):
        f = surface.first_order_data(x, y, "twin form")
        return s * f["a"] / f["w"]

    if surface.height.max_order < 2:
        return P0, Q0, None, None, None, None

    def data(x, y):
        return surface.divergence_data(x, y, "twin form")

    def P0_x(x, y):
        f = data(x, y)
        return -s * (f["b_x"] * f["w"] - f["b"] * f["w_x"]) / f["w"] ** 2

    def P0_y(x, y):
        f = data(x, y)
        return -s * (f["b_y"] * f["w"] - f["b"] * f["w_y"]) / f["w"] ** 2

    def Q0_x(x, y):
        f = data(x, y)
        return s * (f["a_x"] * f["w"] - f["a"] * f["w_x"]) / f["w"] ** 2

    def Q0_y(x, y):
        f = data(x, y)
        return s * (f["a_y"] * f["w"] - f["a"] * f["w_y"]) / f["w"] ** 2

    return P0, Q0, P0_x, P0_y, Q0_x, Q0_y


def twin_form(surface: GraphSurface, potential_space: GBCVSpace) -> OneForm:
    """The exact 1-form whose potential is the twin height function.

    ``potential_space`` is the target ambient (lorentzian with bundle
    curvature H for the forward direction, riemannian with bundle
    curvature tau for the inverse); its Calabi potential supplies the
    rotational part, with the sign fixed by the direction.
    """
    P0, Q0, P0_x, P0_y, Q0_x, Q0_y = _surface_form_components(surface)
    rot_sign = 1.0 if surface.space.sign > 0 else -1.0

    def rot(x, y):
        return rot_sign * potential_space.calabi(x, y)

    return OneForm(P0, Q0, P0_x, P0_y, Q0_x, Q0_y, rot=rot)


def integrate_exact_form(form: OneForm, p0=(0.0, 0.0), c0: float = 0.0,
                         quad_tol: float = 1e-11, domain=None) -> ScalarField:
    """Reconstruct the potential of an exact form.

    Star-shaped-about-origin domains integrate along rays from the
    origin (and keep analytic first partials); annulus sectors fall
    back to an arc-then-radial path from an anchor inside the sector.
    """
    if domain is not None and not getattr(domain, "star_shaped_about_origin", True):
        ra = 0.5 * (domain.inner + domain.outer)
        ta = 0.0
        anchor = (ra * math.cos(ta), ra * math.sin(ta))
        pot = PolarPathPotential(form, anchor, 0.0, quad_tol)
        base_val = float(pot(np.array([p0[0]]), np.array([p0[1]]))[0])
        pot.c0 += c0 - base_val
        return pot
    return PotentialField(form, p0, c0, quad_tol)


def path_independence_check(potential: ScalarField, points) -> float:
    """Compare the potential against an independently routed path.

    For radial potentials the check path is axis-aligned (along x, then
    along y); for polar-path potentials the two legs are swapped.
    Returns the max absolute deviation over the points.
    """
    xs = np.asarray([p[0] for p in points], dtype=float)
    ys = np.asarray([p[1] for p in points], dtype=float)
    direct = potential(xs, ys)
    if isinstance(potential, PolarPathPotential):
        other = potential.value_swapped_path(xs, ys)
        return float(np.max(np.abs(direct - other)))
    assert isinstance(potential, PotentialField)
    form = potential.form

    def lpath(x0, y0):
        # leg 1: (0,0) -> (x0, 0); leg 2: (x0, 0) -> (x0, y0)
        def leg1(ts):
            P, _ = form.components(ts[:, None] * x0, np.zeros((len(ts), len(x0))))
            return P * x0[None, :]

        def leg2(ts):
            _, Q = form.components(np.broadcast_to(x0, (len(ts), len(x0))), ts[:, None] * y0)
            return Q * y0[None, :]

        a = quad_batch(leg1, 0.0, 1.0, potential.quad_tol)
        b = quad_batch(leg2, 0.0, 1.0, potential.quad_tol)
        return a + b + potential._shift

    other = lpath(xs, ys)
    return float(np.max(np.abs(direct - other)))


@dataclass
class TwinPair:
    """A matched pair of graphs: f in the riemannian ambient with bundle
    curvature tau and mean curvature H, g spacelike in the lorentzian
    ambient with bundle curvature H and mean curvature tau."""

    riemannian_surface: GraphSurface
    lorentzian_surface: GraphSurface
    H: ScalarField
    tau: ScalarField
    p0: tuple = (0.0, 0.0)
    c0: float = 0.0
    form: Optional[OneForm] = None

    def verify_pointwise(self, points) -> dict:
        """Twin relations, omega product, margin identity, and angle
        product at the given points.  All quantities on the lorentzian
        side are recomputed from g through the generic graph machinery,
        so this really exercises the reconstruction."""
        xs = np.asarray([p[0] for p in points], dtype=float)
        ys = np.asarray([p[1] for p in points], dtype=float)
        f = self.riemannian_surface
        g = self.lorentzian_surface
        a, b = f.alpha_beta(xs, ys)
        w = f.omega(xs, ys)
        ta, tb = g.alpha_beta(xs, ys)
        margin = g.spacelike_margin(xs, ys)
        tw = np.sqrt(np.where(margin > 0, margin, np.nan))
        rel = np.max(np.abs(ta + b / w))
        rel = max(rel, float(np.max(np.abs(tb - a / w))))
        return {
            "points": len(xs),
            "twin_relation_max_dev": float(rel),
            "omega_product_max_dev": float(np.max(np.abs(w * tw - 1.0))),
            "margin_identity_max_dev": float(np.max(np.abs(margin - 1.0 / w**2))),
            "angle_product_max_dev": float(
                np.max(np.abs(f.angle_function(xs, ys) * g.angle_function(xs, ys) - 1.0))
            ),
            "all_spacelike": bool(np.all(margin > 0)),
        }

    def verify_swap(self, spec: GridSpec, prescribed=None) -> dict:
        """Mean curvature of the lorentzian graph by grid finite
        differences against the prescribed field (the source ambient's
        bundle curvature by default)."""
        target = as_field(prescribed) if prescribed is not None else self.tau
        g = self.lorentzian_surface
        X, Y = spec.coords()
        mask = np.asarray(g.domain.contains(X, Y), dtype=bool)
        mask &= np.asarray(g.space.base.domain.contains(X, Y), dtype=bool)
        if not mask.any():
            raise EmptyMaskError("no grid node inside the twin domain")
        xs, ys = X[mask], Y[mask]
        d = g.space.base.delta_at(xs, ys)
        ta, tb = g.alpha_beta(xs, ys)
        margin = 1.0 - d * d * (ta * ta + tb * tb)
        ok = margin > 0
        tw = np.sqrt(np.where(ok, margin, np.nan))
        A = np.full(X.shape, np.nan)
        B = np.full(X.shape, np.nan)
        A[mask] = ta / tw
        B[mask] = tb / tw
        m2 = mask.copy()
        m2[np.where(mask)] = ok
        ax = fd_partial(Grid(spec, A, m2), "x", 1)
        by = fd_partial(Grid(spec, B, m2), "y", 1)
        interior = Grid(spec, A, m2).interior_mask() & ax.mask & by.mask
        if not interior.any():
            raise EmptyMaskError("twin grid interior is empty")
        D = np.full(X.shape, np.nan)
        D[mask] = d
        H_num = 0.5 * D**2 * (ax.values + by.values)
        T = np.full(X.shape, np.nan)
        T[mask] = target(xs, ys)
        res = np.abs(H_num - T)[interior]
        return {
            "h": spec.h,
            "interior_nodes": int(interior.sum()),
            "max_residual": float(np.max(res)),
            "l2_residual": float(np.sqrt(np.mean(res**2))),
            "nonspacelike_nodes": int(np.sum(~ok)),
        }


def _spot_points(domain, n, seed=7):
    rng = np.random.default_rng(seed)
    box = domain.bounding_box()
    if box is None:
        box = (-1.0, 1.0, -1.0, 1.0)
    pts = []
    for _ in range(200 * n):
        x = rng.uniform(box[0], box[1])
        y = rng.uniform(box[2], box[3])
        if bool(np.all(domain.contains(x, y))):
            pts.append((x, y))
            if len(pts) == n:
                break
    if not pts:
        raise ValueError("could not sample points inside the domain")
    return pts


def twin(f_surface: GraphSurface, H: Optional[ScalarField] = None,
         p0=(0.0, 0.0), c0: float = 0.0, quad_tol: float = 1e-11,
         spacelike_check_tol: float = 1e-6, domain=None) -> TwinPair:
    """Forward correspondence: riemannian graph -> spacelike twin.

    ``H`` may carry a caller-supplied mean curvature field (when a
    closed form is known); otherwise it is computed pointwise from the
    surface.  Star-shaped domains with smooth height data run on the
    spectral ray engine; annular sectors use the arc-then-radial path.
    A sampled spacelike/margin spot check guards against an
    inconsistent H or insufficient quadrature tolerance.
    """
    if f_surface.space.signature != RIEMANNIAN:
        raise ValueError("twin() expects a riemannian-ambient graph; see twin_inverse()")
    dom = domain if domain is not None else f_surface.domain
    H_field = as_field(H) if H is not None else None
    use_rays = (f_surface.height.max_order >= 2
                and getattr(dom, "star_shaped_about_origin", False))
    if use_rays:
        from .rays import RayCalabiSpace, RayPotentialField, TwinRayEngine

        engine = TwinRayEngine(f_surface, H_override=H_field)
        if H_field is None:
            H_field = mean_curvature_field(f_surface)
        lor_space = RayCalabiSpace(f_surface.space.base, H_field, LORENTZIAN,
                                   engine, quad_tol=quad_tol)
        g_field = RayPotentialField(engine, p0, c0)
        form = twin_form(f_surface, lor_space)
    else:
        if H_field is None:
            H_field = mean_curvature_field(f_surface)
        lor_space = GBCVSpace(f_surface.space.base, H_field, LORENTZIAN,
                              quad_tol=quad_tol, validate=False)
        form = twin_form(f_surface, lor_space)
        g_field = integrate_exact_form(form, p0, c0, quad_tol, dom)
    g_surface = GraphSurface(lor_space, g_field, dom)
    pair = TwinPair(f_surface, g_surface, H_field, f_surface.space.tau, tuple(p0), c0, form)
    if g_field.max_order >= 1:
        pts = _spot_points(dom, 12)
        rep = pair.verify_pointwise(pts)
        if not rep["all_spacelike"] or rep["margin_identity_max_dev"] > spacelike_check_tol:
            raise NonSpacelikeError(
                "twin construction failed its spacelike spot check "
                f"(margin deviation {rep['margin_identity_max_dev']:.3e}); "
                "either H is inconsistent with the surface or the tolerance is too coarse"
            )
    return pair


def twin_inverse(g_surface: GraphSurface, tau: Optional[ScalarField] = None,
                 p0=(0.0, 0.0), c0: float = 0.0, quad_tol: float = 1e-11,
                 domain=None) -> TwinPair:
    """Inverse correspondence: spacelike lorentzian graph -> riemannian
    twin.  ``tau`` is the graph's mean curvature (computed pointwise
    when not supplied); it becomes the bundle curvature of the target
    riemannian ambient."""
    if g_surface.space.signature != LORENTZIAN:
        raise ValueError("twin_inverse() expects a lorentzian-ambient graph")
    tau_field = as_field(tau) if tau is not None else mean_curvature_field(g_surface)
    riem_space = GBCVSpace(g_surface.space.base, tau_field, RIEMANNIAN,
                           quad_tol=quad_tol, validate=False)
    form = twin_form(g_surface, riem_space)
    dom = domain if domain is not None else g_surface.domain
    f_field = integrate_exact_form(form, p0, c0, quad_tol, dom)
    f_surface = GraphSurface(riem_space, f_field, dom)
    return TwinPair(f_surface, g_surface, g_surface.space.tau, tau_field, tuple(p0), c0, form)


def verify_conformality(pair: TwinPair, points) -> dict:
    """Induced-metric comparison I* = I / omega^2 and the inverse angle
    functions, point by point.  Deviations are measured entrywise
    relative to the max-norm of the reference matrix."""
    f = pair.riemannian_surface
    g = pair.lorentzian_surface
    worst = 0.0
    worst_angle = 0.0
    for (x, y) in points:
        I = f.induced_metric(x, y)
        Istar = g.induced_metric(x, y)
        w = float(f.omega(x, y))
        ref = I / w**2
        scale = np.max(np.abs(ref))
        worst = max(worst, float(np.max(np.abs(Istar - ref)) / scale))
        prod = float(f.angle_function(x, y)) * float(g.angle_function(x, y))
        worst_angle = max(worst_angle, abs(prod - 1.0))
    return {
        "points": len(points),
        "max_metric_rel_dev": worst,
        "max_angle_product_dev": worst_angle,
    }
