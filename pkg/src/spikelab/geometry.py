"""Two-dimensional model wedges and the closed-form eikonal limits on them.

Coordinates are (x1, xn).  The source point is Q0 = (-1, 0) and the wedge
vertex sits at the origin.  For 0 < alpha <= pi the model domain is the
sector of half-angle alpha about the negative x1 axis (the physical
wedge doubled across the Neumann line), bounded by two Dirichlet rays
with directions (-cos alpha, +-sin alpha) and closed by a circular arc of
radius D.  For alpha = pi the two rays coincide and the domain is a disc
with a slit along the positive x1 axis.

For pi < alpha < 2pi the domain is the sector of half-angle alpha - pi
about the positive x1 axis.  Its lower edge is the Dirichlet ray of the
physical wedge and Q0 lies outside it, at unit distance from the vertex.

All lines are described by unit normals; tan(alpha) never appears.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import (DegenerateConfigurationError, DomainError,
                     ParameterError, PreconditionError, RegimeError)

__all__ = [
    "Regime", "EdgeTag", "WedgeDomain", "build_domain", "classify",
    "reflect_source", "limit_profile", "boundary_infimum_oracle",
    "minimizer_point", "minimizer_point_tan", "eikonal_gradient_check",
    "ridge_distance", "random_interior_points",
]

N_ARC = 256


class Regime(str, Enum):
    ACUTE = "ACUTE"
    OBTUSE_FLAT = "OBTUSE_FLAT"
    REFLEX = "REFLEX"


class EdgeTag(str, Enum):
    DIRICHLET_UP = "DIRICHLET_UP"
    DIRICHLET_DOWN = "DIRICHLET_DOWN"
    NEUMANN_FLAT = "NEUMANN_FLAT"
    CLOSURE = "CLOSURE"


def classify(alpha):
    if not 0 < alpha < 2 * math.pi:
        raise ParameterError(f"opening angle must lie in (0, 2pi), got {alpha}")
    if alpha < math.pi / 2:
        return Regime.ACUTE
    if alpha <= math.pi:
        return Regime.OBTUSE_FLAT
    return Regime.REFLEX


@dataclass(frozen=True)
class WedgeDomain:
    alpha: float
    D: float
    regime: Regime
    vertices: np.ndarray = field(repr=False)
    edge_tags: tuple = field(repr=False)
    Q0: np.ndarray = field(default_factory=lambda: np.array([-1.0, 0.0]))
    Q1: np.ndarray | None = None
    Q2: np.ndarray | None = None

    @property
    def half_angle(self):
        """Half-opening of the sector about its symmetry axis."""
        if self.regime is Regime.REFLEX:
            return self.alpha - math.pi
        return self.alpha

    @property
    def axis_sign(self):
        """-1 if the sector opens along the negative x1 axis, +1 otherwise."""
        return 1.0 if self.regime is Regime.REFLEX else -1.0

    def polar(self, pts):
        """Radius and signed angle from the symmetry axis."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        x1, xn = pts[:, 0], pts[:, 1]
        r = np.hypot(x1, xn)
        psi = np.arctan2(xn, self.axis_sign * x1)
        return r, psi

    def contains(self, pts, closed=False, tol=1e-12):
        r, psi = self.polar(pts)
        a = self.half_angle
        if closed:
            return (r <= self.D + tol) & ((np.abs(psi) <= a + tol) | (r <= tol))
        return (r < self.D) & (np.abs(psi) < a)

    def edges(self):
        v = self.vertices
        return v, np.roll(v, -1, axis=0)

    def boundary_distance(self, pts):
        """Euclidean distance from each point to the polygonal boundary."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        a, b = self.edges()
        ab = b - a
        L2 = np.einsum("ij,ij->i", ab, ab)
        L2[L2 == 0] = 1.0
        ap = pts[:, None, :] - a[None, :, :]
        t = np.clip(np.einsum("kij,ij->ki", ap, ab) / L2, 0.0, 1.0)
        near = a[None] + t[..., None] * ab[None]
        return np.sqrt(((pts[:, None, :] - near) ** 2).sum(-1)).min(axis=1)

    def dist_Q0_boundary(self):
        return float(self.boundary_distance(self.Q0)[0])

    def expected_lower_bound(self):
        """sin(alpha) in the acute regime, 1 otherwise."""
        if self.regime is Regime.ACUTE:
            return math.sin(self.alpha)
        return 1.0

    def is_symmetric(self, tol=1e-12):
        v = self.vertices
        mirrored = v * np.array([1.0, -1.0])
        # the vertex list reversed (cyclically) is its own mirror image
        return bool(np.allclose(np.roll(mirrored[::-1], 1, axis=0), v, atol=tol))

    def inscribed_square(self, side=None):
        """Centre on the symmetry axis of an axis-aligned square inside the domain.

        Returns None if no such square of the given side (default D/2)
        exists.  The vertex lies on the boundary, so no square centred
        there can be interior; the search runs along the axis instead.
        """
        s = 0.5 * self.D if side is None else side
        for c in np.linspace(0.0, self.D, 2001):
            centre = np.array([self.axis_sign * c, 0.0])
            corners = centre + 0.5 * s * np.array(
                [[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float)
            edges = np.vstack([np.linspace(corners[i], corners[j], 33)
                               for i, j in ((0, 1), (1, 3), (3, 2), (2, 0))])
            if self.contains(edges).all():
                return centre
        return None

    def to_json(self):
        return {
            "alpha": self.alpha, "D": self.D, "regime": self.regime.value,
            "vertices": self.vertices.tolist(),
            "edge_tags": [t.value for t in self.edge_tags],
            "Q0": self.Q0.tolist(),
            "Q1": None if self.Q1 is None else self.Q1.tolist(),
            "Q2": None if self.Q2 is None else self.Q2.tolist(),
        }

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)


def _reflect(point, normal):
    return point - 2.0 * np.dot(point, normal) * normal


def _upper_normal(alpha):
    """Unit normal of the upper Dirichlet line x1 sin a + xn cos a = 0."""
    return np.array([math.sin(alpha), math.cos(alpha)])


def reflect_source(alpha):
    """Mirror images of Q0 across the two Dirichlet lines (acute regime)."""
    if classify(alpha) is not Regime.ACUTE:
        raise RegimeError("reflected sources are defined for acute angles only")
    return _reflected_pair(alpha)


def _reflected_pair(alpha):
    q1 = _reflect(np.array([-1.0, 0.0]), _upper_normal(alpha))
    return q1, q1 * np.array([1.0, -1.0])


def build_domain(alpha, D=8.0, n_arc=N_ARC):
    regime = classify(alpha)
    if not D > 1:
        raise ParameterError(f"D must exceed 1, got {D}")
    if regime is Regime.REFLEX:
        b = alpha - math.pi
        arc = np.linspace(-b, b, n_arc + 1)
        pts = D * np.column_stack([np.cos(arc), np.sin(arc)])
        lower_tag, upper_tag = EdgeTag.DIRICHLET_DOWN, EdgeTag.DIRICHLET_UP
    else:
        arc = np.linspace(alpha, -alpha, n_arc + 1)
        pts = D * np.column_stack([-np.cos(arc), np.sin(arc)])
        lower_tag, upper_tag = EdgeTag.DIRICHLET_UP, EdgeTag.DIRICHLET_DOWN
    vertices = np.vstack([[0.0, 0.0], pts])
    tags = (lower_tag,) + (EdgeTag.CLOSURE,) * n_arc + (upper_tag,)
    q1 = q2 = None
    if regime is Regime.ACUTE:
        q1, q2 = _reflected_pair(alpha)
    return WedgeDomain(alpha=float(alpha), D=float(D), regime=regime,
                       vertices=vertices, edge_tags=tags, Q1=q1, Q2=q2)


def _check_inside(pts, dom):
    if not dom.contains(pts, closed=True, tol=1e-9).all():
        raise DomainError("point outside the closure of the model domain")


def limit_profile(x, dom, x_perp=0.0, check=True):
    """Closed-form limit of -(1/d) log(phi) at the points ``x``.

    ``x_perp`` is |x''|, the norm of the transverse coordinates in
    higher-dimensional sections.
    """
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    if check:
        _check_inside(pts, dom)
    x1, xn = pts[:, 0], pts[:, 1]
    t2 = np.asarray(x_perp, dtype=float) ** 2
    if dom.regime is Regime.REFLEX:
        out = np.sqrt((x1 + 1.0) ** 2 + xn ** 2 + t2)
    else:
        q1, q2 = _reflected_pair(dom.alpha)
        d1 = np.sqrt((x1 - q1[0]) ** 2 + (xn - q1[1]) ** 2 + t2)
        d2 = np.sqrt((x1 - q2[0]) ** 2 + (xn - q2[1]) ** 2 + t2)
        if dom.regime is Regime.ACUTE:
            out = np.minimum(d1, d2)
        else:
            # the ray on the same side as x; evenness in xn
            refl = np.where(xn >= 0, d1, d2)
            theta = np.abs(np.arctan2(xn, x1))
            shadow = theta <= 2.0 * (math.pi - dom.alpha)
            far = np.sqrt((1.0 + np.hypot(x1, xn)) ** 2 + t2)
            out = np.where(shadow, refl, far)
    return out if np.ndim(x) > 1 else float(out[0])


def _boundary_samples(dom, m):
    a, b = dom.edges()
    lengths = np.linalg.norm(b - a, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    s = (np.arange(m) + 0.5) * cum[-1] / m
    k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(a) - 1)
    t = (s - cum[k]) / np.where(lengths[k] > 0, lengths[k], 1.0)
    return a[k] + t[:, None] * (b[k] - a[k]), s, cum


def boundary_infimum_oracle(x, dom, m=4000):
    """Brute-force inf over the boundary of |x - z| + |z - Q0|.

    The discrete argmin is polished by a bounded golden-section search
    along the boundary arclength, one sample spacing on either side.
    """
    if m < 1000:
        raise PreconditionError("need at least 1000 boundary samples")
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    z, s, cum = _boundary_samples(dom, m)
    a, b = dom.edges()
    lengths = np.diff(cum)
    q0 = dom.Q0
    step = cum[-1] / m

    def point_at(sv):
        sv = sv % cum[-1]
        k = min(max(np.searchsorted(cum, sv, side="right") - 1, 0), len(a) - 1)
        t = (sv - cum[k]) / lengths[k] if lengths[k] > 0 else 0.0
        return a[k] + t * (b[k] - a[k])

    out = np.empty(len(pts))
    zq = np.linalg.norm(z - q0, axis=1)
    for i, p in enumerate(pts):
        f = np.linalg.norm(z - p, axis=1) + zq
        j = int(np.argmin(f))
        best = f[j]

        def cost(sv, p=p):
            zz = point_at(sv)
            return np.linalg.norm(p - zz) + np.linalg.norm(zz - q0)

        # the cost is piecewise smooth in arclength; polish on each side
        # of every polygon corner inside the bracket
        lo, hi = s[j] - step, s[j] + step
        cuts = [lo] + [c for c in cum if lo < c < hi] + [hi]
        for u, v in zip(cuts[:-1], cuts[1:]):
            if v - u <= 0:
                continue
            res = minimize_scalar(cost, bounds=(u, v), method="bounded",
                                  options={"xatol": 1e-12})
            best = min(best, res.fun, cost(u), cost(v))
        out[i] = best
    return out if np.ndim(x) > 1 else float(out[0])


def minimizer_point(x, alpha, x_perp=0.0):
    """Point on the upper Dirichlet line minimising |x - z| + |z - Q0|.

    It is where the segment from x to the reflected source crosses the
    line.  Returns (z1, zn) and, when x_perp is given, the transverse
    coordinate z'' as a third entry.
    """
    if classify(alpha) is not Regime.ACUTE:
        raise RegimeError("minimizer formula is stated for acute angles")
    x = np.asarray(x, dtype=float)
    if x[1] < 0:
        raise PreconditionError("minimizer formula needs xn >= 0")
    nrm = _upper_normal(alpha)
    s = math.sin(alpha)
    side = float(np.dot(nrm, x))
    denom = side - s
    if abs(denom) < 1e-12:
        raise DegenerateConfigurationError("segment parallel to the Dirichlet line")
    q1 = _reflect(np.array([-1.0, 0.0]), nrm)
    t = side / denom
    z = x + t * (q1 - x)
    if x_perp:
        # transverse coordinate from the straight-path proportion
        a1 = math.hypot(z[0] + 1.0, z[1])
        b1 = math.hypot(x[0] - z[0], x[1] - z[1])
        return np.array([z[0], z[1], x_perp * a1 / (a1 + b1)])
    return z


def minimizer_point_tan(x, alpha):
    """The minimiser in the tan-form closed expressions, used as a cross-check."""
    x1, xn = float(x[0]), float(x[1])
    ta = math.tan(alpha)
    den = (ta * ta + 1) * (ta * x1 + xn - ta)
    z1 = (-2 * ta * x1 + (ta * ta - 1) * xn) / den
    zn = (2 * ta * ta * x1 - ta * (ta * ta - 1) * xn) / den
    return np.array([z1, zn])


def stationarity_residual(z, x, alpha):
    """Derivative of |x - z| + |z - Q0| along the Dirichlet line at z."""
    e = np.array([-math.cos(alpha), math.sin(alpha)])
    a = z - np.asarray(x, dtype=float)
    b = z - np.array([-1.0, 0.0])
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    ga = np.dot(e, a) / na if na > 0 else 0.0
    return float(ga + np.dot(e, b) / nb)


def ridge_distance(pts, dom):
    """Distance to the set where the closed-form limit is not differentiable."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if dom.regime is Regime.REFLEX:
        return np.hypot(pts[:, 0] + 1.0, pts[:, 1])
    if dom.regime is Regime.ACUTE:
        return np.abs(pts[:, 1])
    # obtuse: the reflected and direct branches glue in C^1 along the
    # shadow lines, so only the vertex is singular inside the domain
    return np.hypot(pts[:, 0], pts[:, 1])


def eikonal_gradient_check(dom, grid_pts, step=1e-5, tol=1e-4, min_sep=1e-2):
    """Central-difference |grad| of the limit profile at off-ridge points."""
    pts = np.atleast_2d(np.asarray(grid_pts, dtype=float))
    _check_inside(pts, dom)
    if (ridge_distance(pts, dom) < min_sep).any():
        raise PreconditionError("test point within 1e-2 of the ridge")
    if (dom.boundary_distance(pts) < min_sep).any():
        raise PreconditionError("test point within 1e-2 of the boundary")
    ex = np.array([step, 0.0])
    ey = np.array([0.0, step])
    gx = (limit_profile(pts + ex, dom, check=False)
          - limit_profile(pts - ex, dom, check=False)) / (2 * step)
    gy = (limit_profile(pts + ey, dom, check=False)
          - limit_profile(pts - ey, dom, check=False)) / (2 * step)
    norms = np.hypot(gx, gy)
    dev = np.abs(norms - 1.0)
    return {"n_points": len(pts), "max_deviation": float(dev.max()),
            "passed": bool((dev <= tol).all()), "norms": norms}


def random_interior_points(dom, n, rng, radius=None, margin=0.0):
    """Uniform samples from the domain intersected with a disc about the vertex."""
    radius = dom.D if radius is None else radius
    out = []
    while len(out) < n:
        cand = rng.uniform(-radius, radius, size=(4 * n, 2))
        keep = dom.contains(cand) & (np.hypot(cand[:, 0], cand[:, 1]) < radius)
        if margin > 0:
            keep &= dom.boundary_distance(cand) >= margin
        out.extend(cand[keep])
    return np.array(out[:n])
