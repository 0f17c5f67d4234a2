"""Radial ground state of -U'' - ((n-1)/r) U' + U = U^p.

The profile is found by shooting on U(0) with a fixed-step RK4
integrator.  Double precision cannot follow the decaying branch much
past r ~ 15 (the growing mode e^r amplifies the last bit of U(0)), so the
shot is trusted only up to a matching radius well before the trajectory
separates.  The tail is integrated inward from r_max, starting on the
decaying solution A r^{-nu} K_nu(r) (nu = (n - 2)/2) of the linearised
equation, with A tuned so both pieces meet; beyond r_max that Bessel
form is used directly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import special
from scipy.integrate import simpson
from scipy.interpolate import CubicHermiteSpline

from .errors import InsufficientDomainError, NumericalFailure, ParameterError

__all__ = [
    "GroundState",
    "solve_ground_state",
    "decay_diagnostics",
    "moment_integrals",
    "half_sphere_factor",
    "ode_residual",
    "soliton_1d",
]

# shot outcomes
_CROSSED = 1      # U reached zero: U(0) too large
_TURNED = -1      # U' became positive while U > 0: U(0) too small
_UNDECIDED = 0


@njit(cache=True)
def _rhs(r, u, v, n, p):
    up = u if u > 0.0 else 0.0
    return v, u - up ** p - (n - 1) * v / r


@njit(cache=True)
def _inward(u_end, v_end, n, p, h, m, k):
    """Integrate inward from node m down to node k.

    Inward integration is stable for the decaying branch.
    """
    us = np.zeros(m + 1)
    vs = np.zeros(m + 1)
    u = u_end
    v = v_end
    us[m] = u
    vs[m] = v
    for i in range(m, k, -1):
        r = i * h
        g = -h
        k1u, k1v = _rhs(r, u, v, n, p)
        k2u, k2v = _rhs(r + 0.5 * g, u + 0.5 * g * k1u, v + 0.5 * g * k1v, n, p)
        k3u, k3v = _rhs(r + 0.5 * g, u + 0.5 * g * k2u, v + 0.5 * g * k2v, n, p)
        k4u, k4v = _rhs(r + g, u + g * k3u, v + g * k3v, n, p)
        u = u + g * (k1u + 2.0 * k2u + 2.0 * k3u + k4u) / 6.0
        v = v + g * (k1v + 2.0 * k2v + 2.0 * k3v + k4v) / 6.0
        us[i - 1] = u
        vs[i - 1] = v
    return us, vs


@njit(cache=True)
def _shoot(u0, n, p, h, r_max, store):
    """Integrate from r=0; returns (outcome, index of event, U, U')."""
    m = int(round(r_max / h)) + 1
    us = np.zeros(m if store else 1)
    vs = np.zeros(m if store else 1)
    # series U0 + a r^2 + b r^4 at the first node
    a = (u0 - u0 ** p) / (2.0 * n)
    b = (1.0 - p * u0 ** (p - 1)) * a / (4.0 * (n + 2))
    u = u0 + a * h * h + b * h ** 4
    v = 2.0 * a * h + 4.0 * b * h ** 3
    if store:
        us[0] = u0
        us[1] = u
        vs[1] = v
    for i in range(1, m - 1):
        # substeps near the axis, where h (n-1)/r is not small
        nsub = 16 if i < 64 else 1
        g = h / nsub
        for j in range(nsub):
            r = i * h + j * g
            k1u, k1v = _rhs(r, u, v, n, p)
            k2u, k2v = _rhs(r + 0.5 * g, u + 0.5 * g * k1u, v + 0.5 * g * k1v, n, p)
            k3u, k3v = _rhs(r + 0.5 * g, u + 0.5 * g * k2u, v + 0.5 * g * k2v, n, p)
            k4u, k4v = _rhs(r + g, u + g * k3u, v + g * k3v, n, p)
            u = u + g * (k1u + 2.0 * k2u + 2.0 * k3u + k4u) / 6.0
            v = v + g * (k1v + 2.0 * k2v + 2.0 * k3v + k4v) / 6.0
        if store:
            us[i + 1] = u
            vs[i + 1] = v
        if u <= 0.0:
            return _CROSSED, i + 1, us, vs
        if v > 0.0:
            return _TURNED, i + 1, us, vs
    return _UNDECIDED, m - 1, us, vs


def _check_exponent(n, p):
    if int(n) != n or n < 1:
        raise ParameterError(f"dimension n must be a positive integer, got {n}")
    if not p > 1:
        raise ParameterError(f"exponent p must exceed 1, got {p}")
    if n >= 3 and not p < (n + 2) / (n - 2):
        raise ParameterError(
            f"p={p} is not subcritical for n={n} (needs p < {(n + 2) / (n - 2):g})")


def _tail(r, n, amp):
    """Decaying solution of the linearised radial equation and its derivative."""
    nu = (n - 2) / 2.0
    r = np.asarray(r, dtype=float)
    u = amp * r ** (-nu) * special.kv(nu, r)
    du = -amp * r ** (-nu) * special.kv(nu + 1.0, r)
    return u, du


def _log_tail(r, n, amp):
    nu = (n - 2) / 2.0
    r = np.asarray(r, dtype=float)
    return math.log(amp) - nu * np.log(r) + np.log(special.kve(nu, r)) - r


def half_sphere_factor(n):
    """Integral of y_n |y'|^2 over the upper unit half-sphere in R^n."""
    if n == 1:
        return 0.0
    if n == 2:
        return 2.0 / 3.0
    if n == 3:
        return math.pi / 2.0
    # general n: |S^{n-2}| * int_0^{pi/2} cos t sin^n t dt
    s = 2.0 * math.pi ** ((n - 1) / 2.0) / math.gamma((n - 1) / 2.0)
    return s / (n + 1)


def _sphere_area(n):
    """Surface measure of the unit sphere S^{n-1} in R^n (|S^0| = 2)."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


@dataclass(frozen=True)
class GroundState:
    n: int
    p: float
    r_max: float
    h: float
    r: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    du: np.ndarray = field(repr=False)
    u0: float
    r_match: float
    tail_amp: float
    c_np: float = float("nan")
    C0_tilde: float = float("nan")
    C1_tilde: float = float("nan")

    def __post_init__(self):
        object.__setattr__(
            self, "_spline", CubicHermiteSpline(self.r, self.u, self.du))

    def __call__(self, r):
        """U at arbitrary radii; the Bessel tail is used beyond the table."""
        r = np.abs(np.asarray(r, dtype=float))
        out = np.empty_like(r)
        inner = r <= self.r_max
        out[inner] = self._spline(r[inner])
        if not inner.all():
            out[~inner] = _tail(r[~inner], self.n, self.tail_amp)[0]
        return out

    def log_u(self, r):
        """log U(r), finite far beyond the underflow radius of U itself."""
        r = np.abs(np.asarray(r, dtype=float))
        out = np.empty_like(r)
        inner = r <= self.r_max
        out[inner] = np.log(self._spline(r[inner]))
        if not inner.all():
            out[~inner] = _log_tail(r[~inner], self.n, self.tail_amp)
        return out

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        s = np.sign(r)
        a = np.abs(r)
        out = np.empty_like(a)
        inner = a <= self.r_max
        out[inner] = self._spline(a[inner], 1)
        if not inner.all():
            out[~inner] = _tail(a[~inner], self.n, self.tail_amp)[1]
        return s * out

    def summary(self):
        return {"n": self.n, "p": self.p, "r_max": self.r_max, "h": self.h,
                "u0": self.u0, "r_match": self.r_match, "c_np": self.c_np,
                "C0_tilde": self.C0_tilde, "C1_tilde": self.C1_tilde}

    def to_csv(self, path):
        table = np.column_stack([self.r, self.u, self.du])
        np.savetxt(path, table, delimiter=",", header="r,U,dU", comments="",
                   fmt="%.17g")

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


def solve_ground_state(n=2, p=3.0, tol=1e-15, r_max=20.0, h=1e-3,
                       margin=8.0):
    """Shooting solve for the positive radial ground state.

    ``tol`` bounds the final width of the bisection bracket on U(0).
    ``margin`` is how far before the separation radius of the last shot
    the tail is attached.
    """
    _check_exponent(n, p)
    if not tol > 0:
        raise ParameterError("tol must be positive")
    if not (r_max > 4 and 0 < h < 0.1):
        raise ParameterError("need r_max > 4 and 0 < h < 0.1")
    n = int(n)
    p = float(p)

    lo = 1.0 + 1e-9
    if _shoot(lo, n, p, h, r_max, False)[0] != _TURNED:
        raise NumericalFailure("lower shooting value does not turn up", u0=lo)
    hi = 2.0
    while _shoot(hi, n, p, h, r_max, False)[0] != _CROSSED:
        lo, hi = hi, 2.0 * hi
        if hi > 1e6:
            raise NumericalFailure("no crossing shot found", bracket=(lo, hi))
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        outcome = _shoot(mid, n, p, h, r_max, False)[0]
        if outcome == _CROSSED:
            hi = mid
        elif outcome == _TURNED:
            lo = mid
        else:
            lo = hi = mid
        if mid in (lo, hi) and hi - lo <= 4 * np.spacing(hi):
            break
    u0 = 0.5 * (lo + hi)

    outcome, i_ev, us, vs = _shoot(u0, n, p, h, r_max, True)
    r_ev = i_ev * h
    r_match = min(r_ev - margin, r_max)
    if r_match < 6.0:
        raise NumericalFailure("shot separates too early for a tail match",
                               r_event=r_ev, u0=u0)
    r = np.arange(us.size) * h
    k = int(round(r_match / h))
    r_match = r[k]
    # tail: integrate the full equation inward from r_max, starting on the
    # decaying Bessel branch; secant on its amplitude to meet the shot
    r_end = r[-1]

    def inward(amp):
        ue, ve = _tail(r_end, n, amp)
        return _inward(float(ue), float(ve), n, p, h, r.size - 1, k)

    def gap(amp):
        return inward(amp)[0][k] - us[k]

    a0 = us[k] / _tail(r_match, n, 1.0)[0]
    a1 = a0 * (1 + 1e-6)
    g0, g1 = gap(a0), gap(a1)
    for _ in range(20):
        if g1 == g0 or abs(g1) <= 1e-15 * us[k]:
            break
        a0, a1 = a1, a1 - g1 * (a1 - a0) / (g1 - g0)
        g0, g1 = g1, gap(a1)
    amp = a1
    tu, tv = inward(amp)
    u = us.copy()
    du = vs.copy()
    u[k + 1:], du[k + 1:] = tu[k + 1:], tv[k + 1:]
    gs = GroundState(n=n, p=p, r_max=float(r[-1]), h=h, r=r, u=u, du=du,
                     u0=float(u0), r_match=float(r_match), tail_amp=float(amp))
    diag = decay_diagnostics(gs)
    mom = moment_integrals(gs)
    return GroundState(n=n, p=p, r_max=gs.r_max, h=h, r=r, u=u, du=du,
                       u0=float(u0), r_match=float(r_match),
                       tail_amp=float(amp), c_np=diag["c_np"],
                       C0_tilde=mom["C0_tilde"], C1_tilde=mom["C1_tilde"])


def decay_diagnostics(gs, max_spread=0.05):
    """Decay constant and log-slope over the last quarter of [0, r_max].

    The weight is e^r r^{(n-1)/2}, which makes the product tend to a
    constant for every n (for n = 1 it is e^r U -> 2 sqrt 2 when p = 3).
    """
    sel = gs.r >= 0.75 * gs.r_max
    r = gs.r[sel]
    w = np.exp(r) * r ** ((gs.n - 1) / 2.0) * gs.u[sel]
    slope = gs.du[sel] / gs.u[sel]
    c = float(w.mean())
    spread = float((w.max() - w.min()) / c)
    if spread > max_spread:
        raise InsufficientDomainError(
            f"decay product varies by {spread:.1%} over the last quarter; "
            "increase r_max")
    return {"c_np": c, "c_spread": spread, "slope": float(slope.mean()),
            "slope_spread": float(slope.max() - slope.min())}


def moment_integrals(gs):
    """Half-space integral of U^{p+1} and the two energy constants."""
    r, u, du, n, p = gs.r, gs.u, gs.du, gs.n, gs.p
    half = 0.5 * _sphere_area(n)
    up = np.clip(u, 0.0, None)
    J = half * simpson(r ** (n - 1) * up ** (p + 1), x=r)
    C0 = (0.5 - 1.0 / (p + 1)) * J
    C1 = simpson(r ** n * du ** 2, x=r) * half_sphere_factor(n)
    return {"J_p1": float(J), "C0_tilde": float(C0), "C1_tilde": float(C1)}


def ode_residual(gs, r_min=None):
    """Sup of |U'' + (n-1)U'/r - U + U^p| on interior table nodes.

    U'' comes from a fourth-order difference of the stored U'.
    """
    h = gs.h
    dv = (-gs.du[4:] + 8 * gs.du[3:-1] - 8 * gs.du[1:-3] + gs.du[:-4]) / (12 * h)
    r = gs.r[2:-2]
    u = gs.u[2:-2]
    res = dv + (gs.n - 1) * gs.du[2:-2] / r - u + np.clip(u, 0, None) ** gs.p
    keep = r >= (5 * h if r_min is None else r_min)
    return float(np.abs(res[keep]).max())


def soliton_1d(x, p):
    """Closed-form whole-line soliton ((p+1)/2)^{1/(p-1)} sech^{2/(p-1)}((p-1)x/2)."""
    x = np.asarray(x, dtype=float)
    return ((p + 1) / 2.0) ** (1.0 / (p - 1)) / np.cosh((p - 1) * x / 2.0) ** (2.0 / (p - 1))
