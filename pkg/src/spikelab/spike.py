"""Approximate spike solutions near the Dirichlet-Neumann junction.

Work happens in dilated coordinates around the junction point Gamma.  The
model wedge has its Neumann side along the negative real axis and its
Dirichlet side along the ray at angle pi - alpha; the domain is the set
of angles in [pi - alpha, pi].  A log-polar grid about Gamma turns both
sides into grid rows, so there is no staircase anywhere.

Boundary curvature is introduced by a conformal map
f(z) = int_0^z exp(i k0 t + i k1 t^2 / 2) dt (original units).  It maps
the negative real axis isometrically onto an Euler spiral whose
curvature at arclength t from Gamma is k0 - k1 t, so the curvature
increases toward Gamma when k1 > 0.  Conformal invariance of the
Laplacian leaves the equation unchanged up to the weight |f'|^2 on the
zeroth-order terms, and Neumann data stay Neumann.

The spike ansatz is U(|w - w_Q|) in the flattened variable w, with the
projection Xi removing its trace on the Dirichlet side.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
from numpy.polynomial.legendre import leggauss

from .errors import ParameterError
from .pde_core import (DirectSolver, Grid2D, LogPolarFrame, MappedFrame,
                       ScalarField, assemble)

__all__ = [
    "CutoffSpec", "SpikeModel", "ApproxSolution", "EnergyReport",
    "quintic_ramp", "assemble_approx", "residual_norm", "approx_energy",
    "energy_landscape", "d_derivative_signs", "add_curvature_term",
    "wedge_bulk_energy", "fit_log_slope",
]


def quintic_ramp(t):
    """1 for t <= 0, 0 for t >= 1, C^2 quintic in between."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return 1.0 - t ** 3 * (10.0 - 15.0 * t + 6.0 * t * t)


@dataclass(frozen=True)
class CutoffSpec:
    """Cutoffs around the peak.

    chi_D has plateau radius dD/16 and support radius dD/8 (dilated);
    the outer cutoff chi_mu0 has plateau mu0/2 and support mu0 in
    original units.  C_Omega is the window constant of the admissible
    parameter range.
    """

    mu0: float = 4.0
    D: float = 48.0
    C_Omega: float = 0.1
    profile: str = "quintic"

    def chi0(self, t):
        return quintic_ramp(t)

    def chi_D(self, r, d):
        a = d * self.D / 16.0
        return self.chi0((np.asarray(r) - a) / a)

    def chi_mu(self, r_orig):
        a = 0.5 * self.mu0
        return self.chi0((np.asarray(r_orig) - a) / a)

    def check(self, d=10.0, n=10_000, seed=0):
        """Plateau, support, monotonicity and Lipschitz checks on samples."""
        rng = np.random.default_rng(seed)
        r = np.sort(rng.uniform(0, d * self.D / 4, n))
        c = self.chi_D(r, d)
        lo, hi = d * self.D / 16, d * self.D / 8
        lip = np.abs(np.diff(c)) / np.maximum(np.diff(r), 1e-300)
        t = np.sort(rng.uniform(-1, 2, n))
        c0 = self.chi0(t)
        return {
            "plateau": bool((c[r <= lo] == 1.0).all()),
            "support": bool((c[r >= hi] == 0.0).all()),
            "lipschitz": bool((lip <= 32.0 / (d * self.D) + 1e-12).all()),
            "chi0_plateau": bool((c0[t <= 0] == 1.0).all() and (c0[t >= 1] == 0.0).all()),
            "chi0_monotone": bool((np.diff(c0) <= 0).all()),
        }


@dataclass(frozen=True)
class SpikeModel:
    """Wedge of opening alpha at Gamma with an optional Euler-spiral Neumann side.

    ``side`` = -1 gives the mirror image (domain below the Neumann line).
    """

    alpha: float
    kappa0: float = 0.0
    kappa1: float = 0.0
    side: int = 1

    def __post_init__(self):
        if not 0 < self.alpha < 2 * math.pi:
            raise ParameterError("opening angle must lie in (0, 2pi)")
        if self.side not in (1, -1):
            raise ParameterError("side must be +1 or -1")

    @property
    def curved(self):
        return self.kappa0 != 0 or self.kappa1 != 0

    def dfmap(self, z):
        z = np.asarray(z, dtype=complex)
        return np.exp(1j * self.side * (self.kappa0 * z + 0.5 * self.kappa1 * z * z))

    def fmap(self, z, nodes=48):
        """f(z) by Gauss-Legendre along the segment [0, z]."""
        z = np.asarray(z, dtype=complex)
        if not self.curved:
            return z
        x, w = leggauss(nodes)
        t = 0.5 * (x + 1.0)
        vals = self.dfmap(z[..., None] * t)
        return z * (vals * (0.5 * w)).sum(-1)

    def curvature(self, arclength):
        """Signed curvature of the Neumann side at distance ``arclength`` from Gamma."""
        return self.kappa0 - self.kappa1 * np.asarray(arclength)

    def theta_range(self):
        if self.side == 1:
            return math.pi - self.alpha, math.pi
        return -math.pi, -math.pi + self.alpha

    def frame(self, eps):
        if not self.curved:
            return LogPolarFrame()
        return LogPolarFrame(fmap=lambda w: self.fmap(eps * w) / eps,
                             dfmap=lambda w: self.dfmap(eps * w))

    def grid(self, eps, d, h=0.1, rho_min=1e-2, margin=20.0, d_ref=None):
        """Log-polar grid with the node (log d, +-pi) on the Neumann row.

        Spacing is ``h`` (dilated units) at radius ``d_ref`` (default d).
        """
        d_ref = d if d_ref is None else d_ref
        t0, t1 = self.theta_range()
        ny = int(math.ceil((t1 - t0) * d_ref / h)) + 1
        hh = (t1 - t0) / (ny - 1)
        s_q = math.log(d)
        k_lo = int(math.ceil((s_q - math.log(rho_min)) / hh))
        k_hi = int(math.ceil((math.log(d + margin) - s_q) / hh))
        nx = k_lo + k_hi + 1
        # Dirichlet on the ray, the inner arc and the outer arc
        sides = "DDND" if self.side == 1 else "NDDD"
        return Grid2D.rectangle(s_q - k_lo * hh, t0, hh, nx, ny, sides,
                                frame=self.frame(eps))

    def cartesian_grid(self, eps, d, h=0.12, margin=14.0):
        """Square lattice in the flattened variable, aligned with the Neumann line.

        The cell size is the same everywhere, so a spike sliding along the
        Neumann side sees no change in resolution.  The Dirichlet ray and
        the outer arc |w| = d + margin are staircased.
        """
        R = d + margin
        t0 = math.pi - self.alpha
        th = np.linspace(t0, math.pi, 721)
        xs = np.concatenate([[0.0], R * np.cos(th)])
        ys = self.side * np.concatenate([[0.0], R * np.sin(th)])
        kx = int(math.ceil((xs.min() + d) / -h)) + 1
        x0 = -d - kx * h
        y0 = -h * (int(math.ceil(-ys.min() / h)) + 1)
        nx = int(math.ceil((xs.max() + h - x0) / h)) + 1
        ny = int(math.ceil((ys.max() + h - y0) / h)) + 1
        side = self.side

        def polar(pts):
            w = pts[:, 0] + 1j * side * pts[:, 1]
            return np.abs(w), np.angle(w)

        def inside(pts):
            r, phi = polar(pts)
            return (phi > t0 + 1e-9) & (r <= R) & (r >= 0.5 * h)

        def dirichlet(pts):
            # exterior nodes just across the Neumann line stay inactive
            r, phi = polar(pts)
            across = (phi < t0) & (phi + math.pi < t0 - phi) & (r >= 0.5 * h)
            return ~across

        frame = MappedFrame(lambda w: self.fmap(eps * w) / eps,
                            lambda w: self.dfmap(eps * w)) if self.curved else MappedFrame()
        return Grid2D.from_region(inside, (x0, y0, x0 + (nx - 1) * h, y0 + (ny - 1) * h),
                                  h, dirichlet_side=dirichlet, frame=frame)

    def peak_w(self, d):
        """Flattened dilated coordinate of the peak at distance d from Gamma."""
        return complex(-d, 0.0)


@dataclass
class ApproxSolution:
    Q: tuple
    d: float
    eps: float
    field: ScalarField = dc_field(repr=False)
    U_Q: np.ndarray = dc_field(repr=False)
    Xi: np.ndarray = dc_field(repr=False)
    cutoff: np.ndarray = dc_field(repr=False)
    model: SpikeModel = dc_field(repr=False)
    p: float = 3.0
    energy: float = float("nan")
    residual: float = float("nan")

    @property
    def grid(self):
        return self.field.grid

    def peak_value(self):
        g = self.grid
        k = int(np.argmin(np.abs(_w_mesh(g).ravel() - self.model.peak_w(self.d))))
        return float(self.field.flat[k])


def _check_window(d, eps, cut):
    c = cut.C_Omega
    if not (c <= d <= 1.0 / (eps * c)):
        raise ParameterError(f"d = {d} outside the admissible window [{c}, {1 / (eps * c):g}]")
    if not d * cut.D < cut.mu0 / (eps * c):
        raise ParameterError("cutoff radius dD exceeds mu0/(eps C_Omega)")


def _w_mesh(grid):
    return grid.frame.flat(*grid.mesh())


def assemble_approx(d, eps, gs, model, cut=None, h=0.1, grid=None, p=None,
                    margin=20.0, with_energy=True):
    """u = chi_mu (U_Q - Xi) chi_D on the model grid, with Xi the projection."""
    cut = CutoffSpec() if cut is None else cut
    _check_window(d, eps, cut)
    p = gs.p if p is None else p
    grid = model.grid(eps, d, h=h, margin=margin) if grid is None else grid
    W = _w_mesh(grid)
    r = np.abs(W - model.peak_w(d)).ravel()
    U = gs(r)
    # projection: -lap Xi + J Xi = 0, Xi = U_Q on Dirichlet nodes
    op = assemble(grid, 1.0)
    Xi = np.zeros_like(U)
    Xi[grid.fixed] = U[grid.fixed]
    Xi[grid.free] = DirectSolver(op.K_FF).solve(-(op.K_FD @ U[grid.fixed]))
    chi = cut.chi_D(r, d) * cut.chi_mu(eps * r)
    u = chi * (U - Xi)
    u[grid.fixed] = 0.0
    Q = model.fmap(np.array([eps * model.peak_w(d)]))[0] / eps
    a = ApproxSolution(Q=(float(Q.real), float(Q.imag)), d=float(d), eps=float(eps),
                       field=ScalarField(grid, u), U_Q=U, Xi=Xi, cutoff=chi,
                       model=model, p=float(p))
    if with_energy:
        a.energy = approx_energy(a, gs, op=op)
    return a


def _power_diff(U, u, p):
    """|u|^(p+1) - U^(p+1) without cancellation when u is close to U > 0."""
    out = np.abs(u) ** (p + 1) - U ** (p + 1)
    ok = (U > 0) & (u >= 0)
    ratio = np.where(ok, u / np.where(U > 0, U, 1.0), 1.0)
    with np.errstate(divide="ignore"):
        stable = U ** (p + 1) * np.expm1((p + 1) * np.log(np.where(ok, ratio, 1.0)))
    return np.where(ok, stable, out)


def wedge_bulk_energy(gs, p, d, alpha, panel=0.5, nodes=8):
    """Energy of U(|y - Q|) on the infinite flat wedge, Q at distance d on the Neumann side.

    Equals the half-plane value C0 minus (acute/obtuse) or plus (reflex)
    the integral of g = (U'^2 + U^2)/2 - U^(p+1)/(p+1) over the sector
    between the Dirichlet ray and the continuation of the Neumann line.
    """
    lo, hi = sorted((0.0, math.pi - alpha))
    if hi - lo == 0:
        return gs.C0_tilde
    x, w = leggauss(nodes)
    rho_max = d + 40.0

    def panels(a, b, width):
        k = max(1, int(math.ceil((b - a) / width)))
        edges = np.linspace(a, b, k + 1)
        mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
        half = 0.5 * np.diff(edges)[:, None]
        return (mid + half * x).ravel(), (half * w).ravel()

    rr, wr = panels(0.0, rho_max, panel)
    tt, wt = panels(lo, hi, panel / rho_max)
    R, T = np.meshgrid(rr, tt, indexing="ij")
    dist = np.hypot(R * np.cos(T) + d, R * np.sin(T))
    U = gs(dist)
    dU = gs.derivative(dist)
    g = 0.5 * (dU ** 2 + U ** 2) - np.abs(U) ** (p + 1) / (p + 1)
    total = float(np.einsum("i,j,ij->", wr * rr, wt, g))
    return gs.C0_tilde - total if alpha <= math.pi else gs.C0_tilde + total


def approx_energy(a, gs, op=None):
    """Energy of the approximate solution in difference form.

    The bulk term is the exact energy of U_Q on the flat wedge; the grid
    only supplies the change caused by subtracting Xi and applying the
    cutoffs, so its discretisation error enters relative to that change.
    For curved models the weighted bulk correction is also taken from the
    grid, relative to the flat frame.
    """
    grid = a.grid
    p = a.p
    op = assemble(grid, 1.0) if op is None else op
    U = a.U_Q.copy()
    U[~grid.active] = 0.0
    u = np.nan_to_num(a.field.flat)
    delta = U - u
    quad = -2.0 * delta @ (op.K @ U) + delta @ (op.K @ delta)
    mass = op.mass
    pot = -(mass * _power_diff(U, u, p)).sum() / (p + 1)
    e = 0.5 * quad + pot
    if a.model.curved:
        flat_jac = grid.frame.base_jacobian(*grid.mesh()).ravel()
        w = grid.h ** 2 * grid.node_weight.ravel()
        g = 0.5 * U * U - np.abs(U) ** (p + 1) / (p + 1)
        e += float((w * (grid.jac.ravel() - flat_jac) * g).sum())
    return float(wedge_bulk_energy(gs, p, a.d, a.model.alpha) + e)


def residual_norm(a, p=None, subtract_floor=True):
    """H^-1 size of the Euler-Lagrange residual of the approximate solution.

    Returns sqrt(R^T K^-1 R) with R the weak residual at free nodes.  With
    ``subtract_floor`` the residual of U_Q itself in the flat frame is
    removed first, which is pure discretisation error of the profile.
    """
    p = a.p if p is None else p
    grid = a.grid
    op = assemble(grid, 1.0)
    u = np.nan_to_num(a.field.flat)
    free = grid.free
    R = (op.K @ u)[free] - op.mass[free] * np.clip(u[free], 0, None) ** p
    if subtract_floor:
        U = a.U_Q.copy()
        U[~grid.active] = 0.0
        flat = (grid.h ** 2 * grid.node_weight.ravel()
                * grid.frame.base_jacobian(*grid.mesh()).ravel())
        L = op.K - sp.diags(op.mass)
        R0 = (L @ U)[free] + flat[free] * (U[free] - U[free] ** p)
        R = R - R0
    z = DirectSolver(op.K_FF).solve(R)
    a.residual = float(math.sqrt(max(R @ z, 0.0)))
    return a.residual


def fit_log_slope(d, y):
    """Least-squares slope of log(y) against d, with R^2."""
    d = np.asarray(d, float)
    ly = np.log(np.asarray(y, float))
    A = np.column_stack([d, np.ones_like(d)])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = A @ coef
    ss = ((ly - ly.mean()) ** 2).sum()
    r2 = 1.0 - ((ly - pred) ** 2).sum() / ss if ss > 0 else 1.0
    return float(coef[0]), float(coef[1]), float(r2)


@dataclass
class EnergyReport:
    alpha: float
    eps: float
    rows: list
    fitted_rate: float
    intercept: float
    r2: float
    fit_window: tuple
    proxy_d: float
    n_fit: int = 0

    def d_values(self, side=1):
        return np.array([r["d"] for r in self.rows if r["Q"] == side])

    def energies(self, side=1):
        return np.array([r["I"] for r in self.rows if r["Q"] == side])

    def to_csv(self, path):
        cols = ["alpha", "eps", "Q", "d", "I", "dI_dd", "fitted_rate"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                w.writerow([repr(float(r[c])) if c != "Q" else str(r[c]) for c in cols])

    def summary(self):
        return {"alpha": self.alpha, "eps": self.eps, "fitted_rate": self.fitted_rate,
                "intercept": self.intercept, "r2": self.r2,
                "window": list(self.fit_window), "proxy_d": self.proxy_d,
                "n_fit": self.n_fit}

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


def _cell_energy(args):
    d, eps, gs, m, cut, h, p = args
    return assemble_approx(d, eps, gs, m, cut=cut, h=h, p=p).energy


def energy_landscape(model, gs, eps, d_list, p=None, sides=(1,), cut=None,
                     h=0.1, proxy_d=None, mapper=map):
    """Energies of the approximate solution over d and the interaction fit.

    The largest d (or ``proxy_d``) stands in for d = infinity; the log of
    I(d) - I(proxy) is fitted linearly on the remaining points.  Cells
    are independent; ``mapper`` (an order-preserving map) may run them
    in parallel.
    """
    d_list = sorted(float(x) for x in d_list)
    proxy_d = d_list[-1] if proxy_d is None else float(proxy_d)
    fit_d = [d for d in d_list if d < proxy_d]
    if len(fit_d) < 4:
        raise ParameterError("need at least four d values below the proxy")
    if proxy_d not in d_list:
        d_list.append(proxy_d)
    p = gs.p if p is None else p
    rows = []
    for side in sides:
        m = SpikeModel(model.alpha, model.kappa0, model.kappa1, side)
        energies = list(mapper(_cell_energy,
                               [(d, eps, gs, m, cut, h, p) for d in d_list]))
        dI = np.gradient(energies, d_list) if len(d_list) > 1 else [0.0]
        for d, e, g in zip(d_list, energies, dI):
            rows.append({"alpha": model.alpha, "eps": eps, "Q": side, "d": d,
                         "I": e, "dI_dd": float(g)})
    e1 = {r["d"]: r["I"] for r in rows if r["Q"] == sides[0]}
    delta = np.array([e1[d] - e1[proxy_d] for d in fit_d])
    keep = delta > 0
    if keep.sum() < 4:
        raise ParameterError("interaction energy not positive at four or more points")
    slope, icpt, r2 = fit_log_slope(np.array(fit_d)[keep], delta[keep])
    for r in rows:
        r["fitted_rate"] = slope
    return EnergyReport(alpha=model.alpha, eps=eps, rows=rows, fitted_rate=slope,
                        intercept=icpt, r2=r2,
                        fit_window=(min(fit_d), max(fit_d)), proxy_d=proxy_d,
                        n_fit=int(keep.sum()))


def add_curvature_term(report, C1, eps, H):
    """Copy of ``report`` with -C1 eps H(d) added to every energy."""
    rows = []
    for r in report.rows:
        rows.append(dict(r, I=r["I"] - C1 * eps * float(H(r["d"]))))
    d = np.array([r["d"] for r in rows])
    for side in {r["Q"] for r in rows}:
        sel = [i for i, r in enumerate(rows) if r["Q"] == side]
        g = np.gradient([rows[i]["I"] for i in sel], d[sel])
        for i, gi in zip(sel, g):
            rows[i]["dI_dd"] = float(gi)
    return EnergyReport(report.alpha, report.eps, rows, report.fitted_rate,
                        report.intercept, report.r2, report.fit_window, report.proxy_d,
                        report.n_fit)


def d_derivative_signs(report, eps, alpha=None, beta=0.3):
    """Signs of dI/dd at d = (2 - beta)|log eps| and (2 + beta)|log eps|."""
    if beta < 0.1:
        raise ParameterError("beta must be at least 0.1")
    L = abs(math.log(eps))
    d_lo, d_hi = (2 - beta) * L, (2 + beta) * L
    d = report.d_values()
    I = report.energies()
    if not (d.min() <= d_lo and d_hi <= d.max()):
        raise ParameterError(f"report does not cover [{d_lo:.3g}, {d_hi:.3g}]")

    def slope_at(x):
        k = int(np.clip(np.searchsorted(d, x), 1, len(d) - 1))
        lo = max(0, k - 2)
        sel = slice(lo, min(len(d), lo + 4))
        c = np.polyfit(d[sel] - x, I[sel], min(2, len(d[sel]) - 1))
        return c[-2]

    s_lo, s_hi = slope_at(d_lo), slope_at(d_hi)
    sign_lo, sign_hi = int(np.sign(s_lo)), int(np.sign(s_hi))
    return {"sign_low": sign_lo, "sign_high": sign_hi, "slope_low": float(s_lo),
            "slope_high": float(s_hi), "d_low": d_lo, "d_high": d_hi,
            "critical_point": sign_lo != sign_hi,
            "flag": "" if sign_lo != sign_hi else "NO-CRITICAL-POINT"}
