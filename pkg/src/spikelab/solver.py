"""Nonlinear mixed problem: solves, peak tracking and scaling studies.

The translation of a boundary spike along the Neumann side is an almost
free direction (its eigenvalue is of order eps^2), so a bare Newton
iteration tends to throw the spike away.  ``solve_mixed`` therefore pins
the peak position with one linear constraint, reads off the Lagrange
multiplier c(d) as the reduced force, and moves d by a secant iteration
until c(d) = 0.  At that point the constrained solution solves the
unconstrained problem, and a final plain Newton pass confirms it.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
from numpy.polynomial.legendre import leggauss
from scipy.sparse.linalg import splu

from .errors import (NonUniquePeakWarning, NumericalFailure, ParameterError,
                     TrivialBranchWarning)
from .pde_core import (EXTERIOR, Grid2D, ScalarField, assemble, energy,
                       newton_solve)
from .spike import CutoffSpec, SpikeModel, assemble_approx

__all__ = [
    "keyhole_domain", "solve_mixed", "constrained_solve", "locate_peak",
    "PeakTrace", "peak_scaling_study", "neumann_curvature_fit",
    "disc_energy", "neumann_disc_solve", "reduced_energy_minimum",
]


def keyhole_domain(alpha, kappa0=1.0, kappa1=1.0):
    """Wedge of opening alpha whose Neumann side is an Euler spiral.

    The curvature along the Neumann side is kappa0 - kappa1 * t at
    arclength t from Gamma, so its gradient points toward the Dirichlet
    part when kappa1 > 0.
    """
    if kappa1 <= 0:
        raise ParameterError("kappa1 must be positive for a curvature gradient")
    return SpikeModel(alpha, kappa0, kappa1)


def _nonlin(x, p):
    xp = np.clip(x, 0.0, None)
    return xp ** p, p * xp ** (p - 1)


def constrained_solve(grid, d, eps, gs, model, p=3.0, cut=None, u_start=None,
                      tol=1e-10, maxiter=30, delta=1e-3):
    """Solve F(u) = c M z subject to <M z, u - u_d> = 0.

    z is the d-derivative of the ansatz u_d.  Returns (u, c, ansatz).
    """
    a = assemble_approx(d, eps, gs, model, cut=cut, grid=grid, p=p, with_energy=False)
    ap = assemble_approx(d + delta, eps, gs, model, cut=cut, grid=grid, p=p, with_energy=False)
    am = assemble_approx(d - delta, eps, gs, model, cut=cut, grid=grid, p=p, with_energy=False)
    free = grid.free
    ud = np.clip(np.nan_to_num(a.field.flat), 0.0, None)
    z = (np.nan_to_num(ap.field.flat) - np.nan_to_num(am.field.flat))[free] / (2 * delta)
    op = assemble(grid, 1.0)
    mass = op.mass[free]
    mz = mass * z
    mz /= math.sqrt(mz @ z)
    x = ud.copy() if u_start is None else np.nan_to_num(u_start.flat).copy()
    c = 0.0
    gm = op.geometric_mass[free]
    for it in range(maxiter):
        f, df = _nonlin(x[free], p)
        R = (op.K @ x)[free] - mass * f
        g = mz @ (x[free] - ud[free])
        res = max(float(np.abs((R - c * mz) / gm).max()), abs(g))
        if res <= tol:
            break
        J = op.K_FF - sp.diags(mass * df)
        col = sp.csc_matrix(-mz[:, None])
        B = sp.bmat([[J, col], [col.T * -1.0, None]], format="csc")
        rhs = np.concatenate([c * mz - R, [g]])
        step = splu(B, permc_spec="MMD_AT_PLUS_A").solve(rhs)
        x[free] += step[:-1]
        c += step[-1]
    else:
        raise NumericalFailure("constrained Newton did not converge", d=d, residual=res)
    return ScalarField(grid, x), float(c), a


def reduced_energy_minimum(model, eps, gs, d_grid, grid=None, p=3.0, cut=None, **kw):
    """Minimiser of the ansatz energy over ``d_grid`` (parabolic refinement)."""
    E = []
    for d in d_grid:
        E.append(assemble_approx(d, eps, gs, model, cut=cut, grid=grid, p=p, **kw).energy)
    E = np.asarray(E)
    k = int(np.argmin(E))
    if k == 0 or k == len(E) - 1:
        return float(d_grid[k]), E
    c = np.polyfit(d_grid[k - 1:k + 2], E[k - 1:k + 2], 2)
    return float(-c[1] / (2 * c[0])), E


def solve_mixed(model, eps, p, init, gs, cut=None, tol=1e-8, d_tol=1e-6, maxiter=30):
    """Solution of the mixed problem near the approximate solution ``init``.

    Returns (field, info).  ``info`` carries the final d, the reduced-force
    history, Newton residual, positivity and energy checks.
    """
    grid = init.grid
    if not np.any(np.nan_to_num(init.field.flat)[grid.free] > 0):
        warnings.warn("initial guess is identically zero", TrivialBranchWarning,
                      stacklevel=2)
        raise NumericalFailure("trivial branch: re-initialise with a larger amplitude",
                               trivial=True)
    d0 = init.d
    step = 0.25
    pts = []
    d = d0
    for it in range(maxiter):
        u, c, a = constrained_solve(grid, d, eps, gs, model, p=p, cut=cut)
        pts.append((d, c))
        if abs(c) < 1e-13:
            break
        if len(pts) == 1:
            # c has the sign of dE/dd; move downhill first
            d_new = d - math.copysign(step, c)
        else:
            (d1, c1), (d2, c2) = pts[-2], pts[-1]
            if c2 == c1:
                break
            d_new = d2 - c2 * (d2 - d1) / (c2 - c1)
            d_new = float(np.clip(d_new, d2 - 1.0, d2 + 1.0))
        if abs(d_new - d) < d_tol:
            d = d_new
            u, c, a = constrained_solve(grid, d, eps, gs, model, p=p, cut=cut)
            pts.append((d, c))
            break
        d = d_new
        if d <= 0.5:
            raise NumericalFailure("spike drifted into the junction", history=pts)
    else:
        raise NumericalFailure("reduced force iteration did not converge", history=pts)
    field, info = newton_solve(grid, 1.0, p, u, tol=tol, maxiter=10)
    if info["trivial"]:
        raise NumericalFailure("trivial branch", trivial=True)
    vals = field.flat[grid.free]
    info.update({
        "d": d, "force_history": pts, "min_interior": float(vals.min()),
        "positive": bool(vals.min() > 0),
        "dirichlet_trace": float(np.abs(field.flat[grid.fixed]).max()),
        "energy": energy(field, 1.0, p),
        "init_energy": energy(ScalarField(grid, np.clip(np.nan_to_num(init.field.flat), 0, None)), 1.0, p),
    })
    return field, info


def _local_maxima(V):
    P = np.pad(V, 1, mode="constant", constant_values=-np.inf)
    core = P[1:-1, 1:-1]
    is_max = np.isfinite(core)
    for dj in (-1, 0, 1):
        for di in (-1, 0, 1):
            if dj or di:
                is_max &= core >= P[1 + dj:P.shape[0] - 1 + dj, 1 + di:P.shape[1] - 1 + di]
    return is_max


def locate_peak(u, neumann_rows=(), ratio=0.5):
    """Argmax refined by a quadratic fit on the 3x3 neighbourhood.

    ``neumann_rows`` lists grid rows that are Neumann lines, as row
    indices or "bottom"/"top"; the neighbourhood is mirrored across them.  Returns a dict
    with grid coordinates, the physical point and the uniqueness ratio.
    """
    g = u.grid
    V = np.where(g.kind == EXTERIOR, -np.inf, np.nan_to_num(u.values, nan=-np.inf))
    j, i = np.unravel_index(int(np.argmax(V)), V.shape)
    vmax = V[j, i]
    if not np.isfinite(vmax) or vmax <= 0:
        raise ParameterError("field has no positive maximum")
    rows = {g.ny - 1 if r == "top" else 0 if r == "bottom" else int(r)
            for r in neumann_rows}
    P = np.pad(V, 1, mode="constant", constant_values=-np.inf)
    nb = P[j:j + 3, i:i + 3].copy()
    on_neumann = j in rows
    if on_neumann:
        # mirror ghosts across the Neumann row
        if not np.isfinite(nb[0]).all():
            nb[0] = nb[2]
        elif not np.isfinite(nb[2]).all():
            nb[2] = nb[0]
    di = dj = 0.0
    if np.isfinite(nb).all():
        fx = (nb[1, 2] - nb[1, 0]) / 2
        fy = (nb[2, 1] - nb[0, 1]) / 2
        fxx = nb[1, 2] - 2 * nb[1, 1] + nb[1, 0]
        fyy = nb[2, 1] - 2 * nb[1, 1] + nb[0, 1]
        fxy = (nb[2, 2] - nb[2, 0] - nb[0, 2] + nb[0, 0]) / 4
        H = np.array([[fxx, fxy], [fxy, fyy]])
        if np.linalg.det(H) > 0 and fxx < 0:
            di, dj = np.clip(-np.linalg.solve(H, [fx, fy]), -1.0, 1.0)
    if on_neumann:
        dj = 0.0
    xs, ys = g.x0 + (i + di) * g.h, g.y0 + (j + dj) * g.h
    phys = g.frame.to_physical(np.array([xs]), np.array([ys]))
    mask = _local_maxima(V)
    mask[j, i] = False
    second = float(V[mask].max()) if mask.any() else 0.0
    r = max(second, 0.0) / vmax
    if r > ratio:
        warnings.warn(f"second local maximum is {r:.2f} of the global one",
                      NonUniquePeakWarning, stacklevel=2)
    return {"index": (int(j), int(i)), "grid_point": (float(xs), float(ys)),
            "point": (float(np.ravel(phys[0])[0]), float(np.ravel(phys[1])[0])),
            "max": float(vmax), "second_ratio": float(r), "unique": bool(r <= ratio)}


@dataclass
class PeakTrace:
    alpha: float
    p: float
    rows: list = dc_field(default_factory=list)
    failures: list = dc_field(default_factory=list)
    slope: float = float("nan")
    intercept: float = float("nan")
    slope_stderr: float = float("nan")
    ratio_slope: float = float("nan")

    @property
    def eps_list(self):
        return [r["eps"] for r in self.rows]

    def fit(self):
        if len(self.rows) < 2:
            return
        x = np.array([r["eps"] * math.log(1 / r["eps"]) for r in self.rows])
        y = np.array([r["dist_to_interface"] for r in self.rows])
        A = np.column_stack([x, np.ones_like(x)])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        self.slope, self.intercept = float(coef[0]), float(coef[1])
        if len(x) > 2:
            resid = y - A @ coef
            s2 = resid @ resid / (len(x) - 2)
            self.slope_stderr = float(math.sqrt(s2 * np.linalg.inv(A.T @ A)[0, 0]))
        self.ratio_slope = float((x @ y) / (x @ x))

    def to_csv(self, path):
        cols = ["eps", "max_u", "Qx", "Qy", "dist_to_interface", "dist_to_boundary"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                w.writerow([repr(float(r[c])) for c in cols])

    def summary(self):
        return {"alpha": self.alpha, "p": self.p, "slope": self.slope,
                "intercept": self.intercept, "slope_stderr": self.slope_stderr,
                "slope_through_origin": self.ratio_slope,
                "eps": self.eps_list, "failures": self.failures}

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


def _solve_one(model, eps, gs, p, d_guess, h, margin, cut):
    grid = model.cartesian_grid(eps, d_guess, h=h, margin=margin)
    lo = max(1.0, d_guess - 1.5)
    d_grid = np.linspace(lo, d_guess + 1.5, 7)
    d0, _ = reduced_energy_minimum(model, eps, gs, d_grid, grid=grid, p=p, cut=cut)
    init = assemble_approx(d0, eps, gs, model, cut=cut, grid=grid, p=p)
    field, info = solve_mixed(model, eps, p, init, gs, cut=cut)
    neu = (int(round(-grid.y0 / grid.h)),)
    pk = locate_peak(field, neumann_rows=neu)
    w = complex(*pk["grid_point"])
    q = complex(*pk["point"]) * eps
    # Neumann side is the image of the negative real axis; |f'| = 1 there
    to_neumann = eps * abs(w.imag)
    row = {"eps": eps, "max_u": pk["max"], "Qx": q.real, "Qy": q.imag,
           "dist_to_interface": abs(q), "dist_to_boundary": to_neumann,
           "d": info["d"], "arclength": eps * abs(w), "unique": pk["unique"],
           "positive": info["positive"], "residual": info["residual"],
           "dirichlet_trace": info["dirichlet_trace"],
           "energy_decrease": info["energy"] <= info["init_energy"] + 1e-9,
           "cell": eps * grid.h}
    return row, field


def peak_scaling_study(alpha, p, eps_list, gs, kappa0=1.0, kappa1=1.0, h=0.12,
                       margin=14.0, cut=None, d_first=None, keep_fields=False):
    """Peak distance to Gamma across eps, with continuation in eps."""
    eps_list = sorted((float(e) for e in eps_list), reverse=True)
    if len(eps_list) < 4:
        raise ParameterError("need at least four eps values")
    ratios = [a / b for a, b in zip(eps_list, eps_list[1:])]
    if max(ratios) / min(ratios) > 1.05:
        raise ParameterError("eps values must be geometrically spaced")
    model = keyhole_domain(alpha, kappa0, kappa1)
    cut = CutoffSpec() if cut is None else cut
    trace = PeakTrace(alpha=float(alpha), p=float(p))
    fields = []
    d_guess = 2.0 * abs(math.log(eps_list[0])) if d_first is None else d_first
    prev = None
    for eps in eps_list:
        if prev is not None:
            d_guess = prev[1] * math.log(1 / eps) / math.log(1 / prev[0])
        try:
            row, fld = _solve_one(model, eps, gs, p, d_guess, h, margin, cut)
        except (NumericalFailure, ParameterError) as exc:
            trace.failures.append({"eps": eps, "error": str(exc)})
            continue
        trace.rows.append(row)
        if keep_fields:
            fields.append(fld)
        prev = (eps, row["d"])
    trace.fit()
    return (trace, fields) if keep_fields else trace


def disc_energy(R, eps, gs, p=None, panel=0.25, nodes=8):
    """Energy of U(|x - Q|/eps) on a disc of radius R, Q on the boundary.

    Exact polar reduction about Q: a circle of dilated radius r meets the
    disc in an arc of angle 2 arccos(eps r / (2R)).
    """
    p = gs.p if p is None else p
    r_top = gs.r_max + 20.0
    if math.isfinite(R):
        r_top = min(r_top, 2 * R / eps)
    x, w = leggauss(nodes)
    k = max(1, int(math.ceil(r_top / panel)))
    edges = np.linspace(0.0, r_top, k + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
    half = 0.5 * np.diff(edges)[:, None]
    r = (mid + half * x).ravel()
    wr = (half * w).ravel()
    U = gs(r)
    g = 0.5 * (gs.derivative(r) ** 2 + U ** 2) - np.abs(U) ** (p + 1) / (p + 1)
    arc = np.pi if not math.isfinite(R) else 2 * np.arccos(np.clip(eps * r / (2 * R), 0, 1))
    return float(eps ** 2 * (wr * g * arc * r).sum())


def neumann_curvature_fit(R_list, eps_list, p, gs, max_cond=1e8):
    """Fit I = C0 eps^2 - C1 eps^3 / R over a family of discs."""
    rows = []
    for R in R_list:
        for eps in eps_list:
            rows.append({"R": float(R), "eps": float(eps),
                         "I": disc_energy(R, eps, gs, p)})
    A = np.array([[r["eps"] ** 2, -r["eps"] ** 3 / r["R"]] for r in rows])
    b = np.array([r["I"] for r in rows])
    scale = np.abs(A).max(axis=0)
    if np.any(scale == 0) or np.linalg.cond(A / scale) > max_cond:
        raise ParameterError("disc family does not determine both constants")
    coef, *_ = np.linalg.lstsq(A / scale, b, rcond=None)
    C0, C1 = coef / scale
    return {"C0_fit": float(C0), "C1_fit": float(C1), "rows": rows,
            "C0_ref": gs.C0_tilde, "C1_ref": gs.C1_tilde}


def neumann_disc_solve(eps, gs, p=None, R=1.0, h=None, tol=1e-8):
    """Pure Neumann disc control: boundary spike started at (R, 0)."""
    p = gs.p if p is None else p
    h = eps / 8.0 if h is None else h
    n = int(math.ceil((R + 2 * h) / h))
    ext = n * h
    grid = Grid2D.from_region(lambda q: np.hypot(q[:, 0], q[:, 1]) <= R,
                              (-ext, -ext, ext, ext), h,
                              dirichlet_side=lambda q: np.zeros(len(q), bool))
    X, Y = grid.mesh()
    u0 = gs(np.hypot(X - R, Y) / eps)
    field, info = newton_solve(grid, eps, p, ScalarField(grid, u0), tol=tol)
    pk = locate_peak(field)
    x, y = pk["point"]
    info.update({"peak": (x, y), "dist_to_boundary": R - math.hypot(x, y),
                 "max": pk["max"], "h": h,
                 "min_interior": float(field.flat[grid.free].min())})
    return field, info
