"""Structured-grid finite differences for -a lap(u) + J u = f with mixed data.

A grid is a rectangle of nodes in a computational frame.  Cells whose four
corners are all active contribute half of each of their edges to the
5-point stencil and a quarter of their area to each corner's lumped mass,
so the assembled matrix is symmetric, is an M-matrix, and reproduces the
mirror-ghost Neumann stencil on grid-aligned boundaries without any
special casing.  Dirichlet nodes carry prescribed values and are
eliminated into the right-hand side.

Two frames are provided.  ``CartesianFrame`` is the identity.
``LogPolarFrame`` maps (s, theta) to centre + e^s (cos theta, sin theta),
optionally followed by a holomorphic map; the Laplacian is conformally
invariant, so only the zeroth-order term picks up the factor
J = |dz/dzeta|^2.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import NumericalFailure, ParameterError, TrivialBranchWarning

__all__ = [
    "EXTERIOR", "INTERIOR", "BOUNDARY", "NONE", "DIRICHLET", "NEUMANN",
    "CartesianFrame", "LogPolarFrame", "MappedFrame", "Grid2D", "ScalarField",
    "LinearOperator", "assemble", "solve_linear", "newton_solve", "energy",
    "strong_residual", "write_field_csv", "write_field_binary",
    "read_field_binary",
]

EXTERIOR, INTERIOR, BOUNDARY = 0, 1, 2
NONE, DIRICHLET, NEUMANN = 0, 1, 2


class CartesianFrame:
    name = "cartesian"

    def to_physical(self, X, Y):
        return X, Y

    def jacobian(self, X, Y):
        return np.ones(np.broadcast(X, Y).shape)

    def flat(self, X, Y):
        return np.asarray(X) + 1j * np.asarray(Y)

    def base_jacobian(self, X, Y):
        return self.jacobian(X, Y)


@dataclass(frozen=True)
class MappedFrame:
    """Cartesian lattice in w, physical point fmap(w), weight |dfmap(w)|^2."""

    fmap: object = None
    dfmap: object = None
    name = "mapped"

    def flat(self, X, Y):
        return np.asarray(X) + 1j * np.asarray(Y)

    def to_physical(self, X, Y):
        w = self.flat(X, Y)
        if self.fmap is not None:
            w = self.fmap(w)
        return w.real, w.imag

    def base_jacobian(self, X, Y):
        return np.ones(np.broadcast(X, Y).shape)

    def jacobian(self, X, Y):
        jac = self.base_jacobian(X, Y)
        if self.dfmap is not None:
            jac = jac * np.abs(self.dfmap(self.flat(X, Y))) ** 2
        return jac


@dataclass(frozen=True)
class LogPolarFrame:
    """zeta = s + i theta  ->  z = centre + e^zeta, then z -> fmap(z).

    ``fmap`` and ``dfmap`` act on complex arrays; leave them None for a
    plain log-polar frame.
    """

    centre: tuple = (0.0, 0.0)
    fmap: object = None
    dfmap: object = None
    name = "logpolar"

    def _w(self, X, Y):
        return complex(*self.centre) + np.exp(X + 1j * Y)

    def flat(self, X, Y):
        return self._w(X, Y)

    def base_jacobian(self, X, Y):
        return np.exp(2.0 * np.asarray(X))

    def to_physical(self, X, Y):
        w = self._w(X, Y)
        if self.fmap is not None:
            w = self.fmap(w)
        return w.real, w.imag

    def jacobian(self, X, Y):
        jac = np.exp(2.0 * X)
        if self.dfmap is not None:
            jac = jac * np.abs(self.dfmap(self._w(X, Y))) ** 2
        return jac


@dataclass(eq=False)
class Grid2D:
    """Node layout, flags and lumped weights on an nx-by-ny lattice.

    Arrays are indexed [j, i] with j along y.  ``cells`` marks active
    cells, ``kind`` is EXTERIOR/INTERIOR/BOUNDARY and ``tag`` is
    DIRICHLET/NEUMANN on boundary nodes.
    """

    x0: float
    y0: float
    h: float
    nx: int
    ny: int
    kind: np.ndarray = field(repr=False)
    tag: np.ndarray = field(repr=False)
    cells: np.ndarray = field(repr=False)
    frame: object = field(default_factory=CartesianFrame)

    def __post_init__(self):
        if not self.h > 0 or self.nx < 2 or self.ny < 2:
            raise ParameterError("degenerate grid")
        X, Y = self.mesh()
        self.jac = np.asarray(self.frame.jacobian(X, Y), dtype=float)
        cp = np.zeros((self.ny + 1, self.nx + 1))
        cp[1:-1, 1:-1] = self.cells
        self.node_weight = 0.25 * (cp[:-1, :-1] + cp[:-1, 1:] + cp[1:, :-1] + cp[1:, 1:])
        self.w_horiz = 0.5 * (cp[:-1, 1:-1] + cp[1:, 1:-1])   # (ny, nx-1)
        self.w_vert = 0.5 * (cp[1:-1, :-1] + cp[1:-1, 1:])    # (ny-1, nx)
        flat_kind = self.kind.ravel()
        flat_tag = self.tag.ravel()
        self.free = np.flatnonzero((flat_kind == INTERIOR)
                                   | ((flat_kind == BOUNDARY) & (flat_tag == NEUMANN)))
        self.fixed = np.flatnonzero((flat_kind == BOUNDARY) & (flat_tag == DIRICHLET))
        self.active = flat_kind != EXTERIOR

    # -- construction -------------------------------------------------
    @classmethod
    def _finish(cls, x0, y0, h, nx, ny, free, dirichlet, frame):
        """Flags from candidate free / Dirichlet node masks."""
        usable = free | dirichlet
        cells = usable[:-1, :-1] & usable[:-1, 1:] & usable[1:, :-1] & usable[1:, 1:]
        cp = np.zeros((ny + 1, nx + 1), dtype=int)
        cp[1:-1, 1:-1] = cells
        ncell = cp[:-1, :-1] + cp[:-1, 1:] + cp[1:, :-1] + cp[1:, 1:]
        free = free & (ncell > 0)
        dirichlet = dirichlet & (ncell > 0)
        kind = np.full((ny, nx), EXTERIOR, dtype=np.int8)
        tag = np.full((ny, nx), NONE, dtype=np.int8)
        kind[free & (ncell == 4)] = INTERIOR
        edge = free & (ncell < 4)
        kind[edge] = BOUNDARY
        tag[edge] = NEUMANN
        kind[dirichlet] = BOUNDARY
        tag[dirichlet] = DIRICHLET
        return cls(x0, y0, h, nx, ny, kind, tag, cells, frame)

    @classmethod
    def rectangle(cls, x0, y0, h, nx, ny, sides="DDDD", frame=None):
        """Full rectangle; ``sides`` gives the condition on (bottom, right, top, left)."""
        if len(sides) != 4 or set(sides) - {"D", "N"}:
            raise ParameterError("sides must be four letters from {D, N}")
        dirichlet = np.zeros((ny, nx), dtype=bool)
        for k, (sl) in enumerate([np.s_[0, :], np.s_[:, -1], np.s_[-1, :], np.s_[:, 0]]):
            if sides[k] == "D":
                dirichlet[sl] = True
        free = ~dirichlet
        return cls._finish(x0, y0, h, nx, ny, free, dirichlet,
                           frame or CartesianFrame())

    @classmethod
    def from_region(cls, inside, bbox, h, dirichlet_side=None, frame=None):
        """Staircase grid from a membership test.

        ``inside(pts)`` marks free nodes (open domain plus any Neumann
        boundary points that should carry unknowns).  Outside nodes within
        one diagonal step of a free node become Dirichlet nodes when
        ``dirichlet_side(pts)`` is true (default: all of them).
        """
        x0, y0, x1, y1 = bbox
        nx = int(round((x1 - x0) / h)) + 1
        ny = int(round((y1 - y0) / h)) + 1
        X, Y = np.meshgrid(x0 + h * np.arange(nx), y0 + h * np.arange(ny))
        pts = np.column_stack([X.ravel(), Y.ravel()])
        free = np.asarray(inside(pts), dtype=bool).reshape(ny, nx)
        pad = np.pad(free, 1)
        near = np.zeros_like(free)
        for dj in (-1, 0, 1):
            for di in (-1, 0, 1):
                near |= pad[1 + dj:1 + dj + ny, 1 + di:1 + di + nx]
        cand = near & ~free
        dirichlet = np.zeros_like(free)
        if cand.any():
            sel = np.flatnonzero(cand.ravel())
            flags = (np.ones(sel.size, dtype=bool) if dirichlet_side is None
                     else np.asarray(dirichlet_side(pts[sel]), dtype=bool))
            dirichlet.ravel()[sel[flags]] = True
        return cls._finish(x0, y0, h, nx, ny, free, dirichlet,
                           frame or CartesianFrame())

    # -- geometry -----------------------------------------------------
    @property
    def bbox(self):
        return (self.x0, self.y0, self.x0 + (self.nx - 1) * self.h,
                self.y0 + (self.ny - 1) * self.h)

    def axes(self):
        return self.x0 + self.h * np.arange(self.nx), self.y0 + self.h * np.arange(self.ny)

    def mesh(self):
        return np.meshgrid(*self.axes())

    def physical_mesh(self):
        return self.frame.to_physical(*self.mesh())

    def mass(self):
        """Lumped mass h^2 w_i J_i per node (flattened)."""
        return (self.h ** 2 * self.node_weight * self.jac).ravel()

    def field(self, values=None):
        v = np.zeros((self.ny, self.nx)) if values is None else np.asarray(values, float)
        return ScalarField(self, v.reshape(self.ny, self.nx))

    def check_invariants(self):
        pad = np.pad(self.kind != EXTERIOR, 1)
        nb = (pad[:-2, 1:-1] & pad[2:, 1:-1] & pad[1:-1, :-2] & pad[1:-1, 2:])
        ok_interior = bool(nb[self.kind == INTERIOR].all())
        ok_tags = bool((self.tag[self.kind == BOUNDARY] != NONE).all())
        return {"h_positive": self.h > 0, "interior_neighbours": ok_interior,
                "boundary_tagged": ok_tags}


@dataclass
class ScalarField:
    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float).reshape(self.grid.ny, self.grid.nx)
        self.values[self.grid.kind == EXTERIOR] = np.nan

    @property
    def flat(self):
        return self.values.ravel()

    def copy(self):
        return ScalarField(self.grid, self.values.copy())

    def free_values(self):
        return self.flat[self.grid.free]

    def fixed_values(self):
        return self.flat[self.grid.fixed]

    def with_free(self, u_free):
        v = self.values.copy().ravel()
        v[self.grid.free] = u_free
        return ScalarField(self.grid, v)


@dataclass
class LinearOperator:
    """Weak-form matrix a L + M over the active nodes and its blocks."""

    grid: Grid2D
    a: float
    K: sp.csr_matrix = field(repr=False)
    K_FF: sp.csc_matrix = field(repr=False)
    K_FD: sp.csr_matrix = field(repr=False)
    L: sp.csr_matrix = field(repr=False)
    mass: np.ndarray = field(repr=False)

    @property
    def geometric_mass(self):
        g = self.grid
        return g.h ** 2 * g.node_weight.ravel()

    def apply(self, u):
        """Strong form: (-a lap_h u + J u) at free nodes, data kept elsewhere."""
        g = self.grid
        x = np.nan_to_num(u.flat)
        out = u.flat.copy()
        y = self.K @ x
        out[g.free] = y[g.free] / self.geometric_mass[g.free]
        return ScalarField(g, out)

    def quad(self, x):
        x = np.nan_to_num(np.asarray(x, float).ravel())
        return float(x @ (self.K @ x))


def _stiffness(grid):
    nx, ny = grid.nx, grid.ny
    idx = np.arange(nx * ny).reshape(ny, nx)
    wh, wv = grid.w_horiz, grid.w_vert
    mh, mv = wh > 0, wv > 0
    i = np.concatenate([idx[:, :-1][mh], idx[:-1, :][mv]])
    j = np.concatenate([idx[:, 1:][mh], idx[1:, :][mv]])
    w = np.concatenate([wh[mh], wv[mv]])
    n = nx * ny
    off = sp.coo_matrix((-w, (i, j)), shape=(n, n))
    off = off + off.T
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return (off + sp.diags(diag)).tocsr()


def assemble(grid, a, reaction=None):
    """Weak-form operator for -a lap(u) + J u on ``grid``.

    ``reaction`` optionally scales the zeroth-order term node by node.
    """
    if not a > 0:
        raise ParameterError("diffusion coefficient must be positive")
    if grid.free.size == 0:
        raise ParameterError("grid has no free nodes")
    L = _stiffness(grid)
    mass = grid.mass()
    if reaction is not None:
        mass = mass * np.asarray(reaction, float).ravel()
    K = (a * L + sp.diags(mass)).tocsr()
    K_FF = K[grid.free][:, grid.free].tocsc()
    K_FD = K[grid.free][:, grid.fixed].tocsr()
    return LinearOperator(grid, float(a), K, K_FF, K_FD, L, mass)


def _pcg(A, b, tol, maxiter, x0=None):
    """Jacobi-preconditioned conjugate gradients; returns (x, iterations, relres)."""
    dinv = 1.0 / A.diagonal()
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros_like(b), 0, 0.0
    z = dinv * r
    p = z.copy()
    rz = r @ z
    for k in range(1, maxiter + 1):
        Ap = A @ p
        step = rz / (p @ Ap)
        x += step * p
        r -= step * Ap
        rel = np.linalg.norm(r) / bnorm
        if rel <= tol:
            return x, k, rel
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NumericalFailure("conjugate gradients did not converge",
                           iterations=maxiter, relres=rel, last=x)


class DirectSolver:
    """Sparse LU of an M-matrix with the diagonal as pivots.

    With a symmetric fill-reducing ordering and no row interchanges the
    factors keep the M-matrix sign pattern, so a nonnegative right-hand
    side is solved without cancellation and tiny solution values keep
    their relative accuracy.
    """

    def __init__(self, A):
        self.lu = splu(sp.csc_matrix(A), permc_spec="MMD_AT_PLUS_A",
                       diag_pivot_thresh=0.0, options={"SymmetricMode": True})

    def solve(self, b):
        return self.lu.solve(b)


@dataclass
class SolveInfo:
    method: str
    iterations: int
    relres: float


def solve_linear(op, rhs, tol=1e-10, method="cg", return_info=False):
    """Solve -a lap(u) + J u = f at free nodes with u = g at Dirichlet nodes.

    ``rhs`` holds f on free nodes and g on Dirichlet nodes.
    """
    if not tol > 0:
        raise ParameterError("tol must be positive")
    g = op.grid
    f = np.nan_to_num(rhs.flat)
    b = op.geometric_mass[g.free] * f[g.free]
    if g.fixed.size:
        b = b - op.K_FD @ f[g.fixed]
    if method == "cg":
        x, its, rel = _pcg(op.K_FF, b, tol, 10 * g.nx * g.ny)
    elif method == "direct":
        x = DirectSolver(op.K_FF).solve(b)
        its = 1
        bn = np.linalg.norm(b)
        rel = float(np.linalg.norm(op.K_FF @ x - b) / bn) if bn else 0.0
    else:
        raise ParameterError(f"unknown method {method!r}")
    out = f.copy()
    out[g.free] = x
    field_ = ScalarField(g, out)
    if return_info:
        return field_, SolveInfo(method, its, rel)
    return field_


def _nonlinear(u, p):
    up = np.clip(u, 0.0, None)
    return up ** p, p * up ** (p - 1)


def strong_residual(op, u, p, reaction=None):
    """-a lap_h u + J u - J u_+^p at free nodes (strong scaling)."""
    g = op.grid
    x = np.nan_to_num(u.flat)
    J = g.jac.ravel() if reaction is None else g.jac.ravel() * np.asarray(reaction).ravel()
    weak = op.K @ x - g.h ** 2 * g.node_weight.ravel() * J * _nonlinear(x, p)[0]
    return weak[g.free] / op.geometric_mass[g.free]


def newton_solve(grid, eps, p, u0, tol=1e-8, maxiter=50, reaction=None,
                 op=None, verbose=False):
    """Damped Newton for -eps^2 lap_h u + J (u - u_+^p) = 0.

    Dirichlet values are taken from ``u0``.  Returns (field, info).
    """
    if not eps > 0:
        raise ParameterError("eps must be positive")
    if np.nanmin(u0.flat[grid.free]) < 0:
        raise ParameterError("initial guess must be nonnegative")
    op = assemble(grid, eps ** 2, reaction) if op is None else op
    free, fixed = grid.free, grid.fixed
    x = np.nan_to_num(u0.flat.copy())
    mass = op.mass
    gm = op.geometric_mass[free]

    def weak_residual(xv):
        return (op.K @ xv)[free] - mass[free] * _nonlinear(xv[free], p)[0]

    R = weak_residual(x)
    fnorm = float(np.abs(R / gm).max())
    history = [fnorm]
    it = 0
    while fnorm > tol:
        if it >= maxiter:
            raise NumericalFailure("Newton iteration limit reached",
                                   last=ScalarField(grid, x), history=history)
        it += 1
        dfp = _nonlinear(x[free], p)[1]
        Jmat = op.K_FF - sp.diags(mass[free] * dfp, format="csc")
        try:
            step = splu(Jmat.tocsc(), permc_spec="MMD_AT_PLUS_A").solve(-R)
        except RuntimeError as exc:
            raise NumericalFailure(f"singular Newton Jacobian: {exc}",
                                   last=ScalarField(grid, x), history=history)
        lam = 1.0
        for _ in range(6):
            trial = x.copy()
            trial[free] += lam * step
            Rt = weak_residual(trial)
            tn = float(np.abs(Rt / gm).max())
            if tn < fnorm or tn <= tol:
                break
            lam *= 0.5
        else:
            raise NumericalFailure("Newton diverged after 5 step halvings",
                                   last=ScalarField(grid, x), history=history)
        x, R, fnorm = trial, Rt, tn
        history.append(fnorm)
        if verbose:
            print(f"newton {it}: |F| = {fnorm:.3e} (lambda = {lam})")
    trivial = float(np.abs(x[free]).max()) < 1e-8
    if trivial:
        warnings.warn("Newton converged to the zero solution", TrivialBranchWarning,
                      stacklevel=2)
    neg = float(x[free].min())
    x[free] = np.clip(x[free], 0.0, None)
    info = {"iterations": it, "residual": fnorm, "history": history,
            "trivial": trivial, "most_negative": min(neg, 0.0)}
    return ScalarField(grid, x), info


def energy(u, eps=1.0, p=3.0, reaction=None):
    """Discrete 1/2 int(eps^2 |grad u|^2 + J u^2) - 1/(p+1) int J |u|^(p+1)."""
    g = u.grid
    v = np.nan_to_num(u.values)
    a = eps ** 2
    dx = np.diff(v, axis=1)
    dy = np.diff(v, axis=0)
    grad = (g.w_horiz * dx ** 2).sum() + (g.w_vert * dy ** 2).sum()
    m = g.h ** 2 * g.node_weight * g.jac
    if reaction is not None:
        m = m * np.asarray(reaction).reshape(m.shape)
    pot = (m * (0.5 * v ** 2 - np.abs(v) ** (p + 1) / (p + 1))).sum()
    return float(0.5 * a * grad + pot)


# -- serialisation ------------------------------------------------------------
_HEADER = struct.Struct("<qqd4d")


def write_field_csv(u, path):
    X, Y = u.grid.physical_mesh()
    keep = u.grid.kind != EXTERIOR
    table = np.column_stack([X[keep], Y[keep], u.values[keep]])
    np.savetxt(path, table, delimiter=",", header="x,y,value", comments="",
               fmt="%.17g")


def write_field_binary(u, path):
    g = u.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(g.nx, g.ny, g.h, *g.bbox))
        fh.write(np.ascontiguousarray(u.values, dtype="<f8").tobytes())


def read_field_binary(path):
    """Returns (values, header dict)."""
    with open(path, "rb") as fh:
        nx, ny, h, *bbox = _HEADER.unpack(fh.read(_HEADER.size))
        vals = np.frombuffer(fh.read(), dtype="<f8").reshape(ny, nx)
    return vals.copy(), {"nx": nx, "ny": ny, "h": h, "bbox": tuple(bbox)}
