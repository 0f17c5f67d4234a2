import math

import numpy as np
import pytest

from spikelab.errors import ParameterError, TrivialBranchWarning
from spikelab.pde_core import (Grid2D, LogPolarFrame, ScalarField, assemble,
                               energy, newton_solve, read_field_binary,
                               solve_linear, strong_residual,
                               write_field_binary, write_field_csv)


def exact(X, Y):
    return np.exp(X) * np.sin(2 * Y) + X ** 2


def forcing(X, Y):
    lap = -3 * np.exp(X) * np.sin(2 * Y) + 2
    return -lap + exact(X, Y)


def mms_error(n, method="direct"):
    h = 1.0 / n
    g = Grid2D.rectangle(0.0, 0.0, h, n + 1, n + 1, "DDDD")
    X, Y = g.mesh()
    rhs = np.where(g.kind.astype(bool), forcing(X, Y), 0.0)
    rhs.ravel()[g.fixed] = exact(X, Y).ravel()[g.fixed]
    op = assemble(g, 1.0)
    u, info = solve_linear(op, ScalarField(g, rhs), tol=1e-12, method=method,
                           return_info=True)
    err = (u.values - exact(X, Y)).ravel()[g.free]
    return math.sqrt(h * h * (err ** 2).sum()), info


def test_mms_second_order():
    errs = [mms_error(n)[0] for n in (10, 20, 40)]
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert all(1.8 <= o <= 2.2 for o in orders), orders


def test_cg_matches_direct():
    e_d, _ = mms_error(20, "direct")
    e_c, info = mms_error(20, "cg")
    assert e_c == pytest.approx(e_d, rel=1e-6)
    assert 1 < info.iterations < 10 * 21 * 21


def test_operator_spd_and_m_matrix():
    g = Grid2D.rectangle(0.0, 0.0, 0.1, 8, 6, "DNDN")
    op = assemble(g, 0.5)
    A = op.K_FF.toarray()
    assert np.allclose(A, A.T)
    assert np.linalg.eigvalsh(A).min() > 0
    off = A - np.diag(np.diag(A))
    assert (off <= 0).all()


def test_quadratic_stencil():
    g = Grid2D.rectangle(-1.0, -1.0, 0.1, 21, 21, "DDDD")
    X, Y = g.mesh()
    op = assemble(g, 1.0)
    out = op.apply(ScalarField(g, X ** 2)).flat[g.free]
    assert np.allclose(out, (-2 + X ** 2).ravel()[g.free], atol=1e-10)


def test_constants_in_neumann_box():
    g = Grid2D.rectangle(0.0, 0.0, 0.1, 11, 11, "NNNN")
    op = assemble(g, 1.0)
    assert np.allclose(op.L @ np.ones(g.nx * g.ny), 0.0, atol=1e-12)
    assert op.mass.sum() == pytest.approx(1.0)


def test_maximum_principle():
    g = Grid2D.rectangle(0.0, 0.0, 0.05, 21, 21, "DNDN")
    rng = np.random.default_rng(0)
    rhs = rng.uniform(0, 1, (21, 21))
    u = solve_linear(assemble(g, 1.0), ScalarField(g, rhs), method="direct")
    assert u.flat.min() >= 0
    # zero data gives the zero solution
    z = solve_linear(assemble(g, 1.0), ScalarField(g, np.zeros((21, 21))))
    assert np.abs(z.flat).max() == 0


def test_log_polar_area():
    # disc sector of opening pi/2 between radii 0.5 and 2
    h = 0.01
    ny = int(round((math.pi / 2) / h)) + 1
    h = (math.pi / 2) / (ny - 1)
    nx = int(round(math.log(4) / h)) + 1
    g = Grid2D.rectangle(math.log(0.5), 0.0, h, nx, ny, "NNNN", frame=LogPolarFrame())
    assert g.check_invariants()["interior_neighbours"]
    r1 = 0.5 * math.exp((nx - 1) * h)
    expected = 0.5 * (math.pi / 2) * (r1 ** 2 - 0.25)
    assert g.mass().sum() == pytest.approx(expected, rel=1e-4)


def soliton_strip(h, half=False):
    L = 12.0
    x0 = 0.0 if half else -L
    nx = int(round((L - x0) / h)) + 1
    g = Grid2D.rectangle(x0, 0.0, h, nx, 3, "NDN" + ("N" if half else "D"))
    X, _ = g.mesh()
    exact_u = math.sqrt(2) / np.cosh(X)
    return g, exact_u


def test_newton_soliton():
    g, ue = soliton_strip(0.025)
    u, info = newton_solve(g, 1.0, 3.0, ScalarField(g, 1.2 * ue))
    assert info["residual"] <= 1e-8
    assert np.abs(u.values - ue).max() <= 1e-4
    assert info["iterations"] < 15


def test_newton_residual_and_energy():
    g, ue = soliton_strip(0.025)
    u, _ = newton_solve(g, 1.0, 3.0, ScalarField(g, ue))
    op = assemble(g, 1.0)
    assert np.abs(strong_residual(op, u, 3.0)).max() <= 1e-8
    width = 2 * 0.025
    assert energy(u) / width == pytest.approx(4 / 3, rel=1e-3)


def test_half_soliton_energy():
    g, ue = soliton_strip(0.025, half=True)
    u, _ = newton_solve(g, 1.0, 3.0, ScalarField(g, ue))
    assert energy(u) / (2 * 0.025) == pytest.approx(2 / 3, rel=1e-3)


def test_energy_stationary_at_solution():
    g, ue = soliton_strip(0.05)
    u, _ = newton_solve(g, 1.0, 3.0, ScalarField(g, ue))
    rng = np.random.default_rng(1)
    v = np.zeros(g.nx * g.ny)
    v[g.free] = rng.normal(size=g.free.size)
    t = 1e-4
    ep = energy(ScalarField(g, u.flat + t * v))
    em = energy(ScalarField(g, u.flat - t * v))
    assert abs(ep - em) / (2 * t) < 1e-6


def test_trivial_branch_flagged():
    g, _ = soliton_strip(0.1)
    with pytest.warns(TrivialBranchWarning):
        _, info = newton_solve(g, 1.0, 3.0, ScalarField(g, np.zeros((g.ny, g.nx))))
    assert info["trivial"]


def test_negative_initial_guess_rejected():
    g, ue = soliton_strip(0.1)
    with pytest.raises(ParameterError):
        newton_solve(g, 1.0, 3.0, ScalarField(g, -ue))


def test_binary_round_trip(tmp_path):
    g = Grid2D.rectangle(0.0, 0.0, 0.1, 7, 5, "DDDD")
    rng = np.random.default_rng(2)
    u = ScalarField(g, rng.normal(size=(5, 7)))
    write_field_binary(u, tmp_path / "u.bin")
    vals, head = read_field_binary(tmp_path / "u.bin")
    assert np.array_equal(vals, u.values)
    assert head["nx"] == 7 and head["ny"] == 5 and head["h"] == 0.1
    write_field_csv(u, tmp_path / "u.csv")
    assert (tmp_path / "u.csv").read_text().startswith("x,y,value")


def test_bad_diffusion():
    g = Grid2D.rectangle(0.0, 0.0, 0.1, 5, 5)
    with pytest.raises(ParameterError):
        assemble(g, 0.0)
