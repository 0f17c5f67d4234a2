import math
import warnings

import numpy as np
import pytest

from spikelab.errors import (NonUniquePeakWarning, NumericalFailure,
                             ParameterError)
from spikelab.pde_core import Grid2D, ScalarField
from spikelab.solver import (_solve_one, disc_energy, keyhole_domain,
                             locate_peak, neumann_curvature_fit,
                             neumann_disc_solve, peak_scaling_study,
                             solve_mixed)
from spikelab.spike import CutoffSpec, assemble_approx


def _square(n=61, h=0.1):
    return Grid2D.rectangle(-3.0, -3.0, h, n, n, "DDDD")


def test_locate_peak_subcell():
    g = _square()
    X, Y = g.mesh()
    u = ScalarField(g, np.exp(-((X - 0.437) ** 2 + (Y + 0.21) ** 2)))
    pk = locate_peak(u)
    assert pk["point"] == pytest.approx((0.437, -0.21), abs=0.02)
    assert pk["unique"]


def test_locate_peak_two_bumps_warns():
    g = _square()
    X, Y = g.mesh()
    u = ScalarField(g, np.exp(-((X - 1.5) ** 2 + Y ** 2)) + np.exp(-((X + 1.5) ** 2 + Y ** 2)))
    with pytest.warns(NonUniquePeakWarning):
        pk = locate_peak(u)
    assert not pk["unique"]


def test_locate_peak_neumann_mirror():
    g = _square()
    X, Y = g.mesh()
    u = ScalarField(g, np.exp(-((X - 0.3) ** 2 + (Y + 3.0) ** 2)))
    pk = locate_peak(u, neumann_rows=("bottom",))
    assert pk["index"][0] == 0
    assert pk["point"][1] == -3.0
    assert pk["point"][0] == pytest.approx(0.3, abs=0.02)


def test_keyhole_needs_gradient():
    with pytest.raises(ParameterError):
        keyhole_domain(math.pi / 3, 1.0, 0.0)


def test_trivial_init_rejected(gs2):
    m = keyhole_domain(math.pi / 3)
    a = assemble_approx(5.0, 0.05, gs2, m, grid=m.cartesian_grid(0.05, 5.0))
    a.field.values[:] = 0.0
    with pytest.warns(Warning):
        with pytest.raises(NumericalFailure) as exc:
            solve_mixed(m, 0.05, 3.0, a, gs2)
    assert exc.value.info.get("trivial")


@pytest.fixture(scope="module")
def keyhole(gs2):
    m = keyhole_domain(math.pi / 3)
    return _solve_one(m, 0.05, gs2, 3.0, 5.1, 0.12, 14.0, CutoffSpec())


def test_keyhole_solution(keyhole):
    row, field = keyhole
    assert row["positive"]
    assert row["dirichlet_trace"] == 0.0
    assert row["residual"] <= 1e-8
    assert row["energy_decrease"]
    assert row["unique"]
    assert row["dist_to_boundary"] <= row["cell"]


def test_keyhole_peak_near_interface(keyhole, gs2):
    row, _ = keyhole
    # spike height within a few percent of the ground state, centre O(eps |log eps|) from Gamma
    assert row["max_u"] == pytest.approx(gs2.u0, rel=0.05)
    assert 0.05 * math.log(20) < row["dist_to_interface"] < 3 * 0.05 * math.log(20)


def test_peak_scaling_needs_four_eps(gs2):
    with pytest.raises(ParameterError):
        peak_scaling_study(math.pi / 3, 3.0, [0.1, 0.05, 0.025], gs2)
    with pytest.raises(ParameterError):
        peak_scaling_study(math.pi / 3, 3.0, [0.1, 0.05, 0.03, 0.01], gs2)


def test_disc_energy_limits(gs2):
    assert disc_energy(math.inf, 0.1, gs2) == pytest.approx(gs2.C0_tilde * 0.01, rel=1e-9)
    # boundary curving away lowers the energy
    assert disc_energy(1.0, 0.1, gs2) < disc_energy(math.inf, 0.1, gs2)


def test_curvature_fit(gs2):
    fit = neumann_curvature_fit([1.0, 2.0, 4.0, 8.0], [0.05, 0.025, 0.0125], 3.0, gs2)
    assert fit["C0_fit"] == pytest.approx(gs2.C0_tilde, rel=0.1)
    assert fit["C1_fit"] > 0
    assert fit["C1_fit"] == pytest.approx(gs2.C1_tilde, rel=0.02)


def test_curvature_fit_degenerate(gs2):
    with pytest.raises(ParameterError):
        neumann_curvature_fit([math.inf], [0.05, 0.025], 3.0, gs2)


def test_neumann_disc_control(gs2):
    _, info = neumann_disc_solve(0.1, gs2)
    assert info["residual"] <= 1e-8
    assert info["min_interior"] > -1e-12
    assert info["dist_to_boundary"] <= 1.5 * info["h"]
    assert info["max"] == pytest.approx(gs2.u0, rel=0.05)
