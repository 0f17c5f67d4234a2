import json
import math

import numpy as np
import pytest

from spikelab.errors import InsufficientDomainError, ParameterError
from spikelab.groundstate import (decay_diagnostics, half_sphere_factor,
                                  moment_integrals, ode_residual, soliton_1d,
                                  solve_ground_state)


@pytest.mark.parametrize("p", [2.0, 3.0])
def test_soliton_closed_form(p):
    gs = solve_ground_state(1, p)
    assert abs(gs.u0 - soliton_1d(0.0, p)) < 1e-9
    assert np.abs(gs.u - soliton_1d(gs.r, p)).max() < 1e-6


def test_soliton_peak_values():
    assert solve_ground_state(1, 3.0).u0 == pytest.approx(math.sqrt(2), abs=1e-9)
    assert solve_ground_state(1, 2.0).u0 == pytest.approx(1.5, abs=1e-9)


def test_one_dimensional_log_slope():
    gs = solve_ground_state(1, 3.0)
    assert abs(gs.derivative(18.0) / gs(18.0) + 1) < 1e-2


@pytest.mark.parametrize("n", [2, 3])
def test_log_slope_next_order(n):
    # U'/U -> -1 - (n-1)/(2r) + O(r^-2)
    gs = solve_ground_state(n, 3.0)
    r = 18.0
    assert gs.derivative(r) / gs(r) == pytest.approx(-1 - (n - 1) / (2 * r), abs=2e-3)


def test_decay_constant_one_dimensional():
    d = decay_diagnostics(solve_ground_state(1, 3.0))
    assert d["c_np"] == pytest.approx(2 * math.sqrt(2), rel=1e-4)


@pytest.mark.parametrize("n,p", [(2, 3.0), (3, 3.0), (2, 2.0), (1, 3.0)])
def test_ode_residual(n, p):
    gs = solve_ground_state(n, p)
    assert np.abs(ode_residual(gs)).max() <= 1e-8


def test_step_halving_is_fourth_order():
    ref = solve_ground_state(2, 3.0, h=2.5e-4).u0
    e1 = abs(solve_ground_state(2, 3.0, h=4e-3).u0 - ref)
    e2 = abs(solve_ground_state(2, 3.0, h=2e-3).u0 - ref)
    assert e2 < e1
    assert e1 / e2 > 8


def test_three_dimensional_fine_grid_oracle(gs3):
    fine = solve_ground_state(3, 3.0, h=2.5e-4)
    assert abs(gs3.u0 - fine.u0) < 1e-8


def test_monotone_and_positive(gs2):
    assert (gs2.u > 0).all()
    assert (np.diff(gs2.u) < 0).all()


def test_tail_continuation(gs2):
    r = np.array([19.0, 20.0, 25.0, 40.0])
    assert np.all(np.diff(gs2(r)) < 0)
    assert gs2.log_u(400.0) == pytest.approx(-400 - 0.5 * math.log(400) + math.log(gs2.c_np), abs=1e-2)


def test_moments(gs2):
    m = moment_integrals(gs2)
    assert m["C0_tilde"] == pytest.approx(gs2.C0_tilde)
    assert gs2.C0_tilde > 0 and gs2.C1_tilde > 0
    assert solve_ground_state(1, 3.0).C0_tilde == pytest.approx(2 / 3, rel=1e-6)


def test_half_sphere_factor():
    assert half_sphere_factor(1) == 0
    assert half_sphere_factor(2) == pytest.approx(2 / 3)
    assert half_sphere_factor(3) == pytest.approx(math.pi / 2)


@pytest.mark.parametrize("n,p", [(2, 1.0), (2, 0.5), (3, 5.0), (3, 6.0)])
def test_exponent_window(n, p):
    with pytest.raises(ParameterError):
        solve_ground_state(n, p)


def test_short_domain_is_flagged():
    gs = solve_ground_state(2, 3.0, r_max=14.0)
    with pytest.raises(InsufficientDomainError):
        decay_diagnostics(gs, max_spread=1e-3)


def test_io(tmp_path, gs2):
    gs2.to_csv(tmp_path / "u.csv")
    gs2.to_json(tmp_path / "u.json")
    head = (tmp_path / "u.csv").read_text().splitlines()[0]
    assert head == "r,U,dU"
    data = json.loads((tmp_path / "u.json").read_text())
    assert data["u0"] == pytest.approx(gs2.u0)
