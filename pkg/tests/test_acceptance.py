"""Acceptance suite: one pass/fail line per criterion.

Run under pytest (lines are repeated in the terminal summary) or as a
script: ``python tests/test_acceptance.py [n ...]``.  Heavy studies are
cached so criteria that share a sweep compute it once.
"""

import math
import sys
import time
from functools import cache

import numpy as np
import pytest

from spikelab.geometry import (Regime, boundary_infimum_oracle, build_domain,
                               eikonal_gradient_check, limit_profile,
                               minimizer_point, random_interior_points,
                               ridge_distance, stationarity_residual)
from spikelab.groundstate import soliton_1d, solve_ground_state
from spikelab.projection import convergence_study, solve_projection, xi_d_rate
from spikelab.solver import neumann_curvature_fit, peak_scaling_study
from spikelab.spike import CutoffSpec, SpikeModel, energy_landscape

PI = math.pi
D_PROJ = (10.0, 20.0, 40.0)
LOWER_BOUND_ANGLES = (PI / 6, PI / 4, PI / 3, 3 * PI / 4, 3 * PI / 2)
REGIME_ANGLES = (PI / 4, 3 * PI / 4, 3 * PI / 2)
PEAK_EPS = (0.1, 0.05, 0.025, 0.0125)


@cache
def gs():
    return solve_ground_state(2, 3.0)


@cache
def projection_study(alpha):
    return convergence_study(build_domain(alpha, 8.0), gs(), D_PROJ)


@cache
def landscape(alpha, sides=(1,)):
    d = [4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]
    return energy_landscape(SpikeModel(alpha), gs(), 1e-3, d, sides=sides, proxy_d=16.0)


@cache
def peak_trace():
    return peak_scaling_study(PI / 3, 3.0, PEAK_EPS, gs())


def _fmt(alpha):
    return f"{alpha / PI:.4g}pi"


def c1():
    solve_ground_state(1, 2.0)  # JIT warm-up
    worst_err, worst_slope, worst_t = 0.0, 0.0, 0.0
    for p in (2.0, 3.0):
        t = time.perf_counter()
        g = solve_ground_state(1, p)
        worst_t = max(worst_t, time.perf_counter() - t)
        worst_err = max(worst_err, float(np.abs(g.u - soliton_1d(g.r, p)).max()))
        worst_slope = max(worst_slope, abs(float(g.derivative(18.0) / g(18.0)) + 1.0))
    ok = worst_err <= 1e-6 and worst_slope <= 1e-2 and worst_t < 1.0
    return ok, (f"sup err {worst_err:.2e} (<= 1e-6), |U'/U(18)+1| {worst_slope:.2e} "
                f"(<= 1e-2), max solve {worst_t:.3f} s (< 1 s)")


def _viscosity(alpha):
    s = projection_study(alpha)
    errs = [r["sup_error"] for r in s["rows"]]
    txt = ", ".join(f"d={r['d']:g}: {e:.4f}" for r, e in zip(s["rows"], errs))
    return s["passed"], f"alpha={_fmt(alpha)} sup errors {txt} (non-increasing +10%, final <= 0.15)"


def c2():
    return _viscosity(PI / 4)


def c3():
    return _viscosity(3 * PI / 2)


def c4():
    bad, worst = [], math.inf
    for a in LOWER_BOUND_ANGLES:
        bound = build_domain(a, 8.0).expected_lower_bound()
        for r in projection_study(a)["rows"]:
            margin = r["min_value"] - (bound - r["h"])
            worst = min(worst, margin)
            if margin <= 0:
                bad.append(f"{_fmt(a)} d={r['d']:g} min {r['min_value']:.4f} vs {bound - r['h']:.4f}")
    detail = f"{15 - len(bad)}/15 solves above bound - h; worst margin {worst:.4f}"
    return not bad, detail + ("; failing: " + "; ".join(bad) if bad else "")


@cache
def _geometry(alpha, n=200, m=4000):
    dom = build_domain(alpha, 8.0)
    pts = random_interior_points(dom, n, np.random.default_rng(0), radius=dom.D / 2)
    err = float(np.abs(limit_profile(pts, dom) - boundary_infimum_oracle(pts, dom, m=m)).max())
    stat = 0.0
    if dom.regime is Regime.ACUTE:
        stat = max(abs(stationarity_residual(minimizer_point(x, alpha), x, alpha))
                   for x in pts[pts[:, 1] > 0])
    far = (ridge_distance(pts, dom) >= 1e-2) & (dom.boundary_distance(pts) >= 1e-2)
    eik = eikonal_gradient_check(dom, pts[far])
    return err, 2.0 / m + 1e-6, stat, eik


def c5():
    ok, parts = True, []
    for a in REGIME_ANGLES:
        err, tol, stat, _ = _geometry(a)
        ok &= err <= tol and stat <= 1e-8
        parts.append(f"{_fmt(a)} err {err:.1e}/{tol:.1e} stat {stat:.1e}")
    return ok, "; ".join(parts)


def c6():
    ok, parts = True, []
    for a in REGIME_ANGLES:
        eik = _geometry(a)[3]
        ok &= eik["passed"]
        parts.append(f"{_fmt(a)} max||grad|-1| {eik['max_deviation']:.1e} over {eik['n_points']} pts")
    return ok, "; ".join(parts) + " (<= 1e-4)"


def c7():
    ok, parts = True, []
    for a in REGIME_ANGLES:
        dom = build_domain(a, 8.0)
        expo = solve_projection(dom, 30.0, gs()).Xi_log_norm
        rate = xi_d_rate(dom, gs(), 30.0)
        good = abs(expo - 1.0) <= 0.1 and rate >= 0.85
        ok &= good
        parts.append(f"{_fmt(a)} exponent {expo:.3f} rate {rate:.3f}{'' if good else ' x'}")
    return ok, "; ".join(parts) + " (|exp-1| <= 0.1, rate >= 0.85)"


def c8():
    ok, parts = True, []
    for a, target in ((PI / 6, -(1 + math.sqrt(2) * math.sin(PI / 6))), (3 * PI / 4, -2.0)):
        rep = landscape(a)
        good = abs(rep.fitted_rate - target) <= 0.1 * abs(target) and rep.n_fit >= 5
        ok &= good
        parts.append(f"{_fmt(a)} slope {rep.fitted_rate:.3f} vs {target:.3f} "
                     f"({rep.n_fit} pts){'' if good else ' x'}")
    return ok, "; ".join(parts) + " (10%)"


def c9():
    tr = peak_trace()
    ok = not tr.failures and len(tr.rows) == 4 and 1.5 <= tr.slope <= 2.5
    dist = ", ".join(f"{r['dist_to_interface']:.4f}" for r in tr.rows)
    return ok, (f"alpha=pi/3 slope {tr.slope:.3f} +- {tr.slope_stderr:.3f} in [1.5, 2.5]; "
                f"dist {dist}; failures {len(tr.failures)}")


def c10():
    fit = neumann_curvature_fit([1.0, 2.0, 4.0, 8.0], [0.1, 0.05, 0.025], 3.0, gs())
    rel = abs(fit["C0_fit"] - fit["C0_ref"]) / fit["C0_ref"]
    ok = rel <= 0.1 and fit["C1_fit"] > 0
    return ok, (f"C0_fit {fit['C0_fit']:.5f} vs {fit['C0_ref']:.5f} (rel {rel:.1e} <= 0.1), "
                f"C1_fit {fit['C1_fit']:.4f} > 0")


def c11():
    checks = {}
    for r in peak_trace().rows:
        tag = f"eps={r['eps']:g}"
        checks[f"positive {tag}"] = r["positive"]
        checks[f"dirichlet trace {tag}"] = r["dirichlet_trace"] == 0.0
        checks[f"unique peak {tag}"] = r["unique"]
    for a in LOWER_BOUND_ANGLES:
        for r in projection_study(a)["rows"]:
            checks[f"max principle {_fmt(a)} d={r['d']:g}"] = r["max_principle_ok"]
            checks[f"projection evenness {_fmt(a)} d={r['d']:g}"] = r["evenness_error"] <= 1e-10
    rep = landscape(PI / 3, sides=(1, -1))
    checks["energy evenness pi/3"] = float(np.abs(rep.energies(1) - rep.energies(-1)).max()) <= 1e-10
    for d in (5.0, 10.0, 40.0):
        for k, v in CutoffSpec().check(d=d).items():
            checks[f"cutoff {k} d={d:g}"] = v
    bad = [k for k, v in checks.items() if not v]
    return not bad, f"{len(checks) - len(bad)}/{len(checks)} invariants hold" + (
        "; failing: " + ", ".join(bad) if bad else "")


CRITERIA = {1: c1, 2: c2, 3: c3, 4: c4, 5: c5, 6: c6, 7: c7, 8: c8, 9: c9, 10: c10, 11: c11}


def evaluate(n):
    ok, detail = CRITERIA[n]()
    return bool(ok), f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} {detail}"


@pytest.mark.parametrize("n", sorted(CRITERIA))
def test_acceptance(n, acceptance_log):
    ok, line = evaluate(n)
    print(line)
    acceptance_log.append(line)
    assert ok, line


if __name__ == "__main__":
    wanted = [int(a) for a in sys.argv[1:]] or sorted(CRITERIA)
    results = [evaluate(n) for n in wanted]
    for _, line in results:
        print(line, flush=True)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
