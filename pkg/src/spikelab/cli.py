"""Command-line experiment runner.

Each subcommand validates its parameters, runs one study, writes CSV and
JSON artifacts into the output directory and exits with

    0  success, every claim check passed
    2  parameter error
    3  numerical failure
    4  a claim check failed its tolerance
    64 usage error

Parameters come from flags, optionally layered over a JSON config file
(``--config``) carrying ``"schema_version": 1``.  Flags win over the file.
The output directory is ``--out``, else ``$SPIKELAB_OUT``, else the
config value, else ``runs/<command>``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .errors import NumericalFailure, ParameterError

SCHEMA_VERSION = 1
EXIT_OK, EXIT_PARAM, EXIT_NUMERIC, EXIT_CLAIM, EXIT_USAGE = 0, 2, 3, 4, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _floats(text):
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated list: {text}") from exc


# -- parameters ------------------------------------------------------------
COMMANDS = {}


def command(name, **defaults):
    def wrap(fn):
        COMMANDS[name] = (fn, defaults)
        return fn
    return wrap


def _as_list(v):
    if isinstance(v, str):
        return _floats(v)
    if isinstance(v, (int, float)):
        return [float(v)]
    return [float(x) for x in v]


def _resolve(args, name):
    fn, defaults = COMMANDS[name]
    params = dict(defaults)
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ParameterError(f"cannot read config: {exc}") from exc
        if cfg.pop("schema_version", None) != SCHEMA_VERSION:
            raise ParameterError(f"config needs schema_version {SCHEMA_VERSION}")
        unknown = set(cfg) - set(defaults) - {"out"}
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        params.update(cfg)
    for key in defaults:
        v = getattr(args, key, None)
        if v is not None:
            params[key] = v
    for key, v in list(params.items()):
        if isinstance(defaults.get(key), list):
            params[key] = _as_list(v)
    out = args.out or os.environ.get("SPIKELAB_OUT") or params.pop("out", None) \
        or os.path.join("runs", name)
    params.pop("out", None)
    return fn, params, Path(out)


def config_hash(name, params):
    blob = json.dumps({"command": name, "params": params}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _claim(name, value, target, passed, artifact=None):
    return {"name": name, "value": value, "tolerance": target,
            "passed": bool(passed), "artifact": artifact}


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, (tuple, set)):
        return list(o)
    return f"<{type(o).__name__}>"


def _write_rows(path, cols, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, float, np.floating, np.integer)):
        return repr(float(v))
    return str(v)


@contextmanager
def _mapper(jobs):
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            yield ex.map
    else:
        yield map


def _check_alpha(a):
    if not 0 < a < 2 * math.pi:
        raise ParameterError("alpha must lie in (0, 2pi)")


def _positive(name, values):
    if not values or any(not v > 0 for v in values):
        raise ParameterError(f"{name} must be a non-empty list of positive numbers")


def _ground_state(n, p):
    from .groundstate import solve_ground_state
    return solve_ground_state(int(n), float(p))


# -- subcommands -----------------------------------------------------------
@command("groundstate", n=2, p=3.0, r_max=20.0, h=1e-3)
def cmd_groundstate(P, out, jobs):
    from .groundstate import (decay_diagnostics, ode_residual, soliton_1d,
                              solve_ground_state)
    gs = solve_ground_state(int(P["n"]), float(P["p"]), r_max=float(P["r_max"]),
                            h=float(P["h"]))
    gs.to_csv(out / "groundstate.csv")
    res = float(np.abs(ode_residual(gs)).max())
    dec = decay_diagnostics(gs)
    result = gs.summary() | {"ode_residual": res, "decay": dec}
    claims = [_claim("ode_residual", res, 1e-8, res <= 1e-8, "groundstate.csv")]
    if gs.n == 1:
        err = float(np.abs(gs.u - soliton_1d(gs.r, gs.p)).max())
        result["soliton_sup_error"] = err
        claims.append(_claim("soliton_sup_error", err, 1e-6, err <= 1e-6, "groundstate.csv"))
        r18 = float(gs.derivative(18.0) / gs(18.0))
        claims.append(_claim("log_slope_r18", r18, "-1 +- 1e-2", abs(r18 + 1) <= 1e-2))
    return result, claims


@command("geometry-check", alpha=math.pi / 4, D=8.0, points=200, m=4000, seed=0)
def cmd_geometry(P, out, jobs):
    from .geometry import (Regime, boundary_infimum_oracle, build_domain,
                           eikonal_gradient_check, limit_profile,
                           minimizer_point, random_interior_points,
                           ridge_distance, stationarity_residual)
    alpha = float(P["alpha"])
    _check_alpha(alpha)
    dom = build_domain(alpha, float(P["D"]))
    rng = np.random.default_rng(int(P["seed"]))
    m = int(P["m"])
    pts = random_interior_points(dom, int(P["points"]), rng, radius=dom.D / 2)
    lp = limit_profile(pts, dom)
    orc = boundary_infimum_oracle(pts, dom, m=m)
    err = np.abs(lp - orc)
    tol = 2.0 / m + 1e-6
    rows = [{"x": x, "y": y, "limit": a, "oracle": b, "abs_error": e}
            for (x, y), a, b, e in zip(pts, lp, orc, err)]
    _write_rows(out / "geometry.csv", ["x", "y", "limit", "oracle", "abs_error"], rows)
    claims = [_claim("oracle_agreement", float(err.max()), tol, err.max() <= tol,
                     "geometry.csv")]
    if dom.regime is Regime.ACUTE:
        up = pts[pts[:, 1] > 0]
        st = max(abs(stationarity_residual(minimizer_point(x, alpha), x, alpha)) for x in up)
        claims.append(_claim("stationarity", st, 1e-8, st <= 1e-8))
    far = (ridge_distance(pts, dom) >= 1e-2) & (dom.boundary_distance(pts) >= 1e-2)
    eik = eikonal_gradient_check(dom, pts[far])
    claims.append(_claim("eikonal", eik["max_deviation"], 1e-4, eik["passed"]))
    lb = float(lp.min())
    claims.append(_claim("lower_bound", lb, dom.expected_lower_bound(),
                         lb >= dom.expected_lower_bound() - 1e-12))
    dom.save(out / "domain.json")
    return {"regime": dom.regime.value, "max_error": float(err.max()),
            "eikonal_points": eik["n_points"]}, claims


@command("project", alpha=math.pi / 4, D=8.0, d=[10.0, 20.0, 40.0])
def cmd_project(P, out, jobs):
    from .geometry import build_domain
    from .projection import convergence_study, default_h, write_projection_csv
    alpha = float(P["alpha"])
    _check_alpha(alpha)
    _positive("d", P["d"])
    if min(P["d"]) < 5:
        raise ParameterError("projection needs d >= 5")
    dom = build_domain(alpha, float(P["D"]))
    gs = _ground_state(2, 3.0)
    with _mapper(jobs) as mp:
        study = convergence_study(dom, gs, P["d"], mapper=mp)
    write_projection_csv(study["rows"], out / "projection.csv")
    bound = dom.expected_lower_bound()
    claims = [
        _claim("sup_error_monotone", [r["sup_error"] for r in study["rows"]],
               "non-increasing, 10% slack", study["monotone"], "projection.csv"),
        _claim("sup_error_final", study["rows"][-1]["sup_error"], 0.15,
               study["final_ok"], "projection.csv"),
    ]
    for r in study["rows"]:
        claims.append(_claim(f"lower_bound_d{r['d']:g}", r["min_value"],
                             f"> {bound:.6g} - h", r["min_value"] > bound - r["h"],
                             "projection.csv"))
        claims.append(_claim(f"max_principle_d{r['d']:g}", r["max_principle_ok"], True,
                             r["max_principle_ok"]))
    return {"regime": dom.regime.value, "rows": study["rows"],
            "h_rule": [default_h(d) for d in P["d"]]}, claims


@command("xi-rates", alpha=math.pi / 4, D=8.0, d=30.0, rate_d=30.0, delta_d=0.05)
def cmd_xi(P, out, jobs):
    from .geometry import build_domain
    from .projection import solve_projection, xi_d_rate
    alpha = float(P["alpha"])
    _check_alpha(alpha)
    dom = build_domain(alpha, float(P["D"]))
    gs = _ground_state(2, 3.0)
    pr = solve_projection(dom, float(P["d"]), gs)
    rate = xi_d_rate(dom, gs, float(P["rate_d"]), delta_d=float(P["delta_d"]))
    row = {"alpha": alpha, "d": pr.d, "Xi_log_norm": pr.Xi_log_norm,
           "rate_d": float(P["rate_d"]), "xi_d_rate": rate}
    _write_rows(out / "xi_rates.csv", list(row), [row])
    claims = [
        _claim("xi_norm_exponent", pr.Xi_log_norm, "1 +- 0.1",
               abs(pr.Xi_log_norm - 1) <= 0.1, "xi_rates.csv"),
        _claim("xi_d_rate", rate, ">= 0.85", rate >= 0.85, "xi_rates.csv"),
    ]
    return row, claims


def _expected_rate(alpha):
    return -(1 + math.sqrt(2) * math.sin(alpha)) if alpha < math.pi / 2 else -2.0


@command("energy-landscape", alpha=math.pi / 6, eps=1e-3, p=3.0,
         d=[4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0], proxy=16.0, h=0.1, mirror=0,
         kappa=0.0, signs_eps=0.0)
def cmd_energy(P, out, jobs):
    from .spike import (SpikeModel, add_curvature_term, d_derivative_signs,
                        energy_landscape)
    alpha = float(P["alpha"])
    _check_alpha(alpha)
    _positive("d", P["d"])
    gs = _ground_state(2, float(P["p"]))
    sides = (1, -1) if int(P["mirror"]) else (1,)
    with _mapper(jobs) as mp:
        rep = energy_landscape(SpikeModel(alpha), gs, float(P["eps"]), P["d"],
                               p=float(P["p"]), sides=sides, h=float(P["h"]),
                               proxy_d=float(P["proxy"]), mapper=mp)
    rep.to_csv(out / "energy.csv")
    expected = _expected_rate(alpha)
    ok = abs(rep.fitted_rate - expected) <= 0.1 * abs(expected)
    result = rep.summary() | {"expected_rate": expected}
    claims = [_claim("interaction_rate", rep.fitted_rate, f"{expected:.4f} +- 10%", ok,
                     "energy.csv")]
    if sides == (1, -1):
        up, dn = rep.energies(1), rep.energies(-1)
        ev = float(np.abs(up - dn).max())
        claims.append(_claim("evenness", ev, 1e-10, ev <= 1e-10, "energy.csv"))
    proxy_I = rep.energies()[-1]
    rel = abs(proxy_I - gs.C0_tilde) / gs.C0_tilde
    claims.append(_claim("flat_limit_C0", rel, 0.02, rel <= 0.02, "energy.csv"))
    if float(P["signs_eps"]) > 0:
        e2 = float(P["signs_eps"])
        kappa = float(P["kappa"])
        r2 = add_curvature_term(rep, gs.C1_tilde, e2, lambda d: -kappa * e2 * d)
        result["signs"] = d_derivative_signs(r2, e2)
    return result, claims


def _keyhole_fields(P):
    return float(P["alpha"]), float(P["kappa0"]), float(P["kappa1"])


@command("solve-mixed", alpha=math.pi / 3, eps=0.05, p=3.0, kappa0=1.0, kappa1=1.0,
         d0=0.0, h=0.12, margin=14.0)
def cmd_solve_mixed(P, out, jobs):
    from .pde_core import write_field_binary, write_field_csv
    from .solver import _solve_one, keyhole_domain
    from .spike import CutoffSpec
    alpha, k0, k1 = _keyhole_fields(P)
    _check_alpha(alpha)
    eps = float(P["eps"])
    if not 0 < eps < 1:
        raise ParameterError("eps must lie in (0, 1)")
    gs = _ground_state(2, float(P["p"]))
    d0 = float(P["d0"]) or 2.0 * abs(math.log(eps))
    row, field = _solve_one(keyhole_domain(alpha, k0, k1), eps, gs, float(P["p"]), d0,
                            float(P["h"]), float(P["margin"]), CutoffSpec())
    write_field_csv(field, out / "field.csv")
    write_field_binary(field, out / "field.bin")
    claims = [
        _claim("positivity", row["positive"], True, row["positive"]),
        _claim("dirichlet_trace", row["dirichlet_trace"], 0.0, row["dirichlet_trace"] == 0),
        _claim("residual", row["residual"], 1e-8, row["residual"] <= 1e-8),
        _claim("energy_not_above_initial", row["energy_decrease"], True, row["energy_decrease"]),
        _claim("unique_peak", row["unique"], True, row["unique"]),
    ]
    return row, claims


@command("peak-scaling", alpha=math.pi / 3, p=3.0, eps=[0.1, 0.05, 0.025, 0.0125],
         kappa0=1.0, kappa1=1.0, h=0.12, margin=14.0)
def cmd_peak(P, out, jobs):
    from .solver import peak_scaling_study
    alpha, k0, k1 = _keyhole_fields(P)
    _check_alpha(alpha)
    _positive("eps", P["eps"])
    gs = _ground_state(2, float(P["p"]))
    tr = peak_scaling_study(alpha, float(P["p"]), P["eps"], gs, kappa0=k0, kappa1=k1,
                            h=float(P["h"]), margin=float(P["margin"]))
    tr.to_csv(out / "peaks.csv")
    if tr.failures:
        raise NumericalFailure("some solves failed", failures=tr.failures,
                               partial=tr.summary())
    claims = [_claim("peak_distance_slope", tr.slope, "[1.5, 2.5]",
                     1.5 <= tr.slope <= 2.5, "peaks.csv")]
    for r in tr.rows:
        claims.append(_claim(f"positivity_eps{r['eps']:g}", r["positive"], True, r["positive"]))
        claims.append(_claim(f"on_neumann_eps{r['eps']:g}", r["dist_to_boundary"],
                             "<= one cell", r["dist_to_boundary"] <= r["cell"]))
    d = [r["dist_to_interface"] for r in tr.rows]
    mono = all(b <= a for a, b in zip(d, d[1:]))
    claims.append(_claim("distance_monotone_in_eps", d, "non-increasing", mono, "peaks.csv"))
    return tr.summary() | {"rows": tr.rows}, claims


@command("curvature-fit", R=[1.0, 2.0, 4.0, 8.0], eps=[0.1, 0.05, 0.025], p=3.0)
def cmd_curvature(P, out, jobs):
    from .solver import neumann_curvature_fit
    _positive("R", P["R"])
    _positive("eps", P["eps"])
    gs = _ground_state(2, float(P["p"]))
    fit = neumann_curvature_fit(P["R"], P["eps"], float(P["p"]), gs)
    _write_rows(out / "curvature.csv", ["R", "eps", "I"], fit["rows"])
    rel = abs(fit["C0_fit"] - gs.C0_tilde) / gs.C0_tilde
    claims = [
        _claim("C0_fit", fit["C0_fit"], f"{gs.C0_tilde:.6g} +- 10%", rel <= 0.1, "curvature.csv"),
        _claim("C1_fit_positive", fit["C1_fit"], "> 0", fit["C1_fit"] > 0, "curvature.csv"),
    ]
    return {k: v for k, v in fit.items() if k != "rows"}, claims


# -- report ----------------------------------------------------------------
def _csv_ok(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2 or any(len(r) != len(rows[0]) for r in rows):
            return False
        for r in rows[1:]:
            for v in r:
                if v not in ("true", "false"):
                    float(v)
        return True
    except (OSError, ValueError, csv.Error, UnicodeDecodeError):
        return False


def report(run_dir):
    """Aggregate claim checks from every result.json under ``run_dir``."""
    run_dir = Path(run_dir)
    checks, gaps = [], []
    for path in sorted(run_dir.rglob("result.json")):
        rel = path.parent.relative_to(run_dir).as_posix() or "."
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
            claims = doc["claims"]
        except (OSError, ValueError, KeyError) as exc:
            gaps.append({"run": rel, "problem": f"UNREADABLE result.json ({exc.__class__.__name__})"})
            continue
        for c in claims:
            status = "PASS" if c.get("passed") else "FAIL"
            art = c.get("artifact")
            if art and not _csv_ok(path.parent / art):
                status = "UNREADABLE"
            checks.append({"run": rel, "command": doc.get("command"), "check": c["name"],
                           "value": c.get("value"), "tolerance": c.get("tolerance"),
                           "status": status})
    summary = {"run_dir": str(run_dir), "n_checks": len(checks),
               "n_pass": sum(c["status"] == "PASS" for c in checks),
               "n_fail": sum(c["status"] == "FAIL" for c in checks),
               "n_unreadable": sum(c["status"] == "UNREADABLE" for c in checks),
               "checks": checks, "gaps": gaps}
    return summary


def _table(summary):
    lines = [f"{'run':<28} {'check':<28} {'status':<10} value"]
    for c in summary["checks"]:
        v = c["value"]
        v = f"{v:.6g}" if isinstance(v, float) else json.dumps(v, default=str)
        lines.append(f"{c['run']:<28} {c['check']:<28} {c['status']:<10} {v[:60]}")
    for g in summary["gaps"]:
        lines.append(f"{g['run']:<28} {'-':<28} {'GAP':<10} {g['problem']}")
    lines.append(f"{summary['n_pass']} pass, {summary['n_fail']} fail, "
                 f"{summary['n_unreadable']} unreadable, {len(summary['gaps'])} gaps")
    return "\n".join(lines)


# -- entry points -----------------------------------------------------------
def _build_parser():
    ap = _Parser(prog="spikelab", description="Spike-layer experiments.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    for name, (_, defaults) in COMMANDS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config")
        sp.add_argument("--out")
        sp.add_argument("--jobs", type=int, default=1)
        for key, val in defaults.items():
            flag = "--" + key.replace("_", "-")
            if isinstance(val, list):
                sp.add_argument(flag, dest=key, type=_floats)
            elif isinstance(val, int) and not isinstance(val, bool):
                sp.add_argument(flag, dest=key, type=int)
            else:
                sp.add_argument(flag, dest=key, type=float)
    rp = sub.add_parser("report")
    rp.add_argument("run_dir")
    rp.add_argument("--out")
    return ap


def run(argv=None):
    ap = _build_parser()
    try:
        args = ap.parse_args(argv)
    except UsageError as exc:
        print(f"spikelab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        ap.print_usage(sys.stderr)
        return EXIT_USAGE
    if args.command == "report":
        summary = report(args.run_dir)
        out = Path(args.out) if args.out else Path(args.run_dir)
        if out.is_dir():
            _write_json(out / "report.json", summary)
            (out / "report.txt").write_text(_table(summary) + "\n", encoding="utf-8")
        print(_table(summary))
        return EXIT_OK
    try:
        fn, params, out = _resolve(args, args.command)
        if args.jobs is not None and args.jobs < 1:
            raise ParameterError("--jobs must be at least 1")
        out.mkdir(parents=True, exist_ok=True)
        header = {"schema_version": SCHEMA_VERSION, "command": args.command,
                  "version": __version__, "config": params,
                  "config_hash": config_hash(args.command, params)}
        result, claims = fn(params, out, args.jobs)
    except ParameterError as exc:
        print(f"spikelab: parameter error: {exc}", file=sys.stderr)
        return EXIT_PARAM
    except NumericalFailure as exc:
        print(f"spikelab: numerical failure: {exc}", file=sys.stderr)
        _write_json(out / "failure.json", header | {"error": str(exc), "info": exc.info})
        return EXIT_NUMERIC
    doc = header | {"result": result, "claims": claims}
    _write_json(out / "result.json", doc)
    print(json.dumps({"command": args.command, "result": result, "claims": claims},
                     indent=2, sort_keys=True, default=_json_default))
    return EXIT_OK if all(c["passed"] for c in claims) else EXIT_CLAIM


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
