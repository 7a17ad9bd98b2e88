"""Command-line front end: ``hjdesign <subcommand> [config.yaml] [-o DIR]``.

Every run writes its artifacts, ``resolved_config.json``, ``manifest.json``
(versions plus SHA-256 of every input and artifact) and ``run_info.json``
(wall time, kept out of the manifest so manifests of identical runs are
bit-identical).  Exit codes: 0 ok, 1 numerical failure, 2 configuration
error, 3 domain or hypothesis error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import checks, config, kernels
from .characteristics import PhiMap, convergence_report, gateaux_derivative, phi_map
from .errors import ConfigurationError, DomainError, HJError
from .fixtures import fixture, random_lipschitz
from .grid import GridFunction, GridSpec, norms, read_csv, write_csv
from .hamiltonian import QuadraticHamiltonian, hamiltonian_from_config
from .inverse import (
    DescentParams,
    descend,
    design_window,
    directional_derivative,
    evaluate_J,
    gradient_measure,
    mollify_gradient,
    regularize,
)
from .reachability import (
    inverse_design_cone,
    is_reachable,
    obstacle_residual,
    project_L2,
)
from .solvers import (
    backward_solve,
    calibrate_epsilon,
    default_scheme,
    forward_solve,
    inner_window,
)
from .transport import (
    backward_reversible,
    duality_pairing,
    extend_measure_at_zero,
    forward_duality_solution,
    oslc_estimate,
    transport_coefficient,
)

VOLATILE = ("run_info.json", "manifest.json", "timings.json")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Run:
    """Output directory bookkeeping for one subcommand."""

    def __init__(self, out_dir: Path, command: str, cfg: dict):
        self.out = out_dir
        self.out.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.cfg = cfg
        self.inputs: dict = {}
        self.t0 = time.perf_counter()

    def path(self, name: str) -> Path:
        return self.out / name

    def json(self, name: str, obj) -> None:
        self.path(name).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")

    def grid(self, name: str, f: GridFunction, t: float | None = None) -> None:
        write_csv(self.path(name), f, time=t)

    def text(self, name: str, body: str) -> None:
        self.path(name).write_text(body)

    def finish(self) -> None:
        # where the run wrote is not part of what it computed
        self.json("resolved_config.json", {k: v for k, v in self.cfg.items() if k != "output_dir"})
        self.json("run_info.json", {"command": self.command, "output_dir": str(self.out),
                                    "wall_seconds": time.perf_counter() - self.t0})
        artifacts = {p.name: _sha256(p) for p in sorted(self.out.iterdir())
                     if p.is_file() and p.name not in VOLATILE}
        try:
            version = metadata.version("artifact")
        except metadata.PackageNotFoundError:
            version = "unknown"
        self.json("manifest.json", {
            "command": self.command,
            "versions": {"hjdesign": version, "python": platform.python_version(), "numpy": np.__version__,
                         "scipy": scipy.__version__, "kernels": kernels.BACKEND},
            "inputs": self.inputs,
            "artifacts": artifacts,
        })


# ---------------------------------------------------------------------------
# shared setup


class Context:
    def __init__(self, cfg: dict, base_dir: Path, run: Run):
        g = cfg["grid"]
        self.cfg = cfg
        self.base = base_dir
        self.run = run
        self.spec = GridSpec(g["dim"], g["L"], g["M"])
        self.ext = g["extension"]
        self.model = hamiltonian_from_config(cfg["hamiltonian"], L=self.spec.L)
        self.T = float(cfg["T"])
        self.scheme = cfg["scheme"] or default_scheme(self.model)
        self.schedule = cfg["schedule"]
        self.rng = np.random.default_rng(cfg["seed"])

    def data(self, key: str) -> GridFunction:
        kind, val = next(iter(self.cfg["data"][key].items()))
        if kind == "csv":
            path = (self.base / val).resolve()
            f, _ = read_csv(path)
            self.run.inputs[f"data.{key}"] = {"path": str(val), "sha256": _sha256(path)}
            if f.spec != self.spec:
                raise ConfigurationError(f"data.{key}: {val} is on {f.spec}, the run grid is {self.spec}")
            return f
        if kind == "indicator":
            return checks.indicator(self.spec, float(val["halfwidth"]))
        if kind == "fixture":
            f = fixture(val, self.spec)
        else:
            f = random_lipschitz(self.spec, self.rng, int(val.get("n_terms", 4)), float(val.get("lip", 1.0)))
        return GridFunction(self.spec, f.values, extension=self.ext)

    def quadratic_A(self) -> np.ndarray:
        if not isinstance(self.model, QuadraticHamiltonian):
            raise DomainError("reachability is only characterized for H(p) = <A p, p> / 2 (family: quadratic)")
        return self.model.A


def _write_slices(ctx: Context, res, stem: str) -> list:
    names = []
    for k, (t, f) in enumerate(zip(res.times, res.slices)):
        name = f"{stem}_{k:03d}.csv"
        ctx.run.grid(name, f, float(t))
        names.append(name)
    return names


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve(ctx: Context) -> dict:
    u0 = ctx.data("u0")
    res = forward_solve(u0, ctx.T, ctx.model, ctx.scheme, ctx.schedule)
    files = _write_slices(ctx, res, "solution")
    return {"scheme": res.scheme, "dt": res.dt, "times": res.times, "lip": res.diagnostics["lip"], "files": files}


def cmd_backward(ctx: Context) -> dict:
    uT = ctx.data("uT")
    res = backward_solve(uT, ctx.T, ctx.model, ctx.scheme, ctx.schedule)
    files = _write_slices(ctx, res, "backward")
    return {"scheme": res.scheme, "dt": res.dt, "elapsed_backward": res.times, "files": files}


def cmd_envelope(ctx: Context) -> dict:
    uT = ctx.data("uT")
    back = backward_solve(uT, ctx.T, ctx.model, ctx.scheme).final
    env = forward_solve(back, ctx.T, ctx.model, ctx.scheme).final
    ctx.run.grid("target.csv", uT)
    ctx.run.grid("backward.csv", back)
    ctx.run.grid("envelope.csv", env)
    gap = env - uT
    return {"scheme": ctx.scheme, "min_envelope_minus_target": float(gap.values.min()),
            "L2_envelope_minus_target": norms(gap)["L2"]}


def cmd_gateaux(ctx: Context) -> dict:
    u0, w = ctx.data("u0"), ctx.data("w")
    gcfg = ctx.cfg["gateaux"]
    phi: PhiMap = phi_map(u0, ctx.T, ctx.model, ctx.scheme, gcfg["n_steps"])
    deriv = gateaux_derivative(u0, w, ctx.T, ctx.model, ctx.scheme, phi=phi)
    table = convergence_report(u0, w, ctx.T, ctx.model, gcfg["deltas"], scheme=ctx.scheme)
    ctx.run.grid("derivative.csv", deriv, ctx.T)
    phi.to_csv(ctx.run.path("phi_map.csv"))
    rows = "delta,L1\n" + "".join(f"{d!r},{e!r}\n" for d, e in zip(table.deltas, table.distances))
    ctx.run.text("convergence.csv", rows)
    return {"floor": table.floor, "monotone": table.monotone, "deltas": table.deltas, "L1": table.distances,
            "invalid_nodes": int((~phi.valid_mask).sum())}


def cmd_transport(ctx: Context) -> dict:
    u0, w, piT = ctx.data("u0"), ctx.data("w"), ctx.data("piT")
    tcfg = ctx.cfg["transport"]
    tau = float(tcfg["tau"])
    schedule = tcfg["schedule"] or [tau * k / 4 for k in range(1, 5)]
    v = forward_duality_solution(u0, w, schedule, ctx.model, ctx.scheme)
    measures = backward_reversible(u0, tau, piT, schedule, ctx.model, ctx.scheme)
    zero = extend_measure_at_zero(u0, tau, piT, ctx.model, ctx.scheme, r_atom=tcfg["r_atom"])
    pairing = duality_pairing(v, measures, schedule)
    oslc = oslc_estimate(transport_coefficient(u0, tau, ctx.model, ctx.scheme), tau, ctx.model)
    for k, s in enumerate(schedule):
        ctx.run.grid(f"duality_{k:03d}.csv", v.at(s), float(s))
        measures[k].to_csv(ctx.run.path(f"measure_{k:03d}.csv"))
    zero.to_csv(ctx.run.path("measure_zero.csv"))
    ctx.run.grid("density_zero.csv", zero.deposit(ctx.spec), 0.0)
    ctx.run.text("pairing.csv", "time,pairing\n" + "".join(f"{t!r},{p!r}\n" for t, p in
                                                           zip(map(float, schedule), map(float, pairing.series))))
    heaviest = float(np.abs(zero.atom_masses).max()) if zero.n_atoms else 0.0
    return {"tau": tau, "schedule": schedule, "pairing": pairing.series, "max_relative_drift": pairing.drift,
            "total_mass": zero.total_mass, "n_atoms": zero.n_atoms, "atom_positions": zero.atom_positions,
            "atom_masses": zero.atom_masses, "heaviest_atom_mass": heaviest, "oslc_estimate": oslc.estimate,
            "oslc_bound": oslc.bound,
            "oslc_passes": oslc.passes, "slice_increments_L1": v.increments}


def cmd_grad(ctx: Context) -> dict:
    u0, uT, w = ctx.data("u0"), ctx.data("uT"), ctx.data("w")
    gcfg = ctx.cfg["grad"]
    window = design_window(uT, ctx.T, ctx.model)
    mu = gradient_measure(u0, uT, ctx.T, ctx.model, ctx.scheme, window)
    eta = ctx.cfg["descent"]["eta"] or 4 * ctx.spec.h
    mu.to_csv(ctx.run.path("gradient_measure.csv"))
    ctx.run.grid("mollified_gradient.csv", mollify_gradient(mu, eta, ctx.spec))
    dirs = [w] + [random_lipschitz(ctx.spec, ctx.rng) for _ in range(gcfg["n_directions"] - 1)]
    delta = float(gcfg["delta"])
    J0 = evaluate_J(u0, uT, ctx.T, ctx.model, ctx.scheme, window)
    rows, worst = [], 0.0
    for k, d in enumerate(dirs):
        primal, dual = directional_derivative(u0, uT, ctx.T, d, ctx.model, ctx.scheme, window)
        fd = (evaluate_J(u0 + delta * d, uT, ctx.T, ctx.model, ctx.scheme, window) - J0) / delta
        rel = abs(primal - dual) / max(abs(primal), abs(dual), 1e-300)
        worst = max(worst, rel)
        rows.append((k, primal, dual, fd, rel))
    ctx.run.text("directions.csv", "direction,primal,dual,finite_difference,relative_gap\n" +
                 "".join(f"{k},{p!r},{d!r},{f!r},{r!r}\n" for k, p, d, f, r in rows))
    return {"J": J0, "eta": eta, "n_atoms": mu.n_atoms, "total_variation": mu.total_variation,
            "max_primal_dual_relative_gap": worst, "delta": delta}


def cmd_invert(ctx: Context) -> dict:
    uT = ctx.data("uT")
    d = dict(ctx.cfg["descent"])
    every = d.pop("snapshot_every")
    state = descend(uT, ctx.T, ctx.model, DescentParams(**d), ctx.scheme, snapshot_every=every)
    state.write_log(ctx.run.path("descent_log.jsonl"))
    ctx.run.json("timings.json", state.timings)
    for it, u in state.snapshots:
        ctx.run.grid(f"iterate_{it:03d}.csv", u)
    final = state.iterate
    reg = regularize(final, ctx.T, ctx.model, ctx.scheme)
    ctx.run.grid("target.csv", uT)
    ctx.run.grid("final.csv", final)
    ctx.run.grid("regularized.csv", reg)
    ctx.run.grid("forward_final.csv", forward_solve(final, ctx.T, ctx.model, ctx.scheme).final, ctx.T)
    ctx.run.text("plot_fig1.py", PLOT_FIG1)
    J_reg = evaluate_J(reg, uT, ctx.T, ctx.model, ctx.scheme)
    return {"iterations": state.iterations, "stop_reason": state.stop_reason, "J_history": state.J_history,
            "gamma_history": state.gamma_history, "J_regularized": J_reg,
            "eps_scheme": calibrate_epsilon(ctx.spec, ctx.scheme).eps if ctx.scheme == "hopf_lax" else None}


def cmd_project(ctx: Context) -> dict:
    uT = ctx.data("uT")
    A = ctx.quadratic_A()
    p = ctx.cfg["projection"]
    res = project_L2(uT, ctx.T, A, tol_qp=p["tol_qp"], change_tol=p["change_tol"], max_sweeps=p["max_sweeps"],
                     omega=p["omega"], method=p["method"])
    env = forward_solve(backward_solve(uT, ctx.T, ctx.model, "hopf_lax").final, ctx.T, ctx.model, "hopf_lax").final
    ctx.run.grid("target.csv", uT)
    ctx.run.grid("projection.csv", res.phi)
    ctx.run.grid("envelope.csv", env)
    ctx.run.grid("obstacle_residual.csv", obstacle_residual(env, uT, ctx.T, A))
    ctx.run.text("plot_fig2.py", PLOT_FIG2)
    before = is_reachable(uT, ctx.T, A, p["tol_reach"])
    after = is_reachable(res.phi, ctx.T, A, p["tol_reach"])
    return {"sweeps": res.sweeps, "residual": res.residual, "certificate": res.certificate, "method": res.method,
            "target_reachable": before.reachable, "projection_reachable": after.reachable,
            "L2_projection_minus_target": norms(res.phi - uT)["L2"],
            "L2_envelope_minus_target": norms(env - uT)["L2"], "note": after.note}


def cmd_check(ctx: Context) -> dict:
    uT = ctx.data("uT")
    rep = is_reachable(uT, ctx.T, ctx.quadratic_A(), ctx.cfg["projection"]["tol_reach"])
    ctx.run.grid("violation.csv", rep.violation)
    return rep.to_dict()


def cmd_cone(ctx: Context) -> dict:
    phi = ctx.data("uT")
    A = ctx.quadratic_A()
    cone = inverse_design_cone(phi, ctx.T, A, tol_reach=ctx.cfg["projection"]["tol_reach"])
    ctx.run.grid("minimal_design.csv", cone.u_tilde)
    ctx.run.grid("contact_mask.csv", GridFunction(ctx.spec, cone.contact_mask.astype(float), extension="constant"))
    ctx.run.text("contact_points.csv", ",".join(f"x{k}" for k in range(ctx.spec.dim)) + "\n" +
                 "".join(",".join(repr(float(c)) for c in p) + "\n" for p in cone.contact_points))
    u0 = ctx.data("u0")
    member = cone.contains(u0)
    fwd = forward_solve(cone.u_tilde, ctx.T, ctx.model, "hopf_lax").final
    # the min-plus search stays on the grid, so only the inner window is exact
    window = inner_window(ctx.spec, ctx.model, ctx.T, cone.u_tilde.lip_bound)
    return {"dilation": cone.dilation, "n_contact_points": int(cone.contact_points.shape[0]),
            "minimal_design_forward_error": norms(fwd - phi, window)["sup"],
            "u0_member": member.member, "u0_reasons": member.reasons, "u0_min_excess": member.min_excess,
            "u0_contact_deviation": member.contact_deviation}


def cmd_selftest(ctx: Context) -> dict:
    s = ctx.cfg["selftest"]
    M1, M2, seed = s["M1"], s["M2"], ctx.cfg["seed"]
    suite = [
        lambda: checks.closed_form(M1, time_limit=math.inf),
        lambda: checks.contraction_pingpong(M1, n_pairs=s["n_pairs"], seed=seed, eps_limit=math.inf),
        lambda: checks.semigroup(M1),
        lambda: checks.gateaux_convergence(M1),
        lambda: checks.semiconcavity_oslc(M1),
        lambda: checks.duality(M1, M2),
        lambda: checks.atom_formation(M1),
        lambda: checks.gradient_consistency(M1, seed=seed),
        lambda: checks.descent(M1, time_limit=math.inf),
        lambda: checks.projection(min(M1, 64), seed=seed),
    ]
    results, timings = [], {}
    for fn in suite:
        t0 = time.perf_counter()
        r = fn()
        timings[r.name] = time.perf_counter() - t0
        r.metrics.pop("wall", None)
        results.append(r)
        print(r.line(), flush=True)
    ctx.run.json("selftest.json", [r.to_dict() for r in results])
    ctx.run.json("timings.json", timings)
    passed = sum(r.passed for r in results)
    return {"passed": passed, "failed": len(results) - passed, "_exit": 0 if passed == len(results) else 1}


COMMANDS = {
    "solve": cmd_solve, "backward": cmd_backward, "envelope": cmd_envelope, "gateaux": cmd_gateaux,
    "transport": cmd_transport, "grad": cmd_grad, "invert": cmd_invert, "project": cmd_project,
    "check": cmd_check, "cone": cmd_cone, "selftest": cmd_selftest,
}


PLOT_FIG1 = '''"""Inverse designs for an unreachable target: target, descent iterate, regularized iterate."""
import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np


def load(path):
    rows = list(csv.reader(open(path)))
    head = {r[0]: r[1] for r in rows[: rows.index(["value"])]}
    vals = np.array([float(r[0]) for r in rows[rows.index(["value"]) + 1:]])
    L, M = float(head["L"]), int(head["M"])
    return np.linspace(-L, L, M), vals


d = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent
fig, ax = plt.subplots(1, 3, figsize=(12, 3.5))
for a, (name, title) in zip(ax, [("target.csv", "target"), ("final.csv", "descent iterate"),
                                 ("regularized.csv", "regularized iterate")]):
    x, v = load(d / name)
    a.plot(x, v)
    if name != "target.csv":
        a.plot(*load(d / "forward_final.csv"), "--", label="forward image")
        a.plot(*load(d / "target.csv"), ":", label="target")
        a.legend()
    a.set_title(title)
fig.tight_layout()
fig.savefig(d / "fig1.png", dpi=150)
'''

PLOT_FIG2 = '''"""L2 projection of a target onto the reachable set, next to the semiconcave envelope."""
import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np


def load(path):
    rows = list(csv.reader(open(path)))
    head = {r[0]: r[1] for r in rows[: rows.index(["value"])]}
    vals = np.array([float(r[0]) for r in rows[rows.index(["value"]) + 1:]])
    L, M = float(head["L"]), int(head["M"])
    return np.linspace(-L, L, M), vals


d = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent
fig, ax = plt.subplots(1, 2, figsize=(9, 3.5))
for a, name in zip(ax, ["projection.csv", "envelope.csv"]):
    a.plot(*load(d / "target.csv"), ":", label="target")
    a.plot(*load(d / name), label=name[:-4])
    a.legend()
fig.tight_layout()
fig.savefig(d / "fig2.png", dpi=150)
'''


# ---------------------------------------------------------------------------


def run(command: str, cfg: dict, out_dir, base_dir=".") -> tuple:
    """Execute one subcommand; returns ``(exit_code, summary)``."""
    out = Path(out_dir)
    r = Run(out, command, cfg)
    ctx = Context(cfg, Path(base_dir), r)
    summary = COMMANDS[command](ctx)
    code = summary.pop("_exit", 0)
    r.json("report.json", summary)
    r.finish()
    return code, summary


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hjdesign", description="Hamilton-Jacobi forward/backward solvers and "
                                                               "inverse design of initial data.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in config.SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", nargs="?" if name == "selftest" else None, help="YAML run configuration")
        sp.add_argument("-o", "--output-dir", help="overrides output_dir from the config")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.config is None:
            cfg = config.resolve(config.DEFAULT_CONFIG)
            base = Path(".")
        else:
            cfg = config.load(args.config)
            base = Path(args.config).resolve().parent
        if args.output_dir:
            cfg["output_dir"] = args.output_dir
        code, summary = run(args.command, cfg, cfg["output_dir"], base)
    except HJError as exc:
        print(f"hjdesign: error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(json.dumps({k: v for k, v in _jsonable(summary).items() if not isinstance(v, list)}, sort_keys=True))
    return code


if __name__ == "__main__":
    sys.exit(main())
