"""Property checks shared by the ``selftest`` subcommand and the test suite.

Each check builds its own fixtures, evaluates one property against
analytic oracles or invariants and returns a :class:`CheckResult`.  Grid
sizes and tolerances are arguments so the same code runs quickly in the
self-test and at full resolution in the acceptance tests.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .characteristics import convergence_report
from .fixtures import FIXTURES, fixture, random_lipschitz
from .grid import GridFunction, GridSpec, norms, second_differences
from .hamiltonian import GaussianWell, QuadraticHamiltonian, ShiftedQuadraticHamiltonian
from .inverse import (
    DescentParams,
    descend,
    design_window,
    directional_derivative,
    evaluate_J,
)
from .reachability import is_reachable, project_L2
from .solvers import (
    backward_solve,
    calibrate_epsilon,
    forward_solve,
    inner_window,
    semiconcave_envelope,
    semigroup_defect,
)
from .transport import (
    backward_reversible,
    duality_pairing,
    extend_measure_at_zero,
    forward_duality_solution,
    oslc_estimate,
    transport_coefficient,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), "metrics": self.metrics, "detail": self.detail}


def laplace_model(dim: int) -> QuadraticHamiltonian:
    """``H(p) = |p|^2``, written as ``<A p, p> / 2`` with ``A = 2 I``."""
    return QuadraticHamiltonian(2.0 * np.eye(dim))


def cone_solution(t: float):
    """Closed-form ``S_t^+ |x|`` for ``H(p) = |p|^2``."""
    def f(p):
        r = np.sqrt(np.sum(p * p, axis=-1))
        return np.where(r <= 2 * t, r * r / (4 * t), r - t)

    return f


def indicator(spec: GridSpec, halfwidth: float) -> GridFunction:
    """``1`` on the closed box ``|x|_inf <= halfwidth``."""
    return spec.sample(lambda p: (np.abs(p).max(axis=-1) <= halfwidth + 1e-12).astype(float), extension="constant")


# ---------------------------------------------------------------------------


def closed_form(M: int = 1025, T: float = 0.5, time_limit: float = 5.0) -> CheckResult:
    """All three schemes against the closed form for ``u0 = |x|``."""
    spec = GridSpec(1, 2.0, M)
    model = laplace_model(1)
    u0 = fixture("abs-kink", spec)
    exact = spec.sample(cone_solution(T))
    window = inner_window(spec, model, T, 1.0)
    t0 = time.perf_counter()
    errs, tols = {}, {}
    for scheme in ("hopf_lax", "semi_lagrangian", "lax_friedrichs"):
        res = forward_solve(u0, T, model, scheme)
        errs[scheme] = norms(res.final - exact, window)["sup"]
        tols[scheme] = 2 * spec.h if scheme == "hopf_lax" else 10 * (spec.h + res.dt)
    wall = time.perf_counter() - t0
    ok = all(errs[s] <= tols[s] for s in errs) and wall < time_limit
    detail = ", ".join(f"{s} {errs[s]:.2e} <= {tols[s]:.2e}" for s in errs) + f"; under {time_limit:g} s"
    return CheckResult("closed-form accuracy", ok, {"errors": errs, "tolerances": tols, "wall": wall}, detail)


def contraction_pingpong(M: int = 1025, T: float = 0.5, n_pairs: int = 20, seed: int = 0,
                         eps_limit: float = 5e-3) -> CheckResult:
    """``S_T^+`` is 1-Lipschitz in sup norm and ``S^+ S^- S^+ = S^+``, up to ``eps_scheme``."""
    spec = GridSpec(1, 2.0, M)
    model = laplace_model(1)
    eps = calibrate_epsilon(spec, "hopf_lax").eps
    rng = np.random.default_rng(seed)
    worst_c = worst_p = -np.inf
    for _ in range(n_pairs):
        u0, u1 = random_lipschitz(spec, rng), random_lipschitz(spec, rng)
        window = inner_window(spec, model, T, max(u0.lip_bound, u1.lip_bound))
        a = forward_solve(u0, T, model).final
        b = forward_solve(u1, T, model).final
        worst_c = max(worst_c, norms(a - b, window)["sup"] - (u0 - u1).sup())
        pp = forward_solve(backward_solve(a, T, model).final, T, model).final
        worst_p = max(worst_p, norms(pp - a, window)["sup"])
    ok = worst_c <= eps and worst_p <= eps < eps_limit
    detail = f"contraction excess {worst_c:.2e}, ping-pong {worst_p:.2e}, eps_scheme {eps:.2e} < {eps_limit:g}"
    return CheckResult("contraction and ping-pong", ok,
                       {"contraction_excess": worst_c, "pingpong": worst_p, "eps_scheme": eps}, detail)


def semigroup(M: int = 1025, T: float = 0.5) -> CheckResult:
    """Two half steps against one full step on every fixture."""

    spec = GridSpec(1, 2.0, M)
    model = laplace_model(1)
    eps = calibrate_epsilon(spec, "hopf_lax").eps
    defects = {name: semigroup_defect(fixture(name, spec), T, model) for name in FIXTURES}
    worst = max(defects.values())
    return CheckResult("semigroup defect", worst <= eps, {"defects": defects, "eps_scheme": eps},
                       f"max defect {worst:.2e} <= eps_scheme {eps:.2e}")


def gateaux_convergence(M: int = 1025, T: float = 0.5, deltas=(1e-1, 3e-2, 1e-2, 3e-3, 1e-3),
                        floor_factor: float = 3.0) -> CheckResult:
    """Difference quotients approach ``w o Phi`` monotonically down to the scheme floor."""
    spec = GridSpec(1, 2.0, M)
    model = laplace_model(1)
    w = fixture("gaussian-bump", spec)
    tables, ok = {}, True
    for name in ("abs-kink", "linear"):
        tab = convergence_report(fixture(name, spec), w, T, model, deltas)
        good = tab.monotone and tab.distances[-1] <= floor_factor * tab.floor
        ok &= good
        tables[name] = {"deltas": tab.deltas, "L1": tab.distances, "floor": tab.floor, "monotone": tab.monotone}
    detail = "; ".join(f"{k} final {v['L1'][-1]:.2e} vs {floor_factor:g} x floor {v['floor']:.2e}, "
                       f"monotone {v['monotone']}" for k, v in tables.items())
    return CheckResult("gateaux convergence", bool(ok), tables, detail)


def semiconcavity_oslc(M: int = 1025, times=(0.1, 0.25, 0.5), abs_tol: float = 1e-8) -> CheckResult:
    """Second differences and the OSLC ratio bounded by ``C / t`` with one calibrated ``C``.

    ``C`` is the largest of ``t max D^2 u / h^2`` and ``t * oslc`` on the
    ``|x|`` fixture; the bound is then asserted on every fixture.
    """

    spec = GridSpec(1, 2.0, M)
    model = laplace_model(1)
    h2 = spec.h**2
    sols = {(name, t): forward_solve(fixture(name, spec), t, model).final for name in FIXTURES for t in times}

    def second(u):
        return float(np.nanmax(second_differences(u, (1,))))

    def oslc(u, t, C):
        return oslc_estimate(transport_coefficient(u, t, model, solution=u), t, model, C=C)

    C = 0.0
    for t in times:
        u = sols[("abs-kink", t)]
        C = max(C, t * second(u) / h2, t * oslc(u, t, 1.0).estimate)
    worst_sc, worst_os, ok = -np.inf, -np.inf, True
    for (name, t), u in sols.items():
        sc = second(u) - (C / t) * h2
        rep = oslc(u, t, C)
        worst_sc = max(worst_sc, sc)
        worst_os = max(worst_os, rep.estimate - rep.bound)
        ok &= sc <= abs_tol and rep.passes
    detail = f"C = {C:.6f}; max D2 - (C/t)h^2 = {worst_sc:.2e}; max oslc - C/t = {worst_os:.2e}"
    return CheckResult("semiconcavity and OSLC", bool(ok), {"C": C, "semiconcavity_excess": worst_sc,
                                                           "oslc_excess": worst_os}, detail)


def _pairing_case(u0, w, piT, tau, model, schedule):
    v = forward_duality_solution(u0, w, schedule, model)
    measures = backward_reversible(u0, tau, piT, schedule, model)
    return duality_pairing(v, measures, schedule)


def duality(M1: int = 1025, M2: int = 129, tau: float = 0.25, tol: float = 1e-2,
            schedule=(0.0625, 0.125, 0.1875, 0.25)) -> CheckResult:
    """``int v(t) d pi(t)`` constant in time on 1D fixtures and one 2D shifted-quadratic case."""
    drifts = {}
    spec = GridSpec(1, 2.0, M1)
    model = laplace_model(1)
    w = spec.sample(lambda p: np.cos(2 * p[..., 0]) + 0.5 * p[..., 0])
    piT = indicator(spec, 1.0)
    for name in ("abs-kink", "neg-abs", "gaussian-bump"):
        drifts[name] = _pairing_case(fixture(name, spec), w, piT, tau, model, schedule).drift
    spec2 = GridSpec(2, 2.0, M2)
    model2 = ShiftedQuadraticHamiltonian(2, GaussianWell(0.5, 0.5, (0.0, 0.0)), L=2.0)
    w2 = spec2.sample(lambda p: np.cos(2 * p[..., 0]) + np.sin(p[..., 1]) + 2.0)
    drifts["2d-shifted-gaussian-bump"] = _pairing_case(fixture("gaussian-bump", spec2), w2, indicator(spec2, 0.8),
                                                       tau, model2, schedule).drift
    worst = max(drifts.values())
    return CheckResult("duality pairing", worst <= tol, {"drifts": drifts},
                       f"max relative drift {worst:.2e} <= {tol:g}")


def atom_formation(M: int = 1025, tau: float = 0.25, halfwidth: float = 1.0, rel_tol: float = 2e-2) -> CheckResult:
    """The fan of ``|x|`` collapses onto a single atom of mass ``4 tau`` at the origin."""
    spec = GridSpec(1, 2.0, M)
    model = laplace_model(1)
    mu = extend_measure_at_zero(fixture("abs-kink", spec), tau, indicator(spec, halfwidth), model)
    n = mu.n_atoms
    pos = float(np.abs(mu.atom_positions).max()) if n else np.inf
    mass = float(mu.atom_masses.sum()) if n else 0.0
    ok = n == 1 and pos <= 2 * spec.h and abs(mass - 4 * tau) <= rel_tol * 4 * tau
    detail = f"{n} atom(s), |position| {pos:.2e} <= 2h = {2 * spec.h:.2e}, mass {mass:.4f} vs {4 * tau:g}"
    return CheckResult("atom formation", ok, {"n_atoms": n, "position": pos, "mass": mass}, detail)


def gradient_consistency(M: int = 1025, T: float = 0.5, n_dirs: int = 5, delta: float = 1e-3, rel_tol: float = 1e-2,
                         seed: int = 0) -> CheckResult:
    """Primal and dual directional derivatives agree; a forward difference of ``J`` matches them.

    The difference quotient may deviate by its curvature term
    ``delta |w|_inf^2 |window|`` plus the discretization term
    ``2 eps_scheme |residual|_L1 (|w|_inf + Lip w)``, the foot map being
    accurate to ``eps_scheme``.
    """
    spec = GridSpec(1, 2.0, M)
    model = laplace_model(1)
    uT = fixture("two-bump", spec)
    window = design_window(uT, T, model)
    vol = float(np.prod([hi - lo for lo, hi in window]))
    eps = calibrate_epsilon(spec, "hopf_lax").eps
    rng = np.random.default_rng(seed)
    rel, fd_gap, ok = [], [], True
    for k in range(n_dirs):
        u0 = fixture(("gaussian-bump", "abs-kink", "neg-abs", "zero", "linear")[k % 5], spec)
        w = random_lipschitz(spec, rng)
        primal, dual = directional_derivative(u0, uT, T, w, model)
        r = abs(primal - dual) / max(abs(primal), abs(dual), 1e-300)
        J0 = evaluate_J(u0, uT, T, model, window=window)
        J1 = evaluate_J(u0 + delta * w, uT, T, model, window=window)
        fd = (J1 - J0) / delta
        res_l1 = np.sqrt(J0 * vol)  # Cauchy-Schwarz bound on the residual's L1 norm
        tol = delta * w.sup() ** 2 * vol + 2 * eps * res_l1 * (w.sup() + w.lip_bound)
        rel.append(r)
        fd_gap.append(abs(fd - dual) / tol)
        ok &= r <= rel_tol and abs(fd - dual) <= tol
    detail = f"max primal/dual rel gap {max(rel):.2e} <= {rel_tol:g}; max FD gap / tol {max(fd_gap):.2f} <= 1"
    return CheckResult("gradient correctness", bool(ok), {"rel_gaps": rel, "fd_gap_over_tol": fd_gap}, detail)


def descent(M: int = 1025, T: float = 0.5, time_limit: float = 120.0) -> CheckResult:
    """Armijo descent on the two-bump target; zero iterations on a reachable one."""
    spec = GridSpec(1, 2.0, M)
    model = laplace_model(1)
    eps = calibrate_epsilon(spec, "hopf_lax").eps
    t0 = time.perf_counter()
    state = descend(fixture("two-bump", spec), T, model, DescentParams())
    J = state.J_history
    strictly = all(b < a for a, b in zip(J[:-1], J[1:]))
    reach_T = forward_solve(fixture("gaussian-bump", spec), T, model).final
    rstate = descend(reach_T, T, model, DescentParams())
    wall = time.perf_counter() - t0
    ok = (state.iterations >= 3 and strictly and J[-1] <= 0.9 * J[0] and rstate.iterations == 0
          and rstate.J_history[0] <= eps**2 and wall < time_limit)
    detail = (f"{state.iterations} steps, J {J[0]:.3e} -> {J[-1]:.3e} (ratio {J[-1] / J[0]:.3f}); reachable J0 "
              f"{rstate.J_history[0]:.1e} <= eps^2 {eps**2:.1e} with {rstate.iterations} steps; under {time_limit:g} s")
    return CheckResult("descent behaviour", bool(ok), {"J": J, "reachable_J0": rstate.J_history[0],
                                                      "reachable_iterations": rstate.iterations, "wall": wall}, detail)


def projection(M: int = 64, T: float = 0.5, n_psi: int = 10, seed: int = 0, vi_tol: float = 1e-6,
               tol_qp: float = 1e-8) -> CheckResult:
    """Fixed points, the variational inequality and the envelope comparison for ``project_L2``.

    The envelope is computed twice: with the lattice-only min-plus search,
    for which ``S^+ S^- u >= u`` holds exactly on the grid, and with the
    default refinement, whose interpolation of the semiconvex ``S^- u``
    may undershoot by at most ``h^2 |A^{-1}| / (8 T)``.
    """
    spec = GridSpec(1, 2.0, M)
    model = laplace_model(1)
    A = model.A
    interp_slack = spec.h**2 * float(np.linalg.norm(np.linalg.inv(A), 2)) / (8 * T)
    rng = np.random.default_rng(seed)
    q = spec.cell_volume
    metrics, ok = {}, True
    reach = forward_solve(fixture("gaussian-bump", spec), T, model).final
    fixed = (project_L2(reach, T, A, tol_qp=tol_qp).phi - reach).sup()
    metrics["fixed_point_shift"] = fixed
    ok &= fixed <= tol_qp
    worst_vi = worst_lat = worst_ref = worst_gap = -np.inf
    for name in ("two-bump", "abs-kink", "gaussian-bump"):
        uT = fixture(name, spec)
        if is_reachable(uT, T, A).reachable:
            continue
        phi = project_L2(uT, T, A, tol_qp=tol_qp).phi
        for _ in range(n_psi):
            psi = forward_solve(random_lipschitz(spec, rng, lip=2.0), T, model).final
            worst_vi = max(worst_vi, float(q * np.sum((uT.values - phi.values) * (psi.values - phi.values))))
        d_phi = float(np.sqrt(q * np.sum((phi.values - uT.values) ** 2)))
        for refine in (False, True):
            env = semiconcave_envelope(uT, T, model, "hopf_lax", refine=refine)
            below = float((uT.values - env.values).max())
            if refine:
                worst_ref = max(worst_ref, below)
            else:
                worst_lat = max(worst_lat, below)
            d_env = float(np.sqrt(q * np.sum((env.values - uT.values) ** 2)))
            worst_gap = max(worst_gap, d_phi - d_env)
    metrics.update(vi=worst_vi, lattice_envelope_below=worst_lat, refined_envelope_below=worst_ref,
                   interpolation_slack=interp_slack, distance_gap=worst_gap)
    ok &= worst_vi <= vi_tol and worst_lat <= 1e-12 and worst_ref <= interp_slack + 1e-10 and worst_gap <= tol_qp
    detail = (f"fixed-point shift {fixed:.1e}; max VI {worst_vi:.1e} <= {vi_tol:g}; envelope below u_T by "
              f"{max(worst_lat, 0):.1e} (lattice), {max(worst_ref, 0):.1e} <= {interp_slack:.1e} (refined); "
              f"|phi*-u_T| - |env-u_T| = {worst_gap:.2e} <= {tol_qp:g}")
    return CheckResult("projection", bool(ok), metrics, detail)
