"""Forward and backward viscosity operators ``S_t^+`` and ``S_t^-``.

Three interchangeable schemes are available:

``hopf_lax``
    one-shot minimization ``min_y u0(y) + t H*((x - y)/t)``; exact up to
    the lattice search, x-independent Hamiltonians only.
``semi_lagrangian``
    dynamic-programming steps ``min_q dt H*(x, q) + u^n(x - dt q)``.
``lax_friedrichs``
    monotone finite differences with artificial viscosity.

The backward operator is obtained from the forward one through the
reflection ``S_t^- u_T = -S_t^+[-u_T]`` for the Hamiltonian ``H(x, -p)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from ._golden import golden_min
from .errors import ConfigurationError, InvalidArgumentError, SchemeMismatchError
from .grid import GridFunction, GridSpec, interp_points, norms
from .hamiltonian import CustomHamiltonian, Hamiltonian, QuadraticHamiltonian

SCHEMES = ("hopf_lax", "semi_lagrangian", "lax_friedrichs")
GOLDEN_ITERS = 50
SL_GOLDEN_ITERS = 20  # per step; the O(h^2) interpolation error dominates well before this
LF_CFL = 0.4


@dataclass
class SolveResult:
    """Slices of a solve at the schedule times; ``slices[0]`` is the input.

    For backward solves ``times`` are elapsed backward durations, so
    ``slices[k]`` is ``S_{times[k]}^- u_T``.
    """

    slices: list
    times: np.ndarray
    scheme: str
    dt: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def final(self) -> GridFunction:
        return self.slices[-1]

    def at(self, t: float) -> GridFunction:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-12 * max(1.0, abs(t)):
            raise InvalidArgumentError(f"time {t:g} is not in the schedule")
        return self.slices[k]


def default_scheme(model: Hamiltonian) -> str:
    return "hopf_lax" if model.x_independent else "semi_lagrangian"


def propagation_margin(model: Hamiltonian, t: float, lip: float) -> float:
    """Distance information travels in time ``t`` for data of Lipschitz constant ``lip``."""
    return t * model.p_bound(lip)


def inner_window(spec: GridSpec, model: Hamiltonian, t: float, lip: float):
    """Sub-box unaffected by the truncation of the domain up to time ``t``."""
    return spec.inner_window(propagation_margin(model, t, lip))


def _schedule(t: float, schedule) -> np.ndarray:
    if not (t > 0 and math.isfinite(t)):
        raise InvalidArgumentError(f"time horizon must be positive, got {t}")
    if schedule is None:
        return np.array([0.0, float(t)])
    s = np.unique(np.asarray(schedule, dtype=float))
    if s.size == 0 or s[0] < 0 or s[-1] > t * (1 + 1e-12):
        raise InvalidArgumentError("schedule times must lie in [0, t]")
    s = s[s > 0]
    if s.size == 0 or abs(s[-1] - t) > 1e-12 * t:
        s = np.append(s, t)
    return np.concatenate([[0.0], s])


def _check(u0: GridFunction, model: Hamiltonian, scheme: str):
    if scheme not in SCHEMES:
        raise ConfigurationError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    if u0.spec.dim != model.dim:
        raise InvalidArgumentError("grid and Hamiltonian dimensions differ")
    if scheme == "hopf_lax" and not model.x_independent:
        raise SchemeMismatchError("hopf_lax needs an x-independent Hamiltonian")


def _parabola_min(obj, a, b):
    """Exact minimum on ``[a, b]`` of an objective that is a convex parabola there."""
    fa, fm, fb = obj(a), obj(0.5 * (a + b)), obj(b)
    curv = fa - 2 * fm + fb
    # vertex of the interpolating parabola, in units of the half width from the midpoint
    r = np.divide(fa - fb, 2 * curv, out=np.zeros_like(curv), where=curv > 0)
    s = 0.5 * (a + b) + np.clip(r, -1.0, 1.0) * 0.5 * (b - a)
    fs = obj(s)
    xs = np.stack([a, s, b]) if np.ndim(a) else np.array([a, s, b])
    fv = np.stack([fa, fs, fb])
    k = np.argmin(fv, axis=0)
    return np.take_along_axis(xs, k[None], 0)[0], np.take_along_axis(fv, k[None], 0)[0]


def _line_refine(obj, centre, h, best_val, iters: int = GOLDEN_ITERS, origin=None):
    """Search both cells adjacent to ``centre``; returns improved point and value.

    With ``origin`` given, the objective is taken to be a convex parabola on
    each grid cell (linear interpolant plus quadratic cost), so the cells
    are those around the node nearest ``centre`` and each is solved exactly.
    """
    if origin is not None:
        node = origin + h * np.rint((centre - origin) / h)
        x_l, v_l = _parabola_min(obj, node - h, node)
        x_r, v_r = _parabola_min(obj, node, node + h)
    else:
        x_l, v_l = golden_min(obj, centre - h, centre, iters=iters)
        x_r, v_r = golden_min(obj, centre, centre + h, iters=iters)
    x = np.where(v_l <= v_r, x_l, x_r)
    v = np.minimum(v_l, v_r)
    better = v < best_val
    return np.where(better, x, centre), np.where(better, v, best_val)


# ---------------------------------------------------------------------------
# Hopf-Lax


def _hopf_lax(u0: GridFunction, t: float, model: Hamiltonian, refine: bool):
    spec = u0.spec
    h, dim = spec.h, spec.dim
    radius = t * model.p_bound(u0.lip_bound) + 2 * h
    W = int(min(math.ceil(radius / h), spec.M - 1))
    k = np.arange(-W, W + 1) * h
    origin = np.zeros(dim)
    if dim == 1:
        cost = t * model.legendre(origin, (-k / t)[:, None])
        vals, arg = kernels.minplus_1d(np.ascontiguousarray(u0.values), np.ascontiguousarray(cost), W)
        ystar = (-spec.L + h * arg)[:, None]
    else:
        K1, K2 = np.meshgrid(k, k, indexing="ij")
        cost = t * model.legendre(origin, np.stack([-K1 / t, -K2 / t], -1))
        vals, ai, aj = kernels.minplus_2d(np.ascontiguousarray(u0.values), np.ascontiguousarray(cost), W)
        ystar = np.stack([-spec.L + h * ai, -spec.L + h * aj], -1)
    x = spec.points()
    lattice_vals = vals.copy()
    if refine:
        y = ystar.copy()
        exact = isinstance(model, QuadraticHamiltonian)

        def total(Y):
            return interp_points(u0, Y) + t * model.legendre(origin, (x - Y) / t)

        for _sweep in range(1 if dim == 1 else 2):
            for j in range(dim):
                def along(s, j=j):
                    Y = y.copy()
                    Y[..., j] = np.clip(s, -spec.L, spec.L)
                    return total(Y)

                sj, vals = _line_refine(along, y[..., j], h, vals, origin=-spec.L if exact else None)
                y[..., j] = np.clip(sj, -spec.L, spec.L)
        ystar = y
    disp = float(np.abs(np.linalg.norm(x - ystar, axis=-1)).max())
    return vals, {"window": W, "lattice_gain": float((lattice_vals - vals).max()), "displacement": disp}


# ---------------------------------------------------------------------------
# semi-Lagrangian


class _SLCache:
    """Velocity lattices and running-cost tables, reused across steps."""

    def __init__(self, spec: GridSpec, model: Hamiltonian):
        self.spec, self.model = spec, model
        self.tables = {}

    def get(self, dt: float, Q: float):
        spec = self.spec
        dq = spec.h / (2.0 * dt)
        nq = max(1, int(math.ceil(Q / dq)))
        key = (round(dt, 15), nq)
        if key not in self.tables:
            q1 = np.arange(-nq, nq + 1) * dq
            if spec.dim == 1:
                qs = q1[:, None]
            else:
                A, B = np.meshgrid(q1, q1, indexing="ij")
                qs = np.stack([A.ravel(), B.ravel()], -1)
            x = spec.points().reshape(-1, spec.dim)
            if self.model.x_independent:
                row = dt * self.model.legendre(np.zeros(spec.dim), qs)
                cost = np.tile(row, (x.shape[0], 1))
            else:
                cost = dt * self.model.legendre(x[:, None, :], qs[None, :, :])
            self.tables[key] = (qs, dq, np.ascontiguousarray(cost))
        return self.tables[key]


def _sl_step(u: GridFunction, dt: float, model: Hamiltonian, cache: _SLCache, refine: bool):
    spec = u.spec
    Q = model.p_bound(u.lip_bound + 1.0)
    qs, dq, cost = cache.get(dt, Q)
    disp = np.ascontiguousarray(dt * qs)
    uv = np.ascontiguousarray(u.values)
    if spec.dim == 1:
        vals, arg = kernels.semilag_1d(uv, spec.L, spec.h, np.ascontiguousarray(disp[:, 0]), cost)
    else:
        vals, arg = kernels.semilag_2d(uv, spec.L, spec.h, disp, cost)
    q = qs[arg]
    # closed-form conjugates make refinement cheap; numeric ones keep the lattice optimum
    if refine and not isinstance(model, CustomHamiltonian):
        x = spec.points()

        def total(qv):
            return dt * model.legendre(x, qv) + interp_points(u, x - dt * qv)

        for _sweep in range(1 if spec.dim == 1 else 2):
            for j in range(spec.dim):
                def along(s, j=j):
                    qv = q.copy()
                    qv[..., j] = s
                    return total(qv)

                s, vals = _line_refine(along, q[..., j], dq, vals, SL_GOLDEN_ITERS)
                q[..., j] = s
    return vals, float(dt * np.linalg.norm(q, axis=-1).max())


# ---------------------------------------------------------------------------
# Lax-Friedrichs


def _lf_sigma(u0: GridFunction, t: float, model: Hamiltonian) -> float:
    # gradients can grow at rate C_lip_x, so bound the speed over the whole horizon
    return model.p_bound(u0.lip_bound + 1.0 + model.C_lip_x * t)


def _lf_step(v: np.ndarray, spec: GridSpec, dt: float, sigma: float, model: Hamiltonian, x: np.ndarray):
    h = spec.h
    grad = []
    visc = np.zeros_like(v)
    for ax in range(spec.dim):
        lo = np.take(v, [0], axis=ax)
        lo2 = np.take(v, [1], axis=ax)
        hi = np.take(v, [-1], axis=ax)
        hi2 = np.take(v, [-2], axis=ax)
        # ghost nodes by linear extrapolation
        pad = np.concatenate([2 * lo - lo2, v, 2 * hi - hi2], axis=ax)
        n = v.shape[ax]
        plus = np.take(pad, np.arange(2, n + 2), axis=ax)
        minus = np.take(pad, np.arange(0, n), axis=ax)
        grad.append((plus - minus) / (2 * h))
        visc += (plus - 2 * v + minus) / h
    p = np.stack(grad, axis=-1)
    return v - dt * model.H(x, p) + dt * 0.5 * sigma * visc


# ---------------------------------------------------------------------------
# public drivers


def forward_solve(u0: GridFunction, t: float, model: Hamiltonian, scheme: str = "hopf_lax",
                  schedule=None, *, dt: float | None = None, refine: bool = True) -> SolveResult:
    """Approximate ``S_s^+ u0`` at every schedule time ``s`` in ``(0, t]``.

    Parameters
    ----------
    u0 : GridFunction
        Initial datum.
    t : float
        Horizon; always included in the schedule.
    model : Hamiltonian
    scheme : {"hopf_lax", "semi_lagrangian", "lax_friedrichs"}
    schedule : sequence of float, optional
        Output times; defaults to ``[t]``.
    dt : float, optional
        Time step for the marching schemes.  Defaults to ``h`` for
        semi-Lagrangian and to the CFL limit ``0.4 h / (dim sigma)`` for
        Lax-Friedrichs.
    refine : bool
        Continuous refinement of the lattice minimizers.

    Raises
    ------
    SchemeMismatchError
        ``hopf_lax`` with an x-dependent Hamiltonian.
    ConfigurationError
        Unknown scheme or a Lax-Friedrichs step above the CFL limit.
    """
    _check(u0, model, scheme)
    times = _schedule(t, schedule)
    spec = u0.spec
    slices = [u0]
    diag = {"lip": [u0.lip_bound]}

    if scheme == "hopf_lax":
        diag.update(window=[], displacement=[])
        for s in times[1:]:
            vals, info = _hopf_lax(u0, float(s), model, refine)
            slices.append(GridFunction(spec, vals, extension=u0.extension))
            diag["window"].append(info["window"])
            diag["displacement"].append(info["displacement"])
            diag["lip"].append(slices[-1].lip_bound)
        return SolveResult(slices, times, scheme, 0.0, diag)

    if scheme == "semi_lagrangian":
        step = spec.h if dt is None else float(dt)
        if step <= 0:
            raise ConfigurationError("time step must be positive")
        cache = _SLCache(spec, model)
        diag.update(displacement=[], steps=[])
        u = u0
        for a, b in zip(times[:-1], times[1:]):
            n = max(1, int(math.ceil((b - a) / step - 1e-9)))
            ddt = (b - a) / n
            for _ in range(n):
                vals, d = _sl_step(u, ddt, model, cache, refine)
                u = GridFunction(spec, vals, extension=u0.extension)
                diag["displacement"].append(d)
            diag["steps"].append(n)
            diag["lip"].append(u.lip_bound)
            slices.append(u)
        return SolveResult(slices, times, scheme, step, diag)

    sigma = _lf_sigma(u0, t, model)
    limit = LF_CFL * spec.h / (spec.dim * sigma)
    step = limit if dt is None else float(dt)
    if step <= 0 or step > spec.h / (spec.dim * sigma) * (1 + 1e-12):
        raise ConfigurationError(
            f"time step {step:g} violates the CFL bound h/(dim*sigma) = {spec.h / (spec.dim * sigma):g}"
        )
    x = spec.points()
    v = np.array(u0.values)
    diag.update(cfl=[step * spec.dim * sigma / spec.h], sigma=sigma, steps=[])
    for a, b in zip(times[:-1], times[1:]):
        n = max(1, int(math.ceil((b - a) / step - 1e-9)))
        ddt = (b - a) / n
        for _ in range(n):
            v = _lf_step(v, spec, ddt, sigma, model, x)
        diag["steps"].append(n)
        sl = GridFunction(spec, v, extension=u0.extension)
        diag["lip"].append(sl.lip_bound)
        slices.append(sl)
    return SolveResult(slices, times, scheme, step, diag)


def backward_solve(uT: GridFunction, t: float, model: Hamiltonian, scheme: str = "hopf_lax",
                   schedule=None, *, dt: float | None = None, refine: bool = True) -> SolveResult:
    """Approximate ``S_s^- u_T``: the sup formula, by reflection of the forward solver."""
    res = forward_solve(-uT, t, model.reflected(), scheme, schedule, dt=dt, refine=refine)
    res.slices = [uT] + [-s for s in res.slices[1:]]
    return res


def semiconcave_envelope(uT: GridFunction, T: float, model: Hamiltonian, scheme: str | None = None,
                         **kw) -> GridFunction:
    """``S_T^+(S_T^- u_T)``, the smallest reachable function above ``u_T``."""
    scheme = scheme or default_scheme(model)
    back = backward_solve(uT, T, model, scheme, **kw).final
    return forward_solve(back, T, model, scheme, **kw).final


def regularize_backward(u0: GridFunction, T: float, model: Hamiltonian, scheme: str | None = None,
                        **kw) -> GridFunction:
    """``S_T^-(S_T^+ u0)``: a semiconvex datum with the same forward image."""
    scheme = scheme or default_scheme(model)
    fwd = forward_solve(u0, T, model, scheme, **kw).final
    return backward_solve(fwd, T, model, scheme, **kw).final


def semigroup_defect(u0: GridFunction, t: float, model: Hamiltonian, scheme: str = "hopf_lax",
                     window=None, **kw) -> float:
    """Sup over the inner window of ``S_{t/2}^+ S_{t/2}^+ u0 - S_t^+ u0``."""
    one = forward_solve(u0, t, model, scheme, **kw).final
    half = forward_solve(u0, t / 2, model, scheme, **kw).final
    two = forward_solve(half, t / 2, model, scheme, **kw).final
    if window is None:
        window = inner_window(u0.spec, model, t, u0.lip_bound)
    return norms(two - one, window)["sup"]


def scheme_step(spec: GridSpec, scheme: str, model: Hamiltonian | None = None, u0: GridFunction | None = None,
                t: float = 1.0) -> float:
    """The default time step a scheme would use (0 for the one-shot Hopf-Lax formula)."""
    if scheme == "hopf_lax":
        return 0.0
    if scheme == "semi_lagrangian":
        return spec.h
    sigma = _lf_sigma(u0, t, model)
    return LF_CFL * spec.h / (spec.dim * sigma)


# ---------------------------------------------------------------------------
# discretization tolerance

EPS_C_MIN = 0.25
CALIBRATION_T = 0.5


@dataclass
class SchemeTolerance:
    """``eps_scheme = C (h + dt)`` with ``C`` fitted on closed-form solutions."""

    scheme: str
    C: float
    h: float
    dt: float
    errors: dict

    @property
    def eps(self) -> float:
        return self.C * (self.h + self.dt)

    def to_dict(self) -> dict:
        return {"scheme": self.scheme, "C": self.C, "h": self.h, "dt": self.dt, "eps_scheme": self.eps,
                "calibration_errors": dict(self.errors)}


def _closed_forms(t: float):
    # H(p) = |p|^2: linear data translate down, |x| opens a parabolic cap of width 2t
    a = 0.5

    def linear(p):
        return a * p[..., 0]

    def linear_t(p):
        return a * p[..., 0] - t * a * a

    def cone(p):
        return np.sqrt(np.sum(p * p, axis=-1))

    def cone_t(p):
        r = cone(p)
        return np.where(r <= 2 * t, r * r / (4 * t), r - t)

    return {"linear": (linear, linear_t, a), "abs-kink": (cone, cone_t, 1.0)}


_CALIBRATION_CACHE: dict = {}


def calibrate_epsilon(spec: GridSpec, scheme: str = "hopf_lax", *, c_min: float = EPS_C_MIN) -> SchemeTolerance:
    """Fit ``C`` in ``eps_scheme = C (h + dt)`` for ``scheme`` on ``spec``.

    Both fixtures are solved with ``H(p) = |p|^2`` up to ``t = 0.5`` and
    compared with their closed forms in sup norm over the inner window;
    ``C`` is twice the worst error per unit ``h + dt``, floored at
    ``c_min`` since schemes that are exact on linear data would
    otherwise report a zero tolerance.  Results are cached per grid and
    scheme.
    """

    key = (spec.dim, spec.L, spec.M, scheme, c_min)
    if key in _CALIBRATION_CACHE:
        return _CALIBRATION_CACHE[key]
    model = QuadraticHamiltonian(2.0 * np.eye(spec.dim))
    t = CALIBRATION_T
    errors = {}
    dt = 0.0
    for name, (f0, ft, lip) in _closed_forms(t).items():
        u0 = spec.sample(f0)
        res = forward_solve(u0, t, model, scheme)
        dt = res.dt
        exact = spec.sample(ft)
        errors[name] = norms(res.final - exact, inner_window(spec, model, t, lip))["sup"]
    C = max(c_min, 2.0 * max(errors.values()) / (spec.h + dt))
    tol = SchemeTolerance(scheme, float(C), spec.h, float(dt), errors)
    _CALIBRATION_CACHE[key] = tol
    return tol


def eps_scheme(spec: GridSpec, scheme: str = "hopf_lax") -> float:
    """Calibrated discretization tolerance ``C (h + dt)``."""
    return calibrate_epsilon(spec, scheme).eps
