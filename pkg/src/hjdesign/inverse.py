"""Inverse design: minimize ``J_T(u0) = ||S_T^+ u0 - u_T||^2`` over initial data.

The derivative of ``J_T`` in the direction ``w`` is
``2 int (S_T^+ u0 - u_T) w(Phi(x)) dx`` (primal form) or, after the change
of variables ``y = Phi(x)``, ``2 int w d pi0`` with ``pi0`` the pushforward
of the residual (dual form).  The dual form exposes the gradient as a
measure, which may carry atoms; descent uses a mollified version of it.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .characteristics import gateaux_derivative, phi_map
from .errors import HypothesisError, InvalidArgumentError, StallError
from .grid import GridFunction, GridSpec, quadrature_weights
from .hamiltonian import Hamiltonian
from .solvers import (
    backward_solve,
    default_scheme,
    eps_scheme,
    forward_solve,
    inner_window,
    regularize_backward,
)
from .transport import DiscreteMeasure, extend_measure_at_zero


def require_zero_C0(model: Hamiltonian) -> None:
    if model.C0 != 0:
        raise HypothesisError(
            f"inverse design needs H(x, 0) <= 0 <= H, i.e. C0 = 0; this Hamiltonian has C0 = {model.C0:g}"
        )


def design_window(uT: GridFunction, T: float, model: Hamiltonian):
    """Inner window used for every misfit integral of one design problem."""
    return inner_window(uT.spec, model, T, uT.lip_bound)


@dataclass
class Misfit:
    """Forward image, residual and quadrature weights of one evaluation."""

    J: float
    forward: GridFunction
    residual: np.ndarray
    weights: np.ndarray


def misfit(u0: GridFunction, uT: GridFunction, T: float, model: Hamiltonian, scheme: str | None = None,
           window=None) -> Misfit:
    require_zero_C0(model)
    if u0.spec != uT.spec:
        raise InvalidArgumentError("datum and target live on different grids")
    scheme = scheme or default_scheme(model)
    window = window if window is not None else design_window(uT, T, model)
    fwd = forward_solve(u0, T, model, scheme).final
    q = quadrature_weights(u0.spec, window)
    res = fwd.values - uT.values
    return Misfit(float(np.sum(q * res * res)), fwd, res, q)


def evaluate_J(u0: GridFunction, uT: GridFunction, T: float, model: Hamiltonian, scheme: str | None = None,
               window=None) -> float:
    """``||S_T^+ u0 - u_T||^2`` in L2 over the design window."""
    return misfit(u0, uT, T, model, scheme, window).J


def _residual_density(m: Misfit, spec: GridSpec) -> GridFunction:
    # density whose particle weights (density * h^dim) are the quadrature-weighted residual
    return GridFunction(spec, m.residual * m.weights / spec.cell_volume)


def gradient_measure(u0: GridFunction, uT: GridFunction, T: float, model: Hamiltonian, scheme: str | None = None,
                     window=None, *, m: Misfit | None = None) -> DiscreteMeasure:
    """``DJ_T(u0) = 2 Phi_# ((S_T^+ u0 - u_T) dx)`` as a discrete measure."""
    require_zero_C0(model)
    m = m or misfit(u0, uT, T, model, scheme, window)
    return extend_measure_at_zero(u0, T, _residual_density(m, u0.spec), model, scheme).scaled(2.0)


def directional_derivative(u0: GridFunction, uT: GridFunction, T: float, w: GridFunction, model: Hamiltonian,
                           scheme: str | None = None, window=None) -> tuple:
    """``(primal, dual)`` evaluations of ``dJ_T(u0)[w]``.

    The primal one integrates ``2 (S_T^+ u0 - u_T) w o Phi``; the dual one
    pairs ``w`` with the gradient measure.
    """
    m = misfit(u0, uT, T, model, scheme, window)
    phi = phi_map(u0, T, model, scheme, solution=m.forward)
    dw = gateaux_derivative(u0, w, T, model, scheme, phi=phi)
    primal = 2.0 * float(np.sum(m.weights * m.residual * dw.values))
    dual = gradient_measure(u0, uT, T, model, scheme, window, m=m).pair(w)
    return primal, dual


def mollify_gradient(measure: DiscreteMeasure, eta: float, spec: GridSpec) -> GridFunction:
    """Deposit the measure through the normalized tent kernel of half width ``eta``.

    Each particle's kernel weights are renormalized on the grid, so the
    output density integrates (with weight ``h^dim``) to the total mass.
    """
    h = spec.h
    if eta < h * (1 - 1e-12):
        raise InvalidArgumentError(f"eta = {eta:g} is below the grid spacing {h:g}")
    pos, wts = measure.all_points()
    out = np.zeros(spec.shape)
    if pos.shape[0] == 0:
        return GridFunction(spec, out)
    K = int(np.ceil(eta / h))
    offs = np.arange(-K, K + 1)
    base = np.rint((pos + spec.L) / h).astype(np.intp)  # nearest node
    if spec.dim == 1:
        nodes = base[:, :1] + offs[None, :]
        ok = (nodes >= 0) & (nodes < spec.M)
        d = (-spec.L + h * nodes) - pos[:, :1]
        ker = np.maximum(0.0, 1.0 - np.abs(d) / eta) * ok
        norm = ker.sum(1, keepdims=True)
        ker = np.divide(ker, norm, out=np.zeros_like(ker), where=norm > 0)
        np.add.at(out, np.clip(nodes, 0, spec.M - 1)[ok], (wts[:, None] * ker)[ok])
    else:
        oi, oj = np.meshgrid(offs, offs, indexing="ij")
        ni = base[:, 0, None] + oi.ravel()[None, :]
        nj = base[:, 1, None] + oj.ravel()[None, :]
        ok = (ni >= 0) & (ni < spec.M) & (nj >= 0) & (nj < spec.M)
        di = (-spec.L + h * ni) - pos[:, :1]
        dj = (-spec.L + h * nj) - pos[:, 1:2]
        ker = np.maximum(0.0, 1.0 - np.abs(di) / eta) * np.maximum(0.0, 1.0 - np.abs(dj) / eta) * ok
        norm = ker.sum(1, keepdims=True)
        ker = np.divide(ker, norm, out=np.zeros_like(ker), where=norm > 0)
        np.add.at(out, (np.clip(ni, 0, spec.M - 1)[ok], np.clip(nj, 0, spec.M - 1)[ok]), (wts[:, None] * ker)[ok])
    return GridFunction(spec, out / spec.cell_volume)


def descent_direction(measure: DiscreteMeasure, eta: float, spec: GridSpec) -> tuple:
    """Mollified gradient with the descent check; widens ``eta`` once before giving up.

    Returns ``(v_hat, eta_used, slope)`` with ``slope = dJ[v_hat] > 0``.
    """
    for width in (eta, 2 * eta):
        v = mollify_gradient(measure, width, spec)
        slope = measure.pair(v)
        if slope > 0:
            return v, width, slope
    raise StallError("mollified gradient is not a descent direction even after widening the kernel")


@dataclass
class DescentParams:
    max_iter: int = 20
    gamma0: float = 0.5
    armijo: float = 1e-4
    gamma_floor: float = 1e-6
    eta: float | None = None  # defaults to 4h
    tol: float = 1e-4  # relative to J of the first iterate
    abs_tol: float | None = None  # defaults to eps_scheme^2
    grad_tol: float = 0.0
    init: str = "backward"


@dataclass
class DescentState:
    iterate: GridFunction
    J_history: list = field(default_factory=list)
    gamma_history: list = field(default_factory=list)
    grad_measure: DiscreteMeasure | None = None
    direction: GridFunction | None = None
    stop_reason: str = ""
    log: list = field(default_factory=list)
    timings: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.gamma_history)

    def write_log(self, path) -> None:
        with open(path, "w") as fh:
            fh.writelines(json.dumps(rec, sort_keys=True) + "\n" for rec in self.log)


def initial_iterate(uT: GridFunction, T: float, model: Hamiltonian, scheme: str, how: str) -> GridFunction:
    if how == "backward":
        return backward_solve(uT, T, model, scheme).final
    if how == "zero":
        return uT.with_values(np.zeros(uT.spec.shape))
    if how == "clipped":
        return uT.with_values(np.maximum(uT.values, 0.0))
    raise InvalidArgumentError(f"unknown initialization {how!r}")


def descend(uT: GridFunction, T: float, model: Hamiltonian, params: DescentParams | None = None,
            scheme: str | None = None, *, snapshot_every: int = 0) -> DescentState:
    """Mollified gradient descent with Armijo backtracking.

    ``u^{n+1} = u^n - gamma_n v_n / |v_n|_inf`` where ``v_n`` is the
    mollified gradient measure.  Stops when ``J`` falls below
    ``tol * J(u^0)`` or ``abs_tol``, when the gradient's total variation
    falls below ``grad_tol``, after ``max_iter`` accepted steps, or when
    the line search stalls.
    """
    require_zero_C0(model)
    p = params or DescentParams()
    scheme = scheme or default_scheme(model)
    spec = uT.spec
    eta = p.eta if p.eta is not None else 4 * spec.h
    window = design_window(uT, T, model)
    u = initial_iterate(uT, T, model, scheme, p.init)
    t_start = time.perf_counter()
    m = misfit(u, uT, T, model, scheme, window)
    state = DescentState(u, [m.J])
    state.log.append({"iter": 0, "J": m.J, "gamma": None, "grad_tv": None})
    state.timings.append({"iter": 0, "wall": time.perf_counter() - t_start})
    J0 = m.J
    abs_tol = eps_scheme(spec, scheme) ** 2 if p.abs_tol is None else p.abs_tol
    target = max(p.tol * J0, abs_tol)
    if J0 <= target:
        state.stop_reason = "tol"
        return state
    while True:
        if state.iterations >= p.max_iter:
            state.stop_reason = "max_iter"
            break
        mu = gradient_measure(u, uT, T, model, scheme, window, m=m)
        state.grad_measure = mu
        tv = mu.total_variation
        if tv <= p.grad_tol:
            state.stop_reason = "tol"
            break
        try:
            v, _, slope = descent_direction(mu, eta, spec)
        except StallError:
            state.stop_reason = "stall"
            break
        scale = v.sup()
        state.direction = v
        slope /= scale  # derivative along the normalized direction
        gamma = p.gamma0
        accepted = None
        while gamma >= p.gamma_floor:
            cand = u.with_values(u.values - gamma * v.values / scale)
            mc = misfit(cand, uT, T, model, scheme, window)
            if mc.J <= m.J - p.armijo * gamma * slope and mc.J < m.J:
                accepted = (cand, mc)
                break
            gamma *= 0.5
        if accepted is None:
            state.stop_reason = "stall"
            break
        u, m = accepted
        state.iterate = u
        state.J_history.append(m.J)
        state.gamma_history.append(gamma)
        state.log.append({"iter": state.iterations, "J": m.J, "gamma": gamma, "grad_tv": tv})
        state.timings.append({"iter": state.iterations, "wall": time.perf_counter() - t_start})
        if snapshot_every and state.iterations % snapshot_every == 0:
            state.snapshots.append((state.iterations, u))
        if m.J <= target:
            state.stop_reason = "tol"
            break
    return state


def regularize(u0: GridFunction, T: float, model: Hamiltonian, scheme: str | None = None) -> GridFunction:
    """``S_T^-(S_T^+ u0)``: same forward image, semiconvex representative."""
    return regularize_backward(u0, T, model, scheme)
