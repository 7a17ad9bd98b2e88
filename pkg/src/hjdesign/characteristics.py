"""Backward characteristics, the foot map Phi and the Gateaux derivative of ``S_t^+``.

Along a characteristic ending at ``(x, grad S_t^+ u0(x))`` the pair
``(xi, p)`` solves ``xi' = H_p(xi, p)``, ``p' = -H_x(xi, p)``.  Its foot
``Phi(x) = xi(0)`` gives the derivative of the solution operator in the
direction ``w`` as ``w(Phi(x))``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EscapeError, InvalidArgumentError
from .grid import (
    GridFunction,
    GridSpec,
    gradient,
    interp_points,
    nearest_valid_fill,
    norms,
)
from .hamiltonian import Hamiltonian, as_vectors
from .solvers import default_scheme, forward_solve, inner_window

REASON_OK, REASON_KINK, REASON_ESCAPE = 0, 1, 2
DEFAULT_DELTAS = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)


def default_steps(t: float, h: float) -> int:
    return max(32, int(math.ceil(t / h)))


@dataclass
class TrajectoryPair:
    """Discretized backward characteristic; arrays have a leading time axis."""

    times: np.ndarray
    xi: np.ndarray
    p: np.ndarray
    terminal: tuple

    @property
    def foot(self) -> np.ndarray:
        return self.xi[0]


def _rhs(model: Hamiltonian, xi, p):
    return model.Hp(xi, p), -model.Hx(xi, p)


def integrate_backward(model: Hamiltonian, x, p, t: float, n_steps: int):
    """RK4 from ``s = t`` down to ``s = 0``.

    Returns ``(times, xi, p)`` with states at ``s_k = k t / n_steps`` in
    increasing order of ``s``.
    """
    if n_steps < 1:
        raise InvalidArgumentError("n_steps must be at least 1")
    tau = t / n_steps
    xi = np.array(x, dtype=float)
    p = np.array(p, dtype=float)
    xs, ps = [xi.copy()], [p.copy()]
    for _ in range(n_steps):
        k1x, k1p = _rhs(model, xi, p)
        k2x, k2p = _rhs(model, xi - 0.5 * tau * k1x, p - 0.5 * tau * k1p)
        k3x, k3p = _rhs(model, xi - 0.5 * tau * k2x, p - 0.5 * tau * k2p)
        k4x, k4p = _rhs(model, xi - tau * k3x, p - tau * k3p)
        xi = xi - tau / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        p = p - tau / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
        xs.append(xi.copy())
        ps.append(p.copy())
    times = np.linspace(0.0, t, n_steps + 1)
    return times, np.stack(xs[::-1]), np.stack(ps[::-1])


def escape_box(spec: GridSpec, model: Hamiltonian, t: float, R: float) -> float:
    """Half width of the box inflated by the travel distance ``t C_R``."""
    return spec.L + t * model.p_bound(R) + spec.h


def backtrack(x, grad_x, t: float, model: Hamiltonian, n_steps: int = 32, *, box: float | None = None) -> TrajectoryPair:
    """Integrate the characteristic system backward from ``(x, grad_x)`` at time ``t``.

    Parameters
    ----------
    x, grad_x : array_like
        Terminal point and covector; a leading batch shape is allowed.
    box : float, optional
        Half width of the admissible box; leaving it raises
        :class:`EscapeError`.
    """
    if not t > 0:
        raise InvalidArgumentError("t must be positive")
    x = as_vectors(model.dim, x)
    g = as_vectors(model.dim, grad_x)
    x, g = np.broadcast_arrays(x, g)
    times, xi, p = integrate_backward(model, x, g, t, n_steps)
    if box is not None and np.any(np.abs(xi) > box):
        raise EscapeError(f"characteristic left the box of half width {box:g}; enlarge the grid")
    return TrajectoryPair(times, xi, p, (x.copy(), g.copy()))


@dataclass
class PhiMap:
    spec: GridSpec
    t: float
    targets: np.ndarray  # (*shape, dim)
    valid_mask: np.ndarray
    reason: np.ndarray
    covectors: np.ndarray  # terminal gradients used as seeds

    def to_csv(self, path) -> None:
        pts = self.spec.points().reshape(-1, self.spec.dim)
        tg = self.targets.reshape(-1, self.spec.dim)
        names = [f"x{k}" for k in range(self.spec.dim)] + [f"target{k}" for k in range(self.spec.dim)]
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names + ["valid", "reason"])
            for a, b, v, r in zip(pts, tg, self.valid_mask.ravel(), self.reason.ravel()):
                w.writerow([repr(float(c)) for c in a] + [repr(float(c)) for c in b] + [int(v), int(r)])


def phi_map(u0: GridFunction, t: float, model: Hamiltonian, scheme: str | None = None,
            n_steps: int | None = None, *, solution: GridFunction | None = None) -> PhiMap:
    """Feet of the backward characteristics from every node at time ``t``.

    Nodes where ``S_t^+ u0`` has a gradient kink are marked invalid with
    reason code 1; characteristics that leave the inflated box get code 2.
    """
    spec = u0.spec
    if solution is None:
        solution = forward_solve(u0, t, model, scheme or default_scheme(model)).final
    grad = gradient(solution)
    g = grad.at_nodes()
    n = n_steps or default_steps(t, spec.h)
    _, xi, p = integrate_backward(model, spec.points(), g, t, n)
    box = escape_box(spec, model, t, max(solution.lip_bound, u0.lip_bound))
    escaped = np.any(np.abs(xi) > box, axis=(0, -1))
    reason = np.full(spec.shape, REASON_OK, dtype=np.int8)
    reason[grad.kink_mask] = REASON_KINK
    reason[escaped] = REASON_ESCAPE
    return PhiMap(spec, t, xi[0], reason == REASON_OK, reason, g)


def gateaux_derivative(u0: GridFunction, w: GridFunction, t: float, model: Hamiltonian,
                       scheme: str | None = None, *, phi: PhiMap | None = None) -> GridFunction:
    """``w(Phi(x))`` at every node; invalid nodes copy their nearest valid neighbour."""
    if phi is None:
        phi = phi_map(u0, t, model, scheme)
    vals = interp_points(w, phi.targets)
    if not phi.valid_mask.all():
        vals = nearest_valid_fill(vals, phi.valid_mask)
    return GridFunction(u0.spec, vals, extension=w.extension)


def fd_directional(u0: GridFunction, w: GridFunction, t: float, delta: float, model: Hamiltonian,
                   scheme: str | None = None, *, base: GridFunction | None = None) -> GridFunction:
    """One-sided difference quotient ``(S_t^+(u0 + delta w) - S_t^+ u0) / delta``."""
    if not delta > 0:
        raise InvalidArgumentError("delta must be positive")
    scheme = scheme or default_scheme(model)
    if base is None:
        base = forward_solve(u0, t, model, scheme).final
    pert = forward_solve(u0 + delta * w, t, model, scheme).final
    return GridFunction(u0.spec, (pert.values - base.values) / delta)


def scheme_floor(w: GridFunction, window) -> float:
    """L1 size of the discretization error of the derivative comparison.

    Nodal errors of order ``h (|w|_inf + Lip w)`` integrated over the
    window.
    """
    spec = w.spec
    measure = float(np.prod([hi - lo for lo, hi in window]))
    return spec.h * measure * (w.sup() + w.lip_bound)


@dataclass
class ConvergenceTable:
    deltas: list
    distances: list
    floor: float
    monotone: bool

    def rows(self):
        return [{"delta": d, "L1": e} for d, e in zip(self.deltas, self.distances)]


def is_monotone_to_floor(distances, floor: float) -> bool:
    """Nonincreasing, except for wiggles once the plateau ``1.5 * floor`` is reached."""
    plateau = 1.5 * floor
    for a, b in zip(distances[:-1], distances[1:]):
        if b > a * (1 + 1e-12) + 1e-15 and b > plateau:
            return False
    return True


def convergence_report(u0: GridFunction, w: GridFunction, t: float, model: Hamiltonian,
                       deltas=DEFAULT_DELTAS, window=None, scheme: str | None = None) -> ConvergenceTable:
    """L1 distance between difference quotients and ``w o Phi`` for a decreasing list of deltas."""
    scheme = scheme or default_scheme(model)
    base = forward_solve(u0, t, model, scheme).final
    deriv = gateaux_derivative(u0, w, t, model, scheme, phi=phi_map(u0, t, model, scheme, solution=base))
    if window is None:
        window = inner_window(u0.spec, model, t, u0.lip_bound)
    dists = []
    for d in sorted(deltas, reverse=True):
        fd = fd_directional(u0, w, t, d, model, scheme, base=base)
        dists.append(norms(fd.values - deriv.values, window, spec=u0.spec)["L1"])
    floor = scheme_floor(w, window)
    return ConvergenceTable(sorted(deltas, reverse=True), dists, floor, is_monotone_to_floor(dists, floor))
