"""Linearized transport around ``S_t^+ u0``.

The coefficient ``a(t, x) = H_p(x, grad S_t^+ u0(x))`` drives the
nonconservative equation ``v_t + a . grad v = 0`` (solved in the duality
sense by ``v(t) = w o Phi^t``) and its conservative backward dual, whose
reversible solution is the pushforward of the terminal density along
backward characteristics.  Atoms appear where a fan of characteristics
collapses onto one point.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .characteristics import default_steps, gateaux_derivative, integrate_backward
from .errors import DomainError, InvalidArgumentError
from .grid import (
    GridFunction,
    GridSpec,
    VectorField,
    gradient,
    interp_points,
    nearest_valid_fill,
)
from .hamiltonian import Hamiltonian
from .solvers import default_scheme, forward_solve


def require_validity_domain(model: Hamiltonian) -> None:
    """Uniqueness of duality solutions is only available in 1D or for ``|p|^2 + f(x)``."""
    if model.dim == 1 or model.is_shifted_quadratic:
        return
    raise DomainError(
        "in dimension 2 the semiconcavity of the solution does not in general imply the "
        "one-sided Lipschitz condition on the transport coefficient; only Hamiltonians "
        "|p|^2 + f(x) (or isotropic quadratics) are supported"
    )


def transport_coefficient(u0: GridFunction, t: float, model: Hamiltonian, scheme: str | None = None,
                          *, solution: GridFunction | None = None) -> VectorField:
    """``H_p(x, grad S_t^+ u0(x))`` at every node, with the gradient's kink mask."""
    if solution is None:
        solution = forward_solve(u0, t, model, scheme or default_scheme(model)).final
    g = gradient(solution)
    a = model.Hp(u0.spec.points(), g.at_nodes())
    return VectorField(u0.spec, np.moveaxis(a, -1, 0), g.kink_mask.copy())


@dataclass
class OSLCReport:
    estimate: float
    bound: float
    passes: bool
    n_pairs: int


def oslc_estimate(a: VectorField, t: float, model: Hamiltonian | None = None, *, C: float = 1.0,
                  n_samples: int = 100_000, seed: int = 0, rel_slack: float = 1e-6) -> OSLCReport:
    """Largest sampled ratio ``<a(y) - a(x), y - x> / |y - x|^2``, compared with ``C / t``.

    All node pairs are used in 1D (kink nodes excluded); in 2D, random
    pairs plus all axis and diagonal neighbours.  ``C = 1`` is sharp for
    quadratic Hamiltonians without potential.  ``rel_slack`` absorbs the
    round-off of the underlying solve, amplified by ``1 / h^2``.
    """
    spec = a.spec
    if spec.dim == 2:
        if model is None:
            raise DomainError("a Hamiltonian is needed to certify the 2D validity domain")
        require_validity_domain(model)
    pts = spec.points().reshape(-1, spec.dim)
    vec = a.at_nodes().reshape(-1, spec.dim)
    keep = ~a.kink_mask.ravel()
    pts, vec = pts[keep], vec[keep]
    if spec.dim == 1:
        x, v = pts[:, 0], vec[:, 0]
        dx = x[None, :] - x[:, None]
        dv = v[None, :] - v[:, None]
        off = ~np.eye(x.size, dtype=bool)
        ratios = dv[off] / dx[off]
        est = float(ratios.max()) if ratios.size else 0.0
        n_pairs = int(off.sum() // 2)
    else:
        rng = np.random.default_rng(seed)
        n = pts.shape[0]
        i = rng.integers(0, n, size=n_samples)
        j = rng.integers(0, n, size=n_samples)
        # neighbour pairs on the full index grid, restricted to kept nodes
        full = np.full(spec.size, -1)
        full[np.flatnonzero(keep)] = np.arange(n)
        idx = full.reshape(spec.shape)
        nb_i, nb_j = [], []
        for e0, e1 in ((1, 0), (0, 1), (1, 1), (1, -1)):
            A = idx[max(0, -e0):spec.M - max(0, e0), max(0, -e1):spec.M - max(0, e1)]
            B = idx[max(0, e0):spec.M - max(0, -e0), max(0, e1):spec.M - max(0, -e1)]
            ok = (A >= 0) & (B >= 0)
            nb_i.append(A[ok])
            nb_j.append(B[ok])
        i = np.concatenate([i] + nb_i)
        j = np.concatenate([j] + nb_j)
        d = pts[j] - pts[i]
        r2 = np.sum(d * d, axis=-1)
        ok = r2 > 0
        ratios = np.sum((vec[j] - vec[i]) * d, axis=-1)[ok] / r2[ok]
        est = float(ratios.max()) if ratios.size else 0.0
        n_pairs = int(ok.sum())
    bound = C / t
    return OSLCReport(est, bound, est <= bound * (1 + rel_slack), n_pairs)


@dataclass
class DualityField:
    times: np.ndarray
    slices: list
    increments: list = field(default_factory=list)

    def at(self, t: float) -> GridFunction:
        k = int(np.argmin(np.abs(self.times - t)))
        return self.slices[k]


def forward_duality_solution(u0: GridFunction, w: GridFunction, schedule, model: Hamiltonian,
                             scheme: str | None = None) -> DualityField:
    """``v(t) = w o Phi^t`` at the schedule times (``v(0) = w``).

    ``increments`` holds the L1 distance between consecutive slices.
    """
    require_validity_domain(model)
    times = np.unique(np.concatenate([[0.0], np.asarray(schedule, dtype=float)]))
    slices = []
    for s in times:
        slices.append(w if s == 0 else gateaux_derivative(u0, w, float(s), model, scheme))
    h = u0.spec.cell_volume
    inc = [float(np.abs(b.values - a.values).sum() * h) for a, b in zip(slices[:-1], slices[1:])]
    return DualityField(times, slices, inc)


# ---------------------------------------------------------------------------
# measures


@dataclass
class DiscreteMeasure:
    """Weighted particles plus atoms; ``positions`` arrays have shape ``(n, dim)``."""

    dim: int
    positions: np.ndarray
    weights: np.ndarray
    atom_positions: np.ndarray = None
    atom_masses: np.ndarray = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, self.dim)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.atom_positions is None:
            self.atom_positions = np.zeros((0, self.dim))
            self.atom_masses = np.zeros(0)
        self.atom_positions = np.asarray(self.atom_positions, dtype=float).reshape(-1, self.dim)
        self.atom_masses = np.asarray(self.atom_masses, dtype=float).reshape(-1)

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum() + self.atom_masses.sum())

    @property
    def total_variation(self) -> float:
        return float(np.abs(self.weights).sum() + np.abs(self.atom_masses).sum())

    @property
    def n_atoms(self) -> int:
        return int(self.atom_masses.size)

    def scaled(self, c: float) -> DiscreteMeasure:
        return DiscreteMeasure(self.dim, self.positions, c * self.weights, self.atom_positions, c * self.atom_masses)

    def all_points(self):
        return (np.concatenate([self.positions, self.atom_positions]),
                np.concatenate([self.weights, self.atom_masses]))

    def pair(self, phi) -> float:
        """``int phi d mu``; ``phi`` is a GridFunction or a callable on ``(n, dim)`` points."""
        pos, wts = self.all_points()
        if pos.shape[0] == 0:
            return 0.0
        vals = interp_points(phi, pos) if isinstance(phi, GridFunction) else np.asarray(phi(pos), dtype=float)
        return float(np.dot(wts, vals))

    def deposit(self, spec: GridSpec) -> GridFunction:
        """Cloud-in-cell density on ``spec``; mass inside the box is conserved exactly."""
        pos, wts = self.all_points()
        grid = np.zeros(spec.shape)
        if pos.shape[0]:
            s = np.clip((pos + spec.L) / spec.h, 0, spec.M - 1)
            i0 = np.clip(np.floor(s), 0, spec.M - 2).astype(np.intp)
            fr = s - i0
            if spec.dim == 1:
                np.add.at(grid, i0[:, 0], wts * (1 - fr[:, 0]))
                np.add.at(grid, i0[:, 0] + 1, wts * fr[:, 0])
            else:
                for di in (0, 1):
                    for dj in (0, 1):
                        wa = fr[:, 0] if di else 1 - fr[:, 0]
                        wb = fr[:, 1] if dj else 1 - fr[:, 1]
                        np.add.at(grid, (i0[:, 0] + di, i0[:, 1] + dj), wts * wa * wb)
        return GridFunction(spec, grid / spec.cell_volume)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind"] + [f"x{k}" for k in range(self.dim)] + ["weight"])
            for p, m in zip(self.positions, self.weights):
                w.writerow(["particle"] + [repr(float(c)) for c in p] + [repr(float(m))])
            for p, m in zip(self.atom_positions, self.atom_masses):
                w.writerow(["atom"] + [repr(float(c)) for c in p] + [repr(float(m))])

    @classmethod
    def from_csv(cls, path) -> DiscreteMeasure:
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        dim = len(rows[0]) - 2
        parts = [r for r in rows[1:] if r[0] == "particle"]
        atoms = [r for r in rows[1:] if r[0] == "atom"]

        def arr(rs, cols):
            return np.array([[float(c) for c in r[cols]] for r in rs]).reshape(len(rs), -1)

        return cls(dim, arr(parts, slice(1, 1 + dim)), arr(parts, slice(1 + dim, None)),
                   arr(atoms, slice(1, 1 + dim)), arr(atoms, slice(1 + dim, None)))


def _seeds(u0: GridFunction, tau: float, piT: GridFunction, model: Hamiltonian, scheme):
    if piT.spec != u0.spec:
        raise InvalidArgumentError("terminal density and datum live on different grids")
    require_validity_domain(model)
    solution = forward_solve(u0, tau, model, scheme or default_scheme(model)).final
    g = gradient(solution)
    return solution, g


def _positions(u0, tau, model, g, s: float) -> np.ndarray:
    """Positions at time ``s`` of the characteristics leaving every node at ``tau``."""
    spec = u0.spec
    pts = spec.points()
    if s >= tau:
        return pts.copy()
    seeds = g.at_nodes()
    n = default_steps(tau - s, spec.h)
    _, xi, _ = integrate_backward(model, pts, seeds, tau - s, n)
    out = xi[0]
    valid = ~g.kink_mask
    if not valid.all():
        out = np.stack([nearest_valid_fill(out[..., k], valid) for k in range(spec.dim)], axis=-1)
    return out


def backward_reversible(u0: GridFunction, tau: float, piT: GridFunction, schedule, model: Hamiltonian,
                        scheme: str | None = None) -> list:
    """Reversible solution of the backward conservative equation as moving particles.

    One particle per node where ``piT`` is nonzero, with weight
    ``piT_i h^dim``, transported to ``xi_{tau, x_i}(s)`` for each schedule
    time ``s``.  Returns one :class:`DiscreteMeasure` per schedule time.
    """
    _, g = _seeds(u0, tau, piT, model, scheme)
    w = piT.values * u0.spec.cell_volume
    keep = (w != 0).ravel()
    out = []
    for s in np.asarray(schedule, dtype=float):
        if s < 0 or s > tau * (1 + 1e-12):
            raise InvalidArgumentError("schedule times must lie in [0, tau]")
        pos = _positions(u0, tau, model, g, float(s)).reshape(-1, u0.spec.dim)
        out.append(DiscreteMeasure(u0.spec.dim, pos[keep], w.ravel()[keep]))
    return out


def _components(positions: np.ndarray, link: float) -> list:
    """Index arrays of the single-linkage components with two or more members."""
    n = positions.shape[0]
    pairs = cKDTree(positions).query_pairs(link, output_type="ndarray")
    if pairs.size == 0:
        return []
    adj = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(adj, directed=False)
    order = np.argsort(labels, kind="stable")
    groups = np.split(order, np.flatnonzero(np.diff(labels[order])) + 1)
    return [g for g in groups if g.size >= 2]


def cluster_atoms(measure: DiscreteMeasure, r_atom: float, max_depth: int = 8) -> DiscreteMeasure:
    """Collapse clusters of two or more particles that sit within ``r_atom`` of each other into atoms.

    Clusters are single-linkage components with link length ``r_atom``;
    a component becomes an atom only if its diameter (largest coordinate
    extent) is also at most ``r_atom``.  A collapsing fan lands on one
    point, whereas a strongly compressing but injective foot map only
    brings neighbours close and would chain into a spurious wide "atom".
    A component that is too wide is split again with half the link
    length, up to ``max_depth`` times, so a genuine atom chained to such
    neighbours is still found.  Atom position is the ``|weight|``-weighted
    mean and atom mass the summed weight, so the total mass is unchanged.
    """
    n = measure.positions.shape[0]
    if n < 2:
        return measure
    atoms = []
    pending = [(np.arange(n), r_atom, 0)]
    while pending:
        idx, link, depth = pending.pop()
        for g in _components(measure.positions[idx], link):
            sel = idx[g]
            p = measure.positions[sel]
            if float((p.max(0) - p.min(0)).max()) <= r_atom:
                atoms.append(sel)
            elif depth < max_depth:
                pending.append((sel, link / 2, depth + 1))
    if not atoms:
        return measure
    atoms.sort(key=lambda a: int(a.min()))
    in_atom = np.zeros(n, dtype=bool)
    apos, amass = [], []
    for sel in atoms:
        in_atom[sel] = True
        wts = measure.weights[sel]
        aw = np.abs(wts)
        p = measure.positions[sel]
        centre = (aw[:, None] * p).sum(0) / aw.sum() if aw.sum() > 0 else p.mean(0)
        apos.append(centre)
        amass.append(wts.sum())
    return DiscreteMeasure(
        measure.dim,
        measure.positions[~in_atom],
        measure.weights[~in_atom],
        np.concatenate([measure.atom_positions, np.array(apos).reshape(-1, measure.dim)]),
        np.concatenate([measure.atom_masses, np.array(amass)]),
    )


def extend_measure_at_zero(u0: GridFunction, tau: float, piT: GridFunction, model: Hamiltonian,
                           scheme: str | None = None, *, r_atom: float | None = None) -> DiscreteMeasure:
    """The limit measure at ``s = 0``: pushforward of ``piT dx`` under ``Phi^tau``, with atoms.

    The particle set is the ``s = 0`` slice of :func:`backward_reversible`.
    ``r_atom`` defaults to ``h / 2``: below the grid spacing, so an atom
    never links to the regular particles next to it.
    """
    base = backward_reversible(u0, tau, piT, [0.0], model, scheme)[0]
    return cluster_atoms(base, 0.5 * u0.spec.h if r_atom is None else r_atom)


@dataclass
class PairingReport:
    times: np.ndarray
    series: np.ndarray
    drift: float


def duality_pairing(v: DualityField, measures: list, schedule) -> PairingReport:
    """``int v(t) d pi(t)`` at each schedule time and its relative drift."""
    schedule = np.asarray(schedule, dtype=float)
    if len(measures) != schedule.size:
        raise InvalidArgumentError("one measure per schedule time is required")
    series = []
    for s, mu in zip(schedule, measures):
        k = int(np.argmin(np.abs(v.times - s)))
        if abs(v.times[k] - s) > 1e-12 * max(1.0, abs(s)):
            raise InvalidArgumentError(f"schedule mismatch: time {s:g} has no transport slice")
        series.append(mu.pair(v.slices[k]))
    series = np.array(series)
    scale = np.abs(series).max()
    drift = float((series.max() - series.min()) / scale) if scale > 0 else 0.0
    return PairingReport(schedule, series, drift)
