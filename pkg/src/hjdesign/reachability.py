"""Reachable targets for ``H(p) = <A p, p> / 2``.

``u_T`` is reachable at time ``T`` exactly when ``u_T - <A^{-1} x, x>/(2T)``
is concave.  On the grid this becomes the linear constraints

    D_e u_T(x) <= <A^{-1} h e, h e> / T

for every interior node and stencil direction ``e`` (axes, plus both
diagonals in 2D), where ``D_e`` is the centred second difference.  The
reachable set is therefore convex and the L2 projection onto it is a
quadratic program with one half-space per constraint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from scipy.spatial import cKDTree

from . import kernels
from .errors import ConvergenceError, DomainError, InvalidArgumentError
from .grid import (
    GridFunction,
    GridSpec,
    curvature_scale,
    gradient,
    second_differences,
    stencil_directions,
)
from .hamiltonian import QuadraticHamiltonian
from .solvers import backward_solve


def _as_A(A, dim: int) -> np.ndarray:
    if isinstance(A, QuadraticHamiltonian):
        A = A.A
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape != (dim, dim):
        raise InvalidArgumentError(f"A must be {dim}x{dim}")
    if not np.allclose(A, A.T) or np.linalg.eigvalsh(A).min() <= 0:
        raise InvalidArgumentError("A must be symmetric positive definite")
    return A


def constraint_bounds(spec: GridSpec, T: float, A) -> np.ndarray:
    """``<A^{-1} h e, h e> / T`` for each stencil direction ``e``."""
    if not T > 0:
        raise InvalidArgumentError("T must be positive")
    Ainv = np.linalg.inv(_as_A(A, spec.dim))
    out = []
    for e in stencil_directions(spec.dim):
        he = spec.h * np.asarray(e, dtype=float)
        out.append(float(he @ Ainv @ he) / T)
    return np.array(out)


def default_tol_reach(spec: GridSpec, T: float, A) -> float:
    Ainv = np.linalg.inv(_as_A(A, spec.dim))
    return 4 * spec.h**2 * float(np.linalg.norm(Ainv, 2)) / T + 1e-10


@dataclass
class ReachabilityReport:
    violation: GridFunction
    max_violation: float
    reachable: bool
    tol: float
    note: str = ""

    def to_dict(self) -> dict:
        return {"reachable": self.reachable, "max_violation": self.max_violation, "tol_reach": self.tol,
                "note": self.note}


def _excess(u: np.ndarray, spec: GridSpec, bounds: np.ndarray) -> np.ndarray:
    """Largest ``D_e u - bound_e`` over directions; NaN where no stencil fits."""
    f = GridFunction(spec, u)
    worst = np.full(spec.shape, -np.inf)
    for e, b in zip(stencil_directions(spec.dim), bounds):
        d = second_differences(f, e) - b
        worst = np.fmax(worst, d)
    return np.where(np.isfinite(worst), worst, np.nan)


def is_reachable(uT: GridFunction, T: float, A, tol_reach: float | None = None) -> ReachabilityReport:
    """Check the discrete second-order reachability inequality.

    The violation field is 0 on boundary nodes, where no stencil fits.
    """
    spec = uT.spec
    bounds = constraint_bounds(spec, T, A)
    tol = default_tol_reach(spec, T, A) if tol_reach is None else float(tol_reach)
    exc = _excess(uT.values, spec, bounds)
    interior = np.isfinite(exc)
    mx = float(exc[interior].max()) if interior.any() else 0.0
    note = "" if spec.dim == 1 else "2D test uses axes and diagonals only: a necessary condition for concavity"
    field_vals = np.where(interior, exc, 0.0)
    return ReachabilityReport(GridFunction(spec, field_vals), mx, mx <= tol, tol, note)


# ---------------------------------------------------------------------------
# projection


def _constraint_matrix(spec: GridSpec):
    """Sparse ``K`` with one row per (direction, interior node) and the matching dual layout.

    Returns ``K`` and, per row, the flat index into the dual array used
    by the sweep kernels (shape ``(M,)`` in 1D, ``(D, M, M)`` in 2D).
    """
    M = spec.M
    rows, cols, vals, slots, dirs = [], [], [], [], []
    r = 0
    if spec.dim == 1:
        c = np.arange(1, M - 1)
        n = c.size
        rid = np.arange(n)
        for off, v in ((-1, 1.0), (0, -2.0), (1, 1.0)):
            rows.append(rid)
            cols.append(c + off)
            vals.append(np.full(n, v))
        slots.append(c)
        dirs.append(np.zeros(n, dtype=int))
        r = n
    else:
        for d, (e0, e1) in enumerate(stencil_directions(2)):
            i0, j0 = abs(e0), abs(e1)
            I, J = np.meshgrid(np.arange(i0, M - i0), np.arange(j0, M - j0), indexing="ij")
            I, J = I.ravel(), J.ravel()
            n = I.size
            rid = r + np.arange(n)
            for s, v in ((-1, 1.0), (0, -2.0), (1, 1.0)):
                rows.append(rid)
                cols.append((I + s * e0) * M + (J + s * e1))
                vals.append(np.full(n, v))
            slots.append(d * M * M + I * M + J)
            dirs.append(np.full(n, d))
            r += n
    K = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(r, spec.size))
    return K, np.concatenate(slots), np.concatenate(dirs)


class _KKTSolver:
    """Solves ``[[I, K^T], [K, -1/d]] [x; y] = [r1; r2]`` for one IPM iteration.

    The reduced matrix ``I + K^T diag(d) K`` is small and cheap to factor,
    and two steps of iterative refinement on the full system recover most
    of the accuracy lost to its conditioning.  When the refined residual
    still exceeds ``rtol`` the caller switches to factoring the full
    quasi-definite system, which is larger but stays accurate as ``d``
    spreads out; a symmetric ordering without pivoting is stable for it.
    """

    def __init__(self, K, KT, d: np.ndarray, augmented: bool, refine: int = 2, rtol: float = 1e-8):

        n = K.shape[1]
        self.K, self.KT, self.d, self.n = K, KT, d, n
        self.augmented, self.refine, self.rtol = augmented, refine, rtol
        self.inaccurate = False
        eye = sp.identity(n, format="csc")
        opts = dict(permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
        if augmented:
            self.lu = splu(sp.bmat([[eye, KT], [K, sp.diags(-1.0 / d)]], format="csc"), **opts)
        else:
            self.lu = splu((eye + KT @ sp.diags(d) @ K).tocsc(), **opts)

    def _reduced(self, r1, r2):
        x = self.lu.solve(r1 + self.KT @ (self.d * r2))
        return x, self.d * (self.K @ x - r2)

    def solve(self, r1: np.ndarray, r2: np.ndarray):
        if self.augmented:
            sol = self.lu.solve(np.concatenate([r1, r2]))
            return sol[: self.n], sol[self.n:]
        x, y = self._reduced(r1, r2)
        for _ in range(self.refine + 1):
            e1 = r1 - (x + self.KT @ y)
            e2 = r2 - (self.K @ x - y / self.d)
            err = max(np.abs(e1).max(), np.abs(e2).max())
            if _ == self.refine:
                break
            dx, dy = self._reduced(e1, e2)
            x, y = x + dx, y + dy
        scale = max(np.abs(r1).max(), np.abs(r2).max(), np.finfo(float).tiny)
        if err > self.rtol * scale:
            self.inaccurate = True
        return x, y


def _interior_point(u: np.ndarray, K, b: np.ndarray, max_iter: int = 80, tol: float = 1e-14, patience: int = 5):
    """Mehrotra predictor-corrector for ``min |phi - u|^2 / 2`` s.t. ``K phi <= b``.

    Returns ``(phi, lam, converged)`` with ``lam >= 0``.  Each iteration
    factors one KKT matrix (see :class:`_KKTSolver`) and reuses it for the
    predictor and corrector solves.  Once ``mu`` is tiny, degenerate
    constraints make every factorization lose accuracy and the residuals
    grow again, so in that terminal phase the best iterate seen is
    returned after ``patience`` iterations without improvement.
    """
    m = K.shape[0]
    KT = K.T.tocsr()
    phi = u.copy()
    s = np.maximum(b - K @ phi, 1.0)
    lam = np.ones(m)
    augmented = False
    converged = False
    best, best_merit, stale = (phi.copy(), lam.copy()), np.inf, 0
    for _ in range(max_iter):
        r_d = phi - u + KT @ lam
        r_p = K @ phi + s - b
        mu = float(s @ lam) / m
        merit = max(mu, float(np.abs(r_p).max()), float(np.abs(r_d).max()))
        if merit < best_merit:
            best, best_merit, stale = (phi.copy(), lam.copy()), merit, 0
        elif mu < 1e-8:
            stale += 1
        if merit < tol:
            converged = True
            break
        if stale >= patience:
            break
        try:
            kkt = _KKTSolver(K, KT, lam / s, augmented)
        except RuntimeError:
            # a zero pivot: widely spread d defeats the unpivoted reduced factor
            if augmented:
                break
            augmented = True
            continue

        def direction(rc):
            dphi, dlam = kkt.solve(-r_d, -r_p - rc / lam)
            ds = (rc - s * dlam) / lam
            return dphi, ds, dlam

        def max_step(v, dv):
            neg = dv < 0
            return min(1.0, float((-v[neg] / dv[neg]).min())) if neg.any() else 1.0

        _, ds_a, dl_a = direction(-s * lam)
        a_aff = min(max_step(s, ds_a), max_step(lam, dl_a))
        mu_aff = float((s + a_aff * ds_a) @ (lam + a_aff * dl_a)) / m
        sigma = (mu_aff / mu) ** 3
        dphi, ds, dl = direction(-s * lam - ds_a * dl_a + sigma * mu)
        if kkt.inaccurate:
            # redo this iteration with the full system
            augmented = True
            continue
        alpha = 0.99 * min(max_step(s, ds), max_step(lam, dl))
        phi += alpha * dphi
        s += alpha * ds
        lam += alpha * dl
    phi, lam = (phi, lam) if converged else best
    return phi, np.maximum(lam, 0.0), converged


@dataclass
class ProjectionResult:
    phi: GridFunction
    sweeps: int
    residual: float
    certificate: dict = field(default_factory=dict)
    method: str = "auto"


def project_L2(uT: GridFunction, T: float, A, *, tol_qp: float = 1e-8, change_tol: float = 1e-10,
               max_sweeps: int = 5000, omega: float = 1.0, method: str = "auto") -> ProjectionResult:
    """L2 projection of ``u_T`` onto the discrete reachable set.

    ``method="dykstra"`` runs cyclic half-space projections with Dykstra
    corrections (Hildreth's form, optionally over-relaxed by ``omega``)
    from the cold start ``phi = u_T``.  ``method="auto"`` first runs a
    sparse interior-point solve and hands its primal/dual pair to the
    same sweeps, which then only certify or polish it; cold sweeps need
    a number of sweeps growing like the fourth power of the contact
    width, which is impractical beyond a few dozen nodes.

    Raises
    ------
    ConvergenceError
        Sweeps did not meet ``tol_qp`` and ``change_tol`` within ``max_sweeps``.

    Notes
    -----
    ``change_tol`` bounds the grid L2 norm of the change of ``phi`` over
    one full sweep; ``tol_qp`` bounds the largest constraint violation.
    A target that already meets ``tol_qp`` is returned unchanged with
    ``sweeps = 0``.
    """
    spec = uT.spec
    bounds = constraint_bounds(spec, T, A)
    K, slots, dirs = _constraint_matrix(spec)
    b = bounds[dirs]
    u = uT.values.ravel().astype(float)
    if spec.dim == 1:
        lam_arr = np.zeros(spec.M)
    else:
        lam_arr = np.zeros((len(bounds), spec.M, spec.M))
    if method not in ("auto", "dykstra"):
        raise InvalidArgumentError(f"unknown projection method {method!r}")
    violation = float(max(0.0, (K @ u - b).max()))
    if violation <= tol_qp:
        # already reachable to tolerance: zero multipliers certify it as its own projection
        cert = {"max_violation": violation, "min_multiplier": 0.0, "complementarity": 0.0, "stationarity": 0.0,
                "active_constraints": 0}
        return ProjectionResult(GridFunction(spec, uT.values.copy(), extension=uT.extension), 0, violation, cert,
                                method)
    phi = u.copy()
    if method == "auto":
        phi, lam, _ = _interior_point(u, K, b)
        lam_arr.reshape(-1)[slots] = lam
    phi_arr = np.ascontiguousarray(phi.reshape(spec.shape))
    dir_arr = np.array(stencil_directions(spec.dim), dtype=np.int_)
    residual = np.inf
    sweeps = 0
    step = np.inf
    for sweeps in range(1, max_sweeps + 1):
        prev = phi_arr.copy()
        if spec.dim == 1:
            kernels.hildreth_sweep_1d(phi_arr, lam_arr, float(bounds[0]), omega)
        else:
            kernels.hildreth_sweep_2d(phi_arr, lam_arr, bounds, dir_arr, omega)
        step = float(np.sqrt(spec.cell_volume * np.sum((phi_arr - prev) ** 2)))
        if step <= change_tol:
            residual = float(max(0.0, (K @ phi_arr.ravel() - b).max()))
            if residual <= tol_qp:
                break
    else:
        residual = float(max(0.0, (K @ phi_arr.ravel() - b).max()))
        raise ConvergenceError(
            f"projection did not converge in {max_sweeps} sweeps (residual {residual:.3e}, last step {step:.3e})",
            residual=residual, sweeps=max_sweeps,
        )
    lam = lam_arr.reshape(-1)[slots]
    Kphi = K @ phi_arr.ravel()
    cert = {
        "max_violation": float(max(0.0, (Kphi - b).max())),
        "min_multiplier": float(lam.min()) if lam.size else 0.0,
        "complementarity": float(np.abs(lam * (Kphi - b)).max()) if lam.size else 0.0,
        "stationarity": float(np.abs(phi_arr.ravel() - u + K.T @ lam).max()),
        "active_constraints": int((lam > 0).sum()),
    }
    return ProjectionResult(GridFunction(spec, phi_arr, extension=uT.extension), sweeps, residual, cert, method)


# ---------------------------------------------------------------------------
# obstacle residual


def fd_hessian(phi: GridFunction) -> np.ndarray:
    """Finite-difference Hessian, shape ``(*shape, dim, dim)``; NaN near the boundary."""
    h2 = phi.spec.h**2
    if phi.spec.dim == 1:
        return (second_differences(phi, (1,)) / h2)[..., None, None]
    dxx = second_differences(phi, (1, 0)) / h2
    dyy = second_differences(phi, (0, 1)) / h2
    dxy = (second_differences(phi, (1, 1)) - second_differences(phi, (1, -1))) / (4 * h2)
    return np.stack([np.stack([dxx, dxy], -1), np.stack([dxy, dyy], -1)], -2)


def obstacle_residual(phi: GridFunction, uT: GridFunction, T: float, A) -> GridFunction:
    """``min(phi - u_T, -lambda_max(D^2 phi - A^{-1}/T))`` nodewise.

    Zero everywhere certifies ``phi`` as the semiconcave envelope of
    ``u_T``.  Boundary nodes, with no Hessian stencil, keep the first term.
    """
    A = _as_A(A, phi.spec.dim)
    Hs = fd_hessian(phi)
    M = Hs - np.linalg.inv(A) / T
    ok = np.all(np.isfinite(M), axis=(-1, -2))
    lam = np.full(phi.spec.shape, np.nan)
    lam[ok] = np.linalg.eigvalsh(M[ok]).max(axis=-1)
    gap = phi.values - uT.values
    res = np.where(ok, np.minimum(gap, -np.nan_to_num(lam)), gap)
    return GridFunction(phi.spec, res)


# ---------------------------------------------------------------------------
# inverse-design cone


@dataclass
class MembershipReport:
    member: bool
    min_excess: float
    contact_deviation: float
    lip: float
    reasons: list


@dataclass
class InverseDesignCone:
    """All data ``u_tilde + psi`` with ``psi >= 0`` vanishing on the contact set ``X_T``."""

    phi_star: GridFunction
    T: float
    A: np.ndarray
    u_tilde: GridFunction
    contact_points: np.ndarray  # samples of X_T, shape (n, dim)
    dilation: float
    contact_mask: np.ndarray  # nodes within the dilation of X_T

    def contains(self, u0: GridFunction, tol: float = 1e-6) -> MembershipReport:
        diff = u0.values - self.u_tilde.values
        reasons = []
        min_exc = float(diff.min())
        dev = float(np.abs(diff[self.contact_mask]).max()) if self.contact_mask.any() else 0.0
        if min_exc < -tol:
            reasons.append(f"below the minimal design by {-min_exc:.3e}")
        if dev > tol:
            reasons.append(f"differs from the minimal design by {dev:.3e} on the contact set")
        lip = GridFunction(u0.spec, diff).lip_bound
        if not np.isfinite(lip):
            reasons.append("perturbation is not Lipschitz")
        return MembershipReport(not reasons, min_exc, dev, float(lip), reasons)


def inverse_design_cone(phi_star: GridFunction, T: float, A, *, tol_reach: float | None = None) -> InverseDesignCone:
    """Minimal design ``S_T^- phi*``, contact set samples and membership test."""
    spec = phi_star.spec
    A = _as_A(A, spec.dim)
    rep = is_reachable(phi_star, T, A, tol_reach)
    if not rep.reachable:
        raise DomainError(f"target is not reachable (max violation {rep.max_violation:.3e})")
    model = QuadraticHamiltonian(A)
    u_tilde = backward_solve(phi_star, T, model, "hopf_lax").final
    curv = curvature_scale(phi_star)
    g = gradient(phi_star, curvature=curv)
    grads = g.at_nodes()
    z = spec.points()
    feet = z - T * grads @ A.T
    ok = ~g.kink_mask
    pts = feet[ok].reshape(-1, spec.dim)
    dilation = 2 * spec.h + T * float(np.linalg.norm(A, 2)) * 10 * spec.h * curv

    d, _ = cKDTree(pts).query(z.reshape(-1, spec.dim))
    mask = (d <= dilation).reshape(spec.shape)
    return InverseDesignCone(phi_star, T, A, u_tilde, pts, dilation, mask)
