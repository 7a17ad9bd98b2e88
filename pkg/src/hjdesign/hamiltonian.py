"""Convex Hamiltonians ``H(x, p)``, their derivatives and Legendre transforms.

Three families are provided:

* :class:`QuadraticHamiltonian` -- ``H(p) = <A p, p> / 2`` with ``A``
  symmetric positive definite;
* :class:`ShiftedQuadraticHamiltonian` -- ``H(x, p) = |p|^2 + f(x)`` with a
  bounded Lipschitz potential ``f``;
* :class:`CustomHamiltonian` -- user-supplied vectorized callables.

All evaluators take arrays whose last axis has length ``dim`` and
broadcast over the leading axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._golden import golden_min
from .errors import BoundarySaturationError, InvalidArgumentError
from .grid import GridFunction, gradient, interp_points

H_FD = 1e-5


def as_vectors(dim: int, a) -> np.ndarray:
    """Coerce points/covectors to shape ``(..., dim)``."""
    a = np.asarray(a, dtype=float)
    if dim == 1 and (a.ndim == 0 or a.shape[-1] != 1):
        a = a[..., None]
    if a.shape[-1] != dim:
        raise InvalidArgumentError(f"expected trailing axis of size {dim}, got shape {a.shape}")
    return a


def _finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise InvalidArgumentError("non-finite argument")


# ---------------------------------------------------------------------------
# potentials for the shifted quadratic family


class Potential:
    """A bounded, Lipschitz, C^2 potential ``f(x)`` on ``R^dim``."""

    name = "potential"

    def value(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def bounds(self, L: float, dim: int) -> tuple:
        """``(inf f, sup f, sup |grad f|)`` over the box ``[-L, L]^dim``, by sampling."""
        ax = np.linspace(-L, L, 401 if dim == 1 else 101)
        pts = ax[:, None] if dim == 1 else np.stack(np.meshgrid(ax, ax, indexing="ij"), -1).reshape(-1, 2)
        v = self.value(pts)
        g = np.linalg.norm(self.grad(pts), axis=-1)
        return float(v.min()), float(v.max()), float(g.max())


class ZeroPotential(Potential):
    name = "zero"

    def value(self, x):
        return np.zeros(np.shape(x)[:-1])

    def grad(self, x):
        return np.zeros(np.shape(x))

    def bounds(self, L, dim):
        return 0.0, 0.0, 0.0


@dataclass
class CosinePotential(Potential):
    """``amplitude * prod_j cos(wavenumber * x_j)``."""

    amplitude: float = 1.0
    wavenumber: float = 1.0
    name = "cosine"

    def value(self, x):
        return self.amplitude * np.prod(np.cos(self.wavenumber * x), axis=-1)

    def grad(self, x):
        c = np.cos(self.wavenumber * x)
        s = np.sin(self.wavenumber * x)
        out = np.empty(np.shape(x))
        for j in range(x.shape[-1]):
            others = np.prod(np.delete(c, j, axis=-1), axis=-1) if x.shape[-1] > 1 else 1.0
            out[..., j] = -self.amplitude * self.wavenumber * s[..., j] * others
        return out


@dataclass
class GaussianWell(Potential):
    """``-depth * exp(-|x - center|^2 / width^2)``."""

    depth: float = 1.0
    width: float = 0.5
    center: tuple = (0.0,)
    name = "gaussian-well"

    def _c(self, x):
        c = np.asarray(self.center, dtype=float)
        return np.broadcast_to(c, (x.shape[-1],)) if c.size == 1 else c

    def value(self, x):
        r2 = np.sum((x - self._c(x)) ** 2, axis=-1)
        return -self.depth * np.exp(-r2 / self.width**2)

    def grad(self, x):
        d = x - self._c(x)
        r2 = np.sum(d**2, axis=-1)
        return (2.0 * self.depth / self.width**2) * np.exp(-r2 / self.width**2)[..., None] * d


@dataclass
class LinearPotential(Potential):
    """``<slope, x>``; bounded only on the truncated box."""

    slope: float | tuple = 0.0
    name = "linear"

    def _s(self, x):
        return np.broadcast_to(np.asarray(self.slope, dtype=float), (x.shape[-1],))

    def value(self, x):
        return np.sum(x * self._s(x), axis=-1)

    def grad(self, x):
        return np.broadcast_to(self._s(x), np.shape(x)).copy()


class GridPotential(Potential):
    """Potential given by samples; gradient interpolated from central differences."""

    name = "samples"

    def __init__(self, f: GridFunction):
        self.f = f
        g = gradient(f)
        self._grads = [
            GridFunction(f.spec, g.components[k], extension="constant") for k in range(f.spec.dim)
        ]

    def value(self, x):
        return interp_points(self.f, x)

    def grad(self, x):
        return np.stack([interp_points(gk, x) for gk in self._grads], axis=-1)

    def bounds(self, L, dim):
        g = np.sqrt(sum(gk.values**2 for gk in self._grads))
        return float(self.f.values.min()), float(self.f.values.max()), float(g.max())


POTENTIAL_CATALOG = {
    "zero": ZeroPotential,
    "cosine": CosinePotential,
    "gaussian-well": GaussianWell,
}


# ---------------------------------------------------------------------------
# Hamiltonians


class Hamiltonian:
    """Common interface; subclasses fill in the evaluators and constants."""

    dim: int
    c0: float
    C0: float
    C_lip_x: float
    x_independent: bool = False
    family = "abstract"

    def H(self, x, p):
        raise NotImplementedError

    def Hp(self, x, p):
        raise NotImplementedError

    def Hx(self, x, p):
        raise NotImplementedError

    def legendre(self, x, q):
        raise NotImplementedError

    def p_bound(self, R: float) -> float:
        """``C_R``: a bound on ``|H_p(x, p)|`` over ``|p| <= R``."""
        raise NotImplementedError

    def reflected(self) -> Hamiltonian:
        """``H(x, -p)``; turns backward problems into forward ones."""
        return ReflectedHamiltonian(self)

    @property
    def is_shifted_quadratic(self) -> bool:
        """Whether ``H = |p|^2 + f(x)`` up to a time rescaling (``A`` a multiple of I)."""
        return False


@dataclass(eq=False)
class QuadraticHamiltonian(Hamiltonian):
    A: np.ndarray
    family = "quadratic"
    x_independent = True

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if A.shape[0] != A.shape[1] or A.shape[0] not in (1, 2):
            raise InvalidArgumentError(f"A must be 1x1 or 2x2, got shape {A.shape}")
        if not np.allclose(A, A.T, atol=1e-12):
            raise InvalidArgumentError("A must be symmetric")
        eig = np.linalg.eigvalsh(A)
        if eig.min() <= 0:
            raise InvalidArgumentError(f"A must be positive definite, eigenvalues {eig}")
        self.A = A
        self.A_inv = np.linalg.inv(A)
        self.dim = A.shape[0]
        self.c0 = float(eig.min())
        self.C0 = 0.0
        self.C_lip_x = 0.0
        self._norm = float(eig.max())

    def H(self, x, p):
        p = as_vectors(self.dim, p)
        return 0.5 * np.sum((p @ self.A) * p, axis=-1)

    def Hp(self, x, p):
        p = as_vectors(self.dim, p)
        return p @ self.A.T

    def Hx(self, x, p):
        return np.zeros_like(as_vectors(self.dim, p))

    def legendre(self, x, q):
        q = as_vectors(self.dim, q)
        return 0.5 * np.sum((q @ self.A_inv) * q, axis=-1)

    def p_bound(self, R):
        return self._norm * R

    @property
    def is_shifted_quadratic(self):
        return bool(np.allclose(self.A, self.A[0, 0] * np.eye(self.dim)))


class ShiftedQuadraticHamiltonian(Hamiltonian):
    """``H(x, p) = |p|^2 + f(x)``.

    ``C0`` and ``C_lip_x`` are derived from the potential on the box of
    half width ``L`` unless given explicitly.
    """

    family = "shifted"

    def __init__(self, dim: int, potential: Potential | None = None, *, L: float = 2.0,
                 C0: float | None = None, C_lip_x: float | None = None):
        if dim not in (1, 2):
            raise InvalidArgumentError("dim must be 1 or 2")
        self.dim = dim
        self.potential = potential if potential is not None else ZeroPotential()
        self.x_independent = isinstance(self.potential, ZeroPotential)
        lo, hi, lip = self.potential.bounds(L, dim)
        self.c0 = 2.0
        self.C0 = max(0.0, hi, -lo) if C0 is None else float(C0)
        self.C_lip_x = lip if C_lip_x is None else float(C_lip_x)

    def H(self, x, p):
        p = as_vectors(self.dim, p)
        x = as_vectors(self.dim, x)
        return np.sum(p * p, axis=-1) + self.potential.value(x)

    def Hp(self, x, p):
        return 2.0 * as_vectors(self.dim, p)

    def Hx(self, x, p):
        x = as_vectors(self.dim, x)
        p = as_vectors(self.dim, p)
        return np.broadcast_to(self.potential.grad(x), np.broadcast_shapes(x.shape, p.shape)).copy()

    def legendre(self, x, q):
        q = as_vectors(self.dim, q)
        x = as_vectors(self.dim, x)
        return 0.25 * np.sum(q * q, axis=-1) - self.potential.value(x)

    def p_bound(self, R):
        return 2.0 * R

    @property
    def is_shifted_quadratic(self):
        return True


class CustomHamiltonian(Hamiltonian):
    """Hamiltonian from vectorized callables ``H(x, p)``, optionally ``H_p`` and ``H_x``.

    Missing derivatives fall back to central differences with step
    ``h_fd``.  The Legendre transform is computed numerically.
    """

    family = "custom"

    def __init__(self, dim: int, H, Hp=None, Hx=None, *, c0: float | None = None, C0: float = 0.0,
                 C_lip_x: float | None = None, x_independent: bool = False, h_fd: float = H_FD,
                 tol_legendre: float = 1e-5, sample_box: float = 2.0):
        self.dim = dim
        self._H, self._Hp, self._Hx = H, Hp, Hx
        self.h_fd = h_fd
        self.x_independent = x_independent
        self.tol_legendre = tol_legendre
        self._box = sample_box
        self.C0 = float(C0)
        self._pb_cache = {}
        if c0 is None:
            c0 = _sampled_min_curvature(self, _lattice(dim, sample_box, 9), _lattice(dim, 3.0, 13))
        self.c0 = float(c0)
        if C_lip_x is None:
            if x_independent:
                C_lip_x = 0.0
            else:
                xs, ps = _pairs(_lattice(dim, sample_box, 9), _lattice(dim, 3.0, 9))
                C_lip_x = float(np.linalg.norm(self.Hx(xs, ps), axis=-1).max())
        self.C_lip_x = float(C_lip_x)

    def H(self, x, p):
        x, p = as_vectors(self.dim, x), as_vectors(self.dim, p)
        return np.asarray(self._H(x, p), dtype=float)

    def _fd(self, x, p, wrt_p: bool):
        x, p = as_vectors(self.dim, x), as_vectors(self.dim, p)
        x, p = np.broadcast_arrays(x, p)
        out = np.empty(x.shape)
        h = self.h_fd
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = h
            if wrt_p:
                out[..., k] = (self.H(x, p + e) - self.H(x, p - e)) / (2 * h)
            else:
                out[..., k] = (self.H(x + e, p) - self.H(x - e, p)) / (2 * h)
        return out

    def Hp(self, x, p):
        if self._Hp is None:
            return self._fd(x, p, True)
        return as_vectors(self.dim, self._Hp(as_vectors(self.dim, x), as_vectors(self.dim, p)))

    def Hx(self, x, p):
        if self._Hx is None:
            return self._fd(x, p, False)
        return as_vectors(self.dim, self._Hx(as_vectors(self.dim, x), as_vectors(self.dim, p)))

    def p_bound(self, R):
        key = round(float(R), 12)
        if key not in self._pb_cache:
            ps = _lattice(self.dim, R, 41 if self.dim == 1 else 21)
            ps = ps[np.linalg.norm(ps, axis=-1) <= R * (1 + 1e-12)]
            xs = np.zeros((1, self.dim)) if self.x_independent else _lattice(self.dim, self._box, 9)
            X, P = _pairs(xs, ps)
            self._pb_cache[key] = float(np.linalg.norm(self.Hp(X, P), axis=-1).max())
        return self._pb_cache[key]

    def legendre(self, x, q):
        return numeric_legendre(self, x, q)


class ReflectedHamiltonian(Hamiltonian):
    def __init__(self, base: Hamiltonian):
        self.base = base
        self.dim = base.dim
        self.c0, self.C0, self.C_lip_x = base.c0, base.C0, base.C_lip_x
        self.x_independent = base.x_independent
        self.family = base.family

    def H(self, x, p):
        return self.base.H(x, -as_vectors(self.dim, p))

    def Hp(self, x, p):
        return -self.base.Hp(x, -as_vectors(self.dim, p))

    def Hx(self, x, p):
        return self.base.Hx(x, -as_vectors(self.dim, p))

    def legendre(self, x, q):
        return self.base.legendre(x, -as_vectors(self.dim, q))

    def p_bound(self, R):
        return self.base.p_bound(R)

    def reflected(self):
        return self.base

    @property
    def is_shifted_quadratic(self):
        return self.base.is_shifted_quadratic


# ---------------------------------------------------------------------------
# numeric Legendre transform


def numeric_legendre(model: Hamiltonian, x, q, *, lattice: int = 41, sweeps: int = 4):
    """``max_p {p.q - H(x, p)}`` by lattice search plus golden refinement.

    The search ball has radius ``(|q| + C_lip + |H_p(x, 0)|) / c0 + 1``,
    which contains the maximizer under uniform convexity.
    """
    dim = model.dim
    x, q = np.broadcast_arrays(as_vectors(dim, x), as_vectors(dim, q))
    lead = q.shape[:-1]
    xf = x.reshape(-1, dim)
    qf = q.reshape(-1, dim)
    c0 = model.c0 if model.c0 > 0 else 1e-3
    hp0 = np.linalg.norm(model.Hp(xf, np.zeros_like(qf)), axis=-1)
    R = (np.linalg.norm(qf, axis=-1) + model.C_lip_x + hp0) / c0 + 1.0

    def neg_obj(P):
        # P has shape (n, k, dim)
        return -(np.sum(P * qf[:, None, :], axis=-1) - model.H(xf[:, None, :], P))

    s = np.linspace(-1.0, 1.0, lattice)
    if dim == 1:
        P = (R[:, None] * s[None, :])[..., None]
    else:
        S1, S2 = np.meshgrid(s, s, indexing="ij")
        grid2 = np.stack([S1.ravel(), S2.ravel()], -1)
        P = R[:, None, None] * grid2[None, :, :]
    vals = neg_obj(P)
    k = np.argmin(vals, axis=1)
    best = P[np.arange(len(k)), k].copy()
    step = 2.0 * R / (lattice - 1)
    on_edge = np.any(np.abs(best) >= R[:, None] * (1 - 1e-12), axis=-1)
    if np.any(on_edge):
        raise BoundarySaturationError(
            "Legendre maximizer sits on the search boundary; search radius too small"
        )
    n_sweeps = 1 if dim == 1 else sweeps
    for _ in range(n_sweeps):
        for j in range(dim):
            def line(t, j=j):
                P = best.copy()
                P[:, j] = t
                return neg_obj(P[:, None, :])[:, 0]

            t, _ = golden_min(line, best[:, j] - step, best[:, j] + step, iters=60)
            best[:, j] = t
    out = -neg_obj(best[:, None, :])[:, 0]
    return out.reshape(lead)


# ---------------------------------------------------------------------------
# spec-level evaluation API


def eval_H(model: Hamiltonian, x, p):
    x, p = as_vectors(model.dim, x), as_vectors(model.dim, p)
    _finite(x, p)
    return model.H(x, p)


def eval_Hp(model: Hamiltonian, x, p):
    x, p = as_vectors(model.dim, x), as_vectors(model.dim, p)
    _finite(x, p)
    return model.Hp(x, p)


def eval_Hx(model: Hamiltonian, x, p):
    x, p = as_vectors(model.dim, x), as_vectors(model.dim, p)
    _finite(x, p)
    return model.Hx(x, p)


def legendre(model: Hamiltonian, x, q):
    x, q = as_vectors(model.dim, x), as_vectors(model.dim, q)
    _finite(x, q)
    return model.legendre(x, q)


# ---------------------------------------------------------------------------
# hypothesis checks


def _lattice(dim: int, half: float, n: int) -> np.ndarray:
    ax = np.linspace(-half, half, n)
    if dim == 1:
        return ax[:, None]
    return np.stack(np.meshgrid(ax, ax, indexing="ij"), -1).reshape(-1, 2)


def _pairs(xs: np.ndarray, ps: np.ndarray):
    X = np.repeat(xs, len(ps), axis=0)
    P = np.tile(ps, (len(xs), 1))
    return X, P


def hessian_pp(model: Hamiltonian, x: np.ndarray, p: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """``H_pp`` at each pair; exact for the quadratic families."""
    n = x.shape[0]
    dim = model.dim
    if isinstance(model, QuadraticHamiltonian):
        return np.broadcast_to(model.A, (n, dim, dim))
    if isinstance(model, ShiftedQuadraticHamiltonian):
        return np.broadcast_to(2.0 * np.eye(dim), (n, dim, dim))
    out = np.empty((n, dim, dim))
    for i in range(dim):
        for j in range(dim):
            ei = np.zeros(dim)
            ej = np.zeros(dim)
            ei[i] = h
            ej[j] = h
            out[:, i, j] = (
                model.H(x, p + ei + ej) - model.H(x, p + ei - ej) - model.H(x, p - ei + ej) + model.H(x, p - ei - ej)
            ) / (4 * h * h)
    return 0.5 * (out + np.swapaxes(out, 1, 2))


def _sampled_min_curvature(model, xs, ps) -> float:
    X, P = _pairs(xs, ps)
    return float(np.linalg.eigvalsh(hessian_pp(model, X, P)).min())


@dataclass
class SampleSpec:
    """Lattices on which the hypotheses are sampled."""

    x_half_width: float = 2.0
    p_half_width: float = 4.0
    n_x: int = 21
    n_p: int = 21
    radii: tuple = (1.0, 2.0, 4.0)


@dataclass
class HypothesisReport:
    c0_observed: float
    C0_observed: float
    C_lip_observed: float
    hp_bands: dict
    passes: dict = field(default_factory=dict)
    declared: dict = field(default_factory=dict)

    @property
    def all_pass(self) -> bool:
        return all(v for k, v in self.passes.items() if k != "H2_C0_zero")

    def to_dict(self) -> dict:
        return {
            "c0_observed": self.c0_observed,
            "C0_observed": self.C0_observed,
            "C_lip_observed": self.C_lip_observed,
            "hp_bands": {repr(float(k)): v for k, v in self.hp_bands.items()},
            "passes": dict(self.passes),
            "declared": dict(self.declared),
        }


def check_hypotheses(model: Hamiltonian, sample_spec: SampleSpec | None = None, *, tol: float = 1e-6) -> HypothesisReport:
    """Sample (H1)-(H4) on lattices and compare with the declared constants.

    ``H2_C0_zero`` records whether the bound holds with ``C0 = 0``, the
    variant needed by inverse design.
    """
    s = sample_spec or SampleSpec()
    xs = _lattice(model.dim, s.x_half_width, s.n_x)
    ps = _lattice(model.dim, s.p_half_width, s.n_p)
    X, P = _pairs(xs, ps)
    c0_obs = float(np.linalg.eigvalsh(hessian_pp(model, X, P)).min())
    Hvals = model.H(X, P)
    H0 = model.H(xs, np.zeros_like(xs))
    C0_obs = max(0.0, float(-Hvals.min()), float(H0.max()))
    Clip_obs = float(np.linalg.norm(model.Hx(X, P), axis=-1).max())
    pnorm = np.linalg.norm(P, axis=-1)
    hp = np.linalg.norm(model.Hp(X, P), axis=-1)
    bands = {}
    h4_ok = True
    for R in s.radii:
        sel = pnorm <= R * (1 + 1e-12)
        bands[float(R)] = float(hp[sel].max()) if sel.any() else 0.0
        h4_ok &= bands[float(R)] <= model.p_bound(R) * (1 + tol) + tol
    passes = {
        "H1": c0_obs > tol and c0_obs >= model.c0 * (1 - 1e-3) - tol,
        "H2": C0_obs <= model.C0 + tol,
        "H2_C0_zero": C0_obs <= tol,
        "H3": Clip_obs <= model.C_lip_x * (1 + 1e-3) + tol,
        "H4": bool(h4_ok),
    }
    declared = {"c0": model.c0, "C0": model.C0, "C_lip_x": model.C_lip_x}
    return HypothesisReport(c0_obs, C0_obs, Clip_obs, bands, passes, declared)


def hamiltonian_from_config(cfg: dict, *, L: float = 2.0) -> Hamiltonian:
    """Build a model from the ``hamiltonian`` block of a run config."""
    family = cfg.get("family")
    dim = int(cfg.get("dim", 1))
    if family == "quadratic":
        entries = np.asarray(cfg.get("A", [1.0] if dim == 1 else [1.0, 0.0, 0.0, 1.0]), dtype=float)
        n = int(round(math.sqrt(entries.size)))
        return QuadraticHamiltonian(entries.reshape(n, n))
    if family == "shifted":
        pot = cfg.get("potential", "zero")
        if isinstance(pot, str):
            pot = {"kind": pot}
        kind = pot.get("kind", "zero")
        params = {k: v for k, v in pot.items() if k not in ("kind", "samples")}
        if kind == "samples":
            from .grid import GridSpec

            spec = GridSpec(dim, L, int(pot["M"]))
            potential = GridPotential(GridFunction(spec, np.asarray(pot["samples"], dtype=float)))
        elif kind in POTENTIAL_CATALOG:
            params.pop("M", None)
            if "center" in params:
                params["center"] = tuple(np.atleast_1d(params["center"]))
            potential = POTENTIAL_CATALOG[kind](**params)
        else:
            raise InvalidArgumentError(f"unknown potential {kind!r}")
        return ShiftedQuadraticHamiltonian(dim, potential, L=L, C0=cfg.get("C0"))
    raise InvalidArgumentError(f"unknown Hamiltonian family {family!r}")
