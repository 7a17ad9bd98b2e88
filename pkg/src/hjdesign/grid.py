"""Uniform box grids and the functions sampled on them.

A :class:`GridSpec` describes the box ``[-L, L]^dim`` sampled with ``M``
points per axis.  Values are stored as arrays of shape ``(M,)`` or
``(M, M)`` with ``ij`` indexing, so ``values[i, j]`` lives at
``(x_i, x_j)``.  Query points for interpolation always carry a trailing
axis of length ``dim`` internally; the public :func:`interpolate` also
accepts bare coordinates in 1D.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidArgumentError, StencilError

EXTENSIONS = ("constant", "linear")

Window = tuple  # tuple of (lo, hi) pairs, one per axis


@dataclass(frozen=True)
class GridSpec:
    dim: int
    L: float
    M: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise InvalidArgumentError(f"dim must be 1 or 2, got {self.dim}")
        if self.M < 3:
            raise InvalidArgumentError(f"need at least 3 points per axis, got {self.M}")
        if not (self.L > 0 and math.isfinite(self.L)):
            raise InvalidArgumentError(f"half width must be positive, got {self.L}")
        object.__setattr__(self, "L", float(self.L))
        object.__setattr__(self, "M", int(self.M))

    @property
    def h(self) -> float:
        return 2.0 * self.L / (self.M - 1)

    @property
    def shape(self) -> tuple:
        return (self.M,) * self.dim

    @property
    def size(self) -> int:
        return self.M**self.dim

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    def axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.M)

    def points(self) -> np.ndarray:
        """Node coordinates, shape ``(*shape, dim)``."""
        ax = self.axis()
        if self.dim == 1:
            return ax[:, None]
        X, Y = np.meshgrid(ax, ax, indexing="ij")
        return np.stack([X, Y], axis=-1)

    def full_window(self) -> Window:
        return ((-self.L, self.L),) * self.dim

    def inner_window(self, margin: float) -> Window:
        lo, hi = -self.L + margin, self.L - margin
        if lo > hi:
            raise InvalidArgumentError(
                f"margin {margin:g} leaves an empty window on a box of half width {self.L:g}"
            )
        return ((lo, hi),) * self.dim

    def sample(self, fn, *, extension: str = "linear", lip_bound: float | None = None) -> GridFunction:
        """Sample ``fn(points)`` where ``points`` has shape ``(*shape, dim)``."""
        vals = np.asarray(fn(self.points()), dtype=float)
        return GridFunction(self, vals.reshape(self.shape), lip_bound=lip_bound, extension=extension)


def _edge_slopes(values: np.ndarray, h: float) -> float:
    worst = 0.0
    for ax in range(values.ndim):
        d = np.abs(np.diff(values, axis=ax)) / h
        if d.size:
            worst = max(worst, float(d.max()))
    return worst


@dataclass(frozen=True, eq=False)
class GridFunction:
    """A Lipschitz function sampled on a :class:`GridSpec`.

    ``lip_bound`` is estimated from edge slopes when not declared.  A
    declared bound is checked against the samples with a small slack.
    """

    spec: GridSpec
    values: np.ndarray
    lip_bound: float | None = None
    extension: str = "linear"

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(self.spec.shape)
        if not np.all(np.isfinite(vals)):
            raise InvalidArgumentError("grid function values must be finite")
        if self.extension not in EXTENSIONS:
            raise InvalidArgumentError(f"unknown extension {self.extension!r}")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        observed = _edge_slopes(vals, self.spec.h)
        if self.lip_bound is None:
            object.__setattr__(self, "lip_bound", observed)
        elif observed > self.lip_bound * (1 + 1e-9) + 1e-12:
            raise InvalidArgumentError(
                f"declared Lipschitz bound {self.lip_bound:g} below observed slope {observed:g}"
            )
        else:
            object.__setattr__(self, "lip_bound", float(self.lip_bound))

    # small algebra so fixtures and residuals read naturally
    def with_values(self, values) -> GridFunction:
        return GridFunction(self.spec, values, extension=self.extension)

    def _other(self, other):
        if isinstance(other, GridFunction):
            if other.spec != self.spec:
                raise InvalidArgumentError("grid functions live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return self.with_values(self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.with_values(self.values - self._other(other))

    def __rsub__(self, other):
        return self.with_values(self._other(other) - self.values)

    def __mul__(self, other):
        return self.with_values(self.values * self._other(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)

    def sup(self) -> float:
        return float(np.abs(self.values).max())

    def __call__(self, x):
        return interpolate(self, x)


@dataclass(frozen=True, eq=False)
class VectorField:
    spec: GridSpec
    components: np.ndarray  # shape (dim, *shape)
    kink_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        comps = np.asarray(self.components, dtype=float).reshape((self.spec.dim,) + self.spec.shape)
        object.__setattr__(self, "components", comps)
        if self.kink_mask is None:
            object.__setattr__(self, "kink_mask", np.zeros(self.spec.shape, dtype=bool))

    def at_nodes(self) -> np.ndarray:
        """Vectors as an array of shape ``(*shape, dim)``."""
        return np.moveaxis(self.components, 0, -1)


# ---------------------------------------------------------------------------
# interpolation


def _snap(s: np.ndarray) -> np.ndarray:
    r = np.rint(s)
    return np.where(np.abs(s - r) < 1e-9, r, s)


def interp_points(f: GridFunction, pts) -> np.ndarray:
    """Multilinear interpolation at ``pts`` of shape ``(..., dim)``."""
    spec = f.spec
    pts = np.asarray(pts, dtype=float)
    if pts.shape[-1] != spec.dim:
        raise InvalidArgumentError(f"query points need a trailing axis of size {spec.dim}")
    if f.extension == "constant":
        pts = np.clip(pts, -spec.L, spec.L)
    s = _snap((pts + spec.L) / spec.h)
    idx = np.clip(np.floor(s), 0, spec.M - 2).astype(np.intp)
    fr = s - idx  # unclipped: extrapolates linearly from the boundary cell
    v = f.values
    if spec.dim == 1:
        i, t = idx[..., 0], fr[..., 0]
        return v[i] * (1.0 - t) + v[i + 1] * t
    i, j = idx[..., 0], idx[..., 1]
    a, b = fr[..., 0], fr[..., 1]
    return (
        v[i, j] * (1 - a) * (1 - b)
        + v[i + 1, j] * a * (1 - b)
        + v[i, j + 1] * (1 - a) * b
        + v[i + 1, j + 1] * a * b
    )


def interpolate(f: GridFunction, x) -> np.ndarray | float:
    """Evaluate ``f`` off-grid.

    Parameters
    ----------
    f : GridFunction
    x : array_like
        In 1D, plain coordinates of any shape.  In 2D, an array whose last
        axis holds ``(x1, x2)``.

    Returns
    -------
    float or ndarray
        Multilinear interpolant inside the box; outside, continued by the
        extension rule of ``f``.
    """
    x = np.asarray(x, dtype=float)
    pts = x[..., None] if f.spec.dim == 1 else x
    out = interp_points(f, pts)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# differential operators


def _shift_diffs(v: np.ndarray, h: float, ax: int):
    """Forward and backward differences along ``ax`` (NaN where undefined)."""
    fwd = np.full(v.shape, np.nan)
    bwd = np.full(v.shape, np.nan)
    d = np.diff(v, axis=ax) / h
    sl_lo = [slice(None)] * v.ndim
    sl_hi = [slice(None)] * v.ndim
    sl_lo[ax] = slice(0, -1)
    sl_hi[ax] = slice(1, None)
    fwd[tuple(sl_lo)] = d
    bwd[tuple(sl_hi)] = d
    return fwd, bwd


def curvature_scale(f: GridFunction) -> float:
    """Typical size of second derivatives: 95th percentile of ``|D^2 f|``.

    Kinks occupy a vanishing fraction of nodes, so the percentile ignores
    them.  Floored at 1 so exactly piecewise-linear data still gets a
    threshold well above round-off.
    """
    h = f.spec.h
    samples = []
    for e in axis_directions(f.spec.dim):
        d2 = second_differences(f, e)
        samples.append(np.abs(d2[np.isfinite(d2)]))
    allv = np.concatenate(samples) / h**2
    return max(float(np.percentile(allv, 95)) if allv.size else 0.0, 1.0)


def gradient(f: GridFunction, *, curvature: float | None = None) -> VectorField:
    """Central differences inside, one-sided at the boundary, plus kink flags.

    A node is flagged when its forward and backward differences along some
    axis disagree by more than ``10 * h * curvature``.
    """
    spec, h, v = f.spec, f.spec.h, f.values
    kappa = 10.0 * h * (curvature if curvature is not None else curvature_scale(f))
    comps = []
    kink = np.zeros(spec.shape, dtype=bool)
    for ax in range(spec.dim):
        fwd, bwd = _shift_diffs(v, h, ax)
        g = np.where(np.isnan(fwd), bwd, np.where(np.isnan(bwd), fwd, 0.5 * (fwd + bwd)))
        comps.append(g)
        both = ~np.isnan(fwd) & ~np.isnan(bwd)
        kink |= both & (np.abs(np.nan_to_num(fwd) - np.nan_to_num(bwd)) > kappa)
    return VectorField(spec, np.stack(comps), kink)


def axis_directions(dim: int) -> list:
    return [(1,)] if dim == 1 else [(1, 0), (0, 1)]


def stencil_directions(dim: int) -> list:
    """Axes, plus both diagonals in 2D."""
    return [(1,)] if dim == 1 else [(1, 0), (0, 1), (1, 1), (1, -1)]


def _check_direction(spec: GridSpec, e) -> tuple:
    e = tuple(int(c) for c in np.atleast_1d(e))
    if e not in stencil_directions(spec.dim) and tuple(-c for c in e) not in stencil_directions(spec.dim):
        raise InvalidArgumentError(f"direction {e} is not an axis or diagonal")
    return e


def second_differences(f: GridFunction, e) -> np.ndarray:
    """``f(x+he) + f(x-he) - 2 f(x)`` at every node; NaN where the stencil leaves the grid."""
    e = _check_direction(f.spec, e)
    v = f.values
    M = f.spec.M
    out = np.full(v.shape, np.nan)
    centre, plus, minus = [], [], []
    for c in e:
        lo, hi = abs(c), M - abs(c)
        centre.append(slice(lo, hi))
        plus.append(slice(lo + c, hi + c))
        minus.append(slice(lo - c, hi - c))
    out[tuple(centre)] = v[tuple(plus)] + v[tuple(minus)] - 2.0 * v[tuple(centre)]
    return out


def second_difference(f: GridFunction, e, i) -> float:
    e = _check_direction(f.spec, e)
    i = tuple(int(c) for c in np.atleast_1d(i))
    if len(i) != f.spec.dim:
        raise InvalidArgumentError("node index has wrong dimension")
    for ic, ec in zip(i, e):
        if ic - abs(ec) < 0 or ic + abs(ec) > f.spec.M - 1:
            raise StencilError(f"stencil at node {i} along {e} leaves the grid")
    v = f.values
    plus = tuple(a + b for a, b in zip(i, e))
    minus = tuple(a - b for a, b in zip(i, e))
    return float(v[plus] + v[minus] - 2.0 * v[i])


# ---------------------------------------------------------------------------
# quadrature


def quadrature_weights(spec: GridSpec, window: Window | None = None) -> np.ndarray:
    """Riemann weights ``h^dim`` on nodes inside ``window``, halved per axis at its edges."""
    window = spec.full_window() if window is None else window
    ax = spec.axis()
    tol = 1e-9 * spec.h
    per_axis = []
    for lo, hi in window:
        inside = (ax >= lo - tol) & (ax <= hi + tol)
        if not inside.any():
            raise InvalidArgumentError(f"window [{lo:g}, {hi:g}] contains no grid node")
        w = np.where(inside, spec.h, 0.0)
        idx = np.flatnonzero(inside)
        if idx.size > 1:
            w[idx[0]] *= 0.5
            w[idx[-1]] *= 0.5
        per_axis.append(w)
    if spec.dim == 1:
        return per_axis[0]
    return np.multiply.outer(per_axis[0], per_axis[1])


def norms(f: GridFunction | np.ndarray, window: Window | None = None, *, spec: GridSpec | None = None) -> dict:
    """Sup, L1 and L2 norms over ``window`` (default: the whole box)."""
    if isinstance(f, GridFunction):
        spec, vals = f.spec, f.values
    else:
        vals = np.asarray(f, dtype=float)
        if spec is None:
            raise InvalidArgumentError("spec required for raw arrays")
    w = quadrature_weights(spec, window)
    inside = w > 0
    a = np.abs(vals)
    return {
        "sup": float(a[inside].max()),
        "L1": float((w * a).sum()),
        "L2": float(math.sqrt((w * a * a).sum())),
    }


def window_mask(spec: GridSpec, window: Window) -> np.ndarray:
    return quadrature_weights(spec, window) > 0


# ---------------------------------------------------------------------------
# CSV I/O


def write_csv(path, f: GridFunction, *, time: float | None = None) -> None:
    """Header rows, then node values in row-major order, one per line.

    ``repr`` of a float is the shortest string that parses back to the
    same double, which gives a bit-exact round trip.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dim", f.spec.dim])
        w.writerow(["L", repr(f.spec.L)])
        w.writerow(["M", f.spec.M])
        w.writerow(["extension", f.extension])
        w.writerow(["lip_bound", repr(float(f.lip_bound))])
        if time is not None:
            w.writerow(["time", repr(float(time))])
        w.writerow(["value"])
        for val in f.values.ravel():
            w.writerow([repr(float(val))])


def read_csv(path) -> tuple:
    """Inverse of :func:`write_csv`; returns ``(grid_function, time_or_None)``."""
    header = {}
    values = []
    with Path(path).open(newline="") as fh:
        rows = csv.reader(fh)
        for row in rows:
            if row == ["value"]:
                break
            header[row[0]] = row[1]
        for row in rows:
            values.append(float(row[0]))
    try:
        spec = GridSpec(int(header["dim"]), float(header["L"]), int(header["M"]))
        lip = float(header["lip_bound"])
        ext = header["extension"]
    except KeyError as exc:
        raise InvalidArgumentError(f"grid CSV missing header row {exc}") from None
    if len(values) != spec.size:
        raise InvalidArgumentError(f"expected {spec.size} values, found {len(values)}")
    time = float(header["time"]) if "time" in header else None
    return GridFunction(spec, np.array(values), lip_bound=lip, extension=ext), time


def nearest_valid_fill(values: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Replace invalid entries by the value at the nearest valid node.

    Distance is Euclidean in index space; ties go to the lower flat index.
    """
    values = np.asarray(values, dtype=float)
    if valid.all():
        return values.copy()
    if not valid.any():
        raise InvalidArgumentError("no valid node to fill from")

    shape = values.shape
    idx = np.indices(shape).reshape(len(shape), -1).T.astype(float)
    flat_valid = valid.ravel()
    good = np.flatnonzero(flat_valid)
    bad = np.flatnonzero(~flat_valid)
    tree = cKDTree(idx[good])
    # query a few neighbours so exact ties can be broken deterministically
    k = min(8, good.size)
    dist, nb = tree.query(idx[bad], k=k)
    dist = np.atleast_2d(dist.reshape(bad.size, -1))
    nb = np.atleast_2d(nb.reshape(bad.size, -1))
    cand = good[nb]
    tie = dist <= dist[:, :1] + 1e-12
    cand = np.where(tie, cand, np.iinfo(np.intp).max)
    choice = cand.min(axis=1)
    out = values.ravel().copy()
    out[bad] = out[choice]
    return out.reshape(shape)
