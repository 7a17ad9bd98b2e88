"""Time the compiled kernels against the pure-Python fallback.

Each kernel runs on the same inputs under both backends.  The outputs are
compared and the verdict is printed next to the timings; the script exits
nonzero if any kernel disagrees.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""

from __future__ import annotations

import argparse
import json
import math
import time

import numpy as np

from hjdesign import kernels
from hjdesign.grid import GridSpec, stencil_directions
from hjdesign.hamiltonian import QuadraticHamiltonian
from hjdesign.reachability import constraint_bounds


def _cases():
    """Yield ``(label, kernel name, argument factory)`` for every kernel."""
    model = QuadraticHamiltonian(np.array([[2.0]]))
    model2 = QuadraticHamiltonian(2.0 * np.eye(2))
    t = 0.5

    def minplus(dim, M):
        spec = GridSpec(dim, 2.0, M)
        u = np.abs(spec.points()).sum(-1)
        W = int(math.ceil((2 * t + 2 * spec.h) / spec.h))
        k = np.arange(-W, W + 1) * spec.h
        if dim == 1:
            cost = t * model.legendre(np.zeros(1), (-k / t)[:, None])
        else:
            K1, K2 = np.meshgrid(k, k, indexing="ij")
            cost = t * model2.legendre(np.zeros(2), np.stack([-K1 / t, -K2 / t], -1))
        return lambda: (np.ascontiguousarray(u), np.ascontiguousarray(cost), W)

    def semilag(dim, M):
        spec = GridSpec(dim, 2.0, M)
        dt = spec.h
        dq = spec.h / (2 * dt)
        nq = int(math.ceil(2.5 / dq))
        q1 = np.arange(-nq, nq + 1) * dq
        if dim == 1:
            qs = q1[:, None]
            m = model
        else:
            A, B = np.meshgrid(q1, q1, indexing="ij")
            qs = np.stack([A.ravel(), B.ravel()], -1)
            m = model2
        cost = np.tile(dt * m.legendre(np.zeros(dim), qs), (spec.size, 1))
        u = np.abs(spec.points()).sum(-1)
        disp = dt * qs[:, 0] if dim == 1 else dt * qs
        return lambda: (np.ascontiguousarray(u), spec.L, spec.h, np.ascontiguousarray(disp),
                        np.ascontiguousarray(cost))

    def hildreth(dim, M):
        spec = GridSpec(dim, 2.0, M)
        A = 2.0 * np.eye(dim)
        bounds = constraint_bounds(spec, t, A)
        u = np.abs(spec.points()).sum(-1)
        if dim == 1:
            return lambda: (u.copy(), np.zeros(M), float(bounds[0]), 1.0)
        dirs = np.array(stencil_directions(2), dtype=np.int_)
        return lambda: (u.copy(), np.zeros((len(bounds), M, M)), bounds, dirs, 1.0)

    yield "minplus_1d M=1025", "minplus_1d", minplus(1, 1025)
    yield "minplus_2d M=129", "minplus_2d", minplus(2, 129)
    yield "semilag_1d M=1025", "semilag_1d", semilag(1, 1025)
    yield "semilag_2d M=65", "semilag_2d", semilag(2, 65)
    yield "hildreth_sweep_1d M=1025", "hildreth_sweep_1d", hildreth(1, 1025)
    yield "hildreth_sweep_2d M=129", "hildreth_sweep_2d", hildreth(2, 129)


def _time(fn, make_args, repeat):
    best, out = math.inf, None
    for _ in range(repeat):
        args = make_args()
        t0 = time.perf_counter()
        res = fn(*args)
        best = min(best, time.perf_counter() - t0)
        # sweeps work in place; the updated iterate is what gets compared
        out = res if res is not None and not np.isscalar(res) else args[0]
    return best, out


def _agree(a, b) -> bool:
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.allclose(x, y, rtol=0, atol=1e-12) for x, y in zip(a, b))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--json", help="also write the results to this file")
    args = parser.parse_args(argv)
    try:
        compiled = kernels.get_backend("compiled")
    except ImportError as exc:
        print(exc)
        return 1
    python = kernels.get_backend("python")
    rows = []
    print(f"{'kernel':<28}{'python [s]':>12}{'compiled [s]':>14}{'speedup':>10}  agree")
    for name, fn_name, make_args in _cases():
        t_py, out_py = _time(getattr(python, fn_name), make_args, args.repeat)
        t_c, out_c = _time(getattr(compiled, fn_name), make_args, args.repeat)
        ok = _agree(out_py, out_c)
        rows.append({"kernel": name, "python": t_py, "compiled": t_c, "speedup": t_py / t_c, "agree": ok})
        print(f"{name:<28}{t_py:>12.4f}{t_c:>14.4f}{t_py / t_c:>9.1f}x  {'yes' if ok else 'NO'}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0 if all(r["agree"] for r in rows) else 1


if __name__ == "__main__":
    raise SystemExit(main())
