"""Named test data used by the CLI, the self-test and the test suite."""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError
from .grid import GridFunction, GridSpec


def _norm(p):
    return np.sqrt(np.sum(p * p, axis=-1))


def tent(p, centre, radius, height):
    """Radial tent ``height * max(0, 1 - |x - centre| / radius)``."""
    c = np.zeros(p.shape[-1])
    c[0] = centre
    return height * np.maximum(0.0, 1.0 - _norm(p - c) / radius)


def _linear(p):
    slope = np.array([0.5, -0.25][: p.shape[-1]])
    return p @ slope


FIXTURES = {
    "zero": lambda p: np.zeros(p.shape[:-1]),
    "linear": _linear,
    "abs-kink": _norm,
    "neg-abs": lambda p: -_norm(p),
    "gaussian-bump": lambda p: np.exp(-np.sum(p * p, axis=-1) / 0.25),
    "two-bump": lambda p: tent(p, -0.6, 0.4, 0.5) + tent(p, 0.6, 0.4, 0.5),
}


def fixture(name: str, spec: GridSpec) -> GridFunction:
    """Sample the named fixture on ``spec``."""
    try:
        fn = FIXTURES[name]
    except KeyError:
        raise InvalidArgumentError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}") from None
    return spec.sample(fn)


def random_lipschitz(spec: GridSpec, rng: np.random.Generator, n_terms: int = 4, lip: float = 1.0) -> GridFunction:
    """Random sum of tents and plane waves with Lipschitz constant at most ``lip``."""
    pts = spec.points()
    vals = np.zeros(spec.shape)
    budget = lip / (2 * n_terms)
    for _ in range(n_terms):
        c = rng.uniform(-0.5 * spec.L, 0.5 * spec.L, size=spec.dim)
        r = rng.uniform(0.2, 0.8)
        vals += rng.uniform(-1, 1) * budget * r * np.maximum(0.0, 1.0 - _norm(pts - c) / r)
        k = rng.normal(size=spec.dim)
        k *= rng.uniform(0.5, 3.0) / np.linalg.norm(k)
        amp = budget / np.linalg.norm(k)
        vals += rng.uniform(-1, 1) * amp * np.sin(pts @ k + rng.uniform(0, 2 * np.pi))
    return GridFunction(spec, vals)
