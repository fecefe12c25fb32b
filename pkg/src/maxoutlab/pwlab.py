"""Constructive two-unit universal approximation in one dimension.

A continuous target is interpolated by a piecewise-linear ``g`` on a uniform
grid, ``g`` is split into a difference of two convex PWL functions, and each
convex part becomes one maxout unit.  A fixed linear read-out computes
``h1 - h2``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .network import Linear, Maxout, NetworkSpec, Parameters, forward, layer_forward
from .numerics import DomainError

GRID_POINTS = 10_000


@dataclass(frozen=True)
class PwlFunction:
    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=np.float64)
        ys = np.asarray(self.ys, dtype=np.float64)
        if xs.ndim != 1 or xs.shape != ys.shape or len(xs) < 2:
            raise DomainError("need matching 1-D breakpoint and value arrays, length >= 2")
        if np.any(np.diff(xs) <= 0):
            raise DomainError("breakpoints must be strictly increasing")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    def __call__(self, x):
        return np.interp(x, self.xs, self.ys)

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.ys) / np.diff(self.xs)


@dataclass(frozen=True)
class ConvexPwl:
    """``max_j (slopes[j] * x + intercepts[j])``."""

    slopes: np.ndarray
    intercepts: np.ndarray

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.max(np.multiply.outer(x, self.slopes) + self.intercepts, axis=-1)

    @property
    def pieces(self) -> int:
        return len(self.slopes)

    @classmethod
    def from_values(cls, xs, ys) -> "ConvexPwl":
        """One affine piece per segment of the interpolant through (xs, ys)."""
        xs, ys = np.asarray(xs, float), np.asarray(ys, float)
        s = np.diff(ys) / np.diff(xs)
        return cls(s, ys[:-1] - s * xs[:-1])


def interpolate_pwl(f: Callable, a: float, b: float, n_breakpoints: int) -> PwlFunction:
    if not a < b or n_breakpoints < 2:
        raise DomainError("need a < b and at least 2 breakpoints")
    xs = np.linspace(a, b, n_breakpoints)
    with np.errstate(all="ignore"):
        ys = np.asarray(f(xs), dtype=np.float64)
    if not np.all(np.isfinite(ys)):
        raise DomainError("target is not finite on the grid")
    return PwlFunction(xs, ys)


def dc_decompose(g: PwlFunction):
    """Split ``g`` into convex ``h1, h2`` with ``g = h1 - h2``.

    Every breakpoint where the slope drops contributes ``|drop| * max(0, x - x_i)``
    to ``h2``; ``h1 = g + h2`` then only has upward kinks.  Both parts keep one
    affine piece per segment of ``g``.
    """
    drops = np.minimum(np.diff(g.slopes), 0.0)
    knots = g.xs[1:-1]
    h2_vals = np.maximum(g.xs[:, None] - knots[None, :], 0.0) @ (-drops)
    h1_vals = g.ys + h2_vals
    return ConvexPwl.from_values(g.xs, h1_vals), ConvexPwl.from_values(g.xs, h2_vals)


def convex_to_maxout(h: ConvexPwl):
    """Maxout unit parameters ``W (1, 1, k)``, ``b (1, k)`` computing ``h``."""
    if h.pieces < 1:
        raise DomainError("need at least one piece")
    return h.slopes.reshape(1, 1, -1).copy(), h.intercepts.reshape(1, -1).copy()


def maxout_unit(W, b, x) -> np.ndarray:
    """Evaluate a single-input maxout layer at scalar points ``x``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    return layer_forward(Maxout(W.shape[1], W.shape[2]), W, b, x)[1]


def two_unit_network(h1: ConvexPwl, h2: ConvexPwl):
    """Spec and parameters of ``x -> [h1(x), h2(x)] -> h1 - h2``."""
    k = max(h1.pieces, h2.pieces)

    def padded(h):
        W, b = convex_to_maxout(h)
        # repeat the last piece so both units have k pieces; max is unchanged
        extra = k - h.pieces
        return (np.concatenate([W, np.repeat(W[..., -1:], extra, axis=2)], axis=2),
                np.concatenate([b, np.repeat(b[:, -1:], extra, axis=1)], axis=1))

    (W1, b1), (W2, b2) = padded(h1), padded(h2)
    spec = NetworkSpec(1, (Maxout(2, k), Linear(1)))
    params = Parameters([np.concatenate([W1, W2], axis=1), np.array([[[1.0]], [[-1.0]]])],
                        [np.concatenate([b1, b2], axis=0), np.zeros((1, 1))])
    return spec, params


@dataclass
class Approximator:
    spec: NetworkSpec
    params: Parameters
    sup_error: float
    interpolant: PwlFunction
    parts: tuple

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
        return forward(self.params, self.spec, x).output[:, 0]

    def __iter__(self):
        return iter((self.spec, self.params, self.sup_error))


def build_two_unit_approximator(f: Callable, a: float, b: float, k: int,
                                grid_points: int = GRID_POINTS) -> Approximator:
    """Two maxout units with ``k`` pieces each approximating ``f`` on ``[a, b]``.

    Uses ``k + 1`` uniform breakpoints.  ``sup_error`` is ``max |net - f|``
    over ``grid_points`` uniform points.  Unpacks as ``spec, params, sup_error``.
    """
    if k < 2:
        raise DomainError("k must be >= 2")
    g = interpolate_pwl(f, a, b, k + 1)
    h1, h2 = dc_decompose(g)
    spec, params = two_unit_network(h1, h2)
    approx = Approximator(spec, params, 0.0, g, (h1, h2))
    grid = np.linspace(a, b, grid_points)
    approx.sup_error = float(np.max(np.abs(approx(grid) - f(grid))))
    return approx


TARGETS = {
    "abs": np.abs,
    "relu": lambda x: np.maximum(x, 0.0),
    "square": np.square,
    "sin3x": lambda x: np.sin(3 * x),
    "sin": np.sin,
    "tanh": np.tanh,
    "exp": np.exp,
}


def target_function(name_or_expr: str) -> Callable:
    """A named target or a numpy expression in ``x`` such as ``"x**3 - x"``."""
    if name_or_expr in TARGETS:
        return TARGETS[name_or_expr]
    namespace = {k: getattr(np, k) for k in
                 ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "tanh", "maximum",
                  "minimum", "pi", "where")}
    code = compile(name_or_expr, "<target>", "eval")
    for name in code.co_names:
        if name != "x" and name not in namespace:
            raise DomainError(f"unknown name {name!r} in target expression")

    def f(x):
        return np.broadcast_to(eval(code, {"__builtins__": {}}, dict(namespace, x=x)),
                               np.shape(x)).astype(np.float64)

    return f
