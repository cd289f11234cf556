"""Small numeric helpers shared by the model and solver layers.

Quadrature here is deliberately self-contained (recursive Simpson and a
fixed 3-point Gauss rule) so that the scipy-based oracles used in the test
suite stay an independent route.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

# 3-point Gauss-Legendre nodes/weights on [-1, 1]
_G3_NODES = (-math.sqrt(3.0 / 5.0), 0.0, math.sqrt(3.0 / 5.0))
_G3_WEIGHTS = (5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0)


def gauss3(f: Callable[[float], float], a: float, b: float) -> float:
    """Integrate f over [a, b] with the 3-point Gauss rule (exact to degree 5)."""
    if b <= a:
        return 0.0
    h = 0.5 * (b - a)
    c = 0.5 * (a + b)
    return h * sum(w * f(c + h * x) for x, w in zip(_G3_NODES, _G3_WEIGHTS))


def _simpson(f, a, fa, b, fb) -> tuple[float, float]:
    m = 0.5 * (a + b)
    fm = f(m)
    s = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    return fm, s


def adaptive_simpson(
    f: Callable[[float], float],
    a: float,
    b: float,
    tol: float = 1e-12,
    max_depth: int = 50,
) -> float:
    """Adaptive Simpson quadrature of f over [a, b].

    Plain recursive bisection with the standard 1/15 error estimate. The
    integrand is assumed smooth inside (a, b); callers split at kinks.
    """
    if b <= a:
        return 0.0
    fa, fb = f(a), f(b)
    fm, whole = _simpson(f, a, fa, b, fb)

    def recurse(a, fa, m, fm, b, fb, whole, tol, depth):
        flm, left = _simpson(f, a, fa, m, fm)
        frm, right = _simpson(f, m, fm, b, fb)
        delta = left + right - whole
        if depth >= max_depth or abs(delta) <= 15.0 * tol:
            return left + right + delta / 15.0
        half = 0.5 * tol
        mid = 0.5 * (a + b)
        lm = 0.5 * (a + mid)
        rm = 0.5 * (mid + b)
        return recurse(a, fa, lm, flm, mid, fm, left, half, depth + 1) + recurse(
            mid, fm, rm, frm, b, fb, right, half, depth + 1
        )

    m = 0.5 * (a + b)
    return recurse(a, fa, m, fm, b, fb, whole, tol, 0)


def split_integrate(
    f: Callable[[float], float],
    a: float,
    b: float,
    breakpoints: Iterable[float] = (),
    tol: float = 1e-12,
) -> float:
    """Adaptive Simpson over [a, b], split at the given interior breakpoints."""
    pts = sorted(p for p in breakpoints if a < p < b)
    knots = [a, *pts, b]
    return sum(
        adaptive_simpson(f, lo, hi, tol=tol) for lo, hi in zip(knots[:-1], knots[1:])
    )


def cell_averages(
    f: Callable[[float], float],
    edges: np.ndarray,
    jumps: Sequence[float] = (),
) -> np.ndarray:
    """Exact cell averages of a piecewise smooth function.

    Each cell [edges[j], edges[j+1]) is split at the known jump positions
    that fall strictly inside it, and each smooth piece is integrated with
    the 3-point Gauss rule. For piecewise polynomial data of degree <= 5
    (all initial profiles used here are piecewise constant) the result is
    exact up to roundoff, including cells straddling a jump.
    """
    edges = np.asarray(edges, dtype=float)
    out = np.empty(edges.size - 1)
    jumps = sorted(jumps)
    for j in range(out.size):
        lo, hi = edges[j], edges[j + 1]
        inner = [p for p in jumps if lo < p < hi]
        total = 0.0
        left = lo
        for p in [*inner, hi]:
            total += gauss3(f, left, p)
            left = p
        out[j] = total / (hi - lo)
    return out


def pairwise_coarsen(values: np.ndarray, steps: int = 1) -> np.ndarray:
    """Repeated exact pairwise averaging (projection to coarser dyadic grids)."""
    v = np.asarray(values, dtype=float)
    for _ in range(steps):
        v = 0.5 * (v[0::2] + v[1::2])
    return v


def fmt_float(x: float) -> str:
    """Round-trip decimal formatting used in all text artifacts."""
    return repr(float(x))
