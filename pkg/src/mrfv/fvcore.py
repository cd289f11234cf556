"""Uniform-grid explicit finite-volume scheme.

The update is the first-order conservative marching form

    U_j' = U_j - lam (F_{j+1/2} - F_{j-1/2}) + mu (D_{j+1/2} - D_{j-1/2})

with lam = dt/dx, mu = dt/dx^2, the Engquist-Osher numerical flux F
evaluated with the gamma vector frozen at the left limit of each cell
interface, and D_{j+1/2} = w_{j+1/2} (A(U_{j+1}) - A(U_j)) for the
degenerate diffusion with interface weight w (a gamma component or 1).

Two execution lanes produce the same numbers: a plain numpy lane working
through the ModelSpec callables, and compiled per-family kernels (see
kernels.py) used for long runs and timing studies.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError
from .models import (
    ModelSpec,
    branch_index_left,
    check_gamma_alignment,
    interface_gammas,
    max_diffusion_derivative,
    max_flux_derivative,
)
from .numutil import cell_averages

__all__ = [
    "InterfaceData",
    "TimeRule",
    "UniformResult",
    "eo_flux",
    "interface_fluxes",
    "prepare_interfaces",
    "step_uniform",
    "cfl_numbers",
    "cfl_dt_from_bounds",
    "resolve_dt",
    "build_schedule",
    "initial_averages",
    "run_uniform",
]


# ---------------------------------------------------------------------------
# Engquist-Osher flux

def _eo_branch(m: ModelSpec, gamma, ul, ur):
    """Vectorized EO flux for one gamma branch.

    The total-variation integral of f_u over [min, max] is summed exactly
    piece by piece between the flux split points clipped into the state
    interval; between consecutive points the flux is monotone.
    """
    ul = np.asarray(ul, dtype=float)
    ur = np.asarray(ur, dtype=float)
    lo = np.minimum(ul, ur)
    hi = np.maximum(ul, ur)
    ful = np.asarray(m.flux(gamma, ul), dtype=float)
    fur = np.asarray(m.flux(gamma, ur), dtype=float)
    left_is_lo = ul <= ur
    prev = np.where(left_is_lo, ful, fur)
    phi = np.zeros_like(prev)
    for c in sorted(m.flux_split_points(gamma)):
        p = np.clip(c, lo, hi)
        fp = np.asarray(m.flux(gamma, p), dtype=float)
        phi = phi + np.abs(fp - prev)
        prev = fp
    fhi = np.where(left_is_lo, fur, ful)
    phi = phi + np.abs(fhi - prev)
    return 0.5 * (ful + fur - np.sign(ur - ul) * phi)


def eo_flux(m: ModelSpec, gamma, u_left, u_right) -> float:
    """Engquist-Osher interface flux for a single state pair."""
    return float(_eo_branch(m, tuple(gamma), u_left, u_right))


@dataclass
class InterfaceData:
    """Precomputed per-interface geometry for one uniform grid."""

    x_edges: np.ndarray
    branch_idx: np.ndarray
    gamma_cols: tuple[np.ndarray, ...]
    weights: np.ndarray  # diffusion weight at each interface
    knots: np.ndarray  # (n_iface, k) flux split points, padded with +inf


def prepare_interfaces(m: ModelSpec, n: int) -> InterfaceData:
    """Interface gamma data on an n-cell grid, left limits everywhere.

    On periodic domains the first and last interface are the same physical
    point; both take the gamma of the left limit at the right domain end so
    the seam flux is single-valued.
    """
    x_lo, x_hi = m.domain
    edges = np.linspace(x_lo, x_hi, n + 1)
    idx = branch_index_left(m, edges)
    if m.boundary == "periodic":
        idx[0] = idx[-1]
    table = np.asarray(m.gamma_branches, dtype=float)
    cols = table[idx]
    gamma_cols = tuple(np.ascontiguousarray(cols[:, c]) for c in range(table.shape[1]))
    if m.diffusion_weight_index >= 0:
        weights = gamma_cols[m.diffusion_weight_index].copy()
    else:
        weights = np.ones(n + 1)

    per_branch = [sorted(m.flux_split_points(g)) for g in m.gamma_branches]
    width = max((len(k) for k in per_branch), default=0)
    knots = np.full((n + 1, max(width, 1)), np.inf)
    for b, ks in enumerate(per_branch):
        sel = idx == b
        for j, c in enumerate(ks):
            knots[sel, j] = c
    return InterfaceData(edges, idx, gamma_cols, weights, knots)


def interface_fluxes(m: ModelSpec, iface: InterfaceData, ul, ur) -> np.ndarray:
    """EO fluxes at every interface, dispatched per gamma branch."""
    out = np.empty(len(iface.branch_idx))
    for b in np.unique(iface.branch_idx):
        sel = iface.branch_idx == b
        out[sel] = _eo_branch(m, m.gamma_branches[b], ul[sel], ur[sel])
    return out


# ---------------------------------------------------------------------------
# time stepping

@dataclass(frozen=True)
class TimeRule:
    """How dt is chosen: "lambda" fixes dt = value * dx (value in time per
    length), "auto" takes value * (largest stable dt) from the CFL bound."""

    kind: str = "auto"
    value: float = 0.9

    def __post_init__(self):
        if self.kind not in ("lambda", "auto"):
            raise ConfigError(f"unknown time rule {self.kind!r}")
        if self.value <= 0.0:
            raise ConfigError("time rule value must be positive")


def cfl_numbers(m: ModelSpec, dt: float, dx: float) -> float:
    """lam * max|f_u| + mu * max A', which must stay at or below 1/2."""
    lam = dt / dx
    mu = dt / (dx * dx)
    return lam * max_flux_derivative(m) + mu * max_diffusion_derivative(m)


def cfl_dt_from_bounds(mf: float, ma: float, dx: float) -> float:
    """Largest dt with (dt/dx) mf + (dt/dx^2) ma = 1/2."""
    return dx * dx / (2.0 * (mf * dx + ma))


def resolve_dt(m: ModelSpec, rule: TimeRule, dx: float) -> float:
    if rule.kind == "lambda":
        dt = rule.value * dx
    else:
        dt = rule.value * cfl_dt_from_bounds(
            max_flux_derivative(m), max_diffusion_derivative(m), dx
        )
    if cfl_numbers(m, dt, dx) > 0.5 + 1e-9:
        raise NumericalError(
            f"time step dt={dt:.6g} violates the CFL condition on dx={dx:.6g}: "
            f"{cfl_numbers(m, dt, dx):.4f} > 0.5"
        )
    return dt


def build_schedule(t_final: float, dt: float, snapshot_times=()) -> list[tuple[float, int, float | None]]:
    """Split [0, t_final] into segments ending at snapshot times.

    Returns (dt, n_full_steps, remainder_dt) per segment, remainder None
    when the segment length is an exact multiple of dt. Every solver lane
    consumes this same list, so all runs see identical step sequences.
    """
    events = sorted({float(s) for s in snapshot_times if 0.0 < s <= t_final} | {t_final})
    segments = []
    t = 0.0
    for ev in events:
        span = ev - t
        if span <= 0.0:
            continue
        n_full = int(np.floor(span / dt + 1e-9))
        rem = span - n_full * dt
        if rem <= 1e-9 * dt:
            rem = None
        segments.append((dt, n_full, rem))
        t = ev
    return segments


# ---------------------------------------------------------------------------
# single explicit step, numpy lane

def step_uniform(m: ModelSpec, u: np.ndarray, dt: float, dx: float,
                 iface: InterfaceData) -> np.ndarray:
    """One forward Euler update of the cell averages; returns a new array."""
    n = u.size
    up = np.empty(n + 2)
    up[1:-1] = u
    if m.boundary == "periodic":
        up[0] = u[-1]
        up[-1] = u[0]
    else:
        up[0] = u[0]
        up[-1] = u[-1]
    flux = interface_fluxes(m, iface, up[:-1], up[1:])
    av = np.asarray(m.diffusion_A(up), dtype=float)
    dcur = iface.weights * (av[1:] - av[:-1])
    if m.boundary == "periodic":
        flux[0] = flux[-1]
        dcur[0] = dcur[-1]
    lam = dt / dx
    mu = dt / (dx * dx)
    return u - lam * (flux[1:] - flux[:-1]) + mu * (dcur[1:] - dcur[:-1])


# ---------------------------------------------------------------------------
# full runs

def initial_averages(m: ModelSpec, n: int) -> np.ndarray:
    """Exact cell averages of the initial data on an n-cell grid."""
    edges = np.linspace(m.domain[0], m.domain[1], n + 1)
    return cell_averages(m.initial, edges, m.initial_jumps)


@dataclass
class UniformResult:
    model: ModelSpec
    n: int
    dx: float
    dt: float
    x_centers: np.ndarray
    u: np.ndarray
    t: float
    steps: int
    snapshots: list[tuple[float, np.ndarray]] = field(default_factory=list)
    snap_walls: list[tuple[float, float]] = field(default_factory=list)
    loop_seconds: float = 0.0
    total_seconds: float = 0.0
    u_min_seen: float = np.inf
    u_max_seen: float = -np.inf


def _advance_numpy(m, u, iface, dx, seg_dt, n_steps, result):
    for _ in range(n_steps):
        u = step_uniform(m, u, seg_dt, dx, iface)
        result.u_min_seen = min(result.u_min_seen, float(u.min()))
        result.u_max_seen = max(result.u_max_seen, float(u.max()))
    result.steps += n_steps
    return u


def run_uniform(m: ModelSpec, n: int, t_final: float,
                rule: TimeRule | None = None, snapshot_times=(),
                lane: str = "fast", u0: np.ndarray | None = None) -> UniformResult:
    """March the uniform scheme to t_final, recording snapshots.

    lane="fast" uses the compiled per-family kernels, lane="numpy" the
    generic callables. Snapshot times are landed on exactly by shortening
    the last step of each segment.
    """
    if lane not in ("fast", "numpy"):
        raise ConfigError(f"unknown lane {lane!r}")
    t_start = time.perf_counter()
    x_lo, x_hi = m.domain
    dx = (x_hi - x_lo) / n
    rule = rule or TimeRule()
    dt = resolve_dt(m, rule, dx)
    check_gamma_alignment(m, 0, n)
    iface = prepare_interfaces(m, n)
    u = initial_averages(m, n) if u0 is None else np.array(u0, dtype=float)
    if u.size != n:
        raise ConfigError(f"initial state has {u.size} cells, expected {n}")
    x_centers = 0.5 * (iface.x_edges[:-1] + iface.x_edges[1:])
    result = UniformResult(m, n, dx, dt, x_centers, u, 0.0, 0)

    segments = build_schedule(t_final, dt, snapshot_times)
    snap_set = {float(s) for s in snapshot_times}

    if lane == "fast":
        from . import kernels
        stepper = kernels.uniform_stepper(m, iface, dx)
        stepper(u, 0, dt)  # warm the JIT outside the timed loop

    t = 0.0
    loop_t0 = time.perf_counter()
    for seg_dt, n_full, rem in segments:
        if lane == "numpy":
            u = _advance_numpy(m, u, iface, dx, seg_dt, n_full, result)
            if rem is not None:
                u = _advance_numpy(m, u, iface, dx, rem, 1, result)
        else:
            lo, hi = stepper(u, n_full, seg_dt)
            result.steps += n_full
            if rem is not None:
                l2, h2 = stepper(u, 1, rem)
                lo, hi = min(lo, l2), max(hi, h2)
                result.steps += 1
            result.u_min_seen = min(result.u_min_seen, lo)
            result.u_max_seen = max(result.u_max_seen, hi)
        t += seg_dt * n_full + (rem if rem is not None else 0.0)
        t_mark = min(snap_set, key=lambda s: abs(s - t), default=None)
        if t_mark is not None and abs(t_mark - t) <= 1e-9 * max(1.0, t_final):
            result.snapshots.append((t_mark, u.copy()))
            result.snap_walls.append((t_mark, time.perf_counter() - loop_t0))
    result.loop_seconds = time.perf_counter() - loop_t0
    result.u = u
    result.t = t
    result.u_min_seen = min(result.u_min_seen, float(u.min()))
    result.u_max_seen = max(result.u_max_seen, float(u.max()))
    result.total_seconds = time.perf_counter() - t_start
    return result
