"""Problem definitions for scalar conservation laws of the form

    u_t + f(gamma(x), u)_x = (gamma_1(x) A(u)_x)_x

with a vector of piecewise constant, spatially discontinuous parameters
gamma(x) and a nondecreasing, possibly strongly degenerate integrated
diffusion A(u) (A' = a >= 0, vanishing on [0, u_c]).

Two concrete model families are provided:

* a traffic model with an abruptly changing maximum speed and a
  driver-anticipation diffusion active above a critical density, and
* a clarifier-thickener (continuous sedimentation) model whose batch flux
  is multiplied by a vessel indicator and shifted by a feed transport term,
  with a power-law effective-stress diffusion above a gel concentration.

A ModelSpec bundles the callables a solver needs. All callables accept
scalars or numpy arrays. Anything outside the two families can be built by
filling a ModelSpec directly (the solvers only touch the documented
fields), which is the supported programmatic extension point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import ConfigError
from .numutil import split_integrate

__all__ = [
    "TrafficParams",
    "ClarifierParams",
    "ModelSpec",
    "FastModel",
    "build_traffic",
    "build_clarifier",
    "build_linear_advection",
    "gamma_left",
    "branch_index_left",
    "interface_gammas",
    "max_flux_derivative",
    "max_diffusion_derivative",
    "check_gamma_alignment",
]


@dataclass(frozen=True)
class TrafficParams:
    """Parameters of the circular-road traffic model.

    Densities in cars/mi, speeds in mi/h, times in h. The reduced-speed
    segment [segment[0], segment[1]] carries v_max_reduced, the rest of the
    road v_max_free. The diffusion (driver anticipation) acts for densities
    above u_c = u_max * exp(-1/c_log) and is built from the free-flow speed.
    """

    u_max: float = 220.0
    c_log: float = math.e / 7.0
    v_max_free: float = 70.0
    v_max_reduced: float = 25.0
    segment: tuple[float, float] = (0.0, 1.25)
    road: tuple[float, float] = (-5.0, 5.0)
    tau: float = 1.0 / 1800.0
    a_decel: float = 30000.0
    l_min: float = 0.05
    convoy: tuple[float, float] = (-2.0, -1.0)
    convoy_density: float = 100.0

    @property
    def u_c(self) -> float:
        return self.u_max * math.exp(-1.0 / self.c_log)


@dataclass(frozen=True)
class ClarifierParams:
    """Parameters of the clarifier-thickener model.

    The vessel occupies [x_l, x_r]; gamma_1 is its indicator. The bulk
    velocity gamma_2 equals q_l above the feed level x = 0 and q_r below.
    sigma_0 = 0 switches the effective-stress diffusion off entirely
    (ideal, non-flocculated suspension). With sigma_0 > 0 the power-law
    effective stress sigma_e = sigma_0 ((u/u_c)^beta - 1) acts for u > u_c,
    and beta and c_exp must be integers so that A(u) has a polynomial
    closed form.
    """

    v_inf: float = 6.75
    c_exp: float = 2.0
    u_max: float = 1.0
    u_f: float = 0.8
    q_l: float = -1.0
    q_r: float = 0.6
    x_l: float = -1.0
    x_r: float = 1.0
    sigma_0: float = 0.0
    u_c: float = 0.1
    beta: float = 6.0
    delta_rho: float = 1660.0
    gravity: float = 9.81
    u_init: float = 0.0
    margin: float = 1.0


@dataclass(eq=False)
class FastModel:
    """Numeric parameter pack consumed by the compiled kernels.

    family is "clarifier" or "traffic"; scalars and arrays are unpacked
    positionally by the kernels, see kernels.py.
    """

    family: str
    scalars: tuple[float, ...]
    arrays: dict[str, np.ndarray]


@dataclass(frozen=True)
class ModelSpec:
    """Everything a solver needs to know about one problem instance.

    gamma_branches[i] is the constant gamma vector on the i-th segment of
    the domain partition induced by gamma_breaks (segment 0 lies left of
    the first break). flux_critical_points returns the interior sign
    changes of flux_du for one gamma branch; flux_split_points additionally
    includes kinks, giving knots between which the flux is smooth and
    monotone (used for exact Engquist-Osher integrals and quadrature).
    """

    name: str
    u_max: float
    domain: tuple[float, float]
    boundary: str  # "periodic" | "transparent"
    gamma_breaks: tuple[float, ...]
    gamma_branches: tuple[tuple[float, ...], ...]
    gamma_field: Callable
    flux: Callable
    flux_du: Callable
    flux_critical_points: Callable
    flux_split_points: Callable
    diffusion_A: Callable
    diffusion_a: Callable
    diffusion_breaks: tuple[float, ...]
    initial: Callable
    initial_jumps: tuple[float, ...]
    params: object = None
    fast: FastModel | None = None
    # gamma component multiplying A(u)_x, or -1 for a constant weight of 1
    diffusion_weight_index: int = -1

    def __post_init__(self):
        if self.boundary not in ("periodic", "transparent"):
            raise ConfigError(f"unknown boundary kind: {self.boundary!r}")
        if len(self.gamma_branches) != len(self.gamma_breaks) + 1:
            raise ConfigError("gamma_branches must have one more entry than gamma_breaks")
        if list(self.gamma_breaks) != sorted(self.gamma_breaks):
            raise ConfigError("gamma_breaks must be sorted")


# ---------------------------------------------------------------------------
# gamma handling

def _break_tol(m: ModelSpec) -> float:
    span = m.domain[1] - m.domain[0]
    return 1e-9 * max(1.0, abs(span))


def branch_index_left(m: ModelSpec, x) -> np.ndarray:
    """Segment index whose gamma value is the left limit gamma(x-)."""
    breaks = np.asarray(m.gamma_breaks, dtype=float)
    xs = np.asarray(x, dtype=float)
    return np.searchsorted(breaks, xs - _break_tol(m), side="right")


def gamma_left(m: ModelSpec, x: float) -> tuple[float, ...]:
    """Left limit of the gamma vector at x, exact at recorded breaks."""
    return m.gamma_branches[int(branch_index_left(m, x))]


def interface_gammas(m: ModelSpec, xs: np.ndarray) -> tuple[np.ndarray, ...]:
    """Per-interface gamma component arrays, sampled at left limits."""
    idx = branch_index_left(m, xs)
    table = np.asarray(m.gamma_branches, dtype=float)  # (n_branches, n_comp)
    cols = table[idx]
    return tuple(np.ascontiguousarray(cols[:, c]) for c in range(table.shape[1]))


def check_gamma_alignment(m: ModelSpec, levels: int, n0: int) -> None:
    """Reject grids whose finest interfaces miss a gamma discontinuity.

    Every break must coincide with a level-`levels` cell interface; initial
    data jumps are exempt (exact averaging handles straddling cells).
    """
    x_lo, x_hi = m.domain
    n = n0 * (1 << levels)
    dx = (x_hi - x_lo) / n
    for b in m.gamma_breaks:
        k = (b - x_lo) / dx
        if abs(k - round(k)) > 1e-6:
            raise ConfigError(
                f"gamma discontinuity at x={b} does not align with the level-"
                f"{levels} grid (dx={dx}); adjust domain or breaks"
            )


# ---------------------------------------------------------------------------
# derivative bounds

def _sampled_max(fn: Callable, knots, lo: float, hi: float) -> float:
    base = np.linspace(lo, hi, 4097)
    pts = [base]
    w = (hi - lo) / 4096.0
    eps = 1e-9 * (hi - lo)  # capture one-sided limits at kinks
    for c in knots:
        if lo <= c <= hi:
            pts.append(np.clip(c + np.linspace(-w, w, 65), lo, hi))
            pts.append(np.clip(np.array([c - eps, c, c + eps]), lo, hi))
    u = np.concatenate(pts)
    return float(np.max(np.abs(fn(u))))


@lru_cache(maxsize=64)
def max_flux_derivative(m: ModelSpec) -> float:
    """Upper bound on sup |f_u| over all gamma branches and u in [0, u_max].

    Dense sampling refined around the flux split points, then inflated by
    1 percent to make the bound safe for CFL checks.
    """
    best = 0.0
    for g in m.gamma_branches:
        knots = m.flux_split_points(g)
        best = max(best, _sampled_max(lambda u: m.flux_du(g, u), knots, 0.0, m.u_max))
    return 1.01 * best


@lru_cache(maxsize=64)
def max_diffusion_derivative(m: ModelSpec) -> float:
    """sup A'(u) = sup a(u) over [0, u_max], by refined dense sampling."""
    return _sampled_max(m.diffusion_a, m.diffusion_breaks, 0.0, m.u_max)


# ---------------------------------------------------------------------------
# traffic family

def _traffic_velocity(p: TrafficParams, u: np.ndarray) -> np.ndarray:
    """Dimensionless speed factor V(u) = min(1, c_log * ln(u_max/u))."""
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = p.c_log * np.log(p.u_max / np.where(u > 0.0, u, 1.0))
    return np.minimum(1.0, np.where(u > 0.0, logs, 1.0))


def traffic_flux(p: TrafficParams, vmax: float, u):
    """f = vmax * u * V(u) inside (0, u_max), zero outside."""
    u = np.asarray(u, dtype=float)
    inside = (u > 0.0) & (u < p.u_max)
    f = vmax * u * _traffic_velocity(p, u)
    return np.where(inside, f, 0.0)


def traffic_flux_du(p: TrafficParams, vmax: float, u):
    """df/du with interior one-sided values at 0, u_c and u_max."""
    u = np.asarray(u, dtype=float)
    uc = p.u_c
    with np.errstate(divide="ignore", invalid="ignore"):
        congested = p.c_log * (np.log(p.u_max / np.where(u > 0.0, u, 1.0)) - 1.0)
    out = np.where(
        (u >= 0.0) & (u <= uc),
        vmax,
        np.where((u > uc) & (u <= p.u_max), vmax * congested, 0.0),
    )
    return out


def _traffic_a(p: TrafficParams, u):
    """Anticipation diffusion coefficient a(u), active above u_c.

    a(u) = v0 C (L_a(u) - tau v0 C) with L_a = max(v(u)^2/(2 a_decel), l_min)
    and v(u) = v0 C ln(u_max/u); v0 is the free-flow speed.
    """
    u = np.asarray(u, dtype=float)
    v0c = p.v_max_free * p.c_log
    with np.errstate(divide="ignore", invalid="ignore"):
        v = v0c * np.log(p.u_max / np.where(u > 0.0, u, 1.0))
    l_a = np.maximum(v * v / (2.0 * p.a_decel), p.l_min)
    a = v0c * (l_a - p.tau * p.v_max_free * p.c_log)
    return np.where((u > p.u_c) & (u <= p.u_max), a, 0.0)


def _traffic_diffusion_breaks(p: TrafficParams) -> tuple[float, ...]:
    """Kinks of the traffic a(u): activation at u_c, braking-distance switch."""
    pts = [p.u_c]
    v_star = math.sqrt(2.0 * p.a_decel * p.l_min)
    v0c = p.v_max_free * p.c_log
    # density where v(u)^2 / (2 a_decel) crosses l_min
    u_star = p.u_max * math.exp(-v_star / v0c)
    if p.u_c < u_star < p.u_max:
        pts.append(u_star)
    return tuple(sorted(q for q in pts if 0.0 < q < p.u_max))


@lru_cache(maxsize=16)
def _traffic_table(p: TrafficParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cumulative A(u) lookup table (4097 nodes, adaptive Simpson segments)."""
    n = 4096
    grid = np.linspace(0.0, p.u_max, n + 1)
    breaks = _traffic_diffusion_breaks(p)

    def a_scalar(u):
        return float(_traffic_a(p, u))

    table = np.empty(n + 1)
    table[0] = 0.0
    for k in range(n):
        table[k + 1] = table[k] + split_integrate(
            a_scalar, grid[k], grid[k + 1], breaks, tol=1e-12
        )
    if np.any(np.diff(table) < -1e-12):
        raise ConfigError("traffic A(u) table is not nondecreasing")
    slope = np.diff(table) / np.diff(grid)
    return grid, table, slope


def _traffic_A(p: TrafficParams, u):
    grid, table, slope = _traffic_table(p)
    uu = np.clip(np.asarray(u, dtype=float), 0.0, p.u_max)
    du = grid[1] - grid[0]
    idx = np.clip((uu / du).astype(np.int64), 0, slope.size - 1)
    return table[idx] + (uu - grid[idx]) * slope[idx]


def _validate_traffic(p: TrafficParams) -> None:
    if not (0.0 < p.c_log):
        raise ConfigError("c_log must be positive")
    if p.u_max <= 0 or p.v_max_free <= 0 or p.v_max_reduced <= 0:
        raise ConfigError("u_max and speeds must be positive")
    if not (p.road[0] < p.segment[0] < p.segment[1] < p.road[1]):
        raise ConfigError("reduced segment must lie strictly inside the road")
    floor = p.tau * p.v_max_free * p.c_log
    if p.l_min <= floor:
        raise ConfigError(
            f"anticipation diffusion would be negative: l_min={p.l_min} must "
            f"exceed tau*v0*C={floor:.6g}"
        )


def build_traffic(p: TrafficParams | None = None) -> ModelSpec:
    """Traffic model on a circular road; gamma = (v_max(x),)."""
    p = p or TrafficParams()
    _validate_traffic(p)
    a, b = p.segment
    branches = ((p.v_max_free,), (p.v_max_reduced,), (p.v_max_free,))
    breaks = (a, b)

    def gamma_field(x):
        return (p.v_max_reduced,) if a <= x <= b else (p.v_max_free,)

    def flux(gamma, u):
        return traffic_flux(p, gamma[0], u)

    def flux_du(gamma, u):
        return traffic_flux_du(p, gamma[0], u)

    crit = (p.u_max / math.e,)
    split = tuple(sorted((p.u_c, p.u_max / math.e)))

    c_lo, c_hi = p.convoy

    def initial(x):
        return np.where(
            (np.asarray(x, dtype=float) >= c_lo) & (np.asarray(x, dtype=float) <= c_hi),
            p.convoy_density,
            0.0,
        )

    grid, table, slope = _traffic_table(p)
    fast = FastModel(
        family="traffic",
        scalars=(p.u_max, p.c_log, p.u_c, grid[1] - grid[0]),
        arrays={"a_grid": grid, "a_table": table, "a_slope": slope},
    )
    return ModelSpec(
        name="traffic",
        u_max=p.u_max,
        domain=p.road,
        boundary="periodic",
        gamma_breaks=breaks,
        gamma_branches=branches,
        gamma_field=gamma_field,
        flux=flux,
        flux_du=flux_du,
        flux_critical_points=lambda gamma: crit,
        flux_split_points=lambda gamma: split,
        diffusion_A=lambda u: _traffic_A(p, u),
        diffusion_a=lambda u: _traffic_a(p, u),
        diffusion_breaks=_traffic_diffusion_breaks(p),
        initial=initial,
        initial_jumps=(c_lo, c_hi),
        params=p,
        fast=fast,
    )


# ---------------------------------------------------------------------------
# clarifier-thickener family

def clarifier_batch_flux(p: ClarifierParams, u):
    """Batch settling flux v_inf * u * (1-u)^c_exp inside (0, u_max)."""
    u = np.asarray(u, dtype=float)
    inside = (u > 0.0) & (u < p.u_max)
    base = np.where(inside, 1.0 - u, 0.0)
    return np.where(inside, p.v_inf * u * base**p.c_exp, 0.0)


def clarifier_batch_flux_du(p: ClarifierParams, u):
    u = np.asarray(u, dtype=float)
    onu = np.clip(1.0 - u, 0.0, None)
    d = p.v_inf * (onu**p.c_exp - p.c_exp * u * onu ** (p.c_exp - 1.0))
    return np.where((u >= 0.0) & (u <= p.u_max), d, 0.0)


def clarifier_flux(p: ClarifierParams, gamma, u):
    """Full flux gamma_2 (u - u_f) + gamma_1 * batch_flux(u)."""
    g1, g2 = gamma
    return g2 * (np.asarray(u, dtype=float) - p.u_f) + g1 * clarifier_batch_flux(p, u)


def clarifier_flux_du(p: ClarifierParams, gamma, u):
    g1, g2 = gamma
    return g2 + g1 * clarifier_batch_flux_du(p, u)


def _clarifier_crit(p: ClarifierParams, gamma) -> tuple[float, ...]:
    """Interior sign changes of the composite flux derivative, by scan+bisect."""
    us = np.linspace(0.0, p.u_max, 2049)
    d = np.asarray(clarifier_flux_du(p, gamma, us))
    s = np.sign(d)
    roots = []
    for k in np.flatnonzero(s[:-1] * s[1:] < 0.0):
        lo, hi = us[k], us[k + 1]
        flo = float(clarifier_flux_du(p, gamma, lo))
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            fm = float(clarifier_flux_du(p, gamma, mid))
            if flo * fm <= 0.0:
                hi = mid
            else:
                lo, flo = mid, fm
        roots.append(0.5 * (lo + hi))
    return tuple(roots)


@lru_cache(maxsize=16)
def _clarifier_apoly(p: ClarifierParams) -> tuple[np.ndarray, float]:
    """Closed-form polynomial A(u) = K * int_{u_c}^u s^(beta-1) (1-s)^C ds.

    Returns coefficients (low power first) of the antiderivative shifted so
    it vanishes at u_c, plus the scale K. Requires integer beta and c_exp.
    """
    beta = int(round(p.beta))
    cexp = int(round(p.c_exp))
    if abs(beta - p.beta) > 0 or abs(cexp - p.c_exp) > 0 or beta < 1 or cexp < 1:
        raise ConfigError("diffusive clarifier models need integer beta and c_exp >= 1")
    if p.u_max != 1.0:
        raise ConfigError("diffusive clarifier models are formulated for u_max = 1")
    if not (0.0 < p.u_c < p.u_max):
        raise ConfigError("gel concentration u_c must lie in (0, u_max)")
    k_scale = p.v_inf * p.sigma_0 * beta / (p.delta_rho * p.gravity * p.u_c**beta)
    coeffs = np.zeros(beta + cexp + 1)
    for k in range(cexp + 1):
        coeffs[beta + k] = k_scale * math.comb(cexp, k) * (-1.0) ** k / (beta + k)
    shift = float(np.polynomial.polynomial.polyval(p.u_c, coeffs))
    coeffs[0] = -shift
    return coeffs, k_scale


def _clarifier_a(p: ClarifierParams, u):
    if p.sigma_0 == 0.0:
        return np.zeros_like(np.asarray(u, dtype=float))
    _, k_scale = _clarifier_apoly(p)
    uu = np.asarray(u, dtype=float)
    val = k_scale * uu ** (p.beta - 1.0) * np.clip(1.0 - uu, 0.0, None) ** p.c_exp
    return np.where((uu > p.u_c) & (uu <= p.u_max), val, 0.0)


def _clarifier_A(p: ClarifierParams, u):
    uu = np.asarray(u, dtype=float)
    if p.sigma_0 == 0.0:
        return np.zeros_like(uu)
    coeffs, _ = _clarifier_apoly(p)
    val = np.polynomial.polynomial.polyval(np.clip(uu, 0.0, p.u_max), coeffs)
    return np.where(uu > p.u_c, val, 0.0)


def _validate_clarifier(p: ClarifierParams) -> None:
    if not (p.x_l < 0.0 < p.x_r):
        raise ConfigError("the feed level x=0 must lie inside the vessel (x_l, x_r)")
    if not (0.0 <= p.u_f <= p.u_max):
        raise ConfigError("feed concentration u_f must lie in [0, u_max]")
    if p.q_l > 0.0 or p.q_r < 0.0:
        raise ConfigError("expected q_l <= 0 (upward overflow) and q_r >= 0 (downward underflow)")
    if p.c_exp < 1.0:
        raise ConfigError("c_exp must be >= 1 for a bounded flux derivative")
    if p.v_inf < 0.0 or p.sigma_0 < 0.0:
        raise ConfigError("v_inf and sigma_0 must be nonnegative")
    if p.margin <= 0.0:
        raise ConfigError("domain margin must be positive")
    if p.sigma_0 > 0.0:
        _clarifier_apoly(p)  # validates integer exponents


def build_clarifier(p: ClarifierParams | None = None) -> ModelSpec:
    """Clarifier-thickener model; gamma = (gamma_1, gamma_2)."""
    p = p or ClarifierParams()
    _validate_clarifier(p)
    breaks = (p.x_l, 0.0, p.x_r)
    branches = (
        (0.0, p.q_l),
        (1.0, p.q_l),
        (1.0, p.q_r),
        (0.0, p.q_r),
    )

    def gamma_field(x):
        g1 = 1.0 if p.x_l < x < p.x_r else 0.0
        g2 = p.q_l if x <= 0.0 else p.q_r
        return (g1, g2)

    def initial(x):
        xs = np.asarray(x, dtype=float)
        return np.where((xs >= p.x_l) & (xs <= p.x_r), p.u_init, 0.0)

    initial_jumps = (p.x_l, p.x_r) if p.u_init != 0.0 else ()

    if p.sigma_0 > 0.0:
        coeffs, _ = _clarifier_apoly(p)
        apoly_high_first = np.ascontiguousarray(coeffs[::-1])
        gel = p.u_c
        diffusion_breaks = (p.u_c,)
    else:
        apoly_high_first = np.zeros(1)
        gel = np.inf
        diffusion_breaks = ()

    fast = FastModel(
        family="clarifier",
        scalars=(p.u_f, p.v_inf, p.c_exp, p.u_max, gel),
        arrays={"a_poly": apoly_high_first},
    )
    return ModelSpec(
        name="clarifier",
        u_max=p.u_max,
        domain=(p.x_l - p.margin, p.x_r + p.margin),
        boundary="transparent",
        gamma_breaks=breaks,
        gamma_branches=branches,
        gamma_field=gamma_field,
        flux=lambda gamma, u: clarifier_flux(p, gamma, u),
        flux_du=lambda gamma, u: clarifier_flux_du(p, gamma, u),
        flux_critical_points=lambda gamma: _clarifier_crit(p, gamma),
        flux_split_points=lambda gamma: _clarifier_crit(p, gamma),
        diffusion_A=lambda u: _clarifier_A(p, u),
        diffusion_a=lambda u: _clarifier_a(p, u),
        diffusion_breaks=diffusion_breaks,
        initial=initial,
        initial_jumps=initial_jumps,
        params=p,
        fast=fast,
        diffusion_weight_index=0,
    )


def build_linear_advection(speed: float = 1.0, domain=(-2.0, 2.0)) -> ModelSpec:
    """Constant-speed advection f = speed * u, as a degenerate clarifier.

    Used for analytic oracles: gamma_1 = 0 everywhere kills the batch flux
    and u_f = 0 reduces the transport term to speed * u.
    """

    def gamma_field(x):
        return (0.0, speed)

    def initial(x):
        xs = np.asarray(x, dtype=float)
        return np.where((xs >= -1.0) & (xs <= 0.0), 0.5, 0.0)

    fast = FastModel(
        family="clarifier",
        scalars=(0.0, 0.0, 2.0, 1.0, np.inf),
        arrays={"a_poly": np.zeros(1)},
    )
    zero = lambda u: np.zeros_like(np.asarray(u, dtype=float))
    return ModelSpec(
        name="linear-advection",
        u_max=1.0,
        domain=domain,
        boundary="transparent",
        gamma_breaks=(),
        gamma_branches=((0.0, speed),),
        gamma_field=gamma_field,
        flux=lambda gamma, u: gamma[1] * np.asarray(u, dtype=float),
        flux_du=lambda gamma, u: np.full_like(np.asarray(u, dtype=float), gamma[1]),
        flux_critical_points=lambda gamma: (),
        flux_split_points=lambda gamma: (),
        diffusion_A=zero,
        diffusion_a=zero,
        diffusion_breaks=(),
        initial=initial,
        initial_jumps=(-1.0, 0.0),
        params=None,
        fast=fast,
    )
