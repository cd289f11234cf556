"""Experiment harness: compression rate, speed-up, error norms against
projected references, cached reference runs, convergence studies, and
the CSV/JSON/NDJSON report formats.

Error convention: the reference is averaged down onto the leaf mesh
(exact pairwise means, so the projection conserves mass), then the
discrete norms are width-weighted over the domain measure and divided by
u_max; the max norm is only divided by u_max. All errors are
dimensionless.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericalError
from .fvcore import TimeRule, UniformResult, resolve_dt, run_uniform
from .models import ModelSpec
from .mrsolver import LeafSnapshot, MRResult, run_mr
from .mrtree import GradedTree

__all__ = [
    "MetricsReport",
    "compare_solvers",
    "compression_rate",
    "convergence_study",
    "error_norms",
    "error_norms_fine",
    "eta_from_ndjson",
    "reference_solution",
    "scaled_epsilon",
    "snapshot_error_norms",
    "speedup",
    "tree_compression",
    "write_metrics_csv",
    "write_metrics_json",
    "write_tree_ndjson",
]


# ---------------------------------------------------------------------------
# scalar metrics

def compression_rate(n_fine: int, n0: int, leaf_count: int) -> float:
    """Finest cell count over (root count + leaf count)."""
    if leaf_count < 1:
        raise ConfigError("leaf_count must be positive")
    return n_fine / (n0 + leaf_count)


def tree_compression(tree: GradedTree) -> float:
    return compression_rate(tree.n_fine, tree.n0, tree.leaf_count)


def speedup(fv_seconds: float, mr_seconds: float) -> float:
    """Wall-clock ratio; > 1 means the adaptive run was faster."""
    if mr_seconds <= 0.0:
        raise ConfigError("speed-up undefined for nonpositive MR duration")
    return fv_seconds / mr_seconds


def scaled_epsilon(eps_ref: float, levels_ref: int, levels: int,
                   parabolic: bool, alpha: float = 1.0) -> float:
    """Threshold transferred between finest levels so the thresholding
    error tracks the scheme's discretization error: rate alpha for purely
    hyperbolic problems, alpha + 1 when degenerate diffusion is active."""
    rate = alpha + 1.0 if parabolic else alpha
    return eps_ref * 2.0 ** (-rate * (levels - levels_ref))


# ---------------------------------------------------------------------------
# error norms against a finer uniform reference

def _reference_pyramid(ref: np.ndarray, n0: int):
    """Pairwise-mean pyramid from the reference down to level 0; pyr[l]
    holds the exact averages of the reference on level l of the tree."""
    ref = np.asarray(ref, dtype=np.float64)
    if ref.size % n0:
        raise ConfigError("reference length is not a multiple of the root count")
    depth = int(ref.size // n0).bit_length() - 1
    if n0 << depth != ref.size:
        raise ConfigError("reference length must be n0 times a power of two")
    pyr = [None] * (depth + 1)
    pyr[depth] = ref
    for l in range(depth, 0, -1):
        pyr[l - 1] = 0.5 * (pyr[l][::2] + pyr[l][1::2])
    return pyr


def error_norms(lev, col, val, ref: np.ndarray, n0: int, u_max: float):
    """Normalized (L1, L2, Linf) of leaf values against the projected
    reference. Leaf widths are taken relative to the domain measure, so
    no physical length is needed."""
    pyr = _reference_pyramid(ref, n0)
    lev = np.asarray(lev)
    col = np.asarray(col)
    val = np.asarray(val, dtype=np.float64)
    if lev.size and lev.max() >= len(pyr):
        raise ConfigError("reference is coarser than the finest leaf level")
    e = np.empty(val.size)
    for l in np.unique(lev):
        sel = lev == l
        e[sel] = val[sel] - pyr[l][col[sel]]
    w = 1.0 / (n0 << lev.astype(np.int64))  # width / domain measure
    l1 = float(np.sum(w * np.abs(e)))
    l2 = float(np.sqrt(np.sum(w * e * e)))
    linf = float(np.abs(e).max()) if e.size else 0.0
    return l1 / u_max, l2 / u_max, linf / u_max


def error_norms_fine(u: np.ndarray, ref: np.ndarray, u_max: float):
    """Same norms for a uniform solution of n0 * 2^l cells."""
    u = np.asarray(u, dtype=np.float64)
    n = u.size
    l = (n & -n).bit_length() - 1  # largest power of two dividing n
    n0 = n >> l
    lev = np.full(n, l, dtype=np.int64)
    return error_norms(lev, np.arange(n), u, ref, n0, u_max)


def snapshot_error_norms(snap: LeafSnapshot, ref: np.ndarray, n0: int,
                         u_max: float):
    return error_norms(snap.levels, snap.cols, snap.values, ref, n0, u_max)


# ---------------------------------------------------------------------------
# cached reference runs

def _cache_dir() -> Path:
    env = os.environ.get("MRFV_CACHE_DIR")
    if env:
        return Path(env)
    base = os.environ.get("XDG_CACHE_HOME") or (Path.home() / ".cache")
    return Path(base) / "mrfv"


def run_fingerprint(m: ModelSpec, n: int, t_final: float, rule: TimeRule,
                    snapshot_times=()) -> str:
    blob = json.dumps({
        "model": m.name,
        "params": dataclasses.asdict(m.params) if m.params else None,
        "n": n,
        "t_final": t_final,
        "rule": [rule.kind, rule.value],
        "snapshots": sorted(float(s) for s in snapshot_times),
        "scheme": "eo-fv-1",
    }, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _reference_rule(m: ModelSpec, rule: TimeRule | None, n: int) -> TimeRule:
    """Fixed-lambda rules from the benchmark presets usually break the
    parabolic CFL bound at reference resolution (dt scales with dx, the
    diffusion limit with dx^2); fall back to an auto step there."""
    rule = rule or TimeRule()
    dx = (m.domain[1] - m.domain[0]) / n
    try:
        resolve_dt(m, rule, dx)
        return rule
    except NumericalError:
        return TimeRule("auto", 0.9)


def reference_solution(m: ModelSpec, n: int, t_final: float,
                       rule: TimeRule | None = None, snapshot_times=(),
                       lane: str = "fast", cache: bool = True):
    """Uniform solution at the requested output times, disk-cached.

    Returns a dict {time: cell averages}; t_final is always included.
    The step rule falls back to an auto CFL step when the requested rule
    is infeasible at this resolution. Cache location: MRFV_CACHE_DIR,
    else the user cache directory.
    """
    rule = _reference_rule(m, rule, n)
    times = sorted({float(s) for s in snapshot_times} | {float(t_final)})
    key = run_fingerprint(m, n, t_final, rule, times)
    path = _cache_dir() / f"ref-{key[:24]}.npz"
    if cache and path.exists():
        with np.load(path) as dat:
            return {float(t): u for t, u in zip(dat["times"], dat["fields"])}
    res = run_uniform(m, n, t_final, rule, snapshot_times=times, lane=lane)
    got = {float(t): u for t, u in res.snapshots}
    missing = [t for t in times if t not in got]
    if missing:
        raise ConfigError(f"reference run missed output times {missing}")
    if cache:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp.npz")
        np.savez(tmp, times=np.array(times),
                 fields=np.stack([got[t] for t in times]))
        os.replace(tmp, path)
    return got


# ---------------------------------------------------------------------------
# one-line metrics record per output time

@dataclass
class MetricsReport:
    t_final: float
    eta: float
    v: float            # speed-up including MR initialization overhead
    v_loop: float       # evolution loops only
    err_l1: float
    err_l2: float
    err_linf: float
    leaf_count: int
    n_fine: int
    n0: int
    mr_loop_seconds: float
    mr_total_seconds: float
    fv_loop_seconds: float

    def validate(self) -> None:
        floor = self.n_fine / (self.n0 + self.n_fine)
        if self.eta < floor - 1e-12:
            raise ConfigError(f"eta {self.eta} below full-tree floor {floor}")
        for v in (self.err_l1, self.err_l2, self.err_linf):
            if not (np.isnan(v) or v >= 0.0):
                raise ConfigError("negative error norm")


def compare_solvers(m: ModelSpec, levels: int, epsilon: float, t_final: float,
                    rule: TimeRule | None = None, snapshot_times=(),
                    n0: int = 1, lane: str = "fast", reference=None):
    """Run both solvers at the same level and step, and report one
    metrics row per output time (t_final always included).

    reference is an optional {time: finer uniform field} dict; without it
    the error columns are NaN. Returns (reports, fv_result, mr_result).
    """
    times = sorted({float(s) for s in snapshot_times} | {float(t_final)})
    fv = run_uniform(m, n0 << levels, t_final, rule, snapshot_times=times,
                     lane=lane)
    mr = run_mr(m, levels, epsilon, t_final, rule, snapshot_times=times,
                lane=lane, n0=n0)
    fv_walls = dict(fv.snap_walls)
    mr_walls = dict(mr.snap_walls)
    mr_init = mr.total_seconds - mr.loop_seconds
    tol = 1e-9 * max(1.0, t_final)
    reports = []
    for t, snap in mr.snapshots:
        if reference is not None:
            tr = min(reference, key=lambda s: abs(s - t))
            if abs(tr - t) > tol:
                raise ConfigError(f"no reference field at time {t}")
            errs = snapshot_error_norms(snap, reference[tr], n0, m.u_max)
        else:
            errs = (float("nan"),) * 3
        rep = MetricsReport(
            t_final=t,
            eta=compression_rate(mr.n_fine, n0, snap.n_leaves),
            v=speedup(fv_walls[t], mr_walls[t] + mr_init),
            v_loop=speedup(fv_walls[t], mr_walls[t]),
            err_l1=errs[0], err_l2=errs[1], err_linf=errs[2],
            leaf_count=snap.n_leaves,
            n_fine=mr.n_fine,
            n0=n0,
            mr_loop_seconds=mr_walls[t],
            mr_total_seconds=mr_walls[t] + mr_init,
            fv_loop_seconds=fv_walls[t],
        )
        rep.validate()
        reports.append(rep)
    return reports, fv, mr


# ---------------------------------------------------------------------------
# convergence study

@dataclass
class ConvergenceResult:
    levels: list[int]
    fv_l1: list[float]
    mr_l1: list[float]
    fv_slope: float
    mr_slope: float
    epsilons: list[float]

    @property
    def slope_gap(self) -> float:
        return abs(self.fv_slope - self.mr_slope)


def _fit_slope(levels, errors) -> float:
    """Least-squares decay rate: err ~ 2^(-slope * L)."""
    y = np.log2(np.asarray(errors, dtype=np.float64))
    if not np.all(np.isfinite(y)):
        return float("nan")
    return float(-np.polyfit(np.asarray(levels, dtype=np.float64), y, 1)[0])


def convergence_study(m: ModelSpec, levels_list, reference_level: int,
                      epsilon_ref: float, t_final: float,
                      rule: TimeRule | None = None, parabolic: bool = True,
                      alpha: float = 1.0, n0: int = 1, lane: str = "fast",
                      cache: bool = True) -> ConvergenceResult:
    """L1 errors of both solvers at several levels against one cached
    uniform reference, with fitted decay rates per level.

    epsilon_ref is the threshold at the finest requested level; coarser
    levels scale it up by the standard rate so the MR error stays
    proportional to the discretization error.
    """
    levels_list = sorted(int(l) for l in levels_list)
    if reference_level <= levels_list[-1]:
        raise ConfigError("reference level must exceed every study level")
    ref = reference_solution(m, n0 << reference_level, t_final, rule,
                             lane=lane, cache=cache)[float(t_final)]
    fv_l1, mr_l1, eps_used = [], [], []
    top = levels_list[-1]
    for L in levels_list:
        eps = scaled_epsilon(epsilon_ref, top, L, parabolic, alpha)
        fv = run_uniform(m, n0 << L, t_final, rule, lane=lane)
        mr = run_mr(m, L, eps, t_final, rule, lane=lane, n0=n0)
        fv_l1.append(error_norms_fine(fv.u, ref, m.u_max)[0])
        lev, col, val, _, _ = mr.tree.leaf_data()
        mr_l1.append(error_norms(lev, col, val, ref, n0, m.u_max)[0])
        eps_used.append(eps)
    return ConvergenceResult(
        levels=levels_list, fv_l1=fv_l1, mr_l1=mr_l1,
        fv_slope=_fit_slope(levels_list, fv_l1),
        mr_slope=_fit_slope(levels_list, mr_l1),
        epsilons=eps_used)


# ---------------------------------------------------------------------------
# report files

_CSV_HEADER = "t_final,V,eta,err_l1,err_l2,err_linf\n"


def write_metrics_csv(reports, path) -> None:
    """Table-style rows, shortest round-trip float formatting."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_CSV_HEADER)
        for r in reports:
            fh.write(",".join(repr(float(x)) for x in
                              (r.t_final, r.v, r.eta, r.err_l1, r.err_l2,
                               r.err_linf)) + "\n")


def write_metrics_json(reports, path, config: dict) -> None:
    """Sidecar with full timings and the run configuration."""
    payload = {
        "config": config,
        "rows": [dataclasses.asdict(r) for r in reports],
        "written_unix": int(time.time()),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_tree_ndjson(tree: GradedTree, path) -> None:
    """One record per real or phantom node, coarse to fine."""
    with open(path, "w", encoding="utf-8") as fh:
        for level, index, kind, value, detail in tree.nodes():
            fh.write(json.dumps({
                "level": int(level), "index": int(index), "kind": kind,
                "average": float(value), "detail": float(detail)}) + "\n")


def eta_from_ndjson(path, levels: int, n0: int = 1) -> float:
    """Compression rate recomputed from a dumped tree."""
    leaves = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip() and json.loads(line)["kind"] == "leaf":
                leaves += 1
    return compression_rate(n0 << levels, n0, leaves)
