"""Command-line front end: preset selection, config overrides, run
orchestration, and the CSV/NDJSON/JSON artifacts.

Artifact layout under --out (all floats in shortest round-trip decimal,
so reruns of the same config produce byte-identical CSVs; wall-clock
numbers live only in the JSON sidecars):

  u-NNN.csv        x,u           fine-grid reconstruction at snapshot NNN
  leaves-NNN.csv   x_center,level   leaf partition at snapshot NNN (mr)
  u-final.csv      x,u           state at t_final
  leaves-final.csv, tree-final.ndjson   final tree (mr)
  run.json         config echo, step counts, extrema, timings
  metrics.csv/.json   per-output-time eta, V, errors (compare mode)
  levels.csv, slopes.json         convergence study output
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericalError
from .fvcore import run_uniform
from .harness import (compare_solvers, convergence_study, reference_solution,
                      tree_compression, write_metrics_csv, write_metrics_json,
                      write_tree_ndjson)
from .models import max_diffusion_derivative
from .mrsolver import run_mr
from .mrtree import reconstruct_from_leaves
from .presets import (RunConfig, emit_config, get_preset, parse_config,
                      preset_names, reference_tolerance)

__all__ = ["main"]


def _write_xy_csv(path: Path, header: str, xs, ys) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for x, y in zip(xs, ys):
            fh.write(f"{float(x)!r},{float(y)!r}\n")


def _write_leaf_csv(path: Path, centers, levels) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("x_center,level\n")
        for c, l in zip(centers, levels):
            fh.write(f"{float(c)!r},{int(l)}\n")


def _fine_centers(m, n: int) -> np.ndarray:
    lo, hi = m.domain
    dx = (hi - lo) / n
    return lo + (np.arange(n) + 0.5) * dx


def _mr_bundle(out: Path, tag: str, cfg: RunConfig, m, lev, col, val, ctr):
    u = reconstruct_from_leaves(lev, col, val, cfg.n0, cfg.levels,
                                m.boundary == "periodic")
    _write_xy_csv(out / f"u-{tag}.csv", "x,u", _fine_centers(m, cfg.n_fine), u)
    _write_leaf_csv(out / f"leaves-{tag}.csv", ctr, lev)


def _dump_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _run_mr_artifacts(out: Path, cfg: RunConfig, m, eps: float) -> dict:
    res = run_mr(m, cfg.levels, eps, cfg.t_final, cfg.time_rule,
                 cfg.snapshot_times, lane=cfg.lane, n0=cfg.n0)
    for i, (t, snap) in enumerate(res.snapshots):
        _mr_bundle(out, f"{i:03d}", cfg, m, snap.levels, snap.cols,
                   snap.values, snap.centers)
    lev, col, val, ctr, _ = res.tree.leaf_data()
    _mr_bundle(out, "final", cfg, m, lev, col, val, ctr)
    write_tree_ndjson(res.tree, out / "tree-final.ndjson")
    print(f"mr: {res.steps} steps, {res.tree.leaf_count} leaves, "
          f"eta={tree_compression(res.tree):.3f}, "
          f"loop {res.loop_seconds:.3f}s")
    return {
        "solver": "mr", "epsilon": eps, "steps": res.steps, "dt": res.dt,
        "snapshot_times": [t for t, _ in res.snapshots],
        "leaf_count": res.tree.leaf_count,
        "eta": tree_compression(res.tree),
        "u_min_seen": res.u_min_seen, "u_max_seen": res.u_max_seen,
        "mass_initial": res.mass_initial, "mass_final": res.mass_final,
        "clamp_count": res.clamp_count,
        "loop_seconds": res.loop_seconds,
        "total_seconds": res.total_seconds,
    }


def _run_uniform_artifacts(out: Path, cfg: RunConfig, m) -> dict:
    res = run_uniform(m, cfg.n_fine, cfg.t_final, cfg.time_rule,
                      snapshot_times=cfg.snapshot_times, lane=cfg.lane)
    x = _fine_centers(m, cfg.n_fine)
    for i, (t, u) in enumerate(res.snapshots):
        _write_xy_csv(out / f"u-{i:03d}.csv", "x,u", x, u)
    _write_xy_csv(out / "u-final.csv", "x,u", x, res.u)
    print(f"uniform: {res.steps} steps on {res.n} cells, "
          f"loop {res.loop_seconds:.3f}s")
    return {
        "solver": "uniform", "steps": res.steps, "dt": res.dt,
        "snapshot_times": [t for t, _ in res.snapshots],
        "u_min_seen": res.u_min_seen, "u_max_seen": res.u_max_seen,
        "loop_seconds": res.loop_seconds,
        "total_seconds": res.total_seconds,
    }


def _run_compare_artifacts(out: Path, cfg: RunConfig, m, eps: float,
                           reference_level: int | None) -> dict:
    reference = None
    if reference_level is not None:
        if reference_level <= cfg.levels:
            raise ConfigError("reference level must exceed the run level")
        reference = reference_solution(
            m, cfg.n0 << reference_level, cfg.t_final, cfg.time_rule,
            snapshot_times=cfg.snapshot_times, lane=cfg.lane)
    reports, fv, mr = compare_solvers(
        m, cfg.levels, eps, cfg.t_final, cfg.time_rule, cfg.snapshot_times,
        n0=cfg.n0, lane=cfg.lane, reference=reference)
    write_metrics_csv(reports, out / "metrics.csv")
    write_metrics_json(reports, out / "metrics.json",
                       {"run": emit_config(cfg), "epsilon": eps,
                        "reference_level": reference_level})
    for i, (t, snap) in enumerate(mr.snapshots):
        _mr_bundle(out, f"{i:03d}", cfg, m, snap.levels, snap.cols,
                   snap.values, snap.centers)
    lev, col, val, ctr, _ = mr.tree.leaf_data()
    _mr_bundle(out, "final", cfg, m, lev, col, val, ctr)
    write_tree_ndjson(mr.tree, out / "tree-final.ndjson")
    _write_xy_csv(out / "u-final-fv.csv", "x,u",
                  _fine_centers(m, cfg.n_fine), fv.u)
    for r in reports:
        print(f"t={r.t_final:g}: eta={r.eta:.3f} V={r.v:.2f} "
              f"l1={r.err_l1:.3e}")
    return {
        "solver": "compare", "epsilon": eps,
        "reference_level": reference_level,
        "steps": mr.steps, "dt": mr.dt,
        "leaf_count": mr.tree.leaf_count,
        "mr_loop_seconds": mr.loop_seconds,
        "mr_total_seconds": mr.total_seconds,
        "fv_loop_seconds": fv.loop_seconds,
        "fv_total_seconds": fv.total_seconds,
        "clamp_count": mr.clamp_count,
    }


def cmd_run(cfg: RunConfig, reference_level: int | None = None) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    m = cfg.build_model()
    eps = cfg.resolved_epsilon(m)
    if cfg.solver == "uniform":
        info = _run_uniform_artifacts(out, cfg, m)
    elif cfg.solver == "mr":
        info = _run_mr_artifacts(out, cfg, m, eps)
    else:
        info = _run_compare_artifacts(out, cfg, m, eps, reference_level)
    info["config"] = emit_config(cfg)
    info["written_unix"] = time.time()
    _dump_json(out / "run.json", info)
    print(f"artifacts in {out}")
    return 0


def cmd_convergence(cfg: RunConfig, levels_list, reference_level: int) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    m = cfg.build_model()
    top = max(int(l) for l in levels_list)
    if cfg.epsilon is not None:
        eps_ref = cfg.epsilon
    else:
        eps_ref = reference_tolerance(cfg.c_factor, cfg.alpha, top, m)
    parabolic = max_diffusion_derivative(m) > 0.0
    res = convergence_study(m, levels_list, reference_level, eps_ref,
                            cfg.t_final, cfg.time_rule, parabolic=parabolic,
                            alpha=cfg.alpha, n0=cfg.n0, lane=cfg.lane)
    with open(out / "levels.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("level,epsilon,fv_l1,mr_l1\n")
        for L, e, a, b in zip(res.levels, res.epsilons, res.fv_l1, res.mr_l1):
            fh.write(f"{L},{e!r},{a!r},{b!r}\n")
    _dump_json(out / "slopes.json", {
        "config": emit_config(cfg),
        "levels": res.levels,
        "reference_level": reference_level,
        "fv_slope": res.fv_slope,
        "mr_slope": res.mr_slope,
        "slope_gap": res.slope_gap,
        "written_unix": time.time(),
    })
    print(f"slopes: fv={res.fv_slope:.4f} mr={res.mr_slope:.4f} "
          f"gap={res.slope_gap:.4f}")
    print(f"artifacts in {out}")
    return 0


# ---------------------------------------------------------------------------
# argument handling

def _add_common_flags(ap: argparse.ArgumentParser, levels_help: str) -> None:
    ap.add_argument("--preset", help="named run configuration")
    ap.add_argument("--config", type=Path, help="key = value override file")
    ap.add_argument("--out", help="artifact directory")
    ap.add_argument("--solver", choices=("uniform", "mr", "compare"))
    ap.add_argument("--levels", help=levels_help)
    ap.add_argument("--epsilon", type=float, help="detail threshold")
    ap.add_argument("--t-final", type=float, dest="t_final")
    ap.add_argument("--snapshots", help="comma-separated output times")
    ap.add_argument("--lane", choices=("fast", "numpy"),
                    help="compiled or plain-numpy kernels")


def _config_from_args(args, forced_solver: str | None = None,
                      levels_is_int: bool = True) -> RunConfig:
    lines = []
    if args.config is not None:
        try:
            lines.append(args.config.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
    if args.preset:
        lines.append(f"preset = {args.preset}")
    if args.out:
        lines.append(f"out_dir = {args.out}")
    if forced_solver is not None:
        lines.append(f"solver = {forced_solver}")
    elif args.solver:
        lines.append(f"solver = {args.solver}")
    if levels_is_int and args.levels is not None:
        lines.append(f"levels = {args.levels}")
    if args.epsilon is not None:
        lines.append(f"epsilon = {args.epsilon!r}")
    if args.t_final is not None:
        lines.append(f"t_final = {args.t_final!r}")
    if args.snapshots is not None:
        lines.append(f"snapshot_times = {args.snapshots}")
    if args.lane:
        lines.append(f"lane = {args.lane}")
    return parse_config("\n".join(lines))


def _parse_level_list(raw: str | None):
    if not raw:
        raise ConfigError("convergence needs --levels as a comma list, "
                          "for example --levels 6,7,8,9")
    try:
        return sorted(int(p) for p in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"bad level list {raw!r}") from None


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mrfv",
        description="Uniform and adaptive multiresolution finite-volume "
                    "solver for 1D degenerate parabolic equations with "
                    "discontinuous flux.")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one solver, write artifacts")
    _add_common_flags(run, "resolution levels L (finest grid n0*2^L)")
    run.add_argument("--reference-level", type=int,
                     help="compare mode: uniform reference at n0*2^R cells")

    cmp_ = sub.add_parser("compare",
                          help="run both solvers, write metrics table")
    _add_common_flags(cmp_, "resolution levels L (finest grid n0*2^L)")
    cmp_.add_argument("--reference-level", type=int,
                      help="uniform reference at n0*2^R cells for errors")

    conv = sub.add_parser("convergence", help="error-vs-level study")
    _add_common_flags(conv, "comma list of study levels, e.g. 6,7,8,9")
    conv.add_argument("--reference-level", type=int, required=True)

    pre = sub.add_parser("presets", help="list or describe presets")
    pre_sub = pre.add_subparsers(dest="preset_command", required=True)
    pre_sub.add_parser("list")
    desc = pre_sub.add_parser("describe")
    desc.add_argument("name")
    return ap


def _dispatch(argv) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "presets":
        if args.preset_command == "list":
            for name in preset_names():
                print(name)
        else:
            print(get_preset(args.name).describe())
        return 0
    if args.command == "convergence":
        levels_list = _parse_level_list(args.levels)
        cfg = _config_from_args(args, levels_is_int=False)
        return cmd_convergence(cfg, levels_list, args.reference_level)
    forced = "compare" if args.command == "compare" else None
    cfg = _config_from_args(args, forced_solver=forced)
    return cmd_run(cfg, reference_level=args.reference_level)


def main(argv=None) -> int:
    try:
        return _dispatch(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
