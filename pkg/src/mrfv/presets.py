"""Named run configurations for the three benchmark experiments and the
flat `key = value` config layer that can override any of their fields.

Presets pin the published threshold directly; the alternative C-factor
route derives it from the CFL-scaled reference-tolerance formula. Config
files may set exactly one of the two.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, replace

from .errors import ConfigError
from .fvcore import TimeRule
from .models import (ClarifierParams, ModelSpec, TrafficParams,
                     build_clarifier, build_traffic,
                     max_diffusion_derivative, max_flux_derivative)

__all__ = [
    "RunConfig",
    "emit_config",
    "get_preset",
    "parse_config",
    "preset_names",
    "reference_tolerance",
]

_SOLVERS = ("uniform", "mr", "compare")
_LANES = ("fast", "numpy")
_FAMILIES = ("traffic", "clarifier")


def reference_tolerance(c_factor: float, alpha: float, levels: int,
                        m: ModelSpec) -> float:
    """Threshold derived from the time step the CFL condition allows, so
    the accumulated thresholding error scales like the discretization
    error 2^(-alpha L). With degenerate diffusion active the parabolic
    part of the CFL bound enters with its extra 2^-L factor."""
    span = m.domain[1] - m.domain[0]
    mf = max_flux_derivative(m)
    ma = max_diffusion_derivative(m)
    if ma > 0.0:
        return (c_factor * 2.0 ** (-(alpha + 1.0) * levels)
                / (span * mf + 2.0 ** (-levels) * ma))
    return c_factor * 2.0 ** (-alpha * levels) / mf


@dataclass(frozen=True)
class RunConfig:
    """Everything one CLI invocation needs, preset defaults included."""

    preset: str
    family: str
    solver: str = "mr"
    levels: int = 9
    n0: int = 1
    epsilon: float | None = None
    c_factor: float | None = None
    alpha: float = 1.0
    rule_kind: str = "lambda"
    rule_value: float = 1.0
    t_final: float = 1.0
    snapshot_times: tuple[float, ...] = ()
    out_dir: str = "out"
    lane: str = "fast"
    # scalar model-parameter overrides, kept sorted for stable equality
    model_overrides: tuple[tuple[str, float], ...] = ()

    def validate(self) -> None:
        if self.family not in _FAMILIES:
            raise ConfigError(f"unknown model family {self.family!r}")
        if self.solver not in _SOLVERS:
            raise ConfigError(f"solver must be one of {_SOLVERS}, "
                              f"got {self.solver!r}")
        if self.lane not in _LANES:
            raise ConfigError(f"lane must be one of {_LANES}, got {self.lane!r}")
        if self.levels < 1:
            raise ConfigError(f"levels must be >= 1, got {self.levels}")
        if self.n0 < 1:
            raise ConfigError(f"n0 must be >= 1, got {self.n0}")
        if (self.epsilon is None) == (self.c_factor is None):
            raise ConfigError(
                "exactly one of epsilon and c_factor must be set")
        if self.epsilon is not None and self.epsilon < 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.c_factor is not None and self.c_factor <= 0:
            raise ConfigError(f"c_factor must be > 0, got {self.c_factor}")
        if self.rule_kind not in ("lambda", "auto"):
            raise ConfigError(f"rule_kind must be 'lambda' or 'auto', "
                              f"got {self.rule_kind!r}")
        if self.rule_value <= 0:
            raise ConfigError(f"rule_value must be > 0, got {self.rule_value}")
        if self.t_final < 0:
            raise ConfigError(f"t_final must be >= 0, got {self.t_final}")
        times = self.snapshot_times
        if list(times) != sorted(times):
            raise ConfigError("snapshot_times must be sorted ascending")
        tol = 1e-9 * max(1.0, self.t_final)
        if times and times[-1] > self.t_final + tol:
            raise ConfigError(
                f"snapshot time {times[-1]} lies beyond t_final {self.t_final}")

    @property
    def time_rule(self) -> TimeRule:
        return TimeRule(self.rule_kind, self.rule_value)

    @property
    def n_fine(self) -> int:
        return self.n0 << self.levels

    def build_model(self) -> ModelSpec:
        base = TrafficParams() if self.family == "traffic" else ClarifierParams()
        if self.model_overrides:
            known = {f.name for f in dataclasses.fields(base)}
            for key, _ in self.model_overrides:
                if key not in known:
                    raise ConfigError(
                        f"unknown model parameter {key!r} for {self.family}")
            base = replace(base, **dict(self.model_overrides))
        if self.family == "traffic":
            return build_traffic(base)
        return build_clarifier(base)

    def resolved_epsilon(self, m: ModelSpec | None = None) -> float:
        if self.epsilon is not None:
            return self.epsilon
        m = m or self.build_model()
        return reference_tolerance(self.c_factor, self.alpha, self.levels, m)

    def describe(self) -> str:
        lines = [f"{self.preset}: {self.family} model, solver={self.solver}",
                 f"  levels={self.levels} n0={self.n0} "
                 f"(finest grid {self.n_fine} cells)"]
        if self.epsilon is not None:
            lines.append(f"  epsilon={self.epsilon!r}")
        else:
            lines.append(f"  c_factor={self.c_factor!r} alpha={self.alpha!r}")
        lines.append(f"  step rule: {self.rule_kind} {self.rule_value!r}")
        lines.append(f"  t_final={self.t_final!r} "
                     f"snapshots={list(self.snapshot_times)}")
        if self.model_overrides:
            for k, v in self.model_overrides:
                lines.append(f"  model.{k} = {v!r}")
        base = TrafficParams() if self.family == "traffic" else ClarifierParams()
        over = dict(self.model_overrides)
        for f in dataclasses.fields(base):
            if f.name not in over:
                lines.append(f"  model.{f.name} = {getattr(base, f.name)!r} "
                             f"(default)")
        return "\n".join(lines)


_PRESETS = {
    # convoy dispersing on a circular road with a slow stretch
    "traffic-ex1": RunConfig(
        preset="traffic-ex1", family="traffic", levels=10, epsilon=0.301,
        rule_kind="lambda", rule_value=0.0003, t_final=0.2,
        snapshot_times=(0.05, 0.10, 0.15, 0.20)),
    # ideal suspension, pure hyperbolic clarifier-thickener; the tight
    # margin (1/3 keeps the vessel ends on dyadic grid edges) lets both
    # discharge fronts leave the domain before the first output time, so
    # reported errors measure the vessel dynamics
    "clarifier-ex2": RunConfig(
        preset="clarifier-ex2", family="clarifier", levels=9, epsilon=4.15e-3,
        rule_kind="lambda", rule_value=1.0 / 16.0, t_final=4.0,
        snapshot_times=(1.0, 2.0, 3.0, 4.0),
        model_overrides=(("margin", 1.0 / 3.0),)),
    # flocculated suspension with effective-stress diffusion, fill-up stage
    "clarifier-ex3": RunConfig(
        preset="clarifier-ex3", family="clarifier", levels=9, epsilon=2.24e-4,
        rule_kind="lambda", rule_value=40.0, t_final=50000.0,
        snapshot_times=(10000.0, 25000.0, 50000.0),
        model_overrides=(("q_l", -1.0e-5), ("q_r", 2.5e-6),
                         ("sigma_0", 1.0), ("u_f", 0.086),
                         ("u_init", 0.1), ("v_inf", 6.75e-6))),
}


def preset_names() -> list[str]:
    return sorted(_PRESETS)


def get_preset(name: str) -> RunConfig:
    try:
        return _PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; "
                          f"available: {', '.join(preset_names())}") from None


# ---------------------------------------------------------------------------
# flat config files

_INT_KEYS = {"levels", "n0"}
_FLOAT_KEYS = {"epsilon", "c_factor", "alpha", "rule_value", "t_final"}
_STR_KEYS = {"preset", "solver", "rule_kind", "out_dir", "lane"}


def _parse_scalar(key: str, raw: str):
    try:
        if key in _INT_KEYS:
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: not a number: {raw!r}") from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Apply `key = value` lines on top of a preset.

    The preset may come from a `preset = name` line or from `base`.
    Unknown keys are rejected. Setting epsilon clears c_factor and vice
    versa, so a config can switch threshold modes in one line.
    """
    entries = []
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"config line {ln}: expected 'key = value', "
                              f"got {stripped!r}")
        key, _, raw = stripped.partition("=")
        entries.append((ln, key.strip(), raw.strip()))

    cfg = base
    for _, key, raw in entries:
        if key == "preset":
            cfg = get_preset(raw)
    if cfg is None:
        raise ConfigError("config selects no preset and no base was given")

    fields = {}
    overrides = dict(cfg.model_overrides)
    for ln, key, raw in entries:
        if key == "preset":
            continue
        if key in _STR_KEYS:
            fields[key] = raw
        elif key in _INT_KEYS or key in _FLOAT_KEYS:
            fields[key] = _parse_scalar(key, raw)
            if key == "epsilon":
                fields["c_factor"] = None
            elif key == "c_factor":
                fields["epsilon"] = None
        elif key == "snapshot_times":
            parts = [p for p in raw.replace(",", " ").split() if p]
            fields[key] = tuple(float(p) for p in parts)
        elif key.startswith("model."):
            overrides[key[len("model."):]] = _parse_scalar(key, raw)
        else:
            raise ConfigError(f"config line {ln}: unknown key {key!r}")
    fields["model_overrides"] = tuple(sorted(overrides.items()))
    cfg = replace(cfg, **fields)
    cfg.validate()
    cfg.build_model()  # surfaces unknown model parameter names now
    return cfg


def emit_config(cfg: RunConfig) -> str:
    """Write a config equivalent to cfg; parse_config inverts it."""
    lines = [f"preset = {cfg.preset}",
             f"solver = {cfg.solver}",
             f"levels = {cfg.levels}",
             f"n0 = {cfg.n0}"]
    if cfg.epsilon is not None:
        lines.append(f"epsilon = {cfg.epsilon!r}")
    else:
        lines.append(f"c_factor = {cfg.c_factor!r}")
    lines.append(f"alpha = {cfg.alpha!r}")
    lines.append(f"rule_kind = {cfg.rule_kind}")
    lines.append(f"rule_value = {cfg.rule_value!r}")
    lines.append(f"t_final = {cfg.t_final!r}")
    lines.append("snapshot_times = "
                 + ", ".join(repr(t) for t in cfg.snapshot_times))
    lines.append(f"out_dir = {cfg.out_dir}")
    lines.append(f"lane = {cfg.lane}")
    for k, v in cfg.model_overrides:
        lines.append(f"model.{k} = {v!r}")
    return "\n".join(lines) + "\n"
