"""Run configuration: flat key = value files with dotted sections.

A run is an experiment description; everything that affects the output is a
config key with a default, the resolved values are echoed into the run
manifest, and unknown keys are rejected so stale files fail loudly.  Lists
are comma-separated; `#` starts a comment; later assignments win, and
command-line overrides (`--set key=value`) are applied last.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields

from .grid import BOUNDARIES, Box
from .groups import KINDS, CarnotGroup, from_kind

__all__ = ["FlowConfig", "ConfigError", "parse_config", "resolve_lines", "manifest_hash"]


class ConfigError(ValueError):
    """Malformed or invalid run configuration."""


PERIODIC_PRESETS = {"constant", "sine1d", "sine2d"}
PRESETS = ("constant", "affine", "sine1d", "sine2d", "bump", "heis_z", "heis_plane")
INTERPS = ("linear", "pchip")

_GROUP_DEFAULT_EXTENTS = {
    "euclidean1": (2.0 * 3.141592653589793,),
    "euclidean2": (2.0 * 3.141592653589793,) * 2,
    "heisenberg1": (4.0, 4.0, 2.4),
}
_GROUP_DEFAULT_COUNTS = {
    "euclidean1": (512,),
    "euclidean2": (128, 128),
    "heisenberg1": (48, 48, 48),
}


@dataclass(frozen=True)
class FlowConfig:
    """All solver knobs for one run."""

    group: str = "euclidean1"
    preset: str = "sine1d"
    preset_params: tuple = ()  # ((name, value), ...) overrides for the preset
    input_path: str = ""  # .cmbo dump; overrides the preset when set
    box_extents: tuple = ()  # empty = per-group default
    box_origins: tuple = ()  # empty = centered
    counts: tuple = ()
    boundary: str = "auto"
    cfl_safety: float = 0.5
    level_count: int = 33
    level_resolution: float = 0.15
    threshold_interp: str = "linear"
    root_tol: float = 1e-8
    resolvent_tol: float = 1e-7
    margin_factor: float = 4.0
    eps_list: tuple = (1.0, 0.5, 0.25)
    times: tuple = (0.04, 0.02, 0.01)
    fit_times: tuple = (0.004, 0.0025, 0.0016, 0.001)
    t: float = 0.05
    j_list: tuple = (2, 4, 8)
    seed: int = 0
    outdir: str = "out"

    def __post_init__(self):
        if self.group not in KINDS:
            raise ConfigError(f"group: unknown kind {self.group!r}")
        if not self.input_path and self.preset not in PRESETS:
            raise ConfigError(f"preset: unknown name {self.preset!r}")
        if self.boundary not in ("auto",) + BOUNDARIES:
            raise ConfigError(f"boundary: must be auto/{'/'.join(BOUNDARIES)}")
        if self.threshold_interp not in INTERPS:
            raise ConfigError(f"threshold.interp: must be one of {INTERPS}")
        if not (0.0 < self.cfl_safety < 1.0):
            raise ConfigError("cfl_safety: must lie in (0, 1)")
        for name in ("root_tol", "resolvent_tol", "level_resolution", "t"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name}: must be positive")
        if self.margin_factor < 2.0:
            raise ConfigError("margin_factor: must be >= 2")
        if self.level_count < 2:
            raise ConfigError("levels.count: must be >= 2")
        for c in self.resolved_counts():
            if c < 16:
                raise ConfigError(f"grid.counts: {c} < 16")
        if any(t <= 0 for t in self.times) or any(t <= 0 for t in self.fit_times):
            raise ConfigError("times: must be positive")
        if any(j < 1 for j in self.j_list):
            raise ConfigError("j.list: entries must be >= 1")

    # --- derived geometry ---------------------------------------------------

    def group_descriptor(self) -> CarnotGroup:
        return from_kind(self.group)

    def resolved_extents(self) -> tuple:
        ext = self.box_extents or _GROUP_DEFAULT_EXTENTS[self.group]
        if len(ext) != self.group_descriptor().n:
            raise ConfigError("box.extents: wrong number of axes for the group")
        return tuple(float(e) for e in ext)

    def resolved_counts(self) -> tuple:
        cnt = self.counts or _GROUP_DEFAULT_COUNTS[self.group]
        if len(cnt) != self.group_descriptor().n:
            raise ConfigError("grid.counts: wrong number of axes for the group")
        return tuple(int(c) for c in cnt)

    def box(self) -> Box:
        ext = self.resolved_extents()
        if self.box_origins:
            if len(self.box_origins) != len(ext):
                raise ConfigError("box.origins: wrong number of axes")
            return Box(tuple(float(o) for o in self.box_origins), ext, self.resolved_counts())
        return Box.centered(ext, self.resolved_counts())

    def resolved_boundary(self) -> str:
        if self.boundary != "auto":
            if self.boundary == "torus" and self.group == "heisenberg1":
                raise ConfigError("boundary: torus is not available on heisenberg1")
            return self.boundary
        if self.group != "heisenberg1" and not self.input_path and self.preset in PERIODIC_PRESETS:
            return "torus"
        return "extend_constant"

    def preset_dict(self) -> dict:
        return dict(self.preset_params)


# --- key table --------------------------------------------------------------


def _floats(s: str) -> tuple:
    return tuple(float(v) for v in s.split(",") if v.strip() != "")


def _ints(s: str) -> tuple:
    return tuple(int(v) for v in s.split(",") if v.strip() != "")


_KEYS = {
    "group": ("group", str),
    "preset": ("preset", str),
    "input": ("input_path", str),
    "box.extents": ("box_extents", _floats),
    "box.origins": ("box_origins", _floats),
    "grid.counts": ("counts", _ints),
    "boundary": ("boundary", str),
    "cfl_safety": ("cfl_safety", float),
    "levels.count": ("level_count", int),
    "levels.resolution": ("level_resolution", float),
    "threshold.interp": ("threshold_interp", str),
    "root_tol": ("root_tol", float),
    "resolvent_tol": ("resolvent_tol", float),
    "margin_factor": ("margin_factor", float),
    "eps.list": ("eps_list", _floats),
    "times": ("times", _floats),
    "fit_times": ("fit_times", _floats),
    "t": ("t", float),
    "j.list": ("j_list", _ints),
    "seed": ("seed", int),
    "outdir": ("outdir", str),
}


def parse_config(path=None, overrides=()) -> FlowConfig:
    """Read `key = value` lines (optional) and apply `--set`-style overrides."""
    assignments: dict[str, str] = {}
    preset_params: dict[str, float] = {}
    lines = []
    if path is not None:
        with open(path) as fh:
            lines = [(i + 1, raw) for i, raw in enumerate(fh)]
    lines += [(0, ov) for ov in overrides]
    for lineno, raw in lines:
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in text.split("=", 1))
        if key.startswith("preset."):
            try:
                preset_params[key[len("preset."):]] = float(value)
            except ValueError:
                raise ConfigError(f"line {lineno}: {key}: expected a number") from None
            continue
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        assignments[key] = value
    kwargs = {}
    for key, value in assignments.items():
        attr, conv = _KEYS[key]
        try:
            kwargs[attr] = conv(value)
        except ConfigError:
            raise
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {value!r}") from None
    if preset_params:
        kwargs["preset_params"] = tuple(sorted(preset_params.items()))
    return FlowConfig(**kwargs)


def resolve_lines(cfg: FlowConfig) -> list[str]:
    """Every key with its resolved value, for the run manifest (defaults echoed)."""
    rev = {attr: key for key, (attr, _) in _KEYS.items()}
    out = []
    for f in fields(cfg):
        if f.name == "preset_params":
            continue
        key = rev.get(f.name, f.name)
        val = getattr(cfg, f.name)
        if isinstance(val, tuple):
            val = ",".join(str(v) for v in val)
        out.append(f"{key} = {val}")
    for name, val in cfg.preset_params:
        out.append(f"preset.{name} = {val}")
    out.append(f"resolved.boundary = {cfg.resolved_boundary()}")
    out.append(f"resolved.extents = {','.join(str(e) for e in cfg.resolved_extents())}")
    out.append(f"resolved.counts = {','.join(str(c) for c in cfg.resolved_counts())}")
    return sorted(out)


def manifest_hash(cfg: FlowConfig, extra: bytes = b"") -> str:
    """Content hash of the resolved config (outdir excluded: it states where
    results land, not what they are) plus any input-dump bytes."""
    lines = [ln for ln in resolve_lines(cfg) if not ln.startswith("outdir")]
    payload = "\n".join(lines).encode() + extra
    return hashlib.sha256(payload).hexdigest()[:16]
