"""Named analytic initial data, sampled on the configured grid.

The presets exercise the identities the validation suites check: constants
and planes are fixed points of every flow here, the coordinate graph heis_z
has vanishing horizontal curvature through a genuinely noncommutative
cancellation, the sines drive the decay/convergence studies, and the bump is
a smooth compactly supported perturbation compatible with extend_constant
boundaries.
"""

from __future__ import annotations

import numpy as np

from .config import FlowConfig
from .grid import GridFunction, load_field

__all__ = ["preset_datum", "initial_datum", "random_smooth_field"]


def _bump_profile(r2: np.ndarray) -> np.ndarray:
    """C-infinity compactly supported: exp(1 - 1/(1 - r^2)) inside r < 1."""
    inside = r2 < 1.0
    out = np.zeros_like(r2)
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return out


def preset_datum(name: str, cfg: FlowConfig) -> GridFunction:
    """Sample the named preset on the config's grid."""
    group = cfg.group_descriptor()
    box = cfg.box()
    boundary = cfg.resolved_boundary()
    p = cfg.preset_dict()
    mesh = box.meshgrid()

    if name == "constant":
        values = np.full(box.counts, p.get("c", 0.5))
    elif name in ("affine", "heis_plane"):
        if name == "heis_plane" and group.kind != "heisenberg1":
            raise ValueError("heis_plane requires the heisenberg1 group")
        a = p.get("a", 0.1)
        b = p.get("b", -0.15)
        c = p.get("c", 0.2)
        values = a * mesh[0] + c
        if group.n >= 2:
            values = values + b * mesh[1]
    elif name == "sine1d":
        amp = p.get("amplitude", 0.3)
        values = amp * np.sin(2.0 * np.pi * mesh[0] / box.extents[0])
    elif name == "sine2d":
        if group.n < 2:
            raise ValueError("sine2d needs at least two axes")
        amp = p.get("amplitude", 0.2)
        values = (
            amp
            * np.sin(2.0 * np.pi * mesh[0] / box.extents[0])
            * np.sin(2.0 * np.pi * mesh[1] / box.extents[1])
        )
    elif name == "bump":
        amp = p.get("amplitude", 0.25)
        base = p.get("c", 0.4)
        r2 = np.zeros(box.counts)
        for i in range(group.n):
            radius = p.get(f"r{i}", 0.3 * box.extents[i])
            center = p.get(f"x{i}", box.origins[i] + 0.5 * box.extents[i])
            r2 = r2 + ((mesh[i] - center) / radius) ** 2
        values = base + amp * _bump_profile(r2)
    elif name == "heis_z":
        if group.kind != "heisenberg1":
            raise ValueError("heis_z requires the heisenberg1 group")
        values = mesh[2].copy()
    else:
        raise ValueError(f"unknown preset {name!r}")
    return GridFunction(group, box, values, boundary)


def initial_datum(cfg: FlowConfig) -> GridFunction:
    """The run's initial field: an input dump when configured, else the preset."""
    if cfg.input_path:
        f = load_field(cfg.input_path, boundary=None if cfg.boundary == "auto" else cfg.boundary)
        if f.group.kind != cfg.group:
            raise ValueError(
                f"input dump group {f.group.kind} does not match configured {cfg.group}"
            )
        return f
    return preset_datum(cfg.preset, cfg)


def random_smooth_field(cfg: FlowConfig, rng: np.random.Generator,
                        amplitude: float = 0.25, modes: int = 3) -> GridFunction:
    """Seeded low-frequency Fourier field for the randomized property checks.

    Periodic in every axis, so it is equally valid on the torus and with
    constant extension.  Mode coefficients are slope-normalized (scaled by the
    axis wavelength, falling off like 1/k^2), so the coordinate gradients stay
    near `amplitude` regardless of the box shape and the fields remain inside
    the monotone-decomposition region of the flow operators.
    """
    group = cfg.group_descriptor()
    box = cfg.box()
    mesh = box.meshgrid()
    values = np.zeros(box.counts)
    for ax in range(group.n):
        theta = 2.0 * np.pi * (mesh[ax] - box.origins[ax]) / box.extents[ax]
        scale = amplitude * box.extents[ax] / (2.0 * np.pi)
        for k in range(1, modes + 1):
            a, b = rng.normal(0.0, scale / k**2, size=2)
            values = values + (a * np.sin(k * theta) + b * np.cos(k * theta)) / k
    return GridFunction(group, box, values, cfg.resolved_boundary())
