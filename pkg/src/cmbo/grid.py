"""Scalar fields sampled on regular boxes over group coordinates.

A Box is a per-axis (origin, extent, count) triple with uniform spacing
h = extent/count and nodes at origin + i*h, i = 0..count-1 (half-open, so on a
torus the period equals the extent).  Shipped boxes are symmetric with even
counts, which places a node exactly at the group identity.

Two boundary modes exist:

* ``torus``       - periodic wrap; only valid on the Euclidean groups, where
                    the frame coefficients are constant.
* ``extend_constant`` - values outside the box clamp to the nearest boundary
                    node; required on heisenberg1.  All quantitative metrics
                    are then evaluated on a declared interior window.

The module also owns the on-disk field formats: the binary .cmbo dump
(little-endian: magic "CMBO", version u32, group-kind u8, per-axis origin f64
/ extent f64 / count u64, then f64 values row-major) and a tidy CSV export.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .groups import KINDS, CarnotGroup, from_kind

__all__ = ["Box", "GridFunction", "interior_mask", "save_field", "load_field", "field_to_csv"]

MAGIC = b"CMBO"
FORMAT_VERSION = 1
_KIND_CODE = {kind: i + 1 for i, kind in enumerate(KINDS)}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}

BOUNDARIES = ("torus", "extend_constant")


@dataclass(frozen=True)
class Box:
    """Per-axis (origin, extent, count) with uniform spacing extent/count."""

    origins: tuple[float, ...]
    extents: tuple[float, ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        if not (len(self.origins) == len(self.extents) == len(self.counts)):
            raise ValueError("box axes must agree in length")
        if any(e <= 0 for e in self.extents):
            raise ValueError("box extents must be positive")
        if any(c < 2 for c in self.counts):
            raise ValueError("box needs at least 2 nodes per axis")

    @property
    def ndim(self) -> int:
        return len(self.counts)

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(e / c for e, c in zip(self.extents, self.counts))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    def axis_coords(self, i: int) -> np.ndarray:
        h = self.extents[i] / self.counts[i]
        return self.origins[i] + h * np.arange(self.counts[i])

    def coords(self) -> list[np.ndarray]:
        return [self.axis_coords(i) for i in range(self.ndim)]

    def meshgrid(self) -> list[np.ndarray]:
        return np.meshgrid(*self.coords(), indexing="ij")

    def points(self) -> np.ndarray:
        """All nodes as an array of shape (*counts, ndim)."""
        return np.stack(self.meshgrid(), axis=-1)

    @staticmethod
    def centered(extents, counts) -> "Box":
        """Box symmetric about the origin (node at 0 when counts are even)."""
        extents = tuple(float(e) for e in extents)
        counts = tuple(int(c) for c in counts)
        return Box(tuple(-e / 2 for e in extents), extents, counts)


@dataclass(frozen=True)
class GridFunction:
    """A scalar field over a box, tagged with its group and boundary mode."""

    group: CarnotGroup
    box: Box
    values: np.ndarray
    boundary: str = "extend_constant"

    def __post_init__(self):
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"unknown boundary mode {self.boundary!r}")
        if self.box.ndim != self.group.n:
            raise ValueError("box dimensionality must match the group")
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.box.counts:
            raise ValueError(f"values shape {vals.shape} != grid shape {self.box.counts}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        if self.boundary == "torus" and self.group.kind == "heisenberg1":
            # Frame coefficients grow linearly on H^1; plain wrap is not a group quotient.
            raise ValueError("torus boundary is only supported on euclidean groups")
        object.__setattr__(self, "values", vals)

    def with_values(self, values: np.ndarray) -> "GridFunction":
        return replace(self, values=np.asarray(values, dtype=float))

    @property
    def spacings(self) -> tuple[float, ...]:
        return self.box.spacings

    def mass(self) -> float:
        """Cell-volume-weighted sum (pairwise summation via np.sum)."""
        return float(np.sum(self.values) * self.box.cell_volume)

    def osc(self) -> float:
        return float(self.values.max() - self.values.min())


def interior_mask(grid: GridFunction | None = None, *, group=None, box=None,
                  boundary=None, margin: float = 0.0) -> np.ndarray:
    """Boolean mask of nodes at homogeneous distance >= margin from the boundary.

    Axis distance converts to homogeneous units per coordinate degree; for the
    degree-2 axis the Carnot-Caratheodory calibration sqrt(4 pi |z|) is used
    (the exact CC distance to a vertical displacement on heisenberg1), so a
    margin of c*sqrt(t) carries the same heat-kernel tail weight on every
    axis.  On a torus every node is interior.
    """
    if grid is not None:
        group, box, boundary = grid.group, grid.box, grid.boundary
    if boundary == "torus" or margin <= 0:
        return np.ones(box.counts, dtype=bool)
    mask = np.ones(box.counts, dtype=bool)
    for i, d in enumerate(group.degrees):
        c = box.axis_coords(i)
        lo, hi = c[0], c[-1]
        dist = np.minimum(c - lo, hi - c)
        if d == 1:
            metric = dist
        else:
            metric = (4.0 * np.pi * dist) ** (1.0 / d) if d == 2 else dist ** (1.0 / d)
        shape = [1] * box.ndim
        shape[i] = box.counts[i]
        mask &= (metric >= margin).reshape(shape)
    if not mask.any():
        raise ValueError("interior window is empty; enlarge the box or shrink the margin")
    return mask


def save_field(path, f: GridFunction) -> None:
    """Write the binary .cmbo dump (boundary mode is not part of the format)."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<B", _KIND_CODE[f.group.kind]))
        for o, e, c in zip(f.box.origins, f.box.extents, f.box.counts):
            fh.write(struct.pack("<ddQ", o, e, c))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def load_field(path, boundary: str | None = None) -> GridFunction:
    """Read a .cmbo dump; boundary defaults per group (torus only if euclidean)."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a CMBO field dump")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported dump version {version}")
        (code,) = struct.unpack("<B", fh.read(1))
        try:
            group = from_kind(_CODE_KIND[code])
        except KeyError:
            raise ValueError(f"{path}: unknown group kind code {code}") from None
        origins, extents, counts = [], [], []
        for _ in range(group.n):
            o, e, c = struct.unpack("<ddQ", fh.read(24))
            origins.append(o)
            extents.append(e)
            counts.append(int(c))
        box = Box(tuple(origins), tuple(extents), tuple(counts))
        raw = fh.read(8 * int(np.prod(counts)))
        values = np.frombuffer(raw, dtype="<f8").reshape(counts).astype(float)
    if boundary is None:
        boundary = "extend_constant"
    return GridFunction(group, box, values, boundary)


def field_to_csv(path, f: GridFunction, manifest: str = "") -> None:
    """Tidy CSV: one row per node (index columns, coordinates, value)."""
    idx = np.indices(f.box.counts).reshape(f.box.ndim, -1).T
    coords = f.box.points().reshape(-1, f.box.ndim)
    vals = f.values.reshape(-1)
    with open(path, "w") as fh:
        icols = ",".join(f"i{k}" for k in range(f.box.ndim))
        ccols = ",".join(f"x{k}" for k in range(f.box.ndim))
        fh.write(f"{icols},{ccols},value,manifest\n")
        for row, pt, v in zip(idx, coords, vals):
            fh.write(
                ",".join(str(int(i)) for i in row)
                + ","
                + ",".join(f"{c:.17g}" for c in pt)
                + f",{v:.17g},{manifest}\n"
            )
