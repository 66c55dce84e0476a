"""Carnot group algebra for the built-in model groups.

Three concrete groups are instantiable: the Euclidean lines/planes R^1, R^2
(step 1) and the first Heisenberg group H^1 (step 2, exponential coordinates
of the first kind).  The descriptor carries the grading and exposes the group
law, dilations, the homogeneous gauge norm and the family of non-homogeneous
approximation norms, plus the horizontal frame as stencil descriptors that the
finite-difference modules compile once per run.

Conventions (fixed once, everything downstream depends on them):

* H^1 product: (x,y,z)*(x',y',z') = (x+x', y+y', z+z' + (x y' - y x')/2),
  so inverses are coordinate negation.
* Horizontal frame on H^1: X1 = d/dx - (y/2) d/dz, X2 = d/dy + (x/2) d/dz,
  matching the product above ([X1,X2] = d/dz).
* Dilations scale coordinate i by lambda**degree(i); the homogeneous
  dimension is Q = sum(degrees).

All point operations accept arrays of shape (..., n) and are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CarnotGroup",
    "VectorField",
    "euclidean",
    "heisenberg1",
    "from_kind",
    "KINDS",
]


@dataclass(frozen=True)
class VectorField:
    """First-order operator sum_j c_j(p) d/dp_j as a stencil descriptor.

    The coefficient of axis j is the affine function
    ``c_j(p) = const[j] + sum_k lin[j, k] p_k``.  For every built-in field one
    axis (``axis``) carries the constant coefficient 1; any other nonzero
    coefficient couples into a higher-degree axis and is constant both along
    ``axis`` and along the coupled axis, which is what lets the grid modules
    difference along the field's own integral line.
    """

    name: str
    n: int
    axis: int
    const: tuple[float, ...]
    lin: tuple[tuple[float, ...], ...] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.lin is None:
            object.__setattr__(self, "lin", tuple((0.0,) * self.n for _ in range(self.n)))
        if len(self.const) != self.n or len(self.lin) != self.n:
            raise ValueError("coefficient tables must have length n")

    def coefficient(self, j: int, points: np.ndarray) -> np.ndarray:
        """Evaluate c_j at points of shape (..., n)."""
        points = np.asarray(points, dtype=float)
        out = np.full(points.shape[:-1], self.const[j], dtype=float)
        for k, w in enumerate(self.lin[j]):
            if w != 0.0:
                out = out + w * points[..., k]
        return out

    def coupled_axes(self) -> list[int]:
        """Axes other than the primary one with a nonzero coefficient."""
        out = []
        for j in range(self.n):
            if j == self.axis:
                continue
            if self.const[j] != 0.0 or any(w != 0.0 for w in self.lin[j]):
                out.append(j)
        return out


@dataclass(frozen=True)
class CarnotGroup:
    """Descriptor of one concrete group: grading plus the fixed group law."""

    kind: str
    n: int
    m: int
    degrees: tuple[int, ...]

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown group kind {self.kind!r}")
        if self.m > self.n:
            raise ValueError("horizontal dimension m cannot exceed n")
        if any(d < 1 for d in self.degrees):
            raise ValueError("coordinate degrees must be >= 1")

    @property
    def Q(self) -> int:
        """Homogeneous dimension, sum of the coordinate degrees."""
        return int(sum(self.degrees))

    @property
    def step(self) -> int:
        return int(max(self.degrees))

    def _check(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if p.shape[-1] != self.n:
            raise ValueError(f"expected points with last axis {self.n}, got shape {p.shape}")
        return p

    def multiply(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Group product p*q (coordinatewise sum plus the step-2 correction)."""
        p, q = self._check(p), self._check(q)
        out = p + q
        if self.kind == "heisenberg1":
            out = out.copy()
            out[..., 2] += 0.5 * (p[..., 0] * q[..., 1] - p[..., 1] * q[..., 0])
        return out

    def inverse(self, p: np.ndarray) -> np.ndarray:
        """p^{-1}; coordinate negation in exponential coordinates."""
        return -self._check(p)

    def dilate(self, lam: float, p: np.ndarray) -> np.ndarray:
        """Homogeneous dilation: coordinate i scales by lam**degree(i)."""
        if lam <= 0:
            raise ValueError("dilation parameter must be positive")
        p = self._check(p)
        scale = np.array([lam**d for d in self.degrees])
        return p * scale

    def gauge_norm(self, p: np.ndarray) -> np.ndarray:
        """Homogeneous gauge |p|_0, with |p|_0^(2 r!) = sum |p_i|^(2 r!/d(i))."""
        p = self._check(p)
        s = 2.0 * float(math.factorial(self.step))
        acc = np.zeros(p.shape[:-1])
        for i, d in enumerate(self.degrees):
            acc = acc + np.abs(p[..., i]) ** (s / d)
        return acc ** (1.0 / s)

    def eps_norm(self, eps: float, p: np.ndarray) -> np.ndarray:
        """Non-homogeneous approximation norm |p|_eps.

        Degree-1 coordinates contribute |p_i|; higher-degree ones contribute
        min(|p_i|/eps, |p_i|**(1/d)).  eps = 0 selects the second branch (the
        limit object, equivalent to the homogeneous gauge).
        """
        if eps < 0:
            raise ValueError("eps must be nonnegative")
        p = self._check(p)
        acc = np.zeros(p.shape[:-1])
        for i, d in enumerate(self.degrees):
            a = np.abs(p[..., i])
            if d == 1:
                acc = acc + a
            else:
                root = a ** (1.0 / d)
                if eps == 0:
                    acc = acc + root
                else:
                    acc = acc + np.minimum(a / eps, root)
        return acc

    def eps_distance(self, eps: float, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        """d_eps(p, q) = |q^{-1} * p|_eps."""
        return self.eps_norm(eps, self.multiply(self.inverse(q), p))

    def horizontal_fields(self, include_vertical: bool = False) -> list[VectorField]:
        """The horizontal frame X_1..X_m as stencil descriptors.

        With include_vertical=True appends the unit field of the extra factor
        of the product group G x R (used by the plane-measure quadrature; the
        grid solvers never discretize that axis).
        """
        fields: list[VectorField]
        if self.kind == "heisenberg1":
            z1 = [[0.0] * 3 for _ in range(3)]
            z1[2][1] = -0.5
            z2 = [[0.0] * 3 for _ in range(3)]
            z2[2][0] = 0.5
            fields = [
                VectorField("X1", 3, 0, (1.0, 0.0, 0.0), tuple(tuple(r) for r in z1)),
                VectorField("X2", 3, 1, (0.0, 1.0, 0.0), tuple(tuple(r) for r in z2)),
            ]
        else:
            fields = [
                VectorField(
                    f"X{i + 1}",
                    self.n,
                    i,
                    tuple(1.0 if j == i else 0.0 for j in range(self.n)),
                )
                for i in range(self.m)
            ]
        if include_vertical:
            nv = self.n + 1
            fields = [
                VectorField(
                    f.name,
                    nv,
                    f.axis,
                    tuple(f.const) + (0.0,),
                    tuple(tuple(row) + (0.0,) for row in f.lin) + ((0.0,) * nv,),
                )
                for f in fields
            ]
            fields.append(
                VectorField("Xv", nv, self.n, tuple(0.0 for _ in range(self.n)) + (1.0,))
            )
        return fields


KINDS = ("euclidean1", "euclidean2", "heisenberg1")


def euclidean(n: int) -> CarnotGroup:
    """Abelian R^n (n = 1 or 2): all degrees 1, Q = n."""
    if n not in (1, 2):
        raise ValueError("only euclidean(1) and euclidean(2) are instantiable")
    return CarnotGroup(kind=f"euclidean{n}", n=n, m=n, degrees=(1,) * n)


def heisenberg1() -> CarnotGroup:
    """First Heisenberg group: n = 3, horizontal dimension 2, Q = 4."""
    return CarnotGroup(kind="heisenberg1", n=3, m=2, degrees=(1, 1, 2))


def from_kind(kind: str) -> CarnotGroup:
    if kind == "euclidean1":
        return euclidean(1)
    if kind == "euclidean2":
        return euclidean(2)
    if kind == "heisenberg1":
        return heisenberg1()
    raise ValueError(f"unknown group kind {kind!r}")
