"""Small-time expansions tying the threshold operator to the curvature.

Two quantities are estimated and cross-checked:

* the boundary value of the diffused subgraph indicator, whose deviation
  from 1/2 scales like sqrt(t) with coefficient h0(x) times the kernel mass
  of the intrinsic tangent plane (fit per sample point over several times);
* the normal-speed defect e(t) = sup |(H(t)f - f)/t + h0 sqrt(1+|grad0 f|^2)|,
  which must vanish uniformly as t -> 0.

The plane-mass constant is additionally computed directly by quadrature of
the discrete kernel against the vertical density on the tangent plane; the
fit ratio and the quadrature are independent estimators of the same number
and their agreement is the headline consistency check.  On the Euclidean
groups that number is (4 pi)^(-1/2) for every tilt (rotational symmetry of
the kernel), which pins the absolute scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Box, GridFunction, interior_mask
from .groups import CarnotGroup
from .heat import HeatOperatorSpec, kernel_estimate
from .flow import curvature_h0
from .mbo import build_level_stack, diffuse_threshold
from .report import DiagnosticsReport

__all__ = [
    "ExpansionFit",
    "boundary_value",
    "taylor_fit",
    "plane_integral",
    "normal_speed_check",
]

H0_FLOOR = 0.05  # ratios are reported only where |h0| clears this


@dataclass(frozen=True)
class ExpansionFit:
    """Per-point sqrt(t) fit of the diffused-indicator boundary value."""

    points: tuple  # grid index tuples
    times: np.ndarray  # strictly decreasing
    values: np.ndarray  # (P, T) boundary values w(x, t)
    coef_sqrt: np.ndarray  # fitted c(x):  w = 1/2 - c sqrt(t) + d t
    coef_lin: np.ndarray  # fitted d(x)
    sigma_sqrt: np.ndarray  # standard error of c(x)
    h0: np.ndarray  # curvature at the sample points
    ratio: np.ndarray  # c/h0 where |h0| >= h0_floor, else nan
    residual_rms: np.ndarray

    def ratio_spread(self) -> float:
        """Relative spread of the plane-mass estimates across sample points."""
        r = self.ratio[np.isfinite(self.ratio)]
        if len(r) == 0:
            raise ValueError("no sample point clears the curvature floor")
        mid = np.median(r)
        return float(np.max(np.abs(r - mid)) / abs(mid))


def _stack_values(f: GridFunction, t: float, points, spec: HeatOperatorSpec) -> np.ndarray:
    """V(x, f(x)) for each sample point, from one stack whose levels are
    exactly the sampled graph heights (node evaluation, no interpolation)."""
    lams = np.array([f.values[idx] for idx in points])
    levels = np.unique(lams)
    stack = build_level_stack(f, t, levels, spec=spec, check_span=False)
    out = np.empty(len(points))
    for i, idx in enumerate(points):
        k = int(np.searchsorted(levels, lams[i]))
        out[i] = stack.slices[(k,) + tuple(idx)]
    return out


def boundary_value(f: GridFunction, point, t: float, cfg=None) -> float:
    """Diffused subgraph indicator evaluated on the graph: V(x, f(x)).

    `point` is a grid index tuple; it should lie in the interior window."""
    spec = HeatOperatorSpec() if cfg is None else HeatOperatorSpec(cfl_safety=cfg.cfl_safety)
    return float(_stack_values(f, t, [tuple(point)], spec)[0])


def taylor_fit(
    f: GridFunction,
    points,
    times,
    cfg=None,
    h0_floor: float = H0_FLOOR,
) -> ExpansionFit:
    """Least-squares fit w(x, t) = 1/2 - c(x) sqrt(t) + d(x) t per point.

    Needs at least 3 times (4+ for a meaningful standard error), each with a
    resolved diffusion length (2 sqrt t >= 4h).  c(x)/h0(x) estimates the
    tangent-plane kernel mass, the same constant at every point.
    """
    times = np.asarray(sorted(set(float(t) for t in times), reverse=True))
    if len(times) < 3:
        raise ValueError("taylor_fit needs at least 3 distinct times")
    h = max(f.box.spacings[fld.axis] for fld in f.group.horizontal_fields())
    if 2.0 * math.sqrt(times.min()) < 4.0 * h:
        raise ValueError(
            f"smallest time {times.min():g} is unresolved: 2 sqrt(t) < 4h = {4*h:g}"
        )
    points = [tuple(p) for p in points]
    spec = HeatOperatorSpec() if cfg is None else HeatOperatorSpec(cfl_safety=cfg.cfl_safety)
    vals = np.stack([_stack_values(f, t, points, spec) for t in times], axis=1)  # (P, T)
    # y := 1/2 - w = c sqrt(t) - d t
    y = 0.5 - vals
    design = np.stack([np.sqrt(times), -times], axis=1)  # (T, 2)
    coef, *_ = np.linalg.lstsq(design, y.T, rcond=None)  # (2, P)
    c, d = coef[0], coef[1]
    resid = y.T - design @ coef  # (T, P)
    dof = max(len(times) - 2, 1)
    sigma2 = np.sum(resid**2, axis=0) / dof
    gram_inv = np.linalg.inv(design.T @ design)
    sigma_c = np.sqrt(sigma2 * gram_inv[0, 0])
    h0_all = curvature_h0(f).h0
    h0 = np.array([h0_all[idx] for idx in points])
    ratio = np.full(len(points), np.nan)
    ok = np.abs(h0) >= h0_floor
    ratio[ok] = c[ok] / h0[ok]
    return ExpansionFit(
        points=tuple(points),
        times=times,
        values=vals,
        coef_sqrt=c,
        coef_lin=d,
        sigma_sqrt=sigma_c,
        h0=h0,
        ratio=ratio,
        residual_rms=np.sqrt(np.mean(resid**2, axis=0)),
    )


def plane_integral(
    group: CarnotGroup,
    xi,
    box: Box,
    boundary: str = "extend_constant",
    cfl_safety: float = 0.5,
) -> float:
    """Kernel mass of the intrinsic tangent plane with horizontal slope xi.

    Quadrature of the discrete group kernel at t = 1 against the analytic
    vertical density on the plane y_vert = sum_i xi_i y_i (first-layer
    coordinates only), with the horizontal area element sqrt(1 + |xi|^2).
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if len(xi) != group.m:
        raise ValueError(f"xi must have the horizontal dimension {group.m}")
    spec = HeatOperatorSpec(cfl_safety=cfl_safety)
    kern = kernel_estimate(group, spec, 1.0, box, boundary, mass_guard=5e-2)
    pts = box.points()
    horiz = [ax for ax, d in enumerate(group.degrees) if d == 1][: group.m]
    s = sum(xi[k] * pts[..., ax] for k, ax in enumerate(horiz))
    density = (4.0 * math.pi) ** -0.5 * np.exp(-(s**2) / 4.0)
    area = math.sqrt(1.0 + float(xi @ xi))
    val = float(np.sum(kern.values * density) * box.cell_volume * area)
    if val <= 0:
        raise ValueError("plane integral came out nonpositive; box too small?")
    return val


def normal_speed_check(
    f: GridFunction,
    times,
    cfg=None,
    window: np.ndarray | None = None,
    margin_factor: float = 4.0,
) -> DiagnosticsReport:
    """Defect of the first-order normal-speed law for the threshold operator.

    e(t) = sup over the window of |(H(t)f - f)/t + h0 sqrt(1 + |grad0 f|^2)|;
    reported for each t (decreasing) together with successive ratios, and
    checked to be nonincreasing.
    """
    times = sorted(set(float(t) for t in times), reverse=True)
    if len(times) < 2:
        raise ValueError("normal_speed_check needs at least 2 times")
    if window is None:
        window = interior_mask(f, margin=margin_factor * math.sqrt(max(times)))
    cf = curvature_h0(f)
    speed = cf.h0 * np.sqrt(1.0 + np.sum(cf.grad0**2, axis=0))
    rep = DiagnosticsReport("normal_speed_check")
    errs = []
    for t in times:
        g = diffuse_threshold(f, t, cfg)
        e = float(np.max(np.abs((g.values - f.values) / t + speed)[window]))
        errs.append(e)
        rep.add_row(t=t, defect=e)
    for i in range(1, len(errs)):
        rep.add_row(t=times[i], ratio=errs[i] / errs[i - 1])
        rep.check(f"defect_nonincreasing_at_t={times[i]:g}", errs[i], "<=", errs[i - 1] * (1 + 1e-9))
    rep.record(**{f"defect_{i}": e for i, e in enumerate(errs)})
    return rep
