"""Validation suites: deterministic runs that tie the modules together.

Each suite takes a FlowConfig, produces DiagnosticsReports (pass/fail checks
plus recorded scalars) and, when given an output directory, writes the run
manifest, per-report CSVs and field dumps.  The same functions back the CLI
subcommands and the acceptance test module, so there is exactly one source
of truth for what a passing run means.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .asymptotics import normal_speed_check, plane_integral, taylor_fit
from .config import FlowConfig, manifest_hash, resolve_lines
from .flow import curvature_h0, direct_flow, resolvent, resolvent_flow
from .grid import GridFunction, field_to_csv, interior_mask, save_field
from .heat import (
    HeatOperatorSpec,
    eps_convergence_check,
    gaussian_bound_check,
    kernel_estimate,
    rescaling_check,
)
from .mbo import build_level_stack, diffuse_threshold, mbo_flow, threshold
from .presets import initial_datum, random_smooth_field
from .report import DiagnosticsReport

__all__ = [
    "SUITES",
    "run_suite",
    "kernel_suite",
    "mbo_suite",
    "compare_suite",
    "asymptotics_suite",
    "semigroup_suite",
    "flow_run",
    "mbo_run",
]

STATIONARY_PRESETS = ("constant", "affine", "heis_z", "heis_plane")


def _spec(cfg: FlowConfig) -> HeatOperatorSpec:
    return HeatOperatorSpec(eps=0.0, cfl_safety=cfg.cfl_safety)


def _window(cfg: FlowConfig, f: GridFunction, t_max: float) -> np.ndarray:
    return interior_mask(f, margin=cfg.margin_factor * math.sqrt(t_max))


def _stationarity_window(cfg: FlowConfig, f: GridFunction, t_max: float,
                         tol: float) -> np.ndarray:
    """Interior window for fixed-point checks, additionally keeping clear of
    boundary faces on axes the datum itself varies along: there the constant
    extension misrepresents the datum by O(1), and the contamination decays
    like a heat tail exp(-d^2/4t), so the pad must scale with the log of the
    target tolerance."""
    w = _window(cfg, f, t_max)
    if f.boundary == "torus":
        return w
    pad = 2.0 * math.sqrt(t_max * math.log(1.0 / tol))
    mesh = f.box.meshgrid()
    for ax in range(f.group.n):
        slope = np.max(np.abs(np.diff(f.values, axis=ax))) / f.box.spacings[ax]
        if slope < 1e-12:
            continue
        lo = f.box.origins[ax]
        hi = lo + f.box.extents[ax]
        w = w & (mesh[ax] >= lo + pad) & (mesh[ax] <= hi - pad)
    if not w.any():
        raise ValueError("stationarity window is empty; enlarge the box")
    return w


# ---------------------------------------------------------------------------
# suites


def kernel_suite(cfg: FlowConfig) -> list[DiagnosticsReport]:
    """Kernel diagnostics: normalization, closed-form comparison (euclidean1),
    rescaling, Gaussian bounds, and the eps-kernel convergence."""
    group = cfg.group_descriptor()
    box = cfg.box()
    boundary = "extend_constant"  # delta data are not periodic
    reports = []

    norm = DiagnosticsReport("kernel_normalization")
    kern = kernel_estimate(group, _spec(cfg), cfg.t, box, boundary)
    norm.record(t=cfg.t, mass=kern.mass())
    norm.check("mass_error", abs(kern.mass() - 1.0), "<=", 1e-3)
    inner = kern.values[_window(cfg, kern, cfg.t)]
    norm.check("interior_positivity", float(inner.min()), ">", 0.0)
    reports.append(norm)

    if cfg.group == "euclidean1":
        exact_rep = DiagnosticsReport("kernel_euclidean_exactness")
        t = 0.1
        k = kernel_estimate(group, _spec(cfg), t, box, boundary)
        x = box.axis_coords(0)
        closed = (4.0 * math.pi * t) ** -0.5 * np.exp(-(x**2) / (4.0 * t))
        err = float(np.max(np.abs(k.values - closed)))
        exact_rep.record(t=t, sup_error=err)
        exact_rep.check("sup_error", err, "<=", 1e-3)
        reports.append(exact_rep)
        reports.append(
            rescaling_check(group, cfg.t, 4.0 * cfg.t, box, boundary,
                            cfg.cfl_safety, cfg.margin_factor, err_threshold=2e-2)
        )

    reports.append(
        gaussian_bound_check(group, _spec(cfg), cfg.t, box, boundary, cfg.margin_factor)
    )
    if cfg.eps_list and any(d > 1 for d in group.degrees):
        reports.append(
            eps_convergence_check(group, cfg.t, cfg.eps_list, box, boundary,
                                  cfg.cfl_safety, cfg.margin_factor)
        )
    return reports


def mbo_suite(cfg: FlowConfig, n_pairs: int = 10) -> list[DiagnosticsReport]:
    """Structural properties of the threshold operator on seeded random data:
    order preservation, constant equivariance, non-expansiveness; plus
    stationarity of the configured preset when it is an invariant datum."""
    rng = np.random.default_rng(cfg.seed)
    t = cfg.t
    tol = 2.0 * cfg.root_tol
    rep = DiagnosticsReport("threshold_operator_properties")
    worst = {"monotone": 0.0, "equivariance": 0.0, "contraction": -math.inf}
    for pair in range(n_pairs):
        f = random_smooth_field(cfg, rng)
        g = random_smooth_field(cfg, rng)
        hf = diffuse_threshold(f, t, cfg)
        hg = diffuse_threshold(g, t, cfg)
        # ordered pair: g_up >= f pointwise
        bump = np.abs(random_smooth_field(cfg, rng, amplitude=0.1).values)
        g_up = f.with_values(f.values + bump)
        h_up = diffuse_threshold(g_up, t, cfg)
        worst["monotone"] = max(worst["monotone"], float(np.max(hf.values - h_up.values)))
        for c in (-1.0, 0.37, 2.0):
            hc = diffuse_threshold(f.with_values(f.values + c), t, cfg)
            worst["equivariance"] = max(
                worst["equivariance"], float(np.max(np.abs(hc.values - hf.values - c)))
            )
        gap = float(np.max(np.abs(hf.values - hg.values)))
        bound = float(np.max(np.abs(f.values - g.values)))
        worst["contraction"] = max(worst["contraction"], gap - bound)
        rep.add_row(pair=pair, contraction_gap=gap, input_gap=bound)
    rep.record(n_pairs=float(n_pairs), t=t, **worst)
    rep.check("monotonicity_violation", worst["monotone"], "<=", tol)
    rep.check("equivariance_error", worst["equivariance"], "<=", tol)
    rep.check("contraction_excess", worst["contraction"], "<=", tol)
    reports = [rep]

    if not cfg.input_path and cfg.preset in STATIONARY_PRESETS:
        reports.append(stationarity_report(cfg))
    return reports


def stationarity_report(cfg: FlowConfig) -> DiagnosticsReport:
    """Invariant data stay fixed under both the threshold operator and the
    direct flow: exactly (2 root_tol) for euclidean constants/affine data on
    the window, to discretization tolerance (5e-3) on heisenberg1.

    Euclidean affine data are run grid-compatibly: the level grid is aligned
    with the datum's (arithmetic) value set, so every sampled graph height is
    a stack level and the exact half-space symmetry of the scheme puts the
    crossing on the node, with no interpolation bias in the fixed point."""
    f = initial_datum(cfg)
    t = cfg.t
    rep = DiagnosticsReport(f"stationarity_{cfg.preset}")
    tol = 5e-3 if cfg.group == "heisenberg1" else 2.0 * cfg.root_tol
    w = _stationarity_window(cfg, f, t, tol)
    if cfg.preset == "affine" and cfg.group != "heisenberg1":
        levels = _value_aligned_levels(f, t)
        stack = build_level_stack(f, t, levels, spec=_spec(cfg))
        moved = threshold(stack, root_tol=cfg.root_tol, interp=cfg.threshold_interp)
    else:
        moved = diffuse_threshold(f, t, cfg)
    err_mbo = float(np.max(np.abs(moved.values - f.values)[w]))
    evolved = direct_flow(f, t, cfg)
    err_flow = float(np.max(np.abs(evolved.values - f.values)[w]))
    rep.record(t=t, threshold_move=err_mbo, flow_move=err_flow,
               window_fraction=float(np.mean(w)))
    rep.check("threshold_move", err_mbo, "<=", tol)
    rep.check("flow_move", err_flow, "<=", tol)
    return rep


def _value_aligned_levels(f: GridFunction, t: float) -> np.ndarray:
    """Uniform levels whose grid contains every sampled value of f (the
    datum's values must form an arithmetic progression, as affine data on a
    uniform grid do)."""
    vals = np.unique(f.values.reshape(-1))
    if len(vals) == 1:
        step = 0.3 * math.sqrt(t)
    else:
        gaps = np.diff(vals)
        step = float(np.min(gaps))
        if np.max(np.abs(gaps / step - np.round(gaps / step))) > 1e-6:
            raise ValueError("datum values are not on an arithmetic lattice")
    pad = 6.0 * math.sqrt(t)
    n_lo = int(math.ceil(pad / step)) + 1
    n_hi = int(math.ceil((float(vals[-1] - vals[0]) + pad) / step)) + 1
    return vals[0] + step * np.arange(-n_lo, n_hi + 1)


def compare_suite(cfg: FlowConfig) -> list[DiagnosticsReport]:
    """Threshold iteration against the direct curvature-flow oracle:
    d_j = sup-window |H(t/j)^j f - flow(f, t)| must fall with j."""
    f = initial_datum(cfg)
    t = cfg.t
    oracle = direct_flow(f, t, cfg)
    w = _window(cfg, f, t)
    rep = DiagnosticsReport("threshold_vs_flow")
    ds = []
    for j in cfg.j_list:
        m = mbo_flow(f, t, j, cfg)
        d = float(np.max(np.abs(m.values - oracle.values)[w]))
        ds.append(d)
        rep.add_row(j=j, sup_distance=d)
    rep.record(t=t, **{f"d_{j}": d for j, d in zip(cfg.j_list, ds)})
    rep.check("d_lastj_below_d_firstj", ds[-1], "<", ds[0])
    if cfg.group == "euclidean1" and cfg.preset == "sine1d":
        rep.check("d_lastj_vs_osc", ds[-1], "<=", 0.05 * f.osc())
    return [rep]


def semigroup_suite(cfg: FlowConfig) -> list[DiagnosticsReport]:
    """Resolvent-iteration semigroup against the direct flow: the distance
    must decrease along cfg.j_list (backward-Euler consistency).  The
    relaxation residual histories go into a companion report."""
    f = initial_datum(cfg)
    t = cfg.t
    oracle = direct_flow(f, t, cfg)
    w = _window(cfg, f, t)
    rep = DiagnosticsReport("resolvent_vs_flow")
    hist_rep = DiagnosticsReport("resolvent_residual_history")
    ds = []
    for j in cfg.j_list:
        lam = t / j
        out = f
        for step in range(j):
            history: list = []
            out = resolvent(out, lam, cfg, history=history)
            for it, res in history:
                hist_rep.add_row(j=j, step=step, iteration=it, residual=res)
        d = float(np.max(np.abs(out.values - oracle.values)[w]))
        ds.append(d)
        rep.add_row(j=j, sup_distance=d)
    rep.record(t=t, **{f"d_{j}": d for j, d in zip(cfg.j_list, ds)})
    for a, b, j in zip(ds, ds[1:], cfg.j_list[1:]):
        rep.check(f"decreasing_at_j={j}", b, "<", a)
    return [rep, hist_rep]


def asymptotics_suite(cfg: FlowConfig) -> list[DiagnosticsReport]:
    """Normal-speed defect for the configured datum, plus (on euclidean1) the
    sqrt(t)-expansion fit against the tangent-plane quadrature."""
    f = initial_datum(cfg)
    reports = [normal_speed_check(f, cfg.times, cfg, margin_factor=cfg.margin_factor)]
    errs = [row["defect"] for row in reports[0].rows if "defect" in row]
    if cfg.group == "euclidean1":
        reports[0].check("defect_ratio", errs[-1] / errs[0], "<=", 0.8)
        reports.append(expansion_report(cfg))
    return reports


def expansion_report(cfg: FlowConfig, min_points: int = 5) -> DiagnosticsReport:
    """Cross-check the two estimators of the tangent-plane kernel mass on a
    curved euclidean1 datum (the bump preset unless overridden)."""
    fit_cfg = cfg if (cfg.preset == "bump" or cfg.input_path) else _with_preset(cfg, "bump")
    f = initial_datum(fit_cfg)
    w = _window(fit_cfg, f, max(cfg.fit_times))
    h0 = curvature_h0(f).h0
    candidates = np.argwhere(w & (np.abs(h0) >= 0.05))
    if len(candidates) < min_points:
        raise ValueError("datum does not expose enough curved sample points")
    # prefer the most curved points, kept apart by a few diffusion lengths;
    # the expansion's O(t) remainder blows up where the profile's higher
    # derivatives spike (the edge of a compactly supported bump)
    order = np.argsort(-np.abs(h0[tuple(candidates.T)]))
    sep = 4.0 * math.sqrt(max(cfg.fit_times))
    points: list[tuple] = []
    coords = [f.box.axis_coords(i) for i in range(f.box.ndim)]
    for idx in candidates[order]:
        pos = np.array([coords[i][j] for i, j in enumerate(idx)])
        if all(
            np.linalg.norm(pos - np.array([coords[i][j] for i, j in enumerate(q)])) >= sep
            for q in points
        ):
            points.append(tuple(idx))
        if len(points) >= min_points + 2:
            break
    if len(points) < min_points:
        raise ValueError("datum does not expose enough separated curved points")
    fit = taylor_fit(f, points, cfg.fit_times, cfg)
    quad_box = _quadrature_box(f)
    quad = plane_integral(f.group, np.zeros(f.group.m), quad_box,
                          "extend_constant", cfg.cfl_safety)
    rep = DiagnosticsReport("plane_mass_estimators")
    med = float(np.nanmedian(fit.ratio))
    rep.record(
        fit_ratio_median=med,
        fit_ratio_spread=fit.ratio_spread(),
        quadrature=quad,
        flat_exact=(4.0 * math.pi) ** -0.5,
        n_points=float(len(points)),
    )
    for p, c, h, r in zip(fit.points, fit.coef_sqrt, fit.h0, fit.ratio):
        rep.add_row(point=str(p), coef_sqrt=float(c), h0=float(h), ratio=float(r))
    rep.check("ratio_spread", fit.ratio_spread(), "<=", 0.15)
    rep.check("fit_vs_quadrature", abs(med / quad - 1.0), "<=", 0.15)
    rep.check("flat_plane_value", abs(quad / (4.0 * math.pi) ** -0.5 - 1.0), "<=", 2e-2)
    return rep


def _with_preset(cfg: FlowConfig, preset: str) -> FlowConfig:
    from dataclasses import replace

    return replace(cfg, preset=preset, input_path="")


def _quadrature_box(f: GridFunction):
    """Box for the t = 1 kernel quadrature: wide enough for the kernel tails,
    node count inherited from the run's grid."""
    from .grid import Box

    extents = []
    for d in f.group.degrees:
        extents.append(16.0 if d == 1 else 10.0)
    counts = tuple(max(c, 64) for c in f.box.counts)
    return Box.centered(tuple(extents), counts)


# ---------------------------------------------------------------------------
# artifact runs (field dumps + iterate statistics)


def flow_run(cfg: FlowConfig, outdir: Path) -> list[DiagnosticsReport]:
    """Direct curvature flow of the configured datum, dumping the initial and
    final fields and a CSV of the curvature diagnostics."""
    f = initial_datum(cfg)
    tag = manifest_hash(cfg)
    save_field(outdir / "initial.cmbo", f)
    out = direct_flow(f, cfg.t, cfg)
    save_field(outdir / "final.cmbo", out)
    field_to_csv(outdir / "final.csv", out, manifest=tag)
    cf = curvature_h0(f, margin=cfg.margin_factor * math.sqrt(cfg.t))
    rep = DiagnosticsReport("flow_run")
    rep.record(
        t=cfg.t,
        initial_sup=float(f.values.max()),
        final_sup=float(out.values.max()),
        initial_h0_max=float(np.max(np.abs(cf.h0[cf.valid_mask]))),
        sup_decrease=float(f.values.max() - out.values.max()),
    )
    rep.check("final_values_finite", float(np.max(np.abs(out.values))), "<",
              float(np.max(np.abs(f.values))) + f.osc() + 1.0)
    return [rep]


def mbo_run(cfg: FlowConfig, outdir: Path) -> list[DiagnosticsReport]:
    """Threshold iteration of the configured datum with j = last of j.list,
    dumping every iterate and the iterate statistics CSV."""
    f = initial_datum(cfg)
    tag = manifest_hash(cfg)
    j = cfg.j_list[-1]
    out, traj, stats = mbo_flow(f, cfg.t, j, cfg, record=True)
    for k, field in enumerate(traj):
        save_field(outdir / f"iterate_{k:03d}.cmbo", field)
    rep = DiagnosticsReport("mbo_run")
    for row in stats:
        rep.add_row(**row)
    rep.record(t=cfg.t, j=float(j), final_sup=float(out.values.max()),
               final_inf=float(out.values.min()))
    rep.check("iterates_bounded", float(np.max(np.abs(out.values))), "<=",
              float(np.max(np.abs(f.values))) + 1e-9)
    return [rep]


SUITES = {
    "kernel": kernel_suite,
    "mbo": mbo_suite,
    "compare": compare_suite,
    "asymptotics": asymptotics_suite,
    "semigroup": semigroup_suite,
}


def run_suite(cfg: FlowConfig, suite: str, outdir: str | Path | None = None):
    """Run one named suite; write manifest + CSV artifacts when outdir given.

    Returns (reports, passed).  Deterministic for a fixed config and seed.
    """
    if suite in SUITES:
        runner = SUITES[suite]
        needs_dir = False
    elif suite == "flow":
        runner, needs_dir = flow_run, True
    elif suite == "mbo-run":
        runner, needs_dir = mbo_run, True
    else:
        raise ValueError(f"unknown suite {suite!r}")
    out = Path(outdir) if outdir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if needs_dir and out is None:
        raise ValueError(f"suite {suite!r} produces artifacts and needs an output directory")
    reports = runner(cfg, out) if needs_dir else runner(cfg)
    extra = b""
    if cfg.input_path:
        with open(cfg.input_path, "rb") as fh:
            extra = fh.read()
    tag = manifest_hash(cfg, extra)
    if out is not None:
        with open(out / "manifest.txt", "w") as fh:
            fh.write(f"manifest = {tag}\nsuite = {suite}\n")
            for line in resolve_lines(cfg):
                fh.write(line + "\n")
        for rep in reports:
            rep.to_csv(out / f"{rep.name}.csv", manifest=tag)
    passed = all(rep.passed for rep in reports)
    return reports, passed
