import math

import numpy as np
import pytest
from scipy.special import erf

from cmbo.grid import Box, GridFunction, interior_mask
from cmbo.groups import euclidean, heisenberg1
from cmbo.mbo import (
    BracketError,
    auto_levels,
    build_level_stack,
    diffuse_threshold,
    mbo_flow,
    threshold,
    threshold_residual,
)

G1 = euclidean(1)
H = heisenberg1()


def _torus_field(values):
    n = len(values)
    box = Box((-math.pi,), (2 * math.pi,), (n,))
    return GridFunction(G1, box, np.asarray(values, dtype=float), "torus")


def _sine(n=128, amp=0.3):
    box = Box((-math.pi,), (2 * math.pi,), (n,))
    x = box.axis_coords(0)
    return GridFunction(G1, box, amp * np.sin(x), "torus")


def test_stack_constant_slices():
    t = 0.04
    f = _torus_field(np.zeros(128))
    lam = np.array([0.0, 2.0 * math.sqrt(t)])
    stack = build_level_stack(f, t, lam, check_span=False)
    # Phi_t(0) = 1/2 exactly; Phi_t(-2 sqrt t) = (1 - erf(1))/2
    assert np.max(np.abs(stack.slices[0] - 0.5)) == 0.0
    assert np.allclose(stack.slices[1], 0.5 * (1.0 - erf(1.0)), atol=1e-15)


def test_stack_monotone_in_level():
    t = 0.03
    f = _sine()
    stack = build_level_stack(f, t, auto_levels(f, t))
    assert np.all(np.diff(stack.slices, axis=0) < 1e-12)
    assert stack.slices.min() >= 0.0 and stack.slices.max() <= 1.0


def test_stack_span_validation():
    f = _sine()
    with pytest.raises(ValueError, match="too narrow"):
        build_level_stack(f, 0.04, np.linspace(-0.31, 0.31, 9))
    with pytest.raises(ValueError, match="increasing"):
        build_level_stack(f, 0.04, np.array([0.0, 0.0, 0.1]), check_span=False)


def test_threshold_constant_exact():
    f = _torus_field(np.full(128, 0.37))
    g = diffuse_threshold(f, 0.05)
    assert np.array_equal(g.values, f.values)


def test_threshold_torus_affine_slope_zero():
    # the torus-compatible affine datum has slope 0
    f = _torus_field(np.full(64, -1.2))
    stack = build_level_stack(f, 0.02, auto_levels(f, 0.02))
    g = threshold(stack)
    assert np.max(np.abs(g.values - f.values)) < 1e-14
    assert threshold_residual(stack, g) <= 1e-8


def test_threshold_residual_contract():
    f = _sine()
    t = 0.05
    stack = build_level_stack(f, t, auto_levels(f, t))
    g = threshold(stack, root_tol=1e-8, interp="linear")
    assert threshold_residual(stack, g) <= 1e-8
    # the cubic root differs from the linear readback by interpolation order
    gp = threshold(stack, root_tol=1e-8, interp="pchip")
    assert threshold_residual(stack, gp) <= 1e-4
    assert np.max(np.abs(gp.values - g.values)) <= 1e-3
    with pytest.raises(ValueError):
        threshold(stack, interp="spline")


def test_threshold_bracket_error_names_point():
    f = _sine()
    t = 0.04
    stack = build_level_stack(f, t, auto_levels(f, t))
    bad = stack.slices.copy()
    bad[:, 17] = 0.2  # 1/2 never bracketed at grid point 17
    broken = type(stack)(grid=stack.grid, levels=stack.levels, slices=bad, t=stack.t)
    with pytest.raises(BracketError, match=r"\(17,\)"):
        threshold(broken)


def test_value_interpolation_monotone():
    f = _sine()
    t = 0.05
    stack = build_level_stack(f, t, auto_levels(f, t))
    lams = np.linspace(stack.levels[0], stack.levels[-1], 301)
    vals = np.array([stack.value_at((64,), lam) for lam in lams])
    assert np.all(np.diff(vals) <= 1e-15)


def test_diffuse_threshold_properties_quick():
    t = 0.05
    rng = np.random.default_rng(11)
    box = Box((-math.pi,), (2 * math.pi,), (128,))
    x = box.axis_coords(0)
    for _ in range(4):
        a = sum(rng.normal(0, 0.2 / k**2) * np.sin(k * x + rng.uniform(0, 6)) for k in (1, 2, 3))
        f = GridFunction(G1, box, a, "torus")
        hf = diffuse_threshold(f, t)
        # equivariance
        hc = diffuse_threshold(f.with_values(a + 0.37), t)
        assert np.max(np.abs(hc.values - hf.values - 0.37)) <= 2e-8
        # monotonicity
        up = f.with_values(a + 0.05 + 0.1 * np.cos(x) ** 2)
        hup = diffuse_threshold(up, t)
        assert np.max(hf.values - hup.values) <= 2e-8
        # contraction against a second field
        b = sum(rng.normal(0, 0.2 / k**2) * np.sin(k * x + rng.uniform(0, 6)) for k in (1, 2, 3))
        hb = diffuse_threshold(f.with_values(b), t)
        assert np.max(np.abs(hf.values - hb.values)) <= np.max(np.abs(a - b)) + 2e-8


def test_mbo_flow_basics():
    f = _sine()
    t = 0.05
    one = mbo_flow(f, t, 1)
    direct = diffuse_threshold(f, t)
    assert np.array_equal(one.values, direct.values)
    const = _torus_field(np.full(128, 0.8))
    for j in (1, 3):
        assert np.array_equal(mbo_flow(const, t, j).values, const.values)
    out, traj, stats = mbo_flow(f, t, 4, record=True)
    assert len(traj) == 5 and len(stats) == 4
    assert all(s["sup_increment"] >= 0 for s in stats)
    with pytest.raises(ValueError):
        mbo_flow(f, t, 0)


def test_pinning_warning():
    f = _sine(n=32)  # h large relative to the step diffusion length
    with pytest.warns(RuntimeWarning, match="pin"):
        mbo_flow(f, 4e-4, 2)


def test_level_resolution_consistency():
    # doubling the level count shrinks the threshold output change
    f = _sine(n=256, amp=0.35)
    t = 0.05
    outs = {}
    for k in (33, 65, 129, 257):
        stack = build_level_stack(f, t, auto_levels(f, t, k_min=k, resolution=1e9, k_max=k))
        outs[k] = threshold(stack).values
    d33 = np.max(np.abs(outs[33] - outs[257]))
    d65 = np.max(np.abs(outs[65] - outs[257]))
    d129 = np.max(np.abs(outs[129] - outs[257]))
    assert d65 < 0.5 * d33
    assert d129 < 0.5 * d65


def test_heisenberg_plane_fixed_point():
    box = Box.centered([4.0, 4.0, 1.6], [24, 24, 24])
    X, Y, _ = box.meshgrid()
    f = GridFunction(H, box, 0.1 * X - 0.15 * Y + 0.2, "extend_constant")
    g = diffuse_threshold(f, 0.03)
    w = interior_mask(f, margin=4 * math.sqrt(0.03))
    assert np.max(np.abs(g.values - f.values)[w]) <= 5e-3
