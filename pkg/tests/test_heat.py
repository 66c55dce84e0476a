import math

import numpy as np
import pytest
from scipy.interpolate import RegularGridInterpolator

from cmbo.grid import Box, GridFunction, interior_mask
from cmbo.groups import euclidean, heisenberg1
from cmbo.heat import (
    BoxTooSmallError,
    CflError,
    HeatOperatorSpec,
    eps_convergence_check,
    gaussian_bound_check,
    heat_evolve,
    heat_step,
    kernel_estimate,
    rescaling_check,
    stable_dt,
    vertical_cdf,
)

G1 = euclidean(1)
G2 = euclidean(2)
H = heisenberg1()
SPEC = HeatOperatorSpec()


def _sine(n=256, L=2 * math.pi, amp=1.0, mode=1):
    box = Box((-L / 2,), (L,), (n,))
    x = box.axis_coords(0)
    return GridFunction(G1, box, amp * np.sin(mode * 2 * np.pi * x / L), "torus")


def test_stable_dt_examples():
    # h = 0.1, cfl 0.5: dt = 0.5 * 0.01 / 2
    f = GridFunction(G1, Box.centered([102.4], [1024]), np.zeros(1024), "torus")
    assert stable_dt(f, SPEC) == pytest.approx(0.0025)
    # halving h quarters dt
    f2 = GridFunction(G1, Box.centered([102.4], [2048]), np.zeros(2048), "torus")
    assert stable_dt(f2, SPEC) == pytest.approx(0.000625)


def test_heat_step_constant_and_eigenfunction():
    f = _sine()
    c = f.with_values(np.full_like(f.values, 1.3))
    dt = stable_dt(c, SPEC)
    assert np.array_equal(heat_step(c, SPEC, dt).values, c.values)
    # discrete eigenfunction: one step multiplies by 1 - 4 dt sin^2(pi h/L)/h^2
    g = heat_step(f, SPEC, dt)
    h = f.box.spacings[0]
    L = f.box.extents[0]
    factor = 1.0 - 4.0 * dt * math.sin(math.pi * h / L) ** 2 / h**2
    assert np.max(np.abs(g.values - factor * f.values)) < 1e-13
    with pytest.raises(CflError):
        heat_step(f, SPEC, 3.0 * dt)


def test_heisenberg_coordinate_field_harmonic():
    # u = x is annihilated by the directional stencils away from the boundary
    box = Box.centered([3.2, 3.2, 0.8], [24, 24, 24])
    X, _, _ = box.meshgrid()
    f = GridFunction(H, box, X.copy(), "extend_constant")
    g = heat_step(f, SPEC, stable_dt(f, SPEC))
    inner = interior_mask(f, margin=0.3)
    assert np.max(np.abs(g.values - f.values)[inner]) < 1e-13


def test_evolve_linearity_and_maximum_principle():
    f = _sine()
    g = _sine(mode=3, amp=0.4)
    a, b = 0.7, -1.3
    lin = heat_evolve(f.with_values(a * f.values + b * g.values), SPEC, 0.05)
    sep = a * heat_evolve(f, SPEC, 0.05).values + b * heat_evolve(g, SPEC, 0.05).values
    assert np.max(np.abs(lin.values - sep)) < 1e-12
    ev = heat_evolve(f, SPEC, 0.05)
    assert ev.values.min() >= f.values.min() - 1e-15
    assert ev.values.max() <= f.values.max() + 1e-15


def test_mass_conservation_on_torus():
    f = _sine(amp=0.8)
    before = f.mass()
    after = heat_evolve(f, SPEC, 0.1).mass()
    assert abs(after - before) < 1e-12


def test_comparison_exact():
    rng = np.random.default_rng(3)
    box = Box((-math.pi,), (2 * math.pi,), (256,))
    x = box.axis_coords(0)
    for _ in range(5):
        lo = sum(
            rng.normal(0, 0.15 / k**2) * np.sin(k * x + rng.uniform(0, 6)) for k in range(1, 4)
        )
        hi = lo + 0.02 + np.abs(rng.normal(0, 0.1)) * np.sin(2 * x) ** 2
        elo = heat_evolve(GridFunction(G1, box, lo, "torus"), SPEC, 0.05)
        ehi = heat_evolve(GridFunction(G1, box, hi, "torus"), SPEC, 0.05)
        assert np.max(elo.values - ehi.values) <= 0.0


def test_semigroup_property():
    f = _sine(amp=0.3)
    two = heat_evolve(heat_evolve(f, SPEC, 0.02), SPEC, 0.03)
    one = heat_evolve(f, SPEC, 0.05)
    fine = _sine(n=512, amp=0.3)
    one_fine = heat_evolve(fine, SPEC, 0.05)
    single_run_err = np.max(np.abs(one.values - one_fine.values[::2]))
    assert np.max(np.abs(two.values - one.values)) <= 2.0 * single_run_err


def test_kernel_matches_gaussian_1d():
    box = Box.centered([8.0], [512])
    k = kernel_estimate(G1, SPEC, 0.1, box)
    x = box.axis_coords(0)
    exact = (4 * math.pi * 0.1) ** -0.5 * np.exp(-(x**2) / 0.4)
    assert np.max(np.abs(k.values - exact)) <= 1e-3
    assert abs(k.mass() - 1.0) <= 1e-3
    assert np.all(k.values[128:384] > 0)


def test_kernel_product_structure_2d():
    box = Box.centered([6.4, 6.4], [128, 128])
    k = kernel_estimate(G2, SPEC, 0.1, box)
    xx, yy = box.meshgrid()
    exact = (4 * math.pi * 0.1) ** -1 * np.exp(-(xx**2 + yy**2) / 0.4)
    assert np.max(np.abs(k.values - exact)) <= 1e-3


def test_kernel_box_guard():
    with pytest.raises(BoxTooSmallError):
        kernel_estimate(G1, SPEC, 0.5, Box.centered([1.0], [64]), mass_guard=1e-3)
    with pytest.raises(ValueError):
        # no node at the identity
        kernel_estimate(G1, SPEC, 0.05, Box((0.25,), (2.0,), (16,)))


def test_vertical_cdf():
    assert vertical_cdf(0.37, 0.0) == pytest.approx(0.5)
    # (1 + erf(1))/2
    assert vertical_cdf(1.0, 2.0) == pytest.approx(0.9213503964748574, abs=1e-15)
    s = np.linspace(-3, 3, 13)
    assert np.allclose(vertical_cdf(0.2, s) + vertical_cdf(0.2, -s), 1.0, atol=1e-15)
    with pytest.raises(ValueError):
        vertical_cdf(0.0, 1.0)


def test_rescaling_euclidean():
    rep = rescaling_check(G1, 0.05, 0.2, Box.centered([8.0], [512]))
    assert rep.passed
    assert rep.scalars["sup_rel_error"] <= 2e-2
    assert rep.scalars["fitted_exponent"] == pytest.approx(0.5, abs=0.02)
    with pytest.raises(ValueError):
        rescaling_check(G1, 0.05, 0.05, Box.centered([8.0], [512]))


def test_rescaling_heisenberg_self_convergence():
    # two-scale ladder (z refined 4x faster than x): error decreases, exponent -> Q/2
    errs = []
    for nx, nz in ((24, 96), (48, 192)):
        rep = rescaling_check(
            H, 0.025, 0.1, Box.centered([3.2, 3.2, 1.0], [nx, nx, nz]),
            margin_factor=3.0, err_threshold=1.0,
        )
        errs.append(rep.scalars["sup_rel_error"])
    assert errs[1] < errs[0]
    assert rep.scalars["fitted_exponent"] == pytest.approx(2.0, abs=0.1)


def test_gaussian_bound_euclidean_rate():
    rep = gaussian_bound_check(G1, SPEC, 0.05, Box.centered([8.0], [512]))
    assert 0.2 <= rep.scalars["c2_rate"] <= 0.3
    assert rep.scalars["violation_fraction"] <= 1e-2


def test_gaussian_bound_heisenberg_stability():
    rates = []
    for t in (0.025, 0.05, 0.1):
        rep = gaussian_bound_check(H, SPEC, t, Box.centered([3.2, 3.2, 1.2], [48, 48, 48]))
        assert rep.scalars["violation_fraction"] <= 1e-2
        rates.append(rep.scalars["c2_rate"])
    mid = np.median(rates)
    assert np.max(np.abs(np.array(rates) / mid - 1.0)) <= 0.6


def test_eps_convergence_small():
    rep = eps_convergence_check(H, 0.05, [1.0, 0.5, 0.25], Box.centered([4.0, 4.0, 2.4], [32, 32, 32]))
    sups = [row["sup_distance"] for row in rep.rows]
    assert sups[0] > sups[1] > sups[2]
    assert rep.passed
    with pytest.raises(ValueError):
        eps_convergence_check(H, 0.05, [0.25, 0.5], Box.centered([4.0, 4.0, 2.4], [32, 32, 32]))
    # on a step-1 group the eps operator is the same operator
    ke = kernel_estimate(G1, HeatOperatorSpec(eps=0.7), 0.05, Box.centered([8.0], [256]))
    k0 = kernel_estimate(G1, SPEC, 0.05, Box.centered([8.0], [256]))
    assert np.array_equal(ke.values, k0.values)


def test_left_invariance_lattice_translation():
    # x-translation by 5 h_x with 5 h_x h_y/(2 h_z) integer maps the grid to
    # itself, so the evolved deltas must match up to boundary-tail effects
    box = Box.centered([3.2, 3.2, 0.8], [32, 32, 128])
    hx, hy, hz = box.spacings
    g = np.array([5 * hx, 0.0, 8 * hz])
    assert abs(5 * hx * hy / (2 * hz) - round(5 * hx * hy / (2 * hz))) < 1e-12
    kc = kernel_estimate(H, SPEC, 0.04, box)
    vals = np.zeros(box.counts)
    idx = tuple(int(round((gi - o) / h)) for gi, o, h in zip(g, box.origins, box.spacings))
    vals[idx] = 1.0 / box.cell_volume
    kg = heat_evolve(GridFunction(H, box, vals, "extend_constant"), SPEC, 0.04)
    pts = box.points()
    trans = H.multiply(H.inverse(g)[None, None, None, :], pts)
    ti = []
    for a in range(3):
        t = (trans[..., a] - box.origins[a]) / box.spacings[a]
        assert np.max(np.abs(t - np.round(t))) < 1e-10
        ti.append(np.round(t).astype(int))
    inbox = np.ones(box.counts, bool)
    for a in range(3):
        inbox &= (ti[a] >= 0) & (ti[a] < box.counts[a])
    w = interior_mask(kc, margin=3 * math.sqrt(0.04)) & inbox
    pred = kc.values[ti[0][w], ti[1][w], ti[2][w]]
    act = kg.values[w]
    assert np.max(np.abs(pred - act)) / act.max() < 5e-4
