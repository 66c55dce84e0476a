import numpy as np
import pytest
import sympy as sp

from cmbo.groups import euclidean, from_kind, heisenberg1


def test_descriptor_invariants():
    H = heisenberg1()
    assert (H.n, H.m, H.Q, H.step) == (3, 2, 4, 2)
    assert H.degrees == (1, 1, 2)
    for n in (1, 2):
        G = euclidean(n)
        assert (G.n, G.m, G.Q) == (n, n, n)
    with pytest.raises(ValueError):
        euclidean(3)
    with pytest.raises(ValueError):
        from_kind("so3")


def test_multiply_examples():
    H = heisenberg1()
    out = H.multiply(np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]))
    assert np.allclose(out, [1.0, 1.0, 0.5], atol=0, rtol=0)
    p = np.array([0.3, -1.2, 0.7])
    assert np.allclose(H.multiply(p, H.inverse(p)), 0.0, atol=1e-15)
    G2 = euclidean(2)
    assert np.allclose(G2.multiply(np.array([1.0, 2.0]), np.array([3.0, 4.0])), [4.0, 6.0])
    with pytest.raises(ValueError):
        H.multiply(np.zeros(2), np.zeros(2))


def test_inverse_examples():
    H = heisenberg1()
    assert np.allclose(H.inverse(np.array([1.0, 2.0, 3.0])), [-1.0, -2.0, -3.0])
    assert euclidean(1).inverse(np.array([5.0])) == pytest.approx(-5.0)
    p = np.array([0.1, 0.2, 0.3])
    assert np.allclose(H.inverse(H.inverse(p)), p)


def test_associativity_random_triples():
    H = heisenberg1()
    rng = np.random.default_rng(7)
    p, q, r = rng.normal(size=(3, 100, 3))
    left = H.multiply(H.multiply(p, q), r)
    right = H.multiply(p, H.multiply(q, r))
    assert np.max(np.abs(left - right)) < 1e-12


def test_dilation_examples():
    H = heisenberg1()
    assert np.allclose(H.dilate(2.0, np.array([1.0, 1.0, 1.0])), [2.0, 2.0, 4.0])
    p = np.array([0.3, -0.7, 0.2])
    assert np.allclose(H.dilate(1.0, p), p)
    assert np.allclose(
        H.dilate(2.0, H.dilate(3.0, np.array([1.0, 0.0, 1.0]))),
        H.dilate(6.0, np.array([1.0, 0.0, 1.0])),
    )
    with pytest.raises(ValueError):
        H.dilate(-1.0, p)


def test_gauge_norm():
    H = heisenberg1()
    assert H.gauge_norm(np.array([0.0, 0.0, 1.0])) == pytest.approx(1.0)
    # (1+1+1)^(1/4)
    assert H.gauge_norm(np.array([1.0, 1.0, 1.0])) == pytest.approx(3.0**0.25, abs=1e-14)
    rng = np.random.default_rng(1)
    p = rng.normal(size=(50, 3))
    lam = rng.uniform(0.01, 10.0, size=50)
    scaled = np.stack([H.dilate(l, pi) for l, pi in zip(lam, p)])
    assert np.allclose(H.gauge_norm(scaled), lam * H.gauge_norm(p), rtol=1e-12)
    # symmetric under inversion
    assert np.allclose(H.gauge_norm(H.inverse(p)), H.gauge_norm(p))
    G1 = euclidean(1)
    assert G1.gauge_norm(np.array([-2.0])) == pytest.approx(2.0)


def test_eps_norm_branches():
    H = heisenberg1()
    v = np.array([0.0, 0.0, 4.0])
    assert H.eps_norm(1.0, v) == pytest.approx(2.0)  # min(4/1, sqrt 4)
    assert H.eps_norm(4.0, v) == pytest.approx(1.0)  # min(4/4, 2)
    assert H.eps_norm(0.0, v) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        H.eps_norm(-0.5, v)


def test_eps_distance_sandwich():
    H = heisenberg1()
    rng = np.random.default_rng(2)
    p, q = rng.normal(size=(2, 100, 3))
    d1 = H.eps_distance(1.0, p, q)
    d0 = H.eps_distance(0.0, p, q)
    for eps in (0.75, 0.5, 0.2, 0.05):
        de = H.eps_distance(eps, p, q)
        assert np.all(d1 <= de + 1e-14)
        assert np.all(de <= d0 + 1e-14)


def _sympy_fields(group):
    xs = sp.symbols(f"x0:{group.n}")
    ops = []
    for fld in group.horizontal_fields():
        coeffs = []
        for j in range(group.n):
            c = sp.Float(fld.const[j])
            for k, w in enumerate(fld.lin[j]):
                c = c + w * xs[k]
            coeffs.append(sp.simplify(c))
        ops.append(lambda u, cs=coeffs: sum(c * sp.diff(u, xj) for c, xj in zip(cs, xs)))
    return xs, ops


def test_horizontal_fields_symbolic():
    H = heisenberg1()
    xs, (X1, X2) = _sympy_fields(H)
    u = xs[2]
    assert sp.simplify(X1(u) + xs[1] / 2) == 0
    assert sp.simplify(X2(u) - xs[0] / 2) == 0
    # commutator [X1, X2] = d/dz, checked on u = z
    assert sp.simplify(X1(X2(u)) - X2(X1(u)) - 1) == 0
    G1 = euclidean(1)
    xs1, (X,) = _sympy_fields(G1)
    assert sp.simplify(X(xs1[0] ** 2).subs(xs1[0], 1) - 2) == 0


def test_product_group_vertical_field():
    H = heisenberg1()
    fields = H.horizontal_fields(include_vertical=True)
    assert len(fields) == 3
    vert = fields[-1]
    assert vert.axis == 3 and vert.const == (0.0, 0.0, 0.0, 1.0)
