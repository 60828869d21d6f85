import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from etbackstep import ContractError, SpecificationError, compute_gain_table, lemma1_constant, lemma2_bounds
from etbackstep.ccs import backstep, virtual_alpha
from etbackstep.gains import GainTable, gain_table_for, subsystem_gains


def symbolic_design(c, varpi1, varpi2):
    """Virtual controllers written out symbolically, xi taken by differentiation."""
    n = len(c)
    x = sp.symbols(f"x1:{n + 1}")
    pen = [sum(sp.Rational(1, 4) / sp.nsimplify(w1[k]) + sp.Rational(1, 4) / sp.nsimplify(w2[k])
               for w1, w2 in zip(varpi1, varpi2)) for k in range(n)]
    z, alpha, K = [], [], []
    for k in range(n):
        if k == 0:
            z.append(x[0])
            K.append(sp.nsimplify(c[0]) + pen[0])
            alpha.append(-K[0] * z[0])
            continue
        xi_prev = [sp.diff(alpha[k - 1], x[l]) for l in range(k)]
        K.append(sp.nsimplify(c[k]) + pen[k] + pen[k] * sum(v ** 2 for v in xi_prev))
        z.append(x[k] - alpha[k - 1])
        alpha.append(sp.expand(-K[k] * z[k] - z[k - 1] + sum(xi_prev[l] * x[l + 1] for l in range(k))))
    xi = [[float(sp.diff(alpha[k], x[l])) for l in range(n)] for k in range(n)]
    return [float(v) for v in K], np.array(xi)


def ones(N, n):
    return [[1.0] * n for _ in range(N)]


def test_sec5_gains(sec5):
    _, cfg = sec5
    table = gain_table_for(cfg)
    assert table[0].K[0] == 1.5
    assert table[0].xi[0, 0] == -1.5
    assert table[0].K[1] == pytest.approx(3.55, abs=1e-15)
    assert table[1].K[0] == pytest.approx(2.8, abs=1e-15)


def test_third_order_extension():
    g = subsystem_gains([0.5, 0.3, 0.7], ones(2, 3), ones(2, 3))
    assert g.xi[1, 0] == pytest.approx(-6.325, abs=1e-12)
    assert g.xi[1, 1] == pytest.approx(-5.05, abs=1e-12)
    assert g.xi[1, 2] == 0.0


@pytest.mark.parametrize("c,N,seed", [
    ([0.5, 0.3], 2, 0),
    ([1.8, 1.5], 2, 1),
    ([0.4, 0.9, 1.3], 3, 2),
    ([1.0, 0.2, 0.6, 2.0], 2, 3),
    ([0.7], 1, 4),
])
def test_against_symbolic_oracle(c, N, seed):
    rng = np.random.default_rng(seed)
    n = len(c)
    w1 = rng.uniform(0.5, 2.0, size=(N, n)).round(2).tolist()
    w2 = rng.uniform(0.5, 2.0, size=(N, n)).round(2).tolist()
    K_ref, xi_ref = symbolic_design(c, w1, w2)
    g = subsystem_gains(c, w1, w2)
    np.testing.assert_allclose(g.K, K_ref, rtol=1e-12)
    np.testing.assert_allclose(g.xi, xi_ref, rtol=1e-12, atol=1e-12)


def test_finite_difference_oracle(sec5):
    _, cfg = sec5
    table = gain_table_for(cfg)
    rng = np.random.default_rng(7)
    h = 1e-3
    for i, g in enumerate(table.subsystems):
        for _ in range(20):
            x = rng.normal(size=g.order)
            for k in range(g.order):
                for l in range(g.order):
                    e = np.zeros(g.order)
                    e[l] = h
                    fd = (virtual_alpha(table, i, k, x + e) - virtual_alpha(table, i, k, x - e)) / (2 * h)
                    assert fd == pytest.approx(g.xi[k, l], rel=1e-9, abs=1e-9)


def test_gain_invariants():
    rng = np.random.default_rng(11)
    for _ in range(25):
        n = int(rng.integers(1, 6))
        N = int(rng.integers(1, 4))
        c = rng.uniform(0.1, 3.0, size=n)
        g = subsystem_gains(c, rng.uniform(0.2, 5, size=(N, n)), rng.uniform(0.2, 5, size=(N, n)))
        assert np.all(g.K > c)
        assert g.xi[0, 0] == -g.K[0]
        assert np.allclose(np.triu(g.xi, 1), 0.0)
        assert np.allclose(np.diag(g.A), 1.0) and np.allclose(np.triu(g.A, 1), 0.0)
        assert abs(np.linalg.det(g.A) - 1.0) < 1e-12


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_transform_consistency(n):
    rng = np.random.default_rng(n)
    g = subsystem_gains(rng.uniform(0.2, 2, size=n), rng.uniform(0.5, 2, size=(2, n)), rng.uniform(0.5, 2, size=(2, n)))
    # two independent routes to the inverse transform must agree
    np.testing.assert_allclose(g.T, np.linalg.inv(g.M), rtol=1e-9, atol=1e-12 * np.abs(g.T).max())
    for _ in range(1000 if n <= 2 else 100):
        x = rng.normal(size=n)
        z, _ = backstep(g, x)
        scale = max(1.0, np.abs(g.B).max() * np.abs(z).max())
        assert np.max(np.abs(g.A @ x - g.B @ z)) <= 1e-12 * scale
        assert np.max(np.abs(g.T @ z - x)) <= 1e-12 * max(1.0, np.abs(g.T).max() * np.abs(z).max())


def test_b_matrix_layout_for_second_order():
    g = subsystem_gains([0.5, 0.3], ones(2, 2), ones(2, 2))
    np.testing.assert_array_equal(g.A, np.eye(2))
    np.testing.assert_allclose(g.B, [[1.0, 0.0], [-1.5, 1.0]])


def test_lemma1_constants(sec5):
    _, cfg = sec5
    table = gain_table_for(cfg)
    np.testing.assert_allclose(table[0].T, [[1, 0], [-1.5, 1]], atol=1e-15)
    assert lemma1_constant(table, 0) == pytest.approx(math.sqrt(4.25), abs=1e-12)
    assert lemma1_constant(table, 0) == pytest.approx(2.061553, abs=1e-6)
    assert lemma1_constant(table, 1) == pytest.approx(math.sqrt(9.84), abs=1e-12)
    one = compute_gain_table([[0.7]], [[[1.0]]], [[[1.0]]])
    assert lemma1_constant(one, 0) == 1.0


def test_lemma1_norm_bound(sec5):
    _, cfg = sec5
    table = gain_table_for(cfg)
    rng = np.random.default_rng(5)
    for i, g in enumerate(table.subsystems):
        c = lemma1_constant(table, i)
        for z in rng.normal(size=(1000, g.order)):
            assert np.linalg.norm(g.T @ z) <= c * np.linalg.norm(z)


def test_lemma2_examples(sec5):
    _, cfg = sec5
    b = lemma2_bounds(gain_table_for(cfg), cfg.dx)
    assert b.dz[0][0] == 0.001
    assert b.dalpha[0][0] == pytest.approx(0.0015, abs=1e-15)
    assert b.dz[0][1] == pytest.approx(0.0035, abs=1e-15)
    assert b.dalpha[0][1] == pytest.approx(0.016425, abs=1e-15)


def test_lemma2_expanded_form():
    """The bound with every z-coefficient written out term by term."""
    rng = np.random.default_rng(8)
    n, N = 4, 3
    c = rng.uniform(0.2, 2, size=n)
    w1, w2 = rng.uniform(0.5, 2, size=(N, n)), rng.uniform(0.5, 2, size=(N, n))
    dx = rng.uniform(1e-3, 1e-2, size=n)
    g = subsystem_gains(c, w1, w2)
    b = lemma2_bounds(GainTable((g,)), [dx])
    dz = [dx[0]]
    da = [(c[0] + sum(1 / (4 * w1[j, 0]) + 1 / (4 * w2[j, 0]) for j in range(N))) * dz[0]]
    for k in range(1, n):
        dz.append(dx[k] + da[k - 1])
        quad = sum((g.xi[k - 1, l] ** 2) / (4 * w1[j, k]) + (g.xi[k - 1, l] ** 2) / (4 * w2[j, k])
                   for j in range(N) for l in range(k))
        lin = sum(1 / (4 * w1[j, k]) + 1 / (4 * w2[j, k]) for j in range(N))
        da.append(c[k] * dz[k] + sum(abs(g.xi[k - 1, l]) * dx[l + 1] for l in range(k)) + dz[k - 1]
                  + dz[k] * (quad + lin))
    np.testing.assert_allclose(b.dz[0], dz, rtol=1e-12)
    np.testing.assert_allclose(b.dalpha[0], da, rtol=1e-12)


def test_lemma2_sampling_oracle():
    rng = np.random.default_rng(9)
    g = subsystem_gains([0.5, 0.3, 0.8], ones(2, 3), ones(2, 3))
    table = GainTable((g,))
    dx = np.array([0.001, 0.002, 0.003])
    b = lemma2_bounds(table, [dx])
    for _ in range(10_000):
        x = rng.normal(size=3)
        xb = x + rng.uniform(-1, 1, size=3) * dx
        z, a = backstep(g, x)
        zb, ab = backstep(g, xb)
        assert np.all(np.abs(z - zb) <= b.dz[0] * (1 + 1e-12))
        assert np.all(np.abs(a - ab) <= b.dalpha[0] * (1 + 1e-12))


def test_lemma2_zero_thresholds(sec5):
    _, cfg = sec5
    b = lemma2_bounds(gain_table_for(cfg), [[0.0, 0.0], [0.0, 0.0]])
    assert all(np.all(v == 0) for v in b.dz + b.dalpha)


@settings(max_examples=50, deadline=None)
@given(lam=st.floats(min_value=1e-3, max_value=1e3))
def test_lemma2_homogeneous(sec5, lam):
    _, cfg = sec5
    table = gain_table_for(cfg)
    b1 = lemma2_bounds(table, cfg.dx)
    b2 = lemma2_bounds(table, [[lam * v for v in row] for row in cfg.dx])
    for i in range(2):
        np.testing.assert_allclose(b2.dz[i], lam * b1.dz[i], rtol=1e-12)
        np.testing.assert_allclose(b2.dalpha[i], lam * b1.dalpha[i], rtol=1e-12)


@settings(max_examples=50, deadline=None)
@given(factor=st.floats(min_value=1.0, max_value=10.0), which=st.integers(0, 3))
def test_lemma2_monotone(sec5, factor, which):
    _, cfg = sec5
    table = gain_table_for(cfg)
    flat = [v for row in cfg.dx for v in row]
    bumped = list(flat)
    bumped[which] *= factor
    b1 = lemma2_bounds(table, [flat[:2], flat[2:]])
    b2 = lemma2_bounds(table, [bumped[:2], bumped[2:]])
    for i in range(2):
        assert np.all(b2.dz[i] >= b1.dz[i]) and np.all(b2.dalpha[i] >= b1.dalpha[i])


def test_rejects_nonpositive_parameters():
    with pytest.raises(SpecificationError):
        subsystem_gains([0.5, 0.0], ones(2, 2), ones(2, 2))
    with pytest.raises(SpecificationError):
        subsystem_gains([0.5, 0.3], [[1.0, -1.0], [1.0, 1.0]], ones(2, 2))
    with pytest.raises(SpecificationError):
        compute_gain_table([[0.5]], [[[1.0]], [[1.0]]], [[[1.0]]])


def test_virtual_alpha_index_range(sec5):
    _, cfg = sec5
    with pytest.raises(ContractError):
        virtual_alpha(gain_table_for(cfg), 0, 2, [0.1, 0.1])
