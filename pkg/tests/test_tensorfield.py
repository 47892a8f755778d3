import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geotensor.errors import DomainError, InvalidInputError
from geotensor.tensorfield import (Grid, SymTensorField, contraction_weights, divergence,
                                   l2_inner, l2_norm, load_field, pair, pair_nodes,
                                   quadrature_weights, random_field, rotate90, save_field,
                                   slice_rows, sym_derivative)

GRID = Grid(97, 1.0)


def test_grid_rejects_tiny():
    with pytest.raises(InvalidInputError):
        Grid(5, 1.0)


def test_cell_areas_sum_to_disc_area():
    assert np.sum(GRID.cell_area) == pytest.approx(np.pi, rel=1e-6)


def test_volume_on_sphere_cap(sphere_cap):
    # area of the geodesic disc of radius rho on the unit sphere: 2 pi (1 - cos rho)
    rho = 2 * np.arctan(1.5)
    g = Grid(257, 1.5)
    area = np.sum(quadrature_weights(g, sphere_cap))
    assert area == pytest.approx(2 * np.pi * (1 - np.cos(rho)), rel=2e-3)


def test_pairing_with_vector(euclid):
    f = SymTensorField.from_function(GRID, 2, lambda x, y: [x + 0 * y, 0 * x + 2.0, y + 0 * x])
    # f(v, v) = f11 v1^2 + 2 f12 v1 v2 + f22 v2^2 with f11 = x (k=2), f12 = 2, f22 = y (k=0)
    v = np.array([0.6, 0.8])
    val = pair(f, (0.3, -0.2), v)
    assert val == pytest.approx(-0.2 * 0.36 + 2 * 2 * 0.48 + 0.3 * 0.64, abs=1e-10)


def test_pair_outside_disc_raises():
    f = SymTensorField.zeros(GRID, 1)
    with pytest.raises(DomainError):
        pair(f, (0.9, 0.9), (1.0, 0.0))


def test_pair_nodes_matches_contraction():
    rng = np.random.default_rng(1)
    f = random_field(GRID, 3, rng)
    th = 0.7
    v = pair_nodes(f, np.cos(th), np.sin(th))
    full = f.full_component
    ref = sum(np.prod([np.cos(th) if i == 1 else np.sin(th) for i in idx]) * full(idx)
              for idx in np.ndindex(2, 2, 2) for idx in [tuple(i + 1 for i in idx)])
    assert np.allclose(v, ref)


def test_field_arithmetic():
    rng = np.random.default_rng(0)
    a, b = random_field(GRID, 1, rng), random_field(GRID, 1, rng)
    assert np.allclose((a + b - b).comps, a.comps)
    assert np.allclose((2.0 * a).comps, 2 * a.comps) if hasattr(a, "__rmul__") else True
    assert np.allclose((-a).comps, -a.comps)
    with pytest.raises(InvalidInputError):
        a + random_field(GRID, 2, rng)


def test_symmetric_derivative_of_linear_potential(euclid):
    u = SymTensorField.from_function(GRID, 0, lambda x, y: [3 * x - 2 * y])
    du = sym_derivative(u, euclid)
    inner = GRID.interior(4)
    assert np.allclose(du.comps[1][inner], 3.0, atol=1e-10)
    assert np.allclose(du.comps[0][inner], -2.0, atol=1e-10)


def test_symmetric_derivative_on_curved_metric(hyperbolic):
    """(du)_{ij} = (partial_i u_j + partial_j u_i)/2 - Gamma^k_ij u_k."""
    g = Grid(129, 1.0)
    u = SymTensorField.from_function(g, 1, lambda x, y: [np.sin(x) * y, x * x])
    du = sym_derivative(u, hyperbolic)
    p = (0.25, -0.3)
    i = np.argmin(np.abs(g.axis - p[0]))
    j = np.argmin(np.abs(g.axis - p[1]))
    x, y = g.axis[i], g.axis[j]
    G = hyperbolic.christoffel((x, y))
    u1, u2 = x * x, np.sin(x) * y      # k=1 is u_1, k=0 is u_2
    d = {(1, 1): 2 * x, (1, 2): 0.0, (2, 1): np.cos(x) * y, (2, 2): np.sin(x)}  # d_i u_j
    uu = {1: u1, 2: u2}
    ref = {}
    for a in (1, 2):
        for b in (1, 2):
            ref[a, b] = 0.5 * (d[a, b] + d[b, a]) - sum(G[k - 1, a - 1, b - 1] * uu[k] for k in (1, 2))
    assert du.comps[2][i, j] == pytest.approx(ref[1, 1], abs=1e-6)
    assert du.comps[1][i, j] == pytest.approx(ref[1, 2], abs=1e-6)
    assert du.comps[0][i, j] == pytest.approx(ref[2, 2], abs=1e-6)


@settings(deadline=None, max_examples=12)
@given(seed=st.integers(0, 10_000), rank=st.integers(1, 3))
def test_divergence_is_adjoint_of_derivative(seed, rank):
    from geotensor.geometry import MetricField
    m = MetricField.gaussian_bump(0.4, (0.1, -0.05), 0.4, 1.0)
    g = Grid(49, 1.0)
    rng = np.random.default_rng(seed)
    u = random_field(g, rank - 1, rng)
    f = random_field(g, rank, rng)
    lhs = l2_inner(sym_derivative(u, m), f, m)
    rhs = -l2_inner(u, divergence(f, m), m)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


def test_contraction_weights_scale_with_rank(sphere_cap):
    g = Grid(33, 1.5)
    w0 = contraction_weights(g, sphere_cap, 0)[0]
    w2 = contraction_weights(g, sphere_cap, 2)
    x, y = g.coords
    e = np.exp(-4 * sphere_cap.exponent(x, y))
    assert np.allclose(w2[1], 2 * w0 * e)


def test_l2_norm_of_constant(euclid):
    f = SymTensorField.from_function(GRID, 1, lambda x, y: [np.ones_like(x), np.zeros_like(x)])
    assert l2_norm(f, euclid) == pytest.approx(np.sqrt(np.pi), rel=1e-6)


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    for cplx in (False, True):
        f = random_field(GRID, 2, rng, complex_=cplx)
        save_field(f, tmp_path / "f")
        g = load_field(tmp_path / "f")
        assert g.rank == 2 and g.grid == f.grid
        assert np.array_equal(g.comps, f.comps)


def test_rotate90_commutes_with_pairing(euclid):
    rng = np.random.default_rng(4)
    f = random_field(GRID, 2, rng)
    r = rotate90(f)
    v = np.array([0.6, 0.8])
    rv = np.array([-0.8, 0.6])
    i, j = 60, 40
    p = np.array([GRID.axis[i], GRID.axis[j]])
    q = np.array([-p[1], p[0]])  # rotated point lands on node (n-1-j, i)
    val_r = pair_nodes(r, rv[0], rv[1])[GRID.n - 1 - j, i]
    val_f = pair_nodes(f, v[0], v[1])[i, j]
    assert q[0] == pytest.approx(GRID.axis[GRID.n - 1 - j])
    assert val_r == pytest.approx(val_f, rel=1e-12)


def test_slice_rows_shape():
    f = SymTensorField.zeros(GRID, 2)
    assert slice_rows(f).shape == (GRID.n, 4)


def test_random_field_is_grid_independent():
    a = random_field(Grid(65, 1.0), 1, np.random.default_rng(9))
    b = random_field(Grid(129, 1.0), 1, np.random.default_rng(9))
    assert np.allclose(a.comps, b.comps[:, ::2, ::2])
