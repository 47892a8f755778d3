import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geotensor.errors import DegeneratePairError, InvalidInputError, NearTangencyWarning
from geotensor.geometry import MetricField
from geotensor.symbols import (ellipticity_certificate, fio_symbol, psido_symbol,
                               symbol_sweep)


def test_euclidean_center_value(euclid):
    s = psido_symbol(euclid, (0, 0), (0, 1), 0)
    assert s.coefficient == pytest.approx(4 * np.pi, rel=1e-12)
    assert s.angle_terms == pytest.approx((1.0, 1.0))


def test_half_density_convention(euclid):
    s = psido_symbol(euclid, (0, 0), (2, 0), 0, convention="half_density")
    assert s.coefficient == pytest.approx(2j * np.pi * 2 * np.pi, rel=1e-12)
    with pytest.raises(InvalidInputError):
        psido_symbol(euclid, (0, 0), (1, 0), 0, convention="other")


def test_homogeneity_minus_one(bump):
    a = psido_symbol(bump, (0.2, 0.1), (0.3, 0.4), 1)
    b = psido_symbol(bump, (0.2, 0.1), (0.6, 0.8), 1)
    assert np.allclose(b.entries, a.entries / 2)


def test_rank_one_structure(bump):
    s = psido_symbol(bump, (0.2, -0.1), (0.3, 0.8), 3)
    assert s.factor_residual() < 1e-12
    # entries vanish when either index tuple is contracted with the covector's dual
    full = s.full()
    xi = np.array([0.3, 0.8])
    up = bump.sharp((0.2, -0.1), xi)
    assert np.allclose(np.tensordot(up, full, axes=(0, 0)), 0, atol=1e-12)


def test_pure_entry_along_perp(euclid):
    s = psido_symbol(euclid, (0, 0), (0, 1), 2)
    k, v = s.pure_entry()
    assert k == (2, 2)  # the perp of dx2 points along x1
    assert abs(v) == pytest.approx(4 * np.pi)


def test_transpose_swaps_points(diameter_pair):
    s = fio_symbol(diameter_pair, 1)
    t = s.transpose()
    assert np.allclose(t.entries, s.entries.T)
    assert np.allclose(t.x0, s.y0)


def test_sphere_cap_center(sphere_cap):
    s = psido_symbol(sphere_cap, (0, 0), (0, 1), 0)
    # |xi|_g = 1/2 at the center
    assert s.coefficient == pytest.approx(8 * np.pi, rel=1e-10)


def test_fio_on_sphere_cap(diameter_pair):
    s = fio_symbol(diameter_pair, 0)
    assert s.coefficient.real == pytest.approx(-4 * np.pi, rel=1e-5)


def test_fio_degenerate(diameter_pair):
    from dataclasses import replace
    with pytest.raises(DegeneratePairError):
        fio_symbol(replace(diameter_pair, f0=0.0), 0)


def test_near_tangency_warning(euclid):
    with pytest.warns(NearTangencyWarning):
        psido_symbol(euclid, (0.995, 0.0), (1.0, 0.0), 0)


def test_interior_point_required(euclid):
    with pytest.raises(InvalidInputError):
        psido_symbol(euclid, (1.0, 0.0), (0, 1), 0)


def test_sweep_rows(euclid):
    rows = symbol_sweep(euclid, 0, [np.zeros(2)], np.linspace(0, np.pi, 4, endpoint=False))
    assert len(rows) == 4
    assert all(r[3] == pytest.approx(4 * np.pi) for r in rows)


@settings(deadline=None, max_examples=25)
@given(x=st.floats(-0.6, 0.6), y=st.floats(-0.6, 0.6), th=st.floats(0, np.pi),
       m=st.integers(0, 3), fam=st.sampled_from(["euclidean", "constant_curvature", "gaussian_bump"]))
def test_ellipticity_on_solenoidal_tensors(x, y, th, m, fam):
    metric = {"euclidean": MetricField.euclidean(1.0),
              "constant_curvature": MetricField.constant_curvature(-0.5, 1.0),
              "gaussian_bump": MetricField.gaussian_bump(0.4, (0.1, -0.05), 0.4, 1.0)}[fam]
    xi = np.array([np.cos(th), np.sin(th)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NearTangencyWarning)
        s = psido_symbol(metric, (x, y), xi, m)
    rep = ellipticity_certificate(s, xi, metric)
    assert rep.elliptic and rep.matrix_rank == m + 1


def test_certificate_detects_missing_constraint(euclid):
    s = psido_symbol(euclid, (0, 0), (0, 1), 2)
    s.entries[:] = 0.0
    rep = ellipticity_certificate(s, (0, 1), euclid)
    assert not rep.elliptic and rep.matrix_rank == 2
