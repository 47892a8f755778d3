from dataclasses import replace

import numpy as np
import pytest

from geotensor.cancel import (CancelConfig, apply_C, apply_parametrix, build_f2,
                              configure_cones, demo_xray, extract_fio_part,
                              is_monotone_decreasing, sinogram_covector, straight_pair)
from geotensor.errors import ConeOverlapError, FrameAlignmentError
from geotensor.helmholtz import interior_divergence_norm
from geotensor.microlocal import (OscillatoryProbe, band_energy, cone_filter, energy,
                                  hf_energy, make_probe)
from geotensor.tensorfield import l2_norm

LAM = 30.0


@pytest.fixture(scope="module")
def control(euclid):
    xr = demo_xray(euclid, n=129, n_z=128, n_w=127)
    pair = straight_pair(euclid, (-0.5, 0.0), (1.0, 0.0), 1.0)
    return xr, pair


def test_straight_pair_geometry(control):
    _, pair = control
    assert np.allclose(pair.y0, (0.5, 0.0), atol=1e-9)
    assert np.allclose(pair.xi, (0.0, 1.0)) and np.allclose(pair.eta, (0.0, 1.0))
    assert pair.z == pytest.approx(np.pi) and abs(pair.w) < 1e-9
    assert pair.t == pytest.approx(0.5) and pair.s == pytest.approx(1.5)


def test_cones_of_diameter_pair(diameter_pair):
    c = configure_cones(diameter_pair, 60.0)
    assert not c.V1.overlaps(c.V2)
    assert c.V1.band == pytest.approx((36.0, 84.0))
    assert c.V1.half_angle == 0.2


def test_sinogram_covector_on_euclid(control):
    # along the x-axis ray, <u_y(gamma(s)), eta> = y-coordinate; d/dw at the center is -s_from_entry
    _, pair = control
    cov = sinogram_covector(pair, LAM)
    # entry (cos z, sin z): moving z moves the ray's y-intercept, moving w rotates it about the entry
    assert abs(cov[1]) == pytest.approx(LAM * (pair.s - 0.0), rel=1e-4)
    assert abs(cov[0]) > 0


def test_m0_f2_is_the_probe(control):
    xr, pair = control
    f2 = build_f2(xr, pair, LAM, 0)
    h = make_probe(OscillatoryProbe(tuple(pair.y0), tuple(pair.eta), LAM, 0, 0, 0.3), xr.grid, xr.metric)
    assert np.array_equal(f2.comps, h.comps)


@pytest.fixture(scope="module")
def f2_rank2(control):
    xr, pair = control
    return build_f2(xr, pair, LAM, 2)


def test_f2_is_solenoidal(control, f2_rank2):
    xr, _ = control
    assert interior_divergence_norm(f2_rank2, xr.metric) <= 1e-3 * l2_norm(f2_rank2, xr.metric)


def test_f2_keeps_the_probe_cone_energy(control, f2_rank2):
    xr, pair = control
    V2 = configure_cones(pair, LAM).V2
    h = make_probe(OscillatoryProbe(tuple(pair.y0), tuple(pair.eta), LAM, 0, 0, 0.3), xr.grid, xr.metric)
    assert hf_energy(f2_rank2, V2) >= 0.5 * hf_energy(h, V2)


def test_frame_alignment_error(control):
    xr, pair = control
    with pytest.raises(FrameAlignmentError):
        build_f2(xr, pair, LAM, 2, CancelConfig(retention=1.01))


def test_overlapping_cones_rejected(control):
    xr, pair = control
    c = configure_cones(pair, LAM)
    f2 = build_f2(xr, pair, LAM, 0)
    with pytest.raises(ConeOverlapError):
        extract_fio_part(xr, f2, c.V2, c.V2)


@pytest.fixture(scope="module")
def extracted(control):
    xr, pair = control
    c = configure_cones(pair, LAM)
    f2 = build_f2(xr, pair, LAM, 0)
    return f2, extract_fio_part(xr, f2, c.V1, c.V2), c


def test_no_fio_part_without_conjugate_points(control, extracted):
    xr, _ = control
    f2, a, c = extracted
    nf2 = xr.normal(f2)
    assert energy(a) <= 1e-3 * band_energy(nf2, c.V2.band)


def test_extract_is_linear(control, extracted):
    xr, _ = control
    f2, a, c = extracted
    b = extract_fio_part(xr, f2 * (2.0 - 1.5j), c.V1)
    assert np.allclose(b.comps, (2.0 - 1.5j) * a.comps, atol=1e-10 * np.abs(a.comps).max() + 1e-16)


def test_parametrix_of_zero(control):
    xr, pair = control
    V1 = configure_cones(pair, LAM).V1
    from geotensor.tensorfield import SymTensorField
    y, rep = apply_parametrix(xr, SymTensorField.zeros(xr.grid, 0, complex), V1)
    assert not np.any(y.comps) and rep.converged


@pytest.fixture(scope="module")
def consistency(control):
    xr, pair = control
    V1 = configure_cones(pair, LAM).V1
    probe = OscillatoryProbe(tuple(pair.x0), tuple(pair.xi), LAM, 0, 0, 0.3)
    y0 = cone_filter(make_probe(probe, xr.grid, xr.metric), V1)
    rhs = apply_C(xr, y0)
    y, rep = apply_parametrix(xr, rhs, V1)
    return xr, V1, y0, rhs, y, rep


def test_parametrix_recovers_band_limited_input(consistency):
    xr, V1, y0, rhs, y, rep = consistency
    assert hf_energy(y - y0, V1) <= 0.05 * hf_energy(y0, V1)


def test_parametrix_defining_residual(consistency):
    xr, V1, y0, rhs, y, rep = consistency
    res = apply_C(xr, y) - rhs
    assert energy(cone_filter(res, V1)) <= 0.05 * energy(cone_filter(rhs, V1))
    assert rep.iterations <= 15 and rep.history[-1] == rep.residual


def test_rank_one_parametrix_has_gauge_term(control):
    xr, pair = control
    V1 = configure_cones(pair, LAM).V1
    probe = OscillatoryProbe(tuple(pair.x0), tuple(pair.xi), LAM, 1, 0, 0.3)
    y0 = make_probe(probe, xr.grid, xr.metric)
    a = apply_C(xr, y0)
    b = xr.normal(y0)
    assert l2_norm(a - b, xr.metric) > 0


def test_monotone_helper():
    assert is_monotone_decreasing([0.3, 0.2, 0.1])
    assert not is_monotone_decreasing([0.3, 0.3, 0.1])
