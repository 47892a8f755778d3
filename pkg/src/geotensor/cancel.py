"""Cancellation of singularities across a conjugate pair.

A field f2 oscillating at (y0, eta) produces, through the conjugate-pair
part A of the normal operator, a singularity at (x0, xi).  Solving
C f = A f2 on a cone V1 around (x0, xi), with C = N + d Lambda delta, gives
f1 = -pi_S(f) whose transform cancels that of f2 near the common ray.
"""

import time
from dataclasses import dataclass, field, replace
from math import comb

import numpy as np

from . import _kernels as K
from .errors import ConeOverlapError, FrameAlignmentError, InvalidInputError
from .geometry import hodge_perp, shoot_geodesic
from .helmholtz import project_solenoidal
from .microlocal import (ConeSpec, NormalChart, OscillatoryProbe, band_energy, cone_filter,
                         energy, hf_energy, make_probe, probe_support, _spatial_window)
from .xray import FanSpec, RaySettings, XRay
from .tensorfield import Grid, SymTensorField, contraction_weights, divergence, l2_norm, sym_derivative


@dataclass
class PairGeometry:
    """Two points on one geodesic with conormal covectors, and the common ray.

    The ray starts at boundary data (z, w) and reaches x0 at time t, y0 at s.
    stretch is |f(t, s)| (transverse magnification from x0 to y0).
    """

    metric: object
    x0: np.ndarray
    xi: np.ndarray
    y0: np.ndarray
    eta: np.ndarray
    z: float
    w: float
    t: float
    s: float
    stretch: float = 1.0
    conjugate: bool = True

    @classmethod
    def from_datum(cls, datum):
        return cls(datum.metric, np.asarray(datum.x0), np.asarray(datum.xi), np.asarray(datum.y0),
                   np.asarray(datum.eta), datum.z0, datum.w0, datum.t0_from_z0,
                   datum.s0_from_z0, abs(datum.f0), True)


def straight_pair(metric, x0, direction, distance):
    """Pair along the geodesic from x0 with the normal frame covector at both ends."""
    v = metric.unit(x0, direction)
    path = shoot_geodesic(metric, (tuple(map(float, x0)), tuple(v)))
    y0, v1 = path.state_at(distance)
    if not metric.contains(y0, closed=False):
        raise InvalidInputError("the partner point lies outside the disc")
    e = lambda p, u: metric.flat(p, np.array([-u[1], u[0]]))
    t = -path.tau_minus
    return PairGeometry(metric, np.asarray(x0, float), e(x0, v), np.asarray(y0), e(y0, v1),
                        path.z_in, path.w_in, t, t + distance, 1.0, False)


def demo_xray(metric, n=257, n_z=256, n_w=255, cap=6.0):
    """XRay for the demo.  The short tracing cap (in disc radii) keeps trapped
    backprojection directions cheap; geodesics that exit are far shorter."""
    return XRay(metric, Grid(n, metric.radius), FanSpec(n_z, n_w), RaySettings(cap=cap))


def _as_pair(pair):
    return pair if isinstance(pair, PairGeometry) else PairGeometry.from_datum(pair)


@dataclass(frozen=True)
class CancelConfig:
    half_angle: float = 0.2
    band_factors: tuple = (0.6, 1.4)
    probe_width: float = 0.3
    window_factor: float = 1.5
    sinogram_width: tuple = (0.25, 0.25)
    regularization: float = 0.0
    cg_tol: float = 1e-4
    cg_maxiter: int = 15
    retention: float = 0.5


@dataclass
class Cones:
    V1: ConeSpec
    V2: ConeSpec
    sinogram: ConeSpec


def _scale(metric, p):
    return float(np.exp(metric.exponent(*p)))


def _unit_covector(metric, p, cov):
    cov = np.asarray(cov, dtype=float)
    return cov / metric.conorm(p, cov)


def sinogram_covector(pair, lam, delta=1e-4):
    """lam * d/d(z, w) of <u_y(gamma_{z,w}(s)), eta_unit> at the common ray."""
    m = pair.metric
    chart = NormalChart.at(m, pair.y0)
    eta = chart.frame_covector(_unit_covector(m, pair.y0, pair.eta))
    n = max(int(np.ceil(pair.s / (1e-3 * m.radius))), 4)

    def phase(z, w):
        p, v = m.boundary.inward_direction(z, w)
        y = K.flow_fixed(m.code, m.kernel_params, p[0], p[1], v[0], v[1], pair.s, n)
        u = chart.to_normal(y[0], y[1])
        return eta[0] * u[0] + eta[1] * u[1]

    gz = (phase(pair.z + delta, pair.w) - phase(pair.z - delta, pair.w)) / (2 * delta)
    gw = (phase(pair.z, pair.w + delta) - phase(pair.z, pair.w - delta)) / (2 * delta)
    return lam * np.array([gz, gw])


def configure_cones(pair, lam, config=None):
    """V2 at (y0, eta), V1 at (x0, xi) and the sinogram cone at the common ray."""
    config = config or CancelConfig()
    pair = _as_pair(pair)
    m = pair.metric
    lo, hi = config.band_factors
    sy, sx = _scale(m, pair.y0), _scale(m, pair.x0)
    k2 = lam * sy
    k1 = lam * pair.stretch * sx
    r2 = config.window_factor * config.probe_width / sy
    r1 = config.window_factor * config.probe_width / (sx * min(pair.stretch, 1.0))
    V2 = ConeSpec(tuple(pair.y0), r2, tuple(pair.eta), config.half_angle, (lo * k2, hi * k2))
    V1 = ConeSpec(tuple(pair.x0), r1, tuple(pair.xi), config.half_angle, (lo * k1, hi * k1))
    cov = sinogram_covector(pair, lam)
    ks = float(np.hypot(*cov))
    S = ConeSpec((pair.z, pair.w), config.sinogram_width, tuple(cov), config.half_angle,
                 (lo * ks, hi * ks))
    return Cones(V1, V2, S)


def _scalar_probe(grid, pair, lam, width):
    m = pair.metric
    eta = _unit_covector(m, pair.y0, pair.eta)
    p = OscillatoryProbe(tuple(pair.y0), tuple(eta), lam, 0, 0, width)
    return make_probe(p, grid, m).comps[0], p


def build_f2(xray, pair, lam, m, config=None, cones=None):
    """Solenoidal field whose wavefront sits at (y0, eta).

    The scalar probe h is placed along (eta_perp)^{(x) m}, the all-2
    component in a frame whose first axis is eta, then projected.
    """
    config = config or CancelConfig()
    pair = _as_pair(pair)
    cones = cones or configure_cones(pair, lam, config)
    grid, metric = xray.grid, xray.metric
    h, _ = _scalar_probe(grid, pair, lam, config.probe_width)
    perp = np.array([-pair.eta[1], pair.eta[0]], dtype=float)
    perp /= np.hypot(*perp)
    comps = np.stack([perp[0] ** k * perp[1] ** (m - k) * h for k in range(m + 1)])
    raw = SymTensorField(m, grid, comps)
    f2 = project_solenoidal(raw, metric)[0] if m > 0 else raw
    e_raw = hf_energy(raw, cones.V2)
    e_f2 = hf_energy(f2, cones.V2)
    if e_raw <= 0 or e_f2 < config.retention * e_raw:
        raise FrameAlignmentError("solenoidal projection removed the probe's cone energy",
                                  retained=e_f2 / e_raw if e_raw > 0 else 0.0)
    return f2


def _check_disjoint(V1, V2):
    if V1.overlaps(V2):
        raise ConeOverlapError("V1 and V2 overlap; the conjugate part cannot be isolated")


class _Localizer:
    """Self-adjoint cone localizer P = W F^-1 chi F W (chi real, W the window)."""

    def __init__(self, cone, grid):
        from .microlocal import cone_multiplier
        self.cone = cone
        self.grid = grid
        self.window = _spatial_window(cone, (grid.axis, grid.axis), None) * grid.mask
        self.mult = cone_multiplier(cone, (grid.n, grid.n), (grid.spacing, grid.spacing))
        self.nodes = self.window > 0
        x, y = grid.coords
        d = np.hypot(x[self.nodes] - cone.center[0], y[self.nodes] - cone.center[1])
        self.radius = float(d.max() + 2 * grid.spacing)

    def __call__(self, comps):
        out = np.fft.fft2(self.window * comps, axes=(1, 2)) * self.mult
        return self.window * np.fft.ifft2(out, axes=(1, 2))


def _lambda_multiplier(grid):
    k = 2 * np.pi * np.fft.fftfreq(grid.n, grid.spacing)
    kx, ky = np.meshgrid(k, k, indexing="ij")
    return (1 + kx * kx + ky * ky) ** -1.5


def apply_C(xray, f, nodes=None, region=None):
    """N f + d Lambda delta f (the second term only for rank >= 1)."""
    metric = xray.metric
    out = xray.normal(f, nodes, region)
    if f.rank >= 1:
        d = divergence(f, metric)
        lam = _lambda_multiplier(f.grid)
        smoothed = np.fft.ifft2(np.fft.fft2(d.comps, axes=(1, 2)) * lam, axes=(1, 2))
        if not f.is_complex:
            smoothed = smoothed.real
        corr = sym_derivative(SymTensorField(f.rank - 1, f.grid, smoothed), metric)
        if nodes is not None:
            corr = SymTensorField(f.rank, f.grid, corr.comps * nodes)
        out = out + corr
    return out


def extract_fio_part(xray, f2, V1, V2=None, region=None):
    """cone_filter(N f2, V1), with N f2 evaluated only where the V1 window lives."""
    if V2 is not None:
        _check_disjoint(V1, V2)
    grid = xray.grid
    axes = (grid.axis, grid.axis)
    nodes = (_spatial_window(V1, axes, None) > 0) & grid.mask
    return cone_filter(xray.normal(f2, nodes, region), V1)


@dataclass
class ParametrixReport:
    residual: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def apply_parametrix(xray, rhs, V1, regularization=0.0, tol=1e-4, maxiter=15):
    """Solve P W C P y = P W rhs on the V1 cone by conjugate gradients.

    W are the g-weights, so the operator is Hermitian positive semidefinite
    in the plain l2 product.  regularization adds eps * scale * I.
    Returns (P y, report); stagnation is reported, not raised.
    """
    grid = xray.grid
    loc = _Localizer(V1, grid)
    W = contraction_weights(grid, xray.metric, rhs.rank)
    region = (V1.center, loc.radius)
    m = rhs.rank

    def A(y):
        cy = apply_C(xray, SymTensorField(m, grid, loc(y)), loc.nodes, region)
        return loc(W * cy.comps)

    b = loc(W * rhs.comps.astype(complex))
    nb = np.linalg.norm(b)
    y = np.zeros_like(b)
    if nb == 0:
        return SymTensorField(m, grid, y), ParametrixReport(0.0, 0, True)
    shift = 0.0
    r = b.copy()
    p = r.copy()
    rr = np.vdot(r, r).real
    hist = []
    it = 0
    res = 1.0
    for it in range(1, maxiter + 1):
        q = A(p)
        if it == 1 and regularization > 0:
            shift = regularization * abs(np.vdot(p, q)) / rr
        q = q + shift * p
        alpha = rr / np.vdot(p, q).real
        y = y + alpha * p
        r = r - alpha * q
        rnew = np.vdot(r, r).real
        res = float(np.sqrt(rnew) / nb)
        hist.append(res)
        if res <= tol:
            break
        p = r + (rnew / rr) * p
        rr = rnew
    sol = SymTensorField(m, grid, loc(y))
    return sol, ParametrixReport(res, it, res <= tol, hist)


@dataclass
class CancellationReport:
    rank: int
    frequency: float
    ratio: float
    energy_S2: float
    energy_S12: float
    converse: float
    f1_norm: float
    f2_norm: float
    f1_divergence: float
    f2_divergence: float
    f1_localization: float
    fio_energy: float
    normal_band_energy: float
    parametrix: ParametrixReport
    cones: Cones
    timings: dict
    fields: dict = field(default_factory=dict, repr=False)

    def summary(self):
        return {
            "rank": self.rank, "lambda": self.frequency, "ratio": self.ratio,
            "energy_S2": self.energy_S2, "energy_S12": self.energy_S12,
            "converse": self.converse, "f1_norm": self.f1_norm, "f2_norm": self.f2_norm,
            "f1_divergence": self.f1_divergence, "f2_divergence": self.f2_divergence,
            "f1_localization": self.f1_localization, "fio_energy": self.fio_energy,
            "normal_band_energy": self.normal_band_energy,
            "cg_residual": self.parametrix.residual, "cg_iterations": self.parametrix.iterations,
            "cg_converged": self.parametrix.converged, "timings": self.timings,
        }


def _div_ratio(f, metric):
    if f.rank == 0:
        return 0.0
    from .helmholtz import interior_divergence_norm
    n = l2_norm(f, metric)
    return interior_divergence_norm(f, metric) / n if n > 0 else 0.0


def _forward(xray, f, compact, region):
    return xray.forward(f, region if compact else None)


def cancellation_demo(xray, pair, lam, m, config=None):
    config = config or CancelConfig()
    pair = _as_pair(pair)
    metric = xray.metric
    times = {}
    tic = time.perf_counter()
    cones = configure_cones(pair, lam, config)
    _check_disjoint(cones.V1, cones.V2)
    f2 = build_f2(xray, pair, lam, m, config, cones)
    times["build_f2"] = time.perf_counter() - tic

    compact = m == 0
    probe = OscillatoryProbe(tuple(pair.y0), (1.0, 0.0), lam, 0, 0, config.probe_width)
    supp = probe_support(probe, xray.grid, metric)[0]
    x, y = xray.grid.coords
    r2 = float(np.hypot(x[supp] - pair.y0[0], y[supp] - pair.y0[1]).max() + 2 * xray.grid.spacing)
    region2 = (tuple(pair.y0), r2)

    tic = time.perf_counter()
    S2 = _forward(xray, f2, compact, region2)
    nf2 = xray.backproject(S2, _Localizer(cones.V1, xray.grid).nodes)
    afio = cone_filter(nf2, cones.V1)
    times["extract"] = time.perf_counter() - tic

    tic = time.perf_counter()
    sol, rep = apply_parametrix(xray, afio, cones.V1, config.regularization, config.cg_tol,
                                config.cg_maxiter)
    f1 = project_solenoidal(sol, metric)[0] * -1.0 if m > 0 else sol * -1.0
    times["parametrix"] = time.perf_counter() - tic

    tic = time.perf_counter()
    loc = _Localizer(cones.V1, xray.grid)
    S1 = _forward(xray, f1, compact, (cones.V1.center, loc.radius))
    S12 = S1 + S2
    e2 = hf_energy(S2, cones.sinogram)
    e12 = hf_energy(S12, cones.sinogram)
    times["sinograms"] = time.perf_counter() - tic

    converse = hf_energy(f1 + sol, cones.V1)
    band1 = cones.V1.band
    f1_band = band_energy(f1, band1)
    rho = e12 / e2 if e2 > 0 else float("nan")
    return CancellationReport(
        m, float(lam), rho, e2, e12, converse, l2_norm(f1, metric), l2_norm(f2, metric),
        _div_ratio(f1, metric), _div_ratio(f2, metric),
        hf_energy(f1, cones.V1) / f1_band if f1_band > 0 else 0.0,
        energy(afio), band_energy(nf2, band1), rep, cones, times,
        {"f1": f1, "f2": f2, "S2": S2, "S12": S12, "fio": afio})


def ratio_sweep(xray, pair, lambdas, m, config=None):
    """Rows (lambda, rho, seconds) and the reports, one demo per frequency."""
    rows, reports = [], []
    for lam in lambdas:
        tic = time.perf_counter()
        rep = cancellation_demo(xray, pair, lam, m, config)
        rows.append((float(lam), rep.ratio, time.perf_counter() - tic))
        reports.append(rep)
    return rows, reports


def is_monotone_decreasing(values):
    return all(b < a for a, b in zip(values, values[1:]))


def calibration_sweep(xray, pair, lam, m, regularizations=(0.0, 1e-3, 1e-2, 1e-1),
                      half_angles=(0.2,), config=None):
    """rho over parametrix regularization and cone half-angle."""
    base = config or CancelConfig()
    rows = []
    for ha in half_angles:
        for eps in regularizations:
            cfg = replace(base, regularization=eps, half_angle=ha)
            rep = cancellation_demo(xray, pair, lam, m, cfg)
            rows.append({"half_angle": ha, "regularization": eps, "ratio": rep.ratio,
                         "cg_residual": rep.parametrix.residual,
                         "f1_localization": rep.f1_localization})
    return rows
