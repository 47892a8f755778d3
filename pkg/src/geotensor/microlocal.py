"""Oscillatory probes, the stationary phase harness, phase Hessians and cone filters.

Probes live in second-order normal coordinates u around their center, so
that geodesics through the center are straight to second order and the
probe phase is linear along them.  The f-side probe carries the phase
-lambda <u, xi> and the g-side probe lambda (<u, eta> - c |u|^2 / 2).  The
bilinear pairing <N f, g> then behaves like

    P(lambda) ~ (2 pi / lambda^2) (-i) K / N_c

where K is the scalar-normalized symbol coefficient and N_c is fixed by the
Hessian of the total phase: N_c = sqrt(|det H(c)| / |X|), X the c^2
coefficient of det H as a function of the chirp c.
"""

import time
from dataclasses import dataclass, field, replace
from math import comb

import numpy as np

from . import _kernels as K
from .errors import (ConvergenceDiagnostic, InvalidInputError, PreconditionError,
                     UnresolvableFrequencyError)
from .geometry import MetricField
from .symbols import fio_symbol, psido_symbol, transverse_geodesic
from .tensorfield import (SymTensorField, contraction_weights, quadrature_weights,
                          smooth_cutoff)
from .xray import Sinogram

RESOLUTION_LIMIT = np.pi / 2


# -- normal coordinates ------------------------------------------------------

@dataclass(frozen=True)
class NormalChart:
    """u(x) = e^{lam0} [(x - x0) + Gamma(x0)(x - x0, x - x0) / 2]."""

    center: tuple
    scale: float
    gamma: np.ndarray

    @classmethod
    def at(cls, metric, center):
        c = (float(center[0]), float(center[1]))
        return cls(c, float(np.exp(metric.exponent(*c))), metric.christoffel(c))

    def to_normal(self, x, y):
        dx = np.asarray(x) - self.center[0]
        dy = np.asarray(y) - self.center[1]
        G = self.gamma
        u1 = dx + 0.5 * (G[0, 0, 0] * dx * dx + 2 * G[0, 0, 1] * dx * dy + G[0, 1, 1] * dy * dy)
        u2 = dy + 0.5 * (G[1, 0, 0] * dx * dx + 2 * G[1, 0, 1] * dx * dy + G[1, 1, 1] * dy * dy)
        return self.scale * u1, self.scale * u2

    def jacobian(self, x, y):
        """J[r, k] = du^r / dx^k at the given points, shape (2, 2, ...)."""
        dx = np.asarray(x) - self.center[0]
        dy = np.asarray(y) - self.center[1]
        G = self.gamma
        J = np.empty((2, 2) + np.shape(dx))
        for r in range(2):
            J[r, 0] = self.scale * ((r == 0) + G[r, 0, 0] * dx + G[r, 0, 1] * dy)
            J[r, 1] = self.scale * ((r == 1) + G[r, 1, 0] * dx + G[r, 1, 1] * dy)
        return J

    def frame_covector(self, xi):
        """Components of a coordinate covector at the center in u-coordinates."""
        return np.asarray(xi, dtype=float) / self.scale


def window(r):
    """exp(1 - 1/(1 - r^2)) on r < 1, zero beyond; equal to 1 at r = 0."""
    r = np.asarray(r, dtype=float)
    inside = r < 1
    q = np.where(inside, 1 - r * r, 1.0)
    return np.where(inside, np.exp(1 - 1 / q), 0.0)


# -- probes --------------------------------------------------------------------

@dataclass(frozen=True)
class OscillatoryProbe:
    """Windowed plane wave times a constant symmetric basis tensor.

    covector is a coordinate covector at the center (its g-length sets the
    local wavenumber relative to frequency).  ones is the number of 1-indices
    in the basis tensor dx^{i1}...dx^{im}, or the index tuple itself.
    width is the window radius in normal coordinates.  chirp = c adds the
    quadratic phase -c |u|^2 / 2 (times frequency).
    """

    center: tuple
    covector: tuple
    frequency: float
    rank: int = 0
    ones: object = 0
    width: float = 0.25
    chirp: float = None

    @property
    def ones_count(self):
        if isinstance(self.ones, (tuple, list)):
            if len(self.ones) != self.rank or any(i not in (1, 2) for i in self.ones):
                raise InvalidInputError(f"index tuple {self.ones} does not match rank {self.rank}")
            return sum(1 for i in self.ones if i == 1)
        k = int(self.ones)
        if not 0 <= k <= self.rank:
            raise InvalidInputError(f"number of 1-indices {k} outside 0..{self.rank}")
        return k


def probe_support(probe, grid, metric):
    chart = NormalChart.at(metric, probe.center)
    x, y = grid.coords
    u1, u2 = chart.to_normal(x, y)
    ru = np.hypot(u1, u2) / probe.width
    near = np.hypot(x - probe.center[0], y - probe.center[1]) < 3 * probe.width / chart.scale
    return (ru < 1) & near, chart, u1, u2, ru


def make_probe(probe, grid, metric=None):
    """Sample the probe on the grid as a complex SymTensorField.

    The basis tensor is the symmetrization of dx^{i1}...dx^{im}, so the
    stored component with k ones equals the scalar profile divided by C(m, k).
    """
    metric = metric or MetricField.euclidean(grid.radius)
    k = probe.ones_count
    supp, chart, u1, u2, ru = probe_support(probe, grid, metric)
    if not supp.any():
        raise InvalidInputError("probe window contains no grid node")
    x, y = grid.coords
    if np.max(np.hypot(x[supp], y[supp])) > metric.radius - 2 * grid.spacing:
        raise InvalidInputError("probe support reaches the boundary")
    cov = chart.frame_covector(probe.covector)
    lam = float(probe.frequency)
    c = probe.chirp or 0.0
    phase = lam * (cov[0] * u1 + cov[1] * u2 - 0.5 * c * (u1 * u1 + u2 * u2))
    if lam > 0:
        J = chart.jacobian(x[supp], y[supp])
        g1 = cov[0] - c * u1[supp]
        g2 = cov[1] - c * u2[supp]
        kx = lam * np.abs(J[0, 0] * g1 + J[1, 0] * g2)
        ky = lam * np.abs(J[0, 1] * g1 + J[1, 1] * g2)
        worst = float(max(kx.max(), ky.max()) * grid.spacing)
        if worst > RESOLUTION_LIMIT:
            raise UnresolvableFrequencyError("probe oscillates faster than the grid resolves",
                                             wavenumber_times_spacing=worst,
                                             limit=RESOLUTION_LIMIT)
    prof = np.where(supp, window(ru) * np.exp(1j * phase), 0.0)
    f = SymTensorField.zeros(grid, probe.rank, dtype=complex)
    f.comps[k] = prof / comb(probe.rank, k)
    return f


# -- phase of the pairing and its Hessian ------------------------------------

@dataclass
class PhaseSpec:
    """psi(t, s, z, w) = <u_x(gamma(t)), xi> - <u_y(gamma(s)), eta> + chirp |u_y(gamma(s))|^2 / 2."""

    metric: MetricField
    x0: np.ndarray
    xi: np.ndarray
    y0: np.ndarray
    eta: np.ndarray
    chirp: float = 10.0
    kind: str = "diagonal"
    z_origin: float = 0.0

    @property
    def charts(self):
        return NormalChart.at(self.metric, self.x0), NormalChart.at(self.metric, self.y0)

    def with_chirp(self, c):
        return replace(self, chirp=float(c))


def diagonal_phase(metric, x0, xi, chirp=10.0):
    x0 = np.asarray(x0, dtype=float)
    xi = np.asarray(xi, dtype=float) / metric.conorm(x0, xi)
    return PhaseSpec(metric, x0, xi, x0, xi, chirp, "diagonal")


def conjugate_phase(datum, chirp=10.0):
    return PhaseSpec(datum.metric, datum.x0, datum.xi, datum.y0, datum.eta, chirp, "conjugate")


def _steps(metric, T):
    return max(int(np.ceil(abs(T) / (1e-3 * metric.radius))), 4)


class _PhaseEvaluator:
    def __init__(self, phase, config):
        self.phase = phase
        m = phase.metric
        self.code, self.p = m.code, m.kernel_params
        t, s, _, _ = config
        self.nt, self.ns = _steps(m, t), _steps(m, s)
        self.cx, self.cy = phase.charts
        self.xf = self.cx.frame_covector(phase.xi)
        self.ef = self.cy.frame_covector(phase.eta)

    def __call__(self, t, s, z, w):
        ph = self.phase
        pt, v = ph.metric.boundary.inward_direction(z + ph.z_origin, w)
        xa = K.flow_fixed(self.code, self.p, pt[0], pt[1], v[0], v[1], t, self.nt)
        ya = K.flow_fixed(self.code, self.p, pt[0], pt[1], v[0], v[1], s, self.ns)
        ux = self.cx.to_normal(xa[0], xa[1])
        uy = self.cy.to_normal(ya[0], ya[1])
        return (self.xf[0] * ux[0] + self.xf[1] * ux[1]
                - self.ef[0] * uy[0] - self.ef[1] * uy[1]
                + 0.5 * ph.chirp * (uy[0] ** 2 + uy[1] ** 2))


def critical_configurations(spec, datum=None):
    """Critical points (t, s, z, w) of the phase: one per orientation of the ray."""
    m = spec.metric
    if datum is not None:
        return [(datum.t0_from_z0, datum.s0_from_z0, datum.z0, datum.w0),
                (datum.t1, datum.s1, datum.z1, datum.w1)]
    _, path = transverse_geodesic(m, spec.x0, spec.xi)
    return [(path.tau_plus, path.tau_plus, path.z_out, path.w_out),
            (-path.tau_minus, -path.tau_minus, path.z_in, path.w_in)]


@dataclass
class HessianResult:
    matrix: np.ndarray
    determinant: float
    eigenvalues: np.ndarray
    signature: int
    gradient: np.ndarray
    config: tuple


def phase_gradient(phase, config, delta=1e-4):
    ev = _PhaseEvaluator(phase, config)
    c = np.asarray(config, dtype=float)
    g = np.zeros(4)
    for i in range(4):
        e = np.zeros(4)
        e[i] = delta
        g[i] = (ev(*(c + e)) - ev(*(c - e))) / (2 * delta)
    return g


def numerical_hessian(phase, config, delta=1e-3, grad_tol=1e-6):
    """Central finite-difference Hessian of the phase at a critical configuration."""
    grad = phase_gradient(phase, config)
    if np.max(np.abs(grad)) > grad_tol:
        raise PreconditionError("configuration is not a critical point of the phase",
                                gradient=grad.tolist())
    ev = _PhaseEvaluator(phase, config)
    c = np.asarray(config, dtype=float)
    f0 = ev(*c)
    H = np.zeros((4, 4))
    E = np.eye(4) * delta
    for i in range(4):
        H[i, i] = (ev(*(c + E[i])) - 2 * f0 + ev(*(c - E[i]))) / delta ** 2
        for j in range(i + 1, 4):
            H[i, j] = H[j, i] = (ev(*(c + E[i] + E[j])) - ev(*(c + E[i] - E[j]))
                                 - ev(*(c - E[i] + E[j])) + ev(*(c - E[i] - E[j]))) / (4 * delta ** 2)
    eig = np.linalg.eigvalsh(H)
    sig = int(np.sum(eig > 0) - np.sum(eig < 0))
    return HessianResult(H, float(np.linalg.det(H)), eig, sig, grad, tuple(map(float, config)))


def determinant_fit(phase, config, chirps=None):
    """(X, Y, Z) with det H(c) = X c^2 + Y c + Z, fitted through three chirps."""
    c = phase.chirp
    chirps = chirps or (0.5 * c, c, 2 * c)
    dets = [numerical_hessian(phase.with_chirp(h), config).determinant for h in chirps]
    return tuple(np.polyfit(chirps, dets, 2))


def pairing_normalization(phase, config):
    X, Y, Z = determinant_fit(phase, config)
    c = phase.chirp
    return float(np.sqrt(abs(X * c * c + Y * c + Z) / abs(X))), (X, Y, Z)


# -- stationary phase harness -----------------------------------------------

@dataclass
class StationaryPhaseResult:
    rank: int
    lambdas: np.ndarray
    coefficients: np.ndarray
    extrapolated: np.ndarray
    predicted: object
    normalization: float
    normalizations: list
    determinant_fits: list
    monotone: bool
    kind: str
    timings: dict = field(default_factory=dict)

    def relative_error(self, entry=None):
        k, pred = self.predicted.pure_entry() if entry is None else (entry, self.predicted.entries[entry])
        return abs(self.extrapolated[k] - pred) / abs(pred)

    def table(self):
        """CSV rows: lambda, kI, kJ, Re K, Im K, Re predicted, Im predicted."""
        rows = []
        n = self.rank + 1
        lams = list(self.lambdas) + ["richardson"]
        vals = list(self.coefficients) + [self.extrapolated]
        for lam, Kl in zip(lams, vals):
            for i in range(n):
                for j in range(n):
                    p = self.predicted.entries[i, j]
                    rows.append((lam, i, j, float(Kl[i, j].real), float(Kl[i, j].imag),
                                 float(p.real), float(p.imag)))
        return rows

    def plot_triples(self):
        k, pred = self.predicted.pure_entry()
        return [{"lambda": float(l), "coefficient": [float(c[k].real), float(c[k].imag)],
                 "predicted": [float(pred.real), float(pred.imag)]}
                for l, c in zip(self.lambdas, self.coefficients)]


def richardson(values):
    """Eliminate 1/lambda and 1/lambda^2 terms from three values at ratio-2 lambdas."""
    k1, k2, k3 = values[-3:]
    return (8 * k3 - 6 * k2 + k1) / 3


def reference_integral(gprobe, grid, metric, effective_chirp, f_width, stretch=1.0):
    """Leading-order model of <N f, g> lambda / K over the g-probe support.

    The f window arrives at the g center unchanged along the ray and with
    transverse offsets scaled by the Jacobi factor (stretch = |f(t0, s0)|;
    1 on the diagonal).  The phase left after the plane waves cancel is the
    chirp, with the effective coefficient N_c.  On the diagonal this equals
    the pairing <f, g> itself; its asymptotic value is 2 pi (-i) / (lambda N_c).
    """
    supp, chart, u1, u2, ru = probe_support(gprobe, grid, metric)
    q = quadrature_weights(grid, metric)
    eta = chart.frame_covector(gprobe.covector)
    eta = eta / np.hypot(*eta)
    a, b = u1[supp], u2[supp]
    across = a * eta[0] + b * eta[1]
    along = -a * eta[1] + b * eta[0]
    transported = window(np.hypot(along, across / stretch) / f_width)
    lam = gprobe.frequency
    chirp = np.exp(-0.5j * lam * effective_chirp * (a * a + b * b))
    return np.sum(q[supp] * window(ru[supp]) * transported * chirp)


def _region_radius(probe, grid, metric):
    supp, *_ = probe_support(probe, grid, metric)
    x, y = grid.coords
    d = np.hypot(x[supp] - probe.center[0], y[supp] - probe.center[1])
    return float(d.max() + 2 * grid.spacing)


def stationary_phase_check(xray, x0=None, xi=None, m=0, lambdas=(20.0, 40.0, 80.0), datum=None,
                           chirp=10.0, width_f=0.4, width_g=0.15, strict=False):
    """Measure the leading coefficient of <N_m f, g> for probes at (x0, xi).

    With a conjugate datum the g probe sits at (y0, eta) and the result is
    compared with the conjugate-pair symbol; otherwise both probes share
    (x0, xi) and the comparison is with the pseudodifferential symbol.
    """
    lambdas = np.asarray(sorted(float(l) for l in lambdas))
    if lambdas.size < 3 or not np.allclose(lambdas[1:] / lambdas[:-1], 2.0):
        raise InvalidInputError("harness needs at least three frequencies in ratio 2")
    metric, grid = xray.metric, xray.grid
    tic = time.perf_counter()
    if datum is None:
        phase = diagonal_phase(metric, x0, xi, chirp)
        predicted = psido_symbol(metric, phase.x0, phase.xi, m)
        configs = critical_configurations(phase)
        stretch = 1.0
    else:
        phase = conjugate_phase(datum, chirp)
        predicted = fio_symbol(datum, m)
        configs = critical_configurations(phase, datum)
        stretch = abs(datum.f0)
    norms, fits = [], []
    for cfg in configs:
        nc, fit = pairing_normalization(phase, cfg)
        norms.append(nc)
        fits.append(fit)
    nc = norms[0]
    t_setup = time.perf_counter() - tic

    n = m + 1
    weights = contraction_weights(grid, metric, m)
    coeffs = []
    for lam in lambdas:
        fprobes = [OscillatoryProbe(tuple(phase.x0), tuple(-phase.xi), lam, m, k, width_f)
                   for k in range(n)]
        gprobes = [OscillatoryProbe(tuple(phase.y0), tuple(phase.eta), lam, m, k, width_g, chirp)
                   for k in range(n)]
        fs = [make_probe(p, grid, metric) for p in fprobes]
        gs = [make_probe(p, grid, metric) for p in gprobes]
        gnodes = probe_support(gprobes[0], grid, metric)[0]
        region = (tuple(phase.x0), _region_radius(fprobes[0], grid, metric))
        sinos = xray.forward_many(fs, region)
        nfs = [xray.backproject(s, gnodes) for s in sinos]
        P = np.array([[np.sum(weights * nfs[j].comps * gs[i].comps) for j in range(n)]
                      for i in range(n)])
        coeffs.append(lam * P / reference_integral(gprobes[0], grid, metric, nc, width_f, stretch))
    coeffs = np.array(coeffs)
    ext = richardson(coeffs)
    k, _ = predicted.pure_entry()
    err = np.abs(coeffs[:, k[0], k[1]] - ext[k])
    monotone = bool(np.all(np.diff(err) < 0))
    res = StationaryPhaseResult(m, lambdas, coeffs, ext, predicted, nc, norms, fits, monotone,
                                phase.kind, {"setup": t_setup,
                                             "total": time.perf_counter() - tic})
    if strict and not monotone:
        raise ConvergenceDiagnostic("harness coefficients do not converge monotonically",
                                    table=res.table())
    return res


# -- cone filters ------------------------------------------------------------

@dataclass(frozen=True)
class ConeSpec:
    """Spatial window (center, outer radius) and a frequency cone.

    The window is 1 inside half its radius.  The angular cutoff is 1 for
    angles within core * half_angle of direction; the radial cutoff is 1 on
    the band shrunk by taper * (band width) at each end.
    """

    center: tuple
    width: object
    direction: tuple
    half_angle: float
    band: tuple
    core: float = 0.7
    taper: float = 0.1

    def __post_init__(self):
        if not 0 < self.half_angle < np.pi / 2:
            raise InvalidInputError("cone half-angle must lie in (0, pi/2)")
        lo, hi = self.band
        if not 0 <= lo < hi:
            raise InvalidInputError("radial band must be nonempty")
        if not np.any(self.direction):
            raise InvalidInputError("cone direction must be nonzero")

    @property
    def widths(self):
        w = np.broadcast_to(np.asarray(self.width, dtype=float), (2,))
        return float(w[0]), float(w[1])

    @property
    def angle(self):
        return float(np.arctan2(self.direction[1], self.direction[0]))

    def with_band(self, band):
        return replace(self, band=tuple(band))

    def overlaps(self, other, period=None):
        d = np.subtract(self.center, other.center).astype(float)
        if period is not None:
            d[0] = (d[0] + period / 2) % period - period / 2
        wa, wb = self.widths, other.widths
        spatial = np.hypot(d[0] / (wa[0] + wb[0]), d[1] / (wa[1] + wb[1])) < 1
        dang = abs((self.angle - other.angle + np.pi) % (2 * np.pi) - np.pi)
        angular = dang < self.half_angle + other.half_angle
        radial = self.band[0] < other.band[1] and other.band[0] < self.band[1]
        return bool(spatial and angular and radial)


def _layout(obj):
    """(array of planes, spacings, coordinate axes, periodic flag for axis 0)."""
    if isinstance(obj, SymTensorField):
        g = obj.grid
        return obj.comps, (g.spacing, g.spacing), (g.axis, g.axis), None
    if isinstance(obj, Sinogram):
        return obj.values[None], (obj.dz, obj.dw), (obj.z, obj.w), obj.length
    raise InvalidInputError("cone filtering needs a tensor field or a sinogram")


def _rebuild(obj, planes):
    if isinstance(obj, SymTensorField):
        return SymTensorField(obj.rank, obj.grid, planes)
    return obj.like(planes[0])


def _spatial_window(cone, axes, period):
    a0, a1 = axes
    d0 = a0[:, None] - cone.center[0]
    if period is not None:
        d0 = (d0 + period / 2) % period - period / 2
    d1 = a1[None, :] - cone.center[1]
    w0, w1 = cone.widths
    rho = np.hypot(d0 / w0, d1 / w1)
    return smooth_cutoff(rho, 0.5, 1.0)


def _frequencies(shape, spacing):
    k0 = 2 * np.pi * np.fft.fftfreq(shape[0], spacing[0])
    k1 = 2 * np.pi * np.fft.fftfreq(shape[1], spacing[1])
    return np.meshgrid(k0, k1, indexing="ij")


def _radial(kr, band, taper):
    lo, hi = band
    d = taper * (hi - lo)
    rise = 1 - smooth_cutoff(kr, lo, lo + d) if lo > 0 else np.ones_like(kr)
    return rise * smooth_cutoff(kr, hi - d, hi)


def cone_multiplier(cone, shape, spacing):
    k0, k1 = _frequencies(shape, spacing)
    kr = np.hypot(k0, k1)
    ang = np.arctan2(k1, k0)
    dang = np.abs((ang - cone.angle + np.pi) % (2 * np.pi) - np.pi)
    a = smooth_cutoff(dang, cone.core * cone.half_angle, cone.half_angle)
    return a * _radial(kr, cone.band, cone.taper)


def cone_filter(obj, cone):
    """Spatial window, then a smooth frequency-cone multiplier; same type out."""
    planes, spacing, axes, period = _layout(obj)
    win = _spatial_window(cone, axes, period)
    mult = cone_multiplier(cone, planes.shape[1:], spacing)
    out = np.fft.ifft2(np.fft.fft2(planes * win, axes=(1, 2)) * mult, axes=(1, 2))
    return _rebuild(obj, out)


def band_filter(obj, band, taper=0.1):
    """All directions, no spatial window: the radial band multiplier only."""
    planes, spacing, _, _ = _layout(obj)
    k0, k1 = _frequencies(planes.shape[1:], spacing)
    mult = _radial(np.hypot(k0, k1), band, taper)
    out = np.fft.ifft2(np.fft.fft2(planes, axes=(1, 2)) * mult, axes=(1, 2))
    return _rebuild(obj, out)


def energy(obj):
    """Discrete L^2 energy in coordinates (binomial weights for tensors)."""
    planes, spacing, _, _ = _layout(obj)
    if isinstance(obj, SymTensorField):
        w = np.array([comb(obj.rank, k) for k in range(obj.rank + 1)], dtype=float)
    else:
        w = np.ones(1)
    return float(np.sum(w[:, None, None] * np.abs(planes) ** 2) * spacing[0] * spacing[1])


def hf_energy(obj, cone, band=None):
    if band is not None:
        cone = cone.with_band(band)
    return energy(cone_filter(obj, cone))


def band_energy(obj, band, taper=0.1):
    return energy(band_filter(obj, band, taper))
