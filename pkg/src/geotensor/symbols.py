"""Principal symbols of the pseudodifferential and conjugate-pair parts of N_m.

Both are rank-one tensors c * a^I b^J, a = xi_perp_0 at x0 and b = xi_perp_0
or eta_perp_0.  Entries are stored by 1-index multiplicity: entry [kI, kJ]
is the coefficient for any index tuples I, J with kI and kJ ones.

Two conventions: "scalar" (the coefficient the stationary phase harness
measures, 2 pi (angle terms) / |xi|) and "half_density" (an extra factor
2 pi i).
"""

import warnings
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .errors import (DegeneratePairError, EllipticityFailure, InvalidInputError,
                     NearTangencyWarning)
from .geometry import hodge_perp, shoot_geodesic

TANGENCY_CAP = 1.0 / np.cos(1.45)
CONVENTIONS = ("scalar", "half_density")


@dataclass
class SymbolTensor:
    rank: int
    entries: np.ndarray
    a: np.ndarray
    b: np.ndarray
    coefficient: complex
    x0: np.ndarray
    xi: np.ndarray
    y0: np.ndarray = None
    eta: np.ndarray = None
    angle_terms: tuple = ()
    convention: str = "scalar"
    extra: dict = field(default_factory=dict)

    def factor_residual(self):
        """Largest 2x2 minor of the entry matrix, relative to its scale."""
        e = self.entries
        scale = max(np.max(np.abs(e)), 1e-300)
        worst = 0.0
        n = e.shape[0]
        for i in range(n):
            for j in range(i + 1, n):
                for k in range(n):
                    for l in range(k + 1, n):
                        worst = max(worst, abs(e[i, k] * e[j, l] - e[i, l] * e[j, k]))
        return worst / scale ** 2

    def full(self):
        """Dense rank-2m array sigma[i1..im, j1..jm] (indices 0, 1 for 1, 2)."""
        m = self.rank
        shape = (2,) * (2 * m)
        out = np.zeros(shape, dtype=complex)
        for idx in np.ndindex(*shape):
            kI = sum(1 for i in idx[:m] if i == 0)
            kJ = sum(1 for j in idx[m:] if j == 0)
            out[idx] = self.entries[kI, kJ]
        return out

    def transpose(self):
        return SymbolTensor(self.rank, self.entries.T.copy(), self.b, self.a, self.coefficient,
                            self.y0, self.eta, self.x0, self.xi, self.angle_terms[::-1],
                            self.convention, dict(self.extra))

    def pure_entry(self):
        """Entry whose index tuples are aligned with a and b (largest magnitude)."""
        k = np.unravel_index(np.argmax(np.abs(self.entries)), self.entries.shape)
        return k, self.entries[k]


def _powers(vec, m):
    return np.array([vec[0] ** k * vec[1] ** (m - k) for k in range(m + 1)])


def _entries(a, b, m, c):
    return c * np.outer(_powers(a, m), _powers(b, m))


def _convention(c, convention):
    if convention not in CONVENTIONS:
        raise InvalidInputError(f"unknown symbol convention {convention!r}")
    return c * (2j * np.pi) if convention == "half_density" else complex(c)


def _angle_term(metric, point, inward):
    """1 / |<w, nu>_g| at a boundary point for a unit inward vector."""
    _, nu, _ = metric.boundary.frame(metric.boundary.z_of_theta(np.arctan2(point[1], point[0])))
    g = np.exp(2 * metric.exponent(*point))
    return 1.0 / abs(g * np.dot(inward, nu))


def transverse_geodesic(metric, x0, xi, step=None, cap=None):
    _, perp0 = hodge_perp(metric, x0, xi)
    path = shoot_geodesic(metric, (tuple(map(float, x0)), tuple(perp0)), step, cap)
    return perp0, path


def psido_symbol(metric, x0, xi, m, convention="scalar", tangency_cap=TANGENCY_CAP,
                 step=None, cap=None):
    x0 = np.asarray(x0, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if not metric.contains(x0, closed=False):
        raise InvalidInputError("x0 must be an interior point")
    perp0, path = transverse_geodesic(metric, x0, xi, step, cap)
    # z0 is hit forward from x0, z1 backward; w are the inward unit vectors there
    w0 = -path.v[-1]
    w1 = path.v[0]
    t0 = _angle_term(metric, path.x[-1], w0)
    t1 = _angle_term(metric, path.x[0], w1)
    for t in (t0, t1):
        if t > tangency_cap:
            warnings.warn(f"transverse geodesic meets the boundary nearly tangentially "
                          f"(angle factor {t:.3g})", NearTangencyWarning, stacklevel=2)
    norm = metric.conorm(x0, xi)
    c = _convention(2 * np.pi * (t0 + t1) / norm, convention)
    return SymbolTensor(m, _entries(perp0, perp0, m, c), perp0, perp0, c, x0, xi, x0, xi,
                        (t0, t1), convention,
                        {"z0": path.z_out, "w0": path.w_out, "z1": path.z_in, "w1": path.w_in})


def fio_symbol(datum, m, xi_scale=1.0, convention="scalar", degenerate_tol=1e-10):
    metric = datum.metric
    if abs(datum.f0) < degenerate_tol or abs(datum.f1) < degenerate_tol:
        raise DegeneratePairError("Jacobi factor f vanishes at the pair", f0=datum.f0, f1=datum.f1)
    _, a = hodge_perp(metric, datum.x0, datum.xi)
    _, b = hodge_perp(metric, datum.y0, datum.eta)
    p0, nu0, _ = metric.boundary.frame(datum.z0)
    p1, nu1, _ = metric.boundary.frame(datum.z1)
    _, in0 = metric.boundary.inward_direction(datum.z0, datum.w0)
    _, in1 = metric.boundary.inward_direction(datum.z1, datum.w1)
    c0 = abs(np.exp(2 * metric.exponent(*p0)) * np.dot(in0, nu0))
    c1 = abs(np.exp(2 * metric.exponent(*p1)) * np.dot(in1, nu1))
    t0 = 1.0 / (c0 * datum.f0)
    t1 = 1.0 / (c1 * datum.f1)
    norm = xi_scale * metric.conorm(datum.x0, datum.xi)
    c = _convention(2 * np.pi * (t0 + t1) / norm, convention)
    return SymbolTensor(m, _entries(a, b, m, c), a, b, c, datum.x0, datum.xi * xi_scale,
                        datum.y0, datum.eta * xi_scale, (t0, t1), convention,
                        {"f0": datum.f0, "f1": datum.f1})


@dataclass
class EllipticityReport:
    rank: int
    matrix_rank: int
    singular_values: np.ndarray
    elliptic: bool

    @property
    def min_singular_value(self):
        return float(self.singular_values[-1])


def ellipticity_certificate(sigma, xi, metric=None, tol=1e-10, strict=False):
    """Rank of {sigma f = 0} + {xi^i f_{..i} = 0} on symmetric m-tensors at x0."""
    m = sigma.rank
    xi = np.asarray(xi, dtype=float)
    up = xi if metric is None else metric.sharp(sigma.x0, xi)
    binom = np.array([comb(m, k) for k in range(m + 1)], dtype=float)
    rows = [sigma.entries * binom[None, :]]
    if m >= 1:
        S = np.zeros((m, m + 1))
        for kp in range(m):
            S[kp, kp + 1] += up[0]
            S[kp, kp] += up[1]
        rows.append(S)
    A = np.vstack(rows).astype(complex)
    norms = np.linalg.norm(A, axis=1)
    A = A[norms > 0] / norms[norms > 0, None]
    sv = np.linalg.svd(A, compute_uv=False)
    r = int(np.sum(sv > tol * sv[0])) if sv.size else 0
    rep = EllipticityReport(m, r, sv, r == m + 1)
    if strict and not rep.elliptic:
        raise EllipticityFailure("constraint system is rank deficient", rank=r, expected=m + 1)
    return rep


def symbol_sweep(metric, m, x_points, angles, convention="scalar"):
    """Rows (x1, x2, angle, coefficient, angle_term0, angle_term1) over a grid."""
    rows = []
    for x in x_points:
        for th in angles:
            xi = np.array([np.cos(th), np.sin(th)])
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", NearTangencyWarning)
                s = psido_symbol(metric, x, xi, m, convention)
            rows.append((float(x[0]), float(x[1]), float(th), float(s.coefficient.real),
                         float(s.coefficient.imag), s.angle_terms[0], s.angle_terms[1]))
    return rows
