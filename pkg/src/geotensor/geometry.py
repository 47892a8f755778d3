"""Conformal metrics on a round disc, geodesics and boundary coordinates.

The metric is g = exp(2 lam) delta on the disc |x| <= R.  Boundary points
are addressed by z, the g-arclength counterclockwise from (R, 0).  An
inward boundary direction is addressed by w, its angle from the inward
normal, positive counterclockwise.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.interpolate import CubicSpline

from . import _kernels as K
from .errors import DomainError, InvalidInputError, TrappedRayError

FAMILIES = {
    "euclidean": K.EUCLIDEAN,
    "constant_curvature": K.CONSTANT_CURVATURE,
    "gaussian_bump": K.GAUSSIAN_BUMP,
}


@dataclass(frozen=True)
class MetricField:
    family: str
    radius: float = 1.0
    curvature0: float = 0.0
    amplitude: float = 0.0
    center: tuple = (0.0, 0.0)
    width: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidInputError(f"unknown metric family {self.family!r}")
        if not self.radius > 0:
            raise InvalidInputError("disc radius must be positive")
        if self.family == "constant_curvature" and self.curvature0 < 0:
            if self.radius ** 2 * -self.curvature0 >= 1.0:
                raise InvalidInputError("disc reaches the ideal boundary of the hyperbolic model")
        if self.family == "gaussian_bump" and not self.width > 0:
            raise InvalidInputError("bump width must be positive")

    @classmethod
    def euclidean(cls, radius=1.0):
        return cls("euclidean", radius=radius)

    @classmethod
    def constant_curvature(cls, curvature0, radius=1.0):
        return cls("constant_curvature", radius=radius, curvature0=float(curvature0))

    @classmethod
    def gaussian_bump(cls, amplitude, center=(0.0, 0.0), width=0.5, radius=1.0):
        return cls("gaussian_bump", radius=radius, amplitude=float(amplitude),
                   center=(float(center[0]), float(center[1])), width=float(width))

    @property
    def code(self):
        return FAMILIES[self.family]

    @cached_property
    def kernel_params(self):
        if self.family == "constant_curvature":
            return np.array([self.curvature0, 0.0, 0.0, 0.0])
        if self.family == "gaussian_bump":
            return np.array([self.amplitude, self.center[0], self.center[1], self.width])
        return np.zeros(4)

    def describe(self):
        d = {"family": self.family, "radius": self.radius}
        if self.family == "constant_curvature":
            d["curvature0"] = self.curvature0
        elif self.family == "gaussian_bump":
            d.update(amplitude=self.amplitude, center=list(self.center), width=self.width)
        return d

    # -- conformal exponent and derivatives (vectorized) ------------------

    def exponent_derivatives(self, x, y):
        """(lam, lam_x, lam_y, lam_xx, lam_xy, lam_yy) at arrays x, y."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.family == "constant_curvature":
            k = self.curvature0
            d = 1.0 + k * (x * x + y * y)
            if k < 0:
                # grid corners beyond the disc may reach the model's ideal boundary
                d = np.maximum(d, 0.5 * (1.0 + k * self.radius ** 2))
            return (np.log(2.0 / d), -2 * k * x / d, -2 * k * y / d,
                    -2 * k / d + 4 * k * k * x * x / d ** 2,
                    4 * k * k * x * y / d ** 2,
                    -2 * k / d + 4 * k * k * y * y / d ** 2)
        if self.family == "gaussian_bump":
            s2 = self.width ** 2
            dx = x - self.center[0]
            dy = y - self.center[1]
            l = self.amplitude * np.exp(-(dx * dx + dy * dy) / (2 * s2))
            return (l, -dx / s2 * l, -dy / s2 * l,
                    (dx * dx / s2 ** 2 - 1 / s2) * l,
                    dx * dy / s2 ** 2 * l,
                    (dy * dy / s2 ** 2 - 1 / s2) * l)
        z = np.zeros(np.broadcast(x, y).shape)
        return z, z, z, z, z, z

    def exponent(self, x, y):
        return self.exponent_derivatives(x, y)[0]

    def metric_tensor(self, point):
        x = _point(point)
        return np.exp(2 * self.exponent(*x)) * np.eye(2)

    def contains(self, point, closed=True, tol=1e-12):
        r = np.hypot(*_point(point))
        lim = self.radius * (1 + tol)
        return bool(r <= lim) if closed else bool(r < self.radius)

    def _check(self, point, closed):
        if not self.contains(point, closed=closed):
            raise DomainError(f"point {tuple(np.round(point, 6))} outside the disc of radius {self.radius}")

    def christoffel(self, point):
        """Gamma[r, k, i] = d_rk lam_i + d_ri lam_k - d_ki lam_r."""
        x = _point(point)
        self._check(x, closed=False)
        _, lx, ly, *_ = self.exponent_derivatives(*x)
        grad = np.array([float(lx), float(ly)])
        eye = np.eye(2)
        return (np.einsum("rk,i->rki", eye, grad) + np.einsum("ri,k->rki", eye, grad)
                - np.einsum("ki,r->rki", eye, grad))

    def gauss_curvature(self, point):
        x = _point(point)
        self._check(x, closed=True)
        return float(self.curvature_field(*x))

    def curvature_field(self, x, y):
        l, _, _, lxx, _, lyy = self.exponent_derivatives(x, y)
        return -np.exp(-2 * l) * (lxx + lyy)

    # -- vectors and covectors --------------------------------------------

    def norm(self, point, v):
        return float(np.exp(self.exponent(*_point(point))) * np.hypot(*v))

    def conorm(self, point, xi):
        return float(np.exp(-self.exponent(*_point(point))) * np.hypot(*xi))

    def sharp(self, point, xi):
        return np.exp(-2 * self.exponent(*_point(point))) * np.asarray(xi, dtype=float)

    def flat(self, point, v):
        return np.exp(2 * self.exponent(*_point(point))) * np.asarray(v, dtype=float)

    def unit(self, point, direction):
        d = np.asarray(direction, dtype=float)
        n = np.hypot(*d)
        if n == 0:
            raise InvalidInputError("zero direction")
        return d / n * np.exp(-self.exponent(*_point(point)))

    # -- boundary ---------------------------------------------------------

    @cached_property
    def boundary(self):
        return BoundaryParam(self)

    def boundary_convexity(self, samples=720):
        """Second fundamental form of the boundary circle at sampled points.

        For g = e^{2 lam} delta the circle r = R has geodesic curvature
        e^{-lam} (1/R + d_r lam) with respect to the inward side.
        """
        th = np.linspace(0, 2 * np.pi, samples, endpoint=False)
        x = self.radius * np.cos(th)
        y = self.radius * np.sin(th)
        l, lx, ly, *_ = self.exponent_derivatives(x, y)
        dr = lx * np.cos(th) + ly * np.sin(th)
        return np.exp(-l) * (1.0 / self.radius + dr)

    def is_strictly_convex(self, samples=720):
        return bool(np.all(self.boundary_convexity(samples) > 0))


class BoundaryParam:
    """g-arclength coordinate on the boundary circle."""

    def __init__(self, metric, samples=2048):
        self.metric = metric
        R = metric.radius
        th = np.linspace(0, 2 * np.pi, samples, endpoint=False)
        rho = R * np.exp(metric.exponent(R * np.cos(th), R * np.sin(th)))
        c = np.fft.rfft(rho) / samples
        self.length = float(2 * np.pi * c[0].real)
        k = np.arange(c.size)
        ck = np.zeros_like(c)
        ck[1:] = c[1:] / (1j * k[1:])
        if samples % 2 == 0:
            ck[-1] = 0.0
        # periodic part of the antiderivative, sampled on the table grid
        per = np.fft.irfft(ck * samples, n=samples)
        per = per - per[0]
        self._per = CubicSpline(np.append(th, 2 * np.pi), np.append(per, per[0]),
                                bc_type="periodic")
        self._mean = float(c[0].real)

    def speed(self, theta):
        R = self.metric.radius
        return R * np.exp(self.metric.exponent(R * np.cos(theta), R * np.sin(theta)))

    def z_of_theta(self, theta):
        th = np.mod(np.asarray(theta, dtype=float), 2 * np.pi)
        return np.mod(self._mean * th + self._per(th), self.length)

    def theta_of_z(self, z):
        z = np.mod(np.asarray(z, dtype=float), self.length)
        th = 2 * np.pi * z / self.length
        for _ in range(6):
            g = self._mean * th + self._per(th) - z
            th = th - g / self.speed(th)
        return np.mod(th, 2 * np.pi)

    def frame(self, z):
        """(point, outward unit normal, counterclockwise unit tangent)."""
        th = self.theta_of_z(z)
        R = self.metric.radius
        c, s = np.cos(th), np.sin(th)
        e = np.exp(-self.metric.exponent(R * c, R * s))
        point = np.stack([R * c, R * s], axis=-1)
        normal = np.stack([e * c, e * s], axis=-1)
        tangent = np.stack([-e * s, e * c], axis=-1)
        return point, normal, tangent

    def inward_direction(self, z, w):
        """Unit inward vector at boundary coordinate z making angle w with -nu."""
        th = self.theta_of_z(z)
        R = self.metric.radius
        e = np.exp(-self.metric.exponent(R * np.cos(th), R * np.sin(th)))
        ang = th + np.pi + np.asarray(w, dtype=float)
        point = np.stack([R * np.cos(th), R * np.sin(th)], axis=-1)
        return point, np.stack([e * np.cos(ang), e * np.sin(ang)], axis=-1)

    def coordinates(self, point, inward):
        """(z, w) of boundary points with inward vectors (arrays (..., 2))."""
        point = np.asarray(point, dtype=float)
        inward = np.asarray(inward, dtype=float)
        th = np.arctan2(point[..., 1], point[..., 0])
        z = self.z_of_theta(th)
        nx, ny = -np.cos(th), -np.sin(th)
        cross = nx * inward[..., 1] - ny * inward[..., 0]
        dot = nx * inward[..., 0] + ny * inward[..., 1]
        return z, np.arctan2(cross, dot)


def boundary_frame(metric, z):
    return metric.boundary.frame(z)


@dataclass(frozen=True)
class UnitPhasePoint:
    x: tuple
    v: tuple

    @classmethod
    def from_direction(cls, metric, x, direction):
        return cls(tuple(map(float, x)), tuple(metric.unit(x, direction)))

    def check(self, metric, tol=1e-10):
        if not metric.contains(self.x):
            raise DomainError("phase point outside disc")
        if abs(metric.norm(self.x, self.v) - 1) > tol:
            raise InvalidInputError("direction is not g-unit")


@dataclass
class GeodesicPath:
    metric: MetricField
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    step: float
    tau_plus: float
    tau_minus: float
    z_in: float
    w_in: float
    z_out: float
    w_out: float
    start_index: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def length(self):
        return self.tau_plus - self.tau_minus

    @property
    def santalo_weight(self):
        """<v, nu> at entry taken with the inward orientation (cos w_in)."""
        return float(np.cos(self.w_in))

    def speed_error(self):
        lam = self.metric.exponent(self.x[:, 0], self.x[:, 1])
        return float(np.max(np.abs(np.exp(lam) * np.hypot(self.v[:, 0], self.v[:, 1]) - 1)))

    def state_at(self, t):
        """Exact RK4 state at time t (substep from the nearest earlier sample)."""
        idx = int(np.clip(np.searchsorted(self.t, t, side="right") - 1, 0, len(self.t) - 1))
        dt = t - self.t[idx]
        s = np.array([*self.x[idx], *self.v[idx]])
        if dt != 0.0:
            s = np.array(K.rk4_step(self.metric.code, self.metric.kernel_params,
                                    s[0], s[1], s[2], s[3], dt))
        return s[:2], s[2:]

    def to_csv_rows(self):
        return np.column_stack([self.t, self.x, self.v])


def default_step(metric):
    return 1e-3 * metric.radius


def default_cap(metric):
    return 50.0 * metric.radius


def _sweep(metric, x, v, step, cap, b0=0.0, bd0=0.0):
    maxn = int(cap / step) + 3
    s0 = np.array([x[0], x[1], v[0], v[1], b0, bd0], dtype=float)
    ts, st, k, status = K.sweep6(metric.code, metric.kernel_params, metric.radius,
                                 s0, step, cap, maxn)
    if status != K.OK:
        raise TrappedRayError("geodesic exceeded the trapping cap", cap=cap,
                              start=tuple(x), direction=tuple(v))
    return ts[:k].copy(), st[:k].copy()


def shoot_geodesic(metric, start, step=None, cap=None):
    """Sampled maximal geodesic through a phase point, in both directions."""
    if not isinstance(start, UnitPhasePoint):
        start = UnitPhasePoint(tuple(start[0]), tuple(start[1]))
    start.check(metric, tol=1e-8)
    step = default_step(metric) if step is None else float(step)
    cap = default_cap(metric) if cap is None else float(cap)
    x = np.asarray(start.x, dtype=float)
    v = np.asarray(start.v, dtype=float)
    if np.hypot(*x) >= metric.radius * (1 - 1e-14):
        # on the boundary: v must point strictly inward
        if np.dot(x, v) >= 0:
            raise InvalidInputError("boundary start must point strictly inward")
    tf, sf = _sweep(metric, x, v, step, cap)
    tb, sb = _sweep(metric, x, -v, step, cap)
    t = np.concatenate([-tb[:0:-1], tf])
    pos = np.concatenate([sb[:0:-1, :2], sf[:, :2]])
    vel = np.concatenate([-sb[:0:-1, 2:4], sf[:, 2:4]])
    bp = metric.boundary
    z_in, w_in = bp.coordinates(pos[0], vel[0])
    z_out, w_out = bp.coordinates(pos[-1], -vel[-1])
    return GeodesicPath(metric=metric, t=t, x=pos, v=vel, step=step,
                        tau_plus=float(tf[-1]), tau_minus=float(-tb[-1]),
                        z_in=float(z_in), w_in=float(w_in),
                        z_out=float(z_out), w_out=float(w_out),
                        start_index=len(tb) - 1, extra={"cap": cap})


def shoot_from_boundary(metric, z, w, step=None, cap=None):
    point, v = metric.boundary.inward_direction(z, w)
    return shoot_geodesic(metric, UnitPhasePoint(tuple(point), tuple(v)), step, cap)


def hodge_perp(metric, point, xi):
    """(xi_perp, unit xi_perp): sharp of the Hodge star of the covector xi."""
    xi = np.asarray(xi, dtype=float)
    if not np.any(xi):
        raise InvalidInputError("hodge_perp of the zero covector")
    star = np.array([-xi[1], xi[0]])
    perp = metric.sharp(point, star)
    return perp, perp / metric.norm(point, perp)


def _point(p):
    a = np.asarray(p, dtype=float)
    if a.shape != (2,):
        raise InvalidInputError("expected a 2D point")
    return a
