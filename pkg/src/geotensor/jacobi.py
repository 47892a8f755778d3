"""Scalar Jacobi fields b'' + kappa b = 0 along geodesics.

A normal Jacobi field is J = b(t) E(t) with E the counterclockwise unit
normal of the geodesic; in two dimensions that frame is parallel, so the
Jacobi system collapses to one scalar equation.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import InvalidInputError, InvalidPairError, TrappedRayError
from .geometry import GeodesicPath, hodge_perp, shoot_from_boundary, shoot_geodesic

ROOT_TOL = 1e-10


@dataclass
class JacobiSolution:
    path: GeodesicPath
    t: np.ndarray
    b: np.ndarray
    bdot: np.ndarray
    x: np.ndarray
    b0: float
    bdot0: float
    t0: float

    def value(self, s):
        """b(s), b'(s) by an exact partial RK4 step from the nearest sample."""
        return _advance(self.path, self.t0, self.b0, self.bdot0, s)

    def residual(self):
        """Sup norm of b'' + kappa b over interior samples (5-point stencil)."""
        h = self.path.step
        uni = np.isclose(np.diff(self.t), h, rtol=1e-9, atol=0)
        ok = uni[:-3] & uni[1:-2] & uni[2:-1] & uni[3:]
        inner = np.flatnonzero(ok) + 2
        if inner.size == 0:
            return 0.0
        b = self.b
        d2 = (-b[inner - 2] + 16 * b[inner - 1] - 30 * b[inner]
              + 16 * b[inner + 1] - b[inner + 2]) / (12 * h ** 2)
        kap = self.path.metric.curvature_field(self.x[inner, 0], self.x[inner, 1])
        return float(np.max(np.abs(d2 + kap * b[inner])))


def _state(path, t0):
    x, v = path.state_at(t0)
    return np.array([x[0], x[1], v[0], v[1]])


def _sweep_from(path, t0, b0, bd0):
    m = path.metric
    g = _state(path, t0)
    cap = path.extra.get("cap", 50 * m.radius)
    maxn = int(cap / path.step) + 3
    fw = np.array([*g, b0, bd0])
    bw = np.array([g[0], g[1], -g[2], -g[3], b0, -bd0])
    tf, sf, kf, st1 = K.sweep6(m.code, m.kernel_params, m.radius, fw, path.step, cap, maxn)
    tb, sb, kb, st2 = K.sweep6(m.code, m.kernel_params, m.radius, bw, path.step, cap, maxn)
    if st1 != K.OK or st2 != K.OK:
        raise TrappedRayError("geodesic exceeded the trapping cap while integrating Jacobi field")
    tf, sf, tb, sb = tf[:kf], sf[:kf], tb[:kb], sb[:kb]
    t = np.concatenate([t0 - tb[:0:-1], t0 + tf])
    st = np.concatenate([sb[:0:-1], sf])
    bdot = np.concatenate([-sb[:0:-1, 5], sf[:, 5]])
    return t, st[:, :2], st[:, 4], bdot


def integrate_scalar_jacobi(path, b0, bdot0, t0=0.0):
    """Solve b'' + kappa(gamma(t)) b = 0 with b(t0) = b0, b'(t0) = bdot0.

    For t0 = 0 the samples coincide with the path samples.
    """
    t, x, b, bd = _sweep_from(path, float(t0), float(b0), float(bdot0))
    return JacobiSolution(path=path, t=t, b=b, bdot=bd, x=x, b0=float(b0),
                          bdot0=float(bdot0), t0=float(t0))


def _advance(path, t0, b0, bd0, s, step=None):
    """Integrate from t0 to s in equal steps no longer than the path step."""
    m = path.metric
    h = path.step if step is None else step
    span = s - t0
    n = max(1, int(np.ceil(abs(span) / h - 1e-12)))
    dt = span / n
    st = np.array([*_state(path, t0), b0, bd0])
    for _ in range(n):
        st = K.rk4_step6(m.code, m.kernel_params, st, dt)
    return float(st[4]), float(st[5])


def find_conjugate_points(path, t0):
    """All s != t0 in [tau-, tau+] where b(t0) = 0, b'(t0) = 1 forces b(s) = 0."""
    if not (path.tau_minus - 1e-12 <= t0 <= path.tau_plus + 1e-12):
        raise InvalidInputError("t0 outside the path parameter range")
    sol = integrate_scalar_jacobi(path, 0.0, 1.0, t0)
    k0 = int(np.argmin(np.abs(sol.t - t0)))
    roots = []
    for lo, hi in _sign_changes(sol.b, k0):
        roots.append(_bisect(path, t0, sol.t[lo], sol.t[hi], sol.b[lo]))
    return sorted(roots)


def _sign_changes(b, k0):
    out = []
    for k in range(k0 + 1, len(b) - 1):
        if b[k] == 0.0 or b[k] * b[k + 1] < 0:
            out.append((k, k + 1))
    for k in range(k0 - 1, 0, -1):
        if b[k] == 0.0 or b[k] * b[k - 1] < 0:
            out.append((k - 1, k))
    return out


def _bisect(path, t0, a, b, ga):
    va, _ = _advance(path, t0, 0.0, 1.0, a)
    if va == 0.0:
        return float(a)
    for _ in range(80):
        mid = 0.5 * (a + b)
        vm, _ = _advance(path, t0, 0.0, 1.0, mid)
        if vm == 0.0:
            return float(mid)
        if (vm > 0) == (va > 0):
            a, va = mid, vm
        else:
            b = mid
        if b - a < ROOT_TOL:
            break
    return float(0.5 * (a + b))


def wronskian(sol1, sol2):
    """W(t) = b2' b1 - b1' b2 per sample and its maximum drift from W(t_0)."""
    if sol1.path is not sol2.path or sol1.t.shape != sol2.t.shape or not np.array_equal(sol1.t, sol2.t):
        raise InvalidInputError("Jacobi solutions live on different sample grids")
    w = sol2.bdot * sol1.b - sol1.bdot * sol2.b
    return w, float(np.max(np.abs(w - w[0])))


def f_factor(path, t0, s0, step=None):
    """f(t0, s0): solution of f'' + kappa f = 0 with f = 1, f' = 0 at t0."""
    return _advance(path, float(t0), 1.0, 0.0, float(s0), step)[0]


@dataclass
class ConjugatePairDatum:
    path: GeodesicPath
    t0: float
    s0: float
    x0: np.ndarray
    y0: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    z0: float
    z1: float
    w0: float
    w1: float
    t0_from_z0: float
    s0_from_z0: float
    t1: float
    s1: float
    f0: float
    f1: float
    orientation: str = "forward"

    @property
    def metric(self):
        return self.path.metric

    def conormality(self):
        v0 = self.path.state_at(self.t0)[1]
        v1 = self.path.state_at(self.s0)[1]
        return float(np.dot(self.xi, v0)), float(np.dot(self.eta, v1))

    def summary(self):
        return {
            "orientation": self.orientation, "t0": self.t0, "s0": self.s0,
            "x0": self.x0.tolist(), "y0": self.y0.tolist(),
            "xi": self.xi.tolist(), "eta": self.eta.tolist(),
            "z0": self.z0, "z1": self.z1, "w0": self.w0, "w1": self.w1,
            "t1": self.t1, "s1": self.s1, "f0": self.f0, "f1": self.f1,
        }


def _normal_frame(metric, x, v):
    e2 = np.array([-v[1], v[0]])
    return metric.flat(x, e2)


def build_conjugate_datum(path, t0, s0, tol=1e-7):
    """Assemble the covectors and boundary data of a conjugate pair.

    xi is the metric dual of D_t J at t0 for the normal Jacobi field with
    b(t0) = 0, b'(t0) = 1 (so |xi|_g = 1); eta is the dual of D_t J at s0.
    """
    t0, s0 = float(t0), float(s0)
    if s0 < t0:
        orientation = "reversed"
    else:
        orientation = "forward"
    b_s, bd_s = _advance(path, t0, 0.0, 1.0, s0)
    if bd_s == 0.0 or abs(b_s / bd_s) > tol:
        raise InvalidPairError("(t0, s0) is not a conjugate pair", b_at_s0=b_s)
    m = path.metric
    x0, v0 = path.state_at(t0)
    y0, v1 = path.state_at(s0)
    xi = _normal_frame(m, x0, v0)
    eta = bd_s * _normal_frame(m, y0, v1)
    _, perp0 = hodge_perp(m, x0, xi)
    cap = path.extra.get("cap")
    trans = shoot_geodesic(m, (tuple(x0), tuple(perp0)), path.step, cap)
    gap = s0 - t0
    z0, w0 = trans.z_out, trans.w_out
    z1, w1 = trans.z_in, trans.w_in
    t_a = trans.tau_plus
    s_a = t_a + gap
    t1 = -trans.tau_minus
    s1 = t1 - gap
    if s1 < 0 or s_a < 0:
        raise InvalidPairError("the partner point lies on the wrong side of x0")
    from_z0 = shoot_from_boundary(m, z0, w0, path.step, cap)
    from_z1 = shoot_from_boundary(m, z1, w1, path.step, cap)
    f0 = f_factor(from_z0, t_a, s_a)
    f1 = f_factor(from_z1, t1, s1)
    return ConjugatePairDatum(path=path, t0=t0, s0=s0, x0=np.asarray(x0), y0=np.asarray(y0),
                              xi=xi, eta=eta, z0=float(z0), z1=float(z1), w0=float(w0),
                              w1=float(w1), t0_from_z0=t_a, s0_from_z0=s_a, t1=t1, s1=s1,
                              f0=f0, f1=f1, orientation=orientation)


def first_conjugate_time(metric, z, w, step=None, cap=None):
    """First s > 0 conjugate to the entry point of the ray (z, w), or None."""
    path = shoot_from_boundary(metric, z, w, step, cap)
    roots = [s for s in find_conjugate_points(path, 0.0) if s > 0]
    return (roots[0] if roots else None), path


def conjugate_locus_sweep(metric, n_z, n_w, eps_w=0.03, step=None, cap=None):
    """Rows (z, w, first conjugate time) for rays that have one."""
    L = metric.boundary.length
    rows = []
    for z in np.arange(n_z) * L / n_z:
        for w in np.linspace(-(np.pi / 2 - eps_w), np.pi / 2 - eps_w, n_w):
            s, _ = first_conjugate_time(metric, z, w, step, cap)
            if s is not None:
                rows.append((float(z), float(w), float(s)))
    return rows
