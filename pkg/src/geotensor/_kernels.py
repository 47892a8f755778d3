"""Compiled inner loops: metric evaluation, RK4 ray stepping, ray integrals.

Metric codes: 0 euclidean, 1 constant curvature (p[0] = k0),
2 gaussian bump (p = A, cx, cy, s).  Everything works in disc
coordinates; velocities are coordinate components.
"""

import math

import numpy as np
from numba import njit, prange

EUCLIDEAN = 0
CONSTANT_CURVATURE = 1
GAUSSIAN_BUMP = 2

OK = 0
TRAPPED = 1


@njit(cache=True)
def lam_grad(code, p, x, y):
    if code == CONSTANT_CURVATURE:
        k = p[0]
        d = 1.0 + k * (x * x + y * y)
        return math.log(2.0 / d), -2.0 * k * x / d, -2.0 * k * y / d
    if code == GAUSSIAN_BUMP:
        a, cx, cy, s = p[0], p[1], p[2], p[3]
        dx = x - cx
        dy = y - cy
        s2 = s * s
        l = a * math.exp(-(dx * dx + dy * dy) / (2.0 * s2))
        return l, -dx / s2 * l, -dy / s2 * l
    return 0.0, 0.0, 0.0


@njit(cache=True)
def lam_hess(code, p, x, y):
    """lambda and its first and second partials: (l, lx, ly, lxx, lxy, lyy)."""
    if code == CONSTANT_CURVATURE:
        k = p[0]
        d = 1.0 + k * (x * x + y * y)
        d2 = d * d
        return (math.log(2.0 / d), -2.0 * k * x / d, -2.0 * k * y / d,
                -2.0 * k / d + 4.0 * k * k * x * x / d2,
                4.0 * k * k * x * y / d2,
                -2.0 * k / d + 4.0 * k * k * y * y / d2)
    if code == GAUSSIAN_BUMP:
        a, cx, cy, s = p[0], p[1], p[2], p[3]
        dx = x - cx
        dy = y - cy
        s2 = s * s
        s4 = s2 * s2
        l = a * math.exp(-(dx * dx + dy * dy) / (2.0 * s2))
        return (l, -dx / s2 * l, -dy / s2 * l,
                (dx * dx / s4 - 1.0 / s2) * l,
                dx * dy / s4 * l,
                (dy * dy / s4 - 1.0 / s2) * l)
    return 0.0, 0.0, 0.0, 0.0, 0.0, 0.0


@njit(cache=True)
def curvature(code, p, x, y):
    l, lx, ly, lxx, lxy, lyy = lam_hess(code, p, x, y)
    return -math.exp(-2.0 * l) * (lxx + lyy)


@njit(cache=True)
def _accel(code, p, x, y, vx, vy):
    _, lx, ly = lam_grad(code, p, x, y)
    vv = vx * vx + vy * vy
    dot = lx * vx + ly * vy
    return vv * lx - 2.0 * dot * vx, vv * ly - 2.0 * dot * vy


@njit(cache=True)
def rk4_step(code, p, x, y, vx, vy, h):
    k1x, k1y = vx, vy
    a1x, a1y = _accel(code, p, x, y, vx, vy)
    x2 = x + 0.5 * h * k1x
    y2 = y + 0.5 * h * k1y
    k2x = vx + 0.5 * h * a1x
    k2y = vy + 0.5 * h * a1y
    a2x, a2y = _accel(code, p, x2, y2, k2x, k2y)
    x3 = x + 0.5 * h * k2x
    y3 = y + 0.5 * h * k2y
    k3x = vx + 0.5 * h * a2x
    k3y = vy + 0.5 * h * a2y
    a3x, a3y = _accel(code, p, x3, y3, k3x, k3y)
    x4 = x + h * k3x
    y4 = y + h * k3y
    k4x = vx + h * a3x
    k4y = vy + h * a3y
    a4x, a4y = _accel(code, p, x4, y4, k4x, k4y)
    c = h / 6.0
    return (x + c * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
            y + c * (k1y + 2.0 * k2y + 2.0 * k3y + k4y),
            vx + c * (a1x + 2.0 * a2x + 2.0 * a3x + a4x),
            vy + c * (a1y + 2.0 * a2y + 2.0 * a3y + a4y))


@njit(cache=True)
def _rhs6(code, p, s):
    out = np.empty(6)
    l, lx, ly, lxx, lxy, lyy = lam_hess(code, p, s[0], s[1])
    vx, vy = s[2], s[3]
    vv = vx * vx + vy * vy
    dot = lx * vx + ly * vy
    kappa = -math.exp(-2.0 * l) * (lxx + lyy)
    out[0] = vx
    out[1] = vy
    out[2] = vv * lx - 2.0 * dot * vx
    out[3] = vv * ly - 2.0 * dot * vy
    out[4] = s[5]
    out[5] = -kappa * s[4]
    return out


@njit(cache=True)
def rk4_step6(code, p, s, h):
    """RK4 for geodesic + scalar Jacobi state (x, y, vx, vy, b, bdot)."""
    k1 = _rhs6(code, p, s)
    k2 = _rhs6(code, p, s + 0.5 * h * k1)
    k3 = _rhs6(code, p, s + 0.5 * h * k2)
    k4 = _rhs6(code, p, s + h * k3)
    return s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@njit(cache=True)
def _refine_exit4(code, p, r2, x, y, vx, vy, h, tol):
    # Illinois false position on g(tau) = |x(tau)|^2 - R^2 over [0, h].
    a = 0.0
    b = h
    ga = min(x * x + y * y - r2, 0.0)
    xb, yb, _, _ = rk4_step(code, p, x, y, vx, vy, h)
    gb = xb * xb + yb * yb - r2
    side = 0
    tau = b
    for _ in range(100):
        den = gb - ga
        tau = 0.5 * (a + b) if den <= 0.0 else (a * gb - b * ga) / den
        xt, yt, _, _ = rk4_step(code, p, x, y, vx, vy, tau)
        gt = xt * xt + yt * yt - r2
        if abs(gt) <= tol * r2 or (b - a) <= 1e-14 * h:
            break
        if gt > 0.0:
            b = tau
            gb = gt
            if side == -1:
                ga *= 0.5
            side = -1
        else:
            a = tau
            ga = gt
            if side == 1:
                gb *= 0.5
            side = 1
    return tau


@njit(cache=True)
def trace_exit(code, p, rad, x, y, vx, vy, h, cap):
    """Fly forward until the boundary circle; returns (tau, x, y, vx, vy, status)."""
    r2 = rad * rad
    t = 0.0
    while t < cap:
        xn, yn, vxn, vyn = rk4_step(code, p, x, y, vx, vy, h)
        if xn * xn + yn * yn > r2 and xn * vxn + yn * vyn > 0.0:
            tau = _refine_exit4(code, p, r2, x, y, vx, vy, h, 1e-13)
            xe, ye, vxe, vye = rk4_step(code, p, x, y, vx, vy, tau)
            return t + tau, xe, ye, vxe, vye, OK
        x, y, vx, vy = xn, yn, vxn, vyn
        t += h
    return t, x, y, vx, vy, TRAPPED


@njit(parallel=True, cache=True)
def batch_trace_exit(code, p, rad, xs, ys, vxs, vys, h, cap):
    n = xs.shape[0]
    out = np.empty((n, 5))
    status = np.empty(n, dtype=np.int64)
    for i in prange(n):
        t, xe, ye, vxe, vye, st = trace_exit(code, p, rad, xs[i], ys[i],
                                             vxs[i], vys[i], h, cap)
        out[i, 0] = t
        out[i, 1] = xe
        out[i, 2] = ye
        out[i, 3] = vxe
        out[i, 4] = vye
        status[i] = st
    return out, status


@njit(cache=True)
def _refine_exit6(code, p, r2, s, h, tol):
    # bisection on the combined state, as the path sampler wants it
    a = 0.0
    b = h
    for _ in range(200):
        mid = 0.5 * (a + b)
        sm = rk4_step6(code, p, s, mid)
        g = sm[0] * sm[0] + sm[1] * sm[1] - r2
        if abs(g) <= tol * r2 and g <= 0.0:
            return mid
        if g > 0.0:
            b = mid
        else:
            a = mid
        if b - a <= 1e-15 * h:
            break
    return 0.5 * (a + b)


@njit(cache=True)
def sweep6(code, p, rad, s0, h, cap, maxn):
    """Integrate (geodesic, Jacobi) forward from s0 until exit.

    Returns (times, states, count, status); the last sample sits on the
    boundary after a refined partial step.
    """
    r2 = rad * rad
    ts = np.empty(maxn)
    st = np.empty((maxn, 6))
    ts[0] = 0.0
    st[0] = s0
    s = s0.copy()
    t = 0.0
    k = 1
    while t < cap and k < maxn:
        sn = rk4_step6(code, p, s, h)
        if sn[0] * sn[0] + sn[1] * sn[1] > r2 and sn[0] * sn[2] + sn[1] * sn[3] > 0.0:
            tau = _refine_exit6(code, p, r2, s, h, 1e-12)
            if tau > 1e-12 * h:
                ts[k] = t + tau
                st[k] = rk4_step6(code, p, s, tau)
                k += 1
            return ts, st, k, OK
        s = sn
        t += h
        ts[k] = t
        st[k] = s
        k += 1
    return ts, st, k, TRAPPED


@njit(cache=True)
def _bspline_w(t):
    t2 = t * t
    t3 = t2 * t
    w0 = (1.0 - t) ** 3 / 6.0
    w1 = (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0
    w2 = (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0
    w3 = t3 / 6.0
    return w0, w1, w2, w3


@njit(cache=True)
def _active(act, block, x0, hx, x, y):
    i = int(math.floor((x - x0) / hx)) // block
    j = int(math.floor((y - x0) / hx)) // block
    nb = act.shape[0]
    if i < 0 or j < 0 or i >= nb or j >= nb:
        return False
    return act[i, j] != 0


@njit(cache=True)
def _integrand(coef, pad, x0, hx, act, block, m, binom, x, y, vx, vy, out):
    # out[f] = sum_k binom[k] vx^k vy^(m-k) S_fk(x, y) for each field f
    nf = coef.shape[0]
    for f in range(nf):
        out[f] = 0.0
    if not _active(act, block, x0, hx, x, y):
        return
    ux = (x - x0) / hx
    uy = (y - x0) / hx
    i = int(math.floor(ux))
    j = int(math.floor(uy))
    wx = _bspline_w(ux - i)
    wy = _bspline_w(uy - j)
    i0 = i - 1 + pad
    j0 = j - 1 + pad
    # monomials vx^k vy^(m-k)
    pw = np.empty(m + 1)
    a = 1.0
    for k in range(m + 1):
        pw[k] = a
        a *= vx
    b = 1.0
    for k in range(m, -1, -1):
        pw[k] *= b * binom[k]
        b *= vy
    for f in range(nf):
        tot = 0.0
        for k in range(m + 1):
            acc = 0.0
            for aa in range(4):
                c = coef[f, k, i0 + aa]
                acc += wx[aa] * (wy[0] * c[j0] + wy[1] * c[j0 + 1]
                                 + wy[2] * c[j0 + 2] + wy[3] * c[j0 + 3])
            tot += pw[k] * acc
        out[f] = tot


@njit(cache=True)
def _hermite(x0, v0, x1, v1, dt, s):
    s2 = s * s
    s3 = s2 * s
    h00 = 2.0 * s3 - 3.0 * s2 + 1.0
    h10 = s3 - 2.0 * s2 + s
    h01 = -2.0 * s3 + 3.0 * s2
    h11 = s3 - s2
    d00 = 6.0 * s2 - 6.0 * s
    d10 = 3.0 * s2 - 4.0 * s + 1.0
    d01 = -6.0 * s2 + 6.0 * s
    d11 = 3.0 * s2 - 2.0 * s
    pos = h00 * x0 + h10 * dt * v0 + h01 * x1 + h11 * dt * v1
    vel = (d00 * x0 + d10 * dt * v0 + d01 * x1 + d11 * dt * v1) / dt
    return pos, vel


@njit(cache=True)
def _ray_integral(code, p, rad, x, y, vx, vy, nsteps, h, nsub, cap,
                  coef, pad, x0g, hx, act, block, m, binom, res, prev, cur):
    r2 = rad * rad
    nf = coef.shape[0]
    for f in range(nf):
        res[f] = 0.0
    _integrand(coef, pad, x0g, hx, act, block, m, binom, x, y, vx, vy, prev)
    t = 0.0
    k = 0
    while t < cap:
        if nsteps >= 0 and k >= nsteps:
            return OK
        xn, yn, vxn, vyn = rk4_step(code, p, x, y, vx, vy, h)
        dt = h
        last = False
        if xn * xn + yn * yn > r2 and xn * vxn + yn * vyn > 0.0:
            dt = _refine_exit4(code, p, r2, x, y, vx, vy, h, 1e-13)
            if dt <= 1e-12 * h:
                return OK
            xn, yn, vxn, vyn = rk4_step(code, p, x, y, vx, vy, dt)
            last = True
        ds = dt / nsub
        if not (_active(act, block, x0g, hx, x, y) or _active(act, block, x0g, hx, xn, yn)):
            # whole step away from the support: integrand is zero at both ends
            for f in range(nf):
                prev[f] = 0.0
            if last:
                return OK
            x, y, vx, vy = xn, yn, vxn, vyn
            t += h
            k += 1
            continue
        for q in range(1, nsub + 1):
            s = q / nsub
            if q == nsub:
                px, py, qx, qy = xn, yn, vxn, vyn
            else:
                px, qx = _hermite(x, vx, xn, vxn, dt, s)
                py, qy = _hermite(y, vy, yn, vyn, dt, s)
            _integrand(coef, pad, x0g, hx, act, block, m, binom, px, py, qx, qy, cur)
            for f in range(nf):
                res[f] += 0.5 * ds * (prev[f] + cur[f])
                prev[f] = cur[f]
        if last:
            return OK
        x, y, vx, vy = xn, yn, vxn, vyn
        t += h
        k += 1
    return TRAPPED


@njit(parallel=True, cache=True)
def batch_ray_integrals(code, p, rad, starts, nsteps, h, nsub, cap,
                        coef, pad, x0g, hx, act, block, m, binom):
    """Integrals of contracted fields along rays.

    starts: (nrays, 4) coordinate states; nsteps: per-ray step budget
    (-1 means run to the boundary).  coef: (nfields, m+1, N, N) padded
    B-spline coefficients.  Returns (values (nrays, nfields), status).
    """
    n = starts.shape[0]
    nf = coef.shape[0]
    out = np.zeros((n, nf))
    status = np.zeros(n, dtype=np.int64)
    for i in prange(n):
        res = np.empty(nf)
        prev = np.empty(nf)
        cur = np.empty(nf)
        status[i] = _ray_integral(code, p, rad, starts[i, 0], starts[i, 1],
                                  starts[i, 2], starts[i, 3], nsteps[i], h, nsub,
                                  cap, coef, pad, x0g, hx, act, block, m, binom,
                                  res, prev, cur)
        for f in range(nf):
            out[i, f] = res[f]
    return out, status


@njit(parallel=True, cache=True)
def batch_region_spans(code, p, rad, starts, h, cap, cx, cy, rr):
    """For each ray, the state one step before it first comes within rr of
    (cx, cy) and the number of steps until it has left that disc for good.

    Returns (states (n,4), nsteps (n,), hit flag (n,)).
    """
    n = starts.shape[0]
    r2 = rad * rad
    pre = np.zeros((n, 4))
    nst = np.zeros(n, dtype=np.int64)
    hit = np.zeros(n, dtype=np.int64)
    rr2 = rr * rr
    for i in prange(n):
        x, y, vx, vy = starts[i, 0], starts[i, 1], starts[i, 2], starts[i, 3]
        px, py, pvx, pvy = x, y, vx, vy
        t = 0.0
        k = 0
        first = -1
        lastk = -1
        while t < cap:
            d2 = (x - cx) ** 2 + (y - cy) ** 2
            if d2 <= rr2:
                if first < 0:
                    first = k
                    pre[i, 0] = px
                    pre[i, 1] = py
                    pre[i, 2] = pvx
                    pre[i, 3] = pvy
                lastk = k
            xn, yn, vxn, vyn = rk4_step(code, p, x, y, vx, vy, h)
            if xn * xn + yn * yn > r2 and xn * vxn + yn * vyn > 0.0:
                break
            px, py, pvx, pvy = x, y, vx, vy
            x, y, vx, vy = xn, yn, vxn, vyn
            t += h
            k += 1
        if first >= 0:
            hit[i] = 1
            start = max(first - 1, 0)
            if first == 0:
                pre[i, 0] = starts[i, 0]
                pre[i, 1] = starts[i, 1]
                pre[i, 2] = starts[i, 2]
                pre[i, 3] = starts[i, 3]
            nst[i] = lastk + 2 - start
    return pre, nst, hit


@njit(parallel=True, cache=True)
def sino_lookup(coef, pad, dz, nz, w0, dw, nw, zq, wq, valid):
    """Cubic B-spline lookup on a (z periodic, w) grid; zero outside w range."""
    n = zq.shape[0]
    out = np.zeros(n)
    wmax = w0 + (nw - 1) * dw
    for q in prange(n):
        if valid[q] == 0:
            continue
        w = wq[q]
        if w < w0 or w > wmax:
            continue
        uz = zq[q] / dz
        uw = (w - w0) / dw
        i = int(math.floor(uz))
        j = int(math.floor(uw))
        wa = _bspline_w(uz - i)
        wb = _bspline_w(uw - j)
        acc = 0.0
        for a in range(4):
            ia = (i - 1 + a) % nz
            row = 0.0
            for b in range(4):
                row += wb[b] * coef[ia, j - 1 + b + pad]
            acc += wa[a] * row
        out[q] = acc
    return out


@njit(parallel=True, cache=True)
def field_lookup(coef, pad, x0g, hx, xs, ys):
    """Cubic B-spline evaluation of padded coefficient planes (nc, N, N)."""
    n = xs.shape[0]
    nc = coef.shape[0]
    out = np.zeros((nc, n))
    for q in prange(n):
        ux = (xs[q] - x0g) / hx
        uy = (ys[q] - x0g) / hx
        i = int(math.floor(ux))
        j = int(math.floor(uy))
        wx = _bspline_w(ux - i)
        wy = _bspline_w(uy - j)
        for c in range(nc):
            acc = 0.0
            for a in range(4):
                row = 0.0
                for b in range(4):
                    row += wy[b] * coef[c, i - 1 + a + pad, j - 1 + b + pad]
                acc += wx[a] * row
            out[c, q] = acc
    return out


@njit(cache=True)
def flow_fixed(code, p, x, y, vx, vy, T, n):
    """Geodesic state after time T using n equal RK4 steps (T may be negative)."""
    h = T / n
    for _ in range(n):
        x, y, vx, vy = rk4_step(code, p, x, y, vx, vy, h)
    return x, y, vx, vy
