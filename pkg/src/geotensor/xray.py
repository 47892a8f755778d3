"""Geodesic ray transform of symmetric tensors, its adjoint and the normal operator.

Data live on the inward fan: boundary coordinate z (g-arclength) times the
angle w from the inward normal.  Boundary pairings carry the Santalo
weight cos w, so that <I f, h> equals <<f, I* h>> on the disc.
"""

import json
from dataclasses import dataclass, field as dc_field
from functools import cached_property
from math import comb
from pathlib import Path

import numpy as np
from scipy.ndimage import binary_dilation, spline_filter1d

from . import _kernels as K
from .errors import InvalidInputError, TrappedRayError
from .tensorfield import SPLINE_PAD, Grid, SymTensorField


@dataclass(frozen=True)
class FanSpec:
    n_z: int = 360
    n_w: int = 359
    eps_w: float = 0.03

    def __post_init__(self):
        if self.n_z < 4 or self.n_w < 3:
            raise InvalidInputError("fan too coarse")
        if not 0 < self.eps_w < np.pi / 2:
            raise InvalidInputError("grazing margin must lie in (0, pi/2)")

    @property
    def w(self):
        a = np.pi / 2 - self.eps_w
        return np.linspace(-a, a, self.n_w)

    @property
    def dw(self):
        return (np.pi - 2 * self.eps_w) / (self.n_w - 1)


@dataclass(frozen=True)
class RaySettings:
    """Ray integration controls; lengths in units of the disc radius."""
    step: float = 1e-2
    substeps: int = 4
    cap: float = 50.0
    directions: int = 256
    block: int = 8
    block_margin: int = 3


@dataclass
class Sinogram:
    rank: int
    z: np.ndarray
    w: np.ndarray
    values: np.ndarray
    length: float
    eps_w: float
    meta: dict = dc_field(default_factory=dict)

    @property
    def dz(self):
        return self.length / self.z.size

    @property
    def dw(self):
        return self.w[1] - self.w[0]

    @property
    def weights(self):
        """Santalo quadrature weights dz * dw_trapezoid * cos w."""
        tw = np.full(self.w.size, self.dw)
        tw[0] = tw[-1] = 0.5 * self.dw
        return self.dz * np.outer(np.ones(self.z.size), tw * np.cos(self.w))

    @property
    def is_complex(self):
        return np.iscomplexobj(self.values)

    def like(self, values):
        return Sinogram(self.rank, self.z, self.w, values, self.length, self.eps_w, dict(self.meta))

    def __add__(self, other):
        return self.like(self.values + other.values)

    def __sub__(self, other):
        return self.like(self.values - other.values)

    def __mul__(self, a):
        return self.like(self.values * a)

    __rmul__ = __mul__

    @cached_property
    def spline(self):
        v = self.values
        planes = [v.real, v.imag] if np.iscomplexobj(v) else [v]
        out = []
        for p in planes:
            c = spline_filter1d(np.asarray(p, dtype=float), order=3, axis=0, mode="grid-wrap")
            c = spline_filter1d(c, order=3, axis=1, mode="mirror")
            out.append(np.pad(c, ((0, 0), (SPLINE_PAD, SPLINE_PAD)), mode="reflect"))
        return out


def boundary_inner(h1, h2, conjugate=False):
    a = np.conj(h1.values) if conjugate else h1.values
    return np.sum(h1.weights * a * h2.values)


class XRay:
    """Ray transform machinery for one metric, grid, fan and ray settings."""

    def __init__(self, metric, grid, fan=None, settings=None):
        if abs(grid.radius - metric.radius) > 1e-12 * metric.radius:
            raise InvalidInputError("grid and metric disagree on the disc radius")
        self.metric = metric
        self.grid = grid
        self.fan = fan or FanSpec()
        self.settings = settings or RaySettings()
        self._exit_caches = {}
        self._regions = {}

    # -- fan geometry -------------------------------------------------------

    @property
    def step(self):
        return self.settings.step * self.metric.radius

    @property
    def cap(self):
        return self.settings.cap * self.metric.radius

    @cached_property
    def z(self):
        L = self.metric.boundary.length
        return np.arange(self.fan.n_z) * L / self.fan.n_z

    @cached_property
    def fan_states(self):
        zz, ww = np.meshgrid(self.z, self.fan.w, indexing="ij")
        p, v = self.metric.boundary.inward_direction(zz.ravel(), ww.ravel())
        return np.ascontiguousarray(np.column_stack([p, v]))

    def empty_sinogram(self, rank, dtype=float):
        return Sinogram(rank, self.z, self.fan.w,
                        np.zeros((self.fan.n_z, self.fan.n_w), dtype=dtype),
                        self.metric.boundary.length, self.fan.eps_w,
                        {"metric": self.metric.describe()})

    # -- forward --------------------------------------------------------------

    def _active_blocks(self, comps):
        b = self.settings.block
        n = self.grid.n
        nb = -(-n // b)
        nz = np.any(np.abs(comps) > 0, axis=0)
        padded = np.zeros((nb * b, nb * b), dtype=bool)
        padded[:n, :n] = nz
        act = padded.reshape(nb, b, nb, b).any(axis=(1, 3))
        if self.settings.block_margin > 0 and act.any():
            act = binary_dilation(act, structure=np.ones((3, 3), bool),
                                  iterations=self.settings.block_margin)
        return act.astype(np.uint8)

    def region_rays(self, center, radius):
        """Fan rays meeting the coordinate disc (center, radius) and their spans."""
        key = (float(center[0]), float(center[1]), float(radius))
        if key not in self._regions:
            pre, nst, hit = K.batch_region_spans(
                self.metric.code, self.metric.kernel_params, self.metric.radius,
                self.fan_states, self.step, self.cap, key[0], key[1],
                key[2] + 2 * self.step)
            idx = np.flatnonzero(hit)
            self._regions[key] = (idx, np.ascontiguousarray(pre[idx]), nst[idx].copy())
        return self._regions[key]

    def ray_integrals(self, fields, starts, nsteps):
        """Integrals of several same-rank fields along given rays -> (nrays, nfields)."""
        m = fields[0].rank
        cplx = any(f.is_complex for f in fields)
        coefs = []
        comps_all = []
        for f in fields:
            c = f.comps.astype(complex) if cplx else f.comps
            coefs.append(f.spline if not cplx or f.is_complex else
                         SymTensorField(m, f.grid, c).spline)
            comps_all.append(f.comps)
        # stack as (nfields_real, m+1, N, N)
        planes = []
        for c in coefs:
            if cplx:
                planes.append(c[: m + 1])
                planes.append(c[m + 1:])
            else:
                planes.append(c)
        coef = np.ascontiguousarray(np.stack(planes))
        act = self._active_blocks(np.concatenate(comps_all))
        binom = np.array([comb(m, k) for k in range(m + 1)], dtype=float)
        out, status = K.batch_ray_integrals(
            self.metric.code, self.metric.kernel_params, self.metric.radius,
            starts, nsteps, self.step, self.settings.substeps, self.cap,
            coef, SPLINE_PAD, -self.grid.radius, self.grid.spacing, act,
            self.settings.block, m, binom)
        if np.any(status != K.OK):
            raise TrappedRayError("fan ray exceeded the trapping cap",
                                  count=int(np.sum(status != K.OK)))
        if cplx:
            out = out[:, 0::2] + 1j * out[:, 1::2]
        return out

    def forward(self, f, region=None):
        """I_m f on the fan.  region=(center, radius) restricts the work to rays
        through a coordinate disc known to contain the support of f."""
        return self.forward_many([f], region)[0]

    def forward_many(self, fields, region=None):
        if region is None:
            starts = self.fan_states
            nsteps = np.full(starts.shape[0], -1, dtype=np.int64)
            idx = None
        else:
            idx, starts, nsteps = self.region_rays(*region)
        vals = self.ray_integrals(fields, starts, nsteps)
        out = []
        for j, f in enumerate(fields):
            s = self.empty_sinogram(f.rank, dtype=vals.dtype)
            if idx is None:
                s.values = vals[:, j].reshape(self.fan.n_z, self.fan.n_w)
            else:
                flat = s.values.reshape(-1)
                flat[idx] = vals[:, j]
            out.append(s)
        return out

    # -- adjoint ------------------------------------------------------------

    def exit_cache(self, nodes=None):
        """(z, w, valid) of F(x, v) for node set and n_v directions."""
        if nodes is None:
            nodes = self.grid.r < self.metric.radius * (1 - 1e-12)
        key = nodes.tobytes()
        if key in self._exit_caches:
            return self._exit_caches[key]
        nodes = nodes & (self.grid.r < self.metric.radius * (1 - 1e-12))
        idx = np.flatnonzero(nodes)
        x, y = self.grid.coords
        px, py = x.ravel()[idx], y.ravel()[idx]
        nv = self.settings.directions
        th = 2 * np.pi * np.arange(nv) / nv
        e = np.exp(-self.metric.exponent(px, py))
        vx = -(e[:, None] * np.cos(th)[None, :])
        vy = -(e[:, None] * np.sin(th)[None, :])
        xs = np.repeat(px, nv)
        ys = np.repeat(py, nv)
        res, status = K.batch_trace_exit(self.metric.code, self.metric.kernel_params,
                                         self.metric.radius, xs, ys, vx.ravel(), vy.ravel(),
                                         self.step, self.cap)
        zq, wq = self.metric.boundary.coordinates(res[:, 1:3], -res[:, 3:5])
        valid = (status == K.OK).astype(np.uint8)
        cache = ExitCache(idx, th, zq.reshape(-1, nv), wq.reshape(-1, nv),
                          valid.reshape(-1, nv), int(np.sum(status != K.OK)))
        self._exit_caches[key] = cache
        return cache

    def backproject(self, h, nodes=None):
        """I_m* h on grid nodes (all interior nodes by default)."""
        cache = self.exit_cache(nodes)
        vals = self.lookup(h, cache)
        return self._assemble(vals, cache, h.rank)

    def lookup(self, h, cache):
        """h(F(x, v)) for every cached (node, direction)."""
        nz, nw = h.values.shape
        planes = h.spline
        zq = cache.z.ravel()
        wq = cache.w.ravel()
        val = cache.valid.ravel()
        out = [K.sino_lookup(c, SPLINE_PAD, h.dz, nz, h.w[0], h.dw, nw, zq, wq, val)
               for c in planes]
        v = out[0] if len(out) == 1 else out[0] + 1j * out[1]
        return v.reshape(cache.z.shape)

    def _assemble(self, vals, cache, m):
        n = self.grid.n
        nv = cache.theta.size
        c, s = np.cos(cache.theta), np.sin(cache.theta)
        x, y = self.grid.coords
        lam = self.metric.exponent(x.ravel()[cache.nodes], y.ravel()[cache.nodes])
        scale = np.exp(m * lam) * (2 * np.pi / nv)
        comps = np.zeros((m + 1, n * n), dtype=vals.dtype)
        for k in range(m + 1):
            comps[k, cache.nodes] = scale * (vals @ (c ** k * s ** (m - k)))
        return SymTensorField(m, self.grid, comps.reshape(m + 1, n, n))

    def normal(self, f, nodes=None, region=None):
        return self.backproject(self.forward(f, region), nodes)

    def exit_map(self, point, v):
        """F(x, v): boundary data (z, w) of the inward ray that passes (x, v)."""
        res, status = K.batch_trace_exit(self.metric.code, self.metric.kernel_params,
                                         self.metric.radius, np.array([point[0]]),
                                         np.array([point[1]]), np.array([-v[0]]),
                                         np.array([-v[1]]), self.step, self.cap)
        if status[0] != K.OK:
            raise TrappedRayError("backward ray did not leave the disc")
        z, w = self.metric.boundary.coordinates(res[0, 1:3], -res[0, 3:5])
        return float(z), float(w), float(res[0, 0])


@dataclass
class ExitCache:
    nodes: np.ndarray
    theta: np.ndarray
    z: np.ndarray
    w: np.ndarray
    valid: np.ndarray
    trapped: int


def save_sinogram(s, path):
    path = Path(path)
    cplx = s.is_complex
    arr = np.ascontiguousarray(s.values, dtype="<c16" if cplx else "<f8")
    path.with_suffix(".bin").write_bytes(arr.tobytes())
    header = {"kind": "sinogram", "rank": s.rank, "n_z": int(s.z.size), "n_w": int(s.w.size),
              "length": s.length, "eps_w": s.eps_w,
              "dtype": "complex128" if cplx else "float64", "shape": list(arr.shape),
              "layout": "row-major [z, w]; w from the inward normal, counterclockwise positive",
              "meta": s.meta}
    path.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True))
    return [path.with_suffix(".bin"), path.with_suffix(".json")]


def load_sinogram(path):
    path = Path(path)
    hd = json.loads(path.with_suffix(".json").read_text())
    if hd.get("kind") != "sinogram":
        raise InvalidInputError(f"{path} is not a sinogram file")
    dt = "<c16" if hd["dtype"] == "complex128" else "<f8"
    v = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype=dt).reshape(hd["shape"])
    v = v.astype(complex if dt == "<c16" else float)
    fan = FanSpec(hd["n_z"], hd["n_w"], hd["eps_w"])
    z = np.arange(fan.n_z) * hd["length"] / fan.n_z
    return Sinogram(hd["rank"], z, fan.w, v, hd["length"], hd["eps_w"], hd.get("meta", {}))


def potential_check(xray, u, metric):
    """||I(du)|| relative to ||du|| measured on the fan (both Santalo-weighted)."""
    from .tensorfield import l2_norm, sym_derivative
    du = sym_derivative(u, metric)
    s = xray.forward(du)
    return float(np.sqrt(abs(boundary_inner(s, s, True)))), l2_norm(du, metric)
