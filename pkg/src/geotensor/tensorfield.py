"""Symmetric m-tensor fields on a Cartesian grid over the disc.

Component k of a rank-m field holds f_{1..1 2..2} with k ones,
so a field is an array of shape (m+1, n, n), indexed [k, ix, iy].
"""

import json
from dataclasses import dataclass
from functools import cached_property, lru_cache
from math import comb
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import spline_filter

from . import _kernels as K
from .errors import DomainError, InvalidInputError

MAX_RANK = 4
SPLINE_PAD = 2


@dataclass(frozen=True)
class Grid:
    n: int
    radius: float

    def __post_init__(self):
        if self.n < 9:
            raise InvalidInputError("grid needs at least 9 nodes per side")

    @property
    def spacing(self):
        return 2.0 * self.radius / (self.n - 1)

    @cached_property
    def axis(self):
        return np.linspace(-self.radius, self.radius, self.n)

    @cached_property
    def coords(self):
        return np.meshgrid(self.axis, self.axis, indexing="ij")

    @cached_property
    def r(self):
        x, y = self.coords
        return np.hypot(x, y)

    @cached_property
    def mask(self):
        return self.cell_area > 0

    @cached_property
    def cell_area(self):
        """Area of each node's cell [x-h/2, x+h/2]^2 that lies inside the disc."""
        return _cell_areas(self.n, self.radius)

    def interior(self, margin_nodes=0):
        return self.r <= self.radius - margin_nodes * self.spacing

    def describe(self):
        return {"n": self.n, "radius": self.radius, "spacing": self.spacing}


def _cell_areas(n, R):
    h = 2.0 * R / (n - 1)
    ax = np.linspace(-R, R, n)
    x, y = np.meshgrid(ax, ax, indexing="ij")
    near = np.maximum(np.abs(x) - h / 2, 0) ** 2 + np.maximum(np.abs(y) - h / 2, 0) ** 2
    far = (np.abs(x) + h / 2) ** 2 + (np.abs(y) + h / 2) ** 2
    area = np.where(far <= R * R, h * h, 0.0)
    cut = (near < R * R) & (far > R * R)
    gx, gw = np.polynomial.legendre.leggauss(24)
    for i, j in zip(*np.nonzero(cut)):
        xa, xb = x[i, j] - h / 2, x[i, j] + h / 2
        ya, yb = y[i, j] - h / 2, y[i, j] + h / 2
        # split at the circle's vertical tangents and the chord kinks
        brk = [xa, xb]
        for yc in (ya, yb):
            if abs(yc) < R:
                xc = np.sqrt(R * R - yc * yc)
                brk += [xc, -xc]
        brk = np.unique(np.clip(brk, xa, xb))
        tot = 0.0
        for a, b in zip(brk[:-1], brk[1:]):
            if b - a <= 0:
                continue
            xs = 0.5 * (b - a) * gx + 0.5 * (a + b)
            half = np.sqrt(np.maximum(R * R - xs * xs, 0.0))
            chord = np.clip(np.minimum(yb, half) - np.maximum(ya, -half), 0, None)
            tot += 0.5 * (b - a) * np.dot(gw, chord)
        area[i, j] = tot
    return area


@dataclass
class SymTensorField:
    rank: int
    grid: Grid
    comps: np.ndarray

    def __post_init__(self):
        if not 0 <= self.rank <= MAX_RANK:
            raise InvalidInputError(f"rank {self.rank} outside 0..{MAX_RANK}")
        c = np.asarray(self.comps)
        if c.shape != (self.rank + 1, self.grid.n, self.grid.n):
            raise InvalidInputError(f"component array has shape {c.shape}")
        self.comps = c

    @classmethod
    def zeros(cls, grid, rank, dtype=float):
        return cls(rank, grid, np.zeros((rank + 1, grid.n, grid.n), dtype=dtype))

    @classmethod
    def from_function(cls, grid, rank, func):
        """func(x, y) returns the m+1 component arrays (k = number of ones)."""
        x, y = grid.coords
        vals = func(x, y)
        comps = np.stack([np.broadcast_to(np.asarray(v), x.shape) for v in vals])
        return cls(rank, grid, comps.copy())

    @classmethod
    def basis(cls, grid, rank, ones, values):
        f = cls.zeros(grid, rank, dtype=np.asarray(values).dtype)
        f.comps[ones] = values
        return f

    @property
    def is_complex(self):
        return np.iscomplexobj(self.comps)

    def copy(self):
        return SymTensorField(self.rank, self.grid, self.comps.copy())

    def __add__(self, other):
        _same(self, other)
        return SymTensorField(self.rank, self.grid, self.comps + other.comps)

    def __sub__(self, other):
        _same(self, other)
        return SymTensorField(self.rank, self.grid, self.comps - other.comps)

    def __mul__(self, a):
        return SymTensorField(self.rank, self.grid, self.comps * a)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def masked(self, mask=None):
        mask = self.grid.mask if mask is None else mask
        return SymTensorField(self.rank, self.grid, self.comps * mask)

    def real(self):
        return SymTensorField(self.rank, self.grid, self.comps.real.copy())

    def imag(self):
        return SymTensorField(self.rank, self.grid, self.comps.imag.copy())

    @cached_property
    def spline(self):
        return spline_coefficients(self.comps)

    def full_component(self, index):
        """Value array of f_{i1..im} for an explicit index tuple of 1s and 2s."""
        return self.comps[sum(1 for i in index if i == 1)]


def _same(a, b):
    if a.rank != b.rank or a.grid != b.grid:
        raise InvalidInputError("fields differ in rank or grid")


def spline_coefficients(planes):
    """Padded cubic B-spline coefficients, real and imaginary parts split."""
    planes = np.asarray(planes)
    if np.iscomplexobj(planes):
        planes = np.concatenate([planes.real, planes.imag])
    out = [np.pad(spline_filter(p, order=3, mode="mirror"), SPLINE_PAD, mode="reflect")
           for p in planes]
    return np.ascontiguousarray(np.stack(out))


def pair(f, point, v):
    """f_{i1..im} v^{i1}..v^{im} at a point, by cubic spline interpolation."""
    x = np.asarray(point, dtype=float)
    if np.hypot(*x) > f.grid.radius * (1 + 1e-12):
        raise DomainError("pairing point outside the grid mask")
    vals = K.field_lookup(f.spline, SPLINE_PAD, -f.grid.radius, f.grid.spacing,
                          np.array([x[0]]), np.array([x[1]]))[:, 0]
    m = f.rank
    if f.is_complex:
        vals = vals[: m + 1] + 1j * vals[m + 1:]
    return sum(comb(m, k) * v[0] ** k * v[1] ** (m - k) * vals[k] for k in range(m + 1))


def pair_nodes(f, vx, vy):
    """Nodewise contraction with a vector field given by arrays vx, vy."""
    m = f.rank
    return sum(comb(m, k) * vx ** k * vy ** (m - k) * f.comps[k] for k in range(m + 1))


def quadrature_weights(grid, metric):
    """dV_g weights: cell area inside the disc times e^{2 lam}."""
    x, y = grid.coords
    return grid.cell_area * np.exp(2 * metric.exponent(x, y))


def contraction_weights(grid, metric, rank):
    """Per-component weights w_k with <<u, v>> = sum_k sum_nodes w_k u_k v_k."""
    x, y = grid.coords
    lam = metric.exponent(x, y)
    base = grid.cell_area * np.exp((2 - 2 * rank) * lam)
    return np.stack([comb(rank, k) * base for k in range(rank + 1)])


def l2_inner(u, v, metric, conjugate=False):
    _same(u, v)
    w = contraction_weights(u.grid, metric, u.rank)
    a = np.conj(u.comps) if conjugate else u.comps
    return np.sum(w * a * v.comps)


def l2_norm(u, metric):
    return float(np.sqrt(abs(l2_inner(u, u, metric, conjugate=True).real)))


# -- finite differences -----------------------------------------------------


def _diff_matrix(n, h):
    """4th-order centered first derivative; values beyond the square read as 0.

    The disc touches the square only at four nodes, so the truncated rows
    only affect nodes already inside the two-node boundary layer.
    """
    c = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / (12 * h)
    return sp.diags([c[0], c[1], c[3], c[4]], [-2, -1, 1, 2], shape=(n, n), format="csr")


@lru_cache(maxsize=16)
def _grad_mats(n, h):
    d = _diff_matrix(n, h)
    eye = sp.identity(n, format="csr")
    return sp.kron(d, eye, format="csr"), sp.kron(eye, d, format="csr")


@lru_cache(maxsize=16)
def derivative_matrix(metric, grid, rank):
    """Sparse matrix of d: rank-(m-1) components (stacked) -> rank-m components.

    (du)_J = (1/m) sum over slots p of [d_{J_p} u_{J minus p}
              - sum_{q != p} Gamma^r_{J_p J_q} u_{(J minus p) with J_q -> r}].
    """
    m = rank
    if m < 1:
        raise InvalidInputError("symmetrized derivative needs output rank >= 1")
    n = grid.n
    N = n * n
    dx, dy = _grad_mats(n, grid.spacing)
    x, y = grid.coords
    _, lx, ly, *_ = metric.exponent_derivatives(x, y)
    lam = np.stack([np.ravel(lx), np.ravel(ly)])  # lam[a] = d_a lam

    def gamma(r, j, a):
        return (float(r == j) * lam[a] + float(r == a) * lam[j] - float(j == a) * lam[r])

    blocks = [[None] * m for _ in range(m + 1)]

    def add(k, kin, mat):
        blocks[k][kin] = mat if blocks[k][kin] is None else blocks[k][kin] + mat

    for k in range(m + 1):
        for j, mult in ((0, k), (1, m - k)):
            if mult == 0:
                continue
            kp = k - 1 if j == 0 else k  # ones left in the rest tuple
            add(k, kp, (mult / m) * (dx if j == 0 else dy))
            # Christoffel corrections over the m-1 remaining slots
            for a, cnt in ((0, kp), (1, m - 1 - kp)):
                if cnt == 0:
                    continue
                for r in (0, 1):
                    kin = kp - (a == 0) + (r == 0)
                    coeff = gamma(r, j, a)
                    if not np.any(coeff):
                        continue
                    add(k, kin, sp.diags(-(mult * cnt / m) * coeff, format="csr"))
    for k in range(m + 1):
        for c in range(m):
            if blocks[k][c] is None:
                blocks[k][c] = sp.csr_matrix((N, N))
    return sp.bmat(blocks, format="csr")


def _weights_vec(metric, grid, rank):
    return np.ravel(contraction_weights(grid, metric, rank))


def sym_derivative(u, metric):
    D = derivative_matrix(metric, u.grid, u.rank + 1)
    n = u.grid.n
    out = D @ u.comps.reshape(u.rank + 1, -1).ravel()
    return SymTensorField(u.rank + 1, u.grid, out.reshape(u.rank + 2, n, n))


def divergence(f, metric):
    """Discrete formal adjoint of -d with respect to the g-weighted inner product.

    Values are defined on nodes with nonzero quadrature weight; nodes within
    two spacings of the boundary see the truncated stencil and are not
    accurate approximations of the continuum divergence.
    """
    m = f.rank
    if m < 1:
        raise InvalidInputError("divergence needs rank >= 1")
    n = f.grid.n
    D = derivative_matrix(metric, f.grid, m)
    wm = _weights_vec(metric, f.grid, m)
    wl = _weights_vec(metric, f.grid, m - 1)
    y = -(D.T @ (wm * f.comps.reshape(-1)))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(wl > 0, y / np.where(wl > 0, wl, 1.0), 0.0)
    return SymTensorField(m - 1, f.grid, out.reshape(m, n, n))


# -- constructions ------------------------------------------------------------


def smooth_cutoff(r, r0, r1):
    """C-infinity step: 1 for r <= r0, 0 for r >= r1."""
    r = np.asarray(r, dtype=float)
    t = np.clip((r - r0) / (r1 - r0), 0.0, 1.0)

    def psi(s):
        return np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)

    a = psi(1 - t)
    return a / (a + psi(t))


def random_field(grid, rank, rng, bumps=6, width=0.18, support=0.75, complex_=False):
    """Smooth random field built from continuous Gaussian bumps.

    The definition lives in the continuum (centers, widths in units of R),
    so sampling it on different grids gives the same function.
    """
    R = grid.radius
    centers = rng.uniform(-0.5, 0.5, size=(bumps, 2)) * R
    amps = rng.normal(size=(bumps, rank + 1))
    if complex_:
        amps = amps + 1j * rng.normal(size=(bumps, rank + 1))
    x, y = grid.coords
    cut = smooth_cutoff(grid.r, support * R, (support + 0.15) * R)
    comps = np.zeros((rank + 1, grid.n, grid.n), dtype=complex if complex_ else float)
    s2 = (width * R) ** 2
    for c, a in zip(centers, amps):
        g = np.exp(-((x - c[0]) ** 2 + (y - c[1]) ** 2) / (2 * s2))
        comps += a[:, None, None] * g
    return SymTensorField(rank, grid, comps * cut)


def rotate90(f):
    """Push-forward of f under the counterclockwise quarter turn."""
    m = f.rank
    # f'(x) = f(Q^{-1} x) with Q^{-1}(x, y) = (y, -x); f'_j = (-1)^j f_{m-j}
    out = np.empty_like(f.comps)
    for j in range(m + 1):
        src = f.comps[m - j]
        # node (i, l) has coordinates (a_i, a_l); Q^{-1} -> (a_l, -a_i) = node (l, n-1-i)
        out[j] = (-1) ** j * src[:, ::-1].T
    return SymTensorField(m, f.grid, out)


COMPONENT_ORDER = "k = number of 1-indices; component k is f_{1^k 2^(m-k)}"


def save_field(f, path):
    """Write <path>.bin (little-endian float64, complex interleaved) and <path>.json."""
    path = Path(path)
    dtype = "complex128" if f.is_complex else "float64"
    arr = np.ascontiguousarray(f.comps, dtype="<c16" if f.is_complex else "<f8")
    path.with_suffix(".bin").write_bytes(arr.tobytes())
    header = {"kind": "symmetric_tensor_field", "rank": f.rank, "n": f.grid.n,
              "radius": f.grid.radius, "dtype": dtype, "shape": list(arr.shape),
              "component_order": COMPONENT_ORDER}
    path.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True))
    return [path.with_suffix(".bin"), path.with_suffix(".json")]


def load_field(path):
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    if header.get("kind") != "symmetric_tensor_field":
        raise InvalidInputError(f"{path} is not a field file")
    dt = "<c16" if header["dtype"] == "complex128" else "<f8"
    arr = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype=dt)
    arr = arr.reshape(header["shape"]).astype(complex if dt == "<c16" else float)
    return SymTensorField(header["rank"], Grid(header["n"], header["radius"]), arr)


def slice_rows(f, axis=0, index=None):
    """Rows (coordinate, component_0, ..., component_m) along a grid line."""
    n = f.grid.n
    index = n // 2 if index is None else index
    line = f.comps[:, :, index] if axis == 0 else f.comps[:, index, :]
    return np.column_stack([f.grid.axis, line.T])
