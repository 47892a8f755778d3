"""Solenoidal/potential splitting f = sf + du with u = 0 on the boundary.

The potential solves the discrete system D_U^T W D_U u = D_U^T W f, where
D is the symmetrized-derivative matrix, W the g-weighted contraction
weights and U the unknowns (nodes at least two spacings inside the
circle; u is pinned to zero elsewhere).  With the divergence taken as the
exact adjoint of d this is delta d u = delta f, and the split is
orthogonal in the discrete inner product.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from .errors import InvalidInputError, SolverError
from .tensorfield import (SymTensorField, contraction_weights, derivative_matrix,
                          l2_inner, l2_norm, sym_derivative, _grad_mats)

UNKNOWN_MARGIN = 2


@dataclass
class PotentialSystem:
    D: sp.csr_matrix
    DU: sp.csr_matrix
    A: sp.csr_matrix
    weights: np.ndarray
    unknowns: np.ndarray
    diag: np.ndarray


@lru_cache(maxsize=8)
def potential_system(metric, grid, rank):
    if rank < 1:
        raise InvalidInputError("potential part needs rank >= 1")
    D = derivative_matrix(metric, grid, rank)
    inside = np.ravel(grid.interior(UNKNOWN_MARGIN))
    unknowns = np.flatnonzero(np.tile(inside, rank))
    DU = D[:, unknowns].tocsc().tocsr()
    wts = np.ravel(contraction_weights(grid, metric, rank))
    A = (DU.T @ sp.diags(wts) @ DU).tocsr()
    return PotentialSystem(D, DU, A, wts, unknowns, A.diagonal())


def solve_potential(f, metric, rtol=1e-8, maxiter=20000, precondition=False):
    """Potential u (rank m-1, zero Dirichlet data) with delta d u = delta f."""
    m = f.rank
    sysm = potential_system(metric, f.grid, m)
    n = f.grid.n
    parts = [f.comps.real, f.comps.imag] if f.is_complex else [f.comps]
    sols = []
    M = None
    if precondition:
        inv = 1.0 / np.where(sysm.diag > 0, sysm.diag, 1.0)
        M = sp.diags(inv)
    for comp in parts:
        rhs = sysm.DU.T @ (sysm.weights * comp.reshape(-1))
        full = np.zeros(m * n * n)
        if np.any(rhs):
            x, info = cg(sysm.A, rhs, rtol=rtol, maxiter=maxiter, M=M)
            res = float(np.linalg.norm(sysm.A @ x - rhs) / np.linalg.norm(rhs))
            if info != 0:
                raise SolverError("conjugate gradient did not converge", residual=res,
                                  iterations=maxiter)
            full[sysm.unknowns] = x
        sols.append(full.reshape(m, n, n))
    u = sols[0] if len(sols) == 1 else sols[0] + 1j * sols[1]
    return SymTensorField(m - 1, f.grid, u)


def project_solenoidal(f, metric, **kw):
    """(sf, u) with f = sf + du."""
    if f.rank == 0:
        return f.copy(), None
    u = solve_potential(f, metric, **kw)
    return f - sym_derivative(u, metric), u


def _h1(field, metric):
    if field is None:
        return 0.0
    n = field.grid.n
    dx, dy = _grad_mats(n, field.grid.spacing)
    w = contraction_weights(field.grid, metric, field.rank)
    tot = l2_norm(field, metric) ** 2
    for k in range(field.rank + 1):
        c = field.comps[k].reshape(-1)
        for d in (dx, dy):
            g = (d @ c).reshape(n, n)
            tot += float(np.sum(w[k] * np.abs(g) ** 2))
    return float(np.sqrt(tot))


def stability_report(f, metric, **kw):
    sf, u = project_solenoidal(f, metric, **kw)
    du = f - sf
    nf = l2_norm(f, metric)
    return {
        "rank": f.rank,
        "norm_f": nf,
        "norm_sf": l2_norm(sf, metric),
        "norm_du": l2_norm(du, metric),
        "norm_u": l2_norm(u, metric) if u is not None else 0.0,
        "h1_f": _h1(f, metric),
        "h1_sf": _h1(sf, metric),
        "h1_u": _h1(u, metric),
        "ratio_sf": l2_norm(sf, metric) / nf if nf > 0 else 0.0,
        "orthogonality": float(abs(l2_inner(sf, du, metric, conjugate=True))),
    }


def interior_divergence_norm(f, metric, margin=UNKNOWN_MARGIN):
    """||delta f|| over the unknown nodes, where the discrete identity holds."""
    from .tensorfield import divergence
    d = divergence(f, metric)
    mask = f.grid.interior(margin)
    w = contraction_weights(f.grid, metric, d.rank)
    return float(np.sqrt(np.sum(w * mask * np.abs(d.comps) ** 2)))
