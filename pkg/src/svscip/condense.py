"""Degree-of-freedom numbering and static condensation of element interiors.

Global velocity numbering puts all element-boundary dofs first (component 0,
then component 1), followed by one contiguous block of interior dofs per
element.  Boundary scalar dofs are numbered vertex-first; the ``p - 1`` dofs
on edge ``e`` occupy ``n_vertices + e (p - 1) + (m - 1)`` where ``m`` is the
Bernstein exponent of the edge endpoint with the smaller vertex id.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgWarning, lapack, lu_factor, lu_solve

from .bernstein import local_layout
from .mesh import DIRICHLET


class SaddleSingularError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class DofMap:
    mesh: object
    p: int
    n_boundary_scalar: int
    n_interior_scalar: int   # per element
    scalar_boundary: np.ndarray  # (T, 3p) global scalar ids in local boundary order
    dirichlet_scalar: np.ndarray  # sorted scalar ids on Dirichlet edges, endpoints included

    @property
    def n_boundary(self):
        return 2 * self.n_boundary_scalar

    @property
    def n_interior(self):
        return 2 * self.n_interior_scalar * self.mesh.n_triangles

    @property
    def n_total(self):
        return self.n_boundary + self.n_interior

    @property
    def dirichlet(self):
        """Vector boundary dofs constrained by Dirichlet data."""
        d = self.dirichlet_scalar
        return np.concatenate([d, d + self.n_boundary_scalar])

    @property
    def free_boundary(self):
        mask = np.ones(self.n_boundary, bool)
        mask[self.dirichlet] = False
        return np.flatnonzero(mask)

    def boundary_gather(self, t):
        """Global vector ids of element ``t``'s boundary dofs, local B order."""
        s = self.scalar_boundary[t]
        return np.concatenate([s, s + self.n_boundary_scalar])

    def interior_gather(self, t):
        ni = 2 * self.n_interior_scalar
        return self.n_boundary + t * ni + np.arange(ni)

    def element_gather(self, t):
        """Global ids in the local vector ordering ``[comp 0 | comp 1]``."""
        lay = local_layout(self.p)
        out = np.empty(2 * lay.n, dtype=np.int64)
        out[lay.vec_boundary] = self.boundary_gather(t)
        out[lay.vec_interior] = self.interior_gather(t)
        return out

    def element_coeffs(self, t, u):
        """Local vector coefficients of element ``t`` from a full global vector."""
        return u[self.element_gather(t)]


def build_dofmap(mesh, p):
    if p < 4:
        raise ValueError("p must be >= 4")
    lay = local_layout(p)
    nV = mesh.n_vertices
    nBs = nV + (p - 1) * mesh.n_edges
    scal = np.empty((mesh.n_triangles, 3 * p), dtype=np.int64)
    for t, tri in enumerate(mesh.triangles):
        ids = [int(v) for v in tri]
        for k in range(3):
            e = int(mesh.tri_edges[t, k])
            i, j = ids[(k + 1) % 3], ids[(k + 2) % 3]
            for r in range(p - 1):
                m = p - 1 - r  # exponent of local vertex (k+1)%3
                mg = m if i < j else p - m
                scal[t, 3 + k * (p - 1) + r] = nV + e * (p - 1) + (mg - 1)
        scal[t, :3] = ids
    # local_layout.boundary is [vertex 0..2, edge 0, edge 1, edge 2]
    assert len(lay.boundary) == 3 * p
    dset = set()
    for e in mesh.boundary_edge_ids(DIRICHLET):
        a, b = (int(x) for x in mesh.edges[e])
        dset.update((a, b))
        dset.update(nV + e * (p - 1) + np.arange(p - 1))
    dir_ids = np.array(sorted(int(x) for x in dset), dtype=np.int64)
    return DofMap(mesh, p, nBs, (p - 1) * (p - 2) // 2, scal, dir_ids)


# --------------------------------------------------------------------------
# element condensation

@dataclass(frozen=True, eq=False)
class InteriorSaddle:
    """LU factors of ``[[E_II, G_I^T], [G_I, 0]]`` for one element."""

    lu: tuple
    n_velocity: int
    n_pressure: int
    rcond: float

    def solve(self, rhs, trans=0):
        return lu_solve(self.lu, rhs, trans=trans)


def interior_saddle(blocks, element=None, rcond_min=1e-14):
    E_II = blocks.E_II
    G_I = blocks.G_I
    nv, npr = E_II.shape[0], G_I.shape[0]
    K = np.zeros((nv + npr, nv + npr))
    K[:nv, :nv] = E_II
    K[:nv, nv:] = G_I.T
    K[nv:, :nv] = G_I
    anorm = np.abs(K).sum(axis=0).max()
    with warnings.catch_warnings():
        # singularity is reported below from the condition estimate
        warnings.simplefilter("ignore", LinAlgWarning)
        lu = lu_factor(K, check_finite=True)
    rcond, info = lapack.dgecon(lu[0], anorm, norm="1")
    if info != 0 or not np.isfinite(rcond) or rcond < rcond_min:
        where = "" if element is None else f" on element {element}"
        raise SaddleSingularError(
            f"interior saddle matrix is numerically singular{where} "
            f"(condition estimate {1.0 / max(rcond, 1e-300):.3e})")
    return InteriorSaddle(lu, nv, npr, float(rcond))


def compute_ST(blocks, saddle):
    """Interior extension maps ``S`` (primal) and ``T`` (adjoint)."""
    nv = saddle.n_velocity
    rhs_S = np.vstack([blocks.E_IB, blocks.G_B])
    rhs_T = np.vstack([blocks.E_BI.T, blocks.G_B])
    S = -saddle.solve(rhs_S)[:nv]
    T = -saddle.solve(rhs_T, trans=1)[:nv]
    return S, T


@dataclass(frozen=True, eq=False)
class CondensedElement:
    blocks: object
    saddle: InteriorSaddle
    S: np.ndarray
    T: np.ndarray
    E_tilde: np.ndarray
    C_tilde: np.ndarray
    L_tilde: np.ndarray
    lam: float

    @property
    def A_tilde(self):
        return self.E_tilde + self.lam * self.C_tilde

    def extend(self, u_B):
        """Local vector coefficients of the S-extension of boundary values."""
        b = self.blocks
        out = np.zeros(b.E.shape[0])
        out[b.B] = u_B
        out[b.I] = self.S @ u_B
        return out

    def extend_adjoint(self, u_B):
        b = self.blocks
        out = np.zeros(b.E.shape[0])
        out[b.B] = u_B
        out[b.I] = self.T @ u_B
        return out

    def local_solve(self, u_B, L_I=None):
        """Interior velocity and pressure for given boundary values.

        Returns ``(u_I, q)`` where ``u_I`` is the total interior velocity
        (so ``u_I - S u_B`` is an interior bubble field) and ``q`` holds the interior
        pressure coefficients.
        """
        b = self.blocks
        if L_I is None:
            L_I = b.L_I
        rhs = np.concatenate([L_I - b.E_IB @ u_B, -b.G_B @ u_B])
        sol = self.saddle.solve(rhs)
        nv = self.saddle.n_velocity
        return sol[:nv], sol[nv:]


def condense_element(blocks, S, T, lam, saddle=None):
    if lam < 0:
        raise ValueError("penalty must be nonnegative")
    b = blocks

    def tilde(M):
        BB = M[np.ix_(b.B, b.B)]
        BI = M[np.ix_(b.B, b.I)]
        IB = M[np.ix_(b.I, b.B)]
        II = M[np.ix_(b.I, b.I)]
        return BB + BI @ S + T.T @ IB + T.T @ II @ S

    Et = tilde(b.E)
    Ct = tilde(b.C)
    Lt = b.L_B + T.T @ b.L_I
    return CondensedElement(b, saddle, S, T, Et, Ct, Lt, float(lam))


def condense(blocks, lam, element=None):
    saddle = interior_saddle(blocks, element)
    S, T = compute_ST(blocks, saddle)
    return condense_element(blocks, S, T, lam, saddle)


# --------------------------------------------------------------------------
# global assembly

@dataclass(frozen=True, eq=False)
class GlobalSystem:
    """Assembled matrices over a set of global dofs (before Dirichlet elimination)."""

    A: sp.csr_matrix
    C: sp.csr_matrix
    L: np.ndarray
    free: np.ndarray
    fixed: np.ndarray

    @property
    def A_free(self):
        return self.A[self.free][:, self.free].tocsc()

    def rhs(self, u_fixed, w):
        """Right-hand side on free dofs for given Dirichlet values and accumulator ``w``."""
        r = self.L + self.C @ w
        r = r[self.free] - self.A[self.free][:, self.fixed] @ u_fixed
        return r


def _scatter(n, gathers, mats):
    rows, cols, vals = [], [], []
    for g, M in zip(gathers, mats):
        rows.append(np.repeat(g, len(g)))
        cols.append(np.tile(g, len(g)))
        vals.append(M.ravel())
    M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    M.sum_duplicates()
    return M.tocsr()


def _scatter_vec(n, gathers, vecs):
    out = np.zeros(n)
    for g, v in zip(gathers, vecs):
        np.add.at(out, g, v)
    return out


def assemble_global(dofmap, elements):
    """Boundary-only system from condensed elements (merged in element order)."""
    n = dofmap.n_boundary
    gathers = [dofmap.boundary_gather(t) for t in range(len(elements))]
    A = _scatter(n, gathers, [ce.A_tilde for ce in elements])
    C = _scatter(n, gathers, [ce.C_tilde for ce in elements])
    L = _scatter_vec(n, gathers, [ce.L_tilde for ce in elements])
    return GlobalSystem(A, C, L, dofmap.free_boundary, dofmap.dirichlet)


def assemble_full(dofmap, blocks_list, lam):
    """Uncondensed system over boundary and interior dofs."""
    n = dofmap.n_total
    gathers = [dofmap.element_gather(t) for t in range(len(blocks_list))]
    A = _scatter(n, gathers, [b.E + lam * b.C for b in blocks_list])
    C = _scatter(n, gathers, [b.C for b in blocks_list])
    L = _scatter_vec(n, gathers, [b.L for b in blocks_list])
    mask = np.ones(n, bool)
    mask[dofmap.dirichlet] = False
    return GlobalSystem(A, C, L, np.flatnonzero(mask), dofmap.dirichlet)
