"""Bernstein-Bezier polynomials on triangles and element matrix assembly.

A degree ``k`` polynomial on a triangle ``K`` is written as
``sum_alpha c_alpha B^k_alpha`` with

    B^k_alpha = k! / (alpha_1! alpha_2! alpha_3!) lambda_1^alpha_1 lambda_2^alpha_2 lambda_3^alpha_3,

``|alpha| = k`` and ``lambda_i`` the barycentric coordinates of ``K``.

Vector fields use the layout ``[component 0 coefficients, component 1
coefficients]``.  Matrices follow the convention ``a(u, v) = v^T E u``:
rows index test functions, columns index trial functions.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache
from math import comb, factorial

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


# --------------------------------------------------------------------------
# multi-indices

@dataclass(frozen=True, eq=False)
class MultiIndexSet:
    """Multi-indices ``alpha`` of three nonnegative integers summing to ``k``.

    ``nonvertex`` selects those with every ``alpha_i < k``, the indices of
    Bernstein polynomials vanishing at the three vertices; ``interior``
    selects ``alpha_i > 0`` (element bubbles).
    """

    degree: int
    indices: np.ndarray
    lookup: dict
    nonvertex: np.ndarray
    interior: np.ndarray
    multinomial: np.ndarray

    def __len__(self):
        return len(self.indices)

    def position(self, alpha):
        return self.lookup[tuple(int(a) for a in alpha)]


@lru_cache(maxsize=None)
def multi_indices(k):
    if k < 0:
        raise ValueError("degree must be nonnegative")
    idx = [(a, b, k - a - b) for a in range(k, -1, -1) for b in range(k - a, -1, -1)]
    arr = np.array(idx, dtype=np.int64).reshape(-1, 3)
    arr.setflags(write=False)
    lookup = {a: i for i, a in enumerate(idx)}
    nonvertex = np.all(arr < k, axis=1) if k > 0 else np.zeros(1, bool)
    interior = np.all(arr > 0, axis=1)
    multinom = np.array([factorial(k) / (factorial(a) * factorial(b) * factorial(c)) for a, b, c in idx])
    return MultiIndexSet(k, arr, lookup, nonvertex, interior, multinom)


def dim(k):
    return (k + 1) * (k + 2) // 2


# --------------------------------------------------------------------------
# evaluation

def _as_bary(lam):
    lam = np.asarray(lam, dtype=float)
    single = lam.ndim == 1
    lam = np.atleast_2d(lam)
    if np.any(lam < -1e-12) or np.any(np.abs(lam.sum(axis=1) - 1) > 1e-12):
        raise ValueError("barycentric coordinates must be nonnegative and sum to 1")
    return lam, single


def _eval(k, lam):
    mi = multi_indices(k)
    powers = lam[:, :, None] ** np.arange(k + 1)[None, None, :]  # (q, 3, k+1)
    a = mi.indices
    vals = powers[:, 0, a[:, 0]] * powers[:, 1, a[:, 1]] * powers[:, 2, a[:, 2]]
    return vals * mi.multinomial


def eval_basis(p, lam):
    """Values of all ``B^p_alpha`` at barycentric point(s) ``lam``.

    Returns shape ``(dim(p),)`` for a single point, ``(q, dim(p))`` for
    an array of points.
    """
    lam, single = _as_bary(lam)
    vals = _eval(p, lam)
    return vals[0] if single else vals


def bary_gradients(X):
    """Cartesian gradients of the barycentric coordinates; rows are ``grad lambda_i``."""
    X = np.asarray(X, dtype=float)
    J = np.array([X[1] - X[0], X[2] - X[0]]).T
    det = np.linalg.det(J)
    scale = max(np.ptp(X[:, 0]), np.ptp(X[:, 1])) ** 2
    if abs(det) <= 1e-14 * scale:
        raise ValueError("degenerate triangle")
    Jinv = np.linalg.inv(J)
    g12 = Jinv  # rows: grad lambda_2, grad lambda_3
    return np.vstack([-g12.sum(axis=0), g12])


@lru_cache(maxsize=None)
def derivative_matrices(k):
    """``D[i]`` maps degree-k coefficients to degree-(k-1) coefficients of d/dlambda_i.

    ``dB^k_alpha/dlambda_i = k B^{k-1}_{alpha - e_i}``.
    """
    hi = multi_indices(k)
    lo = multi_indices(k - 1)
    D = np.zeros((3, len(lo), len(hi)))
    for r, beta in enumerate(lo.indices):
        for i in range(3):
            alpha = beta.copy()
            alpha[i] += 1
            D[i, r, hi.position(alpha)] = k
    D.setflags(write=False)
    return D


def _eval_grad(p, lam, G):
    low = _eval(p - 1, lam) if p > 0 else np.zeros((len(lam), 1))
    D = derivative_matrices(p) if p > 0 else np.zeros((3, 1, 1))
    dlam = np.einsum("qr,irn->qin", low, D)  # (q, 3, n): d/dlambda_i
    return np.einsum("qin,id->qnd", dlam, G)


def grad_basis(p, lam, X):
    """Cartesian gradients of all ``B^p_alpha`` on the triangle with vertex rows ``X``."""
    lam, single = _as_bary(lam)
    g = _eval_grad(p, lam, bary_gradients(X))
    return g[0] if single else g


# --------------------------------------------------------------------------
# quadrature

@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Barycentric points and area-normalised weights (summing to 1)."""

    points: np.ndarray
    weights: np.ndarray
    degree: int


@lru_cache(maxsize=None)
def quad_rule(exactness):
    """Collapsed-coordinate Gauss rule exact for polynomials of the given degree."""
    if exactness < 0:
        raise ValueError("exactness must be >= 0")
    if exactness == 0:
        pts = np.full((1, 3), 1.0 / 3.0)
        return QuadratureRule(pts, np.ones(1), 0)
    m = exactness // 2 + 1
    s, ws = roots_legendre(m)
    t, wt = roots_jacobi(m, 1.0, 0.0)  # weight (1 - t) absorbs the Duffy Jacobian
    s = 0.5 * (s + 1.0)
    ws = 0.5 * ws
    t = 0.5 * (t + 1.0)
    wt = wt / 4.0
    # (s, t) in [0,1]^2 -> triangle: x = s (1 - t), y = t
    S, Tt = np.meshgrid(s, t, indexing="ij")
    W = np.outer(ws, wt) * 2.0  # reference area 1/2 -> weights sum to 1
    x = (S * (1 - Tt)).ravel()
    y = Tt.ravel()
    pts = np.stack([1 - x - y, x, y], axis=1)
    w = W.ravel()
    pts.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(pts, w, exactness)


@lru_cache(maxsize=None)
def gauss_line(n):
    """Gauss-Legendre rule on [0, 1] with weights summing to 1."""
    x, w = roots_legendre(n)
    return 0.5 * (x + 1.0), 0.5 * w


# --------------------------------------------------------------------------
# closed-form integrals

@lru_cache(maxsize=None)
def _mass_ref(k, m):
    a = multi_indices(k).indices
    b = multi_indices(m).indices
    num = np.ones((len(a), len(b)))
    for i in range(3):
        s = a[:, i][:, None] + b[:, i][None, :]
        num *= np.vectorize(comb)(s, a[:, i][:, None])
    M = num / comb(k + m, k) * 2.0 / ((k + m + 1) * (k + m + 2))
    M.setflags(write=False)
    return M


def mass_matrix(k, area=1.0, m=None):
    """Exact ``int_K B^k_alpha B^m_beta`` (``m`` defaults to ``k``)."""
    return area * _mass_ref(k, k if m is None else m)


def basis_integral(k, area=1.0):
    """``int_K B^k_alpha = |K| / dim P_k`` for every alpha."""
    return area / dim(k)


# --------------------------------------------------------------------------
# dof layout and pressure basis

@dataclass(frozen=True, eq=False)
class LocalLayout:
    """Partition of local scalar indices into vertex, edge and interior groups.

    ``vertex[i]`` is the index of ``p e_i``.  ``edge[k]`` lists the indices
    on local edge ``k`` (opposite vertex ``k``) ordered by decreasing exponent
    of the edge's first vertex ``(k+1) % 3``.
    """

    p: int
    n: int
    vertex: np.ndarray
    edge: tuple
    boundary: np.ndarray
    interior: np.ndarray
    vec_boundary: np.ndarray
    vec_interior: np.ndarray


@lru_cache(maxsize=None)
def local_layout(p):
    if p < 1:
        raise ValueError("p must be >= 1")
    mi = multi_indices(p)
    n = len(mi)
    vertex = np.array([mi.position(p * np.eye(3, dtype=int)[i]) for i in range(3)])
    edges = []
    for k in range(3):
        i, j = (k + 1) % 3, (k + 2) % 3
        pos = []
        for m in range(p - 1, 0, -1):
            alpha = [0, 0, 0]
            alpha[i] = m
            alpha[j] = p - m
            pos.append(mi.position(alpha))
        edges.append(np.array(pos, dtype=np.int64))
    boundary = np.concatenate([vertex] + edges)
    interior = np.flatnonzero(mi.interior)
    vb = np.concatenate([boundary, boundary + n])
    vi = np.concatenate([interior, interior + n])
    return LocalLayout(p, n, vertex, tuple(edges), boundary, interior, vb, vi)


@dataclass(frozen=True, eq=False)
class PressureBasis:
    """Basis ``B^{p-1}_alpha - B^{p-1}_gamma`` of the interior pressure space.

    ``P`` has one column per basis function holding its degree-(p-1)
    Bernstein coefficients.
    """

    p: int
    anchor: tuple
    alphas: np.ndarray
    P: np.ndarray

    @property
    def size(self):
        return self.P.shape[1]


@lru_cache(maxsize=None)
def interior_pressure_basis(p):
    if p < 4:
        raise ValueError("interior pressure basis requires p >= 4")
    mi = multi_indices(p - 1)
    cand = [tuple(int(a) for a in alpha) for alpha in mi.indices[mi.nonvertex]]
    gamma = min(cand)
    alphas = [a for a in cand if a != gamma]
    P = np.zeros((len(mi), len(alphas)))
    g = mi.position(gamma)
    for col, a in enumerate(alphas):
        P[mi.position(a), col] = 1.0
        P[g, col] = -1.0
    P.setflags(write=False)
    return PressureBasis(p, gamma, np.array(alphas), P)


def pressure_complement(p):
    """Degree-(p-1) coefficient vectors completing the interior pressure basis.

    Vertex functions plus the anchor function ``B^{p-1}_gamma``.
    """
    mi = multi_indices(p - 1)
    pb = interior_pressure_basis(p)
    cols = [mi.position((p - 1) * np.eye(3, dtype=int)[i]) for i in range(3)]
    cols.append(mi.position(pb.anchor))
    Q = np.zeros((len(mi), 4))
    for c, r in enumerate(cols):
        Q[r, c] = 1.0
    return Q


# --------------------------------------------------------------------------
# exact divergence

def div_matrix(X, p):
    """Map velocity coefficients (2n) to degree-(p-1) coefficients of the divergence."""
    G = bary_gradients(X)
    D = derivative_matrices(p)
    Hx = np.einsum("i,irn->rn", G[:, 0], D)
    Hy = np.einsum("i,irn->rn", G[:, 1], D)
    return np.hstack([Hx, Hy])


def div_coeffs(X, p, coeffs):
    return div_matrix(X, p) @ np.asarray(coeffs)


def interpolate_vector(X, p, field):
    """Bernstein coefficients of a polynomial vector field of degree <= p on ``X``.

    Solves the collocation problem at the degree-p lattice points; exact for
    polynomial fields of degree at most p.
    """
    mi = multi_indices(p)
    lam = mi.indices / p
    V = _eval(p, lam)
    xy = lam @ np.asarray(X)
    vals = np.asarray(field(xy[:, 0], xy[:, 1]), dtype=float)
    c = np.linalg.solve(V, vals.T)
    return np.concatenate([c[:, 0], c[:, 1]])


def interpolate_scalar(X, k, fn):
    mi = multi_indices(k)
    lam = mi.indices / max(k, 1)
    if k == 0:
        lam = np.full((1, 3), 1 / 3)
    V = _eval(k, lam)
    xy = lam @ np.asarray(X)
    return np.linalg.solve(V, np.asarray(fn(xy[:, 0], xy[:, 1]), dtype=float))


# --------------------------------------------------------------------------
# element matrices

@dataclass(frozen=True, eq=False)
class ElementBlocks:
    """Element matrices for one triangle.

    ``E`` is the matrix of ``a_K``, ``G`` of ``-(psi, div v)_K`` against the
    interior pressure basis, ``C`` of ``(div u, div v)_K`` and ``L`` the
    load vector of ``(f, v)_K`` plus the traction integral over the
    element's Neumann edges.  The ``*_BB``,
    ``*_BI`` ... properties slice these along the boundary/interior split.
    """

    X: np.ndarray
    p: int
    E: np.ndarray
    G: np.ndarray
    C: np.ndarray
    L: np.ndarray
    H: np.ndarray
    area: float
    layout: LocalLayout

    @property
    def B(self):
        return self.layout.vec_boundary

    @property
    def I(self):  # noqa: E743
        return self.layout.vec_interior

    def _blk(self, M, r, c):
        return M[np.ix_(r, c)]

    @property
    def E_BB(self):
        return self._blk(self.E, self.B, self.B)

    @property
    def E_BI(self):
        return self._blk(self.E, self.B, self.I)

    @property
    def E_IB(self):
        return self._blk(self.E, self.I, self.B)

    @property
    def E_II(self):
        return self._blk(self.E, self.I, self.I)

    @property
    def C_BB(self):
        return self._blk(self.C, self.B, self.B)

    @property
    def C_BI(self):
        return self._blk(self.C, self.B, self.I)

    @property
    def C_IB(self):
        return self._blk(self.C, self.I, self.B)

    @property
    def C_II(self):
        return self._blk(self.C, self.I, self.I)

    @property
    def G_B(self):
        return self.G[:, self.B]

    @property
    def G_I(self):
        return self.G[:, self.I]

    @property
    def L_B(self):
        return self.L[self.B]

    @property
    def L_I(self):
        return self.L[self.I]


class QuadratureOrderWarning(UserWarning):
    pass


def element_blocks(X, p, form, *, source=None, neumann=(), exactness=None):
    """Assemble element matrices on the triangle with vertex rows ``X``.

    ``form`` provides ``kind`` in ``{"stokes", "oseen", "perturbed"}``, ``nu``,
    ``delta``, ``convection`` (callable ``(x, y) -> (2, ...)`` or ``None``) and
    ``convection_polynomial_degree`` (``None`` when not polynomial).
    ``source`` is a callable ``(x, y) -> (2, ...)``.  ``neumann`` lists
    ``(local_edge, traction)`` pairs with ``traction(x, y) -> (2, ...)``.
    """
    if p < 4:
        raise ValueError("element blocks require p >= 4")
    X = np.asarray(X, dtype=float)
    if exactness is not None and form.convection is not None \
            and form.convection_polynomial_degree is None and exactness < 2 * p + 6:
        warnings.warn(f"quadrature exactness {exactness} is insufficient for a "
                      f"non-polynomial convection field (need {2 * p + 6})",
                      QuadratureOrderWarning, stacklevel=2)
    if exactness is None:
        exactness = 2 * p + 2
        if form.convection is not None:
            deg = form.convection_polynomial_degree
            if deg is None:
                exactness = 2 * p + 6
            else:
                exactness = max(exactness, 2 * p - 1 + deg)
        if source is not None:
            exactness = max(exactness, 2 * p + 6)
    rule = quad_rule(exactness)
    lay = local_layout(p)
    n = lay.n
    area = 0.5 * abs(np.linalg.det(np.array([X[1] - X[0], X[2] - X[0]])))
    w = rule.weights * area
    lam = rule.points
    phi = _eval(p, lam)                       # (q, n)
    dphi = _eval_grad(p, lam, bary_gradients(X))  # (q, n, 2)
    xy = lam @ X

    # Dm[a, b][s, t] = int d_a phi_s d_b phi_t
    Dm = np.einsum("q,qsa,qtb->abst", w, dphi, dphi)
    K = Dm[0, 0] + Dm[1, 1]
    E = np.zeros((2 * n, 2 * n))
    visc = np.zeros_like(E)
    for e in range(2):
        for c in range(2):
            blk = Dm[c, e].copy()
            if c == e:
                blk += K
            visc[e * n:(e + 1) * n, c * n:(c + 1) * n] = blk
    # 2 nu (eps u, eps v) = nu (delta_ce K + Dm[c, e])
    E += form.nu * visc
    if form.convection is not None:
        wv = np.asarray(form.convection(xy[:, 0], xy[:, 1]), dtype=float)
        adv = np.einsum("qd,qtd->qt", wv.T, dphi)
        N = np.einsum("q,qs,qt->st", w, phi, adv)
        E[:n, :n] += N
        E[n:, n:] += N
    if form.kind == "perturbed":
        M = np.einsum("q,qs,qt->st", w, phi, phi)
        E *= form.delta
        E[:n, :n] += M
        E[n:, n:] += M

    C = np.zeros_like(E)
    for e in range(2):
        for c in range(2):
            C[e * n:(e + 1) * n, c * n:(c + 1) * n] = Dm[e, c]

    pb = interior_pressure_basis(p)
    psi = _eval(p - 1, lam) @ pb.P            # (q, n_iota)
    Gx = -np.einsum("q,qi,qt->it", w, psi, dphi[:, :, 0])
    Gy = -np.einsum("q,qi,qt->it", w, psi, dphi[:, :, 1])
    Gm = np.hstack([Gx, Gy])

    L = np.zeros(2 * n)
    if source is not None:
        fv = np.asarray(source(xy[:, 0], xy[:, 1]), dtype=float)
        L[:n] += np.einsum("q,qs,q->s", w, phi, fv[0])
        L[n:] += np.einsum("q,qs,q->s", w, phi, fv[1])
    for k, traction in neumann:
        L += edge_load(X, p, k, traction)

    return ElementBlocks(X, p, E, Gm, C, L, div_matrix(X, p), area, lay)


def edge_points(k, t):
    """Barycentric coordinates along local edge ``k`` (from vertex k+1 to k+2)."""
    i, j = (k + 1) % 3, (k + 2) % 3
    lam = np.zeros((len(t), 3))
    lam[:, i] = 1 - t
    lam[:, j] = t
    return lam


def edge_load(X, p, k, traction, npts=None):
    t, wt = gauss_line(npts or p + 8)
    lam = edge_points(k, t)
    i, j = (k + 1) % 3, (k + 2) % 3
    length = np.linalg.norm(X[j] - X[i])
    xy = lam @ X
    gv = np.asarray(traction(xy[:, 0], xy[:, 1]), dtype=float)
    phi = _eval(p, lam)
    w = wt * length
    n = phi.shape[1]
    L = np.zeros(2 * n)
    L[:n] = np.einsum("q,qs,q->s", w, phi, gv[0])
    L[n:] = np.einsum("q,qs,q->s", w, phi, gv[1])
    return L
