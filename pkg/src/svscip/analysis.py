"""Numerical oracles: divergence rank, inf-sup constant and extension identities."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .bernstein import dim, div_matrix, interior_pressure_basis, mass_matrix
from .condense import build_dofmap
from .mesh import classify_vertices, is_corner_split, pressure_space_dim
from .solve import sobolev_gram

RANK_RTOL = 1e-9
MAX_DENSE_ROWS = 20_000


class SizeGuardError(ValueError):
    pass


def _divergence_operator(mesh, p):
    """Dense ``(D, Mp, free)``: D maps free velocity dofs to per-element div coefficients."""
    dm = build_dofmap(mesh, p)
    nt, dp = mesh.n_triangles, dim(p - 1)
    if max(nt * dp, dm.n_total) > MAX_DENSE_ROWS:
        raise SizeGuardError("mesh too large for dense rank/eigenvalue computation")
    D = np.zeros((nt * dp, dm.n_total))
    Mp = np.zeros((nt * dp, nt * dp))
    M = mass_matrix(p - 1)
    areas = mesh.areas()
    for t in range(nt):
        rows = slice(t * dp, (t + 1) * dp)
        D[rows, dm.element_gather(t)] = div_matrix(mesh.coords(t), p)
        Mp[rows, rows] = areas[t] * M
    mask = np.ones(dm.n_total, bool)
    mask[dm.dirichlet] = False
    free = np.flatnonzero(mask)
    return D[:, free], Mp, free, dm


def _rank(A, rtol=RANK_RTOL):
    s = np.linalg.svd(A, compute_uv=False)
    if len(s) == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def global_div_rank(mesh, p, rtol=RANK_RTOL):
    """Rank of the pairing ``(div v, m)`` over constrained velocities ``v`` and all
    elementwise degree ``p - 1`` polynomials ``m``."""
    D, Mp, _, _ = _divergence_operator(mesh, p)
    return _rank(Mp @ D, rtol)


def infsup_estimate(mesh, p, seminorm=False, rtol=RANK_RTOL):
    """Discrete inf-sup constant of the divergence pairing between the constrained
    velocity space and its image under ``div``.

    ``beta^2`` is the smallest nonzero eigenvalue of ``D^T Mp D v = mu K v``
    with ``K`` the H1 Gram matrix (or the seminorm Gram when ``seminorm``).
    """
    D, Mp, free, dm = _divergence_operator(mesh, p)
    K = sobolev_gram(dm, seminorm=seminorm)[free][:, free].toarray()
    r = _rank(Mp @ D, rtol)
    if r == 0:
        raise ValueError("divergence operator is zero on this space")
    B = D.T @ Mp @ D
    B = 0.5 * (B + B.T)
    mu = sla.eigh(B, K, eigvals_only=True)
    beta2 = mu[len(mu) - r]
    return float(np.sqrt(max(beta2, 0.0)))


# --------------------------------------------------------------------------
# element identities

def interior_nullspace(blocks, rtol=RANK_RTOL):
    """Orthonormal basis of the interior bubbles ``z`` with ``G_I z = 0``, as coefficient columns."""
    G = blocks.G_I
    _, s, vt = np.linalg.svd(G)
    r = int(np.sum(s > rtol * s[0])) if len(s) else 0
    return vt[r:].T


@dataclass
class IdentityResiduals:
    saddle_rcond: float = np.inf
    defining_S: float = 0.0
    defining_T: float = 0.0
    div_orthogonality: float = 0.0
    nullspace_orthogonality: float = 0.0
    adjoint_div_orthogonality: float = 0.0
    adjoint_nullspace_orthogonality: float = 0.0
    idempotence: float = 0.0
    projector_consistency: float = 0.0
    divergence_identity: float = 0.0
    aform_identity: float = 0.0

    def merge(self, other):
        for k, v in vars(other).items():
            if k == "saddle_rcond":
                self.saddle_rcond = min(self.saddle_rcond, v)
            else:
                setattr(self, k, max(getattr(self, k), v))


def _rel(x, scale):
    return float(np.linalg.norm(x) / max(scale, np.finfo(float).tiny))


def _correction(element, u):
    """Interior correction ``c`` with ``u + c`` the S-extension of ``u``'s boundary part."""
    b = element.blocks
    rhs = np.concatenate([-(b.E @ u)[b.I], -(b.G @ u)])
    return element.saddle.solve(rhs)[: element.saddle.n_velocity]


def extension_identity_check(element, trials=50, rng=None):
    """Maximum residuals of the extension-operator identities over random trials."""
    rng = np.random.default_rng(rng)
    b = element.blocks
    E, G, H = b.E, b.G, b.H
    S, T = element.S, element.T
    p = b.p
    n2 = E.shape[0]
    nv = element.saddle.n_velocity
    Mp = mass_matrix(p - 1, b.area)
    # L2-orthogonal projection onto the interior pressure span, in Mp-orthonormal form
    Lc = np.linalg.cholesky(Mp)
    Qp, _ = np.linalg.qr(Lc.T @ interior_pressure_basis(p).P)
    Z = interior_nullspace(b)
    res = IdentityResiduals(saddle_rcond=element.saddle.rcond)
    Enorm = np.linalg.norm(E, 2)
    Gnorm = np.linalg.norm(G, 2)

    # defining identities of S and T
    K = np.zeros((nv + G.shape[0], nv + G.shape[0]))
    K[:nv, :nv] = b.E_II
    K[:nv, nv:] = b.G_I.T
    K[nv:, :nv] = b.G_I
    lu = element.saddle
    XS = lu.solve(np.vstack([b.E_IB, b.G_B]))
    XT = lu.solve(np.vstack([b.E_BI.T, b.G_B]), trans=1)
    rS = K @ np.vstack([S, -XS[nv:]]) + np.vstack([b.E_IB, b.G_B])
    rT = K.T @ np.vstack([T, -XT[nv:]]) + np.vstack([b.E_BI.T, b.G_B])
    scale = np.linalg.norm(K, 2) * max(np.linalg.norm(S, 2), np.linalg.norm(T, 2), 1.0)
    res.defining_S = _rel(rS, scale)
    res.defining_T = _rel(rT, scale)

    for _ in range(trials):
        uB = rng.standard_normal(len(b.B))
        vB = rng.standard_normal(len(b.B))
        su, sv = element.extend(uB), element.extend(vB)
        tu, tv = element.extend_adjoint(uB), element.extend_adjoint(vB)
        nsu, ntu = np.linalg.norm(su), np.linalg.norm(tu)

        res.div_orthogonality = max(res.div_orthogonality, _rel(G @ su, Gnorm * nsu))
        res.adjoint_div_orthogonality = max(res.adjoint_div_orthogonality, _rel(G @ tu, Gnorm * ntu))
        if Z.shape[1]:
            zf = np.zeros((n2, Z.shape[1]))
            zf[b.I] = Z
            res.nullspace_orthogonality = max(res.nullspace_orthogonality,
                                              _rel(zf.T @ E @ su, Enorm * nsu))
            res.adjoint_nullspace_orthogonality = max(res.adjoint_nullspace_orthogonality,
                                                      _rel(tu @ E @ zf, Enorm * ntu))

        # projector on full vectors and its idempotence
        u = rng.standard_normal(n2)
        Su = u.copy()
        Su[b.I] += _correction(element, u)
        res.projector_consistency = max(res.projector_consistency,
                                        _rel(Su - element.extend(u[b.B]), np.linalg.norm(Su)))
        c2 = _correction(element, Su)
        res.idempotence = max(res.idempotence, _rel(c2, np.linalg.norm(Su)))

        # div(S u) equals div u minus its L2 projection onto interior pressures
        d = Lc.T @ (H @ u)
        perp = d - Qp @ (Qp.T @ d)
        res.divergence_identity = max(res.divergence_identity,
                                      _rel(Lc.T @ (H @ Su) - perp, np.linalg.norm(d)))

        # a(Su, Sv) = a(Su, S'v) = a(S'u, S'v)
        a1 = sv @ E @ su
        a2 = tv @ E @ su
        a3 = tv @ E @ tu
        scale = Enorm * max(nsu, ntu) * max(np.linalg.norm(sv), np.linalg.norm(tv))
        res.aform_identity = max(res.aform_identity,
                                 abs(a1 - a2) / scale, abs(a2 - a3) / scale)
    return res


# --------------------------------------------------------------------------
# report

SKIPPED = "skipped"


@dataclass
class DiagnosticsReport:
    n_vertices: int
    n_triangles: int
    n_edges: int
    p: int
    singular_interior: list
    singular_dirichlet: list
    corner_split: bool
    corner_offenders: list
    predicted_dim: int
    div_rank: object = SKIPPED
    infsup: object = SKIPPED
    identity: Optional[IdentityResiduals] = None
    notes: list = field(default_factory=list)

    def items(self):
        out = [
            ("n_vertices", self.n_vertices),
            ("n_triangles", self.n_triangles),
            ("n_edges", self.n_edges),
            ("p", self.p),
            ("singular_interior_vertices", " ".join(map(str, self.singular_interior)) or "none"),
            ("singular_dirichlet_vertices", " ".join(map(str, self.singular_dirichlet)) or "none"),
            ("corner_split", str(self.corner_split).lower()),
            ("corner_offenders", " ".join(map(str, self.corner_offenders)) or "none"),
            ("pressure_space_dim", self.predicted_dim),
            ("global_div_rank", self.div_rank),
            ("rank_matches_dim", SKIPPED if self.div_rank == SKIPPED
             else str(self.div_rank == self.predicted_dim).lower()),
            ("infsup_beta", self.infsup if isinstance(self.infsup, str) else f"{self.infsup:.6e}"),
        ]
        if self.identity is None:
            out.append(("extension_identities", SKIPPED))
        else:
            for k, v in vars(self.identity).items():
                out.append((f"identity_{k}", f"{v:.3e}"))
        for i, note in enumerate(self.notes):
            out.append((f"note_{i}", note))
        return out

    def to_keyvalue(self):
        return "".join(f"{k}={v}\n" for k, v in self.items())

    def to_text(self):
        width = max(len(k) for k, _ in self.items())
        lines = ["Mesh and discretisation diagnostics", ""]
        lines += [f"  {k.ljust(width)}  {v}" for k, v in self.items()]
        return "\n".join(lines) + "\n"


def diagnostics(mesh, p, elements=None, trials=10, rng=0, dense=True):
    cls = classify_vertices(mesh)
    ok, bad = is_corner_split(mesh, cls)
    rep = DiagnosticsReport(
        mesh.n_vertices, mesh.n_triangles, mesh.n_edges, p,
        list(cls.singular_interior), list(cls.singular_dirichlet), ok, list(bad),
        pressure_space_dim(mesh, p, cls))
    rep.notes.append("additional mesh regularity conditions from the stability "
                     "theory are not checked")
    if dense:
        try:
            rep.div_rank = global_div_rank(mesh, p)
            rep.infsup = infsup_estimate(mesh, p)
        except SizeGuardError as exc:
            rep.notes.append(f"dense oracles skipped: {exc}")
    if elements:
        acc = IdentityResiduals()
        for t, ce in enumerate(elements):
            acc.merge(extension_identity_check(ce, trials, rng=(rng, t)))
        rep.identity = acc
    return rep
