"""Iterated penalty drivers: the full-space method and its statically condensed variant.

Both drivers iterate

    a(u^n, v) + lam (div u^n, div v) = L(v) + (div w^n, div v),
    w^{n+1} = w^n - lam u^n,

the full-space method over every velocity dof, the condensed one over the
element-boundary dofs only (interiors follow from local saddle solves once
the loop ends).  The returned pressure is ``div w^{n+1}`` plus the local
interior pressures, which makes the pair exactly consistent with the
momentum equation at the final iterate.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .bernstein import (
    _eval, _eval_grad, bary_gradients, basis_integral, dim, div_matrix, element_blocks,
    interior_pressure_basis, mass_matrix, quad_rule,
)
from .condense import assemble_full, assemble_global, build_dofmap, condense
from .problems import check_problem, dirichlet_lift, error_norms, neumann_terms

log = logging.getLogger(__name__)

IP = "ip"
SCIP = "scip"

CONVERGED = "converged"
MAX_ITERS = "max_iters"
ABORTED = "aborted"


class SolverAbort(RuntimeError):
    pass


@dataclass(frozen=True)
class PenaltyConfig:
    lam: float = 1e3
    div_tol: float = 1e-10
    max_iters: int = 8
    method: str = SCIP
    stall_window: int = 3
    track_errors: bool = True

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("penalty parameter must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.method not in (IP, SCIP):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass
class IterationRecord:
    iter: int
    div_norm: float
    seconds: float
    rel_H1_err: Optional[float] = None
    rel_L2_press_err: Optional[float] = None


@dataclass(eq=False)
class DiscreteSolution:
    """Velocity ``u`` in global numbering plus per-element pressure coefficients.

    ``pressure`` has one row per element holding degree ``p - 1`` Bernstein
    coefficients; ``q_interior`` holds the interior pressure components in
    the interior pressure basis.  ``w`` is the penalty accumulator (boundary
    dofs only for the condensed method).
    """

    mesh: object
    p: int
    dofmap: object
    u: np.ndarray
    pressure: np.ndarray
    q_interior: Optional[np.ndarray] = None
    w: Optional[np.ndarray] = None
    method: str = SCIP
    status: str = CONVERGED
    history: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def u_boundary(self):
        return self.u[: self.dofmap.n_boundary]

    def velocity_coeffs(self, t):
        return self.dofmap.element_coeffs(t, self.u)

    def pressure_coeffs(self, t):
        return self.pressure[t]

    def divergence_norm(self):
        return divergence_norm(self.mesh, self.p, self.dofmap, self.u)

    def evaluate(self, points):
        """Velocity ``(N, 2)`` and pressure ``(N,)`` at physical points."""
        tri, bary = self.mesh.locate(points)
        n = dim(self.p)
        U = np.empty((len(tri), 2))
        Q = np.empty(len(tri))
        for k, (t, lam) in enumerate(zip(tri, bary)):
            c = self.velocity_coeffs(t)
            phi = _eval(self.p, lam[None])[0]
            U[k] = phi @ c[:n], phi @ c[n:]
            Q[k] = _eval(self.p - 1, lam[None])[0] @ self.pressure[t]
        return U, Q


# --------------------------------------------------------------------------
# norms

def divergence_norm(mesh, p, dofmap, u):
    """Exact ``||div u||_{L2}`` from degree ``p - 1`` divergence coefficients."""
    M = mass_matrix(p - 1)
    total = 0.0
    areas = mesh.areas()
    for t in range(mesh.n_triangles):
        X = mesh.coords(t)
        d = div_matrix(X, p) @ dofmap.element_coeffs(t, u)
        total += areas[t] * d @ M @ d
    return float(np.sqrt(max(total, 0.0)))


def _element_gram(X, p, seminorm):
    rule = quad_rule(2 * p)
    area = 0.5 * abs(np.linalg.det(np.array([X[1] - X[0], X[2] - X[0]])))
    dphi = _eval_grad(p, rule.points, bary_gradients(X))
    K = np.einsum("q,qsd,qtd->st", rule.weights * area, dphi, dphi)
    if not seminorm:
        K = K + mass_matrix(p, area)
    Z = np.zeros_like(K)
    return np.block([[K, Z], [Z, K]])


def sobolev_gram(dofmap, seminorm=False):
    """Sparse Gram matrix of the H1 inner product (or seminorm) on global velocity dofs."""
    mesh = dofmap.mesh
    rows, cols, vals = [], [], []
    for t in range(mesh.n_triangles):
        g = dofmap.element_gather(t)
        G = _element_gram(mesh.coords(t), dofmap.p, seminorm)
        rows.append(np.repeat(g, len(g)))
        cols.append(np.tile(g, len(g)))
        vals.append(G.ravel())
    n = dofmap.n_total
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    A.sum_duplicates()
    return A.tocsr()


def pressure_l2(mesh, p, coeffs, zero_mean=True):
    """L2 norm of a piecewise degree ``p - 1`` field given per-element coefficients."""
    M = mass_matrix(p - 1)
    areas = mesh.areas()
    c = np.asarray(coeffs, dtype=float)
    if zero_mean:
        c = c - _mean(mesh, p, c)
    return float(np.sqrt(sum(areas[t] * c[t] @ M @ c[t] for t in range(len(c)))))


def _mean(mesh, p, coeffs):
    areas = mesh.areas()
    total = sum(basis_integral(p - 1, areas[t]) * coeffs[t].sum() for t in range(len(coeffs)))
    return total / areas.sum()


def solution_difference(a, b):
    """Relative H1 velocity and relative L2 pressure differences of two solutions."""
    G = sobolev_gram(a.dofmap)
    du = a.u - b.u
    rel_u = np.sqrt(du @ (G @ du)) / np.sqrt(a.u @ (G @ a.u))
    nq = pressure_l2(a.mesh, a.p, a.pressure)
    rel_q = pressure_l2(a.mesh, a.p, a.pressure - b.pressure) / (nq if nq > 0 else 1.0)
    return float(rel_u), float(rel_q)


# --------------------------------------------------------------------------
# discretisation

@dataclass(eq=False)
class Discretization:
    mesh: object
    p: int
    problem: object
    dofmap: object
    blocks: list
    lift: np.ndarray


def discretize(mesh, p, problem, check=True):
    if p < 4:
        raise ValueError("p must be >= 4")
    if check:
        check_problem(problem, mesh, p)
    dm = build_dofmap(mesh, p)
    blocks = [
        element_blocks(mesh.coords(t), p, problem.form, source=problem.source,
                       neumann=neumann_terms(mesh, problem, t))
        for t in range(mesh.n_triangles)
    ]
    lift = dirichlet_lift(dm, problem.dirichlet)
    return Discretization(mesh, p, problem, dm, blocks, lift)


def _finalize_pressure(mesh, p, P):
    if mesh.all_dirichlet:
        P = P - _mean(mesh, p, P)
    return P


class _StallMonitor:
    def __init__(self, window):
        self.window = window
        self.count = 0
        self.prev = None

    def update(self, value, floor):
        if self.prev is not None and value >= self.prev and value > floor:
            self.count += 1
        else:
            self.count = 0
        self.prev = value
        return self.count >= self.window


def _abort(solution, n):
    msg = (f"divergence did not decrease for {solution.meta['stall_window']} consecutive "
           f"iterations (iteration {n}): lambda too small")
    log.warning(msg)
    solution.status = ABORTED
    solution.meta["abort_reason"] = msg


# --------------------------------------------------------------------------
# full-space iterated penalty

def ip_solve(mesh, p, problem, config=PenaltyConfig(method=IP), disc=None):
    disc = disc or discretize(mesh, p, problem)
    dm, lam = disc.dofmap, config.lam
    t0 = time.perf_counter()
    system = assemble_full(dm, disc.blocks, lam)
    lu = splu(system.A_free)
    n = dm.n_total
    u_fixed = disc.lift[system.fixed]
    w = np.zeros(n)
    H = [_div_map(mesh, p, t) for t in range(mesh.n_triangles)]
    gathers = [dm.element_gather(t) for t in range(mesh.n_triangles)]
    history = []
    monitor = _StallMonitor(config.stall_window)
    sol = DiscreteSolution(mesh, p, dm, np.zeros(n), np.zeros((mesh.n_triangles, dim(p - 1))),
                           method=IP, status=MAX_ITERS, history=history)
    sol.meta.update(system_size=len(system.free), factorizations=1, lam=lam,
                    stall_window=config.stall_window)
    for it in range(config.max_iters):
        u = np.zeros(n)
        u[system.free] = lu.solve(system.rhs(u_fixed, w))
        u[system.fixed] = u_fixed
        w_next = w - lam * u
        div = divergence_norm(mesh, p, dm, u)
        P = np.array([H[t] @ w_next[gathers[t]] for t in range(mesh.n_triangles)])
        sol.u, sol.w = u, w_next
        sol.pressure = _finalize_pressure(mesh, p, P)
        history.append(_record(it, div, t0, sol, problem, config))
        if div <= config.div_tol:
            sol.status = CONVERGED
            break
        if monitor.update(div, 1e-13 * (1 + np.abs(u).max())):
            _abort(sol, it)
            break
        w = w_next
    return sol


def _div_map(mesh, p, t):
    return div_matrix(mesh.coords(t), p)


def _record(it, div, t0, sol, problem, config):
    rec = IterationRecord(it, div, time.perf_counter() - t0)
    if config.track_errors and problem.exact is not None:
        rec.rel_H1_err, rec.rel_L2_press_err = error_norms(sol, problem.exact)
    return rec


# --------------------------------------------------------------------------
# statically condensed iterated penalty

def condense_all(disc, lam):
    return [condense(b, lam, element=t) for t, b in enumerate(disc.blocks)]


def local_interior_solve(element, u_B, load=None):
    """Interior velocity (total, including the extension of ``u_B``) and interior pressure."""
    return element.local_solve(u_B, load)


def _scip_reconstruct(disc, elements, u_B_full, w_B_full, H):
    mesh, p, dm = disc.mesh, disc.p, disc.dofmap
    pb = interior_pressure_basis(p)
    u = np.zeros(dm.n_total)
    u[: dm.n_boundary] = u_B_full
    qI = np.zeros((mesh.n_triangles, pb.size))
    P = np.zeros((mesh.n_triangles, dim(p - 1)))
    for t, ce in enumerate(elements):
        bg = dm.boundary_gather(t)
        u_I, q = ce.local_solve(u_B_full[bg])
        u[dm.interior_gather(t)] = u_I
        qI[t] = q
        P[t] = H[t] @ ce.extend(w_B_full[bg]) + pb.P @ q
    return u, qI, _finalize_pressure(mesh, p, P)


def scip_solve(mesh, p, problem, config=PenaltyConfig(), disc=None):
    disc = disc or discretize(mesh, p, problem)
    dm, lam = disc.dofmap, config.lam
    t0 = time.perf_counter()
    elements = condense_all(disc, lam)
    system = assemble_global(dm, elements)
    lu = splu(system.A_free)
    nB = dm.n_boundary
    u_fixed = disc.lift[system.fixed]
    H = [_div_map(mesh, p, t) for t in range(mesh.n_triangles)]
    M = mass_matrix(p - 1)
    areas = mesh.areas()
    gathers = [dm.boundary_gather(t) for t in range(mesh.n_triangles)]
    track = config.track_errors and problem.exact is not None
    w_B = np.zeros(nB)
    history = []
    monitor = _StallMonitor(config.stall_window)
    sol = DiscreteSolution(mesh, p, dm, np.zeros(dm.n_total),
                           np.zeros((mesh.n_triangles, dim(p - 1))),
                           method=SCIP, status=MAX_ITERS, history=history)
    sol.meta.update(system_size=len(system.free), factorizations=1, lam=lam,
                    stall_window=config.stall_window)
    u_B = np.zeros(nB)
    w_next = w_B
    for it in range(config.max_iters):
        u_B = np.zeros(nB)
        u_B[system.free] = lu.solve(system.rhs(u_fixed, w_B))
        u_B[system.fixed] = u_fixed
        w_next = w_B - lam * u_B
        div2 = 0.0
        for t, ce in enumerate(elements):
            d = H[t] @ ce.extend(u_B[gathers[t]])
            div2 += areas[t] * d @ M @ d
        div = float(np.sqrt(max(div2, 0.0)))
        rec = IterationRecord(it, div, time.perf_counter() - t0)
        if track:
            u, qI, P = _scip_reconstruct(disc, elements, u_B, w_next, H)
            tmp = DiscreteSolution(mesh, p, dm, u, P)
            rec.rel_H1_err, rec.rel_L2_press_err = error_norms(tmp, problem.exact)
        history.append(rec)
        if div <= config.div_tol:
            sol.status = CONVERGED
            break
        if monitor.update(div, 1e-13 * (1 + np.abs(u_B).max())):
            _abort(sol, it)
            break
        w_B = w_next
    sol.u, sol.q_interior, sol.pressure = _scip_reconstruct(disc, elements, u_B, w_next, H)
    sol.w = w_next
    sol.meta["elements"] = elements
    return sol


def solve(mesh, p, problem, config=PenaltyConfig()):
    if config.method == IP:
        return ip_solve(mesh, p, problem, config)
    return scip_solve(mesh, p, problem, config)


# --------------------------------------------------------------------------
# output

HISTORY_COLUMNS = ("iter", "div_norm", "rel_H1_err", "rel_L2_press_err", "seconds")


def write_history(history, path, with_errors=None):
    if with_errors is None:
        with_errors = any(r.rel_H1_err is not None for r in history)
    cols = HISTORY_COLUMNS if with_errors else ("iter", "div_norm", "seconds")
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(cols)
        for r in history:
            row = {"iter": r.iter, "div_norm": f"{r.div_norm:.6e}",
                   "rel_H1_err": "" if r.rel_H1_err is None else f"{r.rel_H1_err:.6e}",
                   "rel_L2_press_err": "" if r.rel_L2_press_err is None else f"{r.rel_L2_press_err:.6e}",
                   "seconds": f"{r.seconds:.3g}"}
            wr.writerow([row[c] for c in cols])


def sample_grid(solution, nx, ny, bbox=None):
    """Rows ``(x, y, u1, u2, p)`` on a uniform grid, keeping points inside the mesh."""
    V = solution.mesh.vertices
    x0, y0 = V.min(axis=0)
    x1, y1 = V.max(axis=0)
    if bbox is not None:
        x0, y0, x1, y1 = bbox
    xs, ys = np.meshgrid(np.linspace(x0, x1, nx), np.linspace(y0, y1, ny), indexing="xy")
    pts = np.column_stack([xs.ravel(), ys.ravel()])
    inside = _inside(solution.mesh, pts)
    pts = pts[inside]
    U, Q = solution.evaluate(pts)
    return np.column_stack([pts, U, Q])


def _inside(mesh, pts, tol=1e-12):
    out = np.zeros(len(pts), bool)
    for k, pnt in enumerate(pts):
        try:
            mesh.locate(pnt[None], tol=tol)
            out[k] = True
        except ValueError:
            pass
    return out


def write_field(rows, path):
    with open(path, "w") as fh:
        fh.write("x y u1 u2 p\n")
        for r in rows:
            fh.write(" ".join(f"{v:.12e}" for v in r) + "\n")
