"""Flow problems, Dirichlet lifting and error norms."""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Callable, Optional

import numpy as np

from .bernstein import _eval, _eval_grad, bary_gradients, gauss_line, quad_rule
from .mesh import DIRICHLET, NEUMANN, gen_crisscross

VectorField = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Form:
    """Bilinear form selector.

    ``kind="stokes"``: ``2 nu (eps u, eps v)``.
    ``kind="oseen"``: adds ``((w . grad) u, v)``.
    ``kind="perturbed"``: ``(u, v) + delta (2 nu (eps u, eps v) + ((w . grad) u, v))``.
    """

    kind: str = "stokes"
    nu: float = 1.0
    delta: float = 1.0
    convection: Optional[VectorField] = None
    convection_polynomial_degree: Optional[int] = None
    convection_div: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in ("stokes", "oseen", "perturbed"):
            raise ValueError(f"unknown form {self.kind!r}")
        if self.nu <= 0:
            raise ValueError("viscosity must be positive")
        if self.kind == "perturbed" and self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.kind == "stokes" and self.convection is not None:
            raise ValueError("the Stokes form takes no convection field")
        if self.kind == "oseen" and self.convection is None:
            raise ValueError("the Oseen form needs a convection field")

    @property
    def symmetric(self):
        return self.convection is None


@dataclass(frozen=True)
class ExactSolution:
    velocity: VectorField
    gradient: Callable  # (x, y) -> (2, 2, ...) with [i, j] = d u_i / d x_j
    pressure: Callable


@dataclass(frozen=True)
class FlowProblem:
    name: str
    form: Form
    dirichlet: VectorField
    source: Optional[VectorField] = None
    traction: Optional[VectorField] = None
    exact: Optional[ExactSolution] = None
    default_mesh: Optional[Callable] = field(default=None, compare=False)


# --------------------------------------------------------------------------
# benchmark problems

def kovasznay_kappa(nu):
    return 1.0 / (2.0 * nu) - np.sqrt(1.0 / (4.0 * nu * nu) + 4.0 * np.pi ** 2)


KOVASZNAY_RECT = (-0.5, -0.5, 2.0, 1.5)


def kovasznay_problem(nu=0.1):
    if nu <= 0:
        raise ValueError("viscosity must be positive")
    k = kovasznay_kappa(nu)
    x0, y0, x1, y1 = KOVASZNAY_RECT
    area = (x1 - x0) * (y1 - y0)
    qbar = -(y1 - y0) * (np.exp(2 * k * x1) - np.exp(2 * k * x0)) / (2 * k) / (2 * area)
    tp = 2 * np.pi

    def u(x, y):
        e = np.exp(k * x)
        return np.array([1 - e * np.cos(tp * y), k / tp * e * np.sin(tp * y)])

    def grad(x, y):
        e = np.exp(k * x)
        c, s = np.cos(tp * y), np.sin(tp * y)
        return np.array([[-k * e * c, tp * e * s],
                         [k * k / tp * e * s, k * e * c]])

    def q(x, y):
        return -0.5 * np.exp(2 * k * x) - qbar

    def div_w(x, y):
        g = grad(x, y)
        return g[0, 0] + g[1, 1]

    form = Form("oseen", nu=nu, convection=u, convection_div=div_w)
    return FlowProblem(
        "kovasznay", form, dirichlet=u, exact=ExactSolution(u, grad, q),
        default_mesh=lambda nx=4, ny=4: gen_crisscross(nx, ny, KOVASZNAY_RECT))


def moffatt_lid(x, y, tol=1e-12):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    on_lid = (np.abs(y) <= tol) & (np.abs(x) <= 1 + tol)
    return np.array([np.where(on_lid, 1 - x * x, 0.0), np.zeros_like(x)])


def moffatt_problem():
    from .mesh import gen_wedge

    return FlowProblem("moffatt", Form("stokes", nu=1.0), dirichlet=moffatt_lid,
                       default_mesh=lambda **kw: gen_wedge(**kw))


def neumann_fixture(nu=1.0):
    """Manufactured Stokes problem for mixed Dirichlet/Neumann tests.

    ``u = (sin x sin y, cos x cos y)``, ``q = sin(x + y)``; the traction is
    ``(2 nu eps(u) - q I) n``.
    """

    def u(x, y):
        return np.array([np.sin(x) * np.sin(y), np.cos(x) * np.cos(y)])

    def grad(x, y):
        return np.array([[np.cos(x) * np.sin(y), np.sin(x) * np.cos(y)],
                         [-np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)]])

    def q(x, y):
        return np.sin(x + y)

    def f(x, y):
        # -div(2 nu eps u) = -nu lap u = 2 nu u for this field
        return 2 * nu * u(x, y) + np.cos(x + y)

    def stress(x, y):
        g = grad(x, y)
        s = nu * (g + np.swapaxes(g, 0, 1))
        qq = q(x, y)
        s[0, 0] -= qq
        s[1, 1] -= qq
        return s

    def traction(x, y, n):
        s = stress(x, y)
        return s[:, 0] * n[0] + s[:, 1] * n[1]

    return FlowProblem("neumann_fixture", Form("stokes", nu=nu), dirichlet=u, source=f,
                       traction=traction, exact=ExactSolution(u, grad, q))


def edge_normal(mesh, e):
    """Outward unit normal of boundary edge ``e``."""
    a, b = mesh.edges[e]
    t = mesh.edge_elements[e][0]
    P, Q = mesh.vertices[a], mesh.vertices[b]
    d = Q - P
    n = np.array([d[1], -d[0]]) / np.linalg.norm(d)
    c = mesh.vertices[mesh.triangles[t]].mean(axis=0)
    if np.dot(c - P, n) > 0:
        n = -n
    return n


def neumann_terms(mesh, problem, t):
    """``(local_edge, traction)`` pairs for Neumann edges of element ``t``.

    ``problem.traction`` has signature ``(x, y, n)`` with ``n`` the outward
    unit normal; a missing traction means a homogeneous Neumann condition.
    """
    out = []
    if problem.traction is None:
        return out
    for k in range(3):
        e = int(mesh.tri_edges[t, k])
        if mesh.edge_tag(e) == NEUMANN:
            n = edge_normal(mesh, e)
            out.append((k, lambda x, y, n=n: problem.traction(x, y, n)))
    return out


# --------------------------------------------------------------------------
# checks

def check_problem(problem, mesh, p=4, tol_div=1e-8, tol_flux=1e-10):
    """Validate the convection field and boundary compatibility on ``mesh``."""
    form = problem.form
    if form.convection is not None:
        rule = quad_rule(2 * p + 6)
        for t in range(mesh.n_triangles):
            X = mesh.coords(t)
            xy = rule.points @ X
            area = 0.5 * abs(np.linalg.det(np.array([X[1] - X[0], X[2] - X[0]])))
            if form.convection_div is not None:
                d = np.asarray(form.convection_div(xy[:, 0], xy[:, 1]))
                tol = tol_div
            else:
                h = 1e-5
                w = form.convection
                d = ((w(xy[:, 0] + h, xy[:, 1])[0] - w(xy[:, 0] - h, xy[:, 1])[0])
                     + (w(xy[:, 0], xy[:, 1] + h)[1] - w(xy[:, 0], xy[:, 1] - h)[1])) / (2 * h)
                tol = 1e-6
            if np.sqrt(area * np.dot(rule.weights, d * d)) > tol:
                raise ValueError(f"convection field is not divergence-free on element {t}")
    if mesh.all_dirichlet:
        flux = boundary_flux(mesh, problem.dirichlet)
        if abs(flux) > tol_flux:
            raise ValueError(f"Dirichlet data violates compatibility: boundary flux {flux:.3e}")


def boundary_flux(mesh, g, npts=40):
    t, w = gauss_line(npts)
    total = 0.0
    for e in mesh.boundary_edge_ids():
        a, b = mesh.edges[e]
        P, Q = mesh.vertices[a], mesh.vertices[b]
        xy = P[None] + t[:, None] * (Q - P)[None]
        L = np.linalg.norm(Q - P)
        val = np.asarray(g(xy[:, 0], xy[:, 1]), dtype=float)
        total += L * np.dot(w, edge_normal(mesh, e) @ val)
    return total


# --------------------------------------------------------------------------
# Dirichlet lifting

def _edge_bernstein(p, t):
    m = np.arange(p, -1, -1)  # exponent of the first endpoint
    c = np.array([comb(p, int(k)) for k in m], dtype=float)
    return c[None] * (1 - t[:, None]) ** m[None] * t[:, None] ** (p - m)[None]


def dirichlet_lift(dofmap, data, npts=None):
    """Boundary dof vector carrying the Dirichlet values (zero elsewhere).

    Vertex dofs interpolate ``data``; edge dofs minimise the L2 trace error on
    each edge subject to reproducing the edge integral of each component, so
    that the discrete boundary flux equals the exact one.
    """
    mesh, p = dofmap.mesh, dofmap.p
    nV, nBs = mesh.n_vertices, dofmap.n_boundary_scalar
    out = np.zeros(dofmap.n_boundary)
    dverts = dofmap.dirichlet_scalar[dofmap.dirichlet_scalar < nV]
    if len(dverts):
        vals = np.asarray(data(mesh.vertices[dverts, 0], mesh.vertices[dverts, 1]), dtype=float)
        out[dverts] = vals[0]
        out[dverts + nBs] = vals[1]
    t, w = gauss_line(npts or 2 * p + 12)
    Bm = _edge_bernstein(p, t)   # columns: exponent of endpoint a = p, p-1, ..., 0
    inner = Bm[:, 1:p]           # exponents p-1 .. 1
    M = inner.T @ (w[:, None] * inner)
    b = inner.T @ w
    kkt = np.zeros((p, p))
    kkt[:p - 1, :p - 1] = M
    kkt[:p - 1, p - 1] = b
    kkt[p - 1, :p - 1] = b
    for e in mesh.boundary_edge_ids(DIRICHLET):
        a, c = (int(v) for v in mesh.edges[e])
        P, Q = mesh.vertices[a], mesh.vertices[c]
        xy = P[None] + t[:, None] * (Q - P)[None]
        g = np.asarray(data(xy[:, 0], xy[:, 1]), dtype=float)
        ids = nV + e * (p - 1) + np.arange(p - 1)   # exponents 1 .. p-1
        for comp in range(2):
            r = g[comp] - out[a + comp * nBs] * Bm[:, 0] - out[c + comp * nBs] * Bm[:, p]
            rhs = np.concatenate([inner.T @ (w * r), [np.dot(w, r)]])
            coef = np.linalg.solve(kkt, rhs)[:p - 1]  # exponents p-1 .. 1
            out[ids + comp * nBs] = coef[::-1]
    return out


def trace_error(dofmap, u_boundary, data, npts=None):
    """L2 error over the Dirichlet boundary between the discrete trace and ``data``."""
    mesh, p = dofmap.mesh, dofmap.p
    nV, nBs = mesh.n_vertices, dofmap.n_boundary_scalar
    t, w = gauss_line(npts or 2 * p + 12)
    Bm = _edge_bernstein(p, t)
    total = 0.0
    for e in mesh.boundary_edge_ids(DIRICHLET):
        a, c = (int(v) for v in mesh.edges[e])
        P, Q = mesh.vertices[a], mesh.vertices[c]
        L = np.linalg.norm(Q - P)
        xy = P[None] + t[:, None] * (Q - P)[None]
        g = np.asarray(data(xy[:, 0], xy[:, 1]), dtype=float)
        ids = nV + e * (p - 1) + np.arange(p - 1)
        for comp in range(2):
            off = comp * nBs
            coef = np.concatenate([[u_boundary[a + off]], u_boundary[ids + off][::-1], [u_boundary[c + off]]])
            diff = Bm @ coef - g[comp]
            total += L * np.dot(w, diff * diff)
    return np.sqrt(total)


# --------------------------------------------------------------------------
# error norms

def error_norms(solution, exact, exactness=None):
    """Relative H1 velocity error and relative L2 pressure error.

    Both pressures are shifted to zero mean before comparison.
    """
    mesh, p = solution.mesh, solution.p
    rule = quad_rule(exactness or 2 * p + 6)
    eu = nu = 0.0
    q_int = qh_int = area_tot = 0.0
    per = []
    for t in range(mesh.n_triangles):
        X = mesh.coords(t)
        area = 0.5 * abs(np.linalg.det(np.array([X[1] - X[0], X[2] - X[0]])))
        w = rule.weights * area
        lam = rule.points
        xy = lam @ X
        c = solution.velocity_coeffs(t)
        n = len(c) // 2
        phi = _eval(p, lam)
        dphi = _eval_grad(p, lam, bary_gradients(X))
        uh = np.stack([phi @ c[:n], phi @ c[n:]])
        guh = np.stack([np.einsum("qnd,n->dq", dphi, c[:n]), np.einsum("qnd,n->dq", dphi, c[n:])])
        ue = np.asarray(exact.velocity(xy[:, 0], xy[:, 1]), dtype=float)
        ge = np.asarray(exact.gradient(xy[:, 0], xy[:, 1]), dtype=float)
        eu += np.dot(w, ((uh - ue) ** 2).sum(0) + ((guh - ge) ** 2).sum((0, 1)))
        nu += np.dot(w, (ue ** 2).sum(0) + (ge ** 2).sum((0, 1)))
        qh = _eval(p - 1, lam) @ solution.pressure_coeffs(t)
        qe = np.asarray(exact.pressure(xy[:, 0], xy[:, 1]), dtype=float)
        q_int += np.dot(w, qe)
        qh_int += np.dot(w, qh)
        area_tot += area
        per.append((w, qh, qe))
    mq, mqh = q_int / area_tot, qh_int / area_tot
    eq = sum(np.dot(w, ((qh - mqh) - (qe - mq)) ** 2) for w, qh, qe in per)
    nq = sum(np.dot(w, (qe - mq) ** 2) for w, qh, qe in per)
    rel_u = np.sqrt(eu / nu) if nu > 0 else np.sqrt(eu)
    rel_q = np.sqrt(eq / nq) if nq > 0 else np.sqrt(eq)
    return float(rel_u), float(rel_q)


# --------------------------------------------------------------------------
# Moffatt eddies

@dataclass(frozen=True)
class EddyReport:
    """Lobes of the horizontal velocity sampled along the wedge bisector.

    ``peaks`` and ``sign_changes`` are ordered from the lid toward the apex and
    exclude the lid-attached lobe; ``ratios[i] = peaks[i] / peaks[i + 1]``.
    """

    peaks: np.ndarray
    sign_changes: np.ndarray
    ratios: np.ndarray

    @property
    def count(self):
        return len(self.peaks)


def bisector_eddies(solution, n_samples=6000, noise_floor=1e-10):
    """Detect corner eddies from sign alternations of ``u1`` on the line ``x = 0``.

    Samples are geometrically clustered toward the apex.  Lobes whose peak
    speed falls below ``noise_floor`` times the lid-lobe peak are treated as
    round-off and dropped.
    """
    V = solution.mesh.vertices
    apex_y, lid_y = V[:, 1].min(), V[:, 1].max()
    depth = lid_y - apex_y
    ys = lid_y - depth + np.geomspace(1e-7 * depth, depth, n_samples)
    ys[-1] = lid_y
    U, _ = solution.evaluate(np.column_stack([np.zeros_like(ys), ys]))
    u = U[::-1, 0]  # lid first
    y = ys[::-1]
    s = np.sign(u)
    cut = np.flatnonzero(s[1:] * s[:-1] < 0)
    bounds = np.concatenate([[0], cut + 1, [len(u)]])
    peaks = np.array([np.abs(u[a:b]).max() for a, b in zip(bounds[:-1], bounds[1:])])
    keep = peaks >= noise_floor * peaks[0]
    n = int(np.argmin(keep)) if not keep.all() else len(peaks)
    eddies = peaks[1:n]
    changes = y[cut[: max(n - 1, 0)]]
    ratios = eddies[:-1] / eddies[1:] if len(eddies) > 1 else np.array([])
    return EddyReport(eddies, changes, ratios)
