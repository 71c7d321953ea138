import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svscip.bernstein import interpolate_scalar, interpolate_vector, gauss_line
from svscip.condense import build_dofmap
from svscip.mesh import gen_crisscross, gen_square_diagonal
from svscip.problems import _edge_bernstein
from svscip.problems import (
    ExactSolution, Form, FlowProblem, KOVASZNAY_RECT, boundary_flux, check_problem,
    dirichlet_lift, error_norms, kovasznay_kappa, kovasznay_problem, neumann_fixture,
    trace_error,
)
from svscip.solve import DiscreteSolution, PenaltyConfig, solve


def _fd_grad(f, x, y, h=1e-5):
    return ((f(x + h, y) - f(x - h, y)) / (2 * h), (f(x, y + h) - f(x, y - h)) / (2 * h))


def test_kovasznay_kappa():
    nu = 0.1
    k = kovasznay_kappa(nu)
    # kappa is the negative root of k^2 - k / nu - 4 pi^2 = 0
    assert k < 0
    assert k * k - k / nu - 4 * np.pi ** 2 == pytest.approx(0, abs=1e-10)


@settings(max_examples=20, deadline=None)
@given(x=st.floats(-0.4, 1.9), y=st.floats(-0.4, 1.4))
def test_kovasznay_solves_navier_stokes(x, y):
    """-nu lap u + (u . grad) u + grad q = 0 and div u = 0, by finite differences."""
    nu = 0.1
    pr = kovasznay_problem(nu)
    u, q = pr.exact.velocity, pr.exact.pressure
    h = 1e-4
    uc = u(x, y)
    lap = (u(x + h, y) + u(x - h, y) + u(x, y + h) + u(x, y - h) - 4 * uc) / h ** 2
    g = pr.exact.gradient(x, y)
    gfd = np.column_stack(_fd_grad(u, x, y))
    assert np.allclose(g, gfd, atol=1e-6)
    conv = g @ uc
    qx, qy = _fd_grad(q, x, y)
    res = -nu * lap + conv + np.array([qx, qy])
    assert np.abs(res).max() < 1e-4
    assert abs(g[0, 0] + g[1, 1]) < 1e-12


def test_kovasznay_pressure_zero_mean():
    q = kovasznay_problem().exact.pressure
    x0, y0, x1, y1 = KOVASZNAY_RECT
    t, w = gauss_line(60)
    X, Y = np.meshgrid(x0 + (x1 - x0) * t, y0 + (y1 - y0) * t, indexing="ij")
    mean = np.einsum("i,j,ij->", w, w, q(X, Y))
    assert abs(mean) < 1e-12


def test_kovasznay_boundary_flux_vanishes():
    pr = kovasznay_problem()
    mesh = pr.default_mesh()
    assert abs(boundary_flux(mesh, pr.dirichlet)) < 1e-12
    check_problem(pr, mesh, 8)


def test_check_problem_rejects_compressible_convection():
    form = Form("oseen", convection=lambda x, y: np.array([x, y]))
    pr = FlowProblem("bad", form, dirichlet=lambda x, y: np.zeros((2,) + np.shape(x)))
    with pytest.raises(ValueError, match="divergence-free"):
        check_problem(pr, gen_square_diagonal())


def test_check_problem_rejects_net_flux():
    pr = FlowProblem("bad", Form(), dirichlet=lambda x, y: np.array([x, 0 * y]))
    with pytest.raises(ValueError, match="compatibility"):
        check_problem(pr, gen_square_diagonal())
    # a Neumann side removes the compatibility requirement
    check_problem(pr, gen_square_diagonal(neumann_sides=("right",)))


@pytest.mark.parametrize("p", [4, 6])
def test_lift_exact_for_polynomial_data(p, rng):
    mesh = gen_crisscross(2, 2)
    dm = build_dofmap(mesh, p)
    a = rng.standard_normal((2, p + 1))

    def data(x, y):
        return np.array([sum(a[0, k] * x ** k * y ** (p - k) for k in range(p + 1)),
                         sum(a[1, k] * (x + 2 * y) ** k for k in range(p + 1))])

    lift = dirichlet_lift(dm, data)
    assert trace_error(dm, lift, data) < 1e-12
    # the lift vanishes away from the Dirichlet boundary
    mask = np.ones(dm.n_boundary, bool)
    mask[dm.dirichlet] = False
    assert not lift[mask].any()


def test_lift_preserves_flux():
    pr = kovasznay_problem()
    mesh = pr.default_mesh()
    p = 4
    dm = build_dofmap(mesh, p)
    lift = dirichlet_lift(dm, pr.dirichlet)
    sol = DiscreteSolution(mesh, p, dm, np.concatenate([lift, np.zeros(dm.n_interior)]),
                           np.zeros((mesh.n_triangles, p * (p + 1) // 2)))

    def discrete(x, y):
        U, _ = sol.evaluate(np.column_stack([np.ravel(x), np.ravel(y)]))
        return U.T

    assert abs(boundary_flux(mesh, discrete, npts=p + 2)) < 1e-12


def _best_trace(dm, data, npts=40):
    """Global L2(boundary) best approximation from the continuous trace space."""
    mesh, p = dm.mesh, dm.p
    nV, nBs = mesh.n_vertices, dm.n_boundary_scalar
    t, w = gauss_line(npts)
    Bm = _edge_bernstein(p, t)
    pos = {int(v): i for i, v in enumerate(dm.dirichlet_scalar)}
    M = np.zeros((len(pos), len(pos)))
    b = np.zeros((len(pos), 2))
    for e in mesh.boundary_edge_ids():
        a, c = (int(v) for v in mesh.edges[e])
        P, Q = mesh.vertices[a], mesh.vertices[c]
        L = np.linalg.norm(Q - P)
        xy = P[None] + t[:, None] * (Q - P)[None]
        g = data(xy[:, 0], xy[:, 1])
        loc = [pos[v] for v in [a, *(nV + e * (p - 1) + np.arange(p - 1))[::-1], c]]
        M[np.ix_(loc, loc)] += L * Bm.T @ (w[:, None] * Bm)
        b[loc] += L * Bm.T @ (w[:, None] * g.T)
    x = np.linalg.solve(M, b)
    out = np.zeros(dm.n_boundary)
    for v, i in pos.items():
        out[v], out[v + nBs] = x[i]
    return out


@pytest.mark.parametrize("p", [6, 8, 10])
def test_lift_quasi_optimal(p):
    pr = kovasznay_problem()
    dm = build_dofmap(pr.default_mesh(), p)
    err = trace_error(dm, dirichlet_lift(dm, pr.dirichlet), pr.dirichlet, npts=60)
    best = trace_error(dm, _best_trace(dm, pr.dirichlet), pr.dirichlet, npts=60)
    assert best <= err <= 1.5 * best


def test_lift_trace_decays():
    pr = kovasznay_problem()
    errs = []
    for p in (4, 6, 8, 10):
        dm = build_dofmap(pr.default_mesh(), p)
        errs.append(trace_error(dm, dirichlet_lift(dm, pr.dirichlet), pr.dirichlet))
    assert all(a > 50 * b for a, b in zip(errs, errs[1:]))


@pytest.mark.xfail(strict=True, reason="1e-8 lies below the L2 best-approximation error "
                   "(about 1.37e-8) of the degree-10 trace space on this mesh")
def test_kovasznay_trace_p10_absolute():
    pr = kovasznay_problem()
    dm = build_dofmap(pr.default_mesh(), 10)
    assert trace_error(dm, dirichlet_lift(dm, pr.dirichlet), pr.dirichlet) <= 1e-8


def _polynomial_solution(mesh, p, u, q):
    dm = build_dofmap(mesh, p)
    vec = np.zeros(dm.n_total)
    P = np.zeros((mesh.n_triangles, p * (p + 1) // 2))
    for t in range(mesh.n_triangles):
        X = mesh.coords(t)
        vec[dm.element_gather(t)] = interpolate_vector(X, p, u)
        P[t] = interpolate_scalar(X, p - 1, q)
    return DiscreteSolution(mesh, p, dm, vec, P)


def test_error_norms_of_exact_member():
    u = lambda x, y: np.array([x * x, -2 * x * y])  # noqa: E731
    grad = lambda x, y: np.array([[2 * x, 0 * x], [-2 * y, -2 * x]])  # noqa: E731
    q = lambda x, y: x + y + 7.0  # noqa: E731
    mesh = gen_crisscross(2, 2)
    sol = _polynomial_solution(mesh, 4, u, q)
    eu, eq = error_norms(sol, ExactSolution(u, grad, q))
    assert eu < 1e-13 and eq < 1e-13
    zero = DiscreteSolution(mesh, 4, sol.dofmap, 0 * sol.u, 0 * sol.pressure)
    eu, eq = error_norms(zero, ExactSolution(u, grad, q))
    assert eu == pytest.approx(1.0) and eq == pytest.approx(1.0)


def test_neumann_fixture_traction_consistency():
    """Traction on the right side equals (2 nu eps(u) - q) n evaluated directly."""
    pr = neumann_fixture(nu=0.5)
    x, y = 1.0, 0.3
    g = pr.exact.gradient(x, y)
    sigma = 0.5 * (g + g.T) - pr.exact.pressure(x, y) * np.eye(2)
    assert np.allclose(pr.traction(x, y, np.array([1.0, 0.0])), sigma[:, 0])


@pytest.mark.slow
def test_neumann_fixture_converges():
    pr = neumann_fixture()
    mesh = gen_crisscross(2, 2, neumann_sides=("right", "top"))
    errs = []
    for p in (4, 5, 6):
        sol = solve(mesh, p, pr, PenaltyConfig(lam=1e3, max_iters=12))
        assert sol.status == "converged"
        errs.append(error_norms(sol, pr.exact))
    for (u0, q0), (u1, q1) in zip(errs, errs[1:]):
        assert u0 > 10 * u1 and q0 > 10 * q1
    assert errs[-1][0] < 1e-8
