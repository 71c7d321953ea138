import csv

import numpy as np
import pytest

from svscip.bernstein import interpolate_vector
from svscip.condense import build_dofmap
from svscip.mesh import gen_crisscross, gen_square_diagonal
from svscip.problems import ExactSolution, FlowProblem, Form, error_norms, kovasznay_problem
from svscip.solve import (
    ABORTED, CONVERGED, IP, SCIP, IterationRecord, PenaltyConfig, _StallMonitor,
    divergence_norm, sample_grid, solution_difference, solve, write_field, write_history,
)


def _poly_problem(kind="stokes", nu=0.5):
    """u = (x^2, -2xy), q = x + y, exactly representable for p >= 4."""
    w = lambda x, y: np.array([1.0 + 0 * x, 0.5 + 0 * y])  # noqa: E731
    u = lambda x, y: np.array([x * x, -2 * x * y])  # noqa: E731
    grad = lambda x, y: np.array([[2 * x, 0 * y], [-2 * y, -2 * x]])  # noqa: E731
    q = lambda x, y: x + y  # noqa: E731

    def f(x, y):
        out = np.array([-2 * nu + 1 + 0 * x, 1 + 0 * y])
        if kind == "oseen":
            g = grad(x, y)
            ww = w(x, y)
            out = out + np.einsum("ij...,j...->i...", g, ww)
        return out

    form = Form(kind, nu=nu, convection=w if kind == "oseen" else None,
                convection_polynomial_degree=0 if kind == "oseen" else None)
    return FlowProblem("poly", form, dirichlet=u, source=f, exact=ExactSolution(u, grad, q))


@pytest.mark.parametrize("method", [IP, SCIP])
@pytest.mark.parametrize("kind", ["stokes", "oseen"])
def test_reproduces_polynomial_solution(method, kind):
    pr = _poly_problem(kind)
    sol = solve(gen_crisscross(2, 2), 4, pr, PenaltyConfig(lam=1e3, method=method))
    assert sol.status == CONVERGED
    eu, eq = error_norms(sol, pr.exact)
    assert eu < 1e-9 and eq < 1e-8


def test_zero_data_gives_zero_solution():
    zero = lambda x, y: np.zeros((2,) + np.shape(x))  # noqa: E731
    pr = FlowProblem("zero", Form(), dirichlet=zero)
    sol = solve(gen_crisscross(1, 1), 5, pr)
    assert np.abs(sol.u).max() == 0.0
    assert np.abs(sol.pressure).max() == 0.0
    assert sol.history[0].div_norm == 0.0


def test_divergence_norm_examples():
    mesh = gen_square_diagonal(rect=(0, 0, 2, 1))
    p = 4
    dm = build_dofmap(mesh, p)
    for field, expected in [(lambda x, y: np.array([x, 0 * y]), np.sqrt(2.0)),
                            (lambda x, y: np.array([-y, x]), 0.0),
                            (lambda x, y: np.array([x * x, y]), None)]:
        u = np.zeros(dm.n_total)
        for t in range(mesh.n_triangles):
            u[dm.element_gather(t)] = interpolate_vector(mesh.coords(t), p, field)
        # div(x^2, y) = 2x + 1; int_0^2 (4x^2 + 4x + 1) dx = 32/3 + 8 + 2
        exp = np.sqrt(32 / 3 + 8 + 2) if expected is None else expected
        assert divergence_norm(mesh, p, dm, u) == pytest.approx(exp, abs=1e-12)


def test_methods_agree_and_scip_is_smaller():
    pr = kovasznay_problem()
    mesh = gen_crisscross(2, 2, rect=(-0.5, -0.5, 2.0, 1.5))
    a = solve(mesh, 4, pr, PenaltyConfig(method=IP))
    b = solve(mesh, 4, pr, PenaltyConfig(method=SCIP))
    du, dq = solution_difference(a, b)
    assert du < 1e-8 and dq < 1e-7
    assert b.meta["system_size"] < a.meta["system_size"]
    assert a.meta["factorizations"] == b.meta["factorizations"] == 1


@pytest.mark.slow
def test_kovasznay_pressure_at_centre():
    pr = kovasznay_problem()
    sol = solve(pr.default_mesh(), 8, pr)
    # centre (0.75, 0.5) is a cell vertex of the 4x4 criss-cross; evaluate nearby inside a cell
    pt = np.array([[0.8, 0.45]])
    U, Q = sol.evaluate(pt)
    assert np.allclose(U[0], pr.exact.velocity(0.8, 0.45), atol=1e-5)
    assert Q[0] == pytest.approx(pr.exact.pressure(0.8, 0.45), abs=1e-4)


def test_stall_monitor():
    m = _StallMonitor(3)
    seq = [1.0, 0.5, 0.6, 0.7, 0.8]
    flags = [m.update(v, 1e-13) for v in seq]
    assert flags == [False, False, False, False, True]
    m = _StallMonitor(3)
    # sitting at round-off never aborts
    assert not any(m.update(1e-15, 1e-13) for _ in range(10))
    m = _StallMonitor(3)
    # a decrease resets the counter
    assert not any(m.update(v, 0) for v in [1, 1, 1, 0.5, 0.5, 0.5])


def test_history_csv(tmp_path):
    hist = [IterationRecord(0, 1.5e-3, 0.01234, 2e-2, 3e-2),
            IterationRecord(1, 2.5e-7, 0.02, 1e-2, 1e-2)]
    path = tmp_path / "h.csv"
    write_history(hist, path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["iter", "div_norm", "rel_H1_err", "rel_L2_press_err", "seconds"]
    assert rows[1] == ["0", "1.500000e-03", "2.000000e-02", "3.000000e-02", "0.0123"]
    write_history([IterationRecord(0, 1.0, 0.5)], path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["iter", "div_norm", "seconds"]


def test_field_output(tmp_path):
    pr = _poly_problem()
    sol = solve(gen_crisscross(1, 1), 4, pr)
    rows = sample_grid(sol, 5, 4)
    assert rows.shape == (20, 5)
    assert np.allclose(rows[:, 2:4].T, pr.exact.velocity(rows[:, 0], rows[:, 1]), atol=1e-9)
    path = tmp_path / "f.txt"
    write_field(rows, path)
    lines = open(path).read().splitlines()
    assert lines[0] == "x y u1 u2 p" and len(lines) == 21


def test_config_validation():
    with pytest.raises(ValueError):
        PenaltyConfig(lam=0)
    with pytest.raises(ValueError):
        PenaltyConfig(max_iters=0)
    with pytest.raises(ValueError):
        PenaltyConfig(method="cg")
    with pytest.raises(ValueError):
        solve(gen_crisscross(1, 1), 3, _poly_problem())
