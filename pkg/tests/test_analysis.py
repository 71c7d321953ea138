from dataclasses import replace

import numpy as np
import pytest
import scipy.linalg as sla

from svscip.analysis import (
    SKIPPED, SizeGuardError, _divergence_operator, diagnostics, extension_identity_check,
    global_div_rank, infsup_estimate, interior_nullspace,
)
from svscip.bernstein import element_blocks
from svscip.condense import condense
from svscip.mesh import gen_crisscross, gen_square_diagonal, gen_triangle, pressure_space_dim
from svscip.problems import Form
from svscip.solve import sobolev_gram

from conftest import random_triangle


@pytest.mark.parametrize("mesh, p, expected", [
    (gen_triangle(), 4, 6),
    (gen_triangle(), 5, 11),
    (gen_square_diagonal(), 4, 17),
    (gen_crisscross(1, 1), 4, 38),
    (gen_crisscross(1, 1, neumann_sides=("right",)), 4, 39),
])
def test_rank_matches_counting(mesh, p, expected):
    assert global_div_rank(mesh, p) == pressure_space_dim(mesh, p) == expected


def test_infsup_matches_svd_formulation():
    mesh = gen_square_diagonal()
    p = 4
    D, Mp, free, dm = _divergence_operator(mesh, p)
    K = sobolev_gram(dm)[free][:, free].toarray()
    Lk = np.linalg.cholesky(K)
    Lm = np.linalg.cholesky(Mp)
    s = sla.svdvals(Lm.T @ D @ np.linalg.inv(Lk.T))
    r = global_div_rank(mesh, p)
    assert infsup_estimate(mesh, p) == pytest.approx(np.sort(s)[::-1][r - 1], rel=1e-8)


def test_infsup_bounded():
    mesh = gen_crisscross(1, 1)
    b = [infsup_estimate(mesh, p) for p in (4, 5)]
    assert all(0 < x < 1 for x in b)
    # the seminorm version dominates the full-norm one
    assert infsup_estimate(mesh, 4, seminorm=True) >= b[0]


@pytest.mark.parametrize("p", [4, 6, 8])
def test_identity_residuals(p, rng):
    for form in (Form(), Form("oseen", nu=0.2, convection=lambda x, y: np.array([1 - y, x]),
                              convection_polynomial_degree=1)):
        ce = condense(element_blocks(random_triangle(rng), p, form), 1e3)
        r = extension_identity_check(ce, trials=10, rng=rng)
        assert r.saddle_rcond > 1e-14
        assert max(r.defining_S, r.defining_T) <= 1e-10
        assert max(r.div_orthogonality, r.nullspace_orthogonality,
                   r.adjoint_div_orthogonality, r.adjoint_nullspace_orthogonality) <= 1e-10
        assert r.idempotence <= 1e-12 and r.projector_consistency <= 1e-12
        assert r.divergence_identity <= 1e-10
        assert r.aform_identity <= 1e-9


def test_aform_identity_detects_wrong_extension(rng):
    """Adding a divergence-free bubble to T breaks the identity, so the check is not vacuous."""
    form = Form("oseen", nu=0.2, convection=lambda x, y: np.array([1 - y, x]),
                convection_polynomial_degree=1)
    ce = condense(element_blocks(random_triangle(rng), 5, form), 1e3)
    Z = interior_nullspace(ce.blocks)
    bad = replace(ce, T=ce.T + Z @ rng.standard_normal((Z.shape[1], ce.T.shape[1])))
    r = extension_identity_check(bad, trials=5, rng=0)
    assert r.aform_identity > 1e-6
    # divergence orthogonality alone cannot see this perturbation
    assert r.adjoint_div_orthogonality < 1e-10


def test_diagnostics_report():
    mesh = gen_crisscross(1, 1)
    rep = diagnostics(mesh, 4)
    kv = dict(rep.items())
    assert kv["pressure_space_dim"] == 38 and kv["global_div_rank"] == 38
    assert kv["rank_matches_dim"] == "true"
    assert kv["singular_interior_vertices"] == "4"
    assert kv["extension_identities"] == SKIPPED
    assert "not checked" in rep.to_keyvalue()
    assert rep.to_text().startswith("Mesh and discretisation diagnostics")
    rep = diagnostics(mesh, 4, dense=False)
    assert dict(rep.items())["global_div_rank"] == SKIPPED


def test_size_guard(monkeypatch):
    import svscip.analysis as an
    monkeypatch.setattr(an, "MAX_DENSE_ROWS", 10)
    with pytest.raises(SizeGuardError):
        global_div_rank(gen_triangle(), 4)
    rep = diagnostics(gen_triangle(), 4)
    assert rep.div_rank == SKIPPED and any("skipped" in n for n in rep.notes)
