import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qhd1d.errors import MaxIterExceeded, ZeroDelta0
from qhd1d.grid import Grid
from qhd1d.model import DopingProfile, ModelParams, steady_residual
from qhd1d.steady import (NCOMP, BandedSystem, assemble_L, assemble_L_theta, continuation_solve,
                          interleave, leading_contraction, newton_solve, picard_solve, solve_steady,
                          split, steady_bound_ratio)

SINE = DopingProfile.sine(1.0, 1.0, 1)
# Picard does not converge at this large current; continuation does
HARD = (DopingProfile.sine(1.0, 0.5, 1), ModelParams(nu=0.1, epsilon=0.1, J_b=2.0))


@settings(max_examples=30)
@given(arrays(np.float64, (4 * 12,), elements=st.floats(-1e6, 1e6)))
def test_interleave_roundtrip(w):
    assert np.array_equal(interleave(*split(w)), w)


def test_banded_solve_matches_dense():
    g = Grid(31)
    L = assemble_L(g, SINE.with_delta0(0.1, g), ModelParams(J_b=0.2))
    rhs = np.random.default_rng(0).standard_normal(NCOMP * g.N)
    np.testing.assert_allclose(L.solve(rhs), np.linalg.solve(L.matrix.toarray(), rhs), rtol=1e-9, atol=1e-12)
    lo, up = L.bands
    assert lo <= 12 and up <= 12


def test_blend_endpoints():
    g = Grid(21)
    L = assemble_L(g, SINE, ModelParams())
    assert (assemble_L_theta(1.0, g, SINE, ModelParams()).matrix != L.matrix).nnz == 0
    with pytest.raises(ValueError):
        assemble_L_theta(1.5, g, SINE, ModelParams())
    B = BandedSystem(L.matrix)
    assert B.apply(np.zeros(NCOMP * g.N)).shape == (NCOMP * g.N,)


def test_trivial_steady_state():
    st_ = picard_solve(DopingProfile.constant(2.0), ModelParams(), Grid(51))
    assert st_.iterations == 1
    assert np.max(np.abs(st_.w)) == 0.0
    assert st_.relation_defect() == 0.0
    with pytest.raises(ZeroDelta0):
        steady_bound_ratio(st_)


def test_boundary_potential():
    st_ = picard_solve(DopingProfile.constant(1.0), ModelParams(V_b=0.3), Grid(51))
    assert st_.V[0] == pytest.approx(0.0, abs=1e-13) and st_.V[-1] == pytest.approx(0.3, abs=1e-13)
    for u in (st_.p, st_.q, st_.r):
        assert abs(u[0]) < 1e-13 and abs(u[-1]) < 1e-13


def test_picard_solves_the_reduced_system():
    g = Grid(101)
    prof = SINE.with_delta0(0.05, g)
    P = ModelParams(J_b=1e-3)
    st_ = picard_solve(prof, P, g, tol=1e-12)
    res = steady_residual(st_.p, st_.q, st_.r, st_.V, g, prof, P)
    assert max(np.max(np.abs(r)) for r in res) < 1e-10
    assert st_.method == "picard"
    assert st_.flux_defect() < 1e-15


def test_newton_agrees_with_picard_small_grid():
    g = Grid(41)
    prof = SINE.with_delta0(0.1, g)
    P = ModelParams(J_b=0.05)
    a = picard_solve(prof, P, g, tol=1e-12)
    b = newton_solve(prof, P, g)
    assert np.max(np.abs(a.w - b.w)) < 1e-10


def test_contraction_factor_scales_linearly():
    g = Grid(101)
    f = [leading_contraction(picard_solve(SINE.with_delta0(d, g), ModelParams(), g)) for d in (0.04, 0.02)]
    assert f[0] / f[1] == pytest.approx(2.0, rel=0.02)


def test_bound_ratio_is_constant_in_delta0():
    # frozen value at N = 201 with default parameters and J_b = 0
    g = Grid(201)
    for d in (0.04, 0.01):
        assert steady_bound_ratio(picard_solve(SINE.with_delta0(d, g), ModelParams(), g)) == \
            pytest.approx(0.38740, rel=1e-4)


def test_continuation_matches_picard_on_easy_case():
    g = Grid(51)
    prof = SINE.with_delta0(0.05, g)
    a = picard_solve(prof, ModelParams(J_b=0.01), g, tol=1e-12)
    b = continuation_solve(prof, ModelParams(J_b=0.01), g, tol=1e-12)
    assert b.method == "continuation"
    assert b.history == (0.25, 0.5, 0.75, 1.0)
    assert np.max(np.abs(a.w - b.w)) < 1e-10


def test_continuation_rescues_failed_picard():
    g = Grid(101)
    prof, P = HARD
    with pytest.raises(MaxIterExceeded):
        picard_solve(prof, P, g)
    st_ = solve_steady(prof, P, g)
    assert st_.method == "continuation"
    res = steady_residual(st_.p, st_.q, st_.r, st_.V, g, prof, P)
    assert max(np.max(np.abs(r)) for r in res) < 1e-7
    assert np.all(st_.n > 0)


def test_invalid_arguments():
    with pytest.raises(ValueError):
        picard_solve(SINE, ModelParams(), Grid(21), tol=0.0)
    with pytest.raises(ValueError):
        continuation_solve(SINE, ModelParams(), Grid(21), theta_step=0.0)


def test_residual_norms_small_and_neumann_reported():
    g = Grid(101)
    st_ = picard_solve(SINE.with_delta0(0.02, g), ModelParams(), g)
    assert max(st_.residual_norms().values()) < 1e-3
    left, right = st_.neumann_residuals()
    assert np.isfinite(left) and np.isfinite(right)
