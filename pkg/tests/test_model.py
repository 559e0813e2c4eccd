import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from qhd1d.errors import NonPositiveDensity, ValidationError
from qhd1d.grid import Grid
from qhd1d.model import (DopingProfile, FullState, ModelParams, SteadyFields, bohm_term, forcing_g,
                         nonlinear_f, residual_full, steady_coeffs)

X = sp.Symbol("x")


def test_params_validation():
    for bad in ({"nu": 0.0}, {"tau": -1.0}, {"lam": np.nan}, {"sigma": -1e-3}, {"mu": np.inf}):
        with pytest.raises(ValidationError):
            ModelParams(**bad)
    assert ModelParams().with_(J_b=0.5).J_b == 0.5


def test_profile_validation():
    with pytest.raises(NonPositiveDensity):
        DopingProfile.sine(1.0, -1.0)
    with pytest.raises(NonPositiveDensity):
        DopingProfile.constant(0.0)
    with pytest.raises(ValidationError):
        DopingProfile("wave")
    with pytest.raises(ValidationError):
        DopingProfile.sine(1.0, 0.1, 0)


@pytest.mark.parametrize("prof, expr", [
    (DopingProfile.sine(1.2, 0.3, 2), 1.2 + 0.3 * sp.sin(2 * sp.pi * X) ** 2),
    (DopingProfile.bump(1.0, 4.0, (1.0, -0.5, 0.25)),
     1.0 + 4.0 * X ** 4 * (1 - X) ** 4 * (1 - 0.5 * X + 0.25 * X ** 2)),
    (DopingProfile.constant(2.0), sp.Integer(2)),
])
def test_profile_derivatives_match_sympy(prof, expr):
    xs = np.linspace(0, 1, 17)
    for m in range(6):
        f = sp.lambdify(X, sp.diff(expr, X, m), "numpy")
        np.testing.assert_allclose(prof.deriv(xs, m), np.broadcast_to(f(xs), xs.shape),
                                   rtol=1e-12, atol=1e-9)


def test_delta0_rescaling():
    g = Grid(101)
    prof = DopingProfile.sine(1.0, 1.0, 1).with_delta0(0.02, g)
    assert prof.delta0(g) == pytest.approx(0.02, rel=1e-12)
    assert DopingProfile.constant().delta0(g) == 0.0
    with pytest.raises(ValidationError):
        DopingProfile.constant().with_delta0(0.1, g)


def test_bohm_term_matches_continuum():
    g = Grid(401)
    P = ModelParams(epsilon=0.3)
    n_expr = 1 + 0.5 * sp.sin(2 * sp.pi * X)
    sq = sp.sqrt(n_expr)
    bohm = sp.lambdify(X, P.epsilon ** 2 / 9 * n_expr * sp.diff(sp.diff(sq, X, 2) / sq, X), "numpy")
    n = sp.lambdify(X, n_expr, "numpy")(g.x)
    assert np.max(np.abs(bohm_term(n, P, g) - bohm(g.x))) < 1e-3 * np.max(np.abs(bohm(g.x)))
    with pytest.raises(NonPositiveDensity):
        bohm_term(n - 2, P, g)


def _reduced_rows():
    """Momentum and energy residuals with n_xx -> J_x/nu, n_xxx -> J_xx/nu, from the full system."""
    nu, tau, mu, e2, Jb = sp.symbols("nu tau mu e2 J_b", positive=True)
    rho = sp.Function("rho")(X)
    p, q, r, V = (sp.Function(s)(X) for s in "pqrV")
    n, J, E = rho + p, Jb + q, sp.Rational(3, 2) * rho + r
    D = lambda f, k=1: sp.diff(f, X, k)  # noqa: E731
    sq = sp.sqrt(n)
    bohm = e2 / 9 * n * D(D(sq, 2) / sq)
    R_J = J / tau - nu * D(J, 2) + sp.Rational(2, 3) * D(J ** 2 / n) + sp.Rational(2, 3) * D(E) - bohm \
        - n * D(V) + mu * D(n)
    R_E = (sp.Rational(5, 3) * D(J * E / n) + 2 / tau * E - nu * D(E, 2) - sp.Rational(1, 3) * D(J ** 3 / n ** 2)
           - e2 / 18 * D(J * D(n, 2) / n - J * D(n) ** 2 / n ** 2) - J * D(V) + mu * D(J) - 3 / tau * n)
    sub = {D(p, 3): D(q, 2) / nu - D(rho, 3), D(p, 2): D(q) / nu - D(rho, 2)}
    rows = [sp.expand(R.doit()).subs(sub) for R in (R_J, R_E)]
    syms = dict(zip(("p", "px", "q", "qx", "qxx", "r", "rx", "rxx", "Vx", "rho", "rho_x", "rho_xx"),
                    sp.symbols("p px q qx qxx r rx rxx Vx rho0 rho1 rho2")))
    rep = {D(q, 2): syms["qxx"], D(r, 2): syms["rxx"], D(rho, 2): syms["rho_xx"]}
    rep2 = {D(p): syms["px"], D(q): syms["qx"], D(r): syms["rx"], D(V): syms["Vx"], D(rho): syms["rho_x"]}
    rep3 = {p: syms["p"], q: syms["q"], r: syms["r"], rho: syms["rho"]}
    rows = [R.subs(rep).subs(rep2).subs(rep3) for R in rows]
    return rows, syms, (nu, tau, mu, e2, Jb)


@pytest.fixture(scope="module")
def reduced_rows():
    return _reduced_rows()


def test_linear_coefficients_match_symbolic_linearization(reduced_rows):
    rows, s, (nu, tau, mu, e2, Jb) = reduced_rows
    vals = {nu: 0.3, tau: 0.7, mu: 1.3, e2: 0.25, Jb: 0.4}
    g = Grid(11)
    prof = DopingProfile.sine(1.0, 0.4, 1)
    P = ModelParams(nu=0.3, epsilon=0.5, tau=0.7, mu=1.3, J_b=0.4)
    c = steady_coeffs(g, prof, P)
    zero = {s[k]: 0 for k in ("p", "px", "q", "qx", "qxx", "r", "rx", "rxx", "Vx")}
    i = 3
    pt = {s["rho"]: prof.deriv(g.x, 0)[i], s["rho_x"]: prof.deriv(g.x, 1)[i],
          s["rho_xx"]: prof.deriv(g.x, 2)[i]}

    def coef(R, name):
        return float(sp.diff(R, s[name]).subs(zero).subs(vals).subs(pt))

    R2, R3 = rows
    const2 = float(R2.subs(zero).subs(vals).subs(pt))
    assert -const2 == pytest.approx(c.a2[i], rel=1e-12)
    for name, val in (("p", c.c2), ("px", c.d2), ("q", c.b2), ("qx", c.e2)):
        assert coef(R2, name) == pytest.approx(val[i], rel=1e-12, abs=1e-14)
    assert coef(R2, "rx") == pytest.approx(2 / 3)
    assert coef(R2, "Vx") == pytest.approx(-pt[s["rho"]])
    assert coef(R2, "qxx") == pytest.approx(-(0.3 + 0.25 / (18 * 0.3)))

    const3 = float(R3.subs(zero).subs(vals).subs(pt))
    assert -const3 == pytest.approx(c.a3[i], rel=1e-12)
    for name, val in (("p", c.c3), ("px", c.d3), ("q", c.h3), ("qx", c.e3), ("r", c.b3)):
        assert coef(R3, name) == pytest.approx(val[i], rel=1e-12, abs=1e-14)
    assert coef(R3, "rx") == pytest.approx(5 / 3 * 0.4 / pt[s["rho"]])
    assert coef(R3, "Vx") == pytest.approx(-0.4)
    # the q_xx part of the energy row stays in the fixed-point right-hand side
    assert coef(R3, "qxx") == pytest.approx(-0.25 * 0.4 / (18 * 0.3 * pt[s["rho"]]))


def test_continuity_constant_is_nu_rho_xx():
    g = Grid(21)
    prof = DopingProfile.sine(1.0, 0.4, 1)
    c = steady_coeffs(g, prof, ModelParams(nu=0.2))
    np.testing.assert_allclose(c.a1, 0.2 * prof.deriv(g.x, 2))


def _smooth_w(g, scale=1.0):
    x = g.x
    s = np.sin(np.pi * x)
    return scale * 0.01 * s ** 2, scale * 0.02 * s * np.cos(x), scale * 0.03 * s ** 2 * x, \
        scale * 0.1 * np.cos(2 * x)


@settings(max_examples=25, deadline=None)
@given(kind=st.sampled_from(["constant", "sine", "bump"]), amp=st.floats(0.0, 2.0),
       Jb=st.floats(-0.5, 0.5), eps=st.floats(0.05, 2.0))
def test_forcings_vanish_at_zero(kind, amp, Jb, eps):
    g = Grid(41)
    prof = {"constant": DopingProfile.constant(1.0), "sine": DopingProfile.sine(1.0, amp, 1),
            "bump": DopingProfile.bump(1.0, amp, (1.0,))}[kind]
    P = ModelParams(epsilon=eps, J_b=Jb)
    z = np.zeros(g.N)
    f2, f3 = nonlinear_f(z, z, z, np.cos(g.x), prof, P, g)
    x = g.x
    sf = SteadyFields(prof.deriv(x), prof.deriv(x, 1), prof.deriv(x, 2), Jb + 0 * x, 1.5 * prof.deriv(x),
                      np.sin(x))
    g1, g2 = forcing_g(sf, (z, z, z, z), P, g)
    for a in (f2, f3, g1, g2):
        assert np.max(np.abs(a)) <= 1e-14


def test_remainders_are_quadratic():
    # f(w) = O(|w|^2): halving the input quarters the output
    g = Grid(81)
    prof = DopingProfile.sine(1.0, 0.2, 1)
    P = ModelParams(epsilon=0.5, J_b=0.3)
    Vx = np.zeros(g.N)
    big = nonlinear_f(*_smooth_w(g, 1e-2)[:3], Vx, prof, P, g)
    small = nonlinear_f(*_smooth_w(g, 5e-3)[:3], Vx, prof, P, g)
    for a, b in zip(big, small):
        assert np.max(np.abs(a)) / np.max(np.abs(b)) == pytest.approx(4.0, rel=0.02)


def test_full_residual_vanishes_at_constant_equilibrium():
    g = Grid(31)
    prof = DopingProfile.constant(1.5)
    z = np.zeros(g.N)
    R = residual_full(FullState(1.5 + z, z, 2.25 + z, z), prof, ModelParams(), g)
    # one-sided boundary weights come from a moment solve, hence the round-off
    for a in R:
        assert np.max(np.abs(a)) <= 1e-12


def test_continuity_residual_converges_on_manufactured_state():
    # J = nu n_x + c solves the continuity row; the discrete residual is O(h^2)
    errs = []
    for N in (101, 201):
        g = Grid(N)
        x = g.x
        prof = DopingProfile.constant(1.0)
        P = ModelParams(nu=0.2, epsilon=0.4)
        n = 1 + 0.2 * np.sin(2 * np.pi * x)
        J = 0.2 * (0.2 * 2 * np.pi * np.cos(2 * np.pi * x)) + 0.1  # J = nu n_x + c
        R = residual_full(FullState(n, J, 1.5 * n, 0 * x), prof, P, g)
        errs.append(np.max(np.abs(R[0][1:-1])))
    assert errs[1] < errs[0] / 3.5
    assert errs[1] < 1e-3
