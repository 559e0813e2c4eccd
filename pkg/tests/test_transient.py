import numpy as np
import pytest

from qhd1d.errors import InsufficientSamples, NonPositiveNorm, ValidationError, ZeroBeta1
from qhd1d.grid import Grid, diff
from qhd1d.model import ModelParams, SteadyFields
from qhd1d.transient import (BIHARMONIC_CLOSURES, EnergyWeights, ImexStepper, PerturbationState,
                             biharmonic, composite_from_norms, default_sigma, evolve, fit_decay_rate,
                             perturbation_norms, random_perturbation, scale_to_composite, separation_energy,
                             sigma_study, smooth_perturbation, uniqueness_probe, upsilon_energy)

P = ModelParams(nu=0.1, epsilon=1.0, J_b=1e-4)


def test_poisson_consistent_perturbation():
    g = Grid(101)
    s = smooth_perturbation(g, P)
    lap = P.lam ** 2 * diff(s.Vt, 2, g)
    np.testing.assert_allclose(lap[1:-1], s.nt[1:-1], atol=1e-12)
    assert abs(s.Vt[0]) < 1e-13 and abs(s.Vt[-1]) < 1e-13


def test_zero_perturbation_stays_zero(small_stable_steady):
    g = small_stable_steady.grid
    tr = evolve(PerturbationState.zero(g), small_stable_steady.fields(), P, g, 0.05, 1e-4, 50)
    assert all(np.all(a == 0) for a in tr.final.fields)
    assert len(tr) == 11 and not tr.truncated


def test_heat_mode_matches_analytic_decay():
    g = Grid(101)
    z = np.zeros(g.N)
    init = PerturbationState.from_fields(np.sin(np.pi * g.x), z, z, P, g)
    tr = evolve(init, SteadyFields.trivial(g), P, g, 0.1, 1e-4, 1000, frozen=("J", "E"))
    exact = np.exp(-P.nu * np.pi ** 2 * 0.1) * np.sin(np.pi * g.x)
    assert np.max(np.abs(tr.final.nt - exact)) < 2e-5
    assert np.all(tr.final.Jt == 0) and np.all(tr.final.Et == 0)


@pytest.mark.parametrize("closure", sorted(BIHARMONIC_CLOSURES))
def test_biharmonic_closures_are_positive(closure):
    g = Grid(31)
    B = biharmonic(g, closure).toarray()[1:-1, 1:-1]
    assert np.min(np.linalg.eigvals(B).real) > 0


def test_linear_operator_is_dissipative():
    g = Grid(41)
    st = ImexStepper(SteadyFields.trivial(g), P.with_(sigma=1e-3), g, 1e-3)
    A = st.A.toarray()
    keep = [k for k in range(A.shape[0]) if k not in set(st._fixed_rows())]
    ev = np.linalg.eigvals(A[np.ix_(keep, keep)])
    assert np.max(ev.real) < 0


def test_stepper_validation():
    g = Grid(21)
    with pytest.raises(ValidationError):
        ImexStepper(SteadyFields.trivial(g), P, g, dt=0.0)
    with pytest.raises(ValidationError):
        ImexStepper(SteadyFields.trivial(g), P, g, frozen=("V",))
    with pytest.raises(ValidationError):
        evolve(PerturbationState.zero(g), SteadyFields.trivial(g), P, g, 0.0)


def test_density_collapse_truncates():
    g = Grid(101)
    z = np.zeros(g.N)
    s = np.sin(np.pi * g.x)
    weak = ModelParams(nu=0.1, epsilon=0.1)
    init = PerturbationState.from_fields(z, 60 * s ** 3 * np.cos(np.pi * g.x), z, weak, g)
    tr = evolve(init, SteadyFields.trivial(g), weak, g, 0.1, 1e-4, 10)
    assert tr.truncated and tr.failure.startswith("density_collapse")
    assert len(tr) >= 1


def test_norms_and_composite_homogeneity():
    g = Grid(101)
    s = random_perturbation(g, P, seed=3)
    c1 = composite_from_norms(perturbation_norms(s, g), P)
    c2 = composite_from_norms(perturbation_norms(s.scaled(2.0), g), P)
    assert c2 == pytest.approx(4 * c1, rel=1e-12)
    t = scale_to_composite(s, 1e-6, P, g)
    assert composite_from_norms(perturbation_norms(t, g), P) == pytest.approx(1e-6, rel=1e-12)
    with pytest.raises(ValidationError):
        scale_to_composite(PerturbationState.zero(g), 1.0, P, g)


def test_random_perturbation_seeded():
    g = Grid(41)
    a, b = random_perturbation(g, P, 5), random_perturbation(g, P, 5)
    assert all(np.array_equal(x, y) for x, y in zip(a.fields, b.fields))
    c = random_perturbation(g, P, 6)
    assert not np.array_equal(a.nt, c.nt)


def test_energies():
    g = Grid(61)
    s = smooth_perturbation(g, P)
    sf = SteadyFields.trivial(g)
    w = EnergyWeights.initial(sf, s)
    e0, e1 = upsilon_energy(s, w, 0, P, g), upsilon_energy(s, w, 1, P, g)
    assert 0 < e0 < e1
    w0 = EnergyWeights.initial(sf, PerturbationState.zero(g))
    with pytest.raises(ZeroBeta1):
        upsilon_energy(s, w0, 2, P, g)
    assert upsilon_energy(s, w, 2, P, g) > e1
    with pytest.raises(ValidationError):
        upsilon_energy(s, w, 3, P, g)


def test_fit_decay_rate_synthetic():
    t = np.linspace(0, 2, 41)
    rate, r2 = fit_decay_rate(t, 3.0 * np.exp(-1.7 * t))
    assert rate == pytest.approx(1.7, rel=1e-10) and r2 == pytest.approx(1.0)
    with pytest.raises(InsufficientSamples):
        fit_decay_rate(t[:12], np.exp(-t[:12]))
    with pytest.raises(NonPositiveNorm):
        fit_decay_rate(t, np.zeros_like(t))
    with pytest.raises(ValidationError):
        fit_decay_rate(t, np.exp(-t), tail_fraction=0.0)


def test_composite_monotone_after_transient(small_stable_steady):
    g = small_stable_steady.grid
    params = P.with_(sigma=default_sigma(g))
    init = scale_to_composite(smooth_perturbation(g, params), 1e-6, params, g)
    tr = evolve(init, small_stable_steady.fields(), params, g, 1.5, 1e-4, 1000)
    comp = tr.composite
    assert np.all(np.diff(comp[5:]) < 0)
    assert comp[-1] < comp[0]


def test_sigma_study_validation(small_stable_steady):
    g = small_stable_steady.grid
    with pytest.raises(ValidationError):
        sigma_study(PerturbationState.zero(g), small_stable_steady.fields(), P, g, (1e-3, 1e-2), 0.01)
    with pytest.raises(ValidationError):
        sigma_study(PerturbationState.zero(g), small_stable_steady.fields(), P, g, (1e-2, 0.0), 0.01)


def test_uniqueness_probe_identical_and_separated(small_stable_steady):
    g = small_stable_steady.grid
    params = P.with_(sigma=default_sigma(g))
    a = scale_to_composite(smooth_perturbation(g, params), 1e-6, params, g)
    same = uniqueness_probe(a, a, small_stable_steady.fields(), params, g, 0.05, 1e-4, 50)
    assert np.all(same.separation == 0) and same.growth_exponent() == 0.0
    bump = 1e-8 * np.sin(np.pi * g.x) ** 4
    b = PerturbationState.from_fields(a.nt + bump, a.Jt, a.Et, params, g)
    tr = uniqueness_probe(a, b, small_stable_steady.fields(), params, g, 0.5, 1e-4, 50)
    assert tr.separation[0] == pytest.approx(separation_energy(a.minus(b), params, g))
    assert tr.separation[-1] < tr.separation[0]
    assert tr.growth_exponent() < 1.0
