"""Time integration of the perturbation system around a steady state.

Unknowns ``(n, J, E)`` of the perturbation are advanced by a first-order
IMEX step: the linear block is implicit (one sparse 3N solve, factored once),
the nonlinear forcings and the potential coupling ``n* V_x`` are explicit,
and the potential is refreshed by a Dirichlet Poisson solve afterwards.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (DegenerateDensity, DensityCollapse, InsufficientSamples,
                     LinearSolveFailure, NonPositiveNorm, ValidationError, ZeroBeta1)
from .grid import Grid, diff, solve_poisson, sobolev_norm, sobolev_norm_sq
from .model import ModelParams, SteadyFields, forcing_g

NORM_FLOOR = 1e-30
MIN_TAIL_SAMPLES = 10
DEFAULT_DT = 1e-4
DEFAULT_SAMPLE_EVERY = 100
DEFAULT_TAIL_FRACTION = 0.5
COMPONENTS = ("n", "J", "E")


def default_sigma(grid: Grid) -> float:
    return 1e-4 * grid.h ** 2


@dataclass(frozen=True)
class PerturbationState:
    nt: np.ndarray
    Jt: np.ndarray
    Et: np.ndarray
    Vt: np.ndarray
    t: float = 0.0

    @classmethod
    def zero(cls, grid: Grid) -> "PerturbationState":
        z = np.zeros(grid.N)
        return cls(z, z.copy(), z.copy(), z.copy())

    @classmethod
    def from_fields(cls, nt, Jt, Et, params: ModelParams, grid: Grid, t: float = 0.0) -> "PerturbationState":
        """Build a state whose potential solves the perturbation Poisson row."""
        nt = np.asarray(nt, dtype=float)
        Vt, _ = solve_poisson(nt, params.lam, 0.0, 0.0, grid)
        return cls(nt, np.asarray(Jt, dtype=float), np.asarray(Et, dtype=float), Vt, t)

    @property
    def fields(self):
        return self.nt, self.Jt, self.Et, self.Vt

    def scaled(self, s: float) -> "PerturbationState":
        return replace(self, nt=s * self.nt, Jt=s * self.Jt, Et=s * self.Et, Vt=s * self.Vt)

    def minus(self, other: "PerturbationState") -> "PerturbationState":
        return PerturbationState(*(a - b for a, b in zip(self.fields, other.fields)), t=self.t)


@dataclass(frozen=True)
class EnergyWeights:
    """Running extrema: ``gamma1 = min(n* + n)``, ``beta1 = max|J* + J|``."""

    gamma1: float
    beta1: float

    @classmethod
    def initial(cls, steady: SteadyFields, state: PerturbationState) -> "EnergyWeights":
        return cls(np.inf, 0.0).update(steady, state)

    def update(self, steady: SteadyFields, state: PerturbationState) -> "EnergyWeights":
        g = min(self.gamma1, float(np.min(steady.n + state.nt)))
        b = max(self.beta1, float(np.max(np.abs(steady.J + state.Jt))))
        return EnergyWeights(g, b)


def perturbation_norms(state: PerturbationState, grid: Grid) -> dict:
    return {
        "H3_n": sobolev_norm(state.nt, 3, grid),
        "H2_J": sobolev_norm(state.Jt, 2, grid),
        "H2_E": sobolev_norm(state.Et, 2, grid),
        "H5_V": sobolev_norm(state.Vt, 5, grid),
    }


def composite_from_norms(norms: dict, params: ModelParams) -> float:
    return (norms["H3_n"] ** 2 + norms["H2_J"] ** 2 + norms["H2_E"] ** 2
            + params.lam ** 2 * norms["H5_V"] ** 2)


def upsilon_energy(state: PerturbationState, weights: EnergyWeights, k: int, params: ModelParams,
                   grid: Grid) -> float:
    """Weighted energy of order ``k``; the energy component uses ``2/(3 mu)``."""
    if k not in (0, 1, 2):
        raise ValidationError("energy order must be 0, 1 or 2")
    if not params.mu > 0:
        raise ValidationError("the weighted energies need mu > 0")
    mu, e2 = params.mu, params.epsilon ** 2
    val = (mu * sobolev_norm_sq(state.nt, k, grid)
           + e2 / 18 * sobolev_norm_sq(diff(state.nt, 1, grid), k, grid)
           + sobolev_norm_sq(state.Jt, k, grid))
    w = 2 / (3 * mu)
    if k < 2:
        return val + w * sobolev_norm_sq(state.Et, k, grid)
    if not weights.beta1 > 0:
        raise ZeroBeta1("second-order energy needs a nonzero current bound")
    Exx = diff(state.Et, 2, grid)
    return (val + w * sobolev_norm_sq(state.Et, 1, grid)
            + 18 * params.nu ** 2 * weights.gamma1 / (e2 * weights.beta1) * grid.integrate(Exx ** 2))


# Ghost-point closures of the fourth difference at the node next to a
# boundary where u = 0: diagonal and first off-diagonal entries (times h^4).
BIHARMONIC_CLOSURES = {
    "clamped": (7.0, -4.0),  # u_x = 0, ghost u_{-1} = u_1
    "hinged": (5.0, -4.0),   # u_xx = 0, ghost u_{-1} = -u_1
    "third": (3.0, -3.0),    # u_xxx = 0, ghost u_{-1} = u_2 - 3 u_1
}
# Second boundary condition of the regularized problem per component: the
# highest derivative fixed by the boundary data, so that the sigma -> 0
# boundary layer stays small in the norm measured for that component.
SIGMA_CLOSURE = {"n": "third", "J": "hinged", "E": "hinged"}


def biharmonic(grid: Grid, closure: str = "hinged") -> sp.csr_matrix:
    """Centered fourth difference with ``u = 0`` and a ghost closure at both ends.

    Boundary rows are left empty (they carry Dirichlet conditions).
    """
    diag1, off1 = BIHARMONIC_CLOSURES[closure]
    N, h4 = grid.N, grid.h ** 4
    main = np.full(N, 6.0)
    main[1] = main[-2] = diag1
    main[0] = main[-1] = 0.0
    up1 = np.full(N - 1, -4.0)
    up1[0] = 0.0
    up1[1] = off1
    lo1 = np.full(N - 1, -4.0)
    lo1[-1] = 0.0
    lo1[-2] = off1
    up2 = np.ones(N - 2)
    up2[0] = 0.0
    lo2 = np.ones(N - 2)
    lo2[-1] = 0.0
    return (sp.diags([lo2, lo1, main, up1, up2], [-2, -1, 0, 1, 2], shape=(N, N)) / h4).tocsr()


class ImexStepper:
    """First-order IMEX stepper for a fixed steady state, ``dt`` and parameters.

    ``frozen`` lists components (``"n"``, ``"J"``, ``"E"``) held at their
    current values; used to isolate sub-equations in verification runs.
    """

    def __init__(self, steady: SteadyFields, params: ModelParams, grid: Grid, dt: float = DEFAULT_DT,
                 frozen=()):
        if not dt > 0:
            raise ValidationError("dt must be positive")
        bad = set(frozen) - set(COMPONENTS)
        if bad:
            raise ValidationError(f"unknown frozen components {sorted(bad)}")
        self.steady, self.params, self.grid, self.dt = steady, params, grid, float(dt)
        self.frozen = tuple(c for c in COMPONENTS if c in frozen)
        self.A = self.linear_operator()
        M = (sp.identity(3 * grid.N, format="csr") - self.dt * self.A).tolil()
        for k in self._fixed_rows():
            M.rows[k] = [k]
            M.data[k] = [1.0]
        try:
            self._lu = spla.splu(M.tocsc())
        except RuntimeError as exc:
            raise LinearSolveFailure(str(exc)) from exc

    def linear_operator(self) -> sp.csr_matrix:
        """Implicit linear part ``A`` of ``u_t = A u + b`` in interleaved ordering."""
        g, P = self.grid, self.params
        N = g.N
        D1, D2, D3 = (g.diff_matrix(k) for k in (1, 2, 3))
        I = sp.identity(N, format="csr")
        diffusion = {c: P.nu * D2 for c in COMPONENTS}
        if P.sigma > 0:
            for c in COMPONENTS:
                diffusion[c] = diffusion[c] - P.sigma * biharmonic(g, SIGMA_CLOSURE[c])
        e2 = P.epsilon ** 2
        blocks = [
            [diffusion["n"], -D1, None],
            [e2 / 18 * D3 - P.mu * D1, diffusion["J"] - I / P.tau, -(2 / 3) * D1],
            [(3 / P.tau) * I, -(P.mu + 2.5) * D1, diffusion["E"] - (2 / P.tau) * I],
        ]
        A = sp.bmat(blocks, format="csr")
        perm = (np.arange(3)[None, :] * N + np.arange(N)[:, None]).ravel()
        return A[perm][:, perm].tocsr()

    def _fixed_rows(self):
        N = self.grid.N
        rows = []
        for c in range(3):
            if COMPONENTS[c] in self.frozen:
                rows.extend(3 * i + c for i in range(N))
            else:
                rows.extend((c, 3 * (N - 1) + c))
        return rows

    def explicit_part(self, state: PerturbationState):
        """Forcings plus the potential coupling, from the previous step."""
        g1, g2 = forcing_g(self.steady, state.fields, self.params, self.grid)
        return g1 + self.steady.n * diff(state.Vt, 1, self.grid), g2

    def step(self, state: PerturbationState) -> PerturbationState:
        N, dt = self.grid.N, self.dt
        try:
            bJ, bE = self.explicit_part(state)
        except DegenerateDensity as exc:
            raise DensityCollapse(str(exc)) from exc
        u = np.column_stack([state.nt, state.Jt, state.Et]).ravel()
        rhs = u + dt * np.column_stack([np.zeros(N), bJ, bE]).ravel()
        for k in self._fixed_rows():
            rhs[k] = u[k] if COMPONENTS[k % 3] in self.frozen else 0.0
        new = self._lu.solve(rhs)
        if not np.all(np.isfinite(new)):
            raise LinearSolveFailure("non-finite values after the implicit solve")
        nt, Jt, Et = (np.ascontiguousarray(new[c::3]) for c in range(3))
        if not np.all(self.steady.n + nt > 0):
            raise DensityCollapse(f"density collapsed at t={state.t + dt:.6g}")
        Vt, _ = solve_poisson(nt, self.params.lam, 0.0, 0.0, self.grid)
        return PerturbationState(nt, Jt, Et, Vt, state.t + dt)


def step(state: PerturbationState, dt: float, steady: SteadyFields, params: ModelParams,
         grid: Grid) -> PerturbationState:
    """Single IMEX step; builds a fresh stepper (use :class:`ImexStepper` in loops)."""
    return ImexStepper(steady, params, grid, dt).step(state)


RECORD_KEYS = ("H3_n", "H2_J", "H2_E", "H5_V", "composite", "upsilon0", "upsilon1", "upsilon2",
               "delta_running")


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    records: list = field(default_factory=list)
    truncated: bool = False
    failure: str = ""
    final: PerturbationState | None = None
    states: list = field(default_factory=list)

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.records])

    @property
    def composite(self) -> np.ndarray:
        return self.column("composite")

    def __len__(self):
        return len(self.times)


def _record(state, weights, params, grid, delta_prev):
    norms = perturbation_norms(state, grid)
    rec = dict(norms)
    rec["composite"] = composite_from_norms(norms, params)
    rec["upsilon0"] = upsilon_energy(state, weights, 0, params, grid)
    rec["upsilon1"] = upsilon_energy(state, weights, 1, params, grid)
    try:
        rec["upsilon2"] = upsilon_energy(state, weights, 2, params, grid)
    except ZeroBeta1:
        rec["upsilon2"] = rec["upsilon1"]
    inner = norms["H3_n"] ** 2 + norms["H2_J"] ** 2 + norms["H2_E"] ** 2
    rec["delta_running"] = max(delta_prev, inner)
    return rec


def evolve(init: PerturbationState, steady: SteadyFields, params: ModelParams, grid: Grid, T: float,
           dt: float = DEFAULT_DT, sample_every: int = DEFAULT_SAMPLE_EVERY, frozen=(),
           keep_states: bool = False, stepper: ImexStepper | None = None) -> Trajectory:
    """Integrate to time ``T``, sampling every ``sample_every`` steps.

    On density collapse or a failed solve the partial trajectory is returned
    with ``truncated`` set.
    """
    if not T > 0:
        raise ValidationError("horizon T must be positive")
    if int(sample_every) < 1:
        raise ValidationError("sample_every must be a positive integer")
    stepper = stepper or ImexStepper(steady, params, grid, dt, frozen)
    nsteps = int(round(T / dt))
    traj = Trajectory()
    state = init
    weights = EnergyWeights.initial(steady, state)
    mu_ok = params.mu > 0

    def sample(s):
        if mu_ok:
            rec = _record(s, weights, params, grid, traj.records[-1]["delta_running"] if traj.records else 0.0)
        else:
            rec = {k: float("nan") for k in RECORD_KEYS}
            rec.update(perturbation_norms(s, grid))
            rec["composite"] = composite_from_norms(rec, params)
        traj.times.append(s.t)
        traj.records.append(rec)
        if keep_states:
            traj.states.append(s)

    sample(state)
    for k in range(1, nsteps + 1):
        try:
            state = stepper.step(state)
        except (DensityCollapse, LinearSolveFailure) as exc:
            traj.truncated, traj.failure = True, f"{exc.code}: {exc}"
            break
        # use the exact step count for the time to avoid accumulated round-off
        state = replace(state, t=k * dt)
        weights = weights.update(steady, state)
        if k % sample_every == 0 or k == nsteps:
            sample(state)
    traj.final = state
    return traj


def fit_decay_rate(traj_or_times, norms=None, tail_fraction: float = DEFAULT_TAIL_FRACTION):
    """Least-squares slope of ``log(composite)`` against time over the tail.

    Returns ``(rate, r_squared)`` with ``rate = -slope``.
    """
    if norms is None:
        times, norms = np.asarray(traj_or_times.times, float), traj_or_times.composite
    else:
        times, norms = np.asarray(traj_or_times, float), np.asarray(norms, float)
    if not 0 < tail_fraction <= 1:
        raise ValidationError("tail_fraction must lie in (0, 1]")
    start = int(np.floor(len(times) * (1 - tail_fraction)))
    t, y = times[start:], norms[start:]
    if len(t) < MIN_TAIL_SAMPLES:
        raise InsufficientSamples(f"{len(t)} samples in the tail window, need {MIN_TAIL_SAMPLES}")
    if np.any(~(y > NORM_FLOOR)):
        raise NonPositiveNorm("composite norm at or below the floor in the tail window")
    ly = np.log(y)
    A = np.column_stack([t, np.ones_like(t)])
    (slope, icept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (slope * t + icept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(-slope), r2


def smooth_perturbation(grid: Grid, params: ModelParams, coeffs=(1.0, 0.1, 1.5)) -> PerturbationState:
    """Smooth perturbation meeting the boundary data of the evolution problem.

    ``n, E ~ sin^4`` and ``J ~ sin^3 cos`` so their low derivatives vanish at
    both ends.  The default keeps ``E = 1.5 n``, the local equilibrium of the
    relaxation terms.
    """
    x = grid.x
    s = np.sin(np.pi * x)
    cn, cJ, cE = coeffs
    nt = cn * s ** 4
    Jt = cJ * s ** 3 * np.cos(np.pi * x)
    Et = cE * s ** 4
    return PerturbationState.from_fields(nt, Jt, Et, params, grid)


def random_perturbation(grid: Grid, params: ModelParams, seed: int, modes: int = 3) -> PerturbationState:
    rng = np.random.default_rng(seed)
    x = grid.x
    s = np.sin(np.pi * x)
    basis = np.array([np.cos(2 * np.pi * j * x) for j in range(modes)])
    c = rng.standard_normal((3, modes))
    return PerturbationState.from_fields(s ** 4 * (c[0] @ basis), s ** 3 * (c[1] @ basis),
                                         s ** 3 * (c[2] @ basis), params, grid)


def scale_to_composite(state: PerturbationState, target: float, params: ModelParams,
                       grid: Grid) -> PerturbationState:
    c = composite_from_norms(perturbation_norms(state, grid), params)
    if c <= 0:
        raise ValidationError("cannot rescale a zero perturbation")
    return state.scaled(np.sqrt(target / c))


def run_pair(init_a, init_b, steady, params, grid, T, dt, sample_every, frozen=()):
    """Evolve two states with one shared factorization; returns both state lists."""
    stepper = ImexStepper(steady, params, grid, dt, frozen)
    ta = evolve(init_a, steady, params, grid, T, dt, sample_every, keep_states=True, stepper=stepper)
    tb = evolve(init_b, steady, params, grid, T, dt, sample_every, keep_states=True, stepper=stepper)
    return ta, tb


@dataclass(frozen=True)
class SigmaStudy:
    sigmas: tuple
    gaps: tuple           # sup difference between consecutive sigma members
    zero_gap: float | None  # smallest sigma against sigma = 0, if requested
    trajectories: tuple = field(default=(), compare=False)

    def decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.gaps, self.gaps[1:]))


def _sup_difference(ta: Trajectory, tb: Trajectory, params, grid) -> float:
    n = min(len(ta.states), len(tb.states))
    return max(composite_from_norms(perturbation_norms(a.minus(b), grid), params)
               for a, b in zip(ta.states[:n], tb.states[:n]))


def sigma_study(init: PerturbationState, steady: SteadyFields, params: ModelParams, grid: Grid,
                sigmas, T: float, dt: float = DEFAULT_DT, sample_every: int = DEFAULT_SAMPLE_EVERY,
                compare_zero: bool = True) -> SigmaStudy:
    """Run one trajectory per sigma and tabulate sup-in-time composite differences."""
    sigmas = tuple(float(s) for s in sigmas)
    if any(b >= a for a, b in zip(sigmas, sigmas[1:])) or sigmas[-1] <= 0:
        raise ValidationError("sigmas must decrease strictly to a positive floor")
    runs = [evolve(init, steady, params.with_(sigma=s), grid, T, dt, sample_every, keep_states=True)
            for s in sigmas]
    gaps = tuple(_sup_difference(a, b, params, grid) for a, b in zip(runs, runs[1:]))
    zero_gap = None
    if compare_zero:
        z = evolve(init, steady, params.with_(sigma=0.0), grid, T, dt, sample_every, keep_states=True)
        zero_gap = _sup_difference(runs[-1], z, params, grid)
        runs.append(z)
    return SigmaStudy(sigmas, gaps, zero_gap, tuple(runs))


def separation_energy(diff_state: PerturbationState, params: ModelParams, grid: Grid, xi: float = 1.0) -> float:
    """``mu|n|^2 + (eps^2/18)|n_x|^2 + |J|^2 + xi |E|^2`` with L2 norms."""
    return (params.mu * sobolev_norm_sq(diff_state.nt, 0, grid)
            + params.epsilon ** 2 / 18 * sobolev_norm_sq(diff(diff_state.nt, 1, grid), 0, grid)
            + sobolev_norm_sq(diff_state.Jt, 0, grid) + xi * sobolev_norm_sq(diff_state.Et, 0, grid))


@dataclass(frozen=True)
class SeparationTrace:
    times: np.ndarray
    separation: np.ndarray
    truncated: bool

    def growth_exponent(self) -> float:
        """Smallest ``C`` with ``sep(t) <= sep(0) e^{C t}`` on the samples."""
        s0 = self.separation[0]
        if s0 == 0:
            return 0.0 if np.all(self.separation == 0) else np.inf
        t, s = self.times[1:], self.separation[1:]
        with np.errstate(divide="ignore"):
            rates = np.log(np.maximum(s, NORM_FLOOR) / s0) / t
        return float(np.max(rates)) if len(rates) else 0.0


def uniqueness_probe(init_a: PerturbationState, init_b: PerturbationState, steady: SteadyFields,
                     params: ModelParams, grid: Grid, T: float, dt: float = DEFAULT_DT,
                     sample_every: int = DEFAULT_SAMPLE_EVERY, xi: float = 1.0) -> SeparationTrace:
    ta, tb = run_pair(init_a, init_b, steady, params, grid, T, dt, sample_every)
    n = min(len(ta.states), len(tb.states))
    sep = np.array([separation_energy(a.minus(b), params, grid, xi)
                    for a, b in zip(ta.states[:n], tb.states[:n])])
    return SeparationTrace(np.array(ta.times[:n]), sep, ta.truncated or tb.truncated)
