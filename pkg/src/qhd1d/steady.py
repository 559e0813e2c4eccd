"""Steady states by a contraction iteration on the shifted unknowns
``w = (p, q, r, V)`` with ``p = n - rho``, ``q = J - J_b``, ``r = E - 1.5 rho``.

Unknowns are interleaved per node, ``index = 4 * i + component``, so every
assembled operator is banded.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import (ContinuationStalled, DegenerateDensity, DivergedIteration,
                     MaxIterExceeded, NumericalFailure, SingularSystem, ZeroDelta0)
from .grid import Grid, diff, sobolev_norm, sobolev_norm_sq
from .model import (DopingProfile, FullState, ModelParams, SteadyFields, nonlinear_f,
                    quantum_fixed_point_term, residual_full, steady_coeffs, steady_residual)

NCOMP = 4
DEFAULT_TOL = 1e-10
GROWTH_LIMIT = 3
THETA_FLOOR = 1.0 / 64
ROUNDOFF_FLOOR = 1e-11


def interleave(p, q, r, V) -> np.ndarray:
    return np.column_stack([p, q, r, V]).ravel()


def split(w):
    w = np.asarray(w).reshape(-1, NCOMP)
    return tuple(np.ascontiguousarray(w[:, c]) for c in range(NCOMP))


@dataclass(frozen=True)
class BandedSystem:
    """Sparse square matrix with known band limits; solved by band elimination."""

    matrix: sp.csr_matrix

    @cached_property
    def bands(self):
        A = self.matrix.tocoo()
        off = A.col - A.row
        return int(max(0, -off.min())), int(max(0, off.max()))

    @cached_property
    def _ab(self):
        lo, up = self.bands
        A = self.matrix.tocoo()
        ab = np.zeros((lo + up + 1, A.shape[0]))
        ab[up + A.row - A.col, A.col] = A.data
        return ab

    def apply(self, w) -> np.ndarray:
        return self.matrix @ w

    def solve(self, rhs) -> np.ndarray:
        try:
            w = scipy.linalg.solve_banded(self.bands, self._ab, rhs, check_finite=False)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SingularSystem(str(exc)) from exc
        if not np.all(np.isfinite(w)):
            raise SingularSystem("non-finite solution of the banded system")
        return w

    def blend(self, other: "BandedSystem", theta: float) -> "BandedSystem":
        return BandedSystem((theta * self.matrix + (1 - theta) * other.matrix).tocsr())


def _assemble(blocks, N: int) -> BandedSystem:
    """Interleave a 4x4 table of N x N blocks and impose Dirichlet rows."""
    rows = []
    for a in range(NCOMP):
        rows.append([blocks.get((a, b)) if blocks.get((a, b)) is not None else sp.csr_matrix((N, N))
                     for b in range(NCOMP)])
    A = sp.bmat(rows, format="lil")
    perm = (np.arange(NCOMP)[None, :] * N + np.arange(N)[:, None]).ravel()
    A = A.tocsr()[perm][:, perm].tolil()
    for a in range(NCOMP):
        for i in (0, N - 1):
            k = NCOMP * i + a
            A.rows[k] = [k]
            A.data[k] = [1.0]
    return BandedSystem(A.tocsr())


def assemble_L(grid: Grid, profile: DopingProfile, params: ModelParams) -> BandedSystem:
    """Linear operator of the shifted steady system, Dirichlet rows included."""
    c = steady_coeffs(grid, profile, params)
    D1, D2 = grid.diff_matrix(1), grid.diff_matrix(2)
    diag = sp.diags
    rho = profile.deriv(grid.x)
    nu, e2 = params.nu, params.epsilon ** 2
    I = sp.identity(grid.N, format="csr")
    blocks = {
        (0, 0): -nu * D2, (0, 1): D1,
        (1, 0): diag(c.c2) + diag(c.d2) @ D1,
        (1, 1): -(nu + e2 / (18 * nu)) * D2 + diag(c.b2) + diag(c.e2) @ D1,
        (1, 2): (2 / 3) * D1,
        (1, 3): -diag(rho) @ D1,
        (2, 0): diag(c.c3) + diag(c.d3) @ D1,
        (2, 1): diag(c.h3) + diag(c.e3) @ D1,
        (2, 2): -nu * D2 + diag(c.b3) + diag(5 / 3 * params.J_b / rho) @ D1,
        (2, 3): -params.J_b * D1,
        (3, 0): I,
        (3, 3): -params.lam ** 2 * D2,
    }
    return _assemble(blocks, grid.N)


def assemble_L0(grid: Grid) -> BandedSystem:
    """``-w_xx + w`` on every component with the same Dirichlet rows."""
    M = -grid.diff_matrix(2) + sp.identity(grid.N, format="csr")
    return _assemble({(a, a): M for a in range(NCOMP)}, grid.N)


def assemble_L_theta(theta: float, grid: Grid, profile: DopingProfile, params: ModelParams) -> BandedSystem:
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    L = assemble_L(grid, profile, params)
    if theta == 1.0:
        return L
    return L.blend(assemble_L0(grid), theta)


def boundary_data(grid: Grid, params: ModelParams) -> np.ndarray:
    b = np.zeros(NCOMP * grid.N)
    b[NCOMP * (grid.N - 1) + 3] = params.V_b
    return b


def picard_rhs(u, grid: Grid, profile: DopingProfile, params: ModelParams, coeffs=None) -> np.ndarray:
    """Right-hand side of the fixed-point map evaluated at the iterate ``u``."""
    p, q, r, V = split(u)
    c = coeffs if coeffs is not None else steady_coeffs(grid, profile, params)
    f2, f3 = nonlinear_f(p, q, r, diff(V, 1, grid), profile, params, grid)
    F = interleave(c.a1, c.a2 + f2, c.a3 + f3 + quantum_fixed_point_term(p, q, profile, params, grid),
                   np.zeros(grid.N))
    bd = boundary_data(grid, params)
    for i in (0, grid.N - 1):
        F[NCOMP * i:NCOMP * i + NCOMP] = bd[NCOMP * i:NCOMP * i + NCOMP]
    return F


def iteration_norm(w, grid: Grid) -> float:
    """Composite discrete H^2 norm over the four components."""
    return float(np.sqrt(sum(sobolev_norm_sq(c, 2, grid) for c in split(w))))


@dataclass(frozen=True)
class SteadyState:
    grid: Grid
    profile: DopingProfile
    params: ModelParams
    p: np.ndarray
    q: np.ndarray
    r: np.ndarray
    V: np.ndarray
    iterations: int = 0
    update_norm: float = 0.0
    contraction_factors: tuple = ()
    method: str = "picard"
    tol: float = DEFAULT_TOL
    history: tuple = field(default=(), compare=False)

    @property
    def rho(self):
        return self.profile.deriv(self.grid.x)

    @property
    def n(self):
        return self.rho + self.p

    @property
    def J(self):
        return self.params.J_b + self.q

    @property
    def E(self):
        return 1.5 * self.rho + self.r

    @property
    def w(self) -> np.ndarray:
        return interleave(self.p, self.q, self.r, self.V)

    def full_state(self) -> FullState:
        return FullState(self.n, self.J, self.E, self.V)

    def fields(self) -> SteadyFields:
        x = self.grid.x
        return SteadyFields(
            n=self.n,
            n_x=self.profile.deriv(x, 1) + diff(self.p, 1, self.grid),
            n_xx=self.profile.deriv(x, 2) + diff(self.p, 2, self.grid),
            J=self.J, E=self.E, V_x=diff(self.V, 1, self.grid),
        )

    @classmethod
    def from_w(cls, w, grid, profile, params, **kw) -> "SteadyState":
        p, q, r, V = split(w)
        return cls(grid, profile, params, p, q, r, V, **kw)

    def neumann_residuals(self):
        Vx = diff(self.V, 1, self.grid)
        return float(Vx[0]), float(Vx[-1])

    def relation_defect(self) -> float:
        """``max |q - nu p_x|``."""
        return float(np.max(np.abs(self.q - self.params.nu * diff(self.p, 1, self.grid))))

    def flux_defect(self) -> float:
        """Spread of the discrete first integral of the continuity row.

        On solutions ``q - nu p_x - nu rho_x`` is constant.  The midpoint form
        below, with ``rho_x`` accumulated from the nodal ``rho''`` the row
        uses, is constant to round-off for the assembled discretization.
        """
        h, nu = self.grid.h, self.params.nu
        flux = 0.5 * (self.q[1:] + self.q[:-1]) - nu * (self.p[1:] - self.p[:-1]) / h
        rho_xx = self.profile.deriv(self.grid.x, 2)
        acc = np.concatenate([[0.0], np.cumsum(rho_xx[1:-1])]) * h * nu
        first_integral = flux - acc
        return float(np.max(first_integral) - np.min(first_integral))

    def residual_norms(self) -> dict:
        R = residual_full(self.full_state(), self.profile, self.params, self.grid)
        return {k: float(np.max(np.abs(v[1:-1]))) for k, v in zip(("n", "J", "E", "V"), R)}


def _check_density(w, rho):
    n = rho + w[0::NCOMP]
    if not np.all(n > 0):
        raise DegenerateDensity(f"iterate density not positive (min {float(np.min(n)):.3e})")


def _converged(delta: float, wnorm: float, tol: float) -> bool:
    return delta == 0.0 or delta <= tol * wnorm


def picard_solve(profile: DopingProfile, params: ModelParams, grid: Grid | None = None,
                 tol: float = DEFAULT_TOL, max_iter: int = 200, u0=None) -> SteadyState:
    """Iterate ``w = L^{-1} F(u)`` from ``u = 0`` (or ``u0``) to a fixed point."""
    grid = grid or Grid()
    if not tol > 0:
        raise ValueError("tol must be positive")
    L = assemble_L(grid, profile, params)
    coeffs = steady_coeffs(grid, profile, params)
    rho = profile.deriv(grid.x)
    u = np.zeros(NCOMP * grid.N) if u0 is None else np.asarray(u0, dtype=float).copy()
    deltas, factors = [], []
    growth = 0
    for it in range(1, max_iter + 1):
        w = L.solve(picard_rhs(u, grid, profile, params, coeffs))
        _check_density(w, rho)
        delta = iteration_norm(w - u, grid)
        if deltas:
            factors.append(delta / deltas[-1] if deltas[-1] > 0 else 0.0)
            growth = growth + 1 if delta > deltas[-1] else 0
        deltas.append(delta)
        if _converged(delta, iteration_norm(w, grid), tol):
            return SteadyState.from_w(w, grid, profile, params, iterations=it, update_norm=delta,
                                      contraction_factors=tuple(factors), method="picard", tol=tol,
                                      history=tuple(deltas))
        if growth >= GROWTH_LIMIT or not np.isfinite(delta):
            raise DivergedIteration(f"update norm grew for {GROWTH_LIMIT} consecutive steps at iteration {it}")
        u = w
    raise MaxIterExceeded(f"no convergence in {max_iter} iterations (last update {deltas[-1]:.3e})")


def _inner_continuation(u, theta, theta0, L0sys, Ldiff, grid, profile, params, coeffs, tol,
                        relax, max_inner):
    """Fixed-point iteration at level ``theta`` using the operator at ``theta0``.

    Solves ``L_theta w = theta F(w) + (1 - theta) b`` by iterating
    ``w = L_theta0^{-1} [G(u) + (theta0 - theta)(L - L0) u]`` with relaxation.
    """
    rho = profile.deriv(grid.x)
    bd = boundary_data(grid, params)
    deltas = []
    growth = 0
    for it in range(1, max_inner + 1):
        G = theta * picard_rhs(u, grid, profile, params, coeffs) + (1 - theta) * bd
        G += (theta0 - theta) * (Ldiff @ u)
        T = L0sys.solve(G)
        w = (1 - relax) * u + relax * T
        _check_density(w, rho)
        delta = iteration_norm(w - u, grid)
        if deltas:
            growth = growth + 1 if delta > deltas[-1] else 0
        deltas.append(delta)
        if _converged(delta, iteration_norm(w, grid), tol):
            return w, it, delta
        if growth >= GROWTH_LIMIT or not np.isfinite(delta):
            break
        u = w
    raise DivergedIteration(f"inner iteration failed at theta={theta:.6g}")


def continuation_solve(profile: DopingProfile, params: ModelParams, grid: Grid | None = None,
                       theta_step: float = 0.25, tol: float = DEFAULT_TOL,
                       relax_levels=(1.0, 0.5, 0.25), max_inner: int = 400) -> SteadyState:
    """March ``theta`` from 0 to 1, seeding each level with the previous solution.

    A failed level is retried with stronger relaxation, then with a halved
    theta step; the step may not drop below 1/64.
    """
    if not 0 < theta_step <= 1:
        raise ValueError("theta_step must lie in (0, 1]")
    grid = grid or Grid()
    L = assemble_L(grid, profile, params)
    L0 = assemble_L0(grid)
    Ldiff = (L.matrix - L0.matrix).tocsr()
    coeffs = steady_coeffs(grid, profile, params)
    # theta = 0: L0 w = b
    u = L0.solve(boundary_data(grid, params))
    theta0, step = 0.0, float(theta_step)
    total, levels, last_delta = 0, [], 0.0
    while theta0 < 1.0:
        theta = min(1.0, theta0 + step)
        L0sys = L.blend(L0, theta0)
        result = None
        for relax in relax_levels:
            try:
                result = _inner_continuation(u, theta, theta0, L0sys, Ldiff, grid, profile, params,
                                             coeffs, tol, relax, max_inner)
                break
            except (DivergedIteration, DegenerateDensity, SingularSystem):
                continue
        if result is None:
            step /= 2
            if step < THETA_FLOOR:
                raise ContinuationStalled(f"no progress beyond theta={theta0:.6g}")
            continue
        u, its, last_delta = result
        total += its
        levels.append(theta)
        theta0 = theta
    # polish at theta = 1 with the exact operator
    try:
        s = picard_solve(profile, params, grid, tol=tol, u0=u, max_iter=50)
        return SteadyState.from_w(s.w, grid, profile, params, iterations=total + s.iterations,
                                  update_norm=s.update_norm, contraction_factors=s.contraction_factors,
                                  method="continuation", tol=tol, history=tuple(levels))
    except NumericalFailure:
        return SteadyState.from_w(u, grid, profile, params, iterations=total, update_norm=last_delta,
                                  method="continuation", tol=tol, history=tuple(levels))


def solve_steady(profile: DopingProfile, params: ModelParams, grid: Grid | None = None,
                 tol: float = DEFAULT_TOL, max_iter: int = 200, theta_step: float = 0.25) -> SteadyState:
    """Picard first; continuation when the plain iteration diverges."""
    try:
        return picard_solve(profile, params, grid, tol=tol, max_iter=max_iter)
    except (DivergedIteration, DegenerateDensity, MaxIterExceeded):
        return continuation_solve(profile, params, grid, theta_step=theta_step, tol=tol)


def leading_contraction(steady: SteadyState, floor: float = ROUNDOFF_FLOOR) -> float:
    """First Picard contraction factor whose update is resolved above round-off.

    Later factors flatten once the update reaches ``floor * |w|``.
    """
    d = steady.history if steady.method == "picard" else ()
    scale = floor * iteration_norm(steady.w, steady.grid)
    for a, b in zip(d, d[1:]):
        if b > scale and a > 0:
            return b / a
    return float("nan")


def bound_numerator(steady: SteadyState) -> float:
    g = steady.grid
    return (sobolev_norm_sq(steady.p, 3, g) + sobolev_norm_sq(steady.q, 2, g)
            + sobolev_norm_sq(steady.r, 2, g) + sobolev_norm_sq(steady.V, 5, g))


def steady_bound_ratio(steady: SteadyState, profile: DopingProfile | None = None) -> float:
    profile = profile or steady.profile
    d0 = profile.delta0(steady.grid)
    if d0 == 0:
        raise ZeroDelta0("delta0 is zero; check the numerator directly")
    return bound_numerator(steady) / d0 ** 2


def newton_solve(profile: DopingProfile, params: ModelParams, grid: Grid | None = None,
                 tol: float = 1e-13, max_iter: int = 30, fd_step: float = 1e-7, w0=None) -> SteadyState:
    """Damped Newton on the stationary residual, finite-difference Jacobian.

    Independent of the contraction machinery: it never forms the linear
    operator or the remainders, only the residual itself.
    """
    grid = grid or Grid()
    w = np.zeros(NCOMP * grid.N) if w0 is None else np.asarray(w0, dtype=float).copy()

    def resid(v):
        return interleave(*steady_residual(*split(v), grid, profile, params))

    R = resid(w)
    for it in range(1, max_iter + 1):
        rn = float(np.max(np.abs(R)))
        Jac = np.empty((w.size, w.size))
        for j in range(w.size):
            e = fd_step * max(1.0, abs(w[j]))
            wp = w.copy()
            wp[j] += e
            Jac[:, j] = (resid(wp) - R) / e
        try:
            dw = np.linalg.solve(Jac, -R)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(str(exc)) from exc
        alpha = 1.0
        while True:
            trial = w + alpha * dw
            try:
                Rt = resid(trial)
                ok = float(np.max(np.abs(Rt))) <= (1 - 0.5 * alpha) * rn or rn == 0
            except DegenerateDensity:
                ok = False
            if ok or alpha < 1e-4:
                break
            alpha /= 2
        w, R = trial, Rt
        if float(np.max(np.abs(dw))) * alpha <= tol * max(1.0, float(np.max(np.abs(w)))):
            return SteadyState.from_w(w, grid, profile, params, iterations=it,
                                      update_norm=float(np.max(np.abs(dw))), method="newton")
    raise MaxIterExceeded("Newton iteration did not converge")
