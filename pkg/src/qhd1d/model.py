"""Model parameters, doping profiles and the closed-form expressions of the
viscous QHD-Poisson system: Bohm term, linearization coefficients around
``(rho, J_b, 1.5 rho)``, nonlinear remainders, perturbation forcings and
residuals of the stationary equations.

Sign convention: the residual of an equation is its left-hand side written as
``R(state) = 0``.  The nonlinear remainders satisfy ``L(w) = a + f(w)`` at a
steady state, so ``f = L(w) - a - R(w)``; the perturbation forcings satisfy
``g = Lin(pert) - [R(steady + pert) - R(steady)]``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from math import pi

import numpy as np
from numpy.polynomial import Polynomial

from .errors import DegenerateDensity, NonPositiveDensity, ValidationError
from .grid import Grid, diff, sobolev_norm

PROFILE_KINDS = ("constant", "sine", "bump")


@dataclass(frozen=True)
class ModelParams:
    nu: float = 0.1
    epsilon: float = 0.1
    tau: float = 1.0
    mu: float = 1.0
    lam: float = 0.5
    J_b: float = 0.0
    V_b: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        for name in ("nu", "epsilon", "tau", "lam"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValidationError(f"{name} must be positive and finite, got {v}")
        for name in ("mu", "J_b", "V_b", "sigma"):
            if not np.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")
        if self.sigma < 0:
            raise ValidationError("sigma must be non-negative")

    def with_(self, **kw) -> "ModelParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class DopingProfile:
    """Closed-form doping ``rho(x)`` with analytic derivatives.

    * ``constant``: ``rho_b``
    * ``sine``: ``rho_b + A sin^2(k pi x)``
    * ``bump``: ``rho_b + A x^4 (1-x)^4 s(x)``, ``s`` given by ``shape``
      (coefficients of ``1, x, x^2``)
    """

    kind: str = "constant"
    rho_b: float = 1.0
    amplitude: float = 0.0
    k: int = 1
    shape: tuple = (1.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ValidationError(f"unknown profile kind {self.kind!r}")
        if not self.rho_b > 0:
            raise NonPositiveDensity("boundary doping must be positive")
        if self.kind == "sine" and (int(self.k) != self.k or self.k < 1):
            raise ValidationError("sine profile needs a positive integer wavenumber")
        if self.kind == "bump" and len(self.shape) > 3:
            raise ValidationError("bump shape polynomial has degree at most 2")
        if self.min_value() <= 0:
            raise NonPositiveDensity("doping profile is not positive on [0, 1]")

    @classmethod
    def constant(cls, rho_b: float = 1.0) -> "DopingProfile":
        return cls("constant", rho_b)

    @classmethod
    def sine(cls, rho_b: float = 1.0, amplitude: float = 0.0, k: int = 1) -> "DopingProfile":
        return cls("sine", rho_b, amplitude, int(k))

    @classmethod
    def bump(cls, rho_b: float = 1.0, amplitude: float = 0.0, shape=(1.0,)) -> "DopingProfile":
        return cls("bump", rho_b, amplitude, 1, tuple(float(c) for c in shape))

    @property
    def _bump_poly(self) -> Polynomial:
        base = Polynomial([0, 1]) ** 4 * Polynomial([1, -1]) ** 4
        return self.amplitude * base * Polynomial(list(self.shape) or [0.0])

    def deriv(self, x, m: int = 0) -> np.ndarray:
        """``m``-th derivative of rho at ``x`` (``m = 0..5``)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full_like(x, self.rho_b if m == 0 else 0.0)
        if self.kind == "sine":
            # sin^2(u) = (1 - cos 2u)/2, u = k pi x
            w = 2 * pi * self.k
            half = 0.5 * self.amplitude
            phase = (np.cos, lambda z: -np.sin(z), lambda z: -np.cos(z), np.sin)[m % 4]
            val = -half * w ** m * phase(w * x)
            return val + (self.rho_b + half if m == 0 else 0.0)
        P = self._bump_poly.deriv(m) if m else self._bump_poly
        return P(x) + (self.rho_b if m == 0 else 0.0)

    def __call__(self, x) -> np.ndarray:
        return self.deriv(x, 0)

    def min_value(self) -> float:
        if self.kind == "constant":
            return self.rho_b
        if self.kind == "sine":
            return self.rho_b + min(0.0, self.amplitude)
        xs = np.linspace(0.0, 1.0, 4001)
        return float(np.min(self.deriv(xs)))

    def delta0(self, grid: Grid) -> float:
        """Discrete H^3 norm of rho_x on ``grid``."""
        return sobolev_norm(self.deriv(grid.x, 1), 3, grid)

    def with_delta0(self, target: float, grid: Grid) -> "DopingProfile":
        """Rescale the amplitude so that ``delta0(grid) == target``."""
        if self.kind == "constant":
            if target != 0:
                raise ValidationError("a constant profile has delta0 = 0")
            return self
        unit = replace(self, amplitude=1.0).delta0(grid)
        return replace(self, amplitude=target / unit)


@dataclass(frozen=True)
class FullState:
    n: np.ndarray
    J: np.ndarray
    E: np.ndarray
    V: np.ndarray


@dataclass(frozen=True)
class SteadyCoeffs:
    """Nodal coefficients of the linear operator around ``(rho, J_b, 1.5 rho)``.

    ``a1`` is the forcing of the continuity row, ``nu * rho''``.
    """

    a1: np.ndarray
    a2: np.ndarray
    b2: np.ndarray
    c2: np.ndarray
    d2: np.ndarray
    e2: np.ndarray
    a3: np.ndarray
    b3: np.ndarray
    c3: np.ndarray
    d3: np.ndarray
    e3: np.ndarray
    h3: np.ndarray


def _require_positive(n, exc=NonPositiveDensity):
    if not np.all(n > 0):
        raise exc(f"density not positive (min {float(np.min(n)):.3e})")


def bohm_term(n, params: ModelParams, grid: Grid) -> np.ndarray:
    """Bohm term ``(eps^2/9) n ((sqrt n)_xx / sqrt n)_x`` in expanded form."""
    n = np.asarray(n, dtype=float)
    _require_positive(n)
    n1, n2, n3 = (diff(n, k, grid) for k in (1, 2, 3))
    e2 = params.epsilon ** 2
    return e2 / 18 * n3 - e2 / 9 * n1 * n2 / n + e2 / 18 * n1 ** 3 / n ** 2


@dataclass(frozen=True)
class _Bundle:
    """Nodal values and derivatives of (n, J, E) around the doping profile."""

    rho: np.ndarray
    rho_x: np.ndarray
    rho_xx: np.ndarray
    n: np.ndarray
    n_x: np.ndarray
    n_xx: np.ndarray
    J: np.ndarray
    J_x: np.ndarray
    J_xx: np.ndarray
    E: np.ndarray
    E_x: np.ndarray
    E_xx: np.ndarray


def _bundle(p, q, r, grid: Grid, profile: DopingProfile, params: ModelParams) -> _Bundle:
    x = grid.x
    rho, rho_x, rho_xx = (profile.deriv(x, m) for m in range(3))
    p, q, r = (np.asarray(a, dtype=float) for a in (p, q, r))
    return _Bundle(
        rho, rho_x, rho_xx,
        rho + p, rho_x + diff(p, 1, grid), rho_xx + diff(p, 2, grid),
        params.J_b + q, diff(q, 1, grid), diff(q, 2, grid),
        1.5 * rho + r, 1.5 * rho_x + diff(r, 1, grid), 1.5 * rho_xx + diff(r, 2, grid),
    )


def _zero_bundle(b: _Bundle, J_b: float) -> _Bundle:
    z = np.zeros_like(b.rho)
    return _Bundle(b.rho, b.rho_x, b.rho_xx, b.rho, b.rho_x + z, b.rho_xx + z,
                   J_b + z, z, z, 1.5 * b.rho, 1.5 * b.rho_x + z, 1.5 * b.rho_xx + z)


# Nonlinear building blocks written with n_xx -> J_x/nu substituted, matching
# the reduced stationary momentum and energy rows.
def _conv_mom(b):  # (J^2/n)_x
    return 2 * b.J * b.J_x / b.n - b.J ** 2 * b.n_x / b.n ** 2


def _grad_prod(b):  # (n_x/n) J_x
    return b.n_x / b.n * b.J_x


def _cubic(b):  # n_x^3/n^2
    return b.n_x ** 3 / b.n ** 2


def _conv_energy(b):  # (J E/n)_x
    return (b.J_x * b.E + b.J * b.E_x) / b.n - b.J * b.E * b.n_x / b.n ** 2


def _conv_cubic(b):  # (J^3/n^2)_x
    return 3 * b.J ** 2 * b.J_x / b.n ** 2 - 2 * b.J ** 3 * b.n_x / b.n ** 3


def _quantum_flux(b, nu):  # energy quantum flux without the J J_xx/(nu n) part
    return (b.J_x ** 2 / (nu * b.n) - 3 * b.J * b.n_x * b.J_x / (nu * b.n ** 2)
            - b.J_x * b.n_x ** 2 / b.n ** 2 + 2 * b.J * b.n_x ** 3 / b.n ** 3)


def steady_coeffs(grid: Grid, profile: DopingProfile, params: ModelParams) -> SteadyCoeffs:
    x = grid.x
    rho, rx, rxx = (profile.deriv(x, m) for m in range(3))
    _require_positive(rho)
    Jb, nu, tau, mu = params.J_b, params.nu, params.tau, params.mu
    e2 = params.epsilon ** 2
    return SteadyCoeffs(
        a1=nu * rxx,
        a2=-Jb / tau - (1 + mu) * rx + 2 / 3 * Jb ** 2 * rx / rho ** 2 + e2 / 18 * rx ** 3 / rho ** 2,
        b2=1 / tau - 4 / 3 * Jb * rx / rho ** 2 + 0 * rho,
        c2=4 / 3 * Jb ** 2 * rx / rho ** 3 + e2 / 9 * rx ** 3 / rho ** 3,
        d2=mu - 2 / 3 * Jb ** 2 / rho ** 2 - e2 / 6 * rx ** 2 / rho ** 2,
        e2=4 / 3 * Jb / rho + e2 / (9 * nu) * rx / rho,
        a3=1.5 * nu * rxx - 2 / 3 * Jb ** 3 * rx / rho ** 3 + e2 / 9 * Jb * rx ** 3 / rho ** 3,
        b3=2 / tau - 5 / 3 * Jb * rx / rho ** 2 + 0 * rho,
        c3=(-3 / tau + 2.5 * Jb * rx / rho ** 2 - 2 * Jb ** 3 * rx / rho ** 4
            + e2 / 3 * Jb * rx ** 3 / rho ** 4),
        d3=-2.5 * Jb / rho + 2 / 3 * Jb ** 3 / rho ** 3 - e2 / 3 * Jb * rx ** 2 / rho ** 3,
        e3=mu + 2.5 - Jb ** 2 / rho ** 2 + e2 / (6 * nu) * Jb * rx / rho ** 2 + e2 / 18 * rx ** 2 / rho ** 2,
        h3=2 * Jb ** 2 * rx / rho ** 3 - e2 / 9 * rx ** 3 / rho ** 3,
    )


def nonlinear_f(p, q, r, Vstar_x, profile: DopingProfile, params: ModelParams, grid: Grid):
    """Quadratic remainders ``(f2, f3)`` of the momentum and energy rows.

    Each nonlinear block ``F`` contributes ``F(w) - F(0) - F'(0) w``, so the
    result vanishes exactly at ``w = 0``.
    """
    b = _bundle(p, q, r, grid, profile, params)
    _require_positive(b.n, DegenerateDensity)
    z = _zero_bundle(b, params.J_b)
    p, q, r = (np.asarray(a, dtype=float) for a in (p, q, r))
    Vx = np.asarray(Vstar_x, dtype=float)
    rho, rx = b.rho, b.rho_x
    Jb, nu = params.J_b, params.nu
    e2 = params.epsilon ** 2
    px, qx, rx_ = diff(p, 1, grid), b.J_x, diff(r, 1, grid)

    conv_lin = 2 * Jb * qx / rho - 2 * Jb * rx * q / rho ** 2 - Jb ** 2 * px / rho ** 2 + 2 * Jb ** 2 * rx * p / rho ** 3
    grad_lin = rx / rho * qx
    cubic_lin = 3 * rx ** 2 * px / rho ** 2 - 2 * rx ** 3 * p / rho ** 3
    f2 = (p * Vx
          - 2 / 3 * (_conv_mom(b) - _conv_mom(z) - conv_lin)
          - e2 / (9 * nu) * (_grad_prod(b) - _grad_prod(z) - grad_lin)
          + e2 / 18 * (_cubic(b) - _cubic(z) - cubic_lin))

    ce_lin = (1.5 * qx + Jb * rx_ / rho - Jb * rx * r / rho ** 2
              - 1.5 * Jb * px / rho + 1.5 * Jb * rx * p / rho ** 2)
    cc_lin = 3 * Jb ** 2 * qx / rho ** 2 - 6 * Jb ** 2 * rx * q / rho ** 3 - 2 * Jb ** 3 * px / rho ** 3 + 6 * Jb ** 3 * rx * p / rho ** 4
    qf_lin = (-3 * Jb * rx * qx / (nu * rho ** 2) - rx ** 2 * qx / rho ** 2 + 2 * q * rx ** 3 / rho ** 3
              + 6 * Jb * rx ** 2 * px / rho ** 3 - 6 * Jb * rx ** 3 * p / rho ** 4)
    f3 = (q * Vx
          - 5 / 3 * (_conv_energy(b) - _conv_energy(z) - ce_lin)
          + 1 / 3 * (_conv_cubic(b) - _conv_cubic(z) - cc_lin)
          + e2 / 18 * (_quantum_flux(b, nu) - _quantum_flux(z, nu) - qf_lin))
    return f2, f3


def quantum_fixed_point_term(p, q, profile: DopingProfile, params: ModelParams, grid: Grid) -> np.ndarray:
    """``(eps^2/(18 nu)) q_xx (q + J_b) / (p + rho)``, kept on the right of the energy row."""
    n = profile.deriv(grid.x) + np.asarray(p, dtype=float)
    _require_positive(n, DegenerateDensity)
    return params.epsilon ** 2 / (18 * params.nu) * diff(q, 2, grid) * (np.asarray(q) + params.J_b) / n


def steady_residual(p, q, r, V, grid: Grid, profile: DopingProfile, params: ModelParams):
    """Residual of the stationary system in shifted variables.

    Momentum and energy rows use ``n_xx = J_x/nu`` and ``n_xxx = J_xx/nu``,
    which hold on solutions of the continuity row.  Boundary nodes carry the
    Dirichlet conditions.  Returns four nodal arrays.
    """
    b = _bundle(p, q, r, grid, profile, params)
    _require_positive(b.n, DegenerateDensity)
    nu, tau, mu = params.nu, params.tau, params.mu
    e2 = params.epsilon ** 2
    V = np.asarray(V, dtype=float)
    Vx = diff(V, 1, grid)
    R1 = -nu * b.n_xx + b.J_x
    R2 = (-(nu + e2 / (18 * nu)) * b.J_xx + b.J / tau + 2 / 3 * _conv_mom(b) + 2 / 3 * b.E_x
          + e2 / (9 * nu) * _grad_prod(b) - e2 / 18 * _cubic(b) - b.n * Vx + mu * b.n_x)
    R3 = (-nu * b.E_xx + 2 / tau * b.E - 3 / tau * b.n + mu * b.J_x + 5 / 3 * _conv_energy(b)
          - 1 / 3 * _conv_cubic(b)
          - e2 / 18 * (_quantum_flux(b, nu) + b.J * b.J_xx / (nu * b.n)) - b.J * Vx)
    R4 = -params.lam ** 2 * diff(V, 2, grid) + np.asarray(p, dtype=float)
    for R, u in ((R1, p), (R2, q), (R3, r)):
        R[0], R[-1] = u[0], u[-1]
    R4[0], R4[-1] = V[0], V[-1] - params.V_b
    return R1, R2, R3, R4


def residual_full(state: FullState, profile: DopingProfile, params: ModelParams, grid: Grid):
    """Stationary residuals of the full system in physical variables.

    Convective and quantum fluxes are differentiated in conservative form;
    the Bohm term uses the expanded form of :func:`bohm_term`.
    """
    n, J, E, V = (np.asarray(a, dtype=float) for a in (state.n, state.J, state.E, state.V))
    _require_positive(n)
    nu, tau, mu = params.nu, params.tau, params.mu
    e2 = params.epsilon ** 2
    D = lambda f, k=1: diff(f, k, grid)  # noqa: E731
    n_x, n_xx = D(n), D(n, 2)
    Vx = D(V)
    R_n = D(J) - nu * n_xx
    R_J = (J / tau - nu * D(J, 2) + 2 / 3 * D(J ** 2 / n) + 2 / 3 * D(E)
           - bohm_term(n, params, grid) - n * Vx + mu * n_x)
    R_E = (5 / 3 * D(J * E / n) + 2 / tau * E - nu * D(E, 2) - 1 / 3 * D(J ** 3 / n ** 2)
           - e2 / 18 * D(J * n_xx / n - J * n_x ** 2 / n ** 2) - J * Vx + mu * D(J) - 3 / tau * n)
    R_V = params.lam ** 2 * D(V, 2) - (n - profile.deriv(grid.x))
    return R_n, R_J, R_E, R_V


@dataclass(frozen=True)
class SteadyFields:
    """Steady fields and the derivatives the perturbation system needs."""

    n: np.ndarray
    n_x: np.ndarray
    n_xx: np.ndarray
    J: np.ndarray
    E: np.ndarray
    V_x: np.ndarray

    @classmethod
    def trivial(cls, grid: Grid, rho_b: float = 1.0) -> "SteadyFields":
        z = np.zeros(grid.N)
        return cls(rho_b + z, z, z, z.copy(), 1.5 * rho_b + z, z.copy())


def forcing_g(steady: SteadyFields, pert, params: ModelParams, grid: Grid):
    """Nonlinear forcings ``(g1, g2)`` of the momentum and energy perturbation rows.

    ``pert`` is ``(n, J, E, V)`` of the perturbation.  Every bracket is a
    difference ``F(steady + pert) - F(steady)`` and vanishes exactly at zero.
    """
    nt, Jt, Et, Vt = (np.asarray(a, dtype=float) for a in pert)
    s = steady
    n = s.n + nt
    _require_positive(n, DegenerateDensity)
    D = lambda f, k=1: diff(f, k, grid)  # noqa: E731
    nt_x, nt_xx = D(nt), D(nt, 2)
    n_x, n_xx = s.n_x + nt_x, s.n_xx + nt_xx
    J, E = s.J + Jt, s.E + Et
    Vt_x = D(Vt)
    e2 = params.epsilon ** 2

    bohm_diff = (2 * n_x * n_xx / n - n_x ** 3 / n ** 2) - (2 * s.n_x * s.n_xx / s.n - s.n_x ** 3 / s.n ** 2)
    g1 = (-e2 / 18 * bohm_diff - 2 / 3 * D(J ** 2 / n - s.J ** 2 / s.n)
          + s.V_x * nt + nt * Vt_x)
    qflux = (J * n_xx / n - J * n_x ** 2 / n ** 2) - (s.J * s.n_xx / s.n - s.J * s.n_x ** 2 / s.n ** 2)
    g2 = (-5 / 3 * D(J * E / n - s.J * s.E / s.n) + 1 / 3 * D(J ** 3 / n ** 2 - s.J ** 3 / s.n ** 2)
          + s.V_x * Jt + Jt * Vt_x + s.J * Vt_x + 2.5 * D(Jt) + e2 / 18 * D(qflux))
    return g1, g2
