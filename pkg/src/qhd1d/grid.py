"""Uniform mesh on [0, 1], finite-difference operators, discrete Sobolev norms
and the Dirichlet Poisson solver.

Fields are plain 1-D ``numpy`` arrays of length ``grid.N``; every function
takes the owning :class:`Grid` explicitly.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import factorial

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import GridTooCoarse, SingularSystem, ValidationError

Field = np.ndarray

MIN_NODES = 9
DEFAULT_NODES = 201
MAX_ORDER = 5
# half-width of the centered stencil used at interior nodes, per order
_HALF_WIDTH = {1: 1, 2: 1, 3: 2, 4: 2}


def fd_weights(offsets, k: int) -> np.ndarray:
    """Weights ``w`` with ``sum(w_j f(x + s_j h)) ~ h^k f^(k)(x)``.

    Solves the moment (Vandermonde) system on the integer ``offsets``; the
    stencils used here have at most six points so conditioning is harmless.
    """
    s = np.asarray(offsets, dtype=float)
    m = len(s)
    if k >= m:
        raise ValueError("need more points than the derivative order")
    A = np.vander(s, m, increasing=True).T / np.array([factorial(j) for j in range(m)])[:, None]
    rhs = np.zeros(m)
    rhs[k] = 1.0
    return np.linalg.solve(A, rhs)


@dataclass(frozen=True)
class Grid:
    N: int = DEFAULT_NODES

    def __post_init__(self):
        if int(self.N) != self.N or self.N < MIN_NODES:
            raise GridTooCoarse(f"grid needs at least {MIN_NODES} nodes, got {self.N}")

    @property
    def h(self) -> float:
        return 1.0 / (self.N - 1)

    @cached_property
    def x(self) -> np.ndarray:
        x = np.arange(self.N) / (self.N - 1)
        x[-1] = 1.0
        x.setflags(write=False)
        return x

    @cached_property
    def quad_weights(self) -> np.ndarray:
        w = np.full(self.N, self.h)
        w[0] = w[-1] = 0.5 * self.h
        w.setflags(write=False)
        return w

    def integrate(self, f) -> float:
        """Composite trapezoid rule; fixed summation order."""
        return float(np.dot(self.quad_weights, f))

    def diff_matrix(self, k: int) -> sp.csr_matrix:
        """Sparse matrix of the order-``k`` derivative (``k = 0..5``)."""
        return self._diff_matrices[k]

    @cached_property
    def _diff_matrices(self) -> dict:
        mats = {0: sp.identity(self.N, format="csr")}
        for k in range(1, 5):
            mats[k] = _build_diff(self.N, k) if self.N >= 2 * k + 3 else None
        mats[5] = (mats[1] @ mats[4]).tocsr() if mats[4] is not None else None
        return mats


def _build_diff(N: int, k: int) -> sp.csr_matrix:
    h = 1.0 / (N - 1)
    hw = _HALF_WIDTH[k]
    scale = h ** (-k)
    centered = fd_weights(range(-hw, hw + 1), k) * scale
    # one-sided: k+2 points, second order for every k
    npts = k + 2
    rows, cols, vals = [], [], []
    for i in range(N):
        if hw <= i <= N - 1 - hw:
            idx = np.arange(i - hw, i + hw + 1)
            w = centered
        elif i < hw:
            idx = np.arange(npts)
            w = fd_weights(idx - i, k) * scale
        else:
            idx = np.arange(N - npts, N)
            w = fd_weights(idx - i, k) * scale
        rows.extend([i] * len(idx))
        cols.extend(idx)
        vals.extend(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(N, N))


def _check_field(f, grid: Grid) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (grid.N,):
        raise ValidationError(f"field has shape {f.shape}, grid expects ({grid.N},)")
    return f


def diff(f, k: int, grid: Grid) -> Field:
    """Order-``k`` derivative of a nodal field, ``k = 0..5``.

    Orders 1-4 use centered second-order stencils where they fit and
    second-order one-sided stencils at the remaining boundary nodes.  Order 5
    is the composition of orders 1 and 4.
    """
    if not 0 <= k <= MAX_ORDER:
        raise ValidationError(f"derivative order {k} outside 0..{MAX_ORDER}")
    D = grid.diff_matrix(k)
    if D is None:
        raise GridTooCoarse(f"order {k} derivative needs more than {grid.N} nodes")
    return D @ _check_field(f, grid)


def sobolev_norm_sq(f, m: int, grid: Grid) -> float:
    f = _check_field(f, grid)
    return sum(grid.integrate(diff(f, j, grid) ** 2) for j in range(m + 1))


def sobolev_norm(f, m: int, grid: Grid) -> float:
    """Discrete H^m norm: sqrt of the trapezoid integrals of ``D^j f`` squared, j <= m."""
    return float(np.sqrt(sobolev_norm_sq(f, m, grid)))


def dirichlet_laplacian_banded(grid: Grid, coef: float = 1.0) -> np.ndarray:
    """Banded (1, 1) storage of ``coef * D_xx`` with identity boundary rows."""
    N, h2 = grid.N, grid.h ** 2
    ab = np.zeros((3, N))
    ab[0, 2:] = coef / h2
    ab[1, 1:-1] = -2.0 * coef / h2
    ab[2, :-2] = coef / h2
    ab[1, 0] = ab[1, -1] = 1.0
    return ab


def solve_poisson(rhs, lam: float, bc_left: float, bc_right: float, grid: Grid):
    """Solve ``lam^2 V_xx = rhs`` with Dirichlet data by band elimination.

    Returns ``(V, (V_x(0), V_x(1)))``; the boundary slopes are the residuals
    of the additional Neumann data, reported as a diagnostic only.
    """
    if not lam > 0:
        raise ValidationError("Debye length must be positive")
    rhs = _check_field(rhs, grid)
    b = rhs.copy()
    b[0], b[-1] = bc_left, bc_right
    try:
        V = scipy.linalg.solve_banded((1, 1), dirichlet_laplacian_banded(grid, lam ** 2), b)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularSystem(str(exc)) from exc
    if not np.all(np.isfinite(V)):
        raise SingularSystem("non-finite Poisson solution")
    Vx = diff(V, 1, grid)
    return V, (float(Vx[0]), float(Vx[-1]))


def format_float(v: float) -> str:
    """17 significant digits; the serialization format for every artifact."""
    return format(float(v), ".17g")


def write_field_csv(path, grid: Grid, values, name: str = "value") -> None:
    values = _check_field(values, grid)
    with open(path, "w", newline="\n") as fh:
        fh.write(f"x,{name}\n")
        for xi, vi in zip(grid.x, values):
            fh.write(f"{format_float(xi)},{format_float(vi)}\n")
