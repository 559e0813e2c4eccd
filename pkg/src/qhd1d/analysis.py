"""Hypothesis checks, the composite stability norm and parameter sweeps."""
from __future__ import annotations

import concurrent.futures as cf
import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import QHDError, ValidationError
from .grid import Grid
from .model import DopingProfile, ModelParams
from .steady import bound_numerator, solve_steady
from .transient import (DEFAULT_DT, DEFAULT_SAMPLE_EVERY, DEFAULT_TAIL_FRACTION, PerturbationState,
                        composite_from_norms, evolve, fit_decay_rate, perturbation_norms,
                        random_perturbation, scale_to_composite)


def a2_quantity(rho, params: ModelParams) -> np.ndarray:
    """Nodal ``sqrt(2) tau nu (2 mu + 5) rho / (3 lambda^2)``."""
    P = params
    return math.sqrt(2.0) * P.tau * P.nu * (2 * P.mu + 5) * np.asarray(rho) / (3 * P.lam ** 2)


def cond5_quantity(rho, params: ModelParams) -> np.ndarray:
    """Nodal ``tau (2 + tau nu)(2 mu + 5)(mu nu lambda^2 + nu rho) / (3 lambda^2)``."""
    P = params
    return (P.tau * (2 + P.tau * P.nu) * (2 * P.mu + 5)
            * (P.mu * P.nu * P.lam ** 2 + P.nu * np.asarray(rho)) / (3 * P.lam ** 2))


@dataclass(frozen=True)
class ConditionReport:
    a1_ok: bool
    min_rho: float
    boundary_mismatch: float   # max_k |rho^(k)(0) - rho^(k)(1)|, k = 0..3
    a2_margin: float           # raw nodal minimum; the condition holds iff > 1
    a2_ok: bool
    cond5_margin: float        # nodal minimum minus 1; holds iff > 0
    cond5_ok: bool
    delta0: float
    J_b: float

    @property
    def smallness(self) -> dict:
        return {"delta0": self.delta0, "J_b": self.J_b}

    def passes(self, guard: float = 0.0) -> bool:
        """Both conditions hold with at least ``guard`` to spare."""
        return self.a1_ok and self.a2_margin - 1 > guard and self.cond5_margin > guard

    def as_dict(self) -> dict:
        d = asdict(self)
        d["smallness"] = self.smallness
        return d


def check_conditions(profile: DopingProfile, params: ModelParams, grid: Grid) -> ConditionReport:
    rho = profile.deriv(grid.x)
    mismatch = max(abs(float(profile.deriv(0.0, k) - profile.deriv(1.0, k))) for k in range(4))
    min_rho = float(np.min(rho))
    a1_ok = min_rho > 0 and mismatch <= 1e-12 * max(1.0, profile.rho_b)
    a2 = float(np.min(a2_quantity(rho, params)))
    c5 = float(np.min(cond5_quantity(rho, params))) - 1.0
    return ConditionReport(a1_ok, min_rho, mismatch, a2, a2 > 1.0, c5, c5 > 0.0,
                           profile.delta0(grid), params.J_b)


def composite_norm(steady, pert: PerturbationState, params: ModelParams, grid: Grid) -> float:
    """``|n|_3^2 + |J|_2^2 + |E|_2^2 + lambda^2 |V|_5^2`` of the perturbation.

    ``steady`` is accepted for interface symmetry; the norm depends only on
    the perturbation fields.
    """
    del steady
    return composite_from_norms(perturbation_norms(pert, grid), params)


@dataclass(frozen=True)
class SweepGuards:
    margin: float = 0.1
    delta0: float = 0.05
    J_b: float = 1e-3
    initial_composite: float = 1e-4


@dataclass(frozen=True)
class SweepSpec:
    """Cartesian product of parameter axes around a base point."""

    base_params: ModelParams
    base_profile: DopingProfile
    axes: dict                      # name -> tuple of values; names: nu, tau, mu, lam, delta0, J_b
    N: int = 101
    T: float = 2.0
    dt: float = DEFAULT_DT
    sample_every: int = DEFAULT_SAMPLE_EVERY
    tail_fraction: float = DEFAULT_TAIL_FRACTION
    initial_composite: float = 1e-6
    seed: int = 12345
    guards: SweepGuards = field(default_factory=SweepGuards)

    AXES = ("nu", "tau", "mu", "lam", "delta0", "J_b")

    def __post_init__(self):
        bad = set(self.axes) - set(self.AXES)
        if bad:
            raise ValidationError(f"unknown sweep axes {sorted(bad)}")

    def points(self):
        names = [a for a in self.AXES if a in self.axes]
        for values in itertools.product(*(tuple(self.axes[a]) for a in names)):
            yield dict(zip(names, values))


SWEEP_COLUMNS = ("point_id", "nu", "tau", "mu", "lam", "delta0", "J_b", "a2_margin", "cond5_margin",
                 "bound_ratio", "sigma1_hat", "r2", "status")


def run_sweep_point(spec: SweepSpec, point_id: int, point: dict) -> dict:
    """One sweep row; numerical failures are recorded, never raised."""
    grid = Grid(spec.N)
    pkw = {k: v for k, v in point.items() if k in ("nu", "tau", "mu", "lam", "J_b")}
    row = {k: float("nan") for k in SWEEP_COLUMNS}
    row["point_id"] = point_id
    try:
        params = spec.base_params.with_(**pkw)
        profile = spec.base_profile
        if "delta0" in point:
            profile = profile.with_delta0(point["delta0"], grid)
        rep = check_conditions(profile, params, grid)
        row.update(nu=params.nu, tau=params.tau, mu=params.mu, lam=params.lam, J_b=params.J_b,
                   delta0=rep.delta0, a2_margin=rep.a2_margin, cond5_margin=rep.cond5_margin)
        steady = solve_steady(profile, params, grid)
        row["bound_ratio"] = bound_numerator(steady) / rep.delta0 ** 2 if rep.delta0 > 0 else float("nan")
        init = scale_to_composite(random_perturbation(grid, params, spec.seed), spec.initial_composite,
                                  params, grid)
        traj = evolve(init, steady.fields(), params, grid, spec.T, spec.dt, spec.sample_every)
        if traj.truncated:
            row["status"] = "truncated"
            return row
        row["sigma1_hat"], row["r2"] = fit_decay_rate(traj, tail_fraction=spec.tail_fraction)
        row["status"] = "ok"
    except QHDError as exc:
        row["status"] = exc.code
    return row


def _is_counterexample(row: dict, spec: SweepSpec) -> bool:
    g = spec.guards
    conditions = (row["a2_margin"] - 1 > g.margin and row["cond5_margin"] > g.margin)
    small = (row["delta0"] <= g.delta0 and abs(row["J_b"]) <= g.J_b
             and spec.initial_composite <= g.initial_composite)
    if not (conditions and small):
        return False
    return not (row["status"] == "ok" and row["sigma1_hat"] > 0)


@dataclass
class SweepResult:
    rows: list
    counterexamples: list

    def summary(self) -> dict:
        return {"points": len(self.rows), "counterexamples": self.counterexamples,
                "statuses": {s: sum(r["status"] == s for r in self.rows)
                             for s in sorted({r["status"] for r in self.rows})}}


def stability_sweep(spec: SweepSpec, workers: int = 1) -> SweepResult:
    """Evaluate every sweep point; rows come back in point order."""
    points = list(enumerate(spec.points()))
    if workers <= 1 or len(points) <= 1:
        rows = [run_sweep_point(spec, i, p) for i, p in points]
    else:
        with cf.ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_sweep_point, spec, i, p) for i, p in points]
            rows = [f.result() for f in futures]
    counter = [r["point_id"] for r in rows if _is_counterexample(r, spec)]
    return SweepResult(rows, counter)
