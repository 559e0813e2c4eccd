"""Subcommand pipelines: configuration in, artifacts out, exit code back.

Each pipeline returns ``(exit_code, summary)``; library exceptions propagate
to the caller, which maps them to exit codes.
"""
from __future__ import annotations

import numpy as np

from .analysis import SWEEP_COLUMNS, SweepGuards, SweepSpec, check_conditions, stability_sweep
from .config import RunConfig
from .errors import QHDError, ZeroDelta0
from .grid import sobolev_norm
from .report import emit_report
from .steady import (SteadyState, bound_numerator, continuation_solve, leading_contraction,
                     picard_solve, solve_steady, steady_bound_ratio)
from .transient import (RECORD_KEYS, PerturbationState, default_sigma, evolve, fit_decay_rate,
                        random_perturbation, scale_to_composite, sigma_study, smooth_perturbation,
                        uniqueness_probe)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 0, 2, 3, 4


def _params_dict(params) -> dict:
    return {k: getattr(params, k) for k in ("nu", "epsilon", "tau", "mu", "lam", "J_b", "V_b", "sigma")}


def transient_params(cfg: RunConfig):
    sigma = cfg["transient"]["sigma"]
    return cfg.params.with_(sigma=default_sigma(cfg.grid) if sigma == "auto" else sigma)


def initial_perturbation(cfg: RunConfig, params, grid) -> PerturbationState:
    t = cfg["transient"]
    if t["init"] == "random":
        state = random_perturbation(grid, params, t["seed"])
    else:
        state = smooth_perturbation(grid, params, tuple(t["init_coeffs"]))
    if t["initial_composite"] > 0:
        state = scale_to_composite(state, t["initial_composite"], params, grid)
    return state


def separated_copy(state: PerturbationState, separation: float, params, grid) -> PerturbationState:
    """``state`` plus ``separation * sin^4(pi x)`` in the density, potential kept consistent."""
    bump = separation * np.sin(np.pi * grid.x) ** 4
    return PerturbationState.from_fields(state.nt + bump, state.Jt, state.Et, params, grid, state.t)


def solve_configured(cfg: RunConfig) -> SteadyState:
    s = cfg["steady"]
    args = (cfg.profile, cfg.params, cfg.grid)
    if s["method"] == "picard":
        return picard_solve(*args, tol=s["tol"], max_iter=s["max_iter"])
    if s["method"] == "continuation":
        return continuation_solve(*args, theta_step=s["theta_step"], tol=s["tol"])
    return solve_steady(*args, tol=s["tol"], max_iter=s["max_iter"], theta_step=s["theta_step"])


def steady_summary(st: SteadyState) -> dict:
    try:
        ratio = steady_bound_ratio(st)
    except ZeroDelta0:
        ratio = None
    g = st.grid
    left, right = st.neumann_residuals()
    return {
        "method": st.method, "iterations": st.iterations, "update_norm": st.update_norm,
        "contraction_factors": list(st.contraction_factors),
        "leading_contraction": leading_contraction(st),
        "bound_numerator": bound_numerator(st), "bound_ratio": ratio,
        "delta0": st.profile.delta0(g), "relation_defect": st.relation_defect(),
        "relation_bound": 10 * st.tol * (1 + sobolev_norm(st.p, 1, g)),
        "flux_defect": st.flux_defect(), "neumann_residual_left": left, "neumann_residual_right": right,
        "residual_norms": st.residual_norms(), "min_density": float(np.min(st.n)),
    }


def run_check(cfg: RunConfig, out: str):
    rep = check_conditions(cfg.profile, cfg.params, cfg.grid)
    summary = {"conditions": rep.as_dict(), "params": _params_dict(cfg.params)}
    emit_report(out, "check", cfg.formats, None, summary)
    return EXIT_OK, summary


def run_steady(cfg: RunConfig, out: str):
    st = solve_configured(cfg)
    cols = ("x", "rho", "p", "q", "r", "V", "n", "J", "E")
    data = dict(x=st.grid.x, rho=st.rho, p=st.p, q=st.q, r=st.r, V=st.V, n=st.n, J=st.J, E=st.E)
    rows = [{c: data[c][i] for c in cols} for i in range(st.grid.N)]
    summary = steady_summary(st)
    summary["conditions"] = check_conditions(st.profile, st.params, st.grid).as_dict()
    summary["params"] = _params_dict(st.params)
    emit_report(out, "steady", cfg.formats, (cols, rows), summary)
    return EXIT_OK, summary


def trajectory_table(traj):
    cols = ("t",) + RECORD_KEYS
    rows = [dict(t=t, **rec) for t, rec in zip(traj.times, traj.records)]
    return cols, rows


def run_evolve(cfg: RunConfig, out: str):
    t = cfg["transient"]
    grid, params = cfg.grid, transient_params(cfg)
    steady = solve_configured(cfg)
    init = initial_perturbation(cfg, params, grid)
    traj = evolve(init, steady.fields(), params, grid, t["T"], t["dt"], t["sample_every"])
    comp = traj.composite
    summary = {"truncated": traj.truncated, "failure": traj.failure, "samples": len(traj),
               "composite_initial": comp[0], "composite_final": comp[-1],
               "composite_ratio": comp[-1] / comp[0] if comp[0] > 0 else None,
               "sigma1_hat": None, "r2": None, "fit_error": "", "params": _params_dict(params)}
    if not traj.truncated:
        try:
            summary["sigma1_hat"], summary["r2"] = fit_decay_rate(traj, tail_fraction=t["tail_fraction"])
        except QHDError as exc:
            summary["fit_error"] = exc.code
    emit_report(out, "trajectory", cfg.formats, trajectory_table(traj), summary)
    return (EXIT_NUMERICAL if traj.truncated else EXIT_OK), summary


def sweep_spec(cfg: RunConfig) -> SweepSpec:
    t, w = cfg["transient"], cfg["sweep"]
    guards = SweepGuards(w["guard_margin"], w["guard_delta0"], w["guard_J_b"], w["guard_initial_composite"])
    return SweepSpec(transient_params(cfg), cfg.profile, cfg.sweep_axes(), N=cfg.grid.N, T=t["T"],
                     dt=t["dt"], sample_every=t["sample_every"], tail_fraction=t["tail_fraction"],
                     initial_composite=w["initial_composite"], seed=w["seed"], guards=guards)


def run_sweep(cfg: RunConfig, out: str):
    res = stability_sweep(sweep_spec(cfg), workers=cfg["sweep"]["workers"])
    summary = res.summary()
    emit_report(out, "sweep", cfg.formats, (SWEEP_COLUMNS, res.rows), summary)
    return (EXIT_ACCEPTANCE if res.counterexamples else EXIT_OK), summary


def run_sigma_study(cfg: RunConfig, out: str):
    t = cfg["transient"]
    grid, params = cfg.grid, cfg.params
    steady = solve_configured(cfg)
    init = initial_perturbation(cfg, params, grid)
    st = sigma_study(init, steady.fields(), params, grid, t["sigmas"], t["T"], t["dt"], t["sample_every"])
    rows = [{"sigma_a": a, "sigma_b": b, "gap": g}
            for a, b, g in zip(st.sigmas, st.sigmas[1:] + (0.0,), st.gaps + (st.zero_gap,))]
    summary = {"sigmas": list(st.sigmas), "gaps": list(st.gaps), "zero_gap": st.zero_gap,
               "decreasing": st.decreasing(),
               "zero_gap_within": bool(st.gaps) and st.zero_gap < 10 * st.gaps[-1]}
    emit_report(out, "sigma_study", cfg.formats, (("sigma_a", "sigma_b", "gap"), rows), summary)
    return EXIT_OK, summary


def run_unique_probe(cfg: RunConfig, out: str):
    t = cfg["transient"]
    grid, params = cfg.grid, transient_params(cfg)
    steady = solve_configured(cfg)
    a = initial_perturbation(cfg, params, grid)
    b = separated_copy(a, t["separation"], params, grid)
    tr = uniqueness_probe(a, b, steady.fields(), params, grid, t["T"], t["dt"], t["sample_every"])
    C = tr.growth_exponent()
    rows = [{"t": ti, "separation": si} for ti, si in zip(tr.times, tr.separation)]
    summary = {"growth_exponent": C, "growth_cap": t["growth_cap"], "below_cap": C < t["growth_cap"],
               "separation_initial": tr.separation[0], "separation_final": tr.separation[-1],
               "decayed": bool(tr.separation[-1] < tr.separation[0]), "truncated": tr.truncated}
    emit_report(out, "separation", cfg.formats, (("t", "separation"), rows), summary)
    return (EXIT_NUMERICAL if tr.truncated else EXIT_OK), summary


COMMANDS = {
    "check": run_check,
    "steady": run_steady,
    "evolve": run_evolve,
    "sweep": run_sweep,
    "sigma-study": run_sigma_study,
    "unique-probe": run_unique_probe,
}
