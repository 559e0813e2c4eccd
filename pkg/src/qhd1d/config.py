"""Run configuration: strict ``[section]`` / ``key = value`` files.

Every key is typed and defaulted in :data:`SCHEMA`; unknown sections or keys
are rejected, and all values are validated by building the domain objects
before any solver state is allocated.
"""
from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field

from .errors import ConfigError, ValidationError
from .grid import DEFAULT_NODES, Grid
from .model import DopingProfile, ModelParams
from .steady import DEFAULT_TOL
from .transient import DEFAULT_DT, DEFAULT_SAMPLE_EVERY, DEFAULT_TAIL_FRACTION

OUT_ENV = "QHD1D_OUT"
DEFAULT_SEED = 12345


def _floats(text: str) -> tuple:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _strs(text: str) -> tuple:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _sigma(text: str):
    return "auto" if text.strip() == "auto" else float(text)


SCHEMA = {
    "model": {"nu": (float, 0.1), "epsilon": (float, 0.1), "tau": (float, 1.0), "mu": (float, 1.0),
              "lam": (float, 0.5), "J_b": (float, 0.0), "V_b": (float, 0.0)},
    "profile": {"kind": (str, "constant"), "rho_b": (float, 1.0), "amplitude": (float, 0.0),
                "k": (int, 1), "shape": (_floats, (1.0, 0.0, 0.0)), "delta0": (float, None)},
    "grid": {"N": (int, DEFAULT_NODES)},
    "steady": {"tol": (float, DEFAULT_TOL), "max_iter": (int, 200), "theta_step": (float, 0.25),
               "method": (str, "auto")},
    "transient": {"dt": (float, DEFAULT_DT), "T": (float, 5.0), "sigma": (_sigma, "auto"),
                  "sample_every": (int, DEFAULT_SAMPLE_EVERY),
                  "tail_fraction": (float, DEFAULT_TAIL_FRACTION), "init": (str, "smooth"),
                  "init_coeffs": (_floats, (1.0, 0.1, 1.5)), "initial_composite": (float, 1e-6),
                  "seed": (int, DEFAULT_SEED), "sigmas": (_floats, (1e-2, 1e-3, 1e-4)),
                  "separation": (float, 1e-8), "growth_cap": (float, 1.0)},
    "sweep": {"nu": (_floats, None), "tau": (_floats, None), "mu": (_floats, None),
              "lam": (_floats, None), "delta0": (_floats, None), "J_b": (_floats, None),
              "workers": (int, 1), "seed": (int, DEFAULT_SEED), "initial_composite": (float, 1e-6),
              "guard_margin": (float, 0.1), "guard_delta0": (float, 0.05), "guard_J_b": (float, 1e-3),
              "guard_initial_composite": (float, 1e-4)},
    "output": {"directory": (str, "qhd1d_out"), "formats": (_strs, ("csv", "json"))},
}

BASE = ("model", "profile", "grid")
REQUIRED = {
    "check": BASE,
    "steady": BASE + ("steady",),
    "evolve": BASE + ("steady", "transient"),
    "sweep": BASE + ("steady", "transient", "sweep"),
    "sigma-study": BASE + ("steady", "transient"),
    "unique-probe": BASE + ("steady", "transient"),
    "selftest": (),
}
STEADY_METHODS = ("auto", "picard", "continuation")
INIT_KINDS = ("smooth", "random")
FORMATS = ("csv", "json")


@dataclass
class RunConfig:
    sections: dict = field(default_factory=dict)   # section -> {key: parsed value}
    present: tuple = ()

    def __getitem__(self, section: str) -> dict:
        return self.sections[section]

    @property
    def params(self) -> ModelParams:
        return ModelParams(**self["model"])

    @property
    def grid(self) -> Grid:
        return Grid(self["grid"]["N"])

    @property
    def profile(self) -> DopingProfile:
        p = self["profile"]
        prof = DopingProfile(p["kind"], p["rho_b"], p["amplitude"], p["k"], tuple(p["shape"]))
        if p["delta0"] is not None:
            prof = prof.with_delta0(p["delta0"], self.grid)
        return prof

    @property
    def output_dir(self) -> str:
        return os.environ.get(OUT_ENV) or self["output"]["directory"]

    @property
    def formats(self) -> tuple:
        return tuple(self["output"]["formats"])

    def sweep_axes(self) -> dict:
        return {k: v for k, v in self["sweep"].items()
                if k in ("nu", "tau", "mu", "lam", "delta0", "J_b") and v is not None}


def _parse_value(section: str, key: str, raw: str):
    conv, _ = SCHEMA[section][key]
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from exc


def parse_text(text: str, command: str = "check") -> RunConfig:
    cp = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#",),
                                   inline_comment_prefixes=None, strict=True, interpolation=None,
                                   empty_lines_in_values=False, default_section="\x00")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc.message.splitlines()[0]}") from exc
    unknown = [s for s in cp.sections() if s not in SCHEMA]
    if unknown:
        raise ConfigError(f"unknown sections {unknown}")
    if command not in REQUIRED:
        raise ConfigError(f"unknown subcommand {command!r}")
    missing = [s for s in REQUIRED[command] if s not in cp.sections()]
    if missing:
        raise ConfigError(f"{command} needs sections {missing}")
    sections = {}
    for name, keys in SCHEMA.items():
        vals = {k: default for k, (_, default) in keys.items()}
        if cp.has_section(name):
            for key, raw in cp.items(name):
                if key not in keys:
                    raise ConfigError(f"[{name}] unknown key {key!r}")
                vals[key] = _parse_value(name, key, raw)
        sections[name] = vals
    cfg = RunConfig(sections, tuple(cp.sections()))
    validate(cfg)
    return cfg


def load(path, command: str = "check") -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_text(text, command)


def _positive(section: str, key: str, v, allow_zero: bool = False):
    ok = math.isfinite(v) and (v >= 0 if allow_zero else v > 0)
    if not ok:
        raise ConfigError(f"[{section}] {key} must be {'non-negative' if allow_zero else 'positive'}")


def validate(cfg: RunConfig) -> None:
    """Check every module precondition; raises :class:`ValidationError`."""
    try:
        cfg.params
        cfg.grid
        cfg.profile
    except ValidationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    s = cfg["steady"]
    _positive("steady", "tol", s["tol"])
    if s["max_iter"] < 1:
        raise ConfigError("[steady] max_iter must be at least 1")
    if not 0 < s["theta_step"] <= 1:
        raise ConfigError("[steady] theta_step must lie in (0, 1]")
    if s["method"] not in STEADY_METHODS:
        raise ConfigError(f"[steady] method must be one of {STEADY_METHODS}")
    t = cfg["transient"]
    _positive("transient", "dt", t["dt"])
    _positive("transient", "T", t["T"])
    if t["sigma"] != "auto":
        _positive("transient", "sigma", t["sigma"], allow_zero=True)
    if t["sample_every"] < 1:
        raise ConfigError("[transient] sample_every must be at least 1")
    if not 0 < t["tail_fraction"] <= 1:
        raise ConfigError("[transient] tail_fraction must lie in (0, 1]")
    if t["init"] not in INIT_KINDS:
        raise ConfigError(f"[transient] init must be one of {INIT_KINDS}")
    if len(t["init_coeffs"]) != 3:
        raise ConfigError("[transient] init_coeffs needs three values")
    _positive("transient", "initial_composite", t["initial_composite"], allow_zero=True)
    sig = t["sigmas"]
    if not sig or any(b >= a for a, b in zip(sig, sig[1:])) or sig[-1] <= 0:
        raise ConfigError("[transient] sigmas must decrease strictly and stay positive")
    _positive("transient", "separation", t["separation"])
    if not math.isfinite(t["growth_cap"]):
        raise ConfigError("[transient] growth_cap must be finite")
    w = cfg["sweep"]
    if w["workers"] < 1:
        raise ConfigError("[sweep] workers must be at least 1")
    for key in ("guard_margin", "guard_delta0", "guard_J_b", "guard_initial_composite", "initial_composite"):
        _positive("sweep", key, w[key], allow_zero=True)
    base_params, base_grid = cfg.params, cfg.grid
    for axis, values in cfg.sweep_axes().items():
        if not values:
            raise ConfigError(f"[sweep] axis {axis} is empty")
        for v in values:
            if axis == "delta0":
                cfg.profile.with_delta0(v, base_grid)
            else:
                base_params.with_(**{axis: v}).__post_init__()
    bad = set(cfg.formats) - set(FORMATS)
    if bad or not cfg.formats:
        raise ConfigError(f"[output] formats must be drawn from {FORMATS}")
