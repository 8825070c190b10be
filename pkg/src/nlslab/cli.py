r"""Command-line driver tying the modules into reproducible experiments.

Five subcommands cover the laboratory's workflow::

    nlslab coeffs    --config exp.cfg --out runs/coeffs
    nlslab profiles  --config exp.cfg --out runs/profiles
    nlslab operators --config exp.cfg --out runs/operators
    nlslab simulate  --config exp.cfg --out runs/sim --mode backward
    nlslab report    --out runs runs/coeffs runs/profiles runs/sim

``coeffs`` tabulates the symbol harmonics (closed form against
quadrature, with the decay fit), ``profiles`` builds the asymptotic
profiles and their scaling reports, ``operators`` probes the operator
toolkit (MDFM residuals, :math:`K_\psi` flatness, :math:`A_n`/
:math:`C_n` bounds, and the cross-module invariant suite),
``simulate`` runs the backward split-step integration and/or the
truncated-horizon Picard iteration and archives the trajectory, and
``report`` folds the ``summary.json`` files of earlier runs into one
pass/fail table.

Configuration is a line-oriented ``key = value`` file with sections
(INI syntax, diff-friendly, language-neutral); every key has a default
so an empty config is valid.  The full schema, with the defaults::

    [nonlinearity]
    family = gauge          ; gauge | cos-power | sin-power | re-im-combo
    alpha = 1.6666666666666667
    n_max = 21
    lambda = 0.4456         ; coupling of the gauge family

    [data]
    eps = 0.05
    kappa = 0.1
    width = 1.0

    [grid]
    dimension = 3
    points = 64
    half_width = 30.0

    [solver]
    dt = 0.05
    scheme = strang_rk4     ; strang_rk4 | lie
    t_start = 64.0
    t_end = 8.0
    include_calv = false
    paired = false          ; simulate: also run with include_calv flipped
    mode = backward         ; backward | picard | both
    T = 4.0
    T_max = 64.0
    iters = 4

    [analysis]
    delta = 1.55
    eta = 0.5
    b_target = 0.76
    tol = 0.1
    fit_window = 16 32      ; time window of the deviation fit
    ref_points = 65535      ; radial reference lattice (dual-form check)
    ref_radius = 1100.0

    [output]
    dir = runs/out
    seed = 0
    threads = 1

The parameter box of the final-state theory is validated at load:
``3/2 < delta < 5/3``, ``delta - 3/2 < 2 eta`` and ``b > 3/4`` must
hold, and a violation exits with code 2 and a message naming the
violated inequality.  Exit codes: 0 all checks pass, 1 an asserted
invariant failed, 2 configuration or usage error.

All randomness (probe testers, invariant-suite fields) comes from
``numpy`` generators seeded from the config, floats are printed
through one shortest-roundtrip format, JSON keys are sorted and no
timestamps are recorded, so identical config + seed gives bit-identical
outputs.  Commands may fan work out through the FFT worker pool
(``--threads``, or the ``NLSLAB_THREADS`` environment variable when
the flag is absent), but every file write funnels through the single
:class:`OutputWriter` owned by the command.  Plot rendering, job
scheduling and network services are out of scope: the outputs are
tables.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import sys
import warnings
from dataclasses import dataclass, fields, replace
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .analysis import (fit_decay, norm_lebesgue, norm_sobolev,
                       norm_sobolev_dot, rate_verdict)
from .nonlinearity import (FourierSymbol, build_symbol, coeff_cos_power,
                           coeff_decay_fit, coeff_quadrature, eval_series,
                           im_power_nonlinearity, modulus_power_nonlinearity,
                           re_im_combination, re_power_nonlinearity,
                           resonant_split, symbol_from_nonlinearity)
from .operators import (Grid, SpectralField, b_weight, field_from_function,
                        free_propagate, make_grid, make_psi, mdfm_residual,
                        multiply_An, multiply_E, multiply_M, probe_K_flatness,
                        resolvent_Cn, set_workers)
from .profiles import (FinalData, calV_closed_form_radial, calV_l2_norm,
                       calV_operator_form_radial, gaussian_final_data,
                       make_up, make_vp, vp_l6_horizon)
from .solver import (SolverConfig, _real_g1, integrate_final_state,
                     picard_iterate, save_trajectory)

__all__ = [
    "ConfigError", "ExperimentConfig", "OutputWriter", "load_config",
    "build_symbol_family", "build_data", "invariant_suite",
    "cmd_coeffs", "cmd_profiles", "cmd_operators", "cmd_simulate",
    "cmd_report", "main",
]

ENV_THREADS = "NLSLAB_THREADS"

_FAMILIES = ("gauge", "cos-power", "sin-power", "re-im-combo")
_MODES = ("backward", "picard", "both")


class ConfigError(ValueError):
    """A configuration value violates the parameter box or the schema."""


# ----------------------------------------------------------------------
# experiment configuration
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: nonlinearity, datum, grid, solver and analysis
    parameters plus the output location.

    Construction validates the theory's parameter box and the
    structural constraints; each violation raises :class:`ConfigError`
    naming the violated inequality.
    """

    # nonlinearity
    family: str = "gauge"
    alpha: float = 5.0 / 3.0
    n_max: int = 21
    lam: float = 0.4456
    # data
    eps: float = 0.05
    kappa: float = 0.1
    width: float = 1.0
    # grid
    dimension: int = 3
    points: int = 64
    half_width: float = 30.0
    # solver
    dt: float = 0.05
    scheme: str = "strang_rk4"
    t_start: float = 64.0
    t_end: float = 8.0
    include_calv: bool = False
    paired: bool = False
    mode: str = "backward"
    T: float = 4.0
    T_max: float = 64.0
    iters: int = 4
    # analysis
    delta: float = 1.55
    eta: float = 0.5
    b_target: float = 0.76
    tol: float = 0.1
    fit_lo: float = 16.0
    fit_hi: float = 32.0
    ref_points: int = 65535
    ref_radius: float = 1100.0
    # output
    out_dir: str = "runs/out"
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if not 1.5 < self.delta < 5.0 / 3.0:
            raise ConfigError(
                f"delta = {self.delta!r} violates 3/2 < delta < 5/3")
        if not self.delta - 1.5 < 2.0 * self.eta:
            raise ConfigError(
                f"delta - 3/2 = {self.delta - 1.5!r} violates "
                f"delta - 3/2 < 2*eta = {2.0 * self.eta!r}")
        if not self.b_target > 0.75:
            raise ConfigError(
                f"b_target = {self.b_target!r} violates b > 3/4")
        if self.family not in _FAMILIES:
            raise ConfigError(
                f"family = {self.family!r} is not one of {_FAMILIES}")
        if self.mode not in _MODES:
            raise ConfigError(f"mode = {self.mode!r} is not one of {_MODES}")
        for name in ("eps", "width", "dt", "tol", "lam"):
            if not getattr(self, name) > 0:
                raise ConfigError(
                    f"{name} = {getattr(self, name)!r} violates {name} > 0")
        if not self.kappa >= 0:
            raise ConfigError(f"kappa = {self.kappa!r} violates kappa >= 0")
        if self.n_max < 1:
            raise ConfigError(f"n_max = {self.n_max!r} violates n_max >= 1")
        if not self.t_start > self.t_end >= 2.0:
            raise ConfigError(
                f"(t_start, t_end) = {(self.t_start, self.t_end)!r} "
                "violates t_start > t_end >= 2")
        if not 2.0 <= self.T < self.T_max:
            raise ConfigError(
                f"(T, T_max) = {(self.T, self.T_max)!r} violates "
                "2 <= T < T_max")
        if self.iters < 2:
            raise ConfigError(f"iters = {self.iters!r} violates iters >= 2")
        if not 0 < self.fit_lo < self.fit_hi:
            raise ConfigError(
                f"fit_window = {(self.fit_lo, self.fit_hi)!r} violates "
                "0 < lo < hi")
        if self.points < 2 or self.points % 2:
            raise ConfigError(
                f"points = {self.points!r} violates points even and >= 2")
        if self.threads < 1:
            raise ConfigError(
                f"threads = {self.threads!r} violates threads >= 1")

    def grid(self) -> Grid:
        """The experiment's Cartesian lattice."""
        return make_grid(self.dimension, self.points, self.half_width)

    def reference_grid(self):
        """The radial reference lattice of the analysis section."""
        from ._radial import make_radial_grid
        return make_radial_grid(self.ref_points, self.ref_radius)


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_window(raw: str) -> tuple:
    parts = raw.replace(",", " ").split()
    if len(parts) != 2:
        raise ValueError(f"fit_window wants two numbers, got {raw!r}")
    return float(parts[0]), float(parts[1])


# (section, key) -> (config field(s), parser)
_SCHEMA = {
    ("nonlinearity", "family"): (("family",), str),
    ("nonlinearity", "alpha"): (("alpha",), float),
    ("nonlinearity", "n_max"): (("n_max",), int),
    ("nonlinearity", "lambda"): (("lam",), float),
    ("data", "eps"): (("eps",), float),
    ("data", "kappa"): (("kappa",), float),
    ("data", "width"): (("width",), float),
    ("grid", "dimension"): (("dimension",), int),
    ("grid", "points"): (("points",), int),
    ("grid", "half_width"): (("half_width",), float),
    ("solver", "dt"): (("dt",), float),
    ("solver", "scheme"): (("scheme",), str),
    ("solver", "t_start"): (("t_start",), float),
    ("solver", "t_end"): (("t_end",), float),
    ("solver", "include_calv"): (("include_calv",), _parse_bool),
    ("solver", "paired"): (("paired",), _parse_bool),
    ("solver", "mode"): (("mode",), str),
    ("solver", "t"): (("T",), float),
    ("solver", "t_max"): (("T_max",), float),
    ("solver", "iters"): (("iters",), int),
    ("analysis", "delta"): (("delta",), float),
    ("analysis", "eta"): (("eta",), float),
    ("analysis", "b_target"): (("b_target",), float),
    ("analysis", "tol"): (("tol",), float),
    ("analysis", "fit_window"): (("fit_lo", "fit_hi"), _parse_window),
    ("analysis", "ref_points"): (("ref_points",), int),
    ("analysis", "ref_radius"): (("ref_radius",), float),
    ("output", "dir"): (("out_dir",), str),
    ("output", "seed"): (("seed",), int),
    ("output", "threads"): (("threads",), int),
}


def load_config(path: Optional[str] = None, **overrides) -> ExperimentConfig:
    """Read ``path`` (INI ``key = value`` with sections; ``None`` for
    all defaults), apply keyword overrides, validate.

    Unknown sections or keys are rejected — a typo silently reverting a
    parameter to its default would poison the reproducibility story.
    """
    values: dict = {}
    if path is not None:
        parser = configparser.ConfigParser(
            inline_comment_prefixes=(";", "#"), strict=True)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path!r}: {exc}") from exc
        for section in parser.sections():
            for key, raw in parser.items(section):
                spec = _SCHEMA.get((section.lower(), key.lower()))
                if spec is None:
                    raise ConfigError(
                        f"unknown config key [{section}] {key}")
                names, parse = spec
                try:
                    parsed = parse(raw)
                except ValueError as exc:
                    raise ConfigError(
                        f"bad value for [{section}] {key}: {exc}") from exc
                if len(names) == 1:
                    values[names[0]] = parsed
                else:
                    values.update(zip(names, parsed))
    for key, val in overrides.items():
        if val is not None:
            values[key] = val
    known = {f.name for f in fields(ExperimentConfig)}
    stray = set(values) - known
    if stray:
        raise ConfigError(f"unknown config fields {sorted(stray)}")
    return ExperimentConfig(**values)


# ----------------------------------------------------------------------
# experiment assembly
# ----------------------------------------------------------------------

_POWER_BUILDERS = {
    "cos-power": ("cos_power", re_power_nonlinearity),
    "sin-power": ("sin_power", im_power_nonlinearity),
    "re-im-combo": ("combination", re_im_combination),
}


def build_symbol_family(cfg: ExperimentConfig) -> tuple:
    """The configured symbol as ``(full, g1, rest)`` with ``full`` the
    assembled :class:`FourierSymbol` and ``(g1, rest)`` its resonant
    split (``rest`` drives the second profile and the external terms).
    """
    deg = Fraction(cfg.alpha).limit_denominator(10**9)
    if cfg.family == "gauge":
        full = FourierSymbol({1: complex(cfg.lam)}, deg, cfg.dimension)
    else:
        source, _ = _POWER_BUILDERS[cfg.family]
        full = build_symbol(source, cfg.alpha, cfg.n_max,
                            dimension=cfg.dimension)
    g1, rest = resonant_split(full)
    return full, _real_g1(g1), rest


def build_data(cfg: ExperimentConfig) -> FinalData:
    """The configured Gaussian-family final datum on the experiment grid."""
    return gaussian_final_data(cfg.grid(), eps=cfg.eps, kappa=cfg.kappa,
                               width=cfg.width, delta=cfg.delta)


def _fmt(x) -> str:
    """Shortest-roundtrip decimal for floats; plain str otherwise."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if isinstance(x, (complex, np.complexfloating)):
        z = complex(x)
        return f"{_fmt(z.real)}{'+' if z.imag >= 0 else '-'}{_fmt(abs(z.imag))}j"
    return str(x)


def _jsonable(obj):
    """Recursively coerce numpy scalars/arrays for json.dump."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.complexfloating, complex)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    return obj


class OutputWriter:
    """The single writer of an output directory.

    Commands compute rows in memory (possibly with FFT workers
    underneath) and hand finished tables to this object; it is the one
    code path that touches the filesystem, so concurrent sub-tasks
    cannot interleave writes.
    """

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.written: list = []

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def write_text(self, name: str, text: str) -> str:
        p = self.path(name)
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        self.written.append(name)
        return p

    def write_csv(self, name: str, header: Sequence[str],
                  rows: Sequence[Sequence]) -> str:
        lines = [",".join(header)]
        lines.extend(",".join(_fmt(c) for c in row) for row in rows)
        return self.write_text(name, "\n".join(lines) + "\n")

    def write_json(self, name: str, obj) -> str:
        text = json.dumps(_jsonable(obj), indent=1, sort_keys=True)
        return self.write_text(name, text + "\n")


def _check(name: str, passed, value, target: str,
           criterion: Optional[int] = None) -> dict:
    entry = {"name": name, "passed": bool(passed), "value": _jsonable(value),
             "target": target}
    if criterion is not None:
        entry["criterion"] = criterion
    return entry


def _config_record(cfg: ExperimentConfig) -> dict:
    return {f.name: _jsonable(getattr(cfg, f.name))
            for f in fields(ExperimentConfig)}


def _finish(writer: OutputWriter, command: str, cfg: ExperimentConfig,
            checks: list, extra: Optional[dict] = None) -> int:
    summary = {"command": command, "config": _config_record(cfg),
               "checks": checks, "outputs": sorted(writer.written)}
    if extra:
        summary.update(extra)
    writer.write_json("summary.json", summary)
    failed = [c for c in checks if not c["passed"]]
    for c in failed:
        print(f"FAIL {c['name']}: value {_fmt(c['value'])} vs {c['target']}",
              file=sys.stderr)
    return 1 if failed else 0


# ----------------------------------------------------------------------
# invariant suite
# ----------------------------------------------------------------------

def _random_field(grid: Grid, rng) -> SpectralField:
    vals = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    return SpectralField(grid, vals)


def _draw_alpha(rng) -> float:
    # stays clear of the closed form's poles at odd integers
    return 1.05 + 1.85 * float(rng.random())


def invariant_suite(seed: int = 0, grid: Optional[Grid] = None) -> list:
    """The cross-module invariant battery, seeded.

    Six families — homogeneity, reality, Parseval, unitarity,
    recurrence, log-convexity — each returning ``worst`` as the largest
    violation ratio observed (``<= 1`` passes).
    """
    if grid is None:
        grid = make_grid(3, 32, 20.0)
    rng = np.random.default_rng(seed)
    sym = build_symbol("cos_power", Fraction(5, 3), 21,
                       dimension=grid.d)
    p = float(sym.degree)
    f = _random_field(grid, rng)
    results = []

    def record(name, worst, tol):
        results.append({"name": name, "passed": bool(worst <= 1.0),
                        "worst": float(worst), "tol": tol})

    # homogeneity: F(lam u) = lam^p F(u) for positive scalars
    lam = 0.25 + 9.75 * float(rng.random())
    base = eval_series(sym, f.values)
    gap = np.abs(eval_series(sym, lam * f.values) - lam**p * base)
    allow = 1e-10 * lam**p * np.abs(base) + 1e-12
    record("homogeneity", np.max(gap / allow), "1e-10 relative + 1e-12")

    # reality: real-valued symbols have g_{-n} = conj(g_n)
    alpha_r = _draw_alpha(rng)
    sym_r = build_symbol("cos_power", alpha_r, 33, dimension=grid.d)
    scale = max(abs(c) for c in sym_r.coeffs.values())
    worst = max(abs(sym_r.coeff(-n) - np.conj(sym_r.coeff(n)))
                for n in sym_r.modes) / (1e-12 * scale)
    record("reality", worst, "1e-12")

    # Parseval: L2 norm agrees between representations
    phys = f.norm_l2()
    spec = norm_sobolev(f, 0, 0.0)
    record("parseval", abs(phys - spec) / (1e-12 * phys), "1e-12 relative")

    # unitarity: the propagator and both chirp multiplications
    worst = 0.0
    for g in (free_propagate(f, 3.7), multiply_M(f, 3.7),
              multiply_E(f, 3.7, 2)):
        worst = max(worst, abs(g.norm_l2() - phys) / (1e-12 * phys))
    record("unitarity", worst, "1e-12 relative")

    # recurrence: successive closed-form coefficients a_m = g_{2m+1}
    # satisfy a_m / a_{m-1} = -(m - (alpha+1)/2) / (m + (alpha+1)/2)
    alpha_q = _draw_alpha(rng)
    a = [coeff_cos_power(alpha_q, 2 * m + 1) for m in range(25)]
    worst = 0.0
    for m in range(1, 25):
        expect = -(m - (alpha_q + 1.0) / 2.0) / (m + (alpha_q + 1.0) / 2.0)
        worst = max(worst, abs(a[m] / a[m - 1] - expect) / abs(expect))
    record("recurrence", worst / 1e-10, "1e-10 relative")

    # log-convexity: ||f||_4 <= ||f||_2^{1/3} ||f||_6^{2/3}
    worst = -math.inf
    for g in (f, free_propagate(f, 3.7),
              SpectralField(grid, eval_series(sym, f.values))):
        n2, n4, n6 = (norm_lebesgue(g, q) for q in (2, 4, 6))
        worst = max(worst, (n4 - n2 ** (1.0 / 3.0) * n6 ** (2.0 / 3.0))
                    / (1e-12 * n4))
    record("log-convexity", worst, "1e-12 slack")
    return results


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------

def cmd_coeffs(cfg: ExperimentConfig) -> int:
    """Coefficient tables: closed form vs quadrature, decay fit."""
    writer = OutputWriter(cfg.out_dir)
    checks = []
    full, g1, _ = build_symbol_family(cfg)

    if cfg.family == "gauge":
        # single-entry table; quadrature cross-checks the identity symbol
        F = modulus_power_nonlinearity(cfg.alpha)
        psym = symbol_from_nonlinearity(F)
        quad = cfg.lam * coeff_quadrature(psym, 1)
        closed = full.coeff(1)
        gap = abs(quad - closed) / abs(closed)
        writer.write_csv("coeffs.csv",
                         ["n", "closed_re", "closed_im", "quad_re",
                          "quad_im", "rel_err"],
                         [[1, closed.real, closed.imag, quad.real,
                           quad.imag, gap]])
        checks.append(_check("closed_vs_quadrature_max_rel", gap <= 1e-8,
                             gap, "<= 1e-8", criterion=2))
        return _finish(writer, "coeffs", cfg, checks,
                       {"g1": _jsonable(g1), "asymptotically_free": False})

    _, make_F = _POWER_BUILDERS[cfg.family]
    psym = symbol_from_nonlinearity(make_F(cfg.alpha))
    odd = [n for n in range(-cfg.n_max, cfg.n_max + 1) if n % 2]
    scale = max(abs(full.coeff(n)) for n in odd)
    rows, worst_gap = [], 0.0
    for n in odd:
        closed = full.coeff(n)
        quad = coeff_quadrature(psym, n)
        # per-entry relative error, against the table's scale where the
        # closed form vanishes identically (the combination family)
        ref = abs(closed) if abs(closed) > 1e-13 * scale else scale
        gap = abs(quad - closed) / ref
        worst_gap = max(worst_gap, gap)
        rows.append([n, closed.real, closed.imag, quad.real, quad.imag, gap])
    writer.write_csv("coeffs.csv",
                     ["n", "closed_re", "closed_im", "quad_re", "quad_im",
                      "rel_err"], rows)
    checks.append(_check("closed_vs_quadrature_max_rel", worst_gap <= 1e-8,
                         worst_gap, "<= 1e-8", criterion=2))

    extra = {"g1": _jsonable(g1)}
    free = abs(g1) <= 1e-10
    extra["asymptotically_free"] = free
    if cfg.family == "re-im-combo":
        checks.append(_check("g1_asymptotically_free", free, abs(g1),
                             "<= 1e-10", criterion=4))

    if cfg.n_max >= 31:
        fit = coeff_decay_fit(full, n_min=11, n_max=cfg.n_max)
        target = -(1.0 + cfg.alpha)
        extra["decay"] = {"slope": fit.slope, "target": target,
                          "r_squared": fit.r_squared,
                          "window": list(fit.window)}
        writer.write_csv("decay_fit.csv", ["slope", "target", "r_squared"],
                         [[fit.slope, target, fit.r_squared]])
        checks.append(_check("coefficient_decay_slope",
                             abs(fit.slope - target) <= 0.05, fit.slope,
                             f"{_fmt(target)} +/- 0.05", criterion=3))
    return _finish(writer, "coeffs", cfg, checks, extra)


def _up_section(data: FinalData, g1: float, t: float) -> list:
    """1-D section of u_p along the first axis through the origin."""
    up = make_up(data, g1, t)
    g = up.grid
    idx = [g.N // 2] * g.d
    rows = []
    for j in range(g.N):
        idx[0] = j
        z = up.values[tuple(idx)]
        rows.append([g.x1[j], z.real, z.imag, abs(z)])
    return rows


def cmd_profiles(cfg: ExperimentConfig) -> int:
    """Profile construction: snapshots, dual-form check, decay fits."""
    writer = OutputWriter(cfg.out_dir)
    checks = []
    data = build_data(cfg)
    _, g1, rest = build_symbol_family(cfg)
    has_modes = bool(rest.coeffs)

    # dyadic snapshots over the simulation span
    lo = max(2.0, cfg.t_end)
    snap_times = []
    t = 2.0 ** math.ceil(math.log2(lo))
    while t <= cfg.t_start + 1e-9:
        snap_times.append(t)
        t *= 2.0
    rows = []
    for t in snap_times:
        l2_up = make_up(data, g1, t).norm_l2()
        l2_v = calV_l2_norm(data, rest, g1, t) if has_modes else 0.0
        l2_vp = make_vp(data, rest, g1, t).norm_l2() if has_modes else 0.0
        rows.append([t, l2_up, l2_v, l2_vp])
        writer.write_csv(f"section_t{_fmt(t)}.csv",
                         ["x", "re_up", "im_up", "abs_up"],
                         _up_section(data, g1, t))
    writer.write_csv("snapshots.csv", ["t", "l2_up", "l2_calV", "l2_vp"],
                     rows)

    extra: dict = {"g1": _jsonable(g1)}
    if has_modes:
        # dual-form agreement on the radial reference lattice.  The
        # operator chain is lattice-exact only for data smooth at the
        # origin, so the identity check drops the |xi|^kappa cusp; the
        # decay fits below keep the configured datum.
        data0 = gaussian_final_data(cfg.grid(), eps=cfg.eps, kappa=0.0,
                                    width=cfg.width, delta=cfg.delta)
        extra["dual_form_datum_kappa"] = 0.0
        ref = cfg.reference_grid()
        dual_rows, worst = [], 0.0
        for t in (4.0, 16.0, 64.0):
            closed = calV_closed_form_radial(data0, rest, g1, t, ref)
            oper = calV_operator_form_radial(data0, rest, g1, t, ref)
            denom = closed.norm_l2()
            gap = (closed - oper).norm_l2() / denom if denom else 0.0
            worst = max(worst, gap)
            dual_rows.append([t, denom, gap])
        writer.write_csv("dualform.csv", ["t", "l2_closed", "rel_diff"],
                         dual_rows)
        checks.append(_check("calV_dual_form_rel_diff", worst <= 1e-6,
                             worst, "<= 1e-6", criterion=7))

        # ||calV(t)||_2 decay against the -delta/2 envelope
        ts = [4.0 * 2.0 ** (k / 4.0) for k in range(25)]
        series = [[t, calV_l2_norm(data, rest, g1, t)] for t in ts]
        writer.write_csv("vnorm.csv", ["t", "l2_calV"], series)
        vfit = fit_decay(np.asarray(series))
        extra["calV_fit"] = {"slope": vfit.slope,
                             "bound": -cfg.delta / 2.0 + 0.1,
                             "r_squared": vfit.r_squared}
        checks.append(_check("calV_decay_slope",
                             vfit.slope <= -cfg.delta / 2.0 + 0.1,
                             vfit.slope,
                             f"<= {_fmt(-cfg.delta / 2.0 + 0.1)}",
                             criterion=8))

        # v_p horizon surrogate against T^{-1/2} (report, not a gate:
        # the resolvent profile carries extra decay on this datum)
        hor = [[T, vp_l6_horizon(data, rest, g1, T)]
               for T in (4.0, 8.0, 16.0, 32.0)]
        writer.write_csv("horizon.csv", ["T", "l2l6_surrogate"], hor)
        hfit = fit_decay(np.asarray(hor))
        extra["vp_horizon"] = {"slope": hfit.slope, "target": -0.5,
                               "within_tolerance":
                                   bool(abs(hfit.slope + 0.5) <= 0.1),
                               "r_squared": hfit.r_squared,
                               "report_only": True}
    else:
        extra["calV_identically_zero"] = True
    return _finish(writer, "profiles", cfg, checks, extra)


def cmd_operators(cfg: ExperimentConfig) -> int:
    """Operator probes: MDFM, K_psi flatness, A_n/C_n bounds, suite."""
    writer = OutputWriter(cfg.out_dir)
    checks = []
    rng = np.random.default_rng(cfg.seed)

    # MDFM factorization residuals on the documented configurations.
    # Width 1.5 keeps the spectral tail at the d=3 lattice edge (xi_max
    # ~ 5) below the chirp-z comparison floor.
    gauss = lambda *c: np.exp(-sum(x**2 for x in c) / 4.5)  # noqa: E731
    mdfm_rows, worst = [], 0.0
    for d, N, L, t_list in ((1, 512, 40.0, (0.5, 1.0, 2.0)),
                            (3, 64, 20.0, (1.0,))):
        f = field_from_function(make_grid(d, N, L), gauss)
        for t in t_list:
            res = mdfm_residual(f, t)
            worst = max(worst, res)
            mdfm_rows.append([d, N, L, t, res])
    writer.write_csv("mdfm.csv", ["d", "N", "L", "t", "rel_residual"],
                     mdfm_rows)
    checks.append(_check("mdfm_residual_max", worst <= 1e-6, worst,
                         "<= 1e-6", criterion=5))

    # K_psi flatness slopes
    t_list = (4.0, 8.0, 16.0, 32.0, 64.0)
    psi0 = make_psi("psi0")
    flat_rows = []
    for theta in (1.0, 1.5, 2.0):
        for n in (2, 5):
            fit = probe_K_flatness(psi0, theta, t_list, n)
            ok = abs(fit.slope + theta / 2.0) <= 0.1
            flat_rows.append(["psi0", theta, n, fit.slope, -theta / 2.0,
                              fit.r_squared])
            checks.append(_check(f"K_flatness_theta{_fmt(theta)}_n{n}",
                                 ok, fit.slope,
                                 f"{_fmt(-theta / 2.0)} +/- 0.1",
                                 criterion=6))
    # kernel table: values at zero, gradient flatness, theta=2 slope
    psi_rows = []
    for kind in ("psi0", "psi1", "psi2"):
        psi = make_psi(kind)
        fit = probe_K_flatness(psi, 2.0, t_list, 2)
        psi_rows.append([kind, psi.value_at_zero.real,
                         psi.value_at_zero.imag,
                         psi.gradient_at_zero_is_zero, fit.slope])
        flat_rows.append([kind, 2.0, 2, fit.slope, -1.0, fit.r_squared])
    writer.write_csv("flatness.csv",
                     ["kernel", "theta", "n", "slope", "expected",
                      "r_squared"], flat_rows)
    writer.write_csv("psi_table.csv",
                     ["kernel", "value0_re", "value0_im", "flat_gradient",
                      "slope_theta2"], psi_rows)

    # A_n / C_n bound probes
    grid = cfg.grid()
    ones = SpectralField(grid, np.ones(grid.shape, dtype=complex))
    f = _random_field(grid, rng)
    fnorm = f.norm_l2()
    origin = tuple([grid.N // 2] * grid.d)
    an_rows = []
    for n in (2, 3, 5, 9):
        for t in (1.0, 4.0, 16.0):
            w = multiply_An(ones, t, n)
            peak = float(np.max(np.abs(w.values)))
            at0 = w.values[origin]
            B = b_weight(grid, t)
            bgap = float(np.max(grid.xsq * B**2)) * t
            cnorm = resolvent_Cn(f, t, n).norm_l2() / fnorm
            grad = norm_sobolev_dot(resolvent_Cn(f, t, n), 1.0)
            cstar = math.sqrt(n / (2.0 * (n - 1.0)))
            gconst = grad * math.sqrt(t) / fnorm
            an_rows.append([n, t, peak, abs(at0 - 1.0), bgap, cnorm, gconst,
                            cstar])
            checks.append(_check(f"An_sup_n{n}_t{_fmt(t)}",
                                 peak <= 1.0 + 1e-12, peak, "<= 1"))
            checks.append(_check(f"An_origin_n{n}_t{_fmt(t)}",
                                 abs(at0 - 1.0) <= 1e-12, abs(at0 - 1.0),
                                 "== 1 at x=0"))
            checks.append(_check(f"B_weight_theta2_t{_fmt(t)}",
                                 bgap <= 1.0 + 1e-12, bgap,
                                 "|x|^2 B^2 <= 1/t"))
            checks.append(_check(f"Cn_l2_norm_n{n}_t{_fmt(t)}",
                                 cnorm <= 1.0 + 1e-12, cnorm, "<= 1"))
            checks.append(_check(f"Cn_grad_damping_n{n}_t{_fmt(t)}",
                                 gconst <= cstar * (1.0 + 1e-6), gconst,
                                 f"<= sqrt(n/(2(n-1))) = {_fmt(cstar)}"))
    # t -> 0 limit: C_n approaches the identity
    tiny = resolvent_Cn(f, 1e-12, 2)
    idgap = (tiny - f).norm_l2() / fnorm
    checks.append(_check("Cn_identity_at_t0", idgap <= 1e-9, idgap,
                         "<= 1e-9"))
    writer.write_csv("an_cn.csv",
                     ["n", "t", "sup_An", "origin_gap", "x2B2_t", "Cn_norm",
                      "grad_const", "grad_bound"], an_rows)

    # cross-module invariant suite
    suite = invariant_suite(cfg.seed)
    writer.write_csv("invariants.csv", ["name", "passed", "worst"],
                     [[r["name"], r["passed"], r["worst"]] for r in suite])
    for r in suite:
        checks.append(_check(f"invariant_{r['name']}", r["passed"],
                             r["worst"], f"<= 1 ({r['tol']})", criterion=13))
    return _finish(writer, "operators", cfg, checks, {"seed": cfg.seed})


def _solver_config(cfg: ExperimentConfig) -> SolverConfig:
    return SolverConfig(grid=cfg.grid(), dt=cfg.dt, scheme=cfg.scheme,
                        t_start=cfg.t_start, t_end=cfg.t_end,
                        nonlinearity=None)


def _deviation_series(traj, data: FinalData, g1: float) -> np.ndarray:
    rows = []
    for t in traj.times:
        dev = (traj.states[t] - make_up(data, g1, t)).norm_l2()
        rows.append([t, dev])
    return np.asarray(rows)


def cmd_simulate(cfg: ExperimentConfig) -> int:
    """Backward integration and/or Picard iteration, archived."""
    writer = OutputWriter(cfg.out_dir)
    checks = []
    extra: dict = {}
    data = build_data(cfg)
    _, g1, rest = build_symbol_family(cfg)
    scfg = _solver_config(cfg)

    if cfg.mode in ("backward", "both"):
        traj = integrate_final_state(data, rest, g1, scfg,
                                      include_calV=cfg.include_calv)
        save_trajectory(traj, writer.path("trajectory"))
        writer.written.append("trajectory")
        series = _deviation_series(traj, data, g1)
        writer.write_csv("deviation.csv", ["t", "l2_deviation"], series)
        window = (cfg.fit_lo, cfg.fit_hi)
        fit = fit_decay(series[series[:, 1] > 0], window=window)
        verdict = rate_verdict(fit, cfg.delta, cfg.tol)
        inside = (series[:, 0] >= window[0]) & (series[:, 0] <= window[1])
        dev_in = series[inside]
        monotone = bool(np.all(np.diff(dev_in[:, 1]) <= 0))
        extra["backward"] = {
            "b_fit": fit.rate, "intercept": fit.intercept,
            "r_squared": fit.r_squared, "window": list(fit.window),
            "monotone": monotone, "verdict": _jsonable(verdict),
            "metadata": _jsonable(traj.metadata)}
        checks.append(_check("deviation_rate_b",
                             verdict["uniqueness"], fit.rate,
                             f">= {_fmt(0.75 - cfg.tol)}", criterion=11))
        checks.append(_check("deviation_monotone", monotone,
                             float(np.max(np.diff(dev_in[:, 1]), initial=-1.0)),
                             "non-increasing over the fit window",
                             criterion=11))
        if cfg.paired:
            traj2 = integrate_final_state(data, rest, g1, scfg,
                                           include_calV=not cfg.include_calv)
            save_trajectory(traj2, writer.path("trajectory_paired"))
            writer.written.append("trajectory_paired")
            series2 = _deviation_series(traj2, data, g1)
            writer.write_csv("deviation_paired.csv", ["t", "l2_deviation"],
                             series2)
            fit2 = fit_decay(series2[series2[:, 1] > 0], window=window)
            base, other = ((fit, fit2) if not cfg.include_calv
                           else (fit2, fit))
            extra["paired"] = {
                "constant_plain": math.exp(base.intercept),
                "constant_with_calV": math.exp(other.intercept),
                "reduction": math.exp(base.intercept)
                             - math.exp(other.intercept)}

    if cfg.mode in ("picard", "both"):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            traj, ratios = picard_iterate(data, rest, g1, scfg,
                                          T=cfg.T, T_max=cfg.T_max,
                                          iters=cfg.iters)
        save_trajectory(traj, writer.path("picard_trajectory"))
        writer.written.append("picard_trajectory")
        meta = traj.metadata
        writer.write_csv("picard.csv", ["iteration", "difference_norm",
                                        "contraction_ratio"],
                         [[k + 1, d, (ratios[k - 1] if k >= 1 else "")]
                          for k, d in enumerate(meta["difference_norms"])])
        diverged = bool(meta["divergence_flag"])
        extra["picard"] = {
            "ratios": _jsonable(list(ratios)), "diverged": diverged,
            "warnings": sorted(str(w.message) for w in caught
                               if "diverg" in str(w.message).lower()),
            "metadata": _jsonable(meta)}
        checks.append(_check("picard_contraction",
                             (not diverged) and all(r < 1.0 for r in ratios),
                             max(ratios) if ratios else math.nan,
                             "ratios < 1, no divergence flag",
                             criterion=12))
    return _finish(writer, "simulate", cfg, checks, extra)


def cmd_report(cfg: ExperimentConfig, run_dirs: Sequence[str]) -> int:
    """Aggregate ``summary.json`` files into one pass/fail report."""
    if not run_dirs:
        print("report: no run directories given", file=sys.stderr)
        return 2
    entries = []
    for d in run_dirs:
        path = os.path.join(d, "summary.json")
        try:
            with open(path, "r", encoding="utf-8") as fh:
                summary = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"report: cannot read {path}: {exc}", file=sys.stderr)
            return 2
        for c in summary.get("checks", []):
            entries.append((d, summary.get("command", "?"), c))
    writer = OutputWriter(cfg.out_dir)
    lines = ["acceptance report", "=================", ""]
    n_fail = 0
    for d, command, c in entries:
        status = "PASS" if c["passed"] else "FAIL"
        n_fail += 0 if c["passed"] else 1
        crit = f" [criterion {c['criterion']}]" if "criterion" in c else ""
        val = c["value"]
        val_s = _fmt(val) if isinstance(val, (int, float)) else str(val)
        lines.append(f"{status}  {command}:{c['name']}{crit}  "
                     f"value {val_s}  target {c['target']}  ({d})")
    lines.append("")
    lines.append(f"{len(entries) - n_fail} passed, {n_fail} failed, "
                 f"{len(entries)} total")
    text = "\n".join(lines) + "\n"
    writer.write_text("report.txt", text)
    sys.stdout.write(text)
    return 1 if n_fail else 0


# ----------------------------------------------------------------------
# entry point
# ----------------------------------------------------------------------

def _thread_count(flag: Optional[int], cfg_threads: int) -> int:
    if flag is not None:
        return flag
    env = os.environ.get(ENV_THREADS)
    if env is not None:
        try:
            n = int(env)
        except ValueError as exc:
            raise ConfigError(
                f"{ENV_THREADS} = {env!r} is not an integer") from exc
        if n < 1:
            raise ConfigError(f"{ENV_THREADS} = {env!r} violates threads >= 1")
        return n
    return cfg_threads


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="nlslab", description="critical-NLS final-state laboratory")
    parser.add_argument("--config", metavar="PATH",
                        help="experiment config (INI key = value)")
    parser.add_argument("--out", metavar="DIR", help="output directory")
    parser.add_argument("--seed", type=int, help="seed override")
    parser.add_argument("--threads", type=int,
                        help=f"FFT worker count (default: ${ENV_THREADS} "
                             "or the config)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("coeffs", help="coefficient tables and decay fit")
    p.add_argument("--family", choices=_FAMILIES)
    p.add_argument("--alpha", type=float)
    p.add_argument("--nmax", type=int, dest="n_max")
    sub.add_parser("profiles", help="profile snapshots and scaling reports")
    sub.add_parser("operators", help="operator probes and invariant suite")
    p = sub.add_parser("simulate", help="backward integration / Picard")
    p.add_argument("--mode", choices=_MODES)
    p = sub.add_parser("report", help="aggregate run summaries")
    p.add_argument("run_dirs", nargs="*", metavar="RUN_DIR")

    args = parser.parse_args(argv)
    overrides = {"out_dir": args.out, "seed": args.seed}
    for name in ("family", "alpha", "n_max", "mode"):
        if hasattr(args, name):
            overrides[name] = getattr(args, name)
    try:
        cfg = load_config(args.config, **overrides)
        cfg = replace(cfg, threads=_thread_count(args.threads, cfg.threads))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    set_workers(cfg.threads)

    if args.command == "coeffs":
        return cmd_coeffs(cfg)
    if args.command == "profiles":
        return cmd_profiles(cfg)
    if args.command == "operators":
        return cmd_operators(cfg)
    if args.command == "simulate":
        return cmd_simulate(cfg)
    if args.command == "report":
        return cmd_report(cfg, args.run_dirs)
    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
