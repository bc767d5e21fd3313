"""Experiment presets, flat-file configuration, and artifact persistence.

A configuration is a flat, typed key/value file; every artifact written to
disk embeds the configuration hash, master seed, and code version, so any
output can be reproduced by replaying its embedded config.  Presets bundle
the experiment families used by the acceptance suite; each preset's runner
is a pure function of the config that returns a JSON-serializable result.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import math
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import ConfigurationError
from .noise import (
    BasisFamily,
    GridSpec,
    generate_rectangle_noise,
    generate_series_noise,
    validate_covariance,
)
from .kernels import (
    apply_bessel_order,
    bessel_kernel_eval,
    check_multiplicative_inequality,
    fractional_norm,
    kernel_total_integral,
    squared_kernel_integral,
)
from .solver import (
    InitialData,
    ProblemSpec,
    evolve,
    path_seeds,
    path_to_csv,
    run_ensemble,
    spec_hash,
)
from .estimator import (
    Window,
    aggregate_structure,
    mass_bound_check,
    nonexplosion_curve,
    path_structure,
    power_law_paths,
    structure_function,
    verify_case1_exponents,
    verify_case2_exponents,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

_LIST_KEYS = {"stop_levels", "lags", "lags_time", "lambda_values",
              "lambda0_values", "m_values", "hurst_values", "window_t", "window_x"}
_INT_KEYS = {"n_x", "n_t", "n_paths", "master_seed", "store_every", "n_boot",
             "n_fields", "threads"}
_FLOAT_KEYS = {"x_min", "x_max", "t_end", "dt_factor", "lam", "lam0", "K",
               "cutoff_m", "t_burn", "q"}
_BOOL_KEYS = {"dump_trajectories"}
_STR_KEYS = {"name", "preset", "boundary", "regime", "coeff_a", "coeff_b",
             "coeff_c", "coeff_bbar", "mu", "u0", "flux_scheme", "out", "sigma"}
_KEY_ALIASES = {"lambda": "lam", "lambda0": "lam0"}


@dataclass
class ExperimentConfig:
    """Flat, fully serializable description of one experiment."""

    name: str = "custom"
    preset: str = "custom"
    # grid
    x_min: float = -8.0
    x_max: float = 8.0
    n_x: int = 512
    t_end: float = 1.0
    n_t: int = 0              # 0 derives n_t from dt_factor * dx^2
    dt_factor: float = 0.25
    boundary: str = "periodic"
    # problem
    regime: str = "case1_bounded_lipschitz"
    lam: float = 1.0
    lam0: float = 0.0
    K: float = 1.0
    coeff_a: str = "1.0"
    coeff_b: str = "0.0"
    coeff_c: str = "0.0"
    coeff_bbar: str = "0.0"
    mu: str = "1.0"
    sigma: str = "default"    # "default" (K-clamped) or "zero"
    u0: str = "bump(height=1.0,center=0.0,width=1.0)"
    cutoff_m: float = 8.0     # 0 disables the cutoff
    flux_scheme: str = "central"
    # ensemble
    n_paths: int = 200
    n_fields: int = 10000
    master_seed: int = 20260810
    stop_levels: tuple = ()
    t_burn: float = -1.0      # negative -> 0.1 * t_end
    store_every: int = 1
    # estimator
    q: float = 2.0
    lags: tuple = (2, 4, 8, 16, 32)
    lags_time: tuple = (2, 4, 8, 16, 32, 64)
    window_t: tuple = ()
    window_x: tuple = ()
    n_boot: int = 200
    # sweeps
    lambda_values: tuple = ()
    lambda0_values: tuple = ()
    m_values: tuple = ()
    hurst_values: tuple = (0.25, 0.5, 0.75)
    # output / execution
    out: str = "runs"
    dump_trajectories: bool = False
    threads: int = 1

    # -- derived objects ----------------------------------------------------

    def grid(self) -> GridSpec:
        n_t = self.n_t
        if n_t == 0:
            dx = (self.x_max - self.x_min) / self.n_x
            n_t = int(math.ceil(self.t_end / (self.dt_factor * dx * dx)))
        return GridSpec(self.x_min, self.x_max, self.n_x, self.t_end, n_t,
                        self.boundary)

    def problem_spec(self, lam=None, lam0=None, cutoff_m=None) -> ProblemSpec:
        sigma = None
        if self.sigma == "zero":
            def sigma(u):
                return np.zeros_like(np.asarray(u, dtype=float))
            sigma.__qualname__ = "zero"
        elif self.sigma != "default":
            raise ConfigurationError(f"unknown sigma descriptor {self.sigma!r}")
        m = self.cutoff_m if cutoff_m is None else cutoff_m
        return ProblemSpec(
            regime=self.regime,
            lam=self.lam if lam is None else float(lam),
            lam0=self.lam0 if lam0 is None else float(lam0),
            K=self.K,
            u0=parse_initial_data(self.u0),
            coeff_a=_coeff(self.coeff_a),
            coeff_b=_coeff(self.coeff_b),
            coeff_c=_coeff(self.coeff_c),
            coeff_bbar=_coeff(self.coeff_bbar),
            mu=_coeff(self.mu),
            sigma=sigma,
            cutoff_m=None if m in (None, 0, 0.0) else float(m),
            flux_scheme=self.flux_scheme,
        )

    def window(self) -> Window:
        t0, t1 = self.window_t if self.window_t else (0.15 * self.t_end, self.t_end)
        if self.window_x:
            x0, x1 = self.window_x
        else:
            pad = 0.05 * (self.x_max - self.x_min)
            x0, x1 = self.x_min + pad, self.x_max - pad
        return Window(float(t0), float(t1), float(x0), float(x1))

    def burn_in(self) -> float:
        return 0.1 * self.t_end if self.t_burn < 0 else self.t_burn

    # -- serialization ------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            key = "lambda" if f.name == "lam" else (
                "lambda0" if f.name == "lam0" else f.name)
            if isinstance(value, tuple):
                rendered = ",".join(repr(v) if isinstance(v, float) else str(v)
                                    for v in value)
            elif isinstance(value, bool):
                rendered = "true" if value else "false"
            elif isinstance(value, float):
                rendered = repr(value)
            else:
                rendered = str(value)
            lines.append(f"{key} = {rendered}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"line {lineno}: expected 'key = value'")
            key, _, rendered = line.partition("=")
            key = _KEY_ALIASES.get(key.strip(), key.strip())
            rendered = rendered.strip()
            values[key] = _parse_value(key, rendered, lineno)
        base = cls()
        unknown = set(values) - {f.name for f in fields(base)}
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        if "preset" in values and values["preset"] != "custom":
            base = preset_config(values["preset"])
        return replace(base, **values)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text())

    def config_hash(self) -> str:
        skip = ("out", "threads", "dump_trajectories")
        lines = [ln for ln in self.to_text().splitlines()
                 if ln.split(" =", 1)[0] not in skip]
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]

    def validate(self) -> None:
        grid = self.grid()
        sweeps = self.lambda_values or (None,)
        sweeps0 = self.lambda0_values or (None,)
        ms = self.m_values or (None,)
        for lam in sweeps:
            for lam0 in sweeps0:
                for m in ms:
                    self.problem_spec(lam=lam, lam0=lam0, cutoff_m=m).validate(grid)


def _parse_value(key: str, rendered: str, lineno: int):
    try:
        if key in _LIST_KEYS:
            if not rendered:
                return ()
            parts = [p.strip() for p in rendered.split(",") if p.strip()]
            if key in ("lags", "lags_time"):
                return tuple(int(p) for p in parts)
            return tuple(float(p) for p in parts)
        if key in _INT_KEYS:
            return int(rendered)
        if key in _FLOAT_KEYS:
            return float(rendered)
        if key in _BOOL_KEYS:
            if rendered.lower() in ("true", "1", "yes"):
                return True
            if rendered.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {rendered}")
        if key in _STR_KEYS:
            return rendered
    except ValueError as exc:
        raise ConfigurationError(f"line {lineno}: bad value for {key}: {exc}") from exc
    raise ConfigurationError(f"line {lineno}: unknown config key {key!r}")


def _coeff(text: str):
    """Config coefficient: plain float or an expression in (t, x)."""
    try:
        return float(text)
    except ValueError:
        return text.removeprefix("expr:").strip()


_U0_RE = re.compile(r"^(\w+)\((.*)\)$")


def parse_initial_data(descriptor: str) -> InitialData:
    """Parse 'constant(v)', 'bump(height=..,center=..,width=..)', 'table(path)'."""
    m = _U0_RE.match(descriptor.strip())
    if not m:
        raise ConfigurationError(f"cannot parse initial data descriptor {descriptor!r}")
    kind, inner = m.group(1), m.group(2)
    if kind == "constant":
        return InitialData.constant(float(inner))
    if kind == "bump":
        kwargs = {}
        for part in inner.split(","):
            if not part.strip():
                continue
            k, _, v = part.partition("=")
            kwargs[k.strip()] = float(v)
        return InitialData.bump(**kwargs)
    if kind == "table":
        data = np.loadtxt(inner.strip(), delimiter=",")
        return InitialData.table(data[:, 0], data[:, 1])
    raise ConfigurationError(f"unknown initial data kind {kind!r}")


# ---------------------------------------------------------------------------
# presets

def _preset_noise_validate() -> ExperimentConfig:
    return ExperimentConfig(
        name="noise-validate", preset="noise-validate",
        x_min=0.0, x_max=4.0, n_x=512, t_end=2.0, n_t=512,
        n_fields=10000, master_seed=101,
    )


def _preset_heat_oracle() -> ExperimentConfig:
    return ExperimentConfig(
        name="heat-oracle", preset="heat-oracle",
        x_min=-8.0, x_max=8.0, n_x=512, t_end=0.5,
        regime="case1_bounded_lipschitz", lam=1.0, K=1.0,
        coeff_a="1.0", coeff_bbar="0.0", sigma="zero",
        u0="bump(height=1.0,center=0.0,width=1.0)", cutoff_m=8.0,
        n_paths=1, master_seed=7,
    )


def _preset_kernel_checks() -> ExperimentConfig:
    return ExperimentConfig(name="kernel-checks", preset="kernel-checks")


def _preset_spectral_calculus() -> ExperimentConfig:
    return ExperimentConfig(
        name="spectral-calculus", preset="spectral-calculus",
        n_x=256, x_min=-4.0, x_max=4.0, n_paths=100, master_seed=11,
    )


def _preset_case1_exponents() -> ExperimentConfig:
    return ExperimentConfig(
        name="case1-exponents", preset="case1-exponents",
        x_min=-12.0, x_max=12.0, n_x=2048, t_end=0.5,
        regime="case1_bounded_lipschitz", K=1.0,
        coeff_a="1.0", coeff_bbar="1.0", u0="constant(1.0)", cutoff_m=8.0,
        lambda_values=(0.25, 0.5, 1.0),
        n_paths=100, master_seed=404, store_every=4,
        q=2.0, lags=(2, 4, 8, 16, 32), lags_time=(8, 16, 32, 64, 128),
        window_t=(0.15, 0.5), window_x=(-10.0, 10.0), n_boot=200,
    )


def _preset_case2_surface() -> ExperimentConfig:
    return ExperimentConfig(
        name="case2-surface", preset="case2-surface",
        x_min=-12.0, x_max=12.0, n_x=1024, t_end=0.5,
        regime="case2_superlinear", K=1.0,
        coeff_a="1.0", coeff_bbar="1.0", mu="1.0",
        u0="constant(1.0)", cutoff_m=8.0,
        lambda_values=(0.5, 0.9), lambda0_values=(0.0, 0.4),
        n_paths=60, master_seed=505, store_every=4,
        q=2.0, lags=(2, 4, 8, 16), lags_time=(8, 16, 32, 64),
        window_t=(0.15, 0.5), window_x=(-10.0, 10.0), n_boot=200,
    )


def _preset_mass_bounds() -> ExperimentConfig:
    return ExperimentConfig(
        name="mass-bounds", preset="mass-bounds",
        x_min=-8.0, x_max=8.0, n_x=512, t_end=1.0,
        regime="case2_superlinear", K=1.0, lam=0.5, lam0=0.25,
        coeff_a="1.0", coeff_bbar="1.0", mu="1.0",
        u0="bump(height=2.0,center=0.0,width=1.0)", cutoff_m=8.0,
        n_paths=200, master_seed=606, store_every=0x7fffffff,
    )


def _preset_nonexplosion() -> ExperimentConfig:
    return ExperimentConfig(
        name="nonexplosion", preset="nonexplosion",
        x_min=-8.0, x_max=8.0, n_x=512, t_end=1.0,
        regime="case2_superlinear", K=1.0, lam=0.5, lam0=0.25,
        coeff_a="1.0", coeff_bbar="1.0", mu="1.0",
        u0="bump(height=2.0,center=0.0,width=1.0)",
        m_values=(4.0, 8.0, 16.0),
        stop_levels=(3.0, 3.5, 4.0, 5.0, 6.0),
        n_paths=200, master_seed=707, store_every=0x7fffffff,
    )


def _preset_localization() -> ExperimentConfig:
    return ExperimentConfig(
        name="localization-consistency", preset="localization-consistency",
        x_min=-8.0, x_max=8.0, n_x=512, t_end=1.0,
        regime="case2_superlinear", K=1.0, lam=0.5, lam0=0.25,
        coeff_a="1.0", coeff_bbar="1.0", mu="1.0",
        u0="bump(height=2.5,center=0.0,width=1.0)",
        m_values=(4.0, 8.0, 16.0), stop_levels=(4.0,),
        n_paths=32, master_seed=808, store_every=1,
    )


def _preset_calibration() -> ExperimentConfig:
    return ExperimentConfig(
        name="estimator-calibration", preset="estimator-calibration",
        n_x=2 ** 14, n_paths=100, master_seed=909,
        hurst_values=(0.25, 0.5, 0.75),
        lags=(2, 4, 8, 16, 32, 64, 128, 256, 512),
    )


_PRESETS = {
    "noise-validate": _preset_noise_validate,
    "heat-oracle": _preset_heat_oracle,
    "kernel-checks": _preset_kernel_checks,
    "spectral-calculus": _preset_spectral_calculus,
    "case1-exponents": _preset_case1_exponents,
    "case2-surface": _preset_case2_surface,
    "mass-bounds": _preset_mass_bounds,
    "nonexplosion": _preset_nonexplosion,
    "localization-consistency": _preset_localization,
    "estimator-calibration": _preset_calibration,
}


def preset_list() -> list[str]:
    """Names of the built-in experiment presets, in stable order."""
    return list(_PRESETS)


def preset_config(name: str) -> ExperimentConfig:
    if name not in _PRESETS:
        raise ConfigurationError(
            f"unknown preset {name!r}; available: {', '.join(_PRESETS)}")
    return _PRESETS[name]()


# ---------------------------------------------------------------------------
# runners (pure: config -> results dict)

NOISE_PROBE_PAIRS = [
    (((0.0, 1.0), (0.0, 1.0)), ((0.0, 1.0), (0.0, 1.0))),
    (((0.0, 1.0), (0.0, 1.0)), ((1.0, 2.0), (0.0, 1.0))),
    (((0.0, 1.0), (0.0, 2.0)), ((0.0, 1.0), (1.0, 3.0))),
    (((0.0, 2.0), (0.0, 1.0)), ((0.0, 1.0), (0.0, 4.0))),
    (((0.0, 0.5), (0.0, 4.0)), ((0.0, 2.0), (0.0, 0.5))),
    (((0.0, 2.0), (0.0, 4.0)), ((0.0, 2.0), (0.0, 4.0))),
    (((0.5, 1.5), (1.0, 2.0)), ((1.0, 2.0), (1.5, 3.0))),
    (((0.0, 1.0), (2.0, 3.0)), ((0.0, 1.0), (3.0, 4.0))),
    (((0.0, 1.0), (0.0, 4.0)), ((1.0, 2.0), (0.0, 4.0))),
    (((0.25, 1.75), (0.5, 2.5)), ((0.5, 1.0), (1.0, 4.0))),
]


def run_noise_validate(cfg: ExperimentConfig) -> dict:
    """Rectangle-increment covariance validation plus the two-construction
    second-order comparison."""
    grid = cfg.grid()
    seeds = path_seeds(cfg.master_seed, cfg.n_fields)
    fields_iter = (generate_rectangle_noise(grid, int(s)) for s in seeds)
    cov_report = validate_covariance(fields_iter, NOISE_PROBE_PAIRS, grid=grid)
    max_abs_z = max(abs(rec["z"]) for rec in cov_report)

    eq = compare_series_rectangle(n_fields=4000, master_seed=cfg.master_seed + 1)
    return {
        "covariance": cov_report,
        "max_abs_z": max_abs_z,
        "n_fields": cfg.n_fields,
        "series_rectangle": eq,
    }


def compare_series_rectangle(n_fields: int = 4000, master_seed: int = 102,
                             n_x: int = 128, n_t: int = 128) -> dict:
    """Second-order statistics of the two noise constructions on one grid.

    Probes single-cell variances, a same-time neighbor covariance, and two
    rectangle sums; reports the largest discrepancy in combined standard
    errors.
    """
    grid = GridSpec(0.0, 4.0, n_x, 1.0, n_t)
    basis = BasisFamily("trigonometric", n_x, grid)
    seeds = path_seeds(master_seed, 2 * n_fields)

    cell_probes = [(3, 5), (60, 64), (120, 100)]
    rect_probes = [((0.0, 0.5), (0.0, 2.0)), ((0.25, 1.0), (1.0, 3.0))]

    def collect(make):
        rows = []
        for s in seeds[:n_fields] if make == "rect" else seeds[n_fields:]:
            if make == "rect":
                f = generate_rectangle_noise(grid, int(s))
            else:
                f = generate_series_noise(grid, basis, int(s))
            inc = f.increments
            row = [inc[n, j] for (n, j) in cell_probes]
            row.append(inc[10, 40] * inc[10, 41])  # neighbor product, same time
            for (tsp, xsp) in rect_probes:
                n0 = int(round(tsp[0] / grid.dt)); n1 = int(round(tsp[1] / grid.dt))
                j0 = int(round(xsp[0] / grid.dx)); j1 = int(round(xsp[1] / grid.dx))
                row.append(inc[n0:n1, j0:j1].sum())
            rows.append(row)
        return np.asarray(rows)

    rect = collect("rect")
    seri = collect("series")
    probes = []
    worst = 0.0
    n_cell = len(cell_probes)
    for i in range(rect.shape[1]):
        if i < n_cell:
            a, b = rect[:, i].var(), seri[:, i].var()
            se = np.sqrt(2.0 / n_fields) * max(a, b)
            kind = f"cell_var{cell_probes[i]}"
        elif i == n_cell:
            a, b = rect[:, i].mean(), seri[:, i].mean()
            se = np.sqrt(rect[:, i].var() / n_fields + seri[:, i].var() / n_fields)
            kind = "neighbor_cov"
        else:
            a, b = rect[:, i].var(), seri[:, i].var()
            se = np.sqrt(2.0 / n_fields) * max(a, b)
            kind = f"rect_var{i - n_cell}"
        z = abs(a - b) / se if se > 0 else 0.0
        worst = max(worst, z)
        probes.append({"probe": kind, "rectangle": float(a), "series": float(b),
                       "z": float(z)})
    return {"probes": probes, "max_abs_z": float(worst), "n_fields": n_fields,
            "n_modes": n_x}


def run_heat_oracle(cfg: ExperimentConfig) -> dict:
    """Deterministic diffusion against the exact periodic spectral solution."""
    grid = cfg.grid()
    spec = cfg.problem_spec()
    path = evolve(spec, grid, None, store_every=grid.n_t)
    numeric = path.final_state()
    u0 = spec.u0.sample(grid)
    xi = 2.0 * np.pi * np.fft.rfftfreq(grid.n_x, d=grid.dx)
    a = spec.coeff_a.at(0.0, grid.x_centers())[0]
    exact = np.fft.irfft(np.fft.rfft(u0) * np.exp(-a * xi ** 2 * grid.t_end),
                         n=grid.n_x)
    rel_l2 = float(np.linalg.norm(numeric - exact) / np.linalg.norm(exact))
    return {"rel_l2_error": rel_l2, "n_x": grid.n_x, "n_t": grid.n_t,
            "t_end": grid.t_end}


def run_kernel_checks(cfg: ExperimentConfig) -> dict:
    """Kernel mass, origin singularity slope, and square-integrability scan."""
    del cfg
    integrals = {repr(g): kernel_total_integral(g) for g in (0.5, 1.0, 1.5, 2.0)}

    xs = np.logspace(-3, -2, 40)
    kern = bessel_kernel_eval(0.5, xs)
    slope = float(np.polyfit(np.log(xs), np.log(kern.values()), 1)[0])

    sizes = [2 ** 17, 2 ** 18, 2 ** 19, 2 ** 20, 2 ** 21]
    scan = {}
    for kappa in (0.25, 0.0):
        seq = [squared_kernel_integral(0.5 + kappa, n_points=n) for n in sizes]
        diffs = [abs(seq[i + 1] - seq[i]) for i in range(len(seq) - 1)]
        # convergent tails shrink geometrically under refinement; the
        # logarithmically divergent case adds a constant per doubling
        converged = diffs[-1] < 0.01 * seq[-1] and diffs[-1] < 0.7 * diffs[0]
        scan[repr(kappa)] = {"values": seq, "diffs": diffs,
                             "converged": bool(converged)}
    return {"integrals": integrals, "singularity_slope": slope,
            "square_integrability": scan}


def _random_smooth_fields(grid: GridSpec, count: int, seed: int) -> list:
    rng = np.random.Generator(np.random.Philox(key=seed))
    k = np.fft.rfftfreq(grid.n_x, d=grid.dx)
    decay = np.zeros_like(k)
    decay[1:] = k[1:] ** -1.0
    out = []
    for _ in range(count):
        coeff = (rng.standard_normal(k.size) + 1j * rng.standard_normal(k.size)) * decay
        out.append(np.fft.irfft(coeff, n=grid.n_x))
    return out


def run_spectral_calculus(cfg: ExperimentConfig) -> dict:
    """Isometry composition and interpolation inequality on random fields."""
    grid = cfg.grid()
    fields = _random_smooth_fields(grid, cfg.n_paths, cfg.master_seed)
    rng = np.random.Generator(np.random.Philox(key=cfg.master_seed + 1))
    worst_rel = 0.0
    for u in fields:
        gamma = float(rng.uniform(-1.5, 1.5))
        mu_ord = float(rng.uniform(-1.5, 1.5))
        v = apply_bessel_order(u, mu_ord, grid)
        lhs = fractional_norm(v, gamma - mu_ord, 2.0, grid).value
        rhs = fractional_norm(u, gamma, 2.0, grid).value
        worst_rel = max(worst_rel, abs(lhs - rhs) / rhs)
    violations = 0
    for u in fields:
        rec = check_multiplicative_inequality(u, (0.0, 1.0), (2.0, 2.0), 0.5, grid)
        if not rec["ok"]:
            violations += 1
    return {"isometry_max_rel_error": float(worst_rel),
            "multiplicative_violations": violations,
            "n_fields": len(fields)}


def _exponent_reports(cfg: ExperimentConfig, spec: ProblemSpec, grid: GridSpec,
                      boot_seed: int) -> dict:
    """Run one ensemble, streaming per-path structure values (states dropped)."""
    window = cfg.window()
    space_rows, time_rows = [], []

    def hook(_index, path):
        space_rows.append(path_structure(path, "space", cfg.q, cfg.lags, window))
        time_rows.append(path_structure(path, "time", cfg.q, cfg.lags_time, window))

    summary = run_ensemble(spec, grid, cfg.n_paths, cfg.master_seed,
                           stop_levels=cfg.stop_levels, t_burn=cfg.burn_in(),
                           store_every=cfg.store_every, path_callback=hook)
    space = aggregate_structure(np.stack(space_rows), "space", cfg.q, cfg.lags,
                                grid.dx, window, n_boot=cfg.n_boot,
                                boot_seed=boot_seed)
    time = aggregate_structure(np.stack(time_rows), "time", cfg.q, cfg.lags_time,
                               grid.dt * cfg.store_every, window,
                               n_boot=cfg.n_boot, boot_seed=boot_seed + 1)
    return {"summary": summary, "space": space, "time": time}


def run_case1_exponents(cfg: ExperimentConfig) -> dict:
    grid = cfg.grid()
    lams = cfg.lambda_values or (cfg.lam,)
    reports = {}
    ensembles = {}
    for i, lam in enumerate(lams):
        spec = cfg.problem_spec(lam=lam)
        res = _exponent_reports(cfg, spec, grid, boot_seed=cfg.master_seed + 10 * i)
        reports[lam] = {"space": res["space"], "time": res["time"]}
        ensembles[repr(lam)] = res["summary"].aggregates
    verdict = verify_case1_exponents(reports)
    verdict["ensembles"] = ensembles
    verdict["_reports"] = reports  # stripped before persistence
    return verdict


def run_case2_surface(cfg: ExperimentConfig) -> dict:
    grid = cfg.grid()
    reports = {}
    ensembles = {}
    idx = 0
    for lam in cfg.lambda_values or (cfg.lam,):
        for lam0 in cfg.lambda0_values or (cfg.lam0,):
            spec = cfg.problem_spec(lam=lam, lam0=lam0)
            res = _exponent_reports(cfg, spec, grid,
                                    boot_seed=cfg.master_seed + 10 * idx)
            reports[(lam, lam0)] = {"space": res["space"], "time": res["time"]}
            ensembles[f"({lam!r},{lam0!r})"] = res["summary"].aggregates
            idx += 1
    verdict = verify_case2_exponents(reports)
    verdict["ensembles"] = ensembles
    verdict["_reports"] = reports
    return verdict


def run_mass_bounds(cfg: ExperimentConfig) -> dict:
    grid = cfg.grid()
    spec = cfg.problem_spec()
    summary = run_ensemble(spec, grid, cfg.n_paths, cfg.master_seed,
                           stop_levels=cfg.stop_levels, t_burn=cfg.burn_in(),
                           store_every=cfg.store_every)
    bound = mass_bound_check(summary, spec, grid)

    # zero-noise control: conservative flux form keeps signed mass constant
    control_cfg = replace(cfg, sigma="zero", coeff_c="0.0", coeff_b="0.0")
    control_spec = control_cfg.problem_spec()
    control_grid = control_cfg.grid()
    path = evolve(control_spec, control_grid, None, store_every=control_grid.n_t)
    signed0 = float(control_spec.u0.sample(control_grid).sum() * control_grid.dx)
    signed = [float(s.sum() * control_grid.dx) for s in path.states]
    drift = max(abs(s - signed0) for s in signed)
    return {
        "bound_check": bound,
        "summary": summary.as_dict(),
        "control_mass_drift": drift,
        "control_mass_initial": signed0,
    }


def run_nonexplosion(cfg: ExperimentConfig) -> dict:
    grid = cfg.grid()
    summaries = []
    labels = []
    for m in cfg.m_values or (cfg.cutoff_m,):
        spec = cfg.problem_spec(cutoff_m=m)
        summaries.append(run_ensemble(spec, grid, cfg.n_paths, cfg.master_seed,
                                      stop_levels=cfg.stop_levels,
                                      t_burn=cfg.burn_in(),
                                      store_every=cfg.store_every))
        labels.append(f"m={m:g}")
    curve = nonexplosion_curve(summaries, labels)
    curve["summaries"] = [s.as_dict() for s in summaries]
    return curve


def run_localization(cfg: ExperimentConfig) -> dict:
    """Shared-noise paths at several cutoff levels, compared up to the first
    hitting time of the smallest level."""
    grid = cfg.grid()
    ms = sorted(cfg.m_values or (4.0, 8.0, 16.0))
    level = float(min(ms))
    seeds = path_seeds(cfg.master_seed, cfg.n_paths)
    max_diff = 0.0
    n_hit = 0
    for p in range(cfg.n_paths):
        noise = generate_rectangle_noise(grid, int(seeds[p]))
        paths = [evolve(cfg.problem_spec(cutoff_m=m), grid, noise,
                        stop_levels=[level], store_every=cfg.store_every)
                 for m in ms]
        hits = [pa.hitting_times[level] for pa in paths]
        hit = min((h for h in hits if h is not None), default=None)
        if hit is None:
            last = paths[0].stored_steps[-1]
        else:
            n_hit += 1
            last = hit
        keep = paths[0].stored_steps <= last
        base = paths[0].states[keep]
        for other in paths[1:]:
            diff = float(np.abs(other.states[keep] - base).max())
            max_diff = max(max_diff, diff)
    return {
        "cutoff_levels": ms,
        "compare_level": level,
        "n_paths": cfg.n_paths,
        "n_paths_hitting": n_hit,
        "max_abs_difference": max_diff,
    }


def run_estimator_calibration(cfg: ExperimentConfig) -> dict:
    window = Window(0.5, 1.0, 0.01, 0.99)
    results = []
    for i, hurst in enumerate(cfg.hurst_values):
        paths = power_law_paths(cfg.n_x, hurst, cfg.n_paths,
                                seed=cfg.master_seed + i)
        rep = structure_function(paths, "space", cfg.q, cfg.lags, window,
                                 n_boot=cfg.n_boot, boot_seed=cfg.master_seed)
        results.append({
            "hurst": hurst,
            "exponent_hat": rep.exponent_hat,
            "ci_low": rep.ci_low,
            "ci_high": rep.ci_high,
            "abs_error": abs(rep.exponent_hat - hurst),
        })
    return {"calibration": results,
            "max_abs_error": max(r["abs_error"] for r in results)}


_RUNNERS = {
    "noise-validate": run_noise_validate,
    "heat-oracle": run_heat_oracle,
    "kernel-checks": run_kernel_checks,
    "spectral-calculus": run_spectral_calculus,
    "case1-exponents": run_case1_exponents,
    "case2-surface": run_case2_surface,
    "mass-bounds": run_mass_bounds,
    "nonexplosion": run_nonexplosion,
    "localization-consistency": run_localization,
    "estimator-calibration": run_estimator_calibration,
}


# ---------------------------------------------------------------------------
# persistence

def _meta(cfg: ExperimentConfig) -> dict:
    return {
        "name": cfg.name,
        "preset": cfg.preset,
        "config_hash": cfg.config_hash(),
        "master_seed": cfg.master_seed,
        "version": __version__,
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }


def _strip_private(obj):
    if isinstance(obj, dict):
        return {k: _strip_private(v) for k, v in obj.items() if not k.startswith("_")}
    if isinstance(obj, (list, tuple)):
        return [_strip_private(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def write_artifact(path: Path, cfg: ExperimentConfig, results: dict) -> None:
    payload = {
        "meta": _meta(cfg),
        "config": {ln.split(" = ")[0]: ln.split(" = ", 1)[1]
                   for ln in cfg.to_text().strip().splitlines()},
        "results": _strip_private(results),
    }
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def run_experiment(config: ExperimentConfig) -> int:
    """Validate, run, and persist one experiment.  Returns the exit code
    (0 ok, 2 validation failure, 3 runtime failure)."""
    try:
        if config.preset not in _RUNNERS:
            raise ConfigurationError(
                f"no runner for preset {config.preset!r}; choose one of "
                f"{', '.join(_RUNNERS)}")
        if config.preset not in ("kernel-checks", "spectral-calculus",
                                 "noise-validate", "estimator-calibration"):
            config.validate()
    except ConfigurationError as exc:
        print(f"validation error: {exc}")
        return EXIT_VALIDATION
    out_dir = Path(config.out) / config.name
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        results = _RUNNERS[config.preset](config)
        write_artifact(out_dir / f"{config.name}.json", config, results)
        (out_dir / "config.txt").write_text(config.to_text())
        _write_estimator_csvs(out_dir, results)
        if config.dump_trajectories:
            _dump_example_trajectory(out_dir, config)
        print(f"wrote {out_dir}")
        return EXIT_OK
    except ConfigurationError as exc:
        print(f"validation error: {exc}")
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 3
        print(f"runtime error: {type(exc).__name__}: {exc}")
        return EXIT_RUNTIME


def _write_estimator_csvs(out_dir: Path, results: dict) -> None:
    reports = results.get("_reports")
    if not reports:
        return
    for key, pair in reports.items():
        tag = repr(key).replace(" ", "")
        for direction, rep in pair.items():
            safe = re.sub(r"[^0-9a-zA-Z.+-]+", "_", tag).strip("_")
            rep.to_csv(out_dir / f"structure_{safe}_{direction}.csv")


def _dump_example_trajectory(out_dir: Path, cfg: ExperimentConfig) -> None:
    grid = cfg.grid()
    spec = cfg.problem_spec(
        lam=cfg.lambda_values[0] if cfg.lambda_values else None,
        lam0=cfg.lambda0_values[0] if cfg.lambda0_values else None,
        cutoff_m=cfg.m_values[0] if cfg.m_values else None)
    seed = int(path_seeds(cfg.master_seed, 1)[0])
    noise = generate_rectangle_noise(grid, seed)
    path = evolve(spec, grid, noise, stop_levels=cfg.stop_levels,
                  store_every=max(cfg.store_every, max(1, grid.n_t // 64)))
    path_to_csv(path, out_dir / "trajectory_path0.csv")


def render_report(run_dir) -> str:
    """Human-readable rendering of the JSON artifacts under a run directory."""
    run_dir = Path(run_dir)
    chunks = []
    for json_path in sorted(run_dir.rglob("*.json")):
        payload = json.loads(json_path.read_text())
        meta = payload.get("meta", {})
        chunks.append(f"== {json_path.relative_to(run_dir)} ==")
        chunks.append(f"  name={meta.get('name')} preset={meta.get('preset')} "
                      f"hash={meta.get('config_hash')} seed={meta.get('master_seed')} "
                      f"version={meta.get('version')}")
        chunks.extend(_render_block(payload.get("results", {}), indent=2))
        chunks.append("")
    if not chunks:
        return f"no artifacts found under {run_dir}\n"
    return "\n".join(chunks) + "\n"


def _render_block(obj, indent: int) -> list[str]:
    pad = " " * indent
    lines = []
    if isinstance(obj, dict):
        for key, val in obj.items():
            if isinstance(val, (dict, list)):
                lines.append(f"{pad}{key}:")
                lines.extend(_render_block(val, indent + 2))
            else:
                lines.append(f"{pad}{key} = {val}")
    elif isinstance(obj, list):
        for i, val in enumerate(obj):
            if isinstance(val, (dict, list)):
                lines.append(f"{pad}- [{i}]")
                lines.extend(_render_block(val, indent + 2))
            else:
                lines.append(f"{pad}- {val}")
    else:
        lines.append(f"{pad}{obj}")
    return lines
