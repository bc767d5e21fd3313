"""Regularity-exponent estimation and theorem-conclusion checks.

The central tool is the q-th order structure function

    S_q(l) = ensemble/window average of |u(. + l) - u(.)|^q

along a space or time direction; its log-log slope divided by q estimates
the Holder exponent of the field.  Confidence intervals come from a
path-resampling bootstrap.  Ensemble-level checks (mass bounds, exceedance
curves) compare the simulated statistics against the one-sided bounds the
theory provides.

Caveat recorded here once: the regularity statements being checked are
pathwise and almost-sure, while structure functions estimate moment
scaling.  The two coincide for the Gaussian-like fields simulated at desk
scale, but the estimator cannot distinguish them; a per-path variant
(:func:`pathwise_exponent`) is provided as a secondary diagnostic only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .noise import GridSpec
from .solver import EnsembleSummary, ProblemSpec, SolutionPath

MIN_PATHS = 30
DEFAULT_BOOT = 200


@dataclass(frozen=True)
class Window:
    """Observation sub-rectangle [t_min, t_max] x [x_min, x_max]."""

    t_min: float
    t_max: float
    x_min: float
    x_max: float


@dataclass
class EstimatorReport:
    direction: str
    lags: list
    structure_values: list
    q: float
    exponent_hat: float
    ci_low: float
    ci_high: float
    window: Window

    def as_dict(self) -> dict:
        return {
            "direction": self.direction,
            "lags": list(self.lags),
            "structure_values": list(self.structure_values),
            "q": self.q,
            "exponent_hat": self.exponent_hat,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "window": vars(self.window),
        }

    def to_csv(self, file) -> None:
        close = False
        if isinstance(file, (str, bytes)) or hasattr(file, "__fspath__"):
            file = open(file, "w")
            close = True
        try:
            file.write("lag,Sq,direction,q\n")
            for lag, val in zip(self.lags, self.structure_values):
                file.write(f"{lag},{val!r},{self.direction},{self.q!r}\n")
        finally:
            if close:
                file.close()


def _check_window(window: Window, grid: GridSpec, t_burn: float) -> None:
    if not (grid.x_min < window.x_min < window.x_max < grid.x_max):
        raise ValueError(
            f"window x-range [{window.x_min}, {window.x_max}] must sit strictly "
            f"inside the domain ({grid.x_min}, {grid.x_max})")
    if window.t_min < t_burn:
        raise ValueError(
            f"window starts at t={window.t_min} before the burn-in time {t_burn}")
    if not window.t_min < window.t_max <= grid.t_end:
        raise ValueError("window t-range is empty or extends past t_end")


def path_structure(path: SolutionPath, direction: str, q: float, lags,
                   window: Window) -> np.ndarray:
    """Per-path structure values: mean |increment|^q at each lag.

    Spatial lags count grid cells; temporal lags count stored levels.
    """
    grid = path.grid
    times = path.stored_times()
    t_mask = (times >= window.t_min) & (times <= window.t_max)
    if not t_mask.any():
        raise ValueError("no stored time levels fall inside the window")
    xs = grid.x_centers()
    x_idx = np.where((xs >= window.x_min) & (xs <= window.x_max))[0]
    if x_idx.size < 2:
        raise ValueError("window contains fewer than two grid cells")
    block = path.states[t_mask][:, x_idx[0]: x_idx[-1] + 1]
    out = np.empty(len(lags))
    for i, lag in enumerate(lags):
        lag = int(lag)
        if direction == "space":
            if lag >= block.shape[1]:
                raise ValueError(f"spatial lag {lag} exceeds the window width")
            diff = block[:, lag:] - block[:, :-lag]
        elif direction == "time":
            if lag >= block.shape[0]:
                raise ValueError(f"temporal lag {lag} exceeds the stored window length")
            diff = block[lag:] - block[:-lag]
        else:
            raise ValueError(f"direction must be 'space' or 'time', got {direction!r}")
        out[i] = np.mean(np.abs(diff) ** q)
    return out


def fit_exponent(structure: np.ndarray, lags, delta: float, q: float) -> float:
    """Log-log regression slope divided by q."""
    s = np.asarray(structure, dtype=float)
    if (s <= 0).any():
        raise ValueError("structure values must be strictly positive "
                         "(degenerate or constant data)")
    log_l = np.log(np.asarray(lags, dtype=float) * delta)
    slope = np.polyfit(log_l, np.log(s), 1)[0]
    return float(slope / q)


def aggregate_structure(per_path: np.ndarray, direction: str, q: float, lags,
                        delta: float, window: Window, *, n_boot: int = DEFAULT_BOOT,
                        boot_seed: int = 0) -> EstimatorReport:
    """Combine per-path structure vectors into an exponent estimate with CI.

    ``per_path`` has shape (n_paths, n_lags).  The bootstrap resamples whole
    paths; the percentile interval is widened if needed so that it contains
    the point estimate.
    """
    per_path = np.asarray(per_path, dtype=float)
    mean_s = per_path.mean(axis=0)
    hat = fit_exponent(mean_s, lags, delta, q)
    n = per_path.shape[0]
    rng = np.random.Generator(np.random.Philox(key=boot_seed))
    boots = np.empty(n_boot)
    for b in range(n_boot):
        idx = rng.integers(0, n, size=n)
        boots[b] = fit_exponent(per_path[idx].mean(axis=0), lags, delta, q)
    ci_low = float(min(np.quantile(boots, 0.025), hat))
    ci_high = float(max(np.quantile(boots, 0.975), hat))
    return EstimatorReport(
        direction=direction, lags=[int(l) for l in lags],
        structure_values=[float(v) for v in mean_s], q=float(q),
        exponent_hat=hat, ci_low=ci_low, ci_high=ci_high, window=window)


def structure_function(paths, direction: str, q: float, lags, window: Window,
                       *, t_burn: float | None = None, n_boot: int = DEFAULT_BOOT,
                       boot_seed: int = 0, min_paths: int = MIN_PATHS) -> EstimatorReport:
    """Ensemble structure function and Holder-exponent estimate.

    Requires at least ``min_paths`` paths on one grid, at least 3 lags, and a
    window strictly inside the domain starting after the burn-in time
    (default 0.1 * t_end).
    """
    paths = list(paths)
    if len(paths) < min_paths:
        raise ValueError(f"need at least {min_paths} paths, got {len(paths)}")
    lags = [int(l) for l in lags]
    if len(lags) < 3:
        raise ValueError(f"need at least 3 lags, got {len(lags)}")
    if any(l <= 0 for l in lags):
        raise ValueError("lags must be positive")
    grid = paths[0].grid
    if t_burn is None:
        t_burn = 0.1 * grid.t_end
    _check_window(window, grid, t_burn)
    per_path = np.stack([path_structure(p, direction, q, lags, window) for p in paths])
    delta = grid.dx if direction == "space" else grid.dt * paths[0].store_every
    return aggregate_structure(per_path, direction, q, lags, delta, window,
                               n_boot=n_boot, boot_seed=boot_seed)


def pathwise_exponent(path: SolutionPath, direction: str, q: float, lags,
                      window: Window) -> float:
    """Single-path exponent estimate (secondary diagnostic, no CI)."""
    s = path_structure(path, direction, q, lags, window)
    delta = path.grid.dx if direction == "space" else path.grid.dt * path.store_every
    return fit_exponent(s, lags, delta, q)


def verify_case1_exponents(reports_by_lambda: dict, *, spatial_target: float = 0.5,
                           temporal_target: float = 0.25, tolerance: float = 0.05) -> dict:
    """Check bounded-noise-regime exponents against 1/2 (space) and 1/4 (time).

    ``reports_by_lambda`` maps lambda to {"space": EstimatorReport,
    "time": EstimatorReport}.  Also checks that spatial estimates do not
    depend on lambda: every pairwise difference must stay within the summed
    CI widths of the pair.
    """
    per_lambda = {}
    for lam, reports in sorted(reports_by_lambda.items()):
        space, time = reports["space"], reports["time"]
        per_lambda[lam] = {
            "spatial": space.as_dict(),
            "temporal": time.as_dict(),
            "spatial_ok": bool(space.exponent_hat >= spatial_target - tolerance),
            "temporal_ok": bool(time.exponent_hat >= temporal_target - tolerance),
            "spatial_in_band": bool(
                spatial_target - tolerance <= space.exponent_hat <= spatial_target + tolerance),
            "temporal_in_band": bool(
                temporal_target - tolerance <= time.exponent_hat <= temporal_target + tolerance),
        }
    lams = sorted(reports_by_lambda)
    max_diff = 0.0
    joint_ok = True
    for i, li in enumerate(lams):
        for lj in lams[i + 1:]:
            ri = reports_by_lambda[li]["space"]
            rj = reports_by_lambda[lj]["space"]
            diff = abs(ri.exponent_hat - rj.exponent_hat)
            joint = (ri.ci_high - ri.ci_low) + (rj.ci_high - rj.ci_low)
            max_diff = max(max_diff, diff)
            joint_ok = joint_ok and diff <= joint
    return {
        "per_lambda": {repr(k): v for k, v in per_lambda.items()},
        "spatial_target": spatial_target,
        "temporal_target": temporal_target,
        "tolerance": tolerance,
        "cross_lambda_max_diff": max_diff,
        "cross_lambda_within_joint_ci": bool(joint_ok),
    }


def case2_regularity_target(lam: float, lam0: float) -> float:
    """Spatial lower bound 1/2 - max((lam - 1/2)+, lam0) for the superlinear regime."""
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lambda must lie in (0, 1) for the superlinear regime, got {lam}")
    if not 0.0 <= lam0 < 0.5:
        raise ValueError(f"lambda0 must lie in [0, 0.5) for the superlinear regime, got {lam0}")
    return 0.5 - max(max(lam - 0.5, 0.0), lam0)


def verify_case2_exponents(reports_by_cell: dict, *, tolerance: float = 0.05) -> dict:
    """One-sided exponent checks over a (lambda, lambda0) grid.

    The theory guarantees *at least* the target regularity, so only
    exponent_hat < target - tolerance fails.  Temporal targets are half the
    spatial ones.
    """
    cells = []
    for (lam, lam0), reports in sorted(reports_by_cell.items()):
        target = case2_regularity_target(lam, lam0)
        space = reports["space"]
        entry = {
            "lambda": lam, "lambda0": lam0,
            "spatial_target": target,
            "spatial": space.as_dict(),
            "spatial_ok": bool(space.exponent_hat >= target - tolerance),
        }
        if "time" in reports:
            time = reports["time"]
            entry["temporal_target"] = target / 2.0
            entry["temporal"] = time.as_dict()
            entry["temporal_ok"] = bool(time.exponent_hat >= target / 2.0 - tolerance)
        cells.append(entry)
    return {"tolerance": tolerance, "cells": cells,
            "all_ok": bool(all(c["spatial_ok"] and c.get("temporal_ok", True)
                               for c in cells))}


def mass_bound_check(summary: EnsembleSummary, spec: ProblemSpec, grid: GridSpec,
                     *, margin: float = 0.0) -> dict:
    """Compare ensemble mass statistics against the a-priori bounds.

    Bounded regime:   E int_0^T ||u||_L1 dt <= T e^(4KT) (1+margin) ||u0||_L1.
    Superlinear:      E sup_t ||u||_L1^(1/2) <= 3 e^(2KT) ||u0||_L1^(1/2).
    A check passes when the empirical mean sits at least 3 standard errors
    below the bound.
    """
    K, T = spec.K, grid.t_end
    u0_mass = float(np.abs(spec.u0.sample(grid)).sum() * grid.dx)
    if spec.regime == "case1_bounded_lipschitz":
        empirical = summary.aggregates["e_int_mass"]
        stderr = summary.aggregates["se_int_mass"]
        bound = math.exp(4.0 * K * T) * T * (1.0 + margin) * u0_mass
        statistic = "E int ||u||_L1 dt"
    else:
        empirical = summary.aggregates["e_sup_sqrt_mass"]
        stderr = summary.aggregates["se_sup_sqrt_mass"]
        bound = 3.0 * math.exp(2.0 * K * T) * math.sqrt(u0_mass)
        statistic = "E sup_t ||u||_L1^(1/2)"
    slack = bound - empirical
    return {
        "regime": spec.regime,
        "statistic": statistic,
        "empirical": float(empirical),
        "stderr": float(stderr),
        "bound": float(bound),
        "slack": float(slack),
        "ok": bool(slack >= 3.0 * stderr),
    }


def wilson_interval(k: int, n: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return 0.0, 1.0
    p = k / n
    denom = 1.0 + z ** 2 / n
    center = (p + z ** 2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z ** 2 / (4 * n ** 2)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def nonexplosion_curve(summaries, labels=None) -> dict:
    """Exceedance probabilities P(sup |u| > R) across levels and ensembles.

    Each summary contributes one curve (e.g. one cutoff level m).  Checks
    that every curve is nonincreasing in R and that, for each R, the Wilson
    intervals of all curves pairwise overlap (uniformity across m).
    Requires at least 3 levels.
    """
    summaries = list(summaries)
    if labels is None:
        labels = [f"ensemble{i}" for i in range(len(summaries))]
    levels = [rec["R"] for rec in summaries[0].per_level]
    if len(levels) < 3:
        raise ValueError(f"need at least 3 stop levels, got {len(levels)}")
    curves = []
    for label, summ in zip(labels, summaries):
        if [rec["R"] for rec in summ.per_level] != levels:
            raise ValueError("all summaries must share the same stop levels")
        rows = []
        for rec in summ.per_level:
            lo, hi = wilson_interval(rec["n_exceed"], summ.n_paths)
            rows.append({"R": rec["R"], "p_exceed": rec["p_exceed"],
                         "wilson_low": lo, "wilson_high": hi,
                         "n_exceed": rec["n_exceed"], "n_paths": summ.n_paths})
        probs = [r["p_exceed"] for r in rows]
        monotone = all(probs[i] >= probs[i + 1] - 1e-15 for i in range(len(probs) - 1))
        curves.append({"label": label, "levels": rows, "monotone_ok": bool(monotone)})
    uniform_ok = True
    for i in range(len(levels)):
        for a in range(len(curves)):
            for b in range(a + 1, len(curves)):
                ra, rb = curves[a]["levels"][i], curves[b]["levels"][i]
                if ra["wilson_low"] > rb["wilson_high"] or rb["wilson_low"] > ra["wilson_high"]:
                    uniform_ok = False
    return {
        "levels": levels,
        "curves": curves,
        "monotone_ok": bool(all(c["monotone_ok"] for c in curves)),
        "uniform_across_ensembles": bool(uniform_ok),
    }


# ---------------------------------------------------------------------------
# synthetic fields for estimator calibration (independent of the solver)

def _synthetic_path(values: np.ndarray, grid: GridSpec) -> SolutionPath:
    states = values[None, :] if values.ndim == 1 else values
    dx = grid.dx
    return SolutionPath(
        states=states,
        stored_steps=np.array([grid.n_t]),
        grid=grid,
        store_every=grid.n_t,
        mass_series=np.array([np.abs(states[-1]).sum() * dx]),
        sup_series=np.array([np.abs(states[-1]).max()]),
        min_series=np.array([states[-1].min()]),
        hitting_times={},
        exploded=False,
        seed=-1,
    )


def synthetic_grid(n_x: int, length: float = 1.0) -> GridSpec:
    return GridSpec(0.0, length, n_x, 1.0, 1)


def brownian_paths(n_x: int, n_paths: int, seed: int, length: float = 1.0) -> list:
    """Brownian motion in x, frozen in time: E|B(x+l) - B(x)|^2 = l exactly."""
    grid = synthetic_grid(n_x, length)
    rng = np.random.Generator(np.random.Philox(key=seed))
    out = []
    for _ in range(n_paths):
        steps = rng.standard_normal(n_x) * np.sqrt(grid.dx)
        out.append(_synthetic_path(np.cumsum(steps), grid))
    return out


def power_law_paths(n_x: int, hurst: float, n_paths: int, seed: int,
                    length: float = 1.0) -> list:
    """Fractional-Brownian fields with exact structure exponent ``hurst``.

    Spectral synthesis by circulant embedding of the fractional-Gaussian-noise
    covariance: the lattice increments have E|u(x+l) - u(x)|^2 = l^(2H)
    exactly at every lag, which makes these the known-exponent oracle for
    estimator calibration.
    """
    if not 0.0 < hurst < 1.0:
        raise ValueError(f"hurst must lie in (0, 1), got {hurst}")
    grid = synthetic_grid(n_x, length)
    rng = np.random.Generator(np.random.Philox(key=seed))
    k = np.arange(n_x + 1, dtype=float)
    cov = 0.5 * (np.abs(k + 1) ** (2 * hurst) - 2 * k ** (2 * hurst)
                 + np.abs(k - 1) ** (2 * hurst))
    circ = np.concatenate([cov, cov[-2:0:-1]])   # length 2 n_x
    eig = np.fft.fft(circ).real
    eig = np.maximum(eig, 0.0)                   # clip rounding negatives
    root = np.sqrt(eig / (2 * n_x))
    out = []
    for _ in range(n_paths):
        z = rng.standard_normal(2 * n_x) + 1j * rng.standard_normal(2 * n_x)
        fgn = np.fft.fft(root * z).real[:n_x]
        field = np.cumsum(fgn) * grid.dx ** hurst
        out.append(_synthetic_path(field, grid))
    return out


def iid_noise_paths(n_x: int, n_paths: int, seed: int, length: float = 1.0) -> list:
    """Cell-wise independent values: no continuity, structure exponent 0."""
    grid = synthetic_grid(n_x, length)
    rng = np.random.Generator(np.random.Philox(key=seed))
    return [_synthetic_path(rng.standard_normal(n_x), grid) for _ in range(n_paths)]
