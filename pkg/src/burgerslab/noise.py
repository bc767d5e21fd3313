"""Discretized space-time white noise on regular grids.

Two constructions of the same Gaussian field are provided: independent
rectangle increments (one N(0, dt*dx) draw per space-time cell) and a
truncated expansion over an orthonormal spatial basis driven by independent
Wiener increments.  Both are deterministic functions of (grid, seed).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .exceptions import ConfigurationError

BOUNDARY_KINDS = ("periodic", "dirichlet_zero")
BASIS_KINDS = ("trigonometric", "haar")

_DUMP_MAGIC = b"STWN"
_DUMP_VERSION = 1


@dataclass(frozen=True)
class GridSpec:
    """Uniform space-time grid on [x_min, x_max] x [0, t_end].

    Cell-centered in space: n_x cells of width dx, centers at
    x_min + (j + 1/2) dx for both boundary kinds.  n_t time steps of
    width dt = t_end / n_t.
    """

    x_min: float
    x_max: float
    n_x: int
    t_end: float
    n_t: int
    boundary: str = "periodic"

    def __post_init__(self):
        if not self.x_max > self.x_min:
            raise ConfigurationError(
                f"x_max must exceed x_min, got [{self.x_min}, {self.x_max}]")
        if self.n_x < 1 or self.n_t < 1:
            raise ConfigurationError(
                f"grid needs at least one cell and one step, got n_x={self.n_x}, n_t={self.n_t}")
        if not self.t_end > 0:
            raise ConfigurationError(f"t_end must be positive, got {self.t_end}")
        if self.boundary not in BOUNDARY_KINDS:
            raise ConfigurationError(
                f"boundary must be one of {BOUNDARY_KINDS}, got {self.boundary!r}")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_x

    @property
    def dt(self) -> float:
        return self.t_end / self.n_t

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    def x_centers(self) -> np.ndarray:
        return self.x_min + (np.arange(self.n_x) + 0.5) * self.dx

    def t_levels(self) -> np.ndarray:
        """Times t_0 = 0 .. t_{n_t} = t_end (n_t + 1 values)."""
        return np.arange(self.n_t + 1) * self.dt


@dataclass(frozen=True)
class NoiseField:
    """One realization of cell increments DW(t_n, x_j), shape (n_t, n_x).

    Each rectangle-construction entry is N(0, dt*dx); entries over disjoint
    cells are independent.  Immutable after creation and safe to share.
    """

    increments: np.ndarray
    seed: int
    construction: str
    grid: GridSpec
    n_modes: int | None = None

    def __post_init__(self):
        expected = (self.grid.n_t, self.grid.n_x)
        if self.increments.shape != expected:
            raise ConfigurationError(
                f"increments shape {self.increments.shape} does not match grid {expected}")
        self.increments.setflags(write=False)


def _rng(seed: int) -> np.random.Generator:
    # Philox is counter-based: (seed, draw position) -> value, which makes
    # per-path streams reproducible under any ensemble scheduling.
    return np.random.Generator(np.random.Philox(key=seed))


def generate_rectangle_noise(grid: GridSpec, seed: int) -> NoiseField:
    """i.i.d. centered Gaussian cell increments with variance dt*dx."""
    scale = np.sqrt(grid.dt * grid.dx)
    increments = _rng(seed).standard_normal((grid.n_t, grid.n_x)) * scale
    return NoiseField(increments, int(seed), "rectangle_increment", grid)


@dataclass(frozen=True)
class BasisFamily:
    """Orthonormal spatial basis sampled on the grid cells.

    Discrete orthonormality holds exactly: sum_j eta_k(x_j) eta_l(x_j) dx
    = delta_kl.  Trigonometric requires a periodic grid; haar requires n_x
    to be a power of two.
    """

    kind: str
    n_modes: int
    domain: GridSpec

    def __post_init__(self):
        if self.kind not in BASIS_KINDS:
            raise ConfigurationError(f"basis kind must be one of {BASIS_KINDS}")
        if self.n_modes < 1:
            raise ConfigurationError("n_modes must be positive")
        if self.n_modes > self.domain.n_x:
            raise ConfigurationError(
                f"n_modes={self.n_modes} exceeds grid resolution n_x={self.domain.n_x} "
                "(aliased basis)")
        if self.kind == "haar" and self.domain.n_x & (self.domain.n_x - 1):
            raise ConfigurationError("haar basis requires n_x to be a power of two")

    def matrix(self) -> np.ndarray:
        """Basis values, shape (n_modes, n_x)."""
        return _basis_matrix(self.kind, self.n_modes, self.domain)


@lru_cache(maxsize=8)
def _basis_matrix(kind: str, n_modes: int, grid: GridSpec) -> np.ndarray:
    n = grid.n_x
    if kind == "trigonometric":
        # Real DFT family on the half-shifted grid. The Nyquist member is the
        # sine branch, which reduces to (-1)^j on cell centers.
        theta = 2.0 * np.pi * (np.arange(n) + 0.5) / n
        rows = [np.ones(n)]
        m = 1
        while len(rows) < n:
            if 2 * m == n:
                rows.append(np.sin(m * theta))
            else:
                rows.append(np.cos(m * theta))
                if len(rows) < n:
                    rows.append(np.sin(m * theta))
            m += 1
        full = np.array(rows[:n])
    else:
        rows = [np.ones(n)]
        level = 1
        while len(rows) < n:
            width = n // level
            for s in range(level):
                if len(rows) == n:
                    break
                row = np.zeros(n)
                row[s * width: s * width + width // 2] = 1.0
                row[s * width + width // 2: (s + 1) * width] = -1.0
                rows.append(row)
            level *= 2
        full = np.array(rows)
    full = full[:n_modes]
    norms = np.sqrt((full ** 2).sum(axis=1) * grid.dx)
    out = full / norms[:, None]
    out.setflags(write=False)
    return out


def generate_series_noise(grid: GridSpec, basis: BasisFamily, seed: int) -> NoiseField:
    """Truncated basis expansion DW(t_n, x_j) = sum_k [eta_k(x_j) dx] dw_k(t_n).

    dw_k are i.i.d. N(0, dt).  The factor dx is the cell measure carried by
    the basis weight (the increment over a cell integrates eta_k over that
    cell), so the full-mode field reproduces the rectangle covariance.
    """
    if basis.domain != grid:
        raise ConfigurationError("basis was built for a different grid")
    weights = basis.matrix() * grid.dx  # (n_modes, n_x)
    dw = _rng(seed).standard_normal((grid.n_t, basis.n_modes)) * np.sqrt(grid.dt)
    increments = dw @ weights
    return NoiseField(increments, int(seed), "series_truncation", grid, basis.n_modes)


def rectangle_sum(field: NoiseField, t_span: tuple[float, float],
                  x_span: tuple[float, float]) -> float:
    """W(A) for the rectangle A = t_span x x_span, snapped to cell edges."""
    n0, n1, j0, j1 = _snap(field.grid, t_span, x_span)
    return float(field.increments[n0:n1, j0:j1].sum())


def rectangle_area(grid: GridSpec, t_span: tuple[float, float],
                   x_span: tuple[float, float]) -> float:
    """Lebesgue measure of the snapped rectangle."""
    n0, n1, j0, j1 = _snap(grid, t_span, x_span)
    return (n1 - n0) * grid.dt * (j1 - j0) * grid.dx


def overlap_area(grid: GridSpec, rect_a, rect_b) -> float:
    """Lebesgue measure of the intersection of two snapped rectangles."""
    (a_t, a_x), (b_t, b_x) = rect_a, rect_b
    an0, an1, aj0, aj1 = _snap(grid, a_t, a_x)
    bn0, bn1, bj0, bj1 = _snap(grid, b_t, b_x)
    nt = max(0, min(an1, bn1) - max(an0, bn0))
    nx = max(0, min(aj1, bj1) - max(aj0, bj0))
    return nt * grid.dt * nx * grid.dx


def _snap(grid: GridSpec, t_span, x_span):
    t0, t1 = t_span
    x0, x1 = x_span
    n0 = int(round(t0 / grid.dt))
    n1 = int(round(t1 / grid.dt))
    j0 = int(round((x0 - grid.x_min) / grid.dx))
    j1 = int(round((x1 - grid.x_min) / grid.dx))
    n0, n1 = max(n0, 0), min(n1, grid.n_t)
    j0, j1 = max(j0, 0), min(j1, grid.n_x)
    if n1 < n0 or j1 < j0:
        raise ValueError(f"rectangle {t_span} x {x_span} lies outside the grid")
    return n0, n1, j0, j1


def validate_covariance(fields, rectangle_pairs, grid: GridSpec | None = None) -> list[dict]:
    """Empirical cov(W(A), W(B)) against the overlap area for each pair.

    ``fields`` may be any iterable of NoiseField (a generator is fine; the
    ensemble is streamed).  Returns one record per pair with the empirical
    covariance, the target, a standard error, and a z-score.  Requires at
    least 1000 fields on a common grid.
    """
    pairs = list(rectangle_pairs)
    if not pairs:
        raise ValueError("at least one rectangle pair is required")
    sums = None
    count = 0
    for field in fields:
        if grid is None:
            grid = field.grid
        elif field.grid != grid:
            raise ValueError("all fields must share one grid")
        vals = np.empty((len(pairs), 2))
        for i, (rect_a, rect_b) in enumerate(pairs):
            vals[i, 0] = rectangle_sum(field, *rect_a)
            vals[i, 1] = rectangle_sum(field, *rect_b)
        if sums is None:
            sums = {"a": np.zeros(len(pairs)), "b": np.zeros(len(pairs)),
                    "aa": np.zeros(len(pairs)), "bb": np.zeros(len(pairs)),
                    "ab": np.zeros(len(pairs))}
        sums["a"] += vals[:, 0]
        sums["b"] += vals[:, 1]
        sums["aa"] += vals[:, 0] ** 2
        sums["bb"] += vals[:, 1] ** 2
        sums["ab"] += vals[:, 0] * vals[:, 1]
        count += 1
    if count == 0:
        raise ValueError("empty ensemble")
    if count < 1000:
        raise ValueError(f"need at least 1000 fields, got {count}")
    report = []
    for i, (rect_a, rect_b) in enumerate(pairs):
        mean_a = sums["a"][i] / count
        mean_b = sums["b"][i] / count
        cov = sums["ab"][i] / count - mean_a * mean_b
        var_a = sums["aa"][i] / count - mean_a ** 2
        var_b = sums["bb"][i] / count - mean_b ** 2
        target = overlap_area(grid, rect_a, rect_b)
        # Gaussian covariance estimator: Var(c_hat) = (Var_A Var_B + cov^2)/n
        stderr = float(np.sqrt((var_a * var_b + cov ** 2) / count))
        z = (cov - target) / stderr if stderr > 0 else 0.0
        report.append({
            "rect_a": rect_a, "rect_b": rect_b,
            "estimate": float(cov), "target": float(target),
            "stderr": stderr, "z": float(z),
        })
    return report


def write_noise_dump(path, field: NoiseField) -> None:
    """Binary dump: magic 'STWN', u32 version, u64 n_t, u64 n_x, f64 dx, f64 dt,
    then row-major little-endian f64 increments."""
    grid = field.grid
    header = _DUMP_MAGIC + struct.pack(
        "<IQQdd", _DUMP_VERSION, grid.n_t, grid.n_x, grid.dx, grid.dt)
    data = np.ascontiguousarray(field.increments, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())


def read_noise_dump(path) -> tuple[np.ndarray, dict]:
    """Read a dump written by :func:`write_noise_dump`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _DUMP_MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {_DUMP_MAGIC!r}")
        version, n_t, n_x, dx, dt = struct.unpack("<IQQdd", fh.read(4 + 8 * 2 + 8 * 2))
        raw = fh.read(n_t * n_x * 8)
    increments = np.frombuffer(raw, dtype="<f8").reshape(n_t, n_x).copy()
    meta = {"version": version, "n_t": int(n_t), "n_x": int(n_x), "dx": dx, "dt": dt}
    return increments, meta
