"""Bessel-potential kernels, fractional Sobolev norms, and Holder oracles.

All fractional-order operators act spectrally on periodic grids, where the
discrete calculus is exact: the Fourier multiplier (1 + xi^2)^(gamma/2)
composes and inverts without error, so isometry and monotonicity identities
hold to rounding.  Kernel values on the line are obtained from a fine
auxiliary grid (inverse FFT of the multiplier) and interpolated.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .exceptions import ConfigurationError, SingularityError
from .noise import GridSpec

AUX_POINTS = 2 ** 20
AUX_HALF_WIDTH = 64.0


@dataclass(frozen=True)
class BesselKernel:
    """Sampled convolution kernel of (1 - Laplacian)^(-gamma/2) on the line.

    ``envelope_const`` records max value(x) * exp(|x|/2) over samples with
    |x| >= 2, i.e. the constant of the exponential tail bound.
    """

    gamma: float
    samples: np.ndarray  # shape (n, 2): columns x, value
    envelope_const: float

    def values(self) -> np.ndarray:
        return self.samples[:, 1]

    def xs(self) -> np.ndarray:
        return self.samples[:, 0]


@lru_cache(maxsize=16)
def _kernel_table(gamma: float, n_points: int, half_width: float):
    """Kernel values on a symmetric auxiliary grid via inverse FFT.

    Uses f(x_j) = (1/L) sum_m (1 + xi_m^2)^(-gamma/2) exp(i xi_m x_j) with
    x_j = (j - n/2) h, which the alternating-sign trick maps onto one ifft.
    """
    length = 2.0 * half_width
    h = length / n_points
    xi = 2.0 * np.pi * np.fft.fftfreq(n_points, d=h)
    multiplier = (1.0 + xi ** 2) ** (-gamma / 2.0)
    signs = np.empty(n_points)
    signs[::2] = 1.0
    signs[1::2] = -1.0
    vals = np.fft.ifft(multiplier * signs).real * (n_points / length)
    xs = (np.arange(n_points) - n_points // 2) * h
    return xs, vals, h


def bessel_kernel_eval(gamma: float, xs, *, n_points: int = AUX_POINTS,
                       half_width: float = AUX_HALF_WIDTH) -> BesselKernel:
    """Evaluate the order-gamma Bessel kernel at the points ``xs``.

    gamma must be positive.  For gamma <= 1 the kernel is singular at the
    origin, so points under two auxiliary-grid spacings are rejected.
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    grid_x, grid_v, h = _kernel_table(float(gamma), n_points, float(half_width))
    if gamma <= 1 and np.any(np.abs(xs) < 2 * h):
        raise SingularityError(
            f"|x| below auxiliary resolution {2 * h:.3e} for gamma={gamma} <= 1")
    if np.any(np.abs(xs) > half_width - 1):
        raise ValueError("requested points fall outside the auxiliary grid")
    vals = np.interp(xs, grid_x, grid_v)
    tail = np.abs(xs) >= 2.0
    if tail.any():
        envelope = float(np.max(vals[tail] * np.exp(np.abs(xs[tail]) / 2.0)))
    else:
        envelope = float("nan")
    samples = np.column_stack([xs, vals])
    return BesselKernel(gamma=float(gamma), samples=samples, envelope_const=envelope)


def kernel_total_integral(gamma: float, *, n_points: int = AUX_POINTS,
                          half_width: float = AUX_HALF_WIDTH) -> float:
    """Discrete integral of the kernel table; equals the multiplier at xi=0."""
    _, vals, h = _kernel_table(float(gamma), n_points, float(half_width))
    return float(vals.sum() * h)


def squared_kernel_integral(gamma: float, *, n_points: int = AUX_POINTS,
                            half_width: float = AUX_HALF_WIDTH) -> float:
    """Discrete integral of the squared kernel over the auxiliary grid.

    Refining the grid raises the frequency cutoff; the sequence of values
    converges iff the squared kernel is integrable (gamma > 1/2).
    """
    _, vals, h = _kernel_table(float(gamma), n_points, float(half_width))
    return float((vals ** 2).sum() * h)


@dataclass(frozen=True)
class SobolevNorm:
    gamma: float
    p: float
    value: float


def _check_periodic(grid: GridSpec):
    if grid.boundary != "periodic":
        raise NotImplementedError(
            "fractional-order operators are spectral and require a periodic grid")


def _multiplier(grid: GridSpec, gamma: float) -> np.ndarray:
    xi = 2.0 * np.pi * np.fft.rfftfreq(grid.n_x, d=grid.dx)
    return (1.0 + xi ** 2) ** (gamma / 2.0)


def apply_bessel_order(u: np.ndarray, gamma: float, grid: GridSpec) -> np.ndarray:
    """Apply (1 - Laplacian)^(gamma/2) spectrally on a periodic grid."""
    _check_periodic(grid)
    u = np.asarray(u, dtype=float)
    spec = np.fft.rfft(u) * _multiplier(grid, gamma)
    return np.fft.irfft(spec, n=grid.n_x)


def lp_norm(u: np.ndarray, p: float, grid: GridSpec) -> float:
    """Discrete L_p norm (sum |u|^p dx)^(1/p)."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    u = np.asarray(u, dtype=float)
    return float((np.abs(u) ** p).sum() * grid.dx) ** (1.0 / p)


def fractional_norm(u: np.ndarray, gamma: float, p: float, grid: GridSpec) -> SobolevNorm:
    """Fractional Sobolev norm: L_p norm of (1 - Laplacian)^(gamma/2) u."""
    value = lp_norm(apply_bessel_order(u, gamma, grid), p, grid)
    return SobolevNorm(gamma=float(gamma), p=float(p), value=value)


def check_multiplicative_inequality(u: np.ndarray, gammas, ps, eps: float,
                                    grid: GridSpec, rtol: float = 1e-8) -> dict:
    """Interpolation inequality between two fractional norms.

    With gamma = eps*gamma0 + (1-eps)*gamma1 and 1/p = eps/p0 + (1-eps)/p1,
    checks ||u||_{gamma,p} <= ||u||_{gamma0,p0}^eps * ||u||_{gamma1,p1}^(1-eps).
    """
    gamma0, gamma1 = gammas
    p0, p1 = ps
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps must lie in [0, 1], got {eps}")
    inv_p = eps / p0 + (1.0 - eps) / p1
    if inv_p > 1.0 + 1e-12:
        raise ValueError("interpolated p falls below 1")
    p = 1.0 / inv_p
    gamma = eps * gamma0 + (1.0 - eps) * gamma1
    lhs = fractional_norm(u, gamma, p, grid).value
    rhs = (fractional_norm(u, gamma0, p0, grid).value ** eps
           * fractional_norm(u, gamma1, p1, grid).value ** (1.0 - eps))
    return {
        "gamma": gamma, "p": p,
        "lhs": lhs, "rhs": rhs,
        "ok": bool(lhs <= rhs * (1.0 + rtol)),
    }


def holder_seminorm(u: np.ndarray, order: float, spacing: float,
                    max_lag: int | None = None, periodic: bool = False) -> float:
    """max over pairs within the lag window of |u(x) - u(y)| / |x - y|^order.

    The window defaults to lags 1 .. n/8, which avoids wrap artifacts on
    periodic domains.  ``order`` must lie in (0, 1).
    """
    if not 0.0 < order < 1.0:
        raise ValueError(f"order must lie in (0, 1), got {order}")
    u = np.asarray(u, dtype=float)
    n = u.size
    if max_lag is None:
        max_lag = max(1, n // 8)
    best = 0.0
    for lag in range(1, max_lag + 1):
        if periodic:
            diff = np.abs(np.roll(u, -lag) - u)
        else:
            if lag >= n:
                break
            diff = np.abs(u[lag:] - u[:-lag])
        best = max(best, diff.max() / (lag * spacing) ** order)
    return float(best)
