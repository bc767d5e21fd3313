"""Time stepping for the cut-off stochastic generalized Burgers equation.

The dynamics advanced here are

    du = (a u_xx + b u_x + c u + (bbar/(1+lam)) d/dx[(u+)^(1+lam) h_m(u)]) dt
         + sigma(u) dW / dx,

with the diffusion term implicit (tridiagonal / spectral solve with frozen
a(t, x)) and transport, reaction, the conservative nonlinear flux, and the
Euler-Maruyama noise term explicit.  Two regimes are supported for sigma:
a bounded Lipschitz map of u (clamped at K) and the superlinear form
mu(t,x) (u+)^(1+lam0) h_m(u).  The cutoff h_m tames the nonlinearity above
level m; paths run with different m agree exactly until they first reach
the smaller level, which is how local solutions are pasted into global ones.
"""

from __future__ import annotations

import csv
import hashlib
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .exceptions import ConfigurationError, NumericalError
from .noise import GridSpec, NoiseField

REGIMES = ("case1_bounded_lipschitz", "case2_superlinear")
FLUX_SCHEMES = ("central", "rusanov")
EXPLOSION_THRESHOLD = 1e12

_SPTH_MAGIC = b"SPTH"
_SPTH_VERSION = 1

_EXPR_NAMES = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp,
    "sqrt": np.sqrt, "abs": np.abs, "tanh": np.tanh, "log": np.log,
    "pi": np.pi, "minimum": np.minimum, "maximum": np.maximum,
}


class Coefficient:
    """Coefficient of (t, x): constant, expression string, callable, or table."""

    def __init__(self, source):
        self.source = source
        if isinstance(source, (int, float)):
            self.kind = "constant"
            self._value = float(source)
        elif isinstance(source, str):
            self.kind = "expression"
            self._code = _compile_expr(source, allow_x=True)
        elif callable(source):
            self.kind = "callable"
        elif isinstance(source, tuple) and len(source) == 2:
            self.kind = "table"
            xs, vals = source
            self._xs = np.asarray(xs, dtype=float)
            self._vals = np.asarray(vals, dtype=float)
        else:
            raise ConfigurationError(f"cannot interpret coefficient source {source!r}")

    @classmethod
    def wrap(cls, source):
        return source if isinstance(source, cls) else cls(source)

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def at(self, t: float, x: np.ndarray) -> np.ndarray:
        if self.kind == "constant":
            return np.full_like(x, self._value)
        if self.kind == "expression":
            return np.broadcast_to(
                np.asarray(eval(self._code, {"__builtins__": {}},
                                {**_EXPR_NAMES, "t": t, "x": x}), dtype=float),
                x.shape).copy()
        if self.kind == "table":
            return np.interp(x, self._xs, self._vals)
        return np.broadcast_to(np.asarray(self.source(t, x), dtype=float), x.shape).copy()

    def describe(self) -> str:
        if self.kind == "constant":
            return repr(self._value)
        if self.kind == "expression":
            return f"expr:{self.source}"
        if self.kind == "table":
            return f"table:{hashlib.sha256(self._vals.tobytes()).hexdigest()[:12]}"
        return f"callable:{getattr(self.source, '__qualname__', repr(self.source))}"


class TimeCoefficient:
    """Coefficient of t only; x dependence is rejected at construction."""

    def __init__(self, source):
        self.source = source
        if isinstance(source, (int, float)):
            self.kind = "constant"
            self._value = float(source)
        elif isinstance(source, str):
            self.kind = "expression"
            self._code = _compile_expr(source, allow_x=False)
        elif callable(source):
            self.kind = "callable"
            try:
                float(source(0.0))
            except TypeError as exc:
                raise ConfigurationError(
                    "this coefficient must depend on t only; "
                    "got a callable that is not a function of a single time argument"
                ) from exc
        else:
            raise ConfigurationError(f"cannot interpret coefficient source {source!r}")

    @classmethod
    def wrap(cls, source):
        return source if isinstance(source, cls) else cls(source)

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def at(self, t: float) -> float:
        if self.kind == "constant":
            return self._value
        if self.kind == "expression":
            return float(eval(self._code, {"__builtins__": {}}, {**_EXPR_NAMES, "t": t}))
        return float(self.source(t))

    def describe(self) -> str:
        if self.kind == "constant":
            return repr(self._value)
        if self.kind == "expression":
            return f"expr:{self.source}"
        return f"callable:{getattr(self.source, '__qualname__', repr(self.source))}"


def _compile_expr(expr: str, allow_x: bool):
    code = compile(expr, "<coefficient>", "eval")
    allowed = set(_EXPR_NAMES) | {"t"} | ({"x"} if allow_x else set())
    bad = set(code.co_names) - allowed
    if bad:
        if "x" in bad and not allow_x:
            raise ConfigurationError(
                "this coefficient must depend on t only; expression references x")
        raise ConfigurationError(f"expression uses unknown names {sorted(bad)}")
    return code


class InitialData:
    """Nonnegative initial state: constant, Gaussian bump, or sampled table."""

    def __init__(self, kind: str, **params):
        self.kind = kind
        self.params = params

    @classmethod
    def constant(cls, value: float):
        return cls("constant", value=float(value))

    @classmethod
    def bump(cls, height: float, center: float = 0.0, width: float = 1.0):
        return cls("bump", height=float(height), center=float(center), width=float(width))

    @classmethod
    def table(cls, xs, values):
        return cls("table", xs=np.asarray(xs, dtype=float),
                   values=np.asarray(values, dtype=float))

    def sample(self, grid: GridSpec) -> np.ndarray:
        x = grid.x_centers()
        if self.kind == "constant":
            u0 = np.full(grid.n_x, self.params["value"])
        elif self.kind == "bump":
            p = self.params
            u0 = p["height"] * np.exp(-((x - p["center"]) ** 2) / (2 * p["width"] ** 2))
        elif self.kind == "table":
            u0 = np.interp(x, self.params["xs"], self.params["values"])
        else:
            raise ConfigurationError(f"unknown initial data kind {self.kind!r}")
        if (u0 < 0).any():
            raise ConfigurationError("initial data must be nonnegative everywhere")
        return u0

    def describe(self) -> str:
        if self.kind == "table":
            key = hashlib.sha256(self.params["values"].tobytes()).hexdigest()[:12]
            return f"table:{key}"
        inner = ",".join(f"{k}={v}" for k, v in sorted(self.params.items()))
        return f"{self.kind}({inner})"


@dataclass(frozen=True)
class CutoffFn:
    """Smooth bump h_m(z) = h(z/m): 1 on |z| <= m, 0 outside |z| >= 2m.

    The profile is the C^1 polynomial smoothstep
        h(z) = 1 - s^2 (3 - 2 s),   s = clip(|z| - 1, 0, 1),
    so h_m(7.5) with m = 5 evaluates the profile at 1.5, giving 1/2.
    """

    m: float

    def __post_init__(self):
        if not self.m > 0:
            raise ConfigurationError(f"cutoff level m must be positive, got {self.m}")

    def eval(self, z):
        s = np.clip(np.abs(np.asarray(z, dtype=float)) / self.m - 1.0, 0.0, 1.0)
        return 1.0 - s * s * (3.0 - 2.0 * s)

    @property
    def profile_slope_bound(self) -> float:
        """max |h_m'| = max |h'| / m; the smoothstep profile has max |h'| = 3/2."""
        return 1.5 / self.m


def cutoff_eval(h: CutoffFn, z):
    """Value of the scaled cutoff bump at z."""
    out = h.eval(z)
    return float(out) if np.isscalar(z) else out


def cutoff_drift(u, lam: float, h: CutoffFn):
    """Pre-derivative flux value (u+)^(1+lam) h_m(u).

    Globally Lipschitz; see :func:`cutoff_drift_lipschitz_bound`.
    """
    arr = np.asarray(u, dtype=float)
    out = np.maximum(arr, 0.0) ** (1.0 + lam) * h.eval(arr)
    return float(out) if np.isscalar(u) else out


def cutoff_drift_lipschitz_bound(lam: float, h: CutoffFn) -> float:
    """Closed-form bound on |flux(u) - flux(v)| / |u - v|.

    |d/du (u+)^(1+lam) h_m(u)| <= (1+lam)(2m)^lam + (2m)^(1+lam) max|h_m'|.
    """
    two_m = 2.0 * h.m
    return (1.0 + lam) * two_m ** lam + two_m ** (1.0 + lam) * h.profile_slope_bound


def default_sigma_case1(K: float):
    """Extremal bounded-Lipschitz diffusion map sigma(u) = K min(|u|, 1)."""

    def sigma(u):
        return K * np.minimum(np.abs(u), 1.0)

    sigma.__qualname__ = f"clamp(K={K})"
    return sigma


@dataclass
class ProblemSpec:
    """Coefficients, exponents, diffusion regime, and initial data.

    Constraints enforced by :meth:`validate`:
      * K^-1 <= a(t,x) <= K and |a|,|b|,|c|,|bbar| <= K on probed points;
      * bbar depends on t only;
      * case1: lam in (0, 1], |sigma(u)| <= K (|u| and 1) and K-Lipschitz;
      * case2: lam in (0, 1), lam0 in [0, 1/2), |mu(t,x)| <= K;
      * u0 >= 0.
    """

    regime: str
    lam: float
    K: float
    u0: InitialData
    lam0: float = 0.0
    coeff_a: object = 1.0
    coeff_b: object = 0.0
    coeff_c: object = 0.0
    coeff_bbar: object = 0.0
    mu: object = 1.0
    sigma: object = None
    cutoff_m: float | None = None
    flux_scheme: str = "central"

    def __post_init__(self):
        self.coeff_a = Coefficient.wrap(self.coeff_a)
        self.coeff_b = Coefficient.wrap(self.coeff_b)
        self.coeff_c = Coefficient.wrap(self.coeff_c)
        self.coeff_bbar = TimeCoefficient.wrap(self.coeff_bbar)
        self.mu = Coefficient.wrap(self.mu)
        if self.regime == "case1_bounded_lipschitz" and self.sigma is None:
            self.sigma = default_sigma_case1(self.K)

    def cutoff(self) -> CutoffFn | None:
        return None if self.cutoff_m is None else CutoffFn(self.cutoff_m)

    def validate(self, grid: GridSpec, n_t_probes: int = 5) -> None:
        if self.regime not in REGIMES:
            raise ConfigurationError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.flux_scheme not in FLUX_SCHEMES:
            raise ConfigurationError(f"flux_scheme must be one of {FLUX_SCHEMES}")
        if not self.K > 0:
            raise ConfigurationError(f"K must be positive, got {self.K}")
        if self.regime == "case1_bounded_lipschitz":
            if not 0.0 < self.lam <= 1.0:
                raise ConfigurationError(
                    f"lambda must lie in (0, 1] for the bounded-Lipschitz regime, got {self.lam}")
        else:
            if not 0.0 < self.lam < 1.0:
                raise ConfigurationError(
                    f"lambda must lie in (0, 1) for the superlinear regime, got {self.lam}")
            if not 0.0 <= self.lam0 < 0.5:
                raise ConfigurationError(
                    f"lambda0 must lie in [0, 0.5) for the superlinear regime, got {self.lam0}")
        if self.cutoff_m is not None and not self.cutoff_m > 0:
            raise ConfigurationError(f"cutoff_m must be positive, got {self.cutoff_m}")

        x = grid.x_centers()
        ts = np.linspace(0.0, grid.t_end, n_t_probes)
        for t in ts:
            a = self.coeff_a.at(t, x)
            bad = (a < 1.0 / self.K - 1e-12) | (a > self.K + 1e-12)
            if bad.any():
                j = int(np.argmax(bad))
                raise ConfigurationError(
                    f"ellipticity violated: a(t={t:g}, x={x[j]:g}) = {a[j]:g} "
                    f"outside [{1.0 / self.K:g}, {self.K:g}]")
            for name, coeff in (("b", self.coeff_b), ("c", self.coeff_c)):
                vals = coeff.at(t, x)
                if np.abs(vals).max() > self.K + 1e-12:
                    raise ConfigurationError(
                        f"coefficient {name} exceeds the uniform bound K={self.K:g}")
            if abs(self.coeff_bbar.at(t)) > self.K + 1e-12:
                raise ConfigurationError(
                    f"coefficient bbar exceeds the uniform bound K={self.K:g}")
            if self.regime == "case2_superlinear":
                mu = self.mu.at(t, x)
                if np.abs(mu).max() > self.K + 1e-12:
                    raise ConfigurationError(
                        f"noise amplitude mu exceeds the uniform bound K={self.K:g}")

        if self.regime == "case1_bounded_lipschitz":
            probe = np.linspace(-5.0, 5.0, 201)
            vals = np.asarray(self.sigma(probe), dtype=float)
            bound = self.K * np.minimum(np.abs(probe), 1.0)
            if (np.abs(vals) > bound + 1e-9).any():
                raise ConfigurationError(
                    "sigma bound violated: |sigma(u)| must stay below K*min(|u|,1)")
            diffs = np.abs(np.diff(vals)) / np.diff(probe)
            if diffs.max() > self.K + 1e-6:
                raise ConfigurationError(
                    f"sigma is not K-Lipschitz on probed points (K={self.K:g})")

        self.u0.sample(grid)

    def describe(self) -> str:
        sig = (getattr(self.sigma, "__qualname__", repr(self.sigma))
               if self.sigma is not None else "none")
        parts = [
            self.regime, f"lam={self.lam!r}", f"lam0={self.lam0!r}", f"K={self.K!r}",
            f"a={self.coeff_a.describe()}", f"b={self.coeff_b.describe()}",
            f"c={self.coeff_c.describe()}", f"bbar={self.coeff_bbar.describe()}",
            f"mu={self.mu.describe()}", f"sigma={sig}",
            f"u0={self.u0.describe()}", f"m={self.cutoff_m!r}",
            f"flux={self.flux_scheme}",
        ]
        return ";".join(parts)


def spec_hash(spec: ProblemSpec, grid: GridSpec) -> str:
    text = spec.describe() + "|" + repr((grid.x_min, grid.x_max, grid.n_x,
                                         grid.t_end, grid.n_t, grid.boundary))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


class _ImplicitDiffusion:
    """Solver for (I - dt a Lap) u = rhs with the grid's boundary condition."""

    def __init__(self, spec: ProblemSpec, grid: GridSpec, dt: float):
        self.spec = spec
        self.grid = grid
        self.dt = dt
        self.periodic = grid.boundary == "periodic"
        self.constant_a = spec.coeff_a.is_constant
        if self.constant_a and self.periodic:
            a = spec.coeff_a.at(0.0, grid.x_centers())[0]
            theta = 2.0 * np.pi * np.fft.rfftfreq(grid.n_x, d=1.0)
            lam = (2.0 - 2.0 * np.cos(theta)) / grid.dx ** 2
            self._inv_mult = 1.0 / (1.0 + dt * a * lam)

    def solve(self, rhs: np.ndarray, t: float) -> np.ndarray:
        if self.constant_a and self.periodic:
            return np.fft.irfft(np.fft.rfft(rhs) * self._inv_mult, n=self.grid.n_x)
        gamma = self.dt * self.spec.coeff_a.at(t, self.grid.x_centers()) / self.grid.dx ** 2
        n = self.grid.n_x
        diag = 1.0 + 2.0 * gamma
        lower = -gamma
        upper = -gamma
        if not self.periodic:
            ab = np.zeros((3, n))
            ab[0, 1:] = upper[:-1]
            ab[1] = diag
            ab[2, :-1] = lower[1:]
            return solve_banded((1, 1), ab, rhs)
        # cyclic system via Sherman-Morrison: two corner entries folded into
        # a rank-one update of the plain tridiagonal matrix
        corner_last = -gamma[0]       # row 0, column n-1
        corner_first = -gamma[n - 1]  # row n-1, column 0
        alpha = -diag[0]
        d_mod = diag.copy()
        d_mod[0] -= alpha
        d_mod[-1] -= corner_last * corner_first / alpha
        ab = np.zeros((3, n))
        ab[0, 1:] = upper[:-1]
        ab[1] = d_mod
        ab[2, :-1] = lower[1:]
        u_vec = np.zeros(n)
        u_vec[0] = alpha
        u_vec[-1] = corner_first
        sol = solve_banded((1, 1), ab, np.column_stack([rhs, u_vec]))
        y, z = sol[:, 0], sol[:, 1]
        v_dot_y = y[0] + corner_last / alpha * y[-1]
        v_dot_z = z[0] + corner_last / alpha * z[-1]
        return y - z * (v_dot_y / (1.0 + v_dot_z))


class _Workspace:
    """Per-evolution cache: coefficient samples, flux closure, implicit solver."""

    def __init__(self, spec: ProblemSpec, grid: GridSpec, dt: float):
        self.spec = spec
        self.grid = grid
        self.dt = dt
        self.x = grid.x_centers()
        self.periodic = grid.boundary == "periodic"
        self.diffusion = _ImplicitDiffusion(spec, grid, dt)
        self.h = spec.cutoff()
        self._const_b = spec.coeff_b.at(0.0, self.x) if spec.coeff_b.is_constant else None
        self._const_c = spec.coeff_c.at(0.0, self.x) if spec.coeff_c.is_constant else None
        self._const_mu = spec.mu.at(0.0, self.x) if spec.mu.is_constant else None
        if spec.flux_scheme == "rusanov":
            if self.h is None:
                raise ConfigurationError("rusanov flux needs a finite cutoff level m")
            self._rusanov_speed = cutoff_drift_lipschitz_bound(spec.lam, self.h) / (1.0 + spec.lam)
        else:
            self._rusanov_speed = 0.0

    def _roll_diff(self, u: np.ndarray) -> np.ndarray:
        """Central difference of u, zero ghosts for the dirichlet wall."""
        if self.periodic:
            return (np.roll(u, -1) - np.roll(u, 1)) / (2.0 * self.grid.dx)
        out = np.empty_like(u)
        out[1:-1] = (u[2:] - u[:-2]) / (2.0 * self.grid.dx)
        out[0] = u[1] / (2.0 * self.grid.dx)
        out[-1] = -u[-2] / (2.0 * self.grid.dx)
        return out

    def _flux_divergence(self, u: np.ndarray, bbar_t: float) -> np.ndarray:
        """Conservative difference of the nonlinear flux g = bbar*drift/(1+lam)."""
        if bbar_t == 0.0:
            return np.zeros_like(u)
        if self.h is not None:
            drift = np.maximum(u, 0.0) ** (1.0 + self.spec.lam) * self.h.eval(u)
        else:
            drift = np.maximum(u, 0.0) ** (1.0 + self.spec.lam)
        g = (bbar_t / (1.0 + self.spec.lam)) * drift
        dx = self.grid.dx
        if self.periodic:
            g_next = np.roll(g, -1)
            flux = 0.5 * (g + g_next)
            if self._rusanov_speed:
                flux -= 0.5 * abs(bbar_t) * self._rusanov_speed * (np.roll(u, -1) - u)
            return (flux - np.roll(flux, 1)) / dx
        gp = np.concatenate([[0.0], g, [0.0]])
        flux = 0.5 * (gp[:-1] + gp[1:])
        if self._rusanov_speed:
            up = np.concatenate([[0.0], u, [0.0]])
            flux -= 0.5 * abs(bbar_t) * self._rusanov_speed * (up[1:] - up[:-1])
        return np.diff(flux) / dx

    def _sigma(self, t: float, u: np.ndarray) -> np.ndarray:
        if self.spec.regime == "case1_bounded_lipschitz":
            return np.asarray(self.spec.sigma(u), dtype=float)
        mu = self._const_mu if self._const_mu is not None else self.spec.mu.at(t, self.x)
        grow = np.maximum(u, 0.0) ** (1.0 + self.spec.lam0)
        if self.h is not None:
            grow = grow * self.h.eval(u)
        return mu * grow

    def advance(self, u: np.ndarray, t: float, noise_row: np.ndarray | None):
        spec = self.spec
        b = self._const_b if self._const_b is not None else spec.coeff_b.at(t, self.x)
        c = self._const_c if self._const_c is not None else spec.coeff_c.at(t, self.x)
        bbar_t = spec.coeff_bbar.at(t)
        rhs = u + self.dt * (b * self._roll_diff(u) + c * u
                             + self._flux_divergence(u, bbar_t))
        sig_max = 0.0
        if noise_row is not None:
            sig = self._sigma(t, u)
            sig_max = float(np.abs(sig).max())
            rhs = rhs + sig * noise_row / self.grid.dx
        return self.diffusion.solve(rhs, t + self.dt), sig_max


def step(state: np.ndarray, t: float, spec: ProblemSpec, grid: GridSpec,
         noise_slice: np.ndarray | None, dt: float) -> np.ndarray:
    """One semi-implicit step from time t to t + dt.

    Diffusion is implicit; transport, reaction, the conservative nonlinear
    flux difference, and the noise term sigma(u) dW/dx are explicit at the
    pre-step state.  Non-finite output is returned as-is (the caller flags
    explosion); a failed linear solve raises NumericalError.
    """
    ws = _Workspace(spec, grid, dt)
    try:
        out, _ = ws.advance(np.asarray(state, dtype=float), t, noise_slice)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"implicit diffusion solve failed: {exc}") from exc
    return out


@dataclass
class SolutionPath:
    """One trajectory plus diagnostics.

    ``states`` holds the solution at the stored levels (every ``store_every``
    steps, always including t = 0 and the final level reached).  The series
    (mass = sum |u| dx, sup = max |u|, min) cover every step taken.
    ``hitting_times[R]`` is the first step index n with sup_series[n] >= R.
    """

    states: np.ndarray
    stored_steps: np.ndarray
    grid: GridSpec
    store_every: int
    mass_series: np.ndarray
    sup_series: np.ndarray
    min_series: np.ndarray
    hitting_times: dict
    exploded: bool
    seed: int
    sigma_max: float = 0.0

    def stored_times(self) -> np.ndarray:
        return self.stored_steps * self.grid.dt

    def final_state(self) -> np.ndarray:
        return self.states[-1]


def max_wave_speed(spec: ProblemSpec, grid: GridSpec) -> float:
    """Estimate of the explicit advective speed |b| + |g'| for the dt check.

    The flux slope is evaluated at the smaller of the cutoff scale 2m and
    twice the initial amplitude; excursions beyond that are monitored by the
    explosion flag rather than rejected up front.
    """
    x = grid.x_centers()
    ts = np.linspace(0.0, grid.t_end, 5)
    b_max = max(float(np.abs(spec.coeff_b.at(t, x)).max()) for t in ts)
    bbar_max = max(abs(spec.coeff_bbar.at(t)) for t in ts)
    h = spec.cutoff()
    if h is not None and bbar_max > 0:
        amp_cap = max(2.0 * float(np.abs(spec.u0.sample(grid)).max()), 1.0)
        amp = min(2.0 * h.m, amp_cap)
        slope = ((1.0 + spec.lam) * amp ** spec.lam
                 + amp ** (1.0 + spec.lam) * h.profile_slope_bound)
        flux_slope = bbar_max * slope / (1.0 + spec.lam)
    else:
        flux_slope = 0.0
    return b_max + flux_slope


def evolve(spec: ProblemSpec, grid: GridSpec, noise: NoiseField | None,
           stop_levels=(), store_every: int = 1) -> SolutionPath:
    """Run the cut-off dynamics over the whole grid horizon.

    ``noise`` must live on ``grid`` (None runs the deterministic drift).
    Evolution continues past every hitting time up to t_end; explosion
    (non-finite state or |u| > 1e12) flags the path and keeps partial data.
    """
    spec.validate(grid)
    if noise is not None and noise.grid != grid:
        raise ConfigurationError("noise field was generated on a different grid")
    speed = max_wave_speed(spec, grid)
    if spec.cutoff_m is not None and speed * grid.dt / grid.dx > 1.0:
        raise NumericalError(
            f"time step too large for the advective terms: speed {speed:g} "
            f"needs dt <= {grid.dx / speed:g}")
    ws = _Workspace(spec, grid, grid.dt)
    u = spec.u0.sample(grid)
    n_t, dx, dt = grid.n_t, grid.dx, grid.dt

    mass = np.empty(n_t + 1)
    sup = np.empty(n_t + 1)
    mn = np.empty(n_t + 1)
    stored = [u.copy()]
    stored_steps = [0]
    hits = {float(r): None for r in stop_levels}
    sigma_max = 0.0
    exploded = False

    def record(n, arr):
        mass[n] = np.abs(arr).sum() * dx
        sup[n] = np.abs(arr).max()
        mn[n] = arr.min()
        for r, hit in hits.items():
            if hit is None and sup[n] >= r:
                hits[r] = n

    record(0, u)
    n_done = 0
    for n in range(n_t):
        row = noise.increments[n] if noise is not None else None
        u_next, sig = ws.advance(u, n * dt, row)
        sigma_max = max(sigma_max, sig)
        if not np.isfinite(u_next).all() or np.abs(u_next).max() > EXPLOSION_THRESHOLD:
            exploded = True
            break
        u = u_next
        n_done = n + 1
        record(n_done, u)
        if n_done % store_every == 0:
            stored.append(u.copy())
            stored_steps.append(n_done)
    if not exploded and stored_steps[-1] != n_done:
        stored.append(u.copy())
        stored_steps.append(n_done)
    return SolutionPath(
        states=np.array(stored),
        stored_steps=np.array(stored_steps),
        grid=grid,
        store_every=store_every,
        mass_series=mass[:n_done + 1] if exploded else mass,
        sup_series=sup[:n_done + 1] if exploded else sup,
        min_series=mn[:n_done + 1] if exploded else mn,
        hitting_times=hits,
        exploded=exploded,
        seed=noise.seed if noise is not None else -1,
        sigma_max=sigma_max,
    )


@dataclass
class EnsembleSummary:
    """Cross-path aggregates of an ensemble run.

    ``aggregates`` holds ensemble means with standard errors; ``per_level``
    the exceedance estimates per stop level; ``per_path`` the underlying
    per-path scalars (ordered by path index).
    """

    spec_hash: str
    master_seed: int
    n_paths: int
    grid: GridSpec
    stop_levels: tuple
    t_burn: float
    aggregates: dict
    per_level: list
    per_path: dict

    def as_dict(self) -> dict:
        return {
            "spec_hash": self.spec_hash,
            "master_seed": self.master_seed,
            "n_paths": self.n_paths,
            "grid": {
                "x_min": self.grid.x_min, "x_max": self.grid.x_max,
                "n_x": self.grid.n_x, "t_end": self.grid.t_end,
                "n_t": self.grid.n_t, "boundary": self.grid.boundary,
            },
            "stop_levels": list(self.stop_levels),
            "t_burn": self.t_burn,
            "aggregates": self.aggregates,
            "per_level": self.per_level,
            "per_path": self.per_path,
        }


def path_seeds(master_seed: int, n_paths: int) -> np.ndarray:
    """Derived per-path seeds: one master seed fans out deterministically."""
    return np.random.SeedSequence(master_seed).generate_state(n_paths, dtype=np.uint64)


def _trapezoid(y: np.ndarray, dt: float) -> float:
    if y.size < 2:
        return 0.0
    return float(dt * (y[0] / 2 + y[1:-1].sum() + y[-1] / 2))


def run_ensemble(spec: ProblemSpec, grid: GridSpec, n_paths: int, master_seed: int,
                 stop_levels=(), *, t_burn: float | None = None, store_every: int = 1,
                 noise_factory=None, path_callback=None) -> EnsembleSummary:
    """Monte Carlo ensemble of independent paths, deterministic in master_seed.

    Paths are generated and aggregated in path-index order.  ``noise_factory``
    (grid, seed) -> NoiseField defaults to the rectangle construction;
    ``path_callback(index, path)`` is invoked per finished path, which lets
    estimators stream statistics without retaining states.
    """
    from .noise import generate_rectangle_noise

    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    if t_burn is None:
        t_burn = 0.1 * grid.t_end
    if noise_factory is None:
        noise_factory = generate_rectangle_noise
    seeds = path_seeds(master_seed, n_paths)
    n_burn = int(np.ceil(t_burn / grid.dt))
    levels = [float(r) for r in stop_levels]

    per_path = {
        "sup_sqrt_mass": [], "int_mass": [], "sup_abs": [],
        "min_after_burn": [], "sigma_max": [], "exploded": [],
    }
    hit_steps = {r: [] for r in levels}
    for p in range(n_paths):
        noise = noise_factory(grid, int(seeds[p]))
        path = evolve(spec, grid, noise, stop_levels=levels, store_every=store_every)
        per_path["sup_sqrt_mass"].append(float(np.sqrt(path.mass_series.max())))
        per_path["int_mass"].append(_trapezoid(path.mass_series, grid.dt))
        per_path["sup_abs"].append(float(path.sup_series.max()))
        tail = path.min_series[n_burn:] if path.min_series.size > n_burn else path.min_series
        per_path["min_after_burn"].append(float(tail.min()) if tail.size else float("nan"))
        per_path["sigma_max"].append(path.sigma_max)
        per_path["exploded"].append(bool(path.exploded))
        for r in levels:
            hit_steps[r].append(path.hitting_times[r])
        if path_callback is not None:
            path_callback(p, path)

    def mean_se(vals):
        arr = np.asarray(vals, dtype=float)
        se = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
        return float(arr.mean()), se

    e_sup_sqrt, se_sup_sqrt = mean_se(per_path["sup_sqrt_mass"])
    e_int, se_int = mean_se(per_path["int_mass"])
    sup_abs = np.asarray(per_path["sup_abs"])
    per_level = []
    for r in levels:
        k = int((sup_abs > r).sum())
        p_hat = k / n_paths
        per_level.append({
            "R": r,
            "p_exceed": p_hat,
            "stderr": float(np.sqrt(p_hat * (1 - p_hat) / n_paths)),
            "n_exceed": k,
        })
    aggregates = {
        "e_sup_sqrt_mass": e_sup_sqrt, "se_sup_sqrt_mass": se_sup_sqrt,
        "e_int_mass": e_int, "se_int_mass": se_int,
        "explosion_fraction": float(np.mean(per_path["exploded"])),
        "min_after_burn": float(np.min(per_path["min_after_burn"])),
        "sigma_max": float(np.max(per_path["sigma_max"])) if n_paths else 0.0,
    }
    per_path["hit_steps"] = {str(r): hit_steps[r] for r in levels}
    return EnsembleSummary(
        spec_hash=spec_hash(spec, grid),
        master_seed=int(master_seed),
        n_paths=n_paths,
        grid=grid,
        stop_levels=tuple(levels),
        t_burn=float(t_burn),
        aggregates=aggregates,
        per_level=per_level,
        per_path=per_path,
    )


def path_to_csv(path: SolutionPath, file) -> None:
    """Long-form trajectory export with header t,x,u."""
    xs = path.grid.x_centers()
    times = path.stored_times()
    close = False
    if isinstance(file, (str, bytes)) or hasattr(file, "__fspath__"):
        file = open(file, "w", newline="")
        close = True
    try:
        writer = csv.writer(file)
        writer.writerow(["t", "x", "u"])
        for i, t in enumerate(times):
            for j, x in enumerate(xs):
                writer.writerow([repr(float(t)), repr(float(x)),
                                 repr(float(path.states[i, j]))])
    finally:
        if close:
            file.close()


def write_path_dump(file, path: SolutionPath) -> None:
    """Compact binary trajectory: magic 'SPTH', u32 version, u64 n_stored,
    u64 n_x, f64 dx, f64 dt_stored, then row-major f64 states."""
    dt_stored = path.grid.dt * path.store_every
    header = _SPTH_MAGIC + struct.pack(
        "<IQQdd", _SPTH_VERSION, path.states.shape[0], path.grid.n_x,
        path.grid.dx, dt_stored)
    data = np.ascontiguousarray(path.states, dtype="<f8")
    with open(file, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())


def read_path_dump(file) -> tuple[np.ndarray, dict]:
    with open(file, "rb") as fh:
        magic = fh.read(4)
        if magic != _SPTH_MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {_SPTH_MAGIC!r}")
        version, n_stored, n_x, dx, dt_stored = struct.unpack("<IQQdd", fh.read(36))
        raw = fh.read(n_stored * n_x * 8)
    states = np.frombuffer(raw, dtype="<f8").reshape(n_stored, n_x).copy()
    meta = {"version": version, "n_stored": int(n_stored), "n_x": int(n_x),
            "dx": dx, "dt_stored": dt_stored}
    return states, meta
