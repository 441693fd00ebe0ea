"""Noise generation: sub-Gaussian drivers, causal filters, spectral constants.

Drivers are unit-variance, mean-zero laws used both for the increments of the
integrated-white-noise process xi and for the coefficients of the series
construction in :func:`ito_nisio_path`.  The ``centered_exponential`` driver is
deliberately *not* sub-Gaussian; it exists as a negative control for the
moment-generating-function checker in :mod:`regtails.harness`.

A stationary noise path is produced by pushing the increments of xi through a
causal kernel psi,

    eps(t) = sum_{k >= 0} psi(k*h) * dxi(t - k*h),      k*h <= truncation,

the left-point discretization of the moving-average integral.  With a fixed
seed the whole pipeline is reproducible bit for bit.

White-increment mode (``kernel=None``) represents the generalized derivative
of xi: node values are increments divided by the step, so that quadrature
against a weight converges to the stochastic integral of the weight.  Its
idealized spectral density is flat at 1/(2*pi) and the covariance quadratic
form constant is 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .errors import ConfigError, ContractError
from .numerics import TimeGrid, trapezoid_weights

DRIVER_KINDS = ("gaussian", "rademacher", "uniform_sqrt3", "centered_exponential")
SUB_GAUSSIAN_DRIVERS = ("gaussian", "rademacher", "uniform_sqrt3")

_SQRT3 = math.sqrt(3.0)

#: flat spectral level of the idealized white-increment noise
WHITE_NOISE_F0 = 1.0 / (2.0 * math.pi)

# resolution of the internal quadrature used for kernel integrals
_KERNEL_QUAD_INTERVALS = 1 << 16


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_driver(kind: str, count: int, seed) -> np.ndarray:
    """Draw ``count`` i.i.d. unit-variance, mean-zero values of the named law."""
    if count < 1:
        raise ContractError(f"count must be >= 1, got {count}")
    rng = _as_rng(seed)
    if kind == "gaussian":
        return rng.standard_normal(count)
    if kind == "rademacher":
        return rng.integers(0, 2, count) * 2.0 - 1.0
    if kind == "uniform_sqrt3":
        return rng.uniform(-_SQRT3, _SQRT3, count)
    if kind == "centered_exponential":
        return rng.exponential(1.0, count) - 1.0
    raise ConfigError(f"unknown driver kind {kind!r}; expected one of {DRIVER_KINDS}")


@dataclass(frozen=True)
class Increments:
    """Orthogonal increments dxi over steps of width h covering [-prehistory, T].

    values[i] is the increment over (s_i, s_{i+1}] with s_i = -n_prehistory*h + i*h,
    so the last n_steps entries cover (0, T] and the first n_prehistory entries
    feed the causal filter before time zero.
    """

    grid: TimeGrid
    n_prehistory: int
    values: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self):
        expected = self.n_prehistory + self.grid.n_steps
        if self.values.shape != (expected,):
            raise ContractError(
                f"increment array has shape {self.values.shape}, expected ({expected},)"
            )


def simulate_increments(kind: str, grid: TimeGrid, prehistory: float, seed) -> Increments:
    """Simulate increments dxi_j = sqrt(h) * Z_j of an integrated white noise.

    ``prehistory`` extends the increment sequence to the left of t=0 so that a
    causal filter has input on (-prehistory, 0]; it is rounded up to whole steps.
    """
    if prehistory < 0:
        raise ContractError(f"prehistory must be >= 0, got {prehistory}")
    n_pre = int(np.ceil(prehistory / grid.h - 1e-12))
    n_total = n_pre + grid.n_steps
    draws = sample_driver(kind, n_total, seed) if n_total else np.empty(0)
    values = np.sqrt(grid.h) * draws
    return Increments(grid=grid, n_prehistory=n_pre, values=values)


@dataclass(frozen=True)
class FilterKernel:
    """Causal square-integrable kernel psi, zero for t < 0 and beyond the horizon.

    ``form`` is "exponential" (psi(t) = exp(-rate*t)) or "tabulated" (linear
    interpolation of samples).  The truncation horizon must carry all but a
    1e-8 fraction of the L2 mass of psi.
    """

    form: str
    truncation_horizon: float
    rate: float | None = None
    times: np.ndarray | None = field(default=None, repr=False, compare=False)
    samples: np.ndarray | None = field(default=None, repr=False, compare=False)

    _TAIL_FRACTION = 1e-8

    def __post_init__(self):
        if self.truncation_horizon <= 0 or not np.isfinite(self.truncation_horizon):
            raise ContractError(f"truncation_horizon must be positive, got {self.truncation_horizon}")
        if self.form == "exponential":
            if self.rate is None or self.rate <= 0:
                raise ContractError(f"exponential kernel needs a positive rate, got {self.rate}")
            total = 1.0 / (2.0 * self.rate)
            tail = math.exp(-2.0 * self.rate * self.truncation_horizon) / (2.0 * self.rate)
            if tail > self._TAIL_FRACTION * total:
                needed = -math.log(self._TAIL_FRACTION) / (2.0 * self.rate)
                raise ContractError(
                    f"truncation_horizon {self.truncation_horizon} keeps L2 tail mass "
                    f"{tail / total:.2e} of the kernel; need at least {needed:.3g}"
                )
        elif self.form == "tabulated":
            t = np.asarray(self.times, dtype=float)
            v = np.asarray(self.samples, dtype=float)
            if t.ndim != 1 or t.shape != v.shape or t.size < 1:
                raise ContractError("tabulated kernel needs matching 1-d time and value arrays")
            if t[0] != 0.0 or (t.size > 1 and not np.all(np.diff(t) > 0)):
                raise ContractError("tabulated kernel times must be strictly increasing from 0")
            if not np.all(np.isfinite(v)):
                raise ContractError("tabulated kernel values must be finite")
            if self.truncation_horizon < t[-1] - 1e-12:
                raise ContractError(
                    "truncation_horizon must cover the tabulated support "
                    f"({self.truncation_horizon} < {t[-1]})"
                )
            object.__setattr__(self, "times", t)
            object.__setattr__(self, "samples", v)
        else:
            raise ConfigError(f"unknown kernel form {self.form!r}")

    # -- constructors ----------------------------------------------------

    @classmethod
    def exponential(cls, rate: float, truncation_horizon: float | None = None) -> "FilterKernel":
        if truncation_horizon is None:
            truncation_horizon = 20.0 / rate if rate > 0 else 1.0
        return cls(form="exponential", rate=rate, truncation_horizon=truncation_horizon)

    @classmethod
    def tabulated(cls, times, samples, truncation_horizon: float | None = None) -> "FilterKernel":
        times = np.asarray(times, dtype=float)
        if truncation_horizon is None:
            truncation_horizon = float(times[-1]) if times.size else 1.0
        return cls(form="tabulated", times=times, samples=np.asarray(samples, dtype=float),
                   truncation_horizon=truncation_horizon)

    @classmethod
    def from_file(cls, path) -> "FilterKernel":
        """Load a tabulated kernel from a two-column text file (time, value)."""
        data = np.loadtxt(path, dtype=float)
        data = np.atleast_2d(data)
        if data.shape[1] != 2:
            raise ConfigError(f"kernel file {path} must have exactly two columns")
        return cls.tabulated(data[:, 0], data[:, 1])

    # -- evaluation ------------------------------------------------------

    def psi(self, t) -> np.ndarray:
        """Kernel values; zero off [0, truncation_horizon]."""
        t = np.asarray(t, dtype=float)
        inside = (t >= 0.0) & (t <= self.truncation_horizon)
        if self.form == "exponential":
            out = np.where(inside, np.exp(-self.rate * np.clip(t, 0.0, None)), 0.0)
        else:
            out = np.where(inside, np.interp(t, self.times, self.samples, left=0.0, right=0.0), 0.0)
        return out

    def taps(self, h: float) -> np.ndarray:
        """psi sampled at k*h for k*h <= truncation_horizon (left-point filter taps)."""
        n_taps = int(np.floor(self.truncation_horizon / h + 1e-12)) + 1
        return self.psi(np.arange(n_taps) * h)

    def _fine_grid(self) -> tuple[np.ndarray, float]:
        step = self.truncation_horizon / _KERNEL_QUAD_INTERVALS
        return np.arange(_KERNEL_QUAD_INTERVALS + 1) * step, step

    def l2_mass(self) -> float:
        """Numerical integral of psi^2 over [0, truncation_horizon]."""
        u, step = self._fine_grid()
        return float(np.trapezoid(self.psi(u) ** 2, dx=step))


@dataclass(frozen=True)
class NoisePath:
    """A sampled noise realization on a grid plus the metadata that produced it."""

    grid: TimeGrid
    values: np.ndarray = field(repr=False, compare=False)
    driver: str
    kernel: FilterKernel | None
    seed: int | None

    def __post_init__(self):
        if self.values.shape != (self.grid.n_nodes,):
            raise ContractError(
                f"noise path has {self.values.shape[0]} values for {self.grid.n_nodes} nodes"
            )


def apply_filter(kernel: FilterKernel, increments: Increments, grid: TimeGrid,
                 driver: str = "gaussian", seed: int | None = None) -> NoisePath:
    """Convolve filter taps with increments: eps(t_j) = sum_k psi(k*h) dxi(t_j - k*h).

    The increment ending at time t_j - k*h is used for tap k, so the sequence
    must extend at least taps*h before t=0.
    """
    if increments.grid is not grid and increments.grid != grid:
        raise ContractError("increments were generated on a different grid")
    taps = kernel.taps(grid.h)
    n_pre = increments.n_prehistory
    if n_pre < taps.size:
        raise ContractError(
            f"insufficient prehistory: filter needs {taps.size} steps "
            f"({taps.size * grid.h:.6g} time units), increments provide {n_pre}"
        )
    conv = fftconvolve(increments.values, taps, mode="full")
    values = conv[n_pre - 1: n_pre + grid.n_steps]
    return NoisePath(grid=grid, values=values, driver=driver, kernel=kernel, seed=seed)


def filtered_noise_path(kind: str, kernel: FilterKernel, grid: TimeGrid, seed,
                        prehistory: float | None = None) -> NoisePath:
    """Generate a stationary filtered path in one call (increments + filter)."""
    if prehistory is None:
        prehistory = kernel.truncation_horizon + grid.h
    inc = simulate_increments(kind, grid, prehistory, seed)
    return apply_filter(kernel, inc, grid, driver=kind, seed=seed if np.isscalar(seed) else None)


def white_noise_path(kind: str, grid: TimeGrid, seed) -> NoisePath:
    """White-increment noise: node values are increment densities dxi/h.

    Each value is an independent draw scaled by 1/sqrt(h), so quadrature of
    delta(t)*eps(t) reproduces the stochastic integral of delta against xi.
    """
    draws = sample_driver(kind, grid.n_nodes, seed)
    values = draws / np.sqrt(grid.h)
    return NoisePath(grid=grid, values=values, driver=kind, kernel=None,
                     seed=seed if np.isscalar(seed) else None)


# -- second-order theory of the filtered process -------------------------


def covariance_of_filter(kernel: FilterKernel, t) -> float | np.ndarray:
    """Stationary covariance B(t) = integral of psi(t+u) psi(u) du, t >= 0.

    Quadrature runs over [0, truncation_horizon]; beyond twice the horizon the
    supports are disjoint and the result is exactly zero.
    """
    scalar = np.isscalar(t)
    lags = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(lags < 0):
        raise ContractError("covariance lag must be >= 0 (B is even)")
    u, step = kernel._fine_grid()
    base = kernel.psi(u)
    out = np.empty(lags.shape)
    for i, lag in enumerate(lags):
        out[i] = np.trapezoid(kernel.psi(lag + u) * base, dx=step)
    return float(out[0]) if scalar else out


def spectral_density(kernel: FilterKernel, lam) -> float | np.ndarray:
    """f(lambda) = |(2*pi)^{-1/2} * integral psi(t) exp(-i*lambda*t) dt|^2."""
    scalar = np.isscalar(lam)
    lam_arr = np.atleast_1d(np.asarray(lam, dtype=float))
    u, step = kernel._fine_grid()
    psi_u = kernel.psi(u)
    f = np.empty(lam_arr.shape)
    block = 8  # keeps the outer-product workspace small
    for i in range(0, lam_arr.size, block):
        phase = np.exp(-1j * np.outer(lam_arr[i:i + block], u))
        transform = np.trapezoid(phase * psi_u, dx=step, axis=1) / math.sqrt(2.0 * math.pi)
        f[i:i + block] = np.abs(transform) ** 2
    return float(f[0]) if scalar else f


def f0_sup(kernel: FilterKernel, rel_tol: float = 1e-6, max_rounds: int = 60) -> float:
    """Supremum of the spectral density over frequency.

    Maximizes on a grid containing 0 and log-spaced points, then refines around
    the argmax until the maximum is stable to ``rel_tol`` relative.
    """
    lam = np.concatenate(([0.0], np.logspace(-3, 3, 121)))
    f = spectral_density(kernel, lam)
    best = float(f.max())
    idx = int(f.argmax())
    lo = lam[max(idx - 1, 0)]
    hi = lam[min(idx + 1, lam.size - 1)]
    if hi <= lo:
        hi = lo + 1.0
    for _ in range(max_rounds):
        lam = np.linspace(lo, hi, 33)
        f = spectral_density(kernel, lam)
        new_best = float(f.max())
        idx = int(f.argmax())
        lo = lam[max(idx - 1, 0)]
        hi = lam[min(idx + 1, lam.size - 1)]
        improved = new_best - best
        stable = abs(improved) <= rel_tol * max(new_best, 1e-300) and (hi - lo) <= max(1e-9, rel_tol * max(hi, 1.0))
        best = max(best, new_best)
        if stable:
            break
    return best


def d0_from_spectral(f0: float) -> float:
    """Quadratic-form constant of a stationary noise with spectral sup f0: 2*pi*f0."""
    if not np.isfinite(f0) or f0 <= 0:
        raise ContractError(f"spectral supremum must be positive and finite, got {f0}")
    return 2.0 * math.pi * f0


# -- series construction of an orthogonal-increment process ---------------


@dataclass(frozen=True)
class BasisSpec:
    """Orthonormal basis for the series construction (Haar on [0, horizon))."""

    family: str = "haar"
    n_terms: int = 1024
    horizon: float = 1.0

    def __post_init__(self):
        if self.family != "haar":
            raise ConfigError(f"unsupported basis family {self.family!r}")
        if self.n_terms < 1:
            raise ContractError(f"n_terms must be >= 1, got {self.n_terms}")
        if self.horizon <= 0:
            raise ContractError(f"basis horizon must be positive, got {self.horizon}")


_haar_cache: dict[tuple, np.ndarray] = {}


def _haar_running_integrals(n_terms: int, horizon: float, times: np.ndarray) -> np.ndarray:
    """Rows k of integral_0^t phi_k(u) du for the first n_terms Haar functions.

    The running integrals are triangle (Schauder) functions with closed form,
    so partial sums carry no inner quadrature error.
    """
    S = horizon
    out = np.empty((n_terms, times.size))
    out[0] = times / math.sqrt(S)
    k = 1
    level = 0
    while k < n_terms:
        n_shift = 1 << level
        width = S / n_shift
        height = (2.0 ** (level / 2.0)) / math.sqrt(S)
        shifts = np.arange(min(n_shift, n_terms - k))
        start = shifts[:, None] * width
        mid = start + width / 2.0
        end = start + width
        t = times[None, :]
        rising = np.clip(t, start, mid) - start
        falling = np.clip(t, mid, end) - mid
        out[k:k + shifts.size] = height * (rising - falling)
        k += shifts.size
        level += 1
    return out


def _haar_matrix(basis: BasisSpec, grid: TimeGrid) -> np.ndarray:
    key = (basis.n_terms, basis.horizon, grid.T, grid.n_steps)
    mat = _haar_cache.get(key)
    if mat is None:
        mat = _haar_running_integrals(basis.n_terms, basis.horizon, grid.nodes)
        mat.setflags(write=False)
        if len(_haar_cache) >= 16:
            _haar_cache.clear()
        _haar_cache[key] = mat
    return mat


def ito_nisio_path(kind: str, basis: BasisSpec, grid: TimeGrid, seed) -> np.ndarray:
    """Partial sum xi(t_j) = sum_k z_k * integral_0^{t_j} phi_k, z_k i.i.d. driver draws.

    With a gaussian driver this is a truncated expansion of a standard Wiener
    process; with any unit-variance sub-Gaussian driver the limit has the same
    covariance min(s, t) but is non-Gaussian.
    """
    if grid.T > basis.horizon + 1e-12:
        raise ConfigError(
            f"grid horizon {grid.T} exceeds basis support horizon {basis.horizon}"
        )
    coeffs = sample_driver(kind, basis.n_terms, seed)
    return coeffs @ _haar_matrix(basis, grid)


def covariance_row(kernel: FilterKernel, grid: TimeGrid) -> np.ndarray:
    """B at the grid lags 0, h, ..., T; reusable across quadratic-form probes."""
    return np.asarray(covariance_of_filter(kernel, np.arange(grid.n_nodes) * grid.h))


def quadratic_form(kernel: FilterKernel, delta: np.ndarray, grid: TimeGrid,
                   cov_row: np.ndarray | None = None) -> float:
    """Double integral of B(t-s) delta(t) delta(s) over [0,T]^2 by nested trapezoid."""
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (grid.n_nodes,):
        raise ContractError("delta must be sampled on the grid nodes")
    b = covariance_row(kernel, grid) if cov_row is None else cov_row
    idx = np.abs(np.subtract.outer(np.arange(grid.n_nodes), np.arange(grid.n_nodes)))
    B = b[idx]
    wd = trapezoid_weights(grid) * delta
    return float(grid.h ** 2 * (wd @ B @ wd))
