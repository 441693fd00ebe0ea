"""Monte-Carlo experiment engine and noise-property checkers.

Trials are seeded counter-style, trial_seed = mix(master_seed, trial_index),
so results are reproducible bit for bit regardless of execution order or the
number of worker processes.  Aggregation (tail counts, interval fitting) is a
pure function of the record set and therefore order-independent.

The sub-Gaussianity checker estimates the moment generating function of the
weighted noise integral I = integral of delta(t) * eps(t) dt across many
replications and tests one-sided domination by the Gaussian envelope
exp(lambda^2 * d0 * ||delta||^2 / 2).  Domination is checked against a lower
bootstrap confidence limit so that sampling noise cannot produce false alarms.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import beta as _beta_dist

from . import config as _config
from .bounds import BoundConstants, tail_envelope
from .errors import ContractError, NonConvergenceError
from .estimator import FitOptions, Observation, lse_fit, normalized_deviation
from .noise import (
    FilterKernel,
    covariance_row,
    d0_from_spectral,
    f0_sup,
    filtered_noise_path,
    quadratic_form,
    white_noise_path,
)
from .numerics import TimeGrid, integrate, trapezoid_weights

_MASK64 = (1 << 64) - 1

# stream tags keep independent uses of the master seed from colliding
STREAM_TRIALS = 1
STREAM_MGF = 2
STREAM_BOOT = 3
STREAM_PAIRS = 4
STREAM_PROBES = 5
STREAM_PATHS = 6


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, stream: int, index: int) -> int:
    """Pure 64-bit mix of (master_seed, stream, index); the trial-seed function."""
    z = _splitmix64((master_seed & _MASK64) ^ _splitmix64(stream & _MASK64))
    return _splitmix64(z ^ _splitmix64(index & _MASK64))


@dataclass(frozen=True)
class TrialRecord:
    trial_index: int
    trial_seed: int
    theta_hat: tuple[float, ...]
    deviation: float
    converged: bool
    boundary: bool


def _simulate_noise_values(cfg: "_config.ExperimentConfig", grid: TimeGrid,
                           kernel: FilterKernel | None, seed: int) -> np.ndarray:
    if kernel is None:
        return white_noise_path(cfg.noise.driver, grid, seed).values
    return filtered_noise_path(cfg.noise.driver, kernel, grid, seed,
                               prehistory=cfg.noise.prehistory).values


def _run_chunk(cfg_json: str, start: int, stop: int) -> list[tuple]:
    """Run trials [start, stop) and return plain tuples (picklable for workers)."""
    cfg = _config.config_from_json(cfg_json)
    grid = _config.build_grid(cfg)
    model = _config.build_model(cfg)
    kernel = _config.build_kernel(cfg)
    theta_true = np.asarray(cfg.model.theta_true)
    a_true = model.eval(grid.nodes, theta_true)
    norming = _config.build_norming(cfg, model, grid)
    opts = FitOptions()
    out = []
    for i in range(start, stop):
        seed = derive_seed(cfg.montecarlo.master_seed, STREAM_TRIALS, i)
        eps = _simulate_noise_values(cfg, grid, kernel, seed)
        obs = Observation(grid=grid, x_values=a_true + eps,
                          theta_true=cfg.model.theta_true, noise_seed=seed)
        try:
            res = lse_fit(obs, model, opts)
            theta_hat, converged, boundary = res.theta_hat, True, res.boundary
        except NonConvergenceError as err:
            theta_hat, converged, boundary = err.best_point, False, False
        dev = normalized_deviation(np.asarray(theta_hat), theta_true, norming)
        out.append((i, seed, theta_hat, dev, converged, boundary))
    return out


def run_trials(cfg: "_config.ExperimentConfig", workers: int = 1) -> list[TrialRecord]:
    """Simulate, fit, and record every trial of the configured experiment.

    Raises NonConvergenceError if more than 1% of trials fail to converge.
    """
    n = cfg.montecarlo.n_trials
    cfg_json = _config.config_to_json(cfg)
    if workers <= 1:
        raw = _run_chunk(cfg_json, 0, n)
    else:
        chunk = max(1, math.ceil(n / (4 * workers)))
        spans = [(s, min(s + chunk, n)) for s in range(0, n, chunk)]
        raw = []
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(_run_chunk, [cfg_json] * len(spans),
                                 [s for s, _ in spans], [e for _, e in spans]):
                raw.extend(part)
        raw.sort(key=lambda r: r[0])
    records = [TrialRecord(*r) for r in raw]
    n_bad = sum(1 for r in records if not r.converged)
    if n_bad > 0.01 * n:
        raise NonConvergenceError(
            f"{n_bad} of {n} trials failed to converge (> 1%); check the model/box setup"
        )
    return records


def deviations(records) -> np.ndarray:
    return np.array([r.deviation for r in records])


# -- tail estimation -------------------------------------------------------


def clopper_pearson(k: int, n: int, alpha: float = 0.05) -> tuple[float, float]:
    """Exact two-sided binomial confidence interval for k successes in n trials."""
    if not 0 <= k <= n or n < 1:
        raise ContractError(f"need 0 <= k <= n with n >= 1, got k={k}, n={n}")
    low = float(_beta_dist.ppf(alpha / 2.0, k, n - k + 1)) if k > 0 else 0.0
    high = float(_beta_dist.ppf(1.0 - alpha / 2.0, k + 1, n - k)) if k < n else 1.0
    return low, high


@dataclass(frozen=True)
class TailEstimate:
    """Exceedance table over an increasing level grid with exact binomial bands."""

    r_grid: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)
    n_trials: int
    p_hat: np.ndarray = field(repr=False)
    ci_low: np.ndarray = field(repr=False)
    ci_high: np.ndarray = field(repr=False)
    envelope: np.ndarray | None = field(repr=False, default=None)
    fitted_rate: float = math.nan


def fit_exceedance_rate(r_grid, counts, n_trials: int, min_count: int = 10) -> float:
    """Slope of -ln(p_hat) against R^2 over levels with at least min_count hits.

    Below min_count exceedances the log is dominated by binomial noise, so
    those levels are excluded.  Returns nan with fewer than two usable levels.
    """
    r_grid = np.asarray(r_grid, dtype=float)
    counts = np.asarray(counts)
    keep = counts >= min_count
    if keep.sum() < 2:
        return math.nan
    x = r_grid[keep] ** 2
    y = -np.log(counts[keep] / n_trials)
    if np.ptp(x) <= 0:
        return math.nan
    return float(np.polyfit(x, y, 1)[0])


def estimate_tail(records_or_devs, r_grid, consts: BoundConstants | None = None,
                  alpha: float = 0.05) -> TailEstimate:
    """Empirical exceedance probabilities with exact binomial intervals.

    The optional bound constants add the theoretical envelope (clipped to 1)
    alongside each level.
    """
    devs = records_or_devs
    if len(devs) and isinstance(devs[0], TrialRecord):
        devs = deviations(devs)
    devs = np.asarray(devs, dtype=float)
    n = devs.size
    if n < 100:
        raise ContractError(f"need at least 100 trials for tail estimation, got {n}")
    r_grid = np.asarray(r_grid, dtype=float)
    if r_grid.size == 0:
        raise ContractError("R grid must be non-empty")
    if np.any(np.diff(r_grid) <= 0):
        raise ContractError("R grid must be strictly increasing")
    if np.any(r_grid < 0):
        raise ContractError("R levels must be >= 0")
    sorted_devs = np.sort(devs)
    counts = n - np.searchsorted(sorted_devs, r_grid, side="left")
    p_hat = counts / n
    ci = np.array([clopper_pearson(int(k), n, alpha) for k in counts])
    envelope = None
    if consts is not None:
        envelope = np.array([tail_envelope(consts, float(r), clip=True) for r in r_grid])
    return TailEstimate(
        r_grid=r_grid,
        counts=counts.astype(int),
        n_trials=n,
        p_hat=p_hat,
        ci_low=ci[:, 0],
        ci_high=ci[:, 1],
        envelope=envelope,
        fitted_rate=fit_exceedance_rate(r_grid, counts, n),
    )


@dataclass(frozen=True)
class EnvelopeComparison:
    level_ok: np.ndarray = field(repr=False)
    rate_ok: bool
    overall_pass: bool
    b: float
    fitted_rate: float


def compare_with_envelope(tail: TailEstimate, consts: BoundConstants) -> EnvelopeComparison:
    """Per-level and rate verdicts for envelope domination.

    A level passes when its lower confidence limit does not exceed the
    envelope (the bound is not violated beyond binomial noise); the rate
    verdict asks the fitted exceedance rate to be at least the guaranteed b.
    """
    envelope = tail.envelope
    if envelope is None:
        envelope = np.array([tail_envelope(consts, float(r), clip=True) for r in tail.r_grid])
    level_ok = tail.ci_low <= envelope + 1e-15
    rate_ok = bool(np.isfinite(tail.fitted_rate) and tail.fitted_rate >= consts.b)
    return EnvelopeComparison(
        level_ok=level_ok,
        rate_ok=rate_ok,
        overall_pass=bool(level_ok.all() and rate_ok),
        b=consts.b,
        fitted_rate=tail.fitted_rate,
    )


# -- moment-generating-function checker -------------------------------------

#: cap on lambda^2 * d0 * ||delta||^2 / 2 (exponential moments beyond this are
#: not estimable at desk scale)
MGF_EXPONENT_CAP = 4.0


@dataclass(frozen=True)
class MgfReport:
    lambda_grid: np.ndarray = field(repr=False)
    empirical_mean: np.ndarray = field(repr=False)
    band_low: np.ndarray = field(repr=False)
    band_high: np.ndarray = field(repr=False)
    envelope: np.ndarray = field(repr=False)
    per_lambda_pass: np.ndarray = field(repr=False)
    overall_pass: bool
    delta_norm_sq: float
    n_rep: int


def mgf_check(driver: str, delta, grid: TimeGrid, d0: float, lambda_grid,
              n_rep: int, seed: int, kernel: FilterKernel | None = None,
              prehistory: float | None = None, slack: float = 0.05,
              n_boot: int = 400) -> MgfReport:
    """Empirical MGF of I = integral(delta * eps) against the Gaussian envelope.

    ``delta`` is a weight function given as node values or a callable on times.
    For each lambda the verdict passes when the lower bootstrap confidence
    limit of the empirical mean of exp(lambda * I) stays below
    exp(lambda^2 * d0 * ||delta||^2 / 2) * (1 + slack).  Replications with
    non-finite exponential moments fail that lambda outright.
    """
    if n_rep < 10_000:
        raise ContractError(f"need n_rep >= 10000 for stable exponential moments, got {n_rep}")
    delta_vals = np.asarray(delta(grid.nodes) if callable(delta) else delta, dtype=float)
    norm_sq = integrate(delta_vals * delta_vals, grid)
    lambda_grid = np.asarray(lambda_grid, dtype=float)
    exponents = 0.5 * lambda_grid ** 2 * d0 * norm_sq
    if np.any(exponents > MGF_EXPONENT_CAP * (1 + 1e-9)):
        raise ContractError(
            f"lambda grid too aggressive: max exponent {exponents.max():.3g} "
            f"exceeds the estimability cap {MGF_EXPONENT_CAP}"
        )

    w = trapezoid_weights(grid) * grid.h * delta_vals
    samples = np.empty(n_rep)
    for r in range(n_rep):
        rep_seed = derive_seed(seed, STREAM_MGF, r)
        if kernel is None:
            path = white_noise_path(driver, grid, rep_seed)
        else:
            path = filtered_noise_path(driver, kernel, grid, rep_seed, prehistory=prehistory)
        samples[r] = w @ path.values

    boot_rng = np.random.default_rng(derive_seed(seed, STREAM_BOOT, 0))
    boot_idx = boot_rng.integers(0, n_rep, size=(n_boot, n_rep))

    means = np.empty(lambda_grid.size)
    lows = np.empty(lambda_grid.size)
    highs = np.empty(lambda_grid.size)
    envelope = np.exp(exponents)
    passed = np.empty(lambda_grid.size, dtype=bool)
    for j, lam in enumerate(lambda_grid):
        vals = np.exp(lam * samples)
        if not np.all(np.isfinite(vals)):
            means[j] = math.inf
            lows[j] = math.inf
            highs[j] = math.inf
            passed[j] = False
            continue
        means[j] = vals.mean()
        if lam == 0.0:
            lows[j] = highs[j] = 1.0
        else:
            boot_means = vals[boot_idx].mean(axis=1)
            # percentile limits: a basic-bootstrap lower limit 2*m - q(97.5%)
            # collapses below zero for heavy-tailed replicate values, which
            # would blind the one-sided domination test
            lows[j] = float(np.percentile(boot_means, 2.5))
            highs[j] = float(np.percentile(boot_means, 97.5))
        passed[j] = lows[j] <= envelope[j] * (1.0 + slack)
    return MgfReport(
        lambda_grid=lambda_grid,
        empirical_mean=means,
        band_low=lows,
        band_high=highs,
        envelope=envelope,
        per_lambda_pass=passed,
        overall_pass=bool(passed.all()),
        delta_norm_sq=norm_sq,
        n_rep=n_rep,
    )


# -- covariance quadratic-form checker ---------------------------------------


@dataclass(frozen=True)
class QuadraticFormReport:
    d0: float
    f0: float
    b1: float
    b2: float
    max_ratio: float
    min_form: float
    n_probes: int
    bounded: bool
    nonnegative: bool
    passed: bool


def _piecewise_constant_probe(rng: np.random.Generator, grid: TimeGrid) -> np.ndarray:
    """Random piecewise-constant weight with node-aligned segment boundaries."""
    n_seg = int(rng.integers(3, 9))
    cuts = np.sort(rng.choice(np.arange(1, grid.n_steps), size=n_seg - 1, replace=False))
    levels = rng.standard_normal(n_seg)
    delta = np.empty(grid.n_nodes)
    bounds = np.concatenate(([0], cuts, [grid.n_nodes]))
    for lvl, a, b in zip(levels, bounds[:-1], bounds[1:]):
        delta[a:b] = lvl
    return delta


def quadratic_form_check(kernel: FilterKernel, grid: TimeGrid, n_probe: int, seed: int,
                         margin: float = 1e-3) -> QuadraticFormReport:
    """Verify <B delta, delta> <= d0 * ||delta||^2 with d0 = 2*pi*f0 on random probes.

    Also reports the two classical integrability constants of the covariance,
    b1 = sqrt(double integral of B^2) and b2 = sup_t integral of |B(t-s)| ds,
    both on the truncated domain [0, T]^2.
    """
    if n_probe < 10:
        raise ContractError(f"need at least 10 probes, got {n_probe}")
    f0 = f0_sup(kernel)
    d0 = d0_from_spectral(f0)
    cov = covariance_row(kernel, grid)
    w = trapezoid_weights(grid)
    idx = np.abs(np.subtract.outer(np.arange(grid.n_nodes), np.arange(grid.n_nodes)))
    B = cov[idx]
    b1 = math.sqrt(float(grid.h ** 2 * (w @ (B * B) @ w)))
    b2 = float((grid.h * np.abs(B) @ w).max())

    rng = np.random.default_rng(derive_seed(seed, STREAM_PROBES, 0))
    max_ratio = 0.0
    min_form = math.inf
    for _ in range(n_probe):
        delta = _piecewise_constant_probe(rng, grid)
        form = quadratic_form(kernel, delta, grid, cov_row=cov)
        norm_sq = integrate(delta * delta, grid)
        min_form = min(min_form, form)
        if norm_sq > 1e-12:
            max_ratio = max(max_ratio, form / norm_sq)
    bounded = max_ratio <= d0 * (1.0 + margin)
    nonnegative = min_form >= -1e-10 * max(1.0, abs(min_form))
    return QuadraticFormReport(
        d0=d0, f0=f0, b1=b1, b2=b2,
        max_ratio=max_ratio, min_form=min_form, n_probes=n_probe,
        bounded=bounded, nonnegative=nonnegative,
        passed=bool(bounded and nonnegative),
    )
