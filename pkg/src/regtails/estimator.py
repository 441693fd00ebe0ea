"""Least-squares fitting of the regression parameter on a time grid.

The estimator minimizes the squared-residual integral over the closed
parameter box.  The search is global-then-local: a full lattice scan over the
box picks starting points, and projected Gauss-Newton steps with backtracking
refine them.  The lattice stage is what makes the procedure match the
definition of the estimator (a global minimizer over the closure), not just a
local stationary point.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DataError, DomainError, NonConvergenceError
from .model import RegressionModel
from .numerics import TimeGrid, trapezoid_weights


@dataclass(frozen=True)
class Observation:
    """Sampled observations X(t_j) on a grid, with provenance when synthetic."""

    grid: TimeGrid
    x_values: np.ndarray = field(repr=False, compare=False)
    theta_true: tuple[float, ...] | None = None
    noise_seed: int | None = None

    def __post_init__(self):
        x = np.asarray(self.x_values, dtype=float)
        if x.shape != (self.grid.n_nodes,):
            raise ContractError(
                f"observation has {x.shape} values for {self.grid.n_nodes} grid nodes"
            )
        if not np.all(np.isfinite(x)):
            raise DataError("observation contains non-finite values")
        object.__setattr__(self, "x_values", x)


@dataclass(frozen=True)
class FitOptions:
    coarse_grid_per_dim: int = 9
    n_refine_starts: int = 3
    local_tol_factor: float = 1e-8   # times the box diameter
    max_iter: int = 200
    tie_tol: float = 1e-10
    max_halvings: int = 40


@dataclass(frozen=True)
class LseResult:
    theta_hat: tuple[float, ...]
    q_value: float
    n_restarts: int
    converged: bool
    boundary: bool
    lattice_tie_count: int = 1


def objective(obs: Observation, model: RegressionModel, tau) -> float:
    """Q(tau) = integral of (X(t) - a(t, tau))^2 dt; requires tau in the box."""
    tau = np.asarray(tau, dtype=float)
    if not model.box.contains(tau):
        raise DomainError(f"tau {tau} outside the parameter box")
    r = obs.x_values - model.eval(obs.grid.nodes, tau)
    w = trapezoid_weights(obs.grid)
    val = float(obs.grid.h * np.dot(w, r * r))
    if not np.isfinite(val):
        raise DataError(f"objective is non-finite at tau {tau}")
    return val


def _lattice_points(box, per_dim: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, per_dim) for lo, hi in zip(box.lower, box.upper)]
    return np.array(list(itertools.product(*axes)))


def _gauss_newton(obs, model, start, q_start, opts) -> tuple[np.ndarray, float, bool]:
    """Projected Gauss-Newton with step halving; monotone in Q by construction."""
    grid = obs.grid
    w = trapezoid_weights(grid)
    h = grid.h
    box = model.box
    tol = opts.local_tol_factor * box.diameter
    tau = np.asarray(start, dtype=float)
    q_cur = q_start
    ridge = 0.0
    for _ in range(opts.max_iter):
        g = np.atleast_2d(model.grad(grid.nodes, tau))
        r = obs.x_values - model.eval(grid.nodes, tau)
        gw = g * w
        gram = h * (gw @ g.T)
        rhs = h * (gw @ r)
        try:
            step = np.linalg.solve(gram + ridge * np.eye(model.q), rhs)
        except np.linalg.LinAlgError:
            ridge = max(ridge * 10.0, 1e-10 * (np.trace(gram) + 1.0))
            continue
        if not np.all(np.isfinite(step)):
            raise DataError(f"non-finite search direction at tau {tau}")
        alpha = 1.0
        accepted = None
        for _ in range(opts.max_halvings):
            cand = box.clip(tau + alpha * step)
            q_new = objective(obs, model, cand)
            if q_new < q_cur:
                accepted = (cand, q_new)
                break
            if np.linalg.norm(cand - tau) < tol:
                break
            alpha *= 0.5
        if accepted is None:
            # no descent left at this point: treat as converged to a minimizer
            return tau, q_cur, True
        moved = float(np.linalg.norm(accepted[0] - tau))
        tau, q_cur = accepted
        if moved < tol:
            return tau, q_cur, True
    return tau, q_cur, False


def lse_fit(obs: Observation, model: RegressionModel, opts: FitOptions | None = None) -> LseResult:
    """Global lattice scan over the box followed by local Gauss-Newton refinement.

    Ties on the lattice are broken by the lexicographically smallest point and
    their multiplicity is recorded.  The returned objective value never exceeds
    the best lattice value.  Raises NonConvergenceError (carrying the best
    lattice point) if every refinement start hits the iteration cap.
    """
    opts = opts or FitOptions()
    if opts.coarse_grid_per_dim < 3:
        raise ContractError(f"coarse_grid_per_dim must be >= 3, got {opts.coarse_grid_per_dim}")
    points = _lattice_points(model.box, opts.coarse_grid_per_dim)
    values = np.array([objective(obs, model, p) for p in points])

    q_min = float(values.min())
    tie_mask = values <= q_min + opts.tie_tol * max(1.0, abs(q_min))
    tie_count = int(tie_mask.sum())

    order = sorted(range(len(points)), key=lambda i: (values[i], tuple(points[i])))
    starts = order[: opts.n_refine_starts]

    best_tau = points[order[0]]
    best_q = float(values[order[0]])
    any_converged = False
    for idx in starts:
        tau, q_val, ok = _gauss_newton(obs, model, points[idx], float(values[idx]), opts)
        any_converged = any_converged or ok
        if q_val < best_q or (q_val == best_q and tuple(tau) < tuple(best_tau)):
            best_tau, best_q = tau, q_val
    if not any_converged:
        raise NonConvergenceError(
            f"no refinement start converged within {opts.max_iter} iterations",
            best_point=tuple(float(x) for x in best_tau),
            best_value=best_q,
        )

    lo, hi = model.box.lower_arr, model.box.upper_arr
    margin = 1e-8 * (hi - lo)
    boundary = bool(np.any(best_tau <= lo + margin) or np.any(best_tau >= hi - margin))
    return LseResult(
        theta_hat=tuple(float(x) for x in best_tau),
        q_value=best_q,
        n_restarts=len(starts),
        converged=True,
        boundary=boundary,
        lattice_tie_count=tie_count,
    )


def normalized_deviation(result, theta_true, norming) -> float:
    """Euclidean norm of N * (theta_hat - theta_true) for a diagonal norming N."""
    theta_hat = np.asarray(getattr(result, "theta_hat", result), dtype=float)
    theta_true = np.asarray(theta_true, dtype=float)
    norming = np.asarray(norming, dtype=float)
    if theta_hat.shape != theta_true.shape or theta_hat.shape != norming.shape:
        raise ContractError(
            f"dimension mismatch: theta_hat {theta_hat.shape}, theta_true {theta_true.shape}, "
            f"norming {norming.shape}"
        )
    return float(np.linalg.norm(norming * (theta_hat - theta_true)))
