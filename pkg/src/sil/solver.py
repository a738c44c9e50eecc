"""Smooth loss over expanded designs and the accelerated proximal-gradient fit.

Latent coefficients are kept stacked: a ``(sum_j a_j, M)`` array whose rows
``offsets[j]:offsets[j+1]`` form the block ``Delta_j``. The expanded design
``Z^m`` is never materialised; ``Z^m delta^m`` is computed as
``X^m @ scatter(delta^m)`` and ``Z^mT r`` as a row gather of ``X^mT r``,
which keeps one iteration at ``O(pN + M e)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from .graph import NeighborhoodIndex
from .penalty import (PenaltyConfig, penalty_value_stacked, prox_stacked, split_blocks,
                      stack_blocks, zero_threshold)


class SolverError(RuntimeError):
    pass


@dataclass
class MultiStudy:
    """``M`` horizontally partitioned datasets sharing the same ``p`` features."""

    X: list
    y: list

    def __post_init__(self):
        if len(self.X) != len(self.y) or not self.X:
            raise ValueError(f"need one response per design and at least one dataset, got {len(self.X)} and {len(self.y)}")
        X = [np.asarray(x, dtype=float) for x in self.X]
        y = [np.asarray(v, dtype=float).reshape(-1) for v in self.y]
        p = X[0].shape[1] if X[0].ndim == 2 else -1
        for m, (xm, ym) in enumerate(zip(X, y), 1):
            if xm.ndim != 2 or xm.shape[1] != p:
                raise ValueError(f"dataset {m}: design has shape {xm.shape}, expected (n, {p})")
            if xm.shape[0] < 1 or xm.shape[0] != ym.shape[0]:
                raise ValueError(f"dataset {m}: {xm.shape[0]} design rows but {ym.shape[0]} responses")
            if not (np.isfinite(xm).all() and np.isfinite(ym).all()):
                raise ValueError(f"dataset {m}: nonfinite entries")
        self.X, self.y = X, y

    @property
    def M(self) -> int:
        return len(self.X)

    @property
    def p(self) -> int:
        return self.X[0].shape[1]

    @property
    def n(self) -> tuple:
        return tuple(x.shape[0] for x in self.X)

    @property
    def N(self) -> int:
        return sum(self.n)

    def subset(self, indices: Sequence[int]) -> "MultiStudy":
        return MultiStudy([self.X[i] for i in indices], [self.y[i] for i in indices])


@dataclass(frozen=True)
class Standardizer:
    """Per-dataset column centring/scaling of ``X`` and centring of ``y``."""

    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: np.ndarray

    @classmethod
    def fit(cls, study: MultiStudy, enabled: bool = True) -> "Standardizer":
        p, M = study.p, study.M
        if not enabled:
            return cls(np.zeros((p, M)), np.ones((p, M)), np.zeros(M))
        mu = np.column_stack([x.mean(axis=0) for x in study.X])
        sd = np.column_stack([x.std(axis=0, ddof=1) if x.shape[0] > 1 else np.ones(p) for x in study.X])
        sd = np.where(sd > 0, sd, 1.0)
        ym = np.array([v.mean() for v in study.y])
        return cls(mu, sd, ym)

    def transform(self, study: MultiStudy) -> MultiStudy:
        X = [(x - self.x_mean[:, m]) / self.x_scale[:, m] for m, x in enumerate(study.X)]
        y = [v - self.y_mean[m] for m, v in enumerate(study.y)]
        return MultiStudy(X, y)

    def to_original(self, beta: np.ndarray):
        """Map fitted-scale coefficients to ``(coef, intercept)`` on the data scale."""
        coef = beta / self.x_scale
        intercept = self.y_mean - np.sum(self.x_mean * coef, axis=0)
        return coef, intercept


def recover_beta(latent, nb: NeighborhoodIndex) -> np.ndarray:
    """Scatter-sum latent blocks into the ``p x M`` coefficient matrix."""
    theta = latent if isinstance(latent, np.ndarray) else stack_blocks(latent)
    out = np.zeros((nb.p, theta.shape[1]))
    np.add.at(out, nb.members, theta)
    return out


class FitProblem:
    """Smooth part ``L + P_R`` plus the penalty configuration to minimise."""

    def __init__(self, study: MultiStudy, nb: NeighborhoodIndex, config: PenaltyConfig):
        if nb.p != study.p:
            raise ValueError(f"graph has {nb.p} features, data has {study.p}")
        self.study = study
        self.nb = nb
        self.config = config
        self.tau = config.tau(nb.p) if config.lam > 0 else np.ones(nb.p)
        S = nb.total_size
        self.scatter = sparse.csr_matrix((np.ones(S), (nb.members, np.arange(S))), shape=(nb.p, S))
        self.row_sizes = nb.sizes[nb.group_of_row].astype(float)
        self._n = np.array(study.n, dtype=float)

    @property
    def shape(self) -> tuple:
        return (self.nb.total_size, self.study.M)

    def expanded_design(self, m: int) -> np.ndarray:
        """``Z^m``: columns of ``X^m`` gathered group by group (tests only)."""
        return self.study.X[m][:, self.nb.members]

    def beta(self, theta: np.ndarray) -> np.ndarray:
        return np.asarray(self.scatter @ theta)

    def smooth_value(self, theta: np.ndarray) -> float:
        return self.smooth_value_grad(theta, need_grad=False)[0]

    def smooth_value_grad(self, theta: np.ndarray, need_grad: bool = True):
        B = self.beta(theta)
        value = 0.0
        G = np.empty_like(B) if need_grad else None
        for m, (x, y) in enumerate(zip(self.study.X, self.study.y)):
            r = y - x @ B[:, m]
            value += 0.5 * float(r @ r) / self._n[m]
            if need_grad:
                G[:, m] = -(x.T @ r) / self._n[m]
        lr = self.config.lambda_ridge
        if lr:
            value += 0.5 * lr * float(np.sum(self.row_sizes[:, None] * theta * theta))
        if not need_grad:
            return value, None
        grad = G[self.nb.members]
        if lr:
            grad += lr * self.row_sizes[:, None] * theta
        return value, grad

    def penalty(self, theta: np.ndarray) -> float:
        return penalty_value_stacked(self.config, theta, self.nb)

    def objective(self, theta: np.ndarray) -> float:
        return self.smooth_value(theta) + self.penalty(theta)

    def prox(self, theta: np.ndarray, t: float) -> np.ndarray:
        return prox_stacked(self.config, theta, t, self.nb)

    def step_cap(self) -> float:
        return self.config.max_step(float(self.tau.max()))


def smooth_value_grad(problem: FitProblem, latent):
    """Value and per-block gradient of the smooth part at ``latent``.

    ``latent`` may be stacked or a list of blocks; the gradient comes back in
    the same form.
    """
    if isinstance(latent, np.ndarray):
        return problem.smooth_value_grad(latent)
    value, grad = problem.smooth_value_grad(stack_blocks(latent))
    return value, split_blocks(grad, problem.nb)


@dataclass
class FitResult:
    latent: np.ndarray
    beta: np.ndarray
    objective_trace: list
    iterations: int
    converged: bool
    step_sizes: list
    coef: Optional[np.ndarray] = None
    intercept: Optional[np.ndarray] = None
    nb: Optional[NeighborhoodIndex] = field(default=None, repr=False)

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    def blocks(self) -> list:
        return split_blocks(self.latent, self.nb)

    def predict(self, X: Sequence[np.ndarray]) -> list:
        coef = self.beta if self.coef is None else self.coef
        icpt = np.zeros(coef.shape[1]) if self.intercept is None else self.intercept
        return [np.asarray(x) @ coef[:, m] + icpt[m] for m, x in enumerate(X)]


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 10000
    tol: float = 1e-8
    t0: float = 1.0
    accelerated: bool = True
    shrink: float = 0.5
    max_backtracks: int = 100
    # optional extra stopping requirement on the scaled prox-gradient residual
    grad_map_tol: Optional[float] = None

    def __post_init__(self):
        if self.max_iter < 1 or not self.tol > 0 or not self.t0 > 0 or not 0 < self.shrink < 1:
            raise ValueError(f"invalid solver options: {self}")
        if self.grad_map_tol is not None and not self.grad_map_tol > 0:
            raise ValueError(f"grad_map_tol must be positive, got {self.grad_map_tol}")


def grad_map_residual(problem: "FitProblem", theta: np.ndarray, grad: np.ndarray, t: float) -> float:
    """``||theta - prox_t(theta - t grad)||_F / max(1, ||theta||_F)``."""
    r = theta - problem.prox(theta - t * grad, t)
    return float(np.linalg.norm(r) / max(1.0, np.linalg.norm(theta)))


def _backtrack(problem, point, f_point, g_point, t, opts):
    """Shrink ``t`` until the quadratic upper bound holds at the prox point."""
    for _ in range(opts.max_backtracks):
        z = problem.prox(point - t * g_point, t)
        d = z - point
        f_z = problem.smooth_value(z)
        bound = f_point + float(np.sum(g_point * d)) + float(np.sum(d * d)) / (2 * t)
        if f_z <= bound + 1e-13 * max(1.0, abs(f_point)):
            return z, f_z, t
        t *= opts.shrink
    raise SolverError(f"backtracking failed to find a step after {opts.max_backtracks} reductions (t={t:g})")


def fista_fit(problem: FitProblem, init: Optional[np.ndarray] = None,
              options: Optional[SolverOptions] = None, **kwargs) -> FitResult:
    """Minimise ``L + P_R + P`` by monotone FISTA with backtracking.

    When the extrapolated step would raise the objective the iterate falls
    back to a plain proximal-gradient step from the current point and the
    momentum restarts; the objective trace is therefore non-increasing.
    ``accelerated=False`` runs plain proximal gradient (ISTA).
    """
    opts = options if options is not None else SolverOptions(**kwargs)
    if options is not None and kwargs:
        raise TypeError("pass either options or keyword overrides, not both")
    nb = problem.nb
    shape = problem.shape
    x = np.zeros(shape) if init is None else np.array(init, dtype=float, copy=True)
    if x.shape != shape:
        raise ValueError(f"initial latent has shape {x.shape}, expected {shape}")

    t = min(opts.t0, 0.99 * problem.step_cap())
    f_x, g_x = problem.smooth_value_grad(x)
    F_x = f_x + problem.penalty(x)
    if not math.isfinite(F_x):
        raise SolverError("objective is not finite at the initial point")
    trace, steps = [F_x], []
    y, f_y, g_y = x, f_x, g_x
    mom = 1.0
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        z, f_z, t = _backtrack(problem, y, f_y, g_y, t, opts)
        F_z = f_z + problem.penalty(z)
        if opts.accelerated and F_z > F_x:
            if y is not x:
                z, f_z, t = _backtrack(problem, x, f_x, g_x, t, opts)
                F_z = f_z + problem.penalty(z)
            mom = 1.0
            if F_z > F_x:
                # rounding-level increase: stay put
                z, f_z, F_z = x, f_x, F_x
        if not math.isfinite(F_z):
            raise SolverError(f"objective became non-finite at iteration {it} (t={t:g})")
        x_prev, x, F_prev = x, z, F_x
        F_x = F_z
        f_x, g_x = problem.smooth_value_grad(x)
        trace.append(F_x)
        steps.append(t)
        if abs(F_prev - F_x) <= opts.tol * max(abs(F_prev), 1e-12):
            if opts.grad_map_tol is None or grad_map_residual(problem, x, g_x, t) <= opts.grad_map_tol:
                converged = True
                break
        if opts.accelerated:
            mom_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * mom * mom))
            y = x + ((mom - 1.0) / mom_next) * (x - x_prev)
            mom = mom_next
            if mom == 1.0 or y is x:
                f_y, g_y = f_x, g_x
            else:
                f_y, g_y = problem.smooth_value_grad(y)
        else:
            y, f_y, g_y = x, f_x, g_x
    return FitResult(latent=x, beta=problem.beta(x), objective_trace=trace, iterations=it,
                     converged=converged, step_sizes=steps, nb=nb)


def lambda_max(study: MultiStudy, nb: NeighborhoodIndex, config: PenaltyConfig) -> float:
    """Smallest ``lambda`` for which zero is the fitted solution (convex case).

    For the nonconvex outer penalties this is the value at which zero becomes
    a fixed point of the proximal-gradient map.
    """
    G = np.column_stack([-(x.T @ y) / n for x, y, n in zip(study.X, study.y, study.n)])
    cols = np.sqrt(np.add.reduceat(np.square(G[nb.members]), nb.offsets[:-1], axis=0))
    tau = config.tau(nb.p)
    return float(np.max(zero_threshold(config, cols, tau)))


def fit(study: MultiStudy, nb: NeighborhoodIndex, config: PenaltyConfig, *,
        standardize: bool = True, init: Optional[np.ndarray] = None,
        options: Optional[SolverOptions] = None, scaler: Optional[Standardizer] = None) -> FitResult:
    """Standardise, fit and attach data-scale ``coef``/``intercept`` to the result."""
    scaler = scaler if scaler is not None else Standardizer.fit(study, standardize)
    problem = FitProblem(scaler.transform(study), nb, config)
    res = fista_fit(problem, init=init, options=options)
    res.coef, res.intercept = scaler.to_original(res.beta)
    return res
