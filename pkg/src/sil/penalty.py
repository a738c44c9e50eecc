"""Group penalties ``lambda * sum_j tau_j * rho1(rho2(Delta_j))`` and their proximal maps.

Two layers live here. The per-block functions (``prox_ls1``, ``solve_h``,
...) act on a single ``a_j x M`` latent block and are the reference
implementations. :func:`prox_stacked` and :func:`penalty_value_stacked`
apply the same maps to all groups at once on the stacked ``(sum a_j, M)``
layout described by :class:`~sil.graph.NeighborhoodIndex`; the solver only
uses these.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .graph import GroupWeights, NeighborhoodIndex

_DISC_CLAMP = 1e-12


class PenaltyError(ValueError):
    pass


class Outer(str, enum.Enum):
    LINEAR = "linear"
    MCP = "mcp"
    LOGSUM = "logsum"


class Inner(str, enum.Enum):
    FROBENIUS = "frobenius"
    L21 = "l21"
    MIXTURE = "mixture"


@dataclass(frozen=True)
class PenaltyConfig:
    """Resolved penalty: outer ``rho1``, inner ``rho2`` and tuning values.

    ``eta`` is required for the MCP and log-sum outer penalties, ``alpha``
    for the mixture inner penalty (linear outer only).
    """

    rho1: Outer = Outer.LINEAR
    rho2: Inner = Inner.FROBENIUS
    lam: float = 0.0
    eta: Optional[float] = None
    alpha: Optional[float] = None
    lambda_ridge: float = 0.0
    weights: Optional[GroupWeights] = None

    def __post_init__(self):
        object.__setattr__(self, "rho1", Outer(self.rho1))
        object.__setattr__(self, "rho2", Inner(self.rho2))
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise PenaltyError(f"lambda must be finite and >= 0, got {self.lam}")
        if not (np.isfinite(self.lambda_ridge) and self.lambda_ridge >= 0):
            raise PenaltyError(f"lambda_ridge must be finite and >= 0, got {self.lambda_ridge}")
        if self.rho1 is not Outer.LINEAR:
            if self.eta is None or not (np.isfinite(self.eta) and self.eta > 0):
                raise PenaltyError(f"{self.rho1.value} requires eta > 0, got {self.eta}")
        if self.rho2 is Inner.MIXTURE:
            if self.rho1 is not Outer.LINEAR:
                raise PenaltyError("the mixture inner penalty is only defined with the linear outer penalty")
            if self.alpha is None or not 0.0 <= self.alpha <= 1.0:
                raise PenaltyError(f"mixture requires alpha in [0, 1], got {self.alpha}")

    @property
    def convex(self) -> bool:
        return self.rho1 is Outer.LINEAR

    def with_weights(self, weights: GroupWeights) -> "PenaltyConfig":
        return replace(self, weights=weights)

    def tau(self, p: int) -> np.ndarray:
        if self.weights is None:
            raise PenaltyError("penalty weights have not been attached")
        tau = np.asarray(self.weights.tau, dtype=float)
        if tau.shape != (p,):
            raise PenaltyError(f"weights cover {tau.size} groups, expected {p}")
        return tau

    def max_step(self, tau_max: float) -> float:
        """Largest step for which the nonconvex proximal maps are well posed.

        Infinite for the convex penalties or when ``lambda == 0``.
        """
        if self.convex or self.lam == 0.0:
            return math.inf
        if self.rho1 is Outer.LOGSUM:
            return self.eta / (self.lam * tau_max)
        # lambda * rho_MCP has curvature -1/eta, independent of lambda
        return self.eta / tau_max


# ---------------------------------------------------------------------------
# scalar outer penalties


def rho_logsum(x, eta):
    return eta * np.log1p(np.asarray(x, dtype=float) / eta)


def rho_mcp(x, lam, eta):
    """``int_0^x (1 - u / (lam * eta))_+ du``."""
    x = np.asarray(x, dtype=float)
    knot = lam * eta
    return np.where(x <= knot, x - x * x / (2 * knot), 0.5 * knot)


def _outer(cfg: PenaltyConfig, x):
    if cfg.rho1 is Outer.LINEAR:
        return np.asarray(x, dtype=float)
    if cfg.rho1 is Outer.LOGSUM:
        return rho_logsum(x, cfg.eta)
    return rho_mcp(x, cfg.lam, cfg.eta)


# ---------------------------------------------------------------------------
# single-block values


def block_penalty(cfg: PenaltyConfig, delta: np.ndarray, tau: float) -> float:
    """``lambda * tau * rho1(rho2(delta))`` for one ``a_j x M`` block."""
    delta = np.atleast_2d(np.asarray(delta, dtype=float))
    fro = float(np.linalg.norm(delta))
    l21 = float(np.linalg.norm(delta, axis=0).sum())
    if cfg.rho2 is Inner.FROBENIUS:
        inner = fro
    elif cfg.rho2 is Inner.L21:
        inner = l21
    else:
        inner = cfg.alpha * fro + (1.0 - cfg.alpha) * l21
    return float(cfg.lam * tau * _outer(cfg, inner))


def penalty_value(cfg: PenaltyConfig, blocks: Sequence[np.ndarray]) -> float:
    """Nonsmooth penalty of a list of latent blocks.

    The ridge term belongs to the smooth part; see :func:`ridge_value`.
    """
    tau = cfg.tau(len(blocks))
    if len({np.atleast_2d(b).shape[1] for b in blocks}) > 1:
        raise PenaltyError("latent blocks disagree on the number of datasets")
    return float(sum(block_penalty(cfg, b, t) for b, t in zip(blocks, tau)))


def ridge_value(cfg: PenaltyConfig, blocks: Sequence[np.ndarray]) -> float:
    """``sum_j lambda_R * a_j / 2 * ||Delta_j||_F^2``."""
    return float(sum(0.5 * cfg.lambda_ridge * np.atleast_2d(b).shape[0] * np.sum(np.square(b)) for b in blocks))


# ---------------------------------------------------------------------------
# single-block proximal maps


def prox_group_frobenius(delta: np.ndarray, threshold: float) -> np.ndarray:
    """Block soft-threshold ``(1 - threshold / ||delta||_F)_+ * delta``."""
    delta = np.asarray(delta, dtype=float)
    if threshold < 0:
        raise PenaltyError(f"threshold must be >= 0, got {threshold}")
    nrm = np.linalg.norm(delta)
    if nrm <= threshold:
        return np.zeros_like(delta)
    return (1.0 - threshold / nrm) * delta


def _check_step(lam, t, tau, eta, bound, what):
    if t <= 0 or tau <= 0 or eta <= 0 or lam < 0:
        raise PenaltyError(f"{what}: t, tau, eta must be positive and lambda >= 0")
    if lam > 0 and t >= bound:
        raise PenaltyError(f"{what}: step t={t!r} violates the bound t < {bound!r}")


def _ls_h_single(x, thr, c):
    """Smaller root of ``-c h^2 + (1 + x c / thr) h - 1`` (log-sum, one norm)."""
    b = 1.0 + x * c / thr
    disc = b * b - 4.0 * c
    if disc < 0:
        if disc < -_DISC_CLAMP:
            raise ArithmeticError(f"negative discriminant {disc!r} inside the step bound")
        disc = 0.0
    return (b - math.sqrt(disc)) / (2.0 * c)


def prox_ls1(delta: np.ndarray, lam: float, t: float, tau: float, eta: float) -> np.ndarray:
    """Proximal map of ``lam * tau * eta * log(1 + ||W||_F / eta)``.

    Requires ``t < eta / (lam * tau)``; the 1-D problem in ``||W||_F`` is then
    strictly convex and its minimiser has a closed form.
    """
    delta = np.asarray(delta, dtype=float)
    _check_step(lam, t, tau, eta, eta / (lam * tau) if lam > 0 else math.inf, "prox_ls1")
    if lam == 0:
        return delta.copy()
    thr = lam * t * tau
    nrm = float(np.linalg.norm(delta))
    if nrm <= thr:
        return np.zeros_like(delta)
    h = _ls_h_single(nrm, thr, thr / eta)
    return max(0.0, 1.0 - thr * h / nrm) * delta


def solve_h(xis: Sequence[float], c: float) -> float:
    """Root ``h`` of ``h = 1 / (1 + c * sum_l (xi_l - h)_+)`` in ``(0, 1]``.

    Scans the intervals between consecutive sorted ``xi`` values below one
    and returns the first closed-form candidate that falls in its interval.
    """
    if not 0.0 < c < 1.0:
        raise PenaltyError(f"c must lie in (0, 1), got {c}")
    xi = np.sort(np.asarray(xis, dtype=float).reshape(-1))
    if np.any(xi < 0):
        raise PenaltyError("xi values must be nonnegative")
    M = xi.size
    if M == 0 or xi[-1] <= 1.0:
        return 1.0
    K = int(np.searchsorted(xi, 1.0, side="left"))  # xi[:K] < 1
    suffix = np.cumsum(xi[::-1])[::-1]
    lower = 0.0
    for k in range(1, K + 2):
        upper = xi[k - 1] if k <= K else 1.0
        n = M - k + 1
        b = 1.0 + c * suffix[k - 1]
        disc = b * b - 4.0 * c * n
        if disc < 0:
            if disc < -_DISC_CLAMP:
                lower = upper
                continue
            disc = 0.0
        h = (b - math.sqrt(disc)) / (2.0 * c * n)
        slack = 1e-12 * max(1.0, upper)
        if lower - slack <= h < upper + slack or k == K + 1:
            return float(min(max(h, lower), 1.0))
        lower = upper
    raise AssertionError("solve_h scan exhausted without a root")  # pragma: no cover


def ls2_fixed_points(xis: Sequence[float], c: float) -> np.ndarray:
    """Every root in ``(0, 1]`` of the fixed-point equation solved by :func:`solve_h`.

    With several datasets the block problem can be nonconvex even inside the
    step bound, and the equation may then have more than one root.
    """
    xi = np.sort(np.asarray(xis, dtype=float).reshape(-1))
    M = xi.size
    suffix = np.concatenate([np.cumsum(xi[::-1])[::-1], [0.0]])
    lowers = np.concatenate([[0.0], xi])
    uppers = np.concatenate([xi, [np.inf]])
    roots = []
    for k in range(M + 1):
        n = M - k
        lo, hi = lowers[k], min(uppers[k], 1.0)
        if lo > 1.0:
            break
        if n == 0:
            if lo <= 1.0:
                roots.append(1.0)
            continue
        b = 1.0 + c * suffix[k]
        disc = b * b - 4.0 * c * n
        if disc < -_DISC_CLAMP:
            continue
        sq = math.sqrt(max(disc, 0.0))
        for h in ((b - sq) / (2.0 * c * n), (b + sq) / (2.0 * c * n)):
            if lo <= h <= hi and h > 0.0:
                roots.append(h)
    return np.unique(np.array(roots))


def _ls2_objective(x, u, t, lam, tau, eta):
    return np.sum((u - x) ** 2, axis=-1) / (2 * t) + lam * tau * rho_logsum(np.sum(u, axis=-1), eta)


def prox_ls2(delta: np.ndarray, lam: float, t: float, tau: float, eta: float) -> np.ndarray:
    """Proximal map of ``lam * tau * eta * log(1 + sum_m ||w_m||_2 / eta)``.

    Each column is shrunk by the common amount ``lam * t * tau * h``. ``h`` is
    normally the :func:`solve_h` root; when the fixed-point equation has
    several roots the one with the smallest proximal objective is used.
    """
    delta = np.atleast_2d(np.asarray(delta, dtype=float))
    _check_step(lam, t, tau, eta, eta / (lam * tau) if lam > 0 else math.inf, "prox_ls2")
    if lam == 0:
        return delta.copy()
    thr = lam * t * tau
    cols = np.linalg.norm(delta, axis=0)
    xi = cols / thr
    hs = ls2_fixed_points(xi, thr / eta)
    if hs.size > 1:
        us = np.maximum(0.0, cols[None, :] - thr * hs[:, None])
        h = hs[int(np.argmin(_ls2_objective(cols, us, t, lam, tau, eta)))]
    else:
        h = solve_h(xi, thr / eta)
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(cols > 0, np.maximum(0.0, 1.0 - thr * h / cols), 0.0)
    return delta * factor


def _mcp_l21_objective(x, u, t, lam, tau, eta):
    return np.sum((u - x) ** 2, axis=-1) / (2 * t) + lam * tau * rho_mcp(np.sum(u, axis=-1), lam, eta)


def _mcp_l21_candidates(x: np.ndarray, thr: float, cp: float) -> np.ndarray:
    """All fixed points ``h = (1 - cp * sum_l (xi_l - h)_+)_+`` for one block.

    ``x`` holds the column norms, ``xi = x / thr``.
    """
    xi = np.sort(x / thr)
    M = xi.size
    suffix = np.concatenate([np.cumsum(xi[::-1])[::-1], [0.0]])
    cands = []
    if 1.0 - cp * suffix[0] <= 0.0:
        cands.append(0.0)
    lowers = np.concatenate([[0.0], xi])
    uppers = np.concatenate([xi, [np.inf]])
    for k in range(M + 1):
        n = M - k
        den = 1.0 - cp * n
        if den == 0.0:
            continue
        h = (1.0 - cp * suffix[k]) / den
        if 0.0 < h <= 1.0 and lowers[k] <= h <= uppers[k]:
            cands.append(h)
    return np.array(cands)


def prox_mcp(delta: np.ndarray, lam: float, t: float, tau: float, eta: float,
             inner: Inner = Inner.FROBENIUS) -> np.ndarray:
    """Proximal map of ``lam * tau * rho_MCP(rho2(W))`` (firm thresholding).

    Needs ``t * tau < eta`` so the scalar problem stays convex.
    """
    delta = np.atleast_2d(np.asarray(delta, dtype=float))
    inner = Inner(inner)
    if t <= 0 or tau <= 0 or eta <= 0 or lam < 0:
        raise PenaltyError("prox_mcp: t, tau, eta must be positive and lambda >= 0")
    if lam == 0:
        return delta.copy()
    if t * tau >= eta:
        raise PenaltyError(f"prox_mcp: t*tau = {t * tau!r} must be below eta = {eta!r}")
    thr = lam * t * tau
    knot = lam * eta
    if inner is Inner.FROBENIUS:
        nrm = float(np.linalg.norm(delta))
        if nrm >= knot:
            return delta.copy()
        if nrm <= thr:
            return np.zeros_like(delta)
        return (nrm - thr) / (1.0 - t * tau / eta) / nrm * delta
    if inner is not Inner.L21:
        raise PenaltyError(f"prox_mcp supports frobenius or l21 inner penalties, got {inner.value}")
    cols = np.linalg.norm(delta, axis=0)
    hs = _mcp_l21_candidates(cols, thr, t * tau / eta)
    us = np.maximum(0.0, cols[None, :] - thr * hs[:, None])
    best = hs[int(np.argmin(_mcp_l21_objective(cols, us, t, lam, tau, eta)))]
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(cols > 0, np.maximum(0.0, 1.0 - thr * best / cols), 0.0)
    return delta * factor


def prox_mixture(delta: np.ndarray, lam: float, t: float, tau: float, alpha: float) -> np.ndarray:
    """Proximal map of ``lam * tau * (alpha ||W||_F + (1 - alpha) sum_m ||w_m||_2)``."""
    if not 0.0 <= alpha <= 1.0:
        raise PenaltyError(f"alpha must lie in [0, 1], got {alpha}")
    delta = np.atleast_2d(np.asarray(delta, dtype=float))
    thr = lam * t * tau
    cols = np.linalg.norm(delta, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(cols > (1 - alpha) * thr, 1.0 - (1 - alpha) * thr / cols, 0.0)
    return prox_group_frobenius(delta * factor, alpha * thr)


def prox_block(cfg: PenaltyConfig, delta: np.ndarray, t: float, tau: float) -> np.ndarray:
    """Dispatch to the per-block proximal map matching ``cfg``."""
    delta = np.atleast_2d(np.asarray(delta, dtype=float))
    lam = cfg.lam
    if cfg.rho1 is Outer.LINEAR:
        if cfg.rho2 is Inner.FROBENIUS:
            return prox_group_frobenius(delta, lam * t * tau)
        alpha = 0.0 if cfg.rho2 is Inner.L21 else cfg.alpha
        return prox_mixture(delta, lam, t, tau, alpha)
    if lam == 0:
        return delta.copy()
    if cfg.rho1 is Outer.LOGSUM:
        if cfg.rho2 is Inner.FROBENIUS:
            return prox_ls1(delta, lam, t, tau, cfg.eta)
        return prox_ls2(delta, lam, t, tau, cfg.eta)
    return prox_mcp(delta, lam, t, tau, cfg.eta, cfg.rho2)


# ---------------------------------------------------------------------------
# stacked (all groups at once)


def group_frobenius_norms(theta: np.ndarray, nb: NeighborhoodIndex) -> np.ndarray:
    return np.sqrt(np.add.reduceat(np.square(theta).sum(axis=1), nb.offsets[:-1]))


def group_column_norms(theta: np.ndarray, nb: NeighborhoodIndex) -> np.ndarray:
    """``(p, M)`` array of ``||delta_j^m||_2``."""
    return np.sqrt(np.add.reduceat(np.square(theta), nb.offsets[:-1], axis=0))


def split_blocks(theta: np.ndarray, nb: NeighborhoodIndex) -> list[np.ndarray]:
    return [theta[nb.offsets[j]:nb.offsets[j + 1]] for j in range(nb.p)]


def stack_blocks(blocks: Sequence[np.ndarray]) -> np.ndarray:
    return np.vstack([np.atleast_2d(b) for b in blocks])


def inner_values(cfg: PenaltyConfig, theta: np.ndarray, nb: NeighborhoodIndex) -> np.ndarray:
    if cfg.rho2 is Inner.FROBENIUS:
        return group_frobenius_norms(theta, nb)
    l21 = group_column_norms(theta, nb).sum(axis=1)
    if cfg.rho2 is Inner.L21:
        return l21
    return cfg.alpha * group_frobenius_norms(theta, nb) + (1 - cfg.alpha) * l21


def penalty_value_stacked(cfg: PenaltyConfig, theta: np.ndarray, nb: NeighborhoodIndex) -> float:
    if cfg.lam == 0.0:
        return 0.0
    tau = cfg.tau(nb.p)
    return float(cfg.lam * np.dot(tau, _outer(cfg, inner_values(cfg, theta, nb))))


def solve_h_batch(xi: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Vectorised :func:`solve_h` over the rows of ``xi`` (shape ``(p, M)``)."""
    xi = np.sort(np.asarray(xi, dtype=float), axis=1)
    c = np.broadcast_to(np.asarray(c, dtype=float), (xi.shape[0],))
    p, M = xi.shape
    suffix = np.cumsum(xi[:, ::-1], axis=1)[:, ::-1]       # S_k for k = 1..M
    n = M - np.arange(M)                                   # M - k + 1
    lower = np.concatenate([np.zeros((p, 1)), xi[:, :-1]], axis=1)
    upper = np.minimum(xi, 1.0)
    cc = c[:, None]
    b = 1.0 + cc * suffix
    disc = b * b - 4.0 * cc * n
    disc = np.where((disc < 0) & (disc >= -_DISC_CLAMP), 0.0, disc)
    with np.errstate(invalid="ignore"):
        h = (b - np.sqrt(disc)) / (2.0 * cc * n)
    slack = 1e-12 * np.maximum(1.0, upper)
    below_one = lower < 1.0
    valid = (h >= lower - slack) & (h < upper + slack) & below_one & np.isfinite(h)
    # the piece whose interval reaches 1 always holds the root
    last = np.sum(below_one, axis=1) - 1
    pick = np.where(valid.any(axis=1), np.argmax(valid, axis=1), np.maximum(last, 0))
    out = h[np.arange(p), pick]
    out = np.clip(out, lower[np.arange(p), pick], 1.0)
    return np.where(xi[:, -1] <= 1.0, 1.0, out)


def _ls2_h_batch(cols, thr, t, lam, tau, eta):
    """Globally best log-sum ``h`` per group among all fixed points."""
    p, M = cols.shape
    c = (thr / eta)[:, None]
    xi = np.sort(cols / thr[:, None], axis=1)
    suffix = np.concatenate([np.cumsum(xi[:, ::-1], axis=1)[:, ::-1], np.zeros((p, 1))], axis=1)
    n = (M - np.arange(M + 1)).astype(float)
    lowers = np.concatenate([np.zeros((p, 1)), xi], axis=1)
    uppers = np.minimum(np.concatenate([xi, np.full((p, 1), np.inf)], axis=1), 1.0)
    b = 1.0 + c * suffix
    disc = b * b - 4.0 * c * n
    real = disc >= -_DISC_CLAMP
    sq = np.sqrt(np.maximum(disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = np.where(n > 0, (b - sq) / (2.0 * c * n), 1.0)
        r2 = np.where(n > 0, (b + sq) / (2.0 * c * n), 1.0)
    hs = np.concatenate([r1, r2], axis=1)
    lo = np.concatenate([lowers, lowers], axis=1)
    hi = np.concatenate([uppers, uppers], axis=1)
    ok = np.concatenate([real, real], axis=1) & (hs >= lo) & (hs <= hi) & (hs > 0) & (lo <= 1.0)
    hs = np.where(ok, hs, 1.0)
    us = np.maximum(0.0, cols[:, None, :] - thr[:, None, None] * hs[:, :, None])
    obj = (np.sum((us - cols[:, None, :]) ** 2, axis=2) / (2 * t)
           + lam * tau[:, None] * rho_logsum(us.sum(axis=2), eta))
    obj = np.where(ok, obj, np.inf)
    h = hs[np.arange(p), np.argmin(obj, axis=1)]
    return np.where(np.isfinite(obj).any(axis=1), h, solve_h_batch(cols / thr[:, None], thr / eta))


def _mcp_l21_h_batch(cols, thr, cp, t, lam, tau, eta):
    p, M = cols.shape
    xi = np.sort(cols / thr[:, None], axis=1)
    suffix = np.concatenate([np.cumsum(xi[:, ::-1], axis=1)[:, ::-1], np.zeros((p, 1))], axis=1)
    n = M - np.arange(M + 1)
    den = 1.0 - cp[:, None] * n
    with np.errstate(divide="ignore", invalid="ignore"):
        h = (1.0 - cp[:, None] * suffix) / den
    lowers = np.concatenate([np.zeros((p, 1)), xi], axis=1)
    uppers = np.concatenate([xi, np.full((p, 1), np.inf)], axis=1)
    ok = (den != 0) & (h > 0) & (h <= 1) & (h >= lowers) & (h <= uppers)
    zero_ok = (1.0 - cp * suffix[:, 0]) <= 0.0
    hs = np.concatenate([np.zeros((p, 1)), np.where(ok, h, 0.0)], axis=1)
    ok = np.concatenate([zero_ok[:, None], ok], axis=1)
    us = np.maximum(0.0, cols[:, None, :] - thr[:, None, None] * hs[:, :, None])
    obj = (np.sum((us - cols[:, None, :]) ** 2, axis=2) / (2 * t)
           + lam * tau[:, None] * rho_mcp(us.sum(axis=2), lam, eta))
    obj = np.where(ok, obj, np.inf)
    return hs[np.arange(p), np.argmin(obj, axis=1)]


def prox_stacked(cfg: PenaltyConfig, theta: np.ndarray, t: float, nb: NeighborhoodIndex) -> np.ndarray:
    """Proximal map of the full penalty at step ``t`` on stacked latent blocks."""
    if cfg.lam == 0.0:
        return theta.copy()
    tau = cfg.tau(nb.p)
    if t >= cfg.max_step(float(tau.max())):
        raise PenaltyError(f"step t={t!r} violates the bound t < {cfg.max_step(float(tau.max()))!r}")
    thr = cfg.lam * t * tau
    rows = nb.group_of_row
    rho1, rho2 = cfg.rho1, cfg.rho2

    if rho2 is Inner.FROBENIUS:
        nrm = group_frobenius_norms(theta, nb)
        safe = np.where(nrm > 0, nrm, 1.0)
        if rho1 is Outer.LINEAR:
            factor = np.maximum(0.0, 1.0 - thr / safe)
        elif rho1 is Outer.LOGSUM:
            c = thr / cfg.eta
            b = 1.0 + nrm / cfg.eta
            disc = b * b - 4.0 * c
            active = nrm > thr
            if np.any(active & (disc < -_DISC_CLAMP)):
                raise ArithmeticError("negative discriminant inside the step bound")
            h = (b - np.sqrt(np.maximum(disc, 0.0))) / (2.0 * c)
            factor = np.where(active, np.maximum(0.0, 1.0 - thr * h / safe), 0.0)
        else:
            knot = cfg.lam * cfg.eta
            firm = (safe - thr) / (1.0 - t * tau / cfg.eta) / safe
            factor = np.where(nrm >= knot, 1.0, np.where(nrm <= thr, 0.0, firm))
        factor = np.where(nrm > 0, factor, 0.0)
        return theta * factor[rows, None]

    cols = group_column_norms(theta, nb)
    safe = np.where(cols > 0, cols, 1.0)
    if rho1 is Outer.LINEAR:
        alpha = 0.0 if rho2 is Inner.L21 else cfg.alpha
        cfac = np.where(cols > (1 - alpha) * thr[:, None], 1.0 - (1 - alpha) * thr[:, None] / safe, 0.0)
        if alpha == 0.0:
            return theta * cfac[rows]
        out = theta * cfac[rows]
        nrm = group_frobenius_norms(out, nb)
        safe_f = np.where(nrm > 0, nrm, 1.0)
        bfac = np.where(nrm > alpha * thr, 1.0 - alpha * thr / safe_f, 0.0)
        return out * bfac[rows, None]
    if rho1 is Outer.LOGSUM:
        h = _ls2_h_batch(cols, thr, t, cfg.lam, tau, cfg.eta)
    else:
        h = _mcp_l21_h_batch(cols, thr, t * tau / cfg.eta, t, cfg.lam, tau, cfg.eta)
    cfac = np.where(cols > 0, np.maximum(0.0, 1.0 - (thr * h)[:, None] / safe), 0.0)
    return theta * cfac[rows]


def zero_threshold(cfg: PenaltyConfig, grad_cols: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Per-group smallest ``lambda`` at which the prox of ``-t*grad`` vanishes.

    ``grad_cols`` is the ``(p, M)`` array of column norms of the smooth
    gradient at zero. The nonconvex outer penalties have unit slope at the
    origin, so their thresholds equal the linear ones for the same inner norm.
    """
    fro = np.sqrt(np.sum(grad_cols ** 2, axis=1))
    if cfg.rho2 is Inner.FROBENIUS:
        return fro / tau
    if cfg.rho2 is Inner.L21 or cfg.alpha == 0.0:
        return grad_cols.max(axis=1) / tau
    alpha = cfg.alpha
    lo = np.zeros_like(fro)
    hi = fro / tau / max(alpha, 1e-300)
    hi = np.minimum(hi, grad_cols.max(axis=1) / tau / max(1 - alpha, 1e-300))
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        shrunk = np.maximum(grad_cols - (1 - alpha) * (mid * tau)[:, None], 0.0)
        zero = np.sqrt(np.sum(shrunk ** 2, axis=1)) <= alpha * mid * tau
        hi = np.where(zero, mid, hi)
        lo = np.where(zero, lo, mid)
    return hi
