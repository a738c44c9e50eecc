"""Synthetic multi-dataset studies with block-diagonal Gaussian precision matrices.

Every random draw comes from its own ``SeedSequence`` keyed by
``(replicate, dataset, purpose, index)`` so a replicate can be regenerated
in isolation and generation order never matters.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .graph import PredictorGraph, from_adjacency
from .solver import MultiStudy

_PRECISION, _BETA, _SAMPLE, _NOISE, _SUPPORT = 0, 1, 2, 3, 4
_MAX_REDRAWS = 100


class Scenario(str, enum.Enum):
    RING = "ring"
    HUB = "hub"
    RANDOM = "random"

    @classmethod
    def parse(cls, value) -> "Scenario":
        if isinstance(value, cls):
            return value
        aliases = {"1": cls.RING, "2": cls.HUB, "3": cls.RANDOM}
        key = str(value).strip().lower()
        return aliases.get(key) or cls(key)


def default_alpha(scenario: Scenario, p_B: int) -> np.ndarray:
    """``(1, 1/3, ..., 1/3)`` for ring and random blocks, ``(1, 1/4, ...)`` for hubs."""
    tail = 0.25 if Scenario.parse(scenario) is Scenario.HUB else 1.0 / 3.0
    alpha = np.full(p_B, tail)
    alpha[0] = 1.0
    return alpha


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: Scenario = Scenario.RING
    blocks: int = 10
    block_size: int = 10
    M: int = 5
    alpha: Optional[tuple] = None
    p_ht: float = 0.0
    sigma2: float = 1.0
    n: int = 200
    n_validate: int = 200
    n_test: int = 1000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario.parse(self.scenario))
        if self.alpha is None:
            object.__setattr__(self, "alpha", tuple(float(a) for a in default_alpha(self.scenario, self.block_size)))
        else:
            object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        if self.block_size < 2 or self.blocks < 1 or self.M < 1:
            raise ValueError("need block_size >= 2, blocks >= 1 and M >= 1")
        if len(self.alpha) != self.block_size or not np.all(np.isfinite(self.alpha)):
            raise ValueError(f"alpha must have {self.block_size} finite entries")
        if not 0.0 <= self.p_ht <= 1.0:
            raise ValueError(f"p_ht must lie in [0, 1], got {self.p_ht}")
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if min(self.n, self.n_validate, self.n_test) < 1:
            raise ValueError("sample sizes must be positive")
        # the coefficient support spans the first two blocks
        if self.blocks < 2:
            raise ValueError("need at least two blocks")

    @property
    def p(self) -> int:
        return self.blocks * self.block_size

    def with_(self, **changes) -> "ScenarioConfig":
        """Copy with ``changes``; a defaulted ``alpha`` follows a new scenario or block size."""
        if "alpha" not in changes and {"scenario", "block_size"} & set(changes):
            if self.alpha == tuple(default_alpha(self.scenario, self.block_size)):
                changes["alpha"] = None
        return replace(self, **changes)


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for one ``(seed, key...)`` coordinate."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key)))


def block_support(scenario, p_B: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Strictly lower-triangular boolean mask of the nonzero precision entries."""
    scenario = Scenario.parse(scenario)
    mask = np.zeros((p_B, p_B), dtype=bool)
    if scenario is Scenario.RING:
        mask[np.arange(1, p_B), np.arange(p_B - 1)] = True
        mask[p_B - 1, 0] = True
    elif scenario is Scenario.HUB:
        mask[1:, 0] = True
    else:
        below = np.tril(np.ones((p_B, p_B), dtype=bool), -1)
        mask = below & (rng.random((p_B, p_B)) < 3.0 / p_B)
    return mask


def gen_block_precision(scenario, p_B: int, rng: np.random.Generator,
                        support: Optional[np.ndarray] = None) -> np.ndarray:
    """One ``p_B x p_B`` precision block whose inverse has unit diagonal.

    ``support`` fixes the lower-triangular nonzero pattern (shared across
    datasets for the random scenario); otherwise it is drawn from ``rng``.
    """
    scenario = Scenario.parse(scenario)
    if p_B < 2:
        raise ValueError(f"block size must be at least 2, got {p_B}")
    for _ in range(_MAX_REDRAWS):
        mask = block_support(scenario, p_B, rng) if support is None else np.asarray(support, dtype=bool)
        omega = np.zeros((p_B, p_B))
        omega[mask] = rng.uniform(-1.5, -0.5, size=int(mask.sum()))
        omega = omega + omega.T
        np.fill_diagonal(omega, 0.5 - omega.sum(axis=1))
        try:
            cov = linalg.inv(omega)
            linalg.cholesky(omega, lower=True)
        except (linalg.LinAlgError, ValueError):
            continue
        dvec = np.sqrt(np.diag(cov))
        if not np.all(np.isfinite(dvec)) or np.any(dvec <= 0):
            continue
        omega = dvec[:, None] * omega * dvec[None, :]
        return 0.5 * (omega + omega.T)
    raise RuntimeError(f"no positive definite {scenario.value} block after {_MAX_REDRAWS} draws")


def gen_true_beta(cfg: ScenarioConfig, precisions: Sequence[Sequence[np.ndarray]],
                  rngs: Sequence[np.random.Generator]) -> np.ndarray:
    """``p x M`` true coefficients: ``Omega_b^T alpha`` on blocks 1 and 2.

    ``precisions[m][b]`` is block ``b`` of dataset ``m``; ``rngs[m]`` decides
    whether block 2 is switched off (probability ``p_ht``).
    """
    alpha = np.asarray(cfg.alpha)
    pB = cfg.block_size
    B = np.zeros((cfg.p, cfg.M))
    for m in range(cfg.M):
        B[:pB, m] = precisions[m][0].T @ alpha
        if not rngs[m].random() < cfg.p_ht:
            B[pB:2 * pB, m] = precisions[m][1].T @ alpha
    return B


@dataclass
class SyntheticStudy:
    config: ScenarioConfig
    precisions: list = field(repr=False)
    beta: np.ndarray = field(repr=False)
    train: MultiStudy = field(repr=False)
    validate: MultiStudy = field(repr=False)
    test: MultiStudy = field(repr=False)
    graph: PredictorGraph = field(repr=False)

    def precision(self, m: int) -> np.ndarray:
        return linalg.block_diag(*self.precisions[m])

    def covariance(self, m: int) -> np.ndarray:
        return linalg.block_diag(*[linalg.inv(o) for o in self.precisions[m]])


def _sample_rows(chols: Sequence[np.ndarray], n: int, rng: np.random.Generator) -> np.ndarray:
    """Rows ``x = L^{-T} z`` with ``L L^T = Omega``, so ``cov(x) = Omega^{-1}``."""
    cols = []
    for L in chols:
        z = rng.standard_normal((L.shape[0], n))
        cols.append(linalg.solve_triangular(L, z, lower=True, trans="T").T)
    return np.hstack(cols)


def sample_study(cfg: ScenarioConfig, replicate: int = 0) -> SyntheticStudy:
    """Draw precisions, coefficients and train/validate/test splits for a replicate."""
    seed = cfg.seed
    supports = [block_support(cfg.scenario, cfg.block_size, stream(seed, replicate, 0, _SUPPORT, b))
                for b in range(cfg.blocks)]
    precisions = [[gen_block_precision(cfg.scenario, cfg.block_size, stream(seed, replicate, m, _PRECISION, b),
                                       support=supports[b])
                   for b in range(cfg.blocks)] for m in range(cfg.M)]
    beta = gen_true_beta(cfg, precisions, [stream(seed, replicate, m, _BETA) for m in range(cfg.M)])
    sd = np.sqrt(cfg.sigma2)
    splits = {}
    for s, (name, n) in enumerate((("train", cfg.n), ("validate", cfg.n_validate), ("test", cfg.n_test))):
        Xs, ys = [], []
        for m in range(cfg.M):
            chols = [linalg.cholesky(o, lower=True) for o in precisions[m]]
            X = _sample_rows(chols, n, stream(seed, replicate, m, _SAMPLE, s))
            e = sd * stream(seed, replicate, m, _NOISE, s).standard_normal(n)
            Xs.append(X)
            ys.append(X @ beta[:, m] + e)
        splits[name] = MultiStudy(Xs, ys)
    support = np.zeros((cfg.p, cfg.p), dtype=bool)
    for m in range(cfg.M):
        support |= linalg.block_diag(*precisions[m]) != 0
    graph = from_adjacency(support)
    return SyntheticStudy(cfg, precisions, beta, splits["train"], splits["validate"], splits["test"], graph)
