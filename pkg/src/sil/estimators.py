"""Named model presets, adaptive weights and validation-set grid tuning.

Every method, including the baselines, is a configuration of the same
latent-group solver; the baselines simply use the edgeless graph.
"""

from __future__ import annotations

import enum
import itertools
import re
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .graph import PredictorGraph, empty_graph, group_weights, neighborhoods
from .penalty import Inner, Outer, PenaltyConfig
from .solver import FitResult, MultiStudy, SolverOptions, Standardizer, fit, lambda_max


class Integration(str, enum.Enum):
    FHT = "FHT"   # each dataset fitted and tuned on its own
    FHM = "FHM"   # one coefficient vector on the 1/n_m-weighted merged data
    IHM = "IHM"
    IHT = "IHT"


AXES = ("lam", "eta", "lambda_ridge", "alpha")


@dataclass(frozen=True)
class ModelSpec:
    name: str
    integration: Integration
    rho1: Outer
    rho2: Inner
    uses_graph: bool
    tuned: tuple
    fixed: Mapping = field(default_factory=dict)
    adaptive: bool = False

    def penalty(self, params: Mapping[str, float], weights=None) -> PenaltyConfig:
        vals = {**self.fixed, **params}
        return PenaltyConfig(rho1=self.rho1, rho2=self.rho2, lam=float(vals.get("lam", 0.0)),
                             eta=vals.get("eta"), alpha=vals.get("alpha"),
                             lambda_ridge=float(vals.get("lambda_ridge", 0.0)), weights=weights)

    @property
    def convex_separable(self) -> bool:
        return self.rho1 is Outer.LINEAR and self.rho2 is Inner.FROBENIUS

    def working_graph(self, graph: Optional[PredictorGraph], p: int) -> PredictorGraph:
        if not self.uses_graph:
            return empty_graph(p)
        if graph is None:
            raise ValueError(f"{self.name} needs a predictor graph")
        return graph


def _spec(name, integ, rho1, rho2, graph, tuned, **fixed):
    return ModelSpec(name, Integration(integ), Outer(rho1), Inner(rho2), graph, tuple(tuned), dict(fixed))


_PRESETS = {s.name: s for s in [
    _spec("SIL-Lasso-IHM", "IHM", "linear", "mixture", True, ("lam", "lambda_ridge"), alpha=1.0),
    _spec("SIL-Lasso-IHT", "IHT", "linear", "mixture", True, ("lam", "lambda_ridge", "alpha")),
    _spec("SIL-MCP-IHM", "IHM", "mcp", "frobenius", True, ("lam", "eta", "lambda_ridge")),
    _spec("SIL-MCP-IHT", "IHT", "mcp", "l21", True, ("lam", "eta", "lambda_ridge")),
    _spec("SIL-LS-IHM", "IHM", "logsum", "frobenius", True, ("lam", "eta", "lambda_ridge")),
    _spec("SIL-LS-IHT", "IHT", "logsum", "l21", True, ("lam", "eta", "lambda_ridge")),
    _spec("Lasso", "FHT", "linear", "frobenius", False, ("lam",)),
    _spec("Enet", "FHT", "linear", "frobenius", False, ("lam", "lambda_ridge")),
    _spec("SRIG", "FHT", "linear", "frobenius", True, ("lam", "lambda_ridge")),
    _spec("FHM-Lasso", "FHM", "linear", "frobenius", False, ("lam",)),
    _spec("FHM-Enet", "FHM", "linear", "frobenius", False, ("lam", "lambda_ridge")),
    _spec("FHM-SRIG", "FHM", "linear", "frobenius", True, ("lam", "lambda_ridge")),
    _spec("gLasso", "IHM", "linear", "frobenius", False, ("lam",)),
    _spec("L2-gMCP", "IHM", "mcp", "frobenius", False, ("lam", "eta")),
    _spec("sgLasso", "IHT", "linear", "mixture", False, ("lam", "alpha")),
    _spec("L1-gMCP", "IHT", "mcp", "l21", False, ("lam", "eta")),
]}


def _key(name: str) -> str:
    return re.sub(r"[\s_\-]+", "-", name.strip()).lower()


_LOOKUP = {_key(k): k for k in _PRESETS}


def preset_names() -> list[str]:
    return list(_PRESETS)


ADAPTIVE_MODES = (False, True, "graph")


def make_preset(name: str, adaptive=False) -> ModelSpec:
    """Look up a preset by name; spaces, underscores and case are ignored.

    ``adaptive`` is ``False`` (``d_j = 1``), ``True`` (adaptive ``d_j``) or
    ``"graph"``, which makes only the graph-using presets adaptive and keeps
    the classical baselines unweighted.
    """
    try:
        spec = _PRESETS[_LOOKUP[_key(name)]]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {', '.join(_PRESETS)}") from None
    if adaptive not in ADAPTIVE_MODES:
        raise ValueError(f"adaptive must be one of {ADAPTIVE_MODES}, got {adaptive!r}")
    if adaptive == "graph":
        adaptive = spec.uses_graph
    if adaptive:
        spec = ModelSpec(spec.name, spec.integration, spec.rho1, spec.rho2, spec.uses_graph,
                         spec.tuned, spec.fixed, adaptive=True)
    return spec


def adaptive_weights(study: MultiStudy) -> np.ndarray:
    """``d_j = 1 / (M^-1 |sum_m x_j^mT y^m / n_m|)`` on the given (standardised) data.

    The centred response stands in for the unobservable error; entries are
    clamped to ``[1e-6, 1e6]`` times the median.
    """
    score = np.zeros(study.p)
    for x, y, n in zip(study.X, study.y, study.n):
        score += x.T @ (y - y.mean()) / n
    score = np.abs(score) / study.M
    with np.errstate(divide="ignore"):
        d = np.where(score > 0, 1.0 / score, np.inf)
    finite = d[np.isfinite(d)]
    med = float(np.median(finite)) if finite.size else 1.0
    return np.clip(d, 1e-6 * med, 1e6 * med)


@dataclass(frozen=True)
class TuningGrid:
    """Candidate values per tuned axis; ``lam`` is traversed in descending order."""

    axes: Mapping[str, tuple]

    def __post_init__(self):
        axes = {}
        for k, v in self.axes.items():
            if k not in AXES:
                raise ValueError(f"unknown tuning axis {k!r}")
            vals = tuple(float(x) for x in v)
            if not vals:
                raise ValueError(f"tuning axis {k!r} is empty")
            if k == "eta" and min(vals) <= 0:
                raise ValueError("eta candidates must be positive")
            if min(vals) < 0:
                raise ValueError(f"tuning axis {k!r} has negative values")
            if k == "alpha" and max(vals) > 1:
                raise ValueError("alpha candidates must lie in [0, 1]")
            axes[k] = vals
        if "lam" in axes:
            axes["lam"] = tuple(sorted(set(axes["lam"]), reverse=True))
        object.__setattr__(self, "axes", axes)

    @property
    def size(self) -> int:
        return int(np.prod([len(v) for v in self.axes.values()])) if self.axes else 1

    def paths(self):
        """Yield ``(outer_params, lam_values)``: one warm-started path per combination."""
        outer = [k for k in AXES if k in self.axes and k != "lam"]
        lams = self.axes.get("lam", (0.0,))
        for combo in itertools.product(*(self.axes[k] for k in outer)):
            yield dict(zip(outer, combo)), lams


def default_grid(spec: ModelSpec, study: MultiStudy, graph: Optional[PredictorGraph] = None, *,
                 n_lambda: int = 25, n_eta: int = 10,
                 ridge: Sequence[float] = (0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0),
                 alphas: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 1.0),
                 lambda_ratio: float = 1e-3, eta_range=(1e-2, 1e1),
                 standardize: bool = True) -> TuningGrid:
    """Grid over the model's tuned axes: ``lam`` log-spaced below ``lambda_max``."""
    scaler = Standardizer.fit(study, standardize)
    std = scaler.transform(study)
    nb = neighborhoods(spec.working_graph(graph, study.p))
    d = adaptive_weights(std) if spec.adaptive else None
    # Frobenius lambda_max bounds those of every other inner norm
    probe = PenaltyConfig(Outer.LINEAR, Inner.FROBENIUS, lam=1.0, weights=group_weights(nb, d))
    lmax = lambda_max(std, nb, probe)
    axes = {}
    if "lam" in spec.tuned:
        axes["lam"] = tuple(np.geomspace(lmax, lmax * lambda_ratio, n_lambda)) if n_lambda > 1 else (lmax,)
    if "eta" in spec.tuned:
        scale = float(np.mean([np.mean(np.abs(v)) for v in std.y]))
        axes["eta"] = tuple(np.geomspace(eta_range[0] * scale, eta_range[1] * scale, n_eta))
    if "lambda_ridge" in spec.tuned:
        axes["lambda_ridge"] = tuple(ridge)
    if "alpha" in spec.tuned:
        axes["alpha"] = tuple(alphas)
    return TuningGrid(axes)


def mean_prediction_error(coef: np.ndarray, intercept: np.ndarray, study: MultiStudy) -> float:
    """Mean over datasets of ``||y^m - X^m b^m - c^m||^2 / n^m``."""
    errs = [float(np.mean((y - x @ coef[:, m] - intercept[m]) ** 2))
            for m, (x, y) in enumerate(zip(study.X, study.y))]
    return float(np.mean(errs))


def _merge_weighted(study: MultiStudy, scaler: Standardizer) -> MultiStudy:
    std = scaler.transform(study)
    N = study.N
    X = np.vstack([np.sqrt(N / n) * x for x, n in zip(std.X, study.n)])
    y = np.concatenate([np.sqrt(N / n) * v for v, n in zip(std.y, study.n)])
    return MultiStudy([X], [y])


@dataclass
class TunedModel:
    """Outcome of tuning one spec: data-scale coefficients plus the search table."""

    spec: ModelSpec
    coef: np.ndarray
    intercept: np.ndarray
    params: list
    table: list
    fits: list = field(repr=False, default_factory=list)

    @property
    def best_params(self) -> dict:
        return self.params[0] if len(self.params) == 1 else {"per_dataset": self.params}

    def predict(self, X: Sequence[np.ndarray]) -> list:
        return [np.asarray(x) @ self.coef[:, m] + self.intercept[m] for m, x in enumerate(X)]


def _search(spec, train, validate, graph, grid, options, standardize, merged=False):
    """Fit every grid point on ``train``; rank by validation error."""
    nb = neighborhoods(spec.working_graph(graph, train.p))
    scaler = Standardizer.fit(train, standardize)
    d = adaptive_weights(scaler.transform(train)) if spec.adaptive else None
    weights = group_weights(nb, d)
    if merged:
        fit_study = _merge_weighted(train, scaler)
        fit_scaler = Standardizer.fit(fit_study, enabled=False)
    else:
        fit_study, fit_scaler = train, scaler
    rows, fits = [], []
    for outer, lams in grid.paths():
        warm = None
        for lam in lams:
            params = {**outer, "lam": lam} if "lam" in grid.axes else dict(outer)
            cfg = spec.penalty(params, weights)
            res = fit(fit_study, nb, cfg, init=warm, options=options, scaler=fit_scaler)
            warm = res.latent
            if merged:
                coef, icpt = scaler.to_original(np.repeat(res.beta, train.M, axis=1))
            else:
                coef, icpt = res.coef, res.intercept
            err = mean_prediction_error(coef, icpt, validate)
            rows.append({**{k: params.get(k) for k in AXES if k in grid.axes},
                         "validation_mse": err, "nonzeros": int(np.count_nonzero(coef)),
                         "iterations": res.iterations, "converged": res.converged})
            fits.append((coef, icpt, res))
    best = min(range(len(rows)), key=lambda i: (rows[i]["validation_mse"], rows[i]["nonzeros"],
                                                -(rows[i].get("lam") or 0.0), i))
    return best, rows, fits


def grid_search(spec: ModelSpec, train: MultiStudy, validate: MultiStudy,
                graph: Optional[PredictorGraph] = None, grid=None, *,
                options: Optional[SolverOptions] = None, standardize: bool = True,
                grid_kwargs: Optional[Mapping] = None) -> TunedModel:
    """Tune ``spec`` on ``train`` by validation MSE on ``validate``.

    ``grid`` is a :class:`TuningGrid`, or ``None`` for :func:`default_grid`
    built from ``grid_kwargs``. FHT specs are tuned dataset by dataset, each
    with its own default grid when ``grid`` is ``None``. Ties go to the
    sparser fit, then to the larger ``lam``.
    """
    if train.p != validate.p or train.M != validate.M:
        raise ValueError(f"train has (M={train.M}, p={train.p}), validate has (M={validate.M}, p={validate.p})")
    grid_kwargs = dict(grid_kwargs or {})
    if spec.integration is Integration.FHT:
        coef = np.zeros((train.p, train.M))
        icpt = np.zeros(train.M)
        params, table, fits = [], [], []
        for m in range(train.M):
            tr, va = train.subset([m]), validate.subset([m])
            g = grid if grid is not None else default_grid(spec, tr, graph, standardize=standardize, **grid_kwargs)
            best, rows, fs = _search(spec, tr, va, graph, g, options, standardize)
            coef[:, m] = fs[best][0][:, 0]
            icpt[m] = fs[best][1][0]
            params.append({k: v for k, v in rows[best].items() if k in AXES})
            table.extend({"dataset": m + 1, **r} for r in rows)
            fits.append(fs[best][2])
        return TunedModel(spec, coef, icpt, params, table, fits)
    merged = spec.integration is Integration.FHM
    if grid is None:
        probe = _merge_weighted(train, Standardizer.fit(train, standardize)) if merged else train
        grid = default_grid(spec, probe, graph, standardize=standardize and not merged, **grid_kwargs)
    best, rows, fs = _search(spec, train, validate, graph, grid, options, standardize, merged=merged)
    coef, icpt, res = fs[best]
    return TunedModel(spec, coef, icpt, [{k: v for k, v in rows[best].items() if k in AXES}], rows, [res])


def fit_spec(spec: ModelSpec, study: MultiStudy, params: Mapping[str, float],
             graph: Optional[PredictorGraph] = None, *, options: Optional[SolverOptions] = None,
             standardize: bool = True) -> FitResult:
    """Single fit of a spec at fixed tuning values (FHT/FHM handled as joint fits)."""
    nb = neighborhoods(spec.working_graph(graph, study.p))
    scaler = Standardizer.fit(study, standardize)
    d = adaptive_weights(scaler.transform(study)) if spec.adaptive else None
    cfg = spec.penalty(params, group_weights(nb, d))
    if spec.integration is Integration.FHM:
        merged = _merge_weighted(study, scaler)
        res = fit(merged, nb, cfg, options=options, standardize=False)
        res.coef, res.intercept = scaler.to_original(np.repeat(res.beta, study.M, axis=1))
        return res
    if spec.integration is Integration.FHT:
        if not spec.convex_separable:
            raise ValueError(f"{spec.name}: FHT fits need the linear outer penalty")
        # linear outer + column norms is separable over datasets: one joint fit
        # equals M independent ones
        cfg = PenaltyConfig(Outer.LINEAR, Inner.L21, cfg.lam, lambda_ridge=cfg.lambda_ridge, weights=cfg.weights)
    return fit(study, nb, cfg, options=options, standardize=standardize, scaler=scaler)
