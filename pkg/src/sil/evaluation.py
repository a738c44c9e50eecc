"""Replicated simulation experiments: metrics, aggregation and report tables.

A run is a grid of independent ``(replicate, method)`` jobs. Each job
regenerates its replicate from the seed, so results do not depend on which
worker ran it or in what order; the report is assembled by job index.
"""

from __future__ import annotations

import csv
import io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .estimators import ModelSpec, grid_search, make_preset, mean_prediction_error
from .graph import remove_edges_random
from .simgen import ScenarioConfig, sample_study, stream
from .solver import MultiStudy, SolverOptions

METRICS = ("mse", "l2", "fpr", "fnr", "sign")
TABLE_METRICS = ("mse", "l2", "fpr", "fnr")
UNDEFINED = None
NA = "NA"
_EDGE_DROP_TAG = 1000


class CoefMetrics(NamedTuple):
    l2: float
    fpr: Optional[float]
    fnr: Optional[float]


def test_mse(fit, test: MultiStudy) -> float:
    """Mean over datasets of the test residual mean square.

    ``fit`` is anything with data-scale ``coef`` (p x M) and ``intercept`` (M).
    """
    coef = np.asarray(fit.coef)
    if coef.shape != (test.p, test.M):
        raise ValueError(f"coefficients are {coef.shape}, test data needs ({test.p}, {test.M})")
    return mean_prediction_error(coef, np.asarray(fit.intercept), test)


test_mse.__test__ = False  # not a pytest test despite the name


def coef_metrics(B_hat, B_true) -> CoefMetrics:
    """L2 distance averaged over datasets, plus FPR and FNR pooled over all entries.

    A rate whose denominator is empty is reported as ``None``.
    """
    B_hat = np.asarray(B_hat, dtype=float)
    B_true = np.asarray(B_true, dtype=float)
    if B_hat.shape != B_true.shape or B_hat.ndim != 2:
        raise ValueError(f"shape mismatch: estimate {B_hat.shape}, truth {B_true.shape}")
    l2 = float(np.mean(np.linalg.norm(B_hat - B_true, axis=0)))
    est = B_hat != 0
    true = B_true != 0
    n_zero, n_nonzero = int((~true).sum()), int(true.sum())
    fpr = float((est & ~true).sum() / n_zero) if n_zero else UNDEFINED
    fnr = float((~est & true).sum() / n_nonzero) if n_nonzero else UNDEFINED
    return CoefMetrics(l2, fpr, fnr)


def sign_recovered(B_hat, B_true) -> bool:
    """True when every entry has the correct sign (zeros included)."""
    return bool(np.array_equal(np.sign(B_hat), np.sign(B_true)))


@dataclass
class Record:
    """Outcome of one ``(replicate, method)`` cell."""

    replicate: int
    method: str
    scenario: str
    mse: Optional[float] = None
    l2: Optional[float] = None
    fpr: Optional[float] = None
    fnr: Optional[float] = None
    sign: Optional[float] = None
    params: str = ""
    error: Optional[str] = None
    seconds: float = field(default=0.0, compare=False)

    @property
    def ok(self) -> bool:
        return self.error is None


def _mean_se(values: Sequence[float]):
    vals = [v for v in values if v is not None]
    if not vals:
        return UNDEFINED, UNDEFINED
    arr = np.asarray(vals, dtype=float)
    mean = float(arr.mean())
    se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else UNDEFINED
    return mean, se


@dataclass
class MetricsReport:
    """Per-replicate records plus their mean / standard-error summary."""

    records: list
    replicates: int
    methods: list
    scenarios: list

    def cell(self, method: str, scenario: Optional[str] = None) -> list:
        scenario = scenario or self.scenarios[0]
        return [r for r in self.records if r.method == method and r.scenario == scenario]

    def values(self, method: str, metric: str, scenario: Optional[str] = None) -> np.ndarray:
        """Metric per successful replicate, ordered by replicate (undefined entries as nan)."""
        return np.array([np.nan if getattr(r, metric) is None else getattr(r, metric)
                         for r in self.cell(method, scenario) if r.ok])

    def summary(self) -> list:
        rows = []
        for scen in self.scenarios:
            for meth in self.methods:
                recs = self.cell(meth, scen)
                good = [r for r in recs if r.ok]
                row = {"method": meth, "scenario": scen, "replicates": len(good),
                       "failed": len(recs) - len(good)}
                for k in METRICS:
                    row[k], row[k + "_se"] = _mean_se([getattr(r, k) for r in good])
                rows.append(row)
        return rows

    def mean(self, method: str, metric: str, scenario: Optional[str] = None):
        scen = scenario or self.scenarios[0]
        return next(r[metric] for r in self.summary() if r["method"] == method and r["scenario"] == scen)

    def se(self, method: str, metric: str, scenario: Optional[str] = None):
        return self.mean(method, metric + "_se", scenario)

    def timing(self) -> list:
        return [{"method": r.method, "scenario": r.scenario, "replicate": r.replicate,
                 "seconds": r.seconds} for r in self.records]

    @classmethod
    def combine(cls, reports: Sequence["MetricsReport"]) -> "MetricsReport":
        """Stack reports of different scenarios into one multi-column table."""
        methods, scenarios, records = [], [], []
        for rep in reports:
            methods += [m for m in rep.methods if m not in methods]
            scenarios += [s for s in rep.scenarios if s not in scenarios]
            records += rep.records
        return cls(records, max(r.replicates for r in reports), methods, scenarios)

    # ------------------------------------------------------------ emitters
    def to_csv(self) -> str:
        cols = ["method", "scenario", "replicates", "failed"]
        cols += [c for k in METRICS for c in (k, k + "_se")]
        return _csv(cols, self.summary())

    def records_csv(self) -> str:
        cols = ["replicate", "method", "scenario", *METRICS, "params", "error"]
        return _csv(cols, [asdict(r) for r in self.records])

    def to_text(self, digits: int = 3) -> str:
        """Aligned table: one row per method, standard errors in parentheses below."""
        summ = {(r["method"], r["scenario"]): r for r in self.summary()}
        head1 = [""] + [s for s in self.scenarios for _ in TABLE_METRICS]
        head2 = ["Method"] + [k.upper() for _ in self.scenarios for k in TABLE_METRICS]
        body = [head1, head2]
        for meth in self.methods:
            means, ses = [meth], [""]
            for scen in self.scenarios:
                row = summ[(meth, scen)]
                for k in TABLE_METRICS:
                    means.append(_fmt(row[k], digits))
                    ses.append(f"({_fmt(row[k + '_se'], digits)})")
            body += [means, ses]
        widths = [max(len(r[i]) for r in body) for i in range(len(head2))]
        lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))).rstrip()
                 for r in body]
        failed = sum(not r.ok for r in self.records)
        lines.append(f"replicates: {self.replicates}; failed fits excluded: {failed}")
        return "\n".join(lines) + "\n"


def _fmt(v, digits=3) -> str:
    return NA if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.{digits}f}"


def _cell(v):
    if v is None:
        return NA
    if isinstance(v, float):
        return repr(v)
    return v


def _csv(cols, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in cols])
    return buf.getvalue()


# --------------------------------------------------------------- jobs


@dataclass(frozen=True)
class _Job:
    cfg: ScenarioConfig
    replicate: int
    spec: ModelSpec
    edge_drop_fraction: float
    grid_kwargs: Mapping
    options: Optional[SolverOptions]
    standardize: bool


def _run_job(job: _Job) -> Record:
    with threadpool_limits(limits=1):
        return _run_job_inner(job)


def _run_job_inner(job: _Job) -> Record:
    cfg, r, spec = job.cfg, job.replicate, job.spec
    rec = Record(r, spec.name, cfg.scenario.value)
    t0 = time.perf_counter()
    try:
        study = sample_study(cfg, r)
        graph = study.graph
        if spec.uses_graph and job.edge_drop_fraction > 0:
            graph = remove_edges_random(graph, job.edge_drop_fraction,
                                        seed=stream(cfg.seed, r, _EDGE_DROP_TAG))
        tuned = grid_search(spec, study.train, study.validate, graph, options=job.options,
                            standardize=job.standardize, grid_kwargs=job.grid_kwargs)
        cm = coef_metrics(tuned.coef, study.beta)
        rec.mse = test_mse(tuned, study.test)
        rec.l2, rec.fpr, rec.fnr = cm
        rec.sign = float(sign_recovered(tuned.coef, study.beta))
        rec.params = _params_str(tuned.best_params)
    except Exception as exc:  # recorded per cell and excluded from aggregation
        rec.error = f"{type(exc).__name__}: {exc}"
    rec.seconds = time.perf_counter() - t0
    return rec


def _params_str(params) -> str:
    if "per_dataset" in params:
        return " | ".join(_params_str(p) for p in params["per_dataset"])
    return ";".join(f"{k}={v!r}" for k, v in params.items())


def _resolve(methods) -> list:
    specs = [make_preset(m) if isinstance(m, str) else m for m in methods]
    if not specs:
        raise ValueError("need at least one method")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate methods in {names}")
    return specs


def run_jobs(jobs: Sequence, threads: int = 1) -> list:
    """Run jobs in order; ``threads > 1`` uses a process pool. Output order is input order."""
    threads = max(1, int(threads))
    if threads == 1 or len(jobs) <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(threads, len(jobs), os.cpu_count() or threads)) as pool:
        return list(pool.map(_run_job, jobs))


def run_experiment(cfg: ScenarioConfig, methods: Sequence, replicates: int, seed: Optional[int] = None, *,
                   edge_drop_fraction: float = 0.0, grid_kwargs: Optional[Mapping] = None,
                   options: Optional[SolverOptions] = None, standardize: bool = True,
                   threads: int = 1) -> MetricsReport:
    """Simulate, tune on validation, and score every method on ``replicates`` fresh studies.

    ``seed`` overrides ``cfg.seed``. Replicate ``r`` is a pure function of
    ``(seed, r)``, so adding replicates never changes earlier ones.
    """
    if replicates < 1:
        raise ValueError(f"replicates must be positive, got {replicates}")
    if not 0.0 <= edge_drop_fraction < 1.0:
        raise ValueError(f"edge_drop_fraction must lie in [0, 1), got {edge_drop_fraction}")
    specs = _resolve(methods)
    if seed is not None:
        cfg = cfg.with_(seed=int(seed))
    gk = dict(grid_kwargs or {})
    jobs = [_Job(cfg, r, s, float(edge_drop_fraction), gk, options, standardize)
            for r in range(replicates) for s in specs]
    records = run_jobs(jobs, threads)
    return MetricsReport(records, replicates, [s.name for s in specs], [cfg.scenario.value])


def run_sensitivity(cfg: ScenarioConfig, methods: Sequence, fraction: float = 0.2, replicates: int = 20,
                    seed: Optional[int] = None, **kwargs) -> MetricsReport:
    """:func:`run_experiment` with graph-using methods given a randomly thinned graph."""
    return run_experiment(cfg, methods, replicates, seed, edge_drop_fraction=fraction, **kwargs)
