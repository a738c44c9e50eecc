"""Batch command-line front end.

Subcommands ``fit``, ``tune``, ``simulate``, ``experiment`` and ``sensitivity``
read an optional YAML config; command-line flags override its values. Primary
outputs depend only on the config and seed. Wall-clock information goes to
``run.log`` and ``timing.csv`` only.

Example config::

    seed: 1
    methods: [SIL-LS-IHM, gLasso, Lasso]
    replicates: 20
    scenario: {scenario: ring, M: 5, p_ht: 0.0}
    grid: {n_lambda: 10, n_eta: 5, ridge: [0, 0.01, 0.1]}
    solver: {tol: 1.0e-7, max_iter: 5000}
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import evaluation
from .estimators import ADAPTIVE_MODES, TuningGrid, fit_spec, grid_search, make_preset, preset_names
from .io import GRAPH_FILE, load_study, save_study, write_matrix
from .graph import write_edge_file
from .simgen import ScenarioConfig, sample_study
from .solver import SolverOptions

COMMANDS = ("fit", "tune", "simulate", "experiment", "sensitivity")
_ADAPTIVE_FLAG = {"none": False, "all": True, "graph": "graph"}
_GRID_KWARGS = ("n_lambda", "n_eta", "ridge", "alphas", "lambda_ratio", "eta_range")
log = logging.getLogger("sil")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    out: Path = Path("out")
    seed: int = 0
    threads: int = 1
    methods: list = field(default_factory=lambda: ["SIL-LS-IHM"])
    replicates: int = 1
    edge_drop_fraction: float = 0.2
    data: Optional[Path] = None
    validate: Optional[Path] = None
    replicate: int = 0
    adaptive: object = False  # False, True or "graph"
    standardize: bool = True
    scenarios: list = field(default_factory=lambda: [ScenarioConfig()])
    params: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    grid_values: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}; choose from {', '.join(COMMANDS)}")
        self.out = Path(self.out)
        if self.threads < 1:
            raise ConfigError(f"threads must be positive, got {self.threads}")
        if self.replicates < 1:
            raise ConfigError(f"replicates must be positive, got {self.replicates}")
        if isinstance(self.methods, str):
            self.methods = [self.methods]
        if self.adaptive not in ADAPTIVE_MODES:
            raise ConfigError(f"adaptive must be true, false or graph, got {self.adaptive!r}")
        for m in self.methods:
            make_preset(m)
        unknown = set(self.grid) - set(_GRID_KWARGS)
        if unknown:
            raise ConfigError(f"unknown grid settings {sorted(unknown)}; allowed: {', '.join(_GRID_KWARGS)}")
        if self.command in ("fit", "tune"):
            if self.data is None:
                raise ConfigError(f"{self.command} needs a data directory (--data)")
            if len(self.methods) != 1:
                raise ConfigError(f"{self.command} takes exactly one method, got {self.methods}")
        if self.command == "tune" and self.validate is None:
            raise ConfigError("tune needs a validation directory (--validate)")
        for p in (self.data, self.validate):
            if p is not None and not Path(p).is_dir():
                raise ConfigError(f"{p}: directory does not exist")

    def solver_options(self) -> SolverOptions:
        return SolverOptions(**self.solver)

    def spec(self, name: str):
        return make_preset(name, adaptive=self.adaptive)


def _scenario(d) -> ScenarioConfig:
    if isinstance(d, ScenarioConfig):
        return d
    if isinstance(d, (str, int)):
        d = {"scenario": d}
    known = {f.name for f in fields(ScenarioConfig)}
    bad = set(d) - known
    if bad:
        raise ConfigError(f"unknown scenario fields {sorted(bad)}")
    return ScenarioConfig(**d)


def _parse_assignments(items, listy: bool) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        vals = [float(x) for x in v.split(",")]
        out[k.strip()] = vals if listy else vals[0]
    return out


def build_config(args: argparse.Namespace) -> RunConfig:
    raw = {}
    if args.config:
        with open(args.config) as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{args.config}: top level must be a mapping")
    raw.pop("command", None)
    scen = raw.pop("scenarios", None) or raw.pop("scenario", None)
    if scen is not None:
        raw["scenarios"] = [_scenario(s) for s in (scen if isinstance(scen, list) else [scen])]
    if "methods" not in raw and "method" in raw:
        raw["methods"] = raw.pop("method")
    overrides = {"out": args.out, "seed": args.seed, "threads": args.threads,
                 "replicates": args.replicates, "edge_drop_fraction": args.edge_drop_fraction,
                 "data": args.data, "validate": getattr(args, "validate", None),
                 "replicate": getattr(args, "replicate", None), "methods": args.method}
    raw.update({k: v for k, v in overrides.items() if v is not None})
    if args.adaptive is not None:
        raw["adaptive"] = _ADAPTIVE_FLAG[args.adaptive]
    if getattr(args, "scenario", None) is not None:
        base = raw.get("scenarios", [ScenarioConfig()])
        raw["scenarios"] = [s.with_(scenario=args.scenario) for s in base]
    raw.setdefault("params", {}).update(_parse_assignments(getattr(args, "param", None), listy=False))
    raw.setdefault("grid_values", {}).update(_parse_assignments(getattr(args, "grid_axis", None), listy=True))
    known = {f.name for f in fields(RunConfig)}
    bad = set(raw) - known
    if bad:
        raise ConfigError(f"unknown config keys {sorted(bad)}")
    for k in ("data", "validate"):
        if raw.get(k) is not None:
            raw[k] = Path(raw[k])
    return RunConfig(command=args.command, **raw)


# ------------------------------------------------------------ commands


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    log.info("wrote %s", path)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    if hasattr(o, "value"):
        return o.value
    raise TypeError(f"cannot serialise {type(o).__name__}")


def cmd_fit(cfg: RunConfig) -> None:
    study, graph = load_study(cfg.data)
    spec = cfg.spec(cfg.methods[0])
    res = fit_spec(spec, study, cfg.params, graph, options=cfg.solver_options(), standardize=cfg.standardize)
    write_matrix(cfg.out / "coefficients.csv", res.coef)
    write_matrix(cfg.out / "intercepts.csv", res.intercept[None, :])
    summary = {"method": spec.name, "params": cfg.params, "objective": res.objective,
               "objective_trace": list(res.objective_trace), "iterations": res.iterations,
               "converged": res.converged, "nonzeros": int(np.count_nonzero(res.coef))}
    _write(cfg.out / "fit_summary.json", _json(summary))


def cmd_tune(cfg: RunConfig) -> None:
    train, graph = load_study(cfg.data)
    validate, _ = load_study(cfg.validate)
    spec = cfg.spec(cfg.methods[0])
    grid = TuningGrid(cfg.grid_values) if cfg.grid_values else None
    tuned = grid_search(spec, train, validate, graph, grid, options=cfg.solver_options(),
                        standardize=cfg.standardize, grid_kwargs=cfg.grid)
    best = tuned.best_params
    row = min(tuned.table, key=lambda r: r["validation_mse"]) if len(tuned.params) == 1 else None
    _write(cfg.out / "best_config.json", _json({"method": spec.name, "params": best,
                                                 "validation_mse": row["validation_mse"] if row else None}))
    cols = list(dict.fromkeys(k for r in tuned.table for k in r))
    _write(cfg.out / "validation_table.csv", evaluation._csv(cols, tuned.table))
    write_matrix(cfg.out / "coefficients.csv", tuned.coef)


def cmd_simulate(cfg: RunConfig) -> None:
    for i, sc in enumerate(cfg.scenarios):
        sc = sc.with_(seed=cfg.seed)
        st = sample_study(sc, cfg.replicate)
        base = cfg.out if len(cfg.scenarios) == 1 else cfg.out / f"scenario_{i + 1}_{sc.scenario.value}"
        for name in ("train", "validate", "test"):
            save_study(base / name, getattr(st, name), st.graph)
        write_matrix(base / "beta.csv", st.beta)
        write_edge_file(base / GRAPH_FILE, st.graph)
        for m in range(sc.M):
            write_matrix(base / f"precision_{m + 1}.csv", st.precision(m))
        meta = {"scenario": asdict(sc), "replicate": cfg.replicate}
        _write(base / "config.json", _json(meta))



def cmd_experiment(cfg: RunConfig) -> None:
    frac = cfg.edge_drop_fraction if cfg.command == "sensitivity" else 0.0
    specs = [cfg.spec(m) for m in cfg.methods]
    reports = []
    for sc in cfg.scenarios:
        log.info("scenario %s: %d methods x %d replicates", sc.scenario.value, len(specs), cfg.replicates)
        t0 = time.perf_counter()
        rep = evaluation.run_experiment(sc, specs, cfg.replicates, cfg.seed, edge_drop_fraction=frac,
                                        grid_kwargs=cfg.grid, options=cfg.solver_options(),
                                        standardize=cfg.standardize, threads=cfg.threads)
        log.info("scenario %s finished in %.1f s", sc.scenario.value, time.perf_counter() - t0)
        reports.append(rep)
    report = evaluation.MetricsReport.combine(reports)
    _write(cfg.out / "report.csv", report.to_csv())
    _write(cfg.out / "report.txt", report.to_text())
    _write(cfg.out / "records.csv", report.records_csv())
    _write(cfg.out / "timing.csv", evaluation._csv(["method", "scenario", "replicate", "seconds"],
                                                   report.timing()))


_DISPATCH = {"fit": cmd_fit, "tune": cmd_tune, "simulate": cmd_simulate,
             "experiment": cmd_experiment, "sensitivity": cmd_experiment}


def run(cfg: RunConfig) -> int:
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "error.json").unlink(missing_ok=True)
    _DISPATCH[cfg.command](cfg)
    return 0


# ------------------------------------------------------------ parsing


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="worker processes for replicated runs")
    common.add_argument("--out", help="output directory")
    common.add_argument("--method", action="append", help="model preset (repeatable)")
    common.add_argument("--replicates", type=int)
    common.add_argument("--edge-drop-fraction", type=float)
    common.add_argument("--data", help="study directory with X_m.csv and y_m.csv")
    common.add_argument("--adaptive", nargs="?", const="all", choices=sorted(_ADAPTIVE_FLAG),
                        help="adaptive group weights for all presets or only the graph-using ones")
    common.add_argument("--scenario", help="ring, hub or random (1, 2, 3)")

    ap = argparse.ArgumentParser(prog="sil", description="Structured integrative learning toolkit.",
                                 epilog="presets: " + ", ".join(preset_names()))
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("fit", parents=[common], help="fit one model at fixed tuning values")
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="lam, eta, lambda_ridge or alpha")
    p = sub.add_parser("tune", parents=[common], help="grid search on a validation study")
    p.add_argument("--validate", help="validation study directory")
    p.add_argument("--grid-axis", action="append", metavar="KEY=V1,V2", help="explicit candidate values")
    p = sub.add_parser("simulate", parents=[common], help="write a synthetic study to disk")
    p.add_argument("--replicate", type=int)
    sub.add_parser("experiment", parents=[common], help="replicated simulation study")
    sub.add_parser("sensitivity", parents=[common], help="experiment with a thinned working graph")
    return ap


def _setup_log(out: Path) -> logging.Handler:
    out.mkdir(parents=True, exist_ok=True)
    h = logging.FileHandler(out / "run.log", mode="w")
    h.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(h)
    log.setLevel(logging.INFO)
    return h


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    out = Path(args.out or "out")
    handler = None
    try:
        cfg = build_config(args)
        out = cfg.out
        handler = _setup_log(out)
        log.info("command %s seed %d threads %d", cfg.command, cfg.seed, cfg.threads)
        status = run(cfg)
        log.info("done")
        return status
    except Exception as exc:
        record = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(_json(record))
        except OSError:
            pass
        print(json.dumps(record), file=sys.stderr)
        return 1
    finally:
        if handler is not None:
            log.removeHandler(handler)
            handler.close()


if __name__ == "__main__":
    sys.exit(main())
