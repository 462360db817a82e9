"""Experiment runner: config validation, seeded replications, JSON-lines traces,
oracle files and CSV reports.

Verbs: ``run``, ``oracle``, ``report``, ``validate-config``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import multifidelity as mf
from . import optimizers as opt
from .archive import Archive, Evaluation, NicheSet
from .metrics import (
    UNREACHED,
    anytime_curve,
    average_ranks,
    ert,
    hypervolume_indicator,
    niche_miss_frequency,
    objective_vectors,
    pareto_mask,
    reference_front,
    summed_niche_error,
)
from .niche_tables import niche_set as table_niche_set
from .problems import (
    EvaluationError,
    NotEnumerableError,
    Problem,
    brute_force_oracle,
    load_tabular,
    synthetic_continuous_problem,
    toy_cell_problem,
)
from .surrogate import ForestParams

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

FULL_FIDELITY = ("random_search", "bop_elites_star", "parego_star", "ei_bo", "map_elites", "regularized_evolution")
MULTIFIDELITY = ("qd_hyperband", "bop_elites_hb", "mo_hyperband", "parego_hb")
OPTIMIZER_NAMES = FULL_FIDELITY + MULTIFIDELITY

# QD optimizer -> multi-objective counterpart
ERT_PAIRS = (
    ("bop_elites_hb", "parego_hb"),
    ("qd_hyperband", "mo_hyperband"),
    ("bop_elites_star", "parego_star"),
)

_HB_DEFAULTS = {"eta": 3, "rho": 0.0, "variant": "batched", "r_min": 1.0, "rounding": "integer"}
_FULL_KEYS = {f.name for f in fields(opt.OptimizerConfig)} - {"budget", "seed", "forest"} | {"n_trees"}


class ConfigError(ValueError):
    """Configuration problems, one ``field: message`` entry per issue."""

    def __init__(self, issues: Sequence[str]):
        super().__init__("; ".join(issues))
        self.issues = list(issues)


class TraceError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    problem: dict
    niches: dict
    optimizer: str
    params: dict
    budget: dict
    replications: int = 1
    seed: int = 0

    def materialized(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "problem": self.problem,
            "niches": self.niches,
            "optimizer": {"name": self.optimizer, "params": self.params},
            "budget": self.budget,
            "replications": self.replications,
            "seed": self.seed,
        }

    @property
    def hash(self) -> str:
        body = dict(self.materialized())
        body.pop("replications")  # adding replications keeps earlier traces valid
        blob = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def replication_seed(self, i: int) -> int:
        return self.seed + i


_PROBLEM_DEFAULTS = {
    "toy_cell": {"reference_fidelity": 27},
    "synthetic_continuous": {"dims": 2, "c": 4, "symmetric": False, "reference_fidelity": 9},
    "tabular": {},
}


def _materialize_params(name: str, params: dict, issues: list[str]) -> dict:
    if name in FULL_FIDELITY:
        base = asdict(opt.OptimizerConfig())
        base.pop("budget"), base.pop("seed")
        forest = base.pop("forest")
        base["n_trees"] = forest["n_trees"]
        allowed = _FULL_KEYS
    else:
        base = dict(_HB_DEFAULTS)
        if name in ("bop_elites_hb", "parego_hb"):
            defaults = mf.ModelSamplerConfig()
            base.update(
                design_size=defaults.design_size,
                n_candidates=defaults.n_candidates,
                n_trees=defaults.forest.n_trees,
                gamma=defaults.gamma,
                weight_granularity=defaults.weight_granularity,
            )
        if name == "mo_hyperband":
            base["use_features"] = True
        allowed = set(base)
    for k in params:
        if k not in allowed:
            issues.append(f"optimizer.params.{k}: not a parameter of {name} (allowed: {', '.join(sorted(allowed))})")
    base.update({k: v for k, v in params.items() if k in allowed})
    return base


def validate_config(data: dict) -> ExperimentConfig:
    """Check a raw config dict and fill in every default."""
    issues: list[str] = []
    if not isinstance(data, dict):
        raise ConfigError(["<root>: config must be a JSON object"])
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        issues.append(f"schema_version: expected {SCHEMA_VERSION}, got {version}")
    known = {"schema_version", "problem", "niches", "optimizer", "budget", "replications", "seed"}
    for k in data:
        if k not in known:
            issues.append(f"{k}: unknown field")

    problem = data.get("problem")
    if not isinstance(problem, dict) or "name" not in problem:
        issues.append("problem.name: required")
        problem = {"name": "toy_cell"}
    elif problem["name"] not in _PROBLEM_DEFAULTS:
        issues.append(f"problem.name: unknown problem {problem['name']!r} (choose from {', '.join(_PROBLEM_DEFAULTS)})")
    else:
        problem = {**_PROBLEM_DEFAULTS[problem["name"]], **problem}
        if problem["name"] == "tabular" and "path" not in problem:
            issues.append("problem.path: required for tabular problems")

    niches = data.get("niches", {"default": True} if problem.get("name") == "synthetic_continuous" else None)
    niche_kinds = ("percentiles", "upper_bounds", "niche_set", "scenario", "default", "unbounded")
    if not isinstance(niches, dict) or sum(k in niches for k in niche_kinds) != 1:
        issues.append(f"niches: give exactly one of {', '.join(niche_kinds)}")
        niches = {}

    optimizer = data.get("optimizer")
    if isinstance(optimizer, str):
        optimizer = {"name": optimizer}
    name = optimizer.get("name") if isinstance(optimizer, dict) else None
    params: dict = {}
    if name not in OPTIMIZER_NAMES:
        issues.append(f"optimizer.name: unknown optimizer {name!r} (choose from {', '.join(OPTIMIZER_NAMES)})")
    else:
        raw = optimizer.get("params", {})
        if not isinstance(raw, dict):
            issues.append("optimizer.params: must be an object")
            raw = {}
        params = _materialize_params(name, raw, issues)

    budget = data.get("budget")
    if not isinstance(budget, dict) or sum(k in budget for k in ("full_evaluations", "fidelity_units")) != 1:
        issues.append("budget: give exactly one of full_evaluations, fidelity_units")
        budget = {}
    else:
        v = next(iter(budget[k] for k in ("full_evaluations", "fidelity_units") if k in budget))
        if not isinstance(v, (int, float)) or v <= 0:
            issues.append("budget: must be a positive number")

    reps = data.get("replications", 1)
    if not isinstance(reps, int) or reps < 1:
        issues.append("replications: must be a positive integer")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        issues.append("seed: must be a non-negative integer")
    if issues:
        raise ConfigError(issues)
    return ExperimentConfig(problem, niches, name, params, budget, reps, seed)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([f"<file>: not valid JSON ({exc})"]) from None
    return validate_config(data)


def build_problem(entry: dict) -> Problem:
    name = entry["name"]
    if name == "toy_cell":
        kw = {"reference_fidelity": entry["reference_fidelity"]}
        if "ops" in entry:
            kw["ops"] = entry["ops"]
        return toy_cell_problem(**kw)
    if name == "synthetic_continuous":
        return synthetic_continuous_problem(entry["dims"], entry["c"], entry["symmetric"], entry["reference_fidelity"])
    if name == "tabular":
        return load_tabular(entry["path"], name=entry.get("label"))
    raise ConfigError([f"problem.name: unknown problem {name!r}"])


def build_niches(entry: dict, problem: Problem) -> NicheSet:
    if "percentiles" in entry:
        return problem.percentile_niches(entry["percentiles"], entry.get("feature", 0))
    if "upper_bounds" in entry:
        return NicheSet.nested(entry["upper_bounds"], entry.get("lower", 0.0))
    if "niche_set" in entry:
        return NicheSet.from_json(entry["niche_set"])
    if "scenario" in entry:
        return table_niche_set(*entry["scenario"].split("/"))
    if "unbounded" in entry:
        return NicheSet.unbounded(problem.n_features)
    ns = problem.metadata.get("niche_set")
    if ns is None:
        raise ConfigError(["niches.default: this problem has no default niche set"])
    return ns


def _compact(d: dict) -> str:
    return ",".join(f"{k}={json.dumps(v, sort_keys=True, separators=(',', ':'))}" for k, v in sorted(d.items()))


def problem_label(cfg: ExperimentConfig) -> str:
    """Readable identity of a (problem, niche set) pair; ``problem.label`` overrides it."""
    if "label" in cfg.problem:
        return str(cfg.problem["label"])
    params = {k: v for k, v in cfg.problem.items() if k != "name"}
    return f"{cfg.problem['name']}({_compact(params)})|{_compact(cfg.niches)}"


def total_budget(cfg: ExperimentConfig, problem: Problem) -> float:
    if "fidelity_units" in cfg.budget:
        return float(cfg.budget["fidelity_units"])
    return float(cfg.budget["full_evaluations"]) * problem.reference_fidelity


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


def run_optimizer(cfg: ExperimentConfig, problem: Problem, niche_set: NicheSet, seed: int) -> Archive:
    """Dispatch one replication."""
    params = dict(cfg.params)
    units = total_budget(cfg, problem)
    if cfg.optimizer in FULL_FIDELITY:
        n_full = units / problem.reference_fidelity
        if abs(n_full - round(n_full)) > 1e-9:
            raise ConfigError([f"budget: {units} fidelity units is not a whole number of full evaluations"])
        n_trees = params.pop("n_trees")
        oc = opt.OptimizerConfig(
            budget=int(round(n_full)), seed=seed, forest=ForestParams(n_trees=n_trees), **params
        )
        return opt.OPTIMIZERS[cfg.optimizer](problem, niche_set, oc)
    hb = {k: params.pop(k) for k in ("variant", "r_min", "rounding")}
    eta, rho = params.pop("eta"), params.pop("rho")
    common = dict(R=problem.reference_fidelity, eta=eta, total_budget=units, rng=np.random.default_rng(seed), **hb)
    if cfg.optimizer == "qd_hyperband":
        return mf.qd_hyperband(problem, niche_set, **common)
    if cfg.optimizer == "mo_hyperband":
        return mf.mo_hyperband(problem, niche_set, use_features=params["use_features"], **common)
    sc = mf.ModelSamplerConfig(
        rho=rho,
        design_size=params["design_size"],
        n_candidates=params["n_candidates"],
        forest=ForestParams(n_trees=params["n_trees"]),
        gamma=params["gamma"],
        weight_granularity=params["weight_granularity"],
    )
    fn = mf.bop_elites_hb if cfg.optimizer == "bop_elites_hb" else mf.parego_hb
    return fn(problem, niche_set, rho=rho, sampler_config=sc, **common)


@dataclass
class Trace:
    header: dict
    evaluations: list[Evaluation]
    complete: bool = True
    footer: dict | None = None

    @property
    def optimizer(self) -> str:
        return self.header["optimizer"]

    @property
    def problem(self) -> str:
        return self.header["problem_label"]

    @property
    def replication(self) -> int:
        return self.header["replication"]

    @property
    def niche_set(self) -> NicheSet:
        return NicheSet.from_json(self.header["niche_set"])

    @property
    def reference_fidelity(self) -> float:
        return self.header["reference_fidelity"]

    @property
    def total_budget(self) -> float:
        return self.header["total_budget"]

    @property
    def penalty(self) -> float:
        return self.header["penalty"]

    def archive(self) -> Archive:
        return Archive.replay(self.evaluations, self.niche_set, self.reference_fidelity)


def make_header(cfg: ExperimentConfig, problem: Problem, niche_set: NicheSet, replication: int) -> dict:
    return {
        "type": "header",
        "schema_version": SCHEMA_VERSION,
        "config_hash": cfg.hash,
        "seed": cfg.replication_seed(replication),
        "replication": replication,
        "optimizer": cfg.optimizer,
        "problem_label": problem_label(cfg),
        "reference_fidelity": problem.reference_fidelity,
        "penalty": problem.penalty,
        "total_budget": total_budget(cfg, problem),
        "feature_names": list(problem.feature_names),
        "niche_set": niche_set.to_json(),
        "config": cfg.materialized(),
    }


def evaluation_record(ev: Evaluation, problem: Problem, niche_set: NicheSet, replication: int) -> dict:
    return {
        "type": "evaluation",
        "replication": replication,
        "iteration": ev.index,
        "configuration": problem.space.to_json(ev.config),
        "fidelity": ev.fidelity,
        "objective": ev.objective,
        "features": list(ev.features),
        "memberships": [bool(m) for m in niche_set.membership(ev.features)],
        "budget": ev.budget,
        "penalized": ev.penalized,
    }


def _dumps(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_trace(
    path: Path, header: dict, evaluations: Iterable[Evaluation], problem: Problem, niche_set: NicheSet, complete: bool
) -> None:
    evaluations = list(evaluations)
    lines = [_dumps(header)]
    lines += [_dumps(evaluation_record(e, problem, niche_set, header["replication"])) for e in evaluations]
    if complete:
        lines.append(
            _dumps({"type": "end", "n_evaluations": len(evaluations), "budget": evaluations[-1].budget if evaluations else 0.0})
        )
    tmp = path.with_suffix(".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(path)


def read_trace(path: str | Path, problem: Problem | None = None) -> Trace:
    """Parse a trace file; configurations are decoded with the problem from its header."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise TraceError(f"{path}: empty trace")
    header = json.loads(lines[0])
    if header.get("type") != "header":
        raise TraceError(f"{path}: first line is not a header")
    if header.get("schema_version") != SCHEMA_VERSION:
        raise TraceError(f"{path}: schema version {header.get('schema_version')} != {SCHEMA_VERSION}")
    if problem is None:
        problem = build_problem(header["config"]["problem"])
    evaluations, footer = [], None
    for line in lines[1:]:
        rec = json.loads(line)
        if rec["type"] == "end":
            footer = rec
            break
        evaluations.append(
            Evaluation(
                config=problem.space.from_json(rec["configuration"]),
                fidelity=rec["fidelity"],
                objective=rec["objective"],
                features=tuple(rec["features"]),
                index=rec["iteration"],
                budget=rec["budget"],
                penalized=rec["penalized"],
            )
        )
    return Trace(header, evaluations, complete=footer is not None, footer=footer)


def trace_path(out_dir: Path, cfg: ExperimentConfig, replication: int) -> Path:
    return out_dir / f"{cfg.optimizer}_rep{replication:03d}.jsonl"


def _is_done(path: Path, cfg: ExperimentConfig) -> bool:
    if not path.exists():
        return False
    try:
        lines = path.read_text().splitlines()
        header, last = json.loads(lines[0]), json.loads(lines[-1])
    except (OSError, json.JSONDecodeError, IndexError):
        return False
    return header.get("config_hash") == cfg.hash and last.get("type") == "end"


def run_replication(cfg: ExperimentConfig, out_dir: str | Path, replication: int) -> Path:
    """Run one replication and write its trace; a failed run leaves a footer-less partial trace."""
    out_dir = Path(out_dir)
    problem = build_problem(cfg.problem)
    niche_set = build_niches(cfg.niches, problem)
    header = make_header(cfg, problem, niche_set, replication)
    path = trace_path(out_dir, cfg, replication)
    try:
        archive = run_optimizer(cfg, problem, niche_set, cfg.replication_seed(replication))
    except EvaluationError as exc:
        partial = exc.archive.evaluations if exc.archive is not None else []
        write_trace(path, header, partial, problem, niche_set, complete=False)
        raise
    write_trace(path, header, archive.evaluations, problem, niche_set, complete=True)
    return path


def _run_one(args: tuple) -> str:
    cfg, out_dir, rep = args
    return str(run_replication(cfg, out_dir, rep))


def cmd_run(cfg: ExperimentConfig, out_dir: str | Path, resume: bool = False, parallel: int = 1) -> list[Path]:
    """Run every replication; with ``resume`` completed traces of the same config are kept."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    todo = [
        r for r in range(cfg.replications) if not (resume and _is_done(trace_path(out_dir, cfg, r), cfg))
    ]
    jobs = [(cfg, out_dir, r) for r in todo]
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            list(pool.map(_run_one, jobs))
    else:
        for job in jobs:
            _run_one(job)
    return [trace_path(out_dir, cfg, r) for r in range(cfg.replications)]


# ---------------------------------------------------------------------------
# Oracle
# ---------------------------------------------------------------------------


def cmd_oracle(cfg: ExperimentConfig, out_dir: str | Path) -> Path:
    problem = build_problem(cfg.problem)
    niche_set = build_niches(cfg.niches, problem)
    entries = brute_force_oracle(problem, niche_set)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "problem_label": problem_label(cfg),
        "reference_fidelity": problem.reference_fidelity,
        "niche_set": niche_set.to_json(),
        "niches": [
            {
                "id": e.niche,
                "empty": e.empty,
                "objective": e.objective,
                "configuration": None if e.empty else problem.space.to_json(e.config),
            }
            for e in entries
        ],
    }
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "oracle.json"
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return path


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReportOptions:
    grid_points: int = 50
    log_features: bool = False
    nadir: tuple[float, ...] | None = None


def _num(x: float | None) -> str:
    if x is None:
        return ""
    if math.isinf(x) or math.isnan(x):
        return str(float(x))
    return repr(float(x))


def _mean_se(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def _groups(traces: Sequence[Trace]) -> dict[str, dict[str, list[Trace]]]:
    out: dict[str, dict[str, list[Trace]]] = {}
    for t in sorted(traces, key=lambda t: (t.problem, t.optimizer, t.replication)):
        out.setdefault(t.problem, {}).setdefault(t.optimizer, []).append(t)
    return out


def _curve(t: Trace):
    return anytime_curve(t.evaluations, t.niche_set, t.reference_fidelity, t.penalty, t.total_budget)


def final_elites(t: Trace) -> list[Evaluation | None]:
    return list(t.archive().elites)


def anytime_table(traces: Sequence[Trace], opts: ReportOptions = ReportOptions()) -> list[list[str]]:
    rows = [["problem", "optimizer", "budget", "mean", "se", "n"]]
    for prob, by_opt in _groups(traces).items():
        top = max(t.total_budget for ts in by_opt.values() for t in ts)
        grid = np.linspace(top / opts.grid_points, top, opts.grid_points)
        for name, ts in by_opt.items():
            values = np.vstack([_curve(t).sample(grid) for t in ts])
            for g, col in zip(grid, values.T):
                m, se = _mean_se(col)
                rows.append([prob, name, _num(g), _num(m), _num(se), str(len(ts))])
    return rows


def final_ranks_table(traces: Sequence[Trace]) -> list[list[str]]:
    """Per-problem ranks of mean final summed error, then mean and standard error over problems."""
    groups = _groups(traces)
    names = sorted({t.optimizer for t in traces})
    rows = [["scope", "optimizer", "final_error_mean", "rank", "rank_se"]]
    per_problem = []
    for prob, by_opt in groups.items():
        present = [n for n in names if n in by_opt]
        means = [
            float(np.mean([summed_niche_error([None if e is None else e.objective for e in final_elites(t)], t.penalty) for t in by_opt[n]]))
            for n in present
        ]
        ranks = average_ranks(np.array([means]))[0]
        for n, m, r in zip(present, means, ranks):
            rows.append([prob, n, _num(m), _num(r), ""])
        if present == names:
            per_problem.append(ranks)
    if per_problem:
        R = np.vstack(per_problem)
        for k, n in enumerate(names):
            m, se = _mean_se(R[:, k])
            rows.append(["mean", n, "", _num(m), _num(se)])
    return rows


def ert_ratio_table(traces: Sequence[Trace]) -> list[list[str]]:
    """ERT of each QD optimizer and its multi-objective counterpart to reach the
    counterpart's mean summed error at half budget."""
    rows = [["problem", "qd_optimizer", "mo_optimizer", "target", "ert_qd", "ert_mo", "ratio"]]
    for prob, by_opt in _groups(traces).items():
        for qd, mo in ERT_PAIRS:
            if qd not in by_opt or mo not in by_opt:
                continue
            mo_curves = [_curve(t) for t in by_opt[mo]]
            target = float(np.mean([c.at(c.total_budget / 2) for c in mo_curves]))
            e_qd = ert([_curve(t) for t in by_opt[qd]], target)
            e_mo = ert(mo_curves, target)
            if math.isfinite(e_qd) and math.isfinite(e_mo):
                ratio = e_qd / e_mo if e_mo > 0 else (math.nan if e_qd == 0 else UNREACHED)
            else:
                ratio = UNREACHED
            rows.append([prob, qd, mo, _num(target), _num(e_qd), _num(e_mo), _num(ratio)])
    return rows


def niche_miss_table(traces: Sequence[Trace]) -> list[list[str]]:
    rows = [["problem", "optimizer", "niche", "miss_rate"]]
    for prob, by_opt in _groups(traces).items():
        for name, ts in by_opt.items():
            ids = [n.id for n in ts[0].niche_set]
            freq = niche_miss_frequency([[None if e is None else e.objective for e in final_elites(t)] for t in ts])
            rows += [[prob, name, str(i), _num(f)] for i, f in zip(ids, freq)]
    return rows


def niche_best_table(traces: Sequence[Trace]) -> list[list[str]]:
    """Per-niche best final error: mean and standard error over filled replications."""
    rows = [["problem", "optimizer", "niche", "mean", "se", "n_filled", "n"]]
    for prob, by_opt in _groups(traces).items():
        for name, ts in by_opt.items():
            elites = [final_elites(t) for t in ts]
            for j, niche in enumerate(ts[0].niche_set):
                vals = [e[j].objective for e in elites if e[j] is not None]
                m, se = _mean_se(vals) if vals else (None, None)
                rows.append([prob, name, str(niche.id), _num(m), _num(se), str(len(vals)), str(len(ts))])
    return rows


def final_elites_table(traces: Sequence[Trace]) -> list[list[str]]:
    rows = [["problem", "optimizer", "replication", "niche", "objective", "configuration"]]
    for t in sorted(traces, key=lambda t: (t.problem, t.optimizer, t.replication)):
        problem = build_problem(t.header["config"]["problem"])
        for niche, e in zip(t.niche_set, final_elites(t)):
            cfg = "" if e is None else json.dumps(problem.space.to_json(e.config), sort_keys=True, separators=(",", ":"))
            rows.append([t.problem, t.optimizer, str(t.replication), str(niche.id), _num(None if e is None else e.objective), cfg])
    return rows


def hv_indicator_table(traces: Sequence[Trace], opts: ReportOptions = ReportOptions()) -> list[list[str]]:
    """Hypervolume indicator of each run's (objective, features) front against the union front."""
    rows = [["problem", "optimizer", "mean", "se", "n", "nadir"]]
    for prob, by_opt in _groups(traces).items():
        fronts = {}
        for name, ts in by_opt.items():
            for t in ts:
                P = objective_vectors(t.evaluations, t.reference_fidelity, opts.log_features)
                fronts[(name, t.replication)] = P[pareto_mask(P)] if len(P) else P
        all_pts = [f for f in fronts.values() if len(f)]
        if not all_pts:
            continue
        if all_pts[0].shape[1] > 3:
            continue
        nadir = np.asarray(opts.nadir, dtype=float) if opts.nadir else np.vstack(all_pts).max(axis=0)
        ref = reference_front(all_pts)
        for name, ts in by_opt.items():
            vals = [hypervolume_indicator(fronts[(name, t.replication)], ref, nadir) for t in ts]
            m, se = _mean_se(vals)
            rows.append([prob, name, _num(m), _num(se), str(len(ts)), " ".join(_num(x) for x in nadir)])
    return rows


REPORTS = {
    "anytime": anytime_table,
    "final_ranks": final_ranks_table,
    "ert_ratios": ert_ratio_table,
    "niche_miss": niche_miss_table,
    "niche_best": niche_best_table,
    "hv_indicator": hv_indicator_table,
    "final_elites": final_elites_table,
}


def csv_text(rows: list[list[str]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def report_tables(traces: Sequence[Trace], opts: ReportOptions = ReportOptions()) -> dict[str, str]:
    out = {}
    for name, fn in REPORTS.items():
        rows = fn(traces, opts) if name in ("anytime", "hv_indicator") else fn(traces)
        out[name] = csv_text(rows)
    return out


def collect_traces(paths: Iterable[str | Path]) -> list[Trace]:
    files: list[Path] = []
    for p in map(Path, paths):
        files += sorted(p.glob("*.jsonl")) if p.is_dir() else [p]
    traces = [read_trace(f) for f in files]
    incomplete = [str(f) for f, t in zip(files, traces) if not t.complete]
    if incomplete:
        log.warning("skipping incomplete traces: %s", ", ".join(incomplete))
    return [t for t in traces if t.complete]


def cmd_report(paths: Iterable[str | Path], out_dir: str | Path, opts: ReportOptions = ReportOptions()) -> list[Path]:
    traces = collect_traces(paths)
    if not traces:
        raise TraceError("no complete traces to report on")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in report_tables(traces, opts).items():
        path = out_dir / f"{name}.csv"
        path.write_text(text)
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qdnas", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="verb", required=True)
    run = sub.add_parser("run", help="run replications and write traces")
    run.add_argument("--config", required=True)
    run.add_argument("--out-dir", required=True)
    run.add_argument("--replications", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--parallel", type=int, default=1)
    run.add_argument("--resume", action="store_true")
    orc = sub.add_parser("oracle", help="brute-force per-niche optima")
    orc.add_argument("--config", required=True)
    orc.add_argument("--out-dir", required=True)
    rep = sub.add_parser("report", help="aggregate traces into CSV tables")
    rep.add_argument("traces", nargs="+", help="trace files or directories")
    rep.add_argument("--out-dir", required=True)
    rep.add_argument("--grid-points", type=int, default=50)
    rep.add_argument("--log-features", action="store_true")
    rep.add_argument("--nadir", type=float, nargs="+")
    val = sub.add_parser("validate-config", help="check a config and print it with defaults")
    val.add_argument("--config", required=True)
    return ap


def _override(cfg: ExperimentConfig, replications: int | None, seed: int | None) -> ExperimentConfig:
    data = cfg.materialized()
    if replications is not None:
        data["replications"] = replications
    if seed is not None:
        data["seed"] = seed
    return validate_config(data)


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "validate-config":
            cfg = load_config(args.config)
            print(json.dumps(cfg.materialized(), indent=2, sort_keys=True))
        elif args.verb == "run":
            cfg = _override(load_config(args.config), args.replications, args.seed)
            for p in cmd_run(cfg, args.out_dir, resume=args.resume, parallel=args.parallel):
                print(p)
        elif args.verb == "oracle":
            print(cmd_oracle(load_config(args.config), args.out_dir))
        elif args.verb == "report":
            opts = ReportOptions(args.grid_points, args.log_features, tuple(args.nadir) if args.nadir else None)
            for p in cmd_report(args.traces, args.out_dir, opts):
                print(p)
    except ConfigError as exc:
        for issue in exc.issues:
            print(f"config error: {issue}", file=sys.stderr)
        return 2
    except (NotEnumerableError, TraceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EvaluationError as exc:
        print(f"evaluation failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
