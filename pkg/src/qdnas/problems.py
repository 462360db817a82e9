"""Benchmark problems, the tabular loader and the brute-force oracle."""
from __future__ import annotations

import csv
import functools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .archive import Niche, NicheSet, niches_from_percentiles
from .space import CellConfiguration, CellSpace, Categorical, Continuous, ParamSpace, SearchSpace, enumerate_paths


class ProblemError(RuntimeError):
    pass


class FidelityError(ProblemError, ValueError):
    pass


class EvaluationError(ProblemError):
    """An objective or feature evaluation failed; the partial archive is attached."""

    def __init__(self, message: str, archive=None):
        super().__init__(message)
        self.archive = archive


class NotEnumerableError(ProblemError):
    pass


class TabularError(ProblemError, ValueError):
    pass


class TabularSchemaError(TabularError):
    pass


class DuplicateConfigurationError(TabularError):
    pass


class MissingFidelityError(TabularError):
    pass


class LookupMissError(TabularError, KeyError):
    pass


@dataclass(frozen=True, eq=False)
class Problem:
    """Objective ``f_1(A, fidelity)`` plus fidelity-free feature functions.

    ``fidelities`` lists the admissible fidelity levels; ``None`` admits any
    value in ``(0, reference_fidelity]``.
    """

    name: str
    space: SearchSpace
    objective_fn: Callable[[Any, float], float]
    feature_fn: Callable[[Any], Sequence[float]]
    feature_names: tuple[str, ...]
    reference_fidelity: float
    fidelities: tuple[float, ...] | None = None
    penalty: float = 100.0
    configurations_fn: Callable[[], list] | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def check_fidelity(self, fidelity: float) -> float:
        if self.fidelities is not None:
            if fidelity not in self.fidelities:
                raise FidelityError(f"{self.name}: fidelity {fidelity} not in ladder {self.fidelities}")
        elif not 0 < fidelity <= self.reference_fidelity:
            raise FidelityError(f"{self.name}: fidelity {fidelity} outside (0, {self.reference_fidelity}]")
        return fidelity

    def objective(self, config, fidelity: float | None = None) -> float:
        fidelity = self.reference_fidelity if fidelity is None else fidelity
        self.check_fidelity(fidelity)
        return float(self.objective_fn(config, fidelity))

    def features(self, config) -> tuple[float, ...]:
        return tuple(float(z) for z in self.feature_fn(config))

    @property
    def enumerable(self) -> bool:
        return self.configurations_fn is not None or self.space.enumerable

    def configurations(self) -> list:
        if self.configurations_fn is not None:
            return list(self.configurations_fn())
        if self.space.enumerable:
            return self.space.enumerate()
        raise NotEnumerableError(f"{self.name} has no finite configuration list")

    def unique_configurations(self) -> list:
        """Configurations deduplicated by canonical key, first occurrence kept."""
        seen: dict[str, Any] = {}
        for c in self.configurations():
            seen.setdefault(self.space.key(c), c)
        return list(seen.values())

    def feature_samples(self, n: int = 10_000, seed: int = 0) -> np.ndarray:
        """Feature values over the whole space when enumerable, else ``n`` seeded draws."""
        if self.enumerable:
            configs = self.unique_configurations()
        else:
            rng = np.random.default_rng(seed)
            configs = [self.space.sample(rng) for _ in range(n)]
        return np.array([self.features(c) for c in configs], dtype=float)

    def percentile_niches(self, percentiles: Sequence[float], feature: int = 0) -> NicheSet:
        samples = self.feature_samples()[:, feature]
        return niches_from_percentiles(samples, percentiles, name=f"{self.name}/p{list(percentiles)}")


# ---------------------------------------------------------------------------
# Toy cell problem
# ---------------------------------------------------------------------------

TOY_OPS = ("conv3x3", "conv1x1", "maxpool3x3")
_OP_CAPACITY = {"conv3x3": 1.0, "conv1x1": 0.55, "maxpool3x3": 0.2}
_OP_PARAMS = {"conv3x3": 9.0, "conv1x1": 1.0, "maxpool3x3": 0.0}
_OP_SLOWNESS = {"conv3x3": 0.45, "conv1x1": 0.15, "maxpool3x3": 0.05}


def _toy_stats(cell: CellConfiguration) -> tuple[float, float, float]:
    """(asymptotic error, parameter count, learning slowness) of a pruned cell."""
    paths = enumerate_paths(cell)
    n = cell.n_vertices
    indeg = [0] * n
    for _, j in cell.edges:
        indeg[j] += 1
    capacity = 0.0
    for p in paths:
        if not p:
            capacity += 0.05
            continue
        value = sum(_OP_CAPACITY[o] for o in p) * (1.0 + 0.3 * (len(p) - 1))
        for a, b in zip(p, p[1:]):
            if a == "maxpool3x3" and b != "maxpool3x3":
                value += 0.35
            if a == b == "conv3x3":
                value -= 0.25
        capacity += value
    width_penalty = 0.6 * max(0, len(paths) - 2)
    error = 5.5 + 22.0 * math.exp(-0.95 * capacity) + width_penalty + 0.15 * len(cell.edges)
    params = 2000.0 * len(cell.edges)
    slowness = 0.2
    for v, op in enumerate(cell.ops, start=1):
        params += 10_000.0 * _OP_PARAMS[op] * (1.0 + 0.5 * (indeg[v] - 1))
        slowness += _OP_SLOWNESS[op]
    slowness += 0.1 * (len(paths) - 1)
    return error, params, slowness


def toy_cell_problem(reference_fidelity: float = 27.0, ops: Sequence[str] = TOY_OPS) -> Problem:
    """Enumerable 4-vertex cell problem with a synthetic learning curve.

    The asymptotic error is a smooth function of the path structure and op
    mix; the single feature is a parameter count (edges plus op weights,
    scaled by in-degree). At fidelity ``r`` the error is inflated by the
    factor ``1 + slowness(A) * (R/r - 1)/(R - 1)``, so architectures that
    learn slowly look worse at low fidelity and ranks cross.
    """
    ops = tuple(ops)
    unknown = set(ops) - set(_OP_CAPACITY)
    if unknown:
        raise ValueError(f"toy problem has no model for ops {sorted(unknown)}")
    space = CellSpace(max_vertices=4, max_edges=6, op_vocabulary=ops)
    R = float(reference_fidelity)

    @functools.lru_cache(maxsize=None)
    def stats(key: str) -> tuple[float, float, float]:
        return _toy_stats(space.from_json(key).pruned())

    def objective(config: CellConfiguration, fidelity: float) -> float:
        error, _, slowness = stats(space.key(config))
        if R == 1:
            return error
        lag = (R / fidelity - 1.0) / (R - 1.0)
        return error * (1.0 + slowness * lag)

    def features(config: CellConfiguration) -> tuple[float]:
        return (stats(space.key(config))[1],)

    return Problem(
        name="toy_cell",
        space=space,
        objective_fn=objective,
        feature_fn=features,
        feature_names=("params",),
        reference_fidelity=R,
        metadata={"ops": list(ops)},
    )


# ---------------------------------------------------------------------------
# Synthetic continuous problem
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SphereMixture:
    """``f(x) = min_m ||x - c_m||^2 + b_m`` on ``[-1, 1]^d``; feature ``z = (x_0 + 1)/2``."""

    centers: np.ndarray
    offsets: np.ndarray

    def __call__(self, x: np.ndarray) -> float:
        d2 = ((self.centers - x[None, :]) ** 2).sum(axis=1)
        return float((d2 + self.offsets).min())

    def slab_optimum(self, lo: float, hi: float) -> float:
        """Infimum of ``f`` over ``{x : lo <= z(x) <= hi}`` (closed slab)."""
        a, b = 2 * lo - 1, 2 * hi - 1
        a, b = max(a, -1.0), min(b, 1.0)
        gap = np.clip(self.centers[:, 0], a, b) - self.centers[:, 0]
        return float((gap**2 + self.offsets).min())


def synthetic_continuous_problem(
    dims: int = 2, c: int = 4, symmetric: bool = False, reference_fidelity: float = 9.0
) -> Problem:
    """Sphere-mixture problem with ``c`` disjoint grid niches on the first coordinate.

    ``problem.metadata`` carries the niche set and the closed-form per-niche
    optima. With ``symmetric=True`` the centers are mirrored about ``x_0 = 0``
    so mirrored niches share their optimum.
    """
    if dims < 1 or c < 1:
        raise ValueError("dims and c must be positive")
    if symmetric:
        centers = np.array([[-0.6] + [0.2] * (dims - 1), [0.6] + [0.2] * (dims - 1)])
        offsets = np.array([0.5, 0.5])
    else:
        centers = np.array(
            [[-0.7] + [0.3] * (dims - 1), [0.1] + [-0.4] * (dims - 1), [0.75] + [0.5] * (dims - 1)]
        )
        offsets = np.array([1.0, 0.4, 0.7])
    mixture = SphereMixture(centers, offsets)
    space = ParamSpace(tuple(Continuous(f"x{i}", -1.0, 1.0) for i in range(dims)))
    R = float(reference_fidelity)

    def objective(config, fidelity: float) -> float:
        x = np.asarray(config.values, dtype=float)
        value = mixture(x)
        lag = 0.0 if R == 1 else (R / fidelity - 1.0) / (R - 1.0)
        return value * (1.0 + (0.5 + 0.5 * abs(x).mean()) * lag)

    def features(config) -> tuple[float]:
        return ((config.values[0] + 1.0) / 2.0,)

    edges = np.linspace(0.0, 1.0, c + 1)
    niches = []
    for j in range(c):
        hi = math.inf if j == c - 1 else float(edges[j + 1])
        niches.append(Niche(((float(edges[j]), hi),), id=j + 1))
    niche_set = NicheSet(tuple(niches), layout="disjoint", name=f"grid{c}")
    optima = [mixture.slab_optimum(float(edges[j]), float(edges[j + 1])) for j in range(c)]
    return Problem(
        name=f"sphere_mixture_d{dims}_c{c}" + ("_sym" if symmetric else ""),
        space=space,
        objective_fn=objective,
        feature_fn=features,
        feature_names=("z",),
        reference_fidelity=R,
        metadata={"niche_set": niche_set, "optima": optima, "mixture": mixture},
    )


# ---------------------------------------------------------------------------
# Tabular benchmarks
# ---------------------------------------------------------------------------


def _parse_fidelity(col: str) -> float:
    try:
        return float(col.split("@", 1)[1])
    except ValueError:
        raise TabularSchemaError(f"bad fidelity column {col!r}") from None


def _infer_space(configs: list[dict]) -> SearchSpace:
    if all(set(c) == {"edges", "ops"} for c in configs):
        n_vertices = max(len(c["ops"]) + 2 for c in configs)
        vocab = sorted({op for c in configs for op in c["ops"]})
        if not vocab:
            raise TabularSchemaError("cell table without any op labels")
        max_edges = max(len(c["edges"]) for c in configs)
        return CellSpace(max_vertices=n_vertices, max_edges=max(1, max_edges), op_vocabulary=tuple(vocab))
    names = list(configs[0])
    if any(list(c) != names and set(c) != set(names) for c in configs):
        raise TabularSchemaError("parameter configurations disagree on dimension names")
    dims = []
    for name in names:
        values = sorted({json.dumps(c[name]) for c in configs})
        dims.append(Categorical(name, tuple(json.loads(v) for v in values)))
    return ParamSpace(tuple(dims))


def _rows_from_csv(path: Path) -> tuple[list[str], list[dict[str, str]]]:
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise TabularSchemaError(f"{path}: empty file")
        return list(reader.fieldnames), list(reader)


def _rows_from_json(path: Path) -> tuple[list[str], list[dict[str, Any]]]:
    data = json.loads(path.read_text())
    rows = data["rows"] if isinstance(data, dict) else data
    if not isinstance(rows, list) or not rows:
        raise TabularSchemaError(f"{path}: expected a non-empty list of rows")
    columns: list[str] = []
    for row in rows:
        for k in row:
            if k not in columns:
                columns.append(k)
    return columns, rows


def load_tabular(path: str | Path, space: SearchSpace | None = None, name: str | None = None) -> Problem:
    """Load a lookup-table problem from CSV or JSON.

    Columns: ``config`` (canonical JSON), ``feat_<name>`` per feature and
    ``obj@<fidelity>`` per fidelity level. The highest fidelity column is the
    reference fidelity.
    """
    path = Path(path)
    if path.suffix.lower() == ".json":
        columns, rows = _rows_from_json(path)
    else:
        columns, rows = _rows_from_csv(path)
    if "config" not in columns:
        raise TabularSchemaError(f"{path}: missing 'config' column")
    unknown = [c for c in columns if c != "config" and not c.startswith(("feat_", "obj@"))]
    if unknown:
        raise TabularSchemaError(f"{path}: unexpected columns {unknown}")
    feat_cols = [c for c in columns if c.startswith("feat_")]
    obj_cols = [c for c in columns if c.startswith("obj@")]
    if not obj_cols:
        raise MissingFidelityError(f"{path}: no obj@<fidelity> columns")
    fidelities = sorted(_parse_fidelity(c) for c in obj_cols)
    if len(set(fidelities)) != len(fidelities):
        raise TabularSchemaError(f"{path}: repeated fidelity columns")
    col_for = {_parse_fidelity(c): c for c in obj_cols}

    parsed = []
    for k, row in enumerate(rows):
        raw = row.get("config")
        try:
            cfg = json.loads(raw) if isinstance(raw, str) else raw
        except json.JSONDecodeError as exc:
            raise TabularSchemaError(f"{path}: row {k}: config is not JSON ({exc})") from None
        if not isinstance(cfg, dict):
            raise TabularSchemaError(f"{path}: row {k}: config must be a JSON object")
        values = {}
        for f in fidelities:
            v = row.get(col_for[f])
            if v is None or v == "":
                raise MissingFidelityError(f"{path}: row {k}: no objective at fidelity {f:g}")
            values[f] = float(v)
        feats = []
        for c in feat_cols:
            v = row.get(c)
            if v is None or v == "":
                raise TabularSchemaError(f"{path}: row {k}: missing {c}")
            feats.append(float(v))
        parsed.append((cfg, values, tuple(feats)))

    space = space or _infer_space([p[0] for p in parsed])
    table: dict[str, tuple[dict[float, float], tuple[float, ...]]] = {}
    configs = []
    for cfg_json, values, feats in parsed:
        try:
            cfg = space.from_json(cfg_json)
        except (KeyError, ValueError, TypeError) as exc:
            raise TabularSchemaError(f"{path}: config {cfg_json} does not fit the space ({exc})") from None
        key = space.key(cfg)
        if key in table:
            raise DuplicateConfigurationError(f"{path}: configuration {key} appears twice")
        table[key] = (values, feats)
        configs.append(cfg)

    def lookup(config) -> tuple[dict[float, float], tuple[float, ...]]:
        key = space.key(config)
        try:
            return table[key]
        except KeyError:
            raise LookupMissError(f"configuration {key} is not in the table") from None

    return Problem(
        name=name or path.stem,
        space=space,
        objective_fn=lambda config, fidelity: lookup(config)[0][fidelity],
        feature_fn=lambda config: lookup(config)[1],
        feature_names=tuple(c[len("feat_"):] for c in feat_cols),
        reference_fidelity=fidelities[-1],
        fidelities=tuple(fidelities),
        configurations_fn=lambda: list(configs),
        metadata={"path": str(path)},
    )


def export_tabular(problem: Problem, path: str | Path, fidelities: Sequence[float] | None = None) -> Path:
    """Write an enumerable problem as a CSV lookup table (one row per canonical configuration)."""
    path = Path(path)
    fidelities = list(fidelities or problem.fidelities or [problem.reference_fidelity])
    space = problem.space
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["config"] + [f"feat_{n}" for n in problem.feature_names] + [f"obj@{f:g}" for f in fidelities]
        )
        for cfg in problem.unique_configurations():
            canon = space.canonical(cfg)
            writer.writerow(
                [json.dumps(space.to_json(canon), sort_keys=True, separators=(",", ":"))]
                + [repr(z) for z in problem.features(cfg)]
                + [repr(problem.objective(cfg, f)) for f in fidelities]
            )
    return path


def example_table_path() -> Path:
    return Path(__file__).parent / "data" / "toy_table.csv"


# ---------------------------------------------------------------------------
# Oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleEntry:
    niche: int
    config: Any | None
    objective: float | None

    @property
    def empty(self) -> bool:
        return self.config is None


def brute_force_oracle(problem: Problem, niche_set: NicheSet) -> list[OracleEntry]:
    """Exact per-niche optimum at the reference fidelity by exhaustive evaluation.

    Ties are broken by the smallest canonical key, so the result does not
    depend on enumeration order.
    """
    if not problem.enumerable:
        raise NotEnumerableError(f"{problem.name} is not enumerable")
    best: list[tuple[float, str, Any] | None] = [None] * len(niche_set)
    for cfg in problem.configurations():
        member = niche_set.membership(problem.features(cfg))
        if not member.any():
            continue
        y = problem.objective(cfg)
        key = problem.space.key(cfg)
        for j in np.flatnonzero(member):
            cur = best[j]
            if cur is None or (y, key) < (cur[0], cur[1]):
                best[j] = (y, key, cfg)
    return [
        OracleEntry(j + 1, None, None) if b is None else OracleEntry(j + 1, problem.space.canonical(b[2]), b[0])
        for j, b in enumerate(best)
    ]
