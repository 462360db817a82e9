"""Search spaces: cell-based DAG spaces and generic mixed parameter spaces.

Every space exposes the same small protocol used by the optimizers:

* ``sample(rng)`` draws a valid configuration,
* ``mutate(config, rng)`` applies one local edit,
* ``perturb(config, prob, rng)`` mutates every gene independently,
* ``crossover(a, b, rng)`` mixes two parents gene-wise,
* ``encode(config)`` returns a fixed-length float vector,
* ``key(config)`` returns a canonical string used for deduplication,
* ``to_json`` / ``from_json`` give the canonical JSON form.

Configurations and spaces are immutable; all randomness comes from an
explicit ``numpy.random.Generator``.
"""
from __future__ import annotations

import functools
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

MAX_REPAIR_ATTEMPTS = 1000
PATH_RANKING_DRAWS = 100_000
PATH_RANKING_SEED = 20220711


class SpaceError(RuntimeError):
    """Raised when a valid configuration cannot be produced within the repair cap."""


class SearchSpace:
    """Protocol shared by :class:`CellSpace` and :class:`ParamSpace`."""

    def sample(self, rng: np.random.Generator):
        raise NotImplementedError

    def mutate(self, config, rng: np.random.Generator):
        raise NotImplementedError

    def perturb(self, config, prob: float, rng: np.random.Generator):
        raise NotImplementedError

    def crossover(self, a, b, rng: np.random.Generator):
        raise NotImplementedError

    def encode(self, config) -> np.ndarray:
        raise NotImplementedError

    @property
    def encoding_size(self) -> int:
        raise NotImplementedError

    def is_valid(self, config) -> bool:
        raise NotImplementedError

    def to_json(self, config) -> Any:
        raise NotImplementedError

    def from_json(self, data: Any):
        raise NotImplementedError

    def key(self, config) -> str:
        return json.dumps(self.to_json(self.canonical(config)), sort_keys=True, separators=(",", ":"))

    def canonical(self, config):
        return config

    def enumerate(self) -> list:
        raise NotImplementedError(f"{type(self).__name__} is not enumerable")

    @property
    def enumerable(self) -> bool:
        return False


# ---------------------------------------------------------------------------
# Cell spaces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CellConfiguration:
    """A cell DAG. Vertex 0 is the input, the last vertex the output.

    ``edges`` holds sorted ``(i, j)`` pairs with ``i < j`` (upper-triangular
    adjacency), ``ops`` one label per internal vertex.
    """

    edges: tuple[tuple[int, int], ...]
    ops: tuple[str, ...]

    def __post_init__(self):
        edges = tuple(sorted({(int(i), int(j)) for i, j in self.edges}))
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "ops", tuple(self.ops))
        n = self.n_vertices
        for i, j in edges:
            if not 0 <= i < j < n:
                raise ValueError(f"edge {(i, j)} is not upper-triangular in a {n}-vertex cell")

    @property
    def n_vertices(self) -> int:
        return len(self.ops) + 2

    def matrix(self) -> np.ndarray:
        n = self.n_vertices
        adj = np.zeros((n, n), dtype=bool)
        for i, j in self.edges:
            adj[i, j] = True
        return adj

    @classmethod
    def from_matrix(cls, matrix, ops: Sequence[str]) -> "CellConfiguration":
        matrix = np.asarray(matrix, dtype=bool)
        edges = [(int(i), int(j)) for i, j in zip(*np.nonzero(np.triu(matrix, 1)))]
        return cls(tuple(edges), tuple(ops))

    def live_vertices(self) -> list[int]:
        """Vertices on at least one input->output path (empty if none exists)."""
        n = self.n_vertices
        succ: dict[int, list[int]] = {v: [] for v in range(n)}
        pred: dict[int, list[int]] = {v: [] for v in range(n)}
        for i, j in self.edges:
            succ[i].append(j)
            pred[j].append(i)
        fwd = _reach(0, succ)
        bwd = _reach(n - 1, pred)
        if n - 1 not in fwd:
            return []
        return sorted(fwd & bwd)

    def has_path(self) -> bool:
        return bool(self.live_vertices())

    def pruned(self) -> "CellConfiguration":
        """Drop vertices that lie on no input->output path and relabel the rest."""
        live = self.live_vertices()
        if not live:
            raise ValueError("cell has no input->output path")
        index = {v: k for k, v in enumerate(live)}
        edges = tuple((index[i], index[j]) for i, j in self.edges if i in index and j in index)
        ops = tuple(self.ops[v - 1] for v in live[1:-1])
        return CellConfiguration(edges, ops)


def _reach(start: int, graph: dict[int, list[int]]) -> set[int]:
    seen = {start}
    stack = [start]
    while stack:
        v = stack.pop()
        for w in graph[v]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen


def enumerate_paths(config: CellConfiguration) -> list[tuple[str, ...]]:
    """All input->output paths as op-label sequences, in depth-first order.

    Successors are visited in increasing vertex order, so the result is
    deterministic. Paths through distinct vertices that happen to carry the
    same labels appear once per vertex path.
    """
    n = config.n_vertices
    succ: dict[int, list[int]] = {v: [] for v in range(n)}
    for i, j in config.edges:
        succ[i].append(j)
    out: list[tuple[str, ...]] = []

    def walk(v: int, labels: tuple[str, ...]) -> None:
        if v == n - 1:
            out.append(labels)
            return
        for w in succ[v]:
            walk(w, labels if w == n - 1 else labels + (config.ops[w - 1],))

    walk(0, ())
    return out


@dataclass(frozen=True)
class CellSpace(SearchSpace):
    """Cell search space in the style of NAS-Bench-101.

    Raw configurations always carry ``max_vertices`` vertices; vertices off
    every input->output path are pruned before encoding or keying.
    ``path_truncation_length=None`` keeps the full path universe.
    """

    max_vertices: int = 7
    max_edges: int = 9
    op_vocabulary: tuple[str, ...] = ("conv3x3-bn-relu", "conv1x1-bn-relu", "maxpool3x3")
    path_truncation_length: int | None = None
    ranking_draws: int = field(default=PATH_RANKING_DRAWS, compare=True)

    def __post_init__(self):
        object.__setattr__(self, "op_vocabulary", tuple(self.op_vocabulary))
        if self.max_vertices < 3:
            raise ValueError("max_vertices must be >= 3")
        if self.max_edges < 1:
            raise ValueError("max_edges must be >= 1")
        if not self.op_vocabulary:
            raise ValueError("op_vocabulary must be non-empty")
        if len(set(self.op_vocabulary)) != len(self.op_vocabulary):
            raise ValueError("op_vocabulary has duplicate labels")
        if self.path_truncation_length is not None and self.path_truncation_length < 1:
            raise ValueError("path_truncation_length must be >= 1")

    # -- validity -------------------------------------------------------
    @property
    def n_internal(self) -> int:
        return self.max_vertices - 2

    @property
    def upper_entries(self) -> list[tuple[int, int]]:
        n = self.max_vertices
        return [(i, j) for i in range(n) for j in range(i + 1, n)]

    def is_valid(self, config: CellConfiguration) -> bool:
        return (
            config.n_vertices == self.max_vertices
            and len(config.edges) <= self.max_edges
            and all(op in self.op_vocabulary for op in config.ops)
            and config.has_path()
        )

    def canonical(self, config: CellConfiguration) -> CellConfiguration:
        return config.pruned()

    # -- sampling and mutation -----------------------------------------
    def sample(self, rng: np.random.Generator) -> CellConfiguration:
        entries = self.upper_entries
        for _ in range(MAX_REPAIR_ATTEMPTS):
            bits = rng.random(len(entries)) < 0.5
            ops = rng.integers(len(self.op_vocabulary), size=self.n_internal)
            cfg = CellConfiguration(
                tuple(e for e, b in zip(entries, bits) if b),
                tuple(self.op_vocabulary[k] for k in ops),
            )
            if self.is_valid(cfg):
                return cfg
        raise SpaceError(f"no valid cell after {MAX_REPAIR_ATTEMPTS} draws; space over-constrained")

    def _edits(self) -> list[tuple[str, Any]]:
        edits: list[tuple[str, Any]] = [("edge", e) for e in self.upper_entries]
        for v in range(self.n_internal):
            for op in self.op_vocabulary:
                edits.append(("op", (v, op)))
        return edits

    def mutate(self, config: CellConfiguration, rng: np.random.Generator) -> CellConfiguration:
        """Toggle one adjacency entry or relabel one op; reject invalid results."""
        edits = [
            e for e in self._edits() if not (e[0] == "op" and config.ops[e[1][0]] == e[1][1])
        ]
        edge_set = set(config.edges)
        for _ in range(MAX_REPAIR_ATTEMPTS):
            kind, arg = edits[int(rng.integers(len(edits)))]
            if kind == "edge":
                new_edges = edge_set ^ {arg}
                cfg = CellConfiguration(tuple(new_edges), config.ops)
            else:
                v, op = arg
                ops = list(config.ops)
                ops[v] = op
                cfg = CellConfiguration(config.edges, tuple(ops))
            if self.is_valid(cfg):
                return cfg
        raise SpaceError("no valid neighbour found within the rejection cap")

    def perturb(self, config: CellConfiguration, prob: float, rng: np.random.Generator) -> CellConfiguration:
        entries = self.upper_entries
        base = config.matrix()
        for _ in range(MAX_REPAIR_ATTEMPTS):
            flip = rng.random(len(entries)) < prob
            relabel = rng.random(self.n_internal) < prob
            edges = [e for e, f in zip(entries, flip) if base[e] != f]
            ops = list(config.ops)
            for v in np.flatnonzero(relabel):
                choices = [op for op in self.op_vocabulary if op != ops[v]]
                if choices:
                    ops[v] = choices[int(rng.integers(len(choices)))]
            cfg = CellConfiguration(tuple(edges), tuple(ops))
            if self.is_valid(cfg):
                return cfg
        raise SpaceError("gene-wise perturbation failed to produce a valid cell")

    def crossover(self, a: CellConfiguration, b: CellConfiguration, rng: np.random.Generator) -> CellConfiguration:
        entries = self.upper_entries
        ma, mb = a.matrix(), b.matrix()
        for _ in range(MAX_REPAIR_ATTEMPTS):
            take_a = rng.random(len(entries)) < 0.5
            take_a_op = rng.random(self.n_internal) < 0.5
            edges = [e for e, t in zip(entries, take_a) if (ma[e] if t else mb[e])]
            ops = [x if t else y for x, y, t in zip(a.ops, b.ops, take_a_op)]
            cfg = CellConfiguration(tuple(edges), tuple(ops))
            if self.is_valid(cfg):
                return cfg
        raise SpaceError("crossover failed to produce a valid cell")

    # -- enumeration ------------------------------------------------------
    @property
    def enumerable(self) -> bool:
        return True

    def enumerate(self) -> list[CellConfiguration]:
        """Every valid raw configuration, in a fixed order."""
        entries = self.upper_entries
        out = []
        for ops in itertools.product(self.op_vocabulary, repeat=self.n_internal):
            for bits in itertools.product((False, True), repeat=len(entries)):
                if sum(bits) > self.max_edges:
                    continue
                cfg = CellConfiguration(tuple(e for e, b in zip(entries, bits) if b), ops)
                if cfg.has_path():
                    out.append(cfg)
        return out

    # -- encoding ---------------------------------------------------------
    def path_universe(self) -> list[tuple[str, ...]]:
        """Path templates ranked most-likely first, truncated to the configured length."""
        ranked = _ranked_paths(self.max_vertices, self.max_edges, self.op_vocabulary, self.ranking_draws)
        if self.path_truncation_length is None:
            return ranked
        return ranked[: self.path_truncation_length]

    @functools.cached_property
    def _path_index(self) -> dict[tuple[str, ...], int]:
        return {p: k for k, p in enumerate(self.path_universe())}

    @property
    def encoding_size(self) -> int:
        return len(self._path_index)

    def encode(self, config: CellConfiguration) -> np.ndarray:
        return encode_path_truncated(config, self)

    # -- serialization ------------------------------------------------------
    def to_json(self, config: CellConfiguration) -> dict:
        return {"edges": [list(e) for e in config.edges], "ops": list(config.ops)}

    def from_json(self, data: Any) -> CellConfiguration:
        if isinstance(data, str):
            data = json.loads(data)
        return CellConfiguration(tuple(tuple(e) for e in data["edges"]), tuple(data["ops"]))


def encode_path_truncated(config: CellConfiguration, space: CellSpace) -> np.ndarray:
    """One-hot presence vector over the space's truncated path universe."""
    index = space._path_index
    vec = np.zeros(len(index))
    for path in enumerate_paths(config.pruned()):
        k = index.get(path)
        if k is not None:
            vec[k] = 1.0
    return vec


@functools.lru_cache(maxsize=32)
def _ranked_paths(max_vertices: int, max_edges: int, ops: tuple[str, ...], draws: int) -> list[tuple[str, ...]]:
    """Rank all op-label path templates by Monte-Carlo presence frequency.

    Cells are drawn exactly as :meth:`CellSpace.sample` draws them (uniform
    edge bits and op labels, conditioned on validity), using a fixed seed so
    the ranking is a property of the space alone. Ties break
    lexicographically on the label tuple.
    """
    n = max_vertices
    entries = [(i, j) for i in range(n) for j in range(i + 1, n)]
    rng = np.random.default_rng(PATH_RANKING_SEED)
    counts: dict[tuple[str, ...], int] = {}
    accepted = 0
    batch = 4096
    while accepted < draws:
        bits = rng.random((batch, len(entries))) < 0.5
        op_idx = rng.integers(len(ops), size=(batch, n - 2))
        adj = np.zeros((batch, n, n), dtype=bool)
        for k, (i, j) in enumerate(entries):
            adj[:, i, j] = bits[:, k]
        ok = bits.sum(axis=1) <= max_edges
        reach = adj[:, 0, :].copy()
        for _ in range(n):
            reach = reach | np.einsum("bi,bij->bj", reach.astype(np.int8), adj.astype(np.int8)).astype(bool)
        ok &= reach[:, n - 1]
        for b in np.flatnonzero(ok):
            if accepted >= draws:
                break
            cfg = CellConfiguration.from_matrix(adj[b], [ops[k] for k in op_idx[b]])
            for path in set(enumerate_paths(cfg.pruned())):
                counts[path] = counts.get(path, 0) + 1
            accepted += 1
    universe = [p for length in range(n - 1) for p in itertools.product(ops, repeat=length)]
    return sorted(universe, key=lambda p: (-counts.get(p, 0), p))


# ---------------------------------------------------------------------------
# Parameter spaces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Categorical:
    name: str
    choices: tuple

    def __post_init__(self):
        object.__setattr__(self, "choices", tuple(self.choices))
        if not self.choices:
            raise ValueError(f"categorical {self.name!r} has no choices")

    @property
    def size(self) -> int | None:
        return len(self.choices)

    def contains(self, value) -> bool:
        return value in self.choices

    def sample(self, rng):
        return self.choices[int(rng.integers(len(self.choices)))]

    def resample_other(self, value, rng):
        others = [c for c in self.choices if c != value]
        return others[int(rng.integers(len(others)))]

    def encode(self, value) -> list[float]:
        return [1.0 if c == value else 0.0 for c in self.choices]

    def values(self) -> list:
        return list(self.choices)


@dataclass(frozen=True)
class Integer:
    name: str
    low: int
    high: int  # inclusive

    def __post_init__(self):
        if self.low > self.high:
            raise ValueError(f"integer {self.name!r}: low > high")

    @property
    def size(self) -> int | None:
        return self.high - self.low + 1

    def contains(self, value) -> bool:
        return isinstance(value, (int, np.integer)) and self.low <= value <= self.high

    def sample(self, rng):
        return int(rng.integers(self.low, self.high + 1))

    def resample_other(self, value, rng):
        v = int(rng.integers(self.low, self.high))
        return v + 1 if v >= value else v

    def encode(self, value) -> list[float]:
        span = self.high - self.low
        return [0.0 if span == 0 else (value - self.low) / span]

    def values(self) -> list:
        return list(range(self.low, self.high + 1))


@dataclass(frozen=True)
class Continuous:
    name: str
    low: float
    high: float
    log: bool = False

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError(f"continuous {self.name!r}: need low < high")
        if self.log and self.low <= 0:
            raise ValueError(f"continuous {self.name!r}: log scale needs low > 0")

    @property
    def size(self) -> int | None:
        return None

    def contains(self, value) -> bool:
        return isinstance(value, (float, int, np.floating)) and self.low <= value <= self.high

    def _to_unit(self, value) -> float:
        if self.log:
            return (math.log(value) - math.log(self.low)) / (math.log(self.high) - math.log(self.low))
        return (value - self.low) / (self.high - self.low)

    def _from_unit(self, u: float) -> float:
        if self.log:
            return float(math.exp(math.log(self.low) + u * (math.log(self.high) - math.log(self.low))))
        return float(self.low + u * (self.high - self.low))

    def sample(self, rng):
        return self._from_unit(float(rng.random()))

    def resample_other(self, value, rng):
        for _ in range(MAX_REPAIR_ATTEMPTS):
            v = self.sample(rng)
            if v != value:
                return v
        raise SpaceError(f"could not resample {self.name!r}")

    def encode(self, value) -> list[float]:
        return [self._to_unit(value)]


Dimension = Categorical | Integer | Continuous


@dataclass(frozen=True)
class ParamConfiguration:
    """Values in the order of the owning space's dimensions."""

    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))


@dataclass(frozen=True)
class ParamSpace(SearchSpace):
    dimensions: tuple

    def __post_init__(self):
        object.__setattr__(self, "dimensions", tuple(self.dimensions))
        names = [d.name for d in self.dimensions]
        if not names:
            raise ValueError("ParamSpace needs at least one dimension")
        if len(set(names)) != len(names):
            raise ValueError("duplicate dimension names")

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dimensions]

    def is_valid(self, config: ParamConfiguration) -> bool:
        return len(config.values) == len(self.dimensions) and all(
            d.contains(v) for d, v in zip(self.dimensions, config.values)
        )

    def sample(self, rng: np.random.Generator) -> ParamConfiguration:
        return ParamConfiguration(tuple(d.sample(rng) for d in self.dimensions))

    def mutate(self, config: ParamConfiguration, rng: np.random.Generator) -> ParamConfiguration:
        """Resample exactly one dimension to a different value."""
        mutable = [k for k, d in enumerate(self.dimensions) if d.size is None or d.size > 1]
        if not mutable:
            raise SpaceError("no dimension can change value")
        k = mutable[int(rng.integers(len(mutable)))]
        values = list(config.values)
        values[k] = self.dimensions[k].resample_other(values[k], rng)
        return ParamConfiguration(tuple(values))

    def perturb(self, config: ParamConfiguration, prob: float, rng: np.random.Generator) -> ParamConfiguration:
        values = list(config.values)
        hits = rng.random(len(values)) < prob
        for k in np.flatnonzero(hits):
            d = self.dimensions[k]
            if d.size is None or d.size > 1:
                values[k] = d.resample_other(values[k], rng)
        return ParamConfiguration(tuple(values))

    def crossover(self, a: ParamConfiguration, b: ParamConfiguration, rng: np.random.Generator) -> ParamConfiguration:
        take_a = rng.random(len(self.dimensions)) < 0.5
        return ParamConfiguration(tuple(x if t else y for x, y, t in zip(a.values, b.values, take_a)))

    @property
    def encoding_size(self) -> int:
        return sum(len(d.choices) if isinstance(d, Categorical) else 1 for d in self.dimensions)

    def encode(self, config: ParamConfiguration) -> np.ndarray:
        out: list[float] = []
        for d, v in zip(self.dimensions, config.values):
            out.extend(d.encode(v))
        return np.asarray(out, dtype=float)

    @property
    def enumerable(self) -> bool:
        return all(d.size is not None for d in self.dimensions)

    def enumerate(self) -> list[ParamConfiguration]:
        if not self.enumerable:
            raise NotImplementedError("space has continuous dimensions")
        return [ParamConfiguration(v) for v in itertools.product(*(d.values() for d in self.dimensions))]

    def to_json(self, config: ParamConfiguration) -> dict:
        return {d.name: _plain(v) for d, v in zip(self.dimensions, config.values)}

    def from_json(self, data: Any) -> ParamConfiguration:
        if isinstance(data, str):
            data = json.loads(data)
        missing = [n for n in self.names if n not in data]
        if missing:
            raise ValueError(f"configuration misses dimensions {missing}")
        return ParamConfiguration(tuple(data[n] for n in self.names))


def _plain(v):
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    return v


# ---------------------------------------------------------------------------
# Functional front-ends
# ---------------------------------------------------------------------------


def sample_random(space: SearchSpace, rng: np.random.Generator):
    return space.sample(rng)


def mutate_local(config, space: SearchSpace, rng: np.random.Generator):
    return space.mutate(config, rng)


def encode(config, space: SearchSpace, fidelity: float | None = None) -> np.ndarray:
    """Encode a configuration, optionally appending the raw fidelity as a last column."""
    vec = space.encode(config)
    if fidelity is None:
        return vec
    return np.append(vec, float(fidelity))


def encode_many(configs: Sequence, space: SearchSpace, fidelity: float | Sequence[float] | None = None) -> np.ndarray:
    if not configs:
        width = space.encoding_size + (0 if fidelity is None else 1)
        return np.zeros((0, width))
    X = np.stack([space.encode(c) for c in configs])
    if fidelity is None:
        return X
    fid = np.broadcast_to(np.asarray(fidelity, dtype=float), (len(configs),))
    return np.column_stack([X, fid])
