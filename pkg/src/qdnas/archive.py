"""Niches, niche membership, the evaluation log and per-niche elites."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

LAYOUTS = ("nested", "disjoint", "general")


@dataclass(frozen=True)
class Niche:
    """Half-open box ``[lower, upper)`` per feature. Infinite bounds are allowed."""

    bounds: tuple[tuple[float, float], ...]
    id: int = 0

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        for lo, hi in bounds:
            if not lo < hi:
                raise ValueError(f"niche {self.id}: empty interval [{lo}, {hi})")
        object.__setattr__(self, "bounds", bounds)

    @property
    def n_features(self) -> int:
        return len(self.bounds)

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.bounds])

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.bounds])

    def contains(self, features: Sequence[float]) -> bool:
        if len(features) != len(self.bounds):
            raise ValueError(f"expected {len(self.bounds)} features, got {len(features)}")
        return all(lo <= z < hi for z, (lo, hi) in zip(features, self.bounds))

    def within(self, other: "Niche") -> bool:
        return all(
            olo <= lo and hi <= ohi for (lo, hi), (olo, ohi) in zip(self.bounds, other.bounds)
        )

    def intersects(self, other: "Niche") -> bool:
        return all(
            max(lo, olo) < min(hi, ohi) for (lo, hi), (olo, ohi) in zip(self.bounds, other.bounds)
        )


@dataclass(frozen=True)
class NicheSet:
    niches: tuple[Niche, ...]
    layout: str = "general"
    name: str = ""

    def __post_init__(self):
        niches = tuple(
            n if n.id else Niche(n.bounds, id=k + 1) for k, n in enumerate(self.niches)
        )
        object.__setattr__(self, "niches", niches)
        if not niches:
            raise ValueError("a niche set needs at least one niche")
        widths = {n.n_features for n in niches}
        if len(widths) != 1:
            raise ValueError("all niches must bound the same number of features")
        if self.layout not in LAYOUTS:
            raise ValueError(f"layout must be one of {LAYOUTS}")
        if self.layout == "nested":
            for a, b in zip(niches, niches[1:]):
                if not a.within(b) or a.bounds == b.bounds:
                    raise ValueError(f"niche {a.id} is not strictly nested in niche {b.id}")
        if self.layout == "disjoint":
            for k, a in enumerate(niches):
                for b in niches[k + 1 :]:
                    if a.intersects(b):
                        raise ValueError(f"niches {a.id} and {b.id} overlap")

    def __len__(self) -> int:
        return len(self.niches)

    def __iter__(self):
        return iter(self.niches)

    @property
    def n_features(self) -> int:
        return self.niches[0].n_features

    @classmethod
    def nested(cls, upper_bounds: Sequence[float | None], lower: float = 0.0, name: str = "") -> "NicheSet":
        """Single-feature nested niches ``[lower, u_1), [lower, u_2), ...``; ``None`` means +inf."""
        niches = [
            Niche(((lower, math.inf if u is None else u),), id=k + 1) for k, u in enumerate(upper_bounds)
        ]
        return cls(tuple(niches), layout="nested", name=name)

    @classmethod
    def unbounded(cls, n_features: int = 1) -> "NicheSet":
        return cls((Niche(((-math.inf, math.inf),) * n_features, id=1),), layout="general")

    def membership(self, features: Sequence[float]) -> np.ndarray:
        return membership(features, self)

    def membership_matrix(self, features: np.ndarray) -> np.ndarray:
        """Vectorized membership for an ``(n, k-1)`` feature array -> ``(n, c)`` bools."""
        F = np.asarray(features, dtype=float).reshape(-1, self.n_features)
        lo = np.stack([n.lower for n in self.niches])  # (c, k-1)
        hi = np.stack([n.upper for n in self.niches])
        inside = (F[:, None, :] >= lo[None]) & (F[:, None, :] < hi[None])
        return inside.all(axis=2)

    # -- serialization -------------------------------------------------------
    def to_json(self) -> dict:
        return {
            "benchmark": self.name,
            "layout": self.layout,
            "niches": [
                {"id": n.id, "bounds": [[_enc(lo), _enc(hi)] for lo, hi in n.bounds]} for n in self.niches
            ],
        }

    @classmethod
    def from_json(cls, data: dict | str) -> "NicheSet":
        if isinstance(data, str):
            data = json.loads(data)
        niches = []
        for entry in data["niches"]:
            bounds = []
            for lo, hi in entry["bounds"]:
                bounds.append((-math.inf if lo is None else lo, math.inf if hi is None else hi))
            niches.append(Niche(tuple(bounds), id=int(entry["id"])))
        return cls(tuple(niches), layout=data.get("layout", "general"), name=data.get("benchmark", ""))


def _enc(x: float):
    return None if math.isinf(x) else x


def membership(features: Sequence[float], niche_set: NicheSet) -> np.ndarray:
    """Boolean per niche: ``l_ij <= z_i < u_ij`` for every feature ``i``."""
    features = list(features)
    if len(features) != niche_set.n_features:
        raise ValueError(f"expected {niche_set.n_features} features, got {len(features)}")
    return np.array([n.contains(features) for n in niche_set.niches], dtype=bool)


def niches_from_percentiles(
    feature_samples: Sequence[float], percentiles: Sequence[float], name: str = ""
) -> NicheSet:
    """Nested niches ``[0, q_p)`` for every percentile ``p`` plus a final ``[0, inf)``.

    Quantiles use linear interpolation between order statistics. A boundary
    that lands on the sample maximum is moved to the next float above it, so
    the 100th percentile niche contains every sample.
    """
    samples = np.asarray(feature_samples, dtype=float).ravel()
    if samples.size == 0:
        raise ValueError("need at least one feature sample")
    ps = np.asarray(percentiles, dtype=float)
    if ps.size == 0 or np.any(ps <= 0) or np.any(ps > 100) or np.any(np.diff(ps) <= 0):
        raise ValueError("percentiles must be strictly increasing within (0, 100]")
    top = samples.max()
    uppers: list[float | None] = []
    for q in np.percentile(samples, ps, method="linear"):
        q = float(q)
        uppers.append(float(np.nextafter(top, np.inf)) if q >= top else q)
    uppers.append(None)
    return NicheSet.nested(uppers, name=name)


@dataclass(frozen=True)
class Evaluation:
    """One logged evaluation.

    ``budget`` is the cumulative fidelity spent including this evaluation.
    ``penalized`` marks evaluations charged the penalty objective (e.g.
    constraint violators in regularized evolution); they are logged but never
    become elites.
    """

    config: Any
    fidelity: float
    objective: float
    features: tuple[float, ...]
    index: int
    budget: float
    penalized: bool = False


@dataclass
class Archive:
    """Append-only log plus per-niche elites at the reference fidelity."""

    niche_set: NicheSet
    reference_fidelity: float
    evaluations: list[Evaluation] = field(default_factory=list)
    elites: list[Evaluation | None] = field(default_factory=list)
    listeners: list[Callable[[Evaluation, np.ndarray], None]] = field(default_factory=list)

    def __post_init__(self):
        if not self.elites:
            self.elites = [None] * len(self.niche_set)
        self._features: dict[str, tuple[float, ...]] = {}
        self._memberships: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self.evaluations)

    @property
    def budget(self) -> float:
        return self.evaluations[-1].budget if self.evaluations else 0.0

    def next_index(self) -> int:
        return len(self.evaluations)

    def cached_features(self, key: str) -> tuple[float, ...] | None:
        return self._features.get(key)

    def cache_features(self, key: str, features: Sequence[float]) -> None:
        self._features.setdefault(key, tuple(float(z) for z in features))

    def memberships(self) -> np.ndarray:
        if not self._memberships:
            return np.zeros((0, len(self.niche_set)), dtype=bool)
        return np.stack(self._memberships)

    def record(self, evaluation: Evaluation) -> list[int]:
        """Append to the log and update elites; returns the niches whose elite changed."""
        if self.evaluations and not evaluation.budget > self.evaluations[-1].budget:
            raise ValueError("cumulative budget must strictly increase along the log")
        member = membership(evaluation.features, self.niche_set)
        self.evaluations.append(evaluation)
        self._memberships.append(member)
        changed = []
        if evaluation.fidelity == self.reference_fidelity and not evaluation.penalized:
            for j in np.flatnonzero(member):
                elite = self.elites[j]
                if elite is None or evaluation.objective < elite.objective:
                    self.elites[j] = evaluation
                    changed.append(int(j))
        for listener in self.listeners:
            listener(evaluation, member)
        return changed

    def elite_objectives(self) -> list[float | None]:
        return [None if e is None else e.objective for e in self.elites]

    def full_fidelity(self) -> list[Evaluation]:
        return [e for e in self.evaluations if e.fidelity == self.reference_fidelity]

    def at_fidelity(self, fidelity: float) -> list[Evaluation]:
        return [e for e in self.evaluations if e.fidelity == fidelity]

    @classmethod
    def replay(
        cls, evaluations: Iterable[Evaluation], niche_set: NicheSet, reference_fidelity: float
    ) -> "Archive":
        archive = cls(niche_set, reference_fidelity)
        for ev in evaluations:
            archive.record(ev)
        return archive


def record(archive: Archive, evaluation: Evaluation) -> list[Evaluation | None]:
    archive.record(evaluation)
    return list(archive.elites)
