"""Performance metrics: summed niche error, anytime curves, Pareto tools, hypervolume, ERT."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .archive import Archive, Evaluation, NicheSet, membership

UNREACHED = math.inf


def summed_niche_error(elite_objectives: Sequence[float | None], penalty: float = 100.0) -> float:
    """Sum of per-niche elite objectives; empty niches (``None``) cost ``penalty``."""
    return float(sum(penalty if y is None else y for y in elite_objectives))


def archive_error(archive: Archive, penalty: float = 100.0) -> float:
    return summed_niche_error(archive.elite_objectives(), penalty)


@dataclass(frozen=True)
class AnytimeCurve:
    """Step function: ``values[k]`` holds from ``budgets[k]`` until the next budget."""

    budgets: np.ndarray
    values: np.ndarray
    initial: float
    total_budget: float

    def at(self, budget: float) -> float:
        k = np.searchsorted(self.budgets, budget, side="right") - 1
        return self.initial if k < 0 else float(self.values[k])

    def sample(self, grid: Sequence[float]) -> np.ndarray:
        """Last-value-carried-forward evaluation on a budget grid."""
        idx = np.searchsorted(self.budgets, np.asarray(grid, dtype=float), side="right") - 1
        return np.where(idx < 0, self.initial, self.values[np.maximum(idx, 0)] if len(self.values) else self.initial)

    def first_hit(self, target: float) -> float | None:
        """Smallest budget at which the curve is ``<= target``; ``None`` if never."""
        if self.initial <= target:
            return 0.0
        hits = np.flatnonzero(self.values <= target)
        return float(self.budgets[hits[0]]) if hits.size else None


def anytime_curve(
    evaluations: Iterable[Evaluation],
    niche_set: NicheSet,
    reference_fidelity: float,
    penalty: float = 100.0,
    total_budget: float | None = None,
) -> AnytimeCurve:
    """Summed niche error after every evaluation, from a log replay."""
    best: list[float | None] = [None] * len(niche_set)
    budgets, values = [], []
    last = 0.0
    for ev in evaluations:
        if ev.fidelity == reference_fidelity and not ev.penalized:
            for j in np.flatnonzero(membership(ev.features, niche_set)):
                if best[j] is None or ev.objective < best[j]:
                    best[j] = ev.objective
        budgets.append(ev.budget)
        values.append(summed_niche_error(best, penalty))
        last = ev.budget
    return AnytimeCurve(
        np.asarray(budgets, dtype=float),
        np.asarray(values, dtype=float),
        initial=penalty * len(niche_set),
        total_budget=float(total_budget if total_budget is not None else last),
    )


def archive_curve(archive: Archive, penalty: float = 100.0, total_budget: float | None = None) -> AnytimeCurve:
    return anytime_curve(archive.evaluations, archive.niche_set, archive.reference_fidelity, penalty, total_budget)


# -- dominance and Pareto fronts ---------------------------------------------------


def dominates(u: Sequence[float], v: Sequence[float]) -> bool:
    """``u`` is no worse everywhere and strictly better somewhere (minimization)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return bool(np.all(u <= v) and np.any(u < v))


def pareto_mask(points) -> np.ndarray:
    """Boolean mask of non-dominated rows, found by a lexicographic sweep."""
    P = np.asarray(points, dtype=float)
    if P.ndim != 2:
        P = P.reshape(len(P), -1)
    n = len(P)
    order = np.lexsort(P.T[::-1])
    keep = np.zeros(n, dtype=bool)
    front: list[int] = []
    for i in order:
        p = P[i]
        if front and np.array_equal(P[front[-1]], p):
            keep[i] = True  # duplicates are adjacent; equal points never dominate each other
            continue
        # only points earlier in lexicographic order can dominate p
        if front:
            F = P[front]
            if np.any(np.all(F <= p, axis=1) & np.any(F < p, axis=1)):
                continue
        front.append(int(i))
        keep[i] = True
    return keep


def pareto_front(points) -> np.ndarray:
    """Indices of the non-dominated points, in input order."""
    return np.flatnonzero(pareto_mask(points))


def non_dominated_sort(points) -> list[np.ndarray]:
    """Successive fronts (fast non-dominated sorting); indices in input order."""
    P = np.asarray(points, dtype=float)
    n = len(P)
    if n == 0:
        return []
    le = np.all(P[:, None, :] <= P[None, :, :], axis=2)
    lt = np.any(P[:, None, :] < P[None, :, :], axis=2)
    dom = le & lt  # dom[i, j]: i dominates j
    count = dom.sum(axis=0)
    fronts = []
    current = np.flatnonzero(count == 0)
    while current.size:
        fronts.append(current)
        count = count - dom[current].sum(axis=0)
        count[current] = -1
        current = np.flatnonzero(count == 0)
    return fronts


# -- hypervolume ---------------------------------------------------------------------


def _hv2d(P: np.ndarray, ref: np.ndarray) -> float:
    P = P[np.argsort(P[:, 0], kind="stable")]
    volume = 0.0
    best_y = ref[1]
    for x, y in P:
        if y < best_y:
            volume += (ref[0] - x) * (best_y - y)
            best_y = y
    return volume


def hypervolume(points, nadir) -> float:
    """Volume dominated by ``points`` and bounded by ``nadir`` (minimization, 1 to 3 objectives).

    Points not weakly dominating the nadir are ignored.
    """
    ref = np.asarray(nadir, dtype=float)
    P = np.asarray(points, dtype=float).reshape(-1, ref.size)
    d = ref.size
    if d > 3:
        raise NotImplementedError("hypervolume supports at most 3 objectives")
    P = P[np.all(P <= ref, axis=1)]
    if len(P) == 0:
        return 0.0
    # canonical form (unique non-dominated points, sorted) so equal sets give bit-equal volumes
    P = np.unique(P[pareto_mask(P)], axis=0)
    if d == 1:
        return float(ref[0] - P[:, 0].min())
    if d == 2:
        return float(_hv2d(P, ref))
    # slice along the last objective
    P = P[np.argsort(P[:, 2], kind="stable")]
    volume = 0.0
    for k in range(len(P)):
        z_lo = P[k, 2]
        z_hi = P[k + 1, 2] if k + 1 < len(P) else ref[2]
        if z_hi > z_lo:
            volume += _hv2d(P[: k + 1, :2], ref[:2]) * (z_hi - z_lo)
    return float(volume)


def exclusive_contributions(points, nadir) -> np.ndarray:
    """Hypervolume lost when each point is removed on its own."""
    P = np.asarray(points, dtype=float)
    total = hypervolume(P, nadir)
    return np.array([total - hypervolume(np.delete(P, k, axis=0), nadir) for k in range(len(P))])


def reference_front(fronts: Iterable) -> np.ndarray:
    """Pareto front of the union of several fronts."""
    stacked = [np.asarray(f, dtype=float) for f in fronts if len(f)]
    if not stacked:
        return np.zeros((0, 0))
    U = np.vstack(stacked)
    return U[pareto_mask(U)]


def hypervolume_indicator(run_front, reference, nadir) -> float:
    """``HV(reference) - HV(run)``; the reference is merged with the run so the value is >= 0."""
    run = np.asarray(run_front, dtype=float).reshape(-1, len(nadir))
    ref = np.asarray(reference, dtype=float).reshape(-1, len(nadir))
    merged = reference_front([ref, run]) if len(ref) or len(run) else ref
    return max(0.0, hypervolume(merged, nadir) - hypervolume(run, nadir))


def objective_vectors(evaluations: Iterable[Evaluation], reference_fidelity: float, log_features: bool = False) -> np.ndarray:
    """``(objective, features...)`` rows of the reference-fidelity evaluations."""
    rows = []
    for e in evaluations:
        if e.fidelity == reference_fidelity and not e.penalized:
            feats = [math.log(z) for z in e.features] if log_features else list(e.features)
            rows.append([e.objective, *feats])
    return np.asarray(rows, dtype=float)


# -- efficiency ---------------------------------------------------------------------------


def ert(curves: Sequence[AnytimeCurve], target: float) -> float:
    """Expected running time to reach ``target`` (COCO convention).

    Successful runs contribute the budget at their first hit, failed runs
    their total budget; the sum is divided by the number of successes.
    Returns :data:`UNREACHED` when no run succeeds.
    """
    spent = 0.0
    successes = 0
    for curve in curves:
        hit = curve.first_hit(target)
        if hit is None:
            spent += curve.total_budget
        else:
            spent += hit
            successes += 1
    return spent / successes if successes else UNREACHED


def niche_miss_frequency(final_elites: Sequence[Sequence[float | None]]) -> np.ndarray:
    """Per niche, the fraction of replications whose final elite is missing."""
    E = [[e is None for e in row] for row in final_elites]
    if not E:
        raise ValueError("need at least one replication")
    return np.asarray(E, dtype=float).mean(axis=0)


def average_ranks(table: np.ndarray) -> np.ndarray:
    """Rank columns (optimizers) within each row (problem); ties get their average rank."""
    from scipy.stats import rankdata

    T = np.asarray(table, dtype=float)
    return np.vstack([rankdata(row, method="average") for row in T])
