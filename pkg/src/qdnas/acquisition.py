"""Acquisition functions and the proposal optimizers that maximize them."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm

from .archive import Niche, NicheSet
from .space import SearchSpace, encode_many
from .surrogate import ForestModel, Prediction

VARIANCE_FLOOR = 1e-12

ScoreFn = Callable[[Sequence], np.ndarray]


def expected_improvement(prediction: Prediction, f_min) -> np.ndarray:
    """``E[max(f_min - y, 0)]`` for ``y ~ Normal(mean, variance)``.

    Below the variance floor the improvement is deterministic.
    """
    mu = np.asarray(prediction.mean, dtype=float)
    var = np.asarray(prediction.variance, dtype=float)
    f_min = np.asarray(f_min, dtype=float)
    gap = f_min - mu
    degenerate = var < VARIANCE_FLOOR
    sigma = np.sqrt(np.where(degenerate, 1.0, var))
    z = gap / sigma
    ei = gap * norm.cdf(z) + sigma * norm.pdf(z)
    out = np.where(degenerate, np.maximum(gap, 0.0), np.maximum(ei, 0.0))
    return out if out.ndim else float(out)


def membership_probability(feature_predictions: Sequence[Prediction], niche: Niche) -> np.ndarray:
    """Probability that Normal feature predictions fall inside every interval of ``niche``."""
    if len(feature_predictions) != niche.n_features:
        raise ValueError("one prediction per bounded feature is required")
    prob = 1.0
    for pred, (lo, hi) in zip(feature_predictions, niche.bounds):
        mu = np.asarray(pred.mean, dtype=float)
        var = np.asarray(pred.variance, dtype=float)
        degenerate = var < VARIANCE_FLOOR
        sigma = np.sqrt(np.where(degenerate, 1.0, var))
        p = norm.cdf((hi - mu) / sigma) - norm.cdf((lo - mu) / sigma)
        inside = (lo <= mu) & (mu < hi)
        prob = prob * np.where(degenerate, inside.astype(float), np.clip(p, 0.0, 1.0))
    return prob


@dataclass
class AcquisitionContext:
    """Everything EJIE needs: surrogates, niches and per-niche incumbents.

    ``f_min[j]`` is ``None`` for niches without an observed member; those
    use ``empty_value`` (the problem's penalty) as the improvement threshold.
    When ``fidelity`` is set it is appended as the last input of the
    objective model; feature models never see it.
    """

    objective_model: ForestModel
    feature_models: list[ForestModel]
    niche_set: NicheSet
    f_min: list[float | None]
    empty_value: float = 100.0
    fidelity: float | None = None

    def __post_init__(self):
        if len(self.feature_models) != self.niche_set.n_features:
            raise ValueError("need one feature model per niche feature")
        if len(self.f_min) != len(self.niche_set):
            raise ValueError("need one f_min per niche")

    def thresholds(self) -> np.ndarray:
        return np.array([self.empty_value if f is None else f for f in self.f_min], dtype=float)

    def components(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Membership probabilities and EIs, both shaped ``(n, c)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Xo = X if self.fidelity is None else np.column_stack([X, np.full(len(X), float(self.fidelity))])
        obj = self.objective_model.predict(Xo)
        feats = [m.predict(X) for m in self.feature_models]
        probs = np.column_stack([membership_probability(feats, n) * np.ones(len(X)) for n in self.niche_set])
        eis = np.column_stack([expected_improvement(obj, t) * np.ones(len(X)) for t in self.thresholds()])
        return probs, eis

    def __call__(self, X: np.ndarray) -> np.ndarray:
        probs, eis = self.components(X)
        return (probs * eis).sum(axis=1)


def ejie(context: AcquisitionContext, encoding) -> np.ndarray:
    """Expected joint improvement of elites for one or more encodings."""
    out = context(encoding)
    return out if np.ndim(encoding) > 1 else float(out[0])


# -- ParEGO machinery ----------------------------------------------------------


def scalarize_tchebycheff(objectives, weights, gamma: float = 0.05) -> np.ndarray:
    """Augmented Tchebycheff value ``max_i(w_i f_i) + gamma * sum_i(w_i f_i)``.

    ``objectives`` may be one vector or an ``(n, k)`` array.
    """
    F = np.asarray(objectives, dtype=float)
    w = np.asarray(weights, dtype=float)
    if F.shape[-1] != w.shape[-1]:
        raise ValueError(f"{F.shape[-1]} objectives but {w.shape[-1]} weights")
    wf = F * w
    out = wf.max(axis=-1) + gamma * wf.sum(axis=-1)
    return out if out.ndim else float(out)


def weight_grid(k: int, s: int) -> list[tuple[float, ...]]:
    """All weight vectors with components ``l/s`` summing to one, ``C(s+k-1, k-1)`` in total."""
    if k < 2 or s < 1:
        raise ValueError("need k >= 2 and s >= 1")
    grid = []
    for head in itertools.product(range(s + 1), repeat=k - 1):
        rest = s - sum(head)
        if rest >= 0:
            grid.append(tuple(l / s for l in (*head, rest)))
    return grid


def default_granularity(k: int) -> int:
    return {2: 100, 3: 13}.get(k, 5)


def normalize_objectives(F: np.ndarray) -> np.ndarray:
    """Min-max normalize columns to [0, 1]; constant columns map to 0."""
    F = np.asarray(F, dtype=float)
    lo, hi = F.min(axis=0), F.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return np.where(hi > lo, (F - lo) / span, 0.0)


def scalarized_ei(model: ForestModel, f_min: float, fidelity: float | None = None) -> Callable[[np.ndarray], np.ndarray]:
    def score(X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if fidelity is not None:
            X = np.column_stack([X, np.full(len(X), float(fidelity))])
        return np.atleast_1d(expected_improvement(model.predict(X), f_min))

    return score


# -- proposal optimizers -------------------------------------------------------------


@dataclass
class ProposalStats:
    n_generated: int = 0
    n_duplicates: int = 0
    n_padded: int = 0
    scores: list[float] = field(default_factory=list)


def _split_counts(total: int, parts: int) -> list[int]:
    base, rem = divmod(total, parts)
    return [base + (1 if k < rem else 0) for k in range(parts)]


def _rank(
    pool: list,
    score: Callable[[np.ndarray], np.ndarray],
    space: SearchSpace,
    rng: np.random.Generator,
    batch_size: int,
    exclude: set[str],
    stats: ProposalStats | None,
) -> list:
    seen = set(exclude)
    unique = []
    for cfg in pool:
        k = space.key(cfg)
        if k in seen:
            continue
        seen.add(k)
        unique.append(cfg)
    n_dup = len(pool) - len(unique)
    attempts = 0
    while len(unique) < batch_size and attempts < 100 * batch_size:
        cfg = space.sample(rng)
        attempts += 1
        k = space.key(cfg)
        if k not in seen:
            seen.add(k)
            unique.append(cfg)
    chosen: list = []
    if unique:
        values = np.asarray(score(encode_many(unique, space)), dtype=float)
        order = np.argsort(-values, kind="stable")[:batch_size]
        chosen = [unique[k] for k in order]
        if stats is not None:
            stats.scores = [float(values[k]) for k in order]
    n_pad = 0
    while len(chosen) < batch_size:
        # space exhausted: allow re-evaluation of archived configurations
        chosen.append(space.sample(rng))
        n_pad += 1
    if stats is not None:
        stats.n_generated = len(pool)
        stats.n_duplicates = n_dup
        stats.n_padded = n_pad
    return chosen


def propose_by_mutation(
    score: Callable[[np.ndarray], np.ndarray],
    incumbents: Sequence,
    space: SearchSpace,
    n_candidates: int,
    rng: np.random.Generator,
    batch_size: int = 1,
    exclude: set[str] | None = None,
    stats: ProposalStats | None = None,
) -> list:
    """Mutate incumbents, score the candidates and return the best ``batch_size``.

    Candidates are split evenly over incumbents (earlier incumbents take the
    remainder). Candidates already in ``exclude`` (canonical keys of archived
    configurations) or repeated within the pool are dropped before ranking;
    ties keep generation order. Without incumbents, candidates are sampled
    uniformly instead.
    """
    if n_candidates < batch_size:
        raise ValueError("n_candidates must be >= batch_size")
    if not incumbents:
        pool = [space.sample(rng) for _ in range(n_candidates)]
    else:
        pool = []
        for inc, count in zip(incumbents, _split_counts(n_candidates, len(incumbents))):
            pool.extend(space.mutate(inc, rng) for _ in range(count))
    return _rank(pool, score, space, rng, batch_size, exclude or set(), stats)


def propose_by_random_search(
    score: Callable[[np.ndarray], np.ndarray],
    space: SearchSpace,
    n_candidates: int,
    rng: np.random.Generator,
    batch_size: int = 1,
    exclude: set[str] | None = None,
    stats: ProposalStats | None = None,
) -> list:
    """Like :func:`propose_by_mutation` with uniformly sampled candidates."""
    if n_candidates < batch_size:
        raise ValueError("n_candidates must be >= batch_size")
    pool = [space.sample(rng) for _ in range(n_candidates)]
    return _rank(pool, score, space, rng, batch_size, exclude or set(), stats)

