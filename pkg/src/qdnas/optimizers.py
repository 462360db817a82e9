"""Full-fidelity optimizers on a shared ask/tell loop.

Every optimizer evaluates at the problem's reference fidelity only, so one
evaluation costs ``R`` fidelity units and ``OptimizerConfig.budget`` counts
full evaluations.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable

import numpy as np

from .acquisition import (
    AcquisitionContext,
    default_granularity,
    normalize_objectives,
    propose_by_mutation,
    propose_by_random_search,
    scalarize_tchebycheff,
    scalarized_ei,
    weight_grid,
)
from .archive import Archive, Evaluation, Niche, NicheSet
from .metrics import pareto_front
from .problems import EvaluationError, Problem
from .space import encode_many
from .surrogate import ForestParams, SurrogateError, fit

log = logging.getLogger(__name__)

PROPOSERS = ("mutation", "random")


@dataclass(frozen=True)
class OptimizerConfig:
    budget: int = 60  # full evaluations, initial design included
    design_size: int = 10
    seed: int = 0
    n_candidates: int = 100
    acquisition_optimizer: str = "mutation"
    forest: ForestParams = ForestParams()
    gamma: float = 0.05
    weight_granularity: int | None = None
    # evolutionary baselines
    population_size: int = 100
    mutation_prob: float = 0.1
    mutation_ratio: float = 0.5
    parent_ratio: float = 0.25

    def __post_init__(self):
        if self.budget < 0:
            raise ValueError("budget must be non-negative")
        if self.design_size < 2:
            raise ValueError("design_size must be >= 2 for model-based optimizers")
        if self.acquisition_optimizer not in PROPOSERS:
            raise ValueError(f"acquisition_optimizer must be one of {PROPOSERS}")
        if not 0 <= self.mutation_prob <= 1 or not 0 <= self.mutation_ratio <= 1:
            raise ValueError("mutation probability and ratio must lie in [0, 1]")
        if not 0 < self.parent_ratio <= 1:
            raise ValueError("parent_ratio must lie in (0, 1]")


# -- evaluation ----------------------------------------------------------------------


def evaluate(
    problem: Problem, archive: Archive, config, fidelity: float | None = None, penalized: bool = False
) -> Evaluation:
    """Evaluate ``config``, log it and update elites.

    Features are computed once per configuration and cached on the archive.
    Any failure raises :class:`EvaluationError` carrying the partial archive.
    """
    fidelity = problem.reference_fidelity if fidelity is None else fidelity
    key = problem.space.key(config)
    try:
        features = archive.cached_features(key)
        if features is None:
            features = problem.features(config)
            archive.cache_features(key, features)
            features = archive.cached_features(key)
        y = problem.penalty if penalized else problem.objective(config, fidelity)
    except Exception as exc:
        raise EvaluationError(f"evaluation of {key} at fidelity {fidelity} failed: {exc}", archive) from exc
    ev = Evaluation(
        config=config,
        fidelity=float(fidelity),
        objective=float(y),
        features=features,
        index=archive.next_index(),
        budget=archive.budget + float(fidelity),
        penalized=penalized,
    )
    archive.record(ev)
    return ev


@dataclass
class AskTellState:
    archive: Archive
    rng: np.random.Generator
    iteration: int = 0
    asked: int = 0
    told: int = 0
    extra: dict = field(default_factory=dict)


ProposeFn = Callable[[AskTellState, Problem], Any]


def run_generic_qdo(
    propose: ProposeFn,
    problem: Problem,
    niche_set: NicheSet,
    config: OptimizerConfig,
    archive: Archive | None = None,
) -> Archive:
    """Initial design, then propose-evaluate-update until ``config.budget`` evaluations."""
    rng = np.random.default_rng(config.seed)
    archive = archive if archive is not None else Archive(niche_set, problem.reference_fidelity)
    state = AskTellState(archive, rng)
    for _ in range(min(config.design_size, config.budget)):
        evaluate(problem, archive, problem.space.sample(rng))
    while len(archive) < config.budget:
        cand = propose(state, problem)
        state.asked += 1
        evaluate(problem, archive, cand)
        state.told += 1
        state.iteration += 1
    return archive


# -- surrogate plumbing shared with the multifidelity optimizers -------------------


def feature_models(problem: Problem, archive: Archive, rng: np.random.Generator, params: ForestParams):
    """One forest per feature, trained on every distinct logged configuration."""
    seen: dict[str, Evaluation] = {}
    for e in archive.evaluations:
        seen.setdefault(problem.space.key(e.config), e)
    rows = list(seen.values())
    X = encode_many([e.config for e in rows], problem.space)
    F = np.array([e.features for e in rows], dtype=float)
    return [fit(X, F[:, i], rng, params) for i in range(F.shape[1])]


def incumbents_for(problem: Problem, elites) -> list:
    """Distinct elite configurations in niche order."""
    out, seen = [], set()
    for e in elites:
        if e is None:
            continue
        k = problem.space.key(e.config)
        if k not in seen:
            seen.add(k)
            out.append(e.config)
    return out


def _exclude(problem: Problem, archive: Archive, fidelity: float | None = None) -> set[str]:
    return {
        problem.space.key(e.config)
        for e in archive.evaluations
        if fidelity is None or e.fidelity == fidelity
    }


def _propose(score, incumbents, problem, config, rng, batch_size, exclude):
    if config.acquisition_optimizer == "random":
        return propose_by_random_search(score, problem.space, config.n_candidates, rng, batch_size, exclude)
    return propose_by_mutation(score, incumbents, problem.space, config.n_candidates, rng, batch_size, exclude)


# -- optimizers ----------------------------------------------------------------------------


def random_search(problem: Problem, niche_set: NicheSet, config: OptimizerConfig = OptimizerConfig()) -> Archive:
    return run_generic_qdo(lambda state, p: p.space.sample(state.rng), problem, niche_set, config)


def bop_elites_star(problem: Problem, niche_set: NicheSet, config: OptimizerConfig = OptimizerConfig()) -> Archive:
    """Random-forest BOP-Elites: EJIE maximized by mutating per-niche incumbents."""
    # feature forests draw from their own stream so that the main stream
    # matches a plain EI optimizer whenever the niche term is trivial
    feature_rng = np.random.default_rng([config.seed, 1])

    def propose(state: AskTellState, p: Problem):
        archive = state.archive
        rows = [e for e in archive.full_fidelity() if not e.penalized]
        try:
            X = encode_many([e.config for e in rows], p.space)
            obj_model = fit(X, [e.objective for e in rows], state.rng, config.forest)
            feat_models = feature_models(p, archive, feature_rng, config.forest)
        except SurrogateError as exc:
            log.warning("surrogate fit failed (%s); proposing at random", exc)
            return p.space.sample(state.rng)
        ctx = AcquisitionContext(
            obj_model, feat_models, niche_set, archive.elite_objectives(), empty_value=p.penalty
        )
        incumbents = incumbents_for(p, archive.elites)
        return _propose(ctx, incumbents, p, config, state.rng, 1, _exclude(p, archive))[0]

    return run_generic_qdo(propose, problem, niche_set, config)


def ei_bo(problem: Problem, niche_set: NicheSet, config: OptimizerConfig = OptimizerConfig()) -> Archive:
    """Plain single-objective EI optimization; niches only used for bookkeeping."""

    def propose(state: AskTellState, p: Problem):
        archive = state.archive
        rows = [e for e in archive.full_fidelity() if not e.penalized]
        try:
            X = encode_many([e.config for e in rows], p.space)
            model = fit(X, [e.objective for e in rows], state.rng, config.forest)
        except SurrogateError as exc:
            log.warning("surrogate fit failed (%s); proposing at random", exc)
            return p.space.sample(state.rng)
        best = min(rows, key=lambda e: e.objective)
        score = scalarized_ei(model, best.objective)
        return _propose(score, [best.config], p, config, state.rng, 1, _exclude(p, archive))[0]

    return run_generic_qdo(propose, problem, niche_set, config)


def scalarized_targets(rows: list[Evaluation], weights, gamma: float) -> np.ndarray:
    F = np.array([[e.objective, *e.features] for e in rows], dtype=float)
    return scalarize_tchebycheff(normalize_objectives(F), weights, gamma)


def parego_star(problem: Problem, niche_set: NicheSet, config: OptimizerConfig = OptimizerConfig()) -> Archive:
    """ParEGO with forests: a fresh weight vector per iteration, mutation of Pareto-optimal points."""
    k = 1 + problem.n_features
    grid = weight_grid(k, config.weight_granularity or default_granularity(k))

    def propose(state: AskTellState, p: Problem):
        archive = state.archive
        rows = [e for e in archive.full_fidelity() if not e.penalized]
        lam = grid[int(state.rng.integers(len(grid)))]
        state.extra.setdefault("weights", []).append(lam)
        target = scalarized_targets(rows, lam, config.gamma)
        try:
            model = fit(encode_many([e.config for e in rows], p.space), target, state.rng, config.forest)
        except SurrogateError as exc:
            log.warning("surrogate fit failed (%s); proposing at random", exc)
            return p.space.sample(state.rng)
        F = np.array([[e.objective, *e.features] for e in rows], dtype=float)
        front = [rows[i] for i in pareto_front(F)]
        score = scalarized_ei(model, float(target.min()))
        return _propose(score, incumbents_for(p, front), p, config, state.rng, 1, _exclude(p, archive))[0]

    return run_generic_qdo(propose, problem, niche_set, config)


def map_elites(problem: Problem, niche_set: NicheSet, config: OptimizerConfig = OptimizerConfig()) -> Archive:
    """Generational MAP-Elites with gene-wise mutation and no crossover.

    ``config.budget`` is the total number of evaluations: one random
    population, then generations of ``population_size`` children until the
    budget is spent (the last generation may be partial).
    """
    rng = np.random.default_rng(config.seed)
    archive = Archive(niche_set, problem.reference_fidelity)
    P = config.population_size
    for _ in range(min(P, config.budget)):
        evaluate(problem, archive, problem.space.sample(rng))
    while len(archive) < config.budget:
        n = min(P, config.budget - len(archive))
        occupied = [e for e in archive.elites if e is not None]
        children = []
        for _ in range(n):
            if not occupied:
                children.append(problem.space.sample(rng))
                continue
            parent = occupied[int(rng.integers(len(occupied)))].config
            children.append(problem.space.perturb(parent, config.mutation_prob, rng))
        for child in children:
            evaluate(problem, archive, child)
    return archive


class InfeasiblePopulationError(RuntimeError):
    pass


@dataclass
class EvolutionResult:
    best: Evaluation | None
    archive: Archive
    trajectory: list[float]  # best feasible objective after every generation


def _split_budget(total: int, parts: int) -> list[int]:
    base, rem = divmod(total, parts)
    return [base + (1 if k < rem else 0) for k in range(parts)]


def regularized_evolution(
    problem: Problem,
    constraint: Niche,
    config: OptimizerConfig = OptimizerConfig(),
    archive: Archive | None = None,
    rng: np.random.Generator | None = None,
) -> EvolutionResult:
    """Aging evolution under one feasibility constraint.

    The initial population is resampled until feasible. Offspring come from
    tournaments over ``parent_ratio * population_size`` random members; the
    first ``mutation_ratio`` share of each generation is produced by gene-wise
    mutation and the rest by uniform crossover of two tournament winners.
    Infeasible offspring are logged with the penalty objective. Each child
    replaces the oldest member.
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    if archive is None:
        archive = Archive(NicheSet((constraint,)), problem.reference_fidelity)
    P = config.population_size
    budget = config.budget
    start = len(archive)
    spent = lambda: len(archive) - start  # noqa: E731
    population: list[Evaluation] = []
    best: Evaluation | None = None
    trajectory: list[float] = []

    def consider(ev: Evaluation):
        nonlocal best
        population.append(ev)
        if not ev.penalized and (best is None or ev.objective < best.objective):
            best = ev

    attempts = 0
    while len(population) < min(P, budget):
        cand = problem.space.sample(rng)
        attempts += 1
        if constraint.contains(problem.features(cand)):
            consider(evaluate(problem, archive, cand))
        elif attempts > 100 * P:
            raise InfeasiblePopulationError(
                f"no feasible initial population after {attempts} samples for constraint {constraint.bounds}"
            )
    trajectory.append(best.objective if best else math.inf)

    tournament = max(1, int(round(config.parent_ratio * P)))

    def select() -> Any:
        idx = rng.choice(len(population), size=min(tournament, len(population)), replace=False)
        return min((population[i] for i in idx), key=lambda e: (e.objective, e.index)).config

    n_mut = int(round(config.mutation_ratio * P))
    while spent() < budget:
        for slot in range(min(P, budget - spent())):
            if slot < n_mut:
                child = problem.space.perturb(select(), config.mutation_prob, rng)
            else:
                child = problem.space.crossover(select(), select(), rng)
            feasible = constraint.contains(problem.features(child))
            consider(evaluate(problem, archive, child, penalized=not feasible))
            population.pop(0)
        trajectory.append(best.objective if best else math.inf)
    return EvolutionResult(best, archive, trajectory)


def regularized_evolution_per_niche(
    problem: Problem, niche_set: NicheSet, config: OptimizerConfig = OptimizerConfig()
) -> tuple[Archive, list[EvolutionResult]]:
    """One evolution run per niche, splitting ``config.budget`` evenly (earlier niches take the remainder).

    All runs log into a single archive over ``niche_set``; the per-run best
    is returned alongside.
    """
    rng = np.random.default_rng(config.seed)
    archive = Archive(niche_set, problem.reference_fidelity)
    results = []
    for niche, share in zip(niche_set, _split_budget(config.budget, len(niche_set))):
        results.append(regularized_evolution(problem, niche, replace(config, budget=share), archive, rng))
    return archive, results


OPTIMIZERS: dict[str, Callable[[Problem, NicheSet, OptimizerConfig], Archive]] = {
    "random_search": random_search,
    "bop_elites_star": bop_elites_star,
    "parego_star": parego_star,
    "ei_bo": ei_bo,
    "map_elites": map_elites,
    "regularized_evolution": lambda p, n, c: regularized_evolution_per_niche(p, n, c)[0],
}
