"""Hyperband schedules, successive halving with pluggable promotion, and the
multifidelity optimizers qdHB, BOP-ElitesHB, moHB* and ParEGOHB."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .acquisition import (
    AcquisitionContext,
    default_granularity,
    normalize_objectives,
    propose_by_mutation,
    scalarize_tchebycheff,
    scalarized_ei,
    weight_grid,
)
from .archive import Archive, Evaluation, NicheSet
from .metrics import exclusive_contributions, non_dominated_sort, pareto_front
from .optimizers import evaluate, feature_models, incumbents_for
from .problems import Problem
from .space import encode_many
from .surrogate import ForestParams, SurrogateError, fit

log = logging.getLogger(__name__)

_EPS = 1e-9


@dataclass(frozen=True)
class Stage:
    n: int
    r: float


@dataclass(frozen=True)
class Bracket:
    s: int
    n: int
    r: float
    stages: tuple[Stage, ...]

    @property
    def cost(self) -> float:
        return sum(st.n * st.r for st in self.stages)


@dataclass(frozen=True)
class HbSchedule:
    R: float
    eta: float
    s_max: int
    B: float
    brackets: tuple[Bracket, ...]  # s = s_max first
    ladder: tuple[float, ...]  # rung fidelities, ascending, last one is R

    @property
    def cost(self) -> float:
        """Fidelity units spent by one full pass over all brackets."""
        return sum(b.cost for b in self.brackets)

    def bracket(self, s: int) -> Bracket:
        return self.brackets[self.s_max - s]


def _rung_fidelities(R: float, eta: float, s_max: int, rounding: str) -> tuple[float, ...]:
    raw = [R * eta ** (k - s_max) for k in range(s_max + 1)]
    if rounding == "none":
        return tuple(raw)
    rungs: list[float] = []
    for x in raw:
        v = max(1, math.floor(x + 0.5))
        if rungs and v <= rungs[-1]:
            v = int(rungs[-1]) + 1  # collapse duplicates upward
        rungs.append(float(v))
    if rungs[-1] != R:
        raise ValueError(f"integer rounding needs an integer R that stays the top rung (got {R})")
    return tuple(rungs)


def compute_schedule(R: float, eta: float = 3, r_min: float = 1.0, rounding: str = "integer") -> HbSchedule:
    """Hyperband bracket table for maximum fidelity ``R`` and scaling factor ``eta``.

    ``s_max = floor(log_eta(R / r_min))``; with ``r_min = 1`` this is the
    usual ``floor(log_eta R)``. Rung fidelities ``R * eta**-k`` are rounded to
    the nearest positive integer (``rounding="integer"``), bumping collisions
    upward, or kept exact (``rounding="none"``).
    """
    if not eta > 1:
        raise ValueError("eta must be > 1")
    if not r_min > 0 or not R >= eta * r_min:
        raise ValueError("need R >= eta * r_min > 0")
    if rounding not in ("integer", "none"):
        raise ValueError("rounding must be 'integer' or 'none'")
    s_max = 0
    while R / eta ** (s_max + 1) >= r_min * (1 - _EPS):
        s_max += 1
    rungs = _rung_fidelities(R, eta, s_max, rounding)
    B = (s_max + 1) * R
    brackets = []
    for s in range(s_max, -1, -1):
        n = math.ceil((s_max + 1) * eta**s / (s + 1) - _EPS)
        stages = tuple(
            Stage(math.floor(n * eta ** (-i) + _EPS), rungs[s_max - s + i]) for i in range(s + 1)
        )
        brackets.append(Bracket(s, n, rungs[s_max - s], stages))
    return HbSchedule(float(R), float(eta), s_max, float(B), tuple(brackets), rungs)


# -- promotion policies -------------------------------------------------------------


def top_k_qdo(objectives: Sequence[float], memberships, k_keep: int, rng: np.random.Generator) -> list[int]:
    """Indices promoted by drawing niches uniformly and taking each niche's best unpromoted member.

    A drawn niche without remaining members promotes a uniformly random
    unpromoted configuration instead. With a single niche no niche draw is
    made, so the random stream is untouched when every config is a member.
    """
    y = np.asarray(objectives, dtype=float)
    M = np.asarray(memberships, dtype=bool).reshape(len(y), -1)
    c = M.shape[1]
    remaining = np.ones(len(y), dtype=bool)
    promoted: list[int] = []
    for _ in range(min(k_keep, len(y))):
        j = 0 if c == 1 else int(rng.integers(c))
        cand = np.flatnonzero(remaining & M[:, j])
        if cand.size:
            i = int(cand[np.argmin(y[cand])])  # argmin keeps the earliest on ties
        else:
            pool = np.flatnonzero(remaining)
            i = int(pool[rng.integers(pool.size)])
        promoted.append(i)
        remaining[i] = False
    return promoted


def mo_reference_point(points) -> np.ndarray:
    """Component-wise maximum plus a 1% margin of the range (or of the magnitude for flat columns)."""
    P = np.asarray(points, dtype=float)
    hi, lo = P.max(axis=0), P.min(axis=0)
    span = np.where(hi > lo, hi - lo, np.maximum(np.abs(hi), 1.0))
    return hi + 0.01 * span


def top_k_mo(objective_vectors, k_keep: int, reference=None) -> list[int]:
    """Front-by-front promotion; the splitting front is ranked by exclusive hypervolume contribution."""
    P = np.asarray(objective_vectors, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    k_keep = min(k_keep, len(P))
    ref = mo_reference_point(P) if reference is None else np.asarray(reference, dtype=float)
    promoted: list[int] = []
    for front in non_dominated_sort(P):
        room = k_keep - len(promoted)
        if room <= 0:
            break
        if front.size <= room:
            promoted.extend(int(i) for i in front)
            continue
        if P.shape[1] > 3:
            order = np.arange(front.size)
        else:
            contrib = exclusive_contributions(P[front], ref)
            order = np.argsort(-contrib, kind="stable")
        promoted.extend(int(front[i]) for i in order[:room])
    return promoted


PolicyFn = Callable[[list[Evaluation], np.ndarray, int, np.random.Generator], list[int]]


def qdo_policy(evals, memberships, k, rng):
    return top_k_qdo([e.objective for e in evals], memberships, k, rng)


def mo_policy(evals, memberships, k, rng):
    return top_k_mo([[e.objective, *e.features] for e in evals], k)


def single_objective_policy(evals, memberships, k, rng):
    return top_k_mo([[e.objective] for e in evals], k)


POLICIES = {"qdo": qdo_policy, "multi_objective": mo_policy, "single_objective": single_objective_policy}


# -- successive halving ------------------------------------------------------------------


class BudgetExhausted(Exception):
    pass


Sampler = Callable[[int, float, Archive, np.random.Generator], list]


@dataclass
class BracketRun:
    bracket: Bracket
    configs: list = field(default_factory=list)
    stage: int = 0
    history: list[list[Evaluation]] = field(default_factory=list)

    @property
    def finished(self) -> bool:
        return self.stage >= len(self.bracket.stages)


def _evaluate_capped(problem: Problem, archive: Archive, config, fidelity: float, total_budget: float) -> Evaluation:
    if archive.budget + fidelity > total_budget + _EPS:
        raise BudgetExhausted
    return evaluate(problem, archive, config, fidelity)


def run_stage(
    run: BracketRun,
    eta: float,
    sampler: Sampler,
    policy: PolicyFn,
    problem: Problem,
    niche_set: NicheSet,
    archive: Archive,
    rng: np.random.Generator,
    total_budget: float = math.inf,
) -> None:
    """Evaluate the current stage of ``run`` and promote ``floor(n_i / eta)`` survivors."""
    st = run.bracket.stages[run.stage]
    if run.stage == 0:
        run.configs = list(sampler(st.n, st.r, archive, rng))
    evals = [_evaluate_capped(problem, archive, cfg, st.r, total_budget) for cfg in run.configs]
    run.history.append(evals)
    run.stage += 1
    if not run.finished:
        k = math.floor(len(evals) / eta + _EPS)
        member = niche_set.membership_matrix(np.array([e.features for e in evals], dtype=float))
        run.configs = [evals[i].config for i in policy(evals, member, k, rng)]


def run_sh_bracket(
    schedule: HbSchedule,
    bracket: Bracket,
    sampler: Sampler,
    policy: PolicyFn,
    problem: Problem,
    niche_set: NicheSet,
    archive: Archive,
    rng: np.random.Generator,
    total_budget: float = math.inf,
) -> BracketRun:
    """One successive-halving bracket run to completion."""
    run = BracketRun(bracket)
    while not run.finished:
        run_stage(run, schedule.eta, sampler, policy, problem, niche_set, archive, rng, total_budget)
    return run


def run_pass(
    schedule: HbSchedule,
    sampler: Sampler,
    policy: PolicyFn,
    problem: Problem,
    niche_set: NicheSet,
    archive: Archive,
    rng: np.random.Generator,
    total_budget: float = math.inf,
    variant: str = "batched",
) -> list[BracketRun]:
    """One pass over every bracket of the schedule.

    ``batched`` walks the rungs in ascending fidelity and, on each rung, runs
    the stage of every bracket that uses it (brackets with larger ``s``
    first). ``sequential`` runs bracket after bracket.
    """
    runs = [BracketRun(b) for b in schedule.brackets]
    if variant == "sequential":
        for run in runs:
            while not run.finished:
                run_stage(run, schedule.eta, sampler, policy, problem, niche_set, archive, rng, total_budget)
    elif variant == "batched":
        for r in schedule.ladder:
            for run in runs:
                if not run.finished and run.bracket.stages[run.stage].r == r:
                    run_stage(run, schedule.eta, sampler, policy, problem, niche_set, archive, rng, total_budget)
    else:
        raise ValueError("variant must be 'batched' or 'sequential'")
    return runs


def hyperband(
    problem: Problem,
    niche_set: NicheSet,
    sampler: Sampler,
    policy: PolicyFn,
    R: float | None = None,
    eta: float = 3,
    total_budget: float | None = None,
    rng: np.random.Generator | int | None = None,
    r_min: float = 1.0,
    rounding: str = "integer",
    variant: str = "batched",
) -> Archive:
    """Repeat schedule passes until the next evaluation would exceed ``total_budget``.

    ``total_budget`` defaults to the cost of one pass.
    """
    R = problem.reference_fidelity if R is None else R
    if R != problem.reference_fidelity:
        raise ValueError(f"R={R} must equal the problem's reference fidelity {problem.reference_fidelity}")
    schedule = compute_schedule(R, eta, r_min, rounding)
    total_budget = schedule.cost if total_budget is None else float(total_budget)
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    archive = Archive(niche_set, problem.reference_fidelity)
    try:
        while archive.budget + schedule.ladder[0] <= total_budget + _EPS:
            run_pass(schedule, sampler, policy, problem, niche_set, archive, rng, total_budget, variant)
    except BudgetExhausted:
        pass
    return archive


# -- samplers ---------------------------------------------------------------------------------


def uniform_sampler(problem: Problem) -> Sampler:
    return lambda n, r, archive, rng: [problem.space.sample(rng) for _ in range(n)]


@dataclass(frozen=True)
class ModelSamplerConfig:
    rho: float = 0.0
    design_size: int = 10
    n_candidates: int = 100
    forest: ForestParams = ForestParams()
    gamma: float = 0.05
    weight_granularity: int | None = None


def _stage_rows(archive: Archive) -> list[Evaluation]:
    return [e for e in archive.evaluations if not e.penalized]


def _stage_incumbents(problem: Problem, archive: Archive, rows: list[Evaluation], r: float):
    """Per-niche best rows at fidelity ``r`` (``None`` where a niche has no member there)."""
    best: list[Evaluation | None] = [None] * len(archive.niche_set)
    for e in rows:
        if e.fidelity != r:
            continue
        for j in np.flatnonzero(archive.niche_set.membership(e.features)):
            if best[j] is None or e.objective < best[j].objective:
                best[j] = e
    return best


def _split_random(n: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Per-candidate coin flips; the degenerate rates draw nothing."""
    if rho <= 0:
        return np.zeros(n, dtype=bool)
    if rho >= 1:
        return np.ones(n, dtype=bool)
    return rng.random(n) < rho


def _assemble(problem: Problem, random_mask: np.ndarray, proposed: list, rng: np.random.Generator) -> list:
    it = iter(proposed)
    return [problem.space.sample(rng) if m else next(it) for m in random_mask]


def ejie_sampler(problem: Problem, niche_set: NicheSet, cfg: ModelSamplerConfig = ModelSamplerConfig()) -> Sampler:
    """Batch proposals maximizing EJIE at the stage fidelity, mixed with a ``rho`` share of random configs."""

    def sample(n: int, r: float, archive: Archive, rng: np.random.Generator) -> list:
        if cfg.rho >= 1 or len(archive) < cfg.design_size:
            return [problem.space.sample(rng) for _ in range(n)]
        mask = _split_random(n, cfg.rho, rng)
        n_model = int((~mask).sum())
        if n_model == 0:
            return [problem.space.sample(rng) for _ in range(n)]
        rows = _stage_rows(archive)
        try:
            X = encode_many([e.config for e in rows], problem.space, [e.fidelity for e in rows])
            obj_model = fit(X, [e.objective for e in rows], rng, cfg.forest)
            feat_models = feature_models(problem, archive, rng, cfg.forest)
        except SurrogateError as exc:
            log.warning("surrogate fit failed (%s); sampling the bracket at random", exc)
            return [problem.space.sample(rng) for _ in range(n)]
        best = _stage_incumbents(problem, archive, rows, r)
        f_min = [None if e is None else e.objective for e in best]
        ctx = AcquisitionContext(obj_model, feat_models, niche_set, f_min, empty_value=problem.penalty, fidelity=r)
        incumbents = incumbents_for(problem, best) or incumbents_for(problem, archive.elites)
        exclude = {problem.space.key(e.config) for e in archive.evaluations}
        proposed = propose_by_mutation(
            ctx, incumbents, problem.space, max(cfg.n_candidates, n_model), rng, n_model, exclude
        )
        return _assemble(problem, mask, proposed, rng)

    return sample


def parego_sampler(problem: Problem, cfg: ModelSamplerConfig = ModelSamplerConfig()) -> Sampler:
    """Batch EI proposals on a freshly weighted Tchebycheff scalarization per proposal round."""
    k = 1 + problem.n_features
    grid = weight_grid(k, cfg.weight_granularity or default_granularity(k))

    def sample(n: int, r: float, archive: Archive, rng: np.random.Generator) -> list:
        if cfg.rho >= 1 or len(archive) < cfg.design_size:
            return [problem.space.sample(rng) for _ in range(n)]
        mask = _split_random(n, cfg.rho, rng)
        n_model = int((~mask).sum())
        if n_model == 0:
            return [problem.space.sample(rng) for _ in range(n)]
        rows = _stage_rows(archive)
        lam = grid[int(rng.integers(len(grid)))]
        F = np.array([[e.objective, *e.features] for e in rows], dtype=float)
        target = np.asarray(scalarize_tchebycheff(normalize_objectives(F), lam, cfg.gamma))
        try:
            X = encode_many([e.config for e in rows], problem.space, [e.fidelity for e in rows])
            model = fit(X, target, rng, cfg.forest)
        except SurrogateError as exc:
            log.warning("surrogate fit failed (%s); sampling the bracket at random", exc)
            return [problem.space.sample(rng) for _ in range(n)]
        at_r = np.array([e.fidelity == r for e in rows])
        f_min = float(target[at_r].min()) if at_r.any() else float(target.min())
        idx = np.flatnonzero(at_r) if at_r.any() else np.arange(len(rows))
        front = [rows[idx[i]] for i in pareto_front(F[idx])]
        exclude = {problem.space.key(e.config) for e in archive.evaluations}
        proposed = propose_by_mutation(
            scalarized_ei(model, f_min, fidelity=r),
            incumbents_for(problem, front),
            problem.space,
            max(cfg.n_candidates, n_model),
            rng,
            n_model,
            exclude,
        )
        return _assemble(problem, mask, proposed, rng)

    return sample


# -- the four optimizers --------------------------------------------------------------------------


def qd_hyperband(problem, niche_set, R=None, eta=3, total_budget=None, rng=None, **hb) -> Archive:
    """Hyperband with uniform sampling and niche-aware promotion."""
    return hyperband(problem, niche_set, uniform_sampler(problem), qdo_policy, R, eta, total_budget, rng, **hb)


def bop_elites_hb(
    problem, niche_set, R=None, eta=3, total_budget=None, rho=0.0, rng=None, sampler_config=None, **hb
) -> Archive:
    """qdHB whose brackets are seeded by EJIE-maximizing batch proposals."""
    cfg = sampler_config or ModelSamplerConfig()
    if rho != cfg.rho:
        cfg = replace(cfg, rho=rho)
    return hyperband(problem, niche_set, ejie_sampler(problem, niche_set, cfg), qdo_policy, R, eta, total_budget, rng, **hb)


def mo_hyperband(
    problem, niche_set, R=None, eta=3, total_budget=None, rng=None, use_features=True, **hb
) -> Archive:
    """Hyperband promoting by non-dominated sorting over (objective, features).

    ``niche_set`` is only used for bookkeeping. ``use_features=False``
    ranks on the objective alone.
    """
    policy = mo_policy if use_features else single_objective_policy
    return hyperband(problem, niche_set, uniform_sampler(problem), policy, R, eta, total_budget, rng, **hb)


def parego_hb(
    problem, niche_set, R=None, eta=3, total_budget=None, rho=0.0, rng=None, sampler_config=None, **hb
) -> Archive:
    """moHB* whose brackets are seeded by ParEGO batch proposals."""
    cfg = sampler_config or ModelSamplerConfig()
    if rho != cfg.rho:
        cfg = replace(cfg, rho=rho)
    return hyperband(problem, niche_set, parego_sampler(problem, cfg), mo_policy, R, eta, total_budget, rng, **hb)
