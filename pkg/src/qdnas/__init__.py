"""Quality-diversity neural architecture search: niches, surrogate-assisted
optimizers, Hyperband variants and evaluation metrics."""
from .archive import Archive, Evaluation, Niche, NicheSet, membership, niches_from_percentiles
from .metrics import dominates, ert, hypervolume, hypervolume_indicator, pareto_front, summed_niche_error
from .multifidelity import bop_elites_hb, compute_schedule, mo_hyperband, parego_hb, qd_hyperband
from .optimizers import OptimizerConfig, bop_elites_star, map_elites, parego_star, random_search, regularized_evolution
from .problems import Problem, brute_force_oracle, load_tabular, synthetic_continuous_problem, toy_cell_problem
from .space import CellConfiguration, CellSpace, ParamSpace

__all__ = [
    "Archive",
    "Evaluation",
    "Niche",
    "NicheSet",
    "membership",
    "niches_from_percentiles",
    "dominates",
    "ert",
    "hypervolume",
    "hypervolume_indicator",
    "pareto_front",
    "summed_niche_error",
    "bop_elites_hb",
    "compute_schedule",
    "mo_hyperband",
    "parego_hb",
    "qd_hyperband",
    "OptimizerConfig",
    "bop_elites_star",
    "map_elites",
    "parego_star",
    "random_search",
    "regularized_evolution",
    "Problem",
    "brute_force_oracle",
    "load_tabular",
    "synthetic_continuous_problem",
    "toy_cell_problem",
    "CellConfiguration",
    "CellSpace",
    "ParamSpace",
]

__version__ = "0.1.0"
