"""Niche boundaries of the published NAS benchmark scenarios.

Upper bounds of nested ``[0, u)`` niches; ``None`` is an unbounded upper
limit. Two-feature scenarios list one ``(u_latency, u_size)`` pair per niche.
"""
from __future__ import annotations

import math

from .archive import Niche, NicheSet

INF = None

TABLES: dict[tuple[str, str, str], list] = {
    ("nb101-params", "cifar10", "small"): [5356682, INF],
    ("nb101-params", "cifar10", "medium"): [650520, 1227914, 1664778, 3468426, INF],
    ("nb101-params", "cifar10", "large"): [
        650520, 824848, 1227914, 1664778, 2538506, 3468426, 3989898, 5356682, 8118666, INF,
    ],
    ("nb201-latency", "cifar10", "small"): [0.015000444871408, INF],
    ("nb201-latency", "cifar10", "medium"): [0.00856115, 0.01030767, 0.01143533, 0.01363741, INF],
    ("nb201-latency", "cifar10", "large"): [
        0.00856115, 0.00893427, 0.01030767, 0.01143533, 0.01250159,
        0.01363741, 0.01429903, 0.01500044, 0.01660615, INF,
    ],
    ("nb201-latency", "cifar100", "small"): [0.0159673188862048, INF],
    ("nb201-latency", "cifar100", "medium"): [0.00919228, 0.01138714, 0.01232998, 0.01475572, INF],
    ("nb201-latency", "cifar100", "large"): [
        0.00919228, 0.00957457, 0.01138714, 0.01232998, 0.01327515,
        0.01475572, 0.01534633, 0.01596732, 0.01768237, INF,
    ],
    ("nb201-latency", "imagenet16-120", "small"): [0.014301609992981, INF],
    ("nb201-latency", "imagenet16-120", "medium"): [0.00767465, 0.0094483, 0.01054566, 0.01271056, INF],
    ("nb201-latency", "imagenet16-120", "large"): [
        0.00767465, 0.00826192, 0.0094483, 0.01054566, 0.01173623,
        0.01271056, 0.01352221, 0.01430161, 0.01595311, INF,
    ],
    ("mbv3-latency", "imagenet", "small"): [17.5, 30],
    ("mbv3-latency", "imagenet", "medium"): [15, 20, 25, 30, 35],
    ("mbv3-latency", "imagenet", "large"): [17, 19, 21, 23, 25, 27, 29, 31, 33, 35],
    ("mbv3-flops", "imagenet", "small"): [150, 400],
    ("mbv3-flops", "imagenet", "medium"): [150, 200, 250, 300, 400],
    ("mbv3-flops", "imagenet", "large"): [150, 175, 200, 225, 250, 275, 300, 325, 350, 400],
    ("mbv3-latency-size", "imagenet", "small"): [(20, 20), (35, 20)],
    ("mbv3-latency-size", "imagenet", "medium"): [(20, 20), (25, 20), (30, 20), (35, 20), (40, 20)],
    ("mbv3-latency-size", "imagenet", "large"): [
        (20, 20), (23, 20), (26, 20), (29, 20), (32, 20), (35, 20), (38, 20), (41, 20), (44, 20), (47, 20),
    ],
    # latency constraints (ms) of the Once-for-All comparison
    ("ofa-latency", "imagenet", "seven"): [15, 18, 21, 24, 27, 30, 33],
}


def niche_set(benchmark: str, dataset: str, scenario: str) -> NicheSet:
    """Build the nested :class:`NicheSet` of a published scenario."""
    try:
        uppers = TABLES[(benchmark, dataset, scenario)]
    except KeyError:
        known = ", ".join("/".join(k) for k in TABLES)
        raise KeyError(f"unknown scenario {benchmark}/{dataset}/{scenario}; known: {known}") from None
    name = f"{benchmark}/{dataset}/{scenario}"
    if isinstance(uppers[0], tuple):
        niches = tuple(
            Niche(tuple((0.0, math.inf if u is None else float(u)) for u in pair), id=k + 1)
            for k, pair in enumerate(uppers)
        )
        # the size bound is shared, so strict nesting holds only on latency
        return NicheSet(niches, layout="nested", name=name)
    return NicheSet.nested(uppers, name=name)


def scenario_names() -> list[str]:
    return ["/".join(k) for k in TABLES]
