import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdnas.archive import Archive, Evaluation, Niche, NicheSet, membership, niches_from_percentiles, record
from qdnas.niche_tables import TABLES, niche_set, scenario_names

NB101_SMALL = NicheSet.nested([5356682, None])


def ev(i, y, z, fidelity=1.0, budget=None, penalized=False):
    return Evaluation(f"cfg{i}", fidelity, y, (z,), i, budget if budget is not None else i + 1.0, penalized)


def test_membership_published_boundary():
    assert membership((1.0e6,), NB101_SMALL).tolist() == [True, True]


def test_membership_half_open_and_lower_bound():
    ns = NicheSet.nested([10.0])
    assert membership((10.0,), ns).tolist() == [False]
    assert membership((-1.0,), ns).tolist() == [False]
    assert membership((0.0,), ns).tolist() == [True]


def test_membership_dimension_mismatch():
    with pytest.raises(ValueError):
        membership((1.0, 2.0), NB101_SMALL)


def test_membership_matrix_agrees_with_scalar_rule():
    ns = NicheSet.nested([1.0, 2.0, 5.0, None])
    Z = np.random.default_rng(0).uniform(-1, 7, size=(200, 1))
    M = ns.membership_matrix(Z)
    for z, row in zip(Z, M):
        assert row.tolist() == membership(z, ns).tolist()


def test_record_first_insertion_and_ties():
    a = Archive(NicheSet.nested([10.0]), reference_fidelity=1.0)
    a.record(ev(0, 5.0, 1.0))
    assert a.elites[0].index == 0
    a.record(ev(1, 5.0, 2.0))
    assert a.elites[0].index == 0  # equal objective keeps the earlier evaluation


def test_record_nested_updates_both():
    a = Archive(NicheSet.nested([10.0, None]), reference_fidelity=1.0)
    a.record(ev(0, 8.0, 20.0))
    a.record(ev(1, 9.0, 3.0))
    assert a.elite_objectives() == [9.0, 8.0]
    changed = a.record(ev(2, 1.0, 3.0))
    assert changed == [0, 1]
    assert a.elite_objectives() == [1.0, 1.0]


def test_low_fidelity_and_penalized_never_become_elites():
    a = Archive(NicheSet.nested([None]), reference_fidelity=9.0)
    a.record(ev(0, 1.0, 1.0, fidelity=3.0))
    a.record(ev(1, 0.5, 1.0, fidelity=9.0, penalized=True))
    assert a.elites == [None]
    a.record(ev(2, 4.0, 1.0, fidelity=9.0))
    assert a.elite_objectives() == [4.0]


def test_budget_must_increase():
    a = Archive(NicheSet.nested([None]), reference_fidelity=1.0)
    a.record(ev(0, 1.0, 1.0, budget=2.0))
    with pytest.raises(ValueError):
        a.record(ev(1, 1.0, 1.0, budget=2.0))


def test_record_function_returns_elites_and_listeners_fire():
    a = Archive(NicheSet.nested([None]), reference_fidelity=1.0)
    seen = []
    a.listeners.append(lambda e, m: seen.append((e.index, m.tolist())))
    elites = record(a, ev(0, 3.0, 1.0))
    assert elites[0].objective == 3.0
    assert seen == [(0, [True])]


@settings(max_examples=100, deadline=None)
@given(
    st.lists(
        st.tuples(st.floats(0, 100, allow_nan=False), st.floats(0, 30, allow_nan=False)),
        min_size=1,
        max_size=40,
    )
)
def test_elite_invariants(points):
    ns = NicheSet.nested([5.0, 10.0, 20.0, None])
    a = Archive(ns, reference_fidelity=1.0)
    history = []
    for i, (y, z) in enumerate(points):
        a.record(ev(i, y, z))
        history.append(a.elite_objectives())
    # elite = min over members
    for j, niche in enumerate(ns):
        members = [y for y, z in points if niche.contains((z,))]
        assert a.elite_objectives()[j] == (min(members) if members else None)
    # nested: non-increasing in j when all exist
    objs = a.elite_objectives()
    filled = [o for o in objs if o is not None]
    if len(filled) == len(objs):
        assert all(x >= y for x, y in zip(objs, objs[1:]))
    # monotone per niche over time
    for j in range(len(ns)):
        seq = [h[j] for h in history if h[j] is not None]
        assert all(x >= y for x, y in zip(seq, seq[1:]))
    # replay reproduces elites
    b = Archive.replay(a.evaluations, ns, 1.0)
    assert [e.index if e else None for e in b.elites] == [e.index if e else None for e in a.elites]


def test_nested_membership_monotone():
    ns = NicheSet.nested([1.0, 2.0, 4.0, None])
    for z in np.linspace(-0.5, 6, 50):
        m = membership((z,), ns)
        first = np.argmax(m) if m.any() else len(m)
        assert m[first:].all()


def test_percentile_niches_hand_values():
    ns = niches_from_percentiles(np.arange(1, 101), [50])
    assert ns.niches[0].bounds == ((0.0, 50.5),)
    assert ns.niches[1].bounds == ((0.0, math.inf),)


def test_percentile_100_covers_all_samples():
    samples = np.random.default_rng(0).uniform(0, 10, 50)
    ns = niches_from_percentiles(samples, [100])
    assert all(ns.niches[0].contains((s,)) for s in samples)


def test_percentile_single_sample():
    ns = niches_from_percentiles([3.0], [50])
    lo, hi = ns.niches[0].bounds[0]
    assert lo == 0.0 and hi == np.nextafter(3.0, np.inf)
    assert ns.niches[0].contains((3.0,))


def test_percentile_errors():
    with pytest.raises(ValueError):
        niches_from_percentiles([], [50])
    with pytest.raises(ValueError):
        niches_from_percentiles([1, 2], [60, 50])


def test_layout_validation():
    with pytest.raises(ValueError):
        NicheSet((Niche(((0, 5),)), Niche(((0, 3),))), layout="nested")
    with pytest.raises(ValueError):
        NicheSet((Niche(((0, 5),)), Niche(((4, 8),))), layout="disjoint")
    with pytest.raises(ValueError):
        Niche(((1, 1),))
    ok = NicheSet((Niche(((0, 5),)), Niche(((5, 8),))), layout="disjoint")
    assert [n.id for n in ok] == [1, 2]


def test_niche_set_json_round_trip():
    ns = niche_set("nb101-params", "cifar10", "medium")
    doc = ns.to_json()
    assert doc["niches"][-1]["bounds"] == [[0.0, None]]
    assert NicheSet.from_json(doc) == ns


def test_published_tables_are_valid_nested_sets():
    for name in scenario_names():
        ns = niche_set(*name.split("/"))
        assert len(ns) == len(TABLES[tuple(name.split("/"))])
    two = niche_set("mbv3-latency-size", "imagenet", "small")
    assert two.n_features == 2
    assert two.membership((19.0, 10.0)).tolist() == [True, True]
    assert two.membership((19.0, 25.0)).tolist() == [False, False]
