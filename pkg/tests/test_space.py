import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdnas.space import (
    Categorical,
    CellConfiguration,
    CellSpace,
    Continuous,
    Integer,
    ParamConfiguration,
    ParamSpace,
    SpaceError,
    encode,
    encode_many,
    encode_path_truncated,
    enumerate_paths,
    mutate_local,
    sample_random,
)

TINY = CellSpace(max_vertices=3, max_edges=3, op_vocabulary=("conv",))
SMALL = CellSpace(max_vertices=4, max_edges=6, op_vocabulary=("a", "b", "c"))


def _brute_force_valid(space):
    n = space.max_vertices
    entries = [(i, j) for i in range(n) for j in range(i + 1, n)]
    out = set()
    for ops in itertools.product(space.op_vocabulary, repeat=n - 2):
        for bits in itertools.product((0, 1), repeat=len(entries)):
            edges = tuple(e for e, b in zip(entries, bits) if b)
            if len(edges) > space.max_edges:
                continue
            # reachability by repeated squaring of the adjacency matrix
            adj = np.zeros((n, n), dtype=int)
            for i, j in edges:
                adj[i, j] = 1
            reach = np.eye(n, dtype=int)
            for _ in range(n):
                reach = ((reach + reach @ adj) > 0).astype(int)
            if reach[0, n - 1]:
                out.add((edges, ops))
    return out


def test_enumeration_matches_independent_brute_force():
    for space in (TINY, SMALL):
        got = {(c.edges, c.ops) for c in space.enumerate()}
        assert got == _brute_force_valid(space)
    assert len(SMALL.enumerate()) == 423


def test_sample_reaches_every_valid_tiny_cell():
    rng = np.random.default_rng(0)
    seen = {(c.edges, c.ops) for c in (sample_random(TINY, rng) for _ in range(2000))}
    assert seen == _brute_force_valid(TINY)


def test_sample_is_deterministic():
    a = SMALL.sample(np.random.default_rng(7))
    b = SMALL.sample(np.random.default_rng(7))
    assert a == b


def test_sample_respects_constraints():
    space = CellSpace(max_vertices=7, max_edges=9, ranking_draws=2000)
    rng = np.random.default_rng(1)
    for _ in range(2000):
        c = space.sample(rng)
        assert space.is_valid(c) and len(c.edges) <= 9


def test_over_constrained_space_raises():
    # one edge allowed: only the lone input->output edge is valid, which 66 fair coin flips never produce
    space = CellSpace(max_vertices=12, max_edges=1, op_vocabulary=("x",))
    with pytest.raises(SpaceError):
        space.sample(np.random.default_rng(0))


def test_categorical_sampling_frequency():
    space = ParamSpace((Categorical("c", ("a", "b")),))
    rng = np.random.default_rng(3)
    draws = [space.sample(rng).values[0] for _ in range(10_000)]
    freq = draws.count("a") / len(draws)
    assert abs(freq - 0.5) < 0.02


def test_enumerate_paths_hand_cases():
    # input -> v1 -> output, plus input -> output
    c = CellConfiguration(((0, 1), (1, 2), (0, 2)), ("conv",))
    assert sorted(enumerate_paths(c)) == [(), ("conv",)]
    assert enumerate_paths(CellConfiguration(((0, 2),), ("conv",))) == [()]
    # input -> v1 -> v2 -> output with skip input -> v2
    c = CellConfiguration(((0, 1), (1, 2), (2, 3), (0, 2)), ("op1", "op2"))
    assert sorted(enumerate_paths(c)) == [("op1", "op2"), ("op2",)]


def test_encoding_injective_on_tiny_space():
    codes = {}
    for c in TINY.enumerate():
        key = TINY.key(c)
        vec = tuple(TINY.encode(c))
        codes.setdefault(vec, set()).add(key)
    assert all(len(keys) == 1 for keys in codes.values())


def test_encoding_equality_implies_path_set_equality():
    for c1, c2 in itertools.combinations(SMALL.enumerate()[::7], 2):
        if np.array_equal(SMALL.encode(c1), SMALL.encode(c2)):
            assert set(enumerate_paths(c1.pruned())) == set(enumerate_paths(c2.pruned()))


def test_pruned_vertex_does_not_change_encoding():
    live = CellConfiguration(((0, 1), (1, 3)), ("a", "b"))
    dead = CellConfiguration(((0, 1), (1, 3), (0, 2)), ("a", "c"))
    assert np.array_equal(SMALL.encode(live), SMALL.encode(dead))
    assert SMALL.key(live) == SMALL.key(dead)


def test_truncated_universe_can_give_zero_vector():
    space = CellSpace(4, 6, ("a", "b", "c"), path_truncation_length=1)
    top = space.path_universe()[0]
    for c in space.enumerate():
        if top not in enumerate_paths(c.pruned()):
            assert not encode_path_truncated(c, space).any()
            break
    else:
        pytest.fail("every cell contains the top path")


def test_path_ranking_is_stable_and_complete():
    u = SMALL.path_universe()
    assert len(u) == 1 + 3 + 9
    assert u == SMALL.path_universe()
    assert u[0] == ()  # the direct edge is the most frequent path


def test_encode_appends_fidelity():
    c = SMALL.sample(np.random.default_rng(0))
    v = encode(c, SMALL, fidelity=9)
    assert v[-1] == 9 and len(v) == SMALL.encoding_size + 1
    X = encode_many([c, c], SMALL, [1, 3])
    assert X.shape == (2, SMALL.encoding_size + 1)
    assert list(X[:, -1]) == [1, 3]


def _edit_distance(a: CellConfiguration, b: CellConfiguration) -> int:
    return len(set(a.edges) ^ set(b.edges)) + sum(x != y for x, y in zip(a.ops, b.ops))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_cell_mutation_is_one_valid_edit(seed):
    rng = np.random.default_rng(seed)
    c = SMALL.sample(rng)
    m = mutate_local(c, SMALL, rng)
    assert SMALL.is_valid(m)
    assert m != c
    assert _edit_distance(c, m) == 1


def test_mutation_covers_tiny_space():
    rng = np.random.default_rng(0)
    c = TINY.sample(rng)
    seen = {(c.edges, c.ops)}
    for _ in range(10_000):
        c = TINY.mutate(c, rng)
        seen.add((c.edges, c.ops))
    assert seen == _brute_force_valid(TINY)


def test_binary_param_mutation_flips():
    space = ParamSpace((Categorical("c", ("a", "b")),))
    rng = np.random.default_rng(0)
    a = ParamConfiguration(("a",))
    assert all(space.mutate(a, rng).values == ("b",) for _ in range(20))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_param_mutation_changes_one_dimension(seed):
    space = ParamSpace((Categorical("c", ("x", "y", "z")), Integer("i", 0, 5), Continuous("f", 0.0, 1.0)))
    rng = np.random.default_rng(seed)
    c = space.sample(rng)
    m = space.mutate(c, rng)
    assert space.is_valid(m)
    assert sum(a != b for a, b in zip(c.values, m.values)) == 1


def test_perturb_with_zero_probability_is_identity():
    rng = np.random.default_rng(0)
    c = SMALL.sample(rng)
    assert SMALL.perturb(c, 0.0, rng) == c


def test_json_round_trip():
    rng = np.random.default_rng(2)
    c = SMALL.sample(rng)
    assert SMALL.from_json(json.loads(json.dumps(SMALL.to_json(c)))) == c
    space = ParamSpace((Categorical("c", ("x", "y")), Integer("i", 0, 5), Continuous("f", 1e-3, 1.0, log=True)))
    p = space.sample(rng)
    assert space.from_json(json.loads(json.dumps(space.to_json(p)))) == p
    assert set(space.to_json(p)) == {"c", "i", "f"}


def test_param_encoding_width_and_range():
    space = ParamSpace((Categorical("c", ("x", "y", "z")), Integer("i", 0, 4), Continuous("f", 0.0, 2.0)))
    v = space.encode(ParamConfiguration(("y", 4, 1.0)))
    assert len(v) == space.encoding_size
    assert np.all((v >= 0) & (v <= 1))
    assert v[:3].tolist() == [0, 1, 0]


def test_invalid_cell_shapes_rejected():
    with pytest.raises(ValueError):
        CellConfiguration(((2, 1),), ("a", "b"))
    with pytest.raises(ValueError):
        CellSpace(max_vertices=2)
    with pytest.raises(ValueError):
        CellSpace(op_vocabulary=())
    with pytest.raises(ValueError):
        CellSpace(path_truncation_length=0)
