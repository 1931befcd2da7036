import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import complete, path, weighted_graphs
from linksched.graph import ConflictGraph, gen_ba, gen_er
from linksched.greedy import cgs, is_independent, lgs, lgs_truncated, priority


def test_cgs_path5(path5):
    g, w = path5
    r = cgs(g, w)
    assert r.as_set() == {0, 2, 4} and r.utility == pytest.approx(0.9)


def test_cgs_empty_and_complete():
    r = cgs(ConflictGraph.empty(0), np.zeros(0))
    assert r.solution == () and r.utility == 0
    w = np.array([0.3, 0.9, 0.1, 0.5])
    assert cgs(complete(4), w).solution == (1,)


def test_lgs_path5(path5):
    g, w = path5
    r = lgs(g, w)
    assert r.rounds == 5 and r.as_set() == {0, 2, 4} and r.messages == 3


def test_lgs_single_vertex():
    r = lgs(ConflictGraph.empty(1), np.array([0.4]))
    assert r.solution == (0,) and r.rounds == 1


@pytest.mark.parametrize("n", [5, 10, 50])
def test_lgs_worst_case_rounds(n):
    assert lgs(path(n), np.arange(1, n + 1) / n).rounds == n


def test_truncated(path5):
    g, w = path5
    r = lgs_truncated(g, w, 1)
    assert r.solution == (4,) and r.rounds == 1
    full = lgs(g, w)
    big = lgs_truncated(g, w, 5)
    assert (big.solution, big.rounds, big.messages) == (full.solution, full.rounds, full.messages)
    with pytest.raises(ValueError):
        lgs_truncated(g, w, 0)


def test_lgs_equals_cgs_on_random_instances():
    rng = np.random.default_rng(0)
    for s in range(1000):
        n = int(rng.integers(1, 60))
        g = gen_er(n, float(rng.uniform(0, 0.4)), s) if s % 2 else gen_ba(max(n, 2), 1 + s % max(1, min(4, n - 1)), s)
        w = rng.random(g.n)
        assert lgs(g, w).as_set() == cgs(g, w).as_set()


@given(weighted_graphs(max_n=14, distinct=False), st.integers(1, 20))
def test_outputs_independent(gw, rounds):
    g, w = gw
    for r in (cgs(g, w), lgs(g, w), lgs(g, w, max_rounds=rounds)):
        assert is_independent(g, r.solution)
        assert r.utility == pytest.approx(float(w[list(r.solution)].sum()))
    full = lgs(g, w)
    assert full.rounds <= max(g.n, 0) and full.messages == len(full.solution)


@given(weighted_graphs(max_n=14, distinct=False))
def test_lgs_equals_cgs_with_ties(gw):
    # ties are broken by index in both solvers, so the sets still agree
    g, w = gw
    assert lgs(g, w).as_set() == cgs(g, w).as_set()


@given(weighted_graphs(max_n=14))
def test_maximal(gw):
    g, w = gw
    sol = cgs(g, w).as_set()
    for v in range(g.n):
        if v not in sol:
            assert any(int(x) in sol for x in g.neighbors(v))


@given(weighted_graphs(max_n=14), st.integers(1, 14))
def test_residual_shrinks_each_round(gw, k):
    g, w = gw
    a = lgs(g, w, max_rounds=k)
    b = lgs(g, w, max_rounds=k + 1)
    assert a.as_set() <= b.as_set()


def test_negative_weights_utility_on_u():
    g = path(3)
    w = np.array([-1.0, -5.0, -2.0])
    u = np.array([1.0, 2.0, 3.0])
    r = lgs(g, w, u=u)
    assert r.as_set() == {0, 2} and r.utility == 4.0


def test_priority_tie_break():
    p = priority(np.array([0.5, 0.5, 0.1]))
    assert p[0] > p[1] > p[2]
