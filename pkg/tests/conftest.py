import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from linksched.graph import ConflictGraph

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@st.composite
def graphs(draw, max_n=12, min_n=0):
    n = draw(st.integers(min_n, max_n))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    keep = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
    return ConflictGraph.from_edges(n, [p for p, k in zip(pairs, keep) if k])


@st.composite
def weighted_graphs(draw, max_n=12, min_n=0, distinct=True):
    g = draw(graphs(max_n=max_n, min_n=min_n))
    seed = draw(st.integers(0, 2**32 - 1))
    u = np.random.default_rng(seed).random(g.n)
    if not distinct:
        u = np.round(u * 3) / 3
    return g, u


def path(n):
    return ConflictGraph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def complete(n):
    return ConflictGraph.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def cycle(n):
    return ConflictGraph.from_edges(n, [(i, (i + 1) % n) for i in range(n)])


@pytest.fixture
def path5():
    return path(5), np.array([0.1, 0.2, 0.3, 0.4, 0.5])


# -- acceptance reporting: one PASS/FAIL line per criterion ---------------

_CRITERIA: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    n = mark.args[0]
    entry = _CRITERIA.setdefault(n, {"ok": True, "details": []})
    entry["ok"] &= rep.passed
    entry["details"] += [v for k, v in item.user_properties if k == "detail"]
    if rep.failed:
        entry["details"].append(f"{item.name} failed")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        terminalreporter.write_line(f"{'PASS' if e['ok'] else 'FAIL'} criterion {n}: {'; '.join(e['details'])}")
