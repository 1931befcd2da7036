"""Exact MWIS by branch and bound, and an exhaustive-enumeration oracle."""

from __future__ import annotations

import sys
import time
from dataclasses import dataclass

import numpy as np

from linksched.graph import ConflictGraph
from linksched.greedy import SolveResult, greedy_select


@dataclass(frozen=True)
class ExactBudget:
    node_limit: int = 5_000_000
    time_limit: float = 60.0

    def __post_init__(self):
        if self.node_limit <= 0 or self.time_limit <= 0:
            raise ValueError("budget limits must be positive")


class _BudgetExceeded(Exception):
    pass


def _bits(m: int):
    while m:
        low = m & -m
        yield low.bit_length() - 1
        m ^= low


def mwis_exact(g: ConflictGraph, u: np.ndarray, budget: ExactBudget | None = None) -> SolveResult:
    """Maximum-weight independent set by depth-first branch and bound.

    Vertices are relabelled by descending weight so that bit order equals
    weight order.  The upper bound partitions the candidate set greedily into
    cliques and sums each clique's heaviest weight.  Branching picks the
    candidate with most candidate neighbors, include-branch first.  Candidates
    with no candidate neighbors are taken without branching.

    If the budget runs out the best solution found so far is returned with
    ``optimal=False``.
    """
    budget = budget or ExactBudget()
    t0 = time.perf_counter()
    u = np.asarray(u, dtype=float)
    n = g.n
    if n == 0:
        return SolveResult(solution=(), utility=0.0, optimal=True, elapsed=0.0, info={"nodes": 0})
    if np.any(u < 0):
        raise ValueError("exact solver expects non-negative utilities")

    order = np.lexsort((np.arange(n), -u))  # new label i -> old vertex order[i]
    relabel = np.empty(n, dtype=np.int64)
    relabel[order] = np.arange(n)
    weight = u[order].tolist()
    masks = []
    for i in range(n):
        m = 0
        for x in g.neighbor_lists[int(order[i])]:
            m |= 1 << int(relabel[x])
        masks.append(m)

    seed = greedy_select(g, u)
    best_w = float(sum(u[v] for v in seed))
    best_set = 0
    for v in seed:
        best_set |= 1 << int(relabel[v])

    nodes = 0
    deadline = t0 + budget.time_limit
    node_limit = budget.node_limit

    def clique_bound(cand: int) -> float:
        commons: list[int] = []
        total = 0.0
        for v in _bits(cand):
            bit = 1 << v
            for i, c in enumerate(commons):
                if c & bit:
                    commons[i] = c & masks[v]
                    break
            else:
                commons.append(masks[v])
                total += weight[v]
        return total

    def search(cand: int, cur_w: float, cur_set: int) -> None:
        nonlocal nodes, best_w, best_set
        nodes += 1
        if nodes > node_limit or (nodes & 1023 == 0 and time.perf_counter() > deadline):
            raise _BudgetExceeded
        # free picks: candidates isolated within the candidate set
        pivot = -1
        pivot_deg = -1
        free = 0
        for v in _bits(cand):
            d = (masks[v] & cand).bit_count()
            if d == 0:
                free |= 1 << v
            elif d > pivot_deg:
                pivot, pivot_deg = v, d
        if free:
            for v in _bits(free):
                cur_w += weight[v]
            cur_set |= free
            cand &= ~free
        if cand == 0:
            if cur_w > best_w:
                best_w, best_set = cur_w, cur_set
            return
        if cur_w + clique_bound(cand) <= best_w:
            return
        bit = 1 << pivot
        search(cand & ~bit & ~masks[pivot], cur_w + weight[pivot], cur_set | bit)
        search(cand & ~bit, cur_w, cur_set)

    limit = sys.getrecursionlimit()
    if limit < 4 * n + 100:
        sys.setrecursionlimit(4 * n + 100)
    optimal = True
    try:
        search((1 << n) - 1, 0.0, 0)
    except _BudgetExceeded:
        optimal = False
    finally:
        sys.setrecursionlimit(limit)

    sol = sorted(int(order[i]) for i in _bits(best_set))
    return SolveResult(
        solution=tuple(sol),
        utility=float(sum(u[v] for v in sol)),
        optimal=optimal,
        elapsed=time.perf_counter() - t0,
        info={"nodes": nodes},
    )


def mwis_brute_force(g: ConflictGraph, u: np.ndarray) -> SolveResult:
    """Enumerate all ``2**V`` subsets; meant for ``V <= 20``."""
    n = g.n
    if n > 22:
        raise ValueError("brute force limited to V <= 22")
    u = np.asarray(u, dtype=float)
    subsets = np.arange(1 << n, dtype=np.int64)
    feasible = np.ones(len(subsets), dtype=bool)
    for i, j in g.edges().tolist():
        feasible &= ~(((subsets >> i) & 1).astype(bool) & ((subsets >> j) & 1).astype(bool))
    value = np.zeros(len(subsets))
    for i in range(n):
        value += ((subsets >> i) & 1) * u[i]
    value[~feasible] = -np.inf
    best = int(np.argmax(value))
    sol = tuple(i for i in range(n) if best >> i & 1)
    return SolveResult(solution=sol, utility=float(sum(u[v] for v in sol)), optimal=True)


def approximation_ratio(sol: SolveResult, opt: SolveResult) -> float:
    """``u(sol) / u(opt)``; defined as 1 when the optimum is zero."""
    if opt.optimal is False:
        raise ValueError("reference solution is not certified optimal")
    if opt.utility <= 0:
        return 1.0
    return sol.utility / opt.utility
