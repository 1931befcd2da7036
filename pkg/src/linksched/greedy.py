"""Centralized and local greedy MWIS solvers."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from linksched.graph import ConflictGraph


@dataclass
class SolveResult:
    """Outcome of one MWIS solve.

    ``utility`` is always evaluated with the original per-link utilities,
    even when the solver ranked vertices by scaled weights.
    """

    solution: tuple[int, ...]
    utility: float
    rounds: int = 0
    messages: int = 0
    elapsed: float = 0.0
    optimal: bool | None = None
    info: dict = field(default_factory=dict)

    def as_set(self) -> frozenset[int]:
        return frozenset(self.solution)

    def indicator(self, n: int) -> np.ndarray:
        x = np.zeros(n)
        x[list(self.solution)] = 1.0
        return x


def is_independent(g: ConflictGraph, vertices) -> bool:
    sel = np.zeros(g.n, dtype=bool)
    vs = np.asarray(list(vertices), dtype=np.int64)
    if len(vs) == 0:
        return True
    if len(np.unique(vs)) != len(vs):
        return False
    sel[vs] = True
    for v in vs:
        if sel[g.neighbors(int(v))].any():
            return False
    return True


def total_utility(u: np.ndarray, vertices) -> float:
    vs = sorted(vertices)
    return float(np.sum(np.asarray(u, dtype=float)[vs])) if vs else 0.0


def priority(w: np.ndarray) -> np.ndarray:
    """Strict total order: larger weight first, lower index on ties.

    Returns ``prio`` with values ``1..n``; ``prio[a] > prio[b]`` means ``a``
    beats ``b``.
    """
    w = np.asarray(w, dtype=float)
    n = len(w)
    order = np.lexsort((np.arange(n), -w))
    prio = np.empty(n, dtype=np.int64)
    prio[order] = np.arange(n, 0, -1)
    return prio


def greedy_order(w: np.ndarray) -> np.ndarray:
    """Vertices by descending weight, ties by ascending index."""
    w = np.asarray(w, dtype=float)
    return np.lexsort((np.arange(len(w)), -w))


def cgs(g: ConflictGraph, w: np.ndarray, u: np.ndarray | None = None) -> SolveResult:
    """Centralized greedy: repeatedly take the heaviest remaining vertex."""
    t0 = time.perf_counter()
    w = np.asarray(w, dtype=float)
    u = w if u is None else np.asarray(u, dtype=float)
    sol = greedy_select(g, w)
    return SolveResult(
        solution=tuple(sorted(sol)),
        utility=total_utility(u, sol),
        rounds=len(sol),
        elapsed=time.perf_counter() - t0,
    )


def greedy_select(g: ConflictGraph, w: np.ndarray, alive: np.ndarray | None = None) -> list[int]:
    """Greedy pick order on the subgraph induced by ``alive`` (all if None)."""
    blocked = np.zeros(g.n, dtype=bool) if alive is None else ~np.asarray(alive, dtype=bool)
    blocked = blocked.tolist()
    nbrs = g.neighbor_lists
    picked = []
    for v in greedy_order(w).tolist():
        if blocked[v]:
            continue
        picked.append(v)
        blocked[v] = True
        for x in nbrs[v]:
            blocked[x] = True
    return picked


def _segment_max(values: np.ndarray, indptr: np.ndarray) -> np.ndarray:
    """Per-row max of CSR ``values``; empty rows give 0."""
    n = len(indptr) - 1
    out = np.zeros(n, dtype=values.dtype)
    if len(values) == 0:
        return out
    nonempty = indptr[1:] > indptr[:-1]
    starts = indptr[:-1][nonempty]
    out[nonempty] = np.maximum.reduceat(values, starts)
    return out


def lgs(
    g: ConflictGraph,
    w: np.ndarray,
    max_rounds: int | None = None,
    u: np.ndarray | None = None,
) -> SolveResult:
    """Local greedy solver as a synchronous message-passing simulation.

    Each round every undecided link shares its weight and its status from
    the previous round with its neighbors.  A link hearing from a selected
    neighbor drops out; a link whose undecided neighbors all rank below it
    joins the solution and broadcasts one control message.  Status news
    travels one hop per round, so the increasing-weight path on V links needs
    exactly V rounds.

    With ``max_rounds`` the run stops early and returns the links selected so
    far, which is still an independent set.
    """
    t0 = time.perf_counter()
    w = np.asarray(w, dtype=float)
    u = w if u is None else np.asarray(u, dtype=float)
    n = g.n
    prio = priority(w)
    status = np.zeros(n, dtype=np.int8)
    indptr, indices = g.indptr, g.indices
    rounds = 0
    while (status == 0).any():
        if max_rounds is not None and rounds >= max_rounds:
            break
        old = status
        nb_status = old[indices]
        hit = _segment_max((nb_status == 1).astype(np.int8), indptr).astype(bool)
        nb_prio = np.where(nb_status == 0, prio[indices], 0)
        best_nb = _segment_max(nb_prio, indptr)
        undecided = old == 0
        status = old.copy()
        status[undecided & hit] = -1
        status[undecided & ~hit & (prio > best_nb)] = 1
        rounds += 1
    sol = np.flatnonzero(status == 1).tolist()
    return SolveResult(
        solution=tuple(sol),
        utility=total_utility(u, sol),
        rounds=rounds,
        messages=len(sol),
        elapsed=time.perf_counter() - t0,
    )


def lgs_truncated(g: ConflictGraph, w: np.ndarray, n_rounds: int, u: np.ndarray | None = None) -> SolveResult:
    if n_rounds < 1:
        raise ValueError("truncation needs at least one round")
    return lgs(g, w, max_rounds=n_rounds, u=u)


def local_max_round(g: ConflictGraph, w: np.ndarray, alive: np.ndarray) -> np.ndarray:
    """One selection round on the residual graph: strict local maxima of ``w``.

    Ties go to the lower index.  Returns a boolean mask of winners.
    """
    prio = priority(w)
    nb_alive = alive[g.indices]
    nb_prio = np.where(nb_alive, prio[g.indices], 0)
    best_nb = _segment_max(nb_prio, g.indptr)
    return alive & (prio > best_nb)


def neighbors_of(g: ConflictGraph, mask: np.ndarray) -> np.ndarray:
    return _segment_max(mask[g.indices].astype(np.int8), g.indptr).astype(bool)
