"""GCN-guided centralized tree search over partial independent sets.

A search node holds the residual graph (as a vertex mask), the partial
solution, and the vertices excluded because they neighbor the partial
solution.  Adding vertex ``v`` removes ``v`` and its residual neighbors from
the residual graph.
"""

from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from linksched.gcn import GcnModel, embed, forward_crts
from linksched.graph import ConflictGraph
from linksched.greedy import SolveResult, greedy_order, greedy_select, total_utility


@dataclass(frozen=True)
class SearchNode:
    residual: np.ndarray
    partial: tuple[int, ...]
    excluded: np.ndarray

    @classmethod
    def root(cls, n: int) -> "SearchNode":
        return cls(np.ones(n, dtype=bool), (), np.zeros(n, dtype=bool))

    @property
    def terminal(self) -> bool:
        return not self.residual.any()

    def residual_vertices(self) -> np.ndarray:
        return np.flatnonzero(self.residual)

    def key(self) -> tuple[bytes, tuple[int, ...]]:
        return self.residual.tobytes(), self.partial


def expand(g: ConflictGraph, node: SearchNode, v: int) -> SearchNode:
    """Child state after adding residual vertex ``v`` to the partial solution."""
    if not (0 <= v < g.n) or not node.residual[v]:
        raise ValueError(f"vertex {v} is not in the residual graph")
    nb = g.neighbors(v)
    residual = node.residual.copy()
    residual[v] = False
    residual[nb] = False
    excluded = node.excluded.copy()
    excluded[nb] = True
    excluded[v] = False
    return SearchNode(residual, tuple(sorted(node.partial + (v,))), excluded)


def skip(node: SearchNode, v: int) -> SearchNode:
    """Drop ``v`` from the residual graph without selecting it."""
    residual = node.residual.copy()
    residual[v] = False
    return SearchNode(residual, node.partial, node.excluded)


def model_features(model: GcnModel, u_res: np.ndarray) -> np.ndarray:
    """Input features for a residual graph, per the model's feature mode."""
    if getattr(model, "features", "utility") == "ones":
        return np.ones(len(u_res))
    return u_res


def residual_embedding(g: ConflictGraph, idx: np.ndarray, u: np.ndarray, model: GcnModel) -> np.ndarray:
    sub = g.subgraph(idx)
    return embed(sub, model_features(model, u[idx]), model)


# -- rollout search -------------------------------------------------------


@dataclass
class RolloutConfig:
    branching: int = 32
    variant: str = "vanilla"  # "vanilla" or "enhanced"
    fortify: bool = False
    random_ties: bool = False
    seed: int | None = None

    def __post_init__(self):
        if self.branching < 1:
            raise ValueError("branching factor must be >= 1")
        if self.variant not in ("vanilla", "enhanced"):
            raise ValueError("variant must be 'vanilla' or 'enhanced'")


def gcn_crs(
    g: ConflictGraph,
    u: np.ndarray,
    model: GcnModel,
    cfg: RolloutConfig | None = None,
    embedder: Callable[[ConflictGraph, np.ndarray, np.ndarray], np.ndarray] | None = None,
) -> SolveResult:
    """Rollout search with one-step lookahead.

    At each step the top-``B`` residual vertices by ``z * u`` become
    candidates.  Each candidate is scored by its utility plus the utility
    of a greedy completion of the resulting residual graph, ranked by ``u``
    (vanilla) or by ``z * u`` (enhanced).  The best candidate is committed.

    With ``fortify`` the heaviest residual vertex is always a candidate and
    the best complete trajectory seen so far is followed whenever no
    candidate matches it, so the result is never worse than plain greedy.

    ``embedder(g, residual_idx, u)`` overrides how ``z`` is computed for the
    residual graph; the default runs ``model`` on the induced subgraph.
    """
    cfg = cfg or RolloutConfig()
    t0 = time.perf_counter()
    u = np.asarray(u, dtype=float)
    rng = np.random.default_rng(cfg.seed)
    embedder = embedder or (lambda gg, idx, uu: residual_embedding(gg, idx, uu, model))
    node = SearchNode.root(g.n)
    steps = 0
    best_traj: frozenset[int] | None = None
    best_traj_value = -np.inf
    if cfg.fortify:
        best_traj = frozenset(greedy_select(g, u))
        best_traj_value = total_utility(u, best_traj)
    while not node.terminal:
        idx = node.residual_vertices()
        z = embedder(g, idx, u)
        w_res = z * u[idx]
        ranked = idx[greedy_order(w_res)]
        cands = ranked[: cfg.branching].tolist()
        if cfg.fortify:
            top_u = int(idx[greedy_order(u[idx])[0]])
            if top_u not in cands:
                cands.append(top_u)
        w_full = np.zeros(g.n)
        w_full[idx] = w_res
        guide = u if cfg.variant == "vanilla" else w_full
        scores = []
        trajs = []
        for v in cands:
            child = expand(g, node, v)
            tail = greedy_select(g, guide, alive=child.residual) if not child.terminal else []
            scores.append(u[v] + total_utility(u, tail))
            trajs.append(child.partial + tuple(tail))
        scores_arr = np.asarray(scores)
        top = scores_arr.max()
        tied = [i for i, s in enumerate(scores) if s == top]
        if cfg.random_ties and len(tied) > 1:
            pick = int(rng.choice(tied))
        else:
            pick = min(tied, key=lambda i: cands[i])
        choice = cands[pick]
        if cfg.fortify:
            value = total_utility(u, trajs[pick])
            if value >= best_traj_value:
                best_traj, best_traj_value = frozenset(trajs[pick]), value
            else:
                # stored trajectory contains the partial solution, so its
                # remaining vertices are all residual
                choice = min(v for v in best_traj if node.residual[v])
        node = expand(g, node, int(choice))
        steps += 1
    sol = node.partial
    return SolveResult(
        solution=tuple(sorted(sol)),
        utility=total_utility(u, sol),
        rounds=steps,
        elapsed=time.perf_counter() - t0,
        info={"expansions": steps},
    )


# -- greedy Q search ------------------------------------------------------


def gcn_cgs_search(
    g: ConflictGraph,
    u: np.ndarray,
    model: GcnModel,
    epsilon: float = 0.0,
    seed=None,
    trace: list | None = None,
) -> SolveResult:
    """Greedy search using the GCN output on the residual graph as Q-values.

    With probability ``epsilon`` a uniformly random residual vertex is taken
    instead of the argmax.  When ``trace`` is a list, one
    ``(residual_idx, action_position)`` pair per step is appended to it.
    """
    t0 = time.perf_counter()
    u = np.asarray(u, dtype=float)
    rng = np.random.default_rng(seed)
    node = SearchNode.root(g.n)
    steps = 0
    while not node.terminal:
        idx = node.residual_vertices()
        if epsilon > 0 and rng.random() < epsilon:
            pos = int(rng.integers(len(idx)))
        else:
            q = residual_embedding(g, idx, u, model)
            pos = int(greedy_order(q)[0])
        if trace is not None:
            trace.append((idx, pos))
        node = expand(g, node, int(idx[pos]))
        steps += 1
    sol = node.partial
    return SolveResult(
        solution=sol,
        utility=total_utility(u, sol),
        rounds=steps,
        elapsed=time.perf_counter() - t0,
    )


# -- random tree search ---------------------------------------------------


@dataclass
class _CrtsShared:
    queue: list
    seen: set
    lock: threading.Lock = field(default_factory=threading.Lock)
    best: tuple[int, ...] = ()
    best_value: float = -np.inf
    history: list = field(default_factory=list)
    pops: int = 0
    descents: int = 0


def gcn_crts(
    g: ConflictGraph,
    u: np.ndarray,
    model: GcnModel,
    branching: int | None = None,
    backtrack_prob: float = 0.02,
    timeout: float = 10.0,
    threads: int = 1,
    seed=None,
    max_pops: int | None = None,
) -> SolveResult:
    """Random tree search guided by a ``V x B`` probability map.

    A node is popped uniformly at random from the shared queue and the GCN
    is evaluated on its residual graph.  For every column ``b`` the residual
    vertices are visited in descending ``Z[:, b] * u`` order and added one by
    one, skipping vertices already knocked out during the descent, until a
    terminal node is reached and recorded as a candidate.  Each inclusion
    also pushes, with probability ``backtrack_prob``, the sibling node that
    skips the included vertex.  With ``backtrack_prob=1`` the whole
    include/skip tree is eventually visited.

    Stops on timeout, empty queue, or after ``max_pops`` pops, but always
    finishes at least one descent.  ``info["history"]`` holds
    ``(elapsed, best_utility)`` pairs, one per improvement.
    """
    t0 = time.perf_counter()
    u = np.asarray(u, dtype=float)
    B = model.branching if branching is None else branching
    if B < 1 or B > model.branching:
        raise ValueError(f"branching {B} outside model's 1..{model.branching}")
    root = SearchNode.root(g.n)
    shared = _CrtsShared(queue=[root], seen={root.key()})
    if g.n == 0:
        return SolveResult((), 0.0, optimal=None, info={"history": [(0.0, 0.0)], "pops": 0})

    def record(node: SearchNode) -> None:
        value = total_utility(u, node.partial)
        with shared.lock:
            if value > shared.best_value:
                shared.best_value = value
                shared.best = node.partial
                shared.history.append((time.perf_counter() - t0, value))

    def push(node: SearchNode) -> None:
        with shared.lock:
            k = node.key()
            if k not in shared.seen:
                shared.seen.add(k)
                shared.queue.append(node)

    def worker(wid: int) -> None:
        rng = np.random.default_rng(None if seed is None else [seed, wid])
        while True:
            with shared.lock:
                out_of_time = time.perf_counter() - t0 >= timeout and shared.descents > 0
                if not shared.queue or out_of_time or (max_pops is not None and shared.pops >= max_pops):
                    return
                node = shared.queue.pop(int(rng.integers(len(shared.queue))))
                shared.pops += 1
            idx = node.residual_vertices()
            sub = g.subgraph(idx)
            Z = forward_crts(sub, u[idx], model)[:, :B]
            for b in range(B):
                order = idx[greedy_order(Z[:, b] * u[idx])]
                child = node
                for v in order.tolist():
                    if not child.residual[v]:
                        continue  # knocked out earlier in this descent
                    if rng.random() < backtrack_prob:
                        sibling = skip(child, v)
                        if sibling.terminal:
                            record(sibling)
                        else:
                            push(sibling)
                    child = expand(g, child, v)
                record(child)
                with shared.lock:
                    shared.descents += 1

    if threads <= 1:
        worker(0)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(worker, range(threads)))
    sol = shared.best
    return SolveResult(
        solution=tuple(sorted(sol)),
        utility=total_utility(u, sol),
        elapsed=time.perf_counter() - t0,
        info={
            "history": shared.history,
            "pops": shared.pops,
            "exhausted": not shared.queue,
        },
    )
