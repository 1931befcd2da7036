"""Conflict graphs: representation, random generators, Laplacian, I/O.

Vertices are wireless links; an edge marks two links that interfere.  A
``ConflictGraph`` is immutable once built and stores neighbors in
compressed-row form with each neighbor list sorted ascending.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)


class GraphFormatError(ValueError):
    """A graph file could not be parsed."""


class GraphSchemaError(ValueError):
    """A graph file parsed but violates the graph invariants."""


class ConflictGraph:
    """Undirected simple graph in compressed-row form.

    Parameters
    ----------
    n : int
        Number of vertices.
    indptr, indices : ndarray
        CSR structure; ``indices[indptr[v]:indptr[v + 1]]`` are the sorted
        neighbors of ``v``.  Every edge appears in both directions.
    """

    __slots__ = ("n", "indptr", "indices", "__dict__")

    def __init__(self, n: int, indptr: np.ndarray, indices: np.ndarray, *, check: bool = True):
        self.n = int(n)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.indptr.flags.writeable = False
        self.indices.flags.writeable = False
        if check:
            self.validate()

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Sequence[int]]) -> "ConflictGraph":
        """Build from an edge list; duplicates and self-loops are rejected."""
        e = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise GraphSchemaError(f"edge endpoint out of range for V={n}")
        if np.any(e[:, 0] == e[:, 1]):
            raise GraphSchemaError("self-loop in edge list")
        lo = np.minimum(e[:, 0], e[:, 1])
        hi = np.maximum(e[:, 0], e[:, 1])
        keys = lo * max(n, 1) + hi
        if len(np.unique(keys)) != len(keys):
            raise GraphSchemaError("duplicate edge in edge list")
        return cls._from_pairs(n, lo, hi)

    @classmethod
    def _from_pairs(cls, n: int, lo: np.ndarray, hi: np.ndarray) -> "ConflictGraph":
        rows = np.concatenate([lo, hi])
        cols = np.concatenate([hi, lo])
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        np.cumsum(indptr, out=indptr)
        return cls(n, indptr, cols, check=False)

    @classmethod
    def empty(cls, n: int) -> "ConflictGraph":
        return cls(n, np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), check=False)

    @classmethod
    def from_networkx(cls, g) -> "ConflictGraph":
        nodes = sorted(g.nodes())
        index = {v: i for i, v in enumerate(nodes)}
        return cls.from_edges(len(nodes), [(index[a], index[b]) for a, b in g.edges()])

    def validate(self) -> None:
        n = self.n
        if self.indptr.shape != (n + 1,) or self.indptr[0] != 0 or self.indptr[-1] != len(self.indices):
            raise GraphSchemaError("malformed indptr")
        if np.any(np.diff(self.indptr) < 0):
            raise GraphSchemaError("malformed indptr")
        if len(self.indices) and (self.indices.min() < 0 or self.indices.max() >= n):
            raise GraphSchemaError("neighbor index out of range")
        for v in range(n):
            nb = self.neighbors(v)
            if len(nb) and np.any(np.diff(nb) <= 0):
                raise GraphSchemaError(f"neighbors of {v} unsorted or duplicated")
            if np.any(nb == v):
                raise GraphSchemaError(f"self-loop at {v}")
        a = self.adjacency()
        if (a != a.T).nnz:
            raise GraphSchemaError("adjacency is not symmetric")

    # -- basic queries --------------------------------------------------

    @property
    def edge_count(self) -> int:
        return len(self.indices) // 2

    @cached_property
    def degrees(self) -> np.ndarray:
        d = np.diff(self.indptr)
        d.flags.writeable = False
        return d

    def degree(self, v: int) -> int:
        return int(self.indptr[v + 1] - self.indptr[v])

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    @cached_property
    def neighbor_lists(self) -> tuple[tuple[int, ...], ...]:
        ind = self.indices.tolist()
        ptr = self.indptr.tolist()
        return tuple(tuple(ind[ptr[v]:ptr[v + 1]]) for v in range(self.n))

    @cached_property
    def adj_masks(self) -> tuple[int, ...]:
        """Neighborhood of each vertex as a Python-int bitset."""
        masks = []
        for nb in self.neighbor_lists:
            m = 0
            for u in nb:
                m |= 1 << u
            masks.append(m)
        return tuple(masks)

    def edges(self) -> np.ndarray:
        """Edges as an ``(E, 2)`` array with ``i < j``, sorted."""
        rows = np.repeat(np.arange(self.n), self.degrees)
        keep = rows < self.indices
        return np.stack([rows[keep], self.indices[keep]], axis=1)

    def has_edge(self, u: int, v: int) -> bool:
        nb = self.neighbors(u)
        i = np.searchsorted(nb, v)
        return bool(i < len(nb) and nb[i] == v)

    def adjacency(self) -> sp.csr_matrix:
        data = np.ones(len(self.indices))
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def average_degree(self) -> float:
        return 2.0 * self.edge_count / self.n if self.n else 0.0

    def subgraph(self, vertices: np.ndarray) -> "ConflictGraph":
        """Induced subgraph on ``vertices`` (relabelled 0..k-1 in given order)."""
        vertices = np.asarray(vertices, dtype=np.int64)
        a = self.adjacency()[vertices][:, vertices].tocsr()
        a.sort_indices()
        return ConflictGraph(len(vertices), a.indptr, a.indices, check=False)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ConflictGraph):
            return NotImplemented
        return (
            self.n == other.n
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )

    def __hash__(self) -> int:
        return hash((self.n, self.indptr.tobytes(), self.indices.tobytes()))

    def __repr__(self) -> str:
        return f"ConflictGraph(V={self.n}, E={self.edge_count})"


@dataclass(frozen=True)
class MultiChannelMap:
    """Expanded vertex ``i`` is base link ``base[i]`` on channel ``channel[i]``.

    Channels are 0-based; expanded index is ``channel * V + base``.
    """

    channels: int
    base: np.ndarray
    channel: np.ndarray

    @property
    def base_count(self) -> int:
        return len(self.base) // self.channels if self.channels else 0

    def index(self, v: int, k: int) -> int:
        return k * self.base_count + v


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def gen_er(n: int, p: float, seed=None) -> ConflictGraph:
    """Erdos-Renyi graph: each pair is an edge independently with prob ``p``."""
    if n < 0 or not 0.0 <= p <= 1.0:
        raise ValueError("need n >= 0 and 0 <= p <= 1")
    rng = _rng(seed)
    lo, hi = np.triu_indices(n, k=1)
    keep = rng.random(len(lo)) < p
    return ConflictGraph._from_pairs(n, lo[keep], hi[keep])


def gen_ba(n: int, m: int, seed=None) -> ConflictGraph:
    """Barabasi-Albert preferential attachment.

    The seed core is a clique on the first ``m`` vertices, so the edge count is
    ``m(m-1)/2 + (n-m)m``.  Each later vertex attaches to ``m`` distinct
    existing vertices drawn with probability proportional to degree (uniform
    while all degrees are zero, which only happens for ``m = 1``).
    """
    if m < 1 or m >= n:
        raise ValueError(f"BA model needs 1 <= m < n, got m={m}, n={n}")
    rng = _rng(seed)
    lo: list[int] = []
    hi: list[int] = []
    for i in range(m):
        for j in range(i + 1, m):
            lo.append(i)
            hi.append(j)
    # one entry per edge endpoint; sampling from it is degree-proportional
    repeated = lo + hi
    for v in range(m, n):
        if repeated:
            targets: set[int] = set()
            while len(targets) < m:
                targets.add(repeated[int(rng.integers(len(repeated)))])
        else:
            targets = set(int(t) for t in rng.choice(v, size=m, replace=False))
        for t in sorted(targets):
            lo.append(t)
            hi.append(v)
            repeated.append(t)
            repeated.append(v)
    return ConflictGraph._from_pairs(n, np.asarray(lo, dtype=np.int64), np.asarray(hi, dtype=np.int64))


def normalized_laplacian(g: ConflictGraph) -> sp.csr_matrix:
    """``I - D^-1/2 A D^-1/2`` with diagonal 1 for every vertex, isolated or not."""
    d = g.degrees.astype(float)
    inv = np.zeros_like(d)
    nz = d > 0
    inv[nz] = 1.0 / np.sqrt(d[nz])
    rows = np.repeat(np.arange(g.n), g.degrees)
    off = -inv[rows] * inv[g.indices]
    lap = sp.csr_matrix((off, g.indices, g.indptr), shape=(g.n, g.n)) + sp.identity(g.n, format="csr")
    lap.sort_indices()
    return lap


def multi_channel_graph(
    g: ConflictGraph,
    channels: int,
    retain_prob: float = 0.8,
    seed=None,
    *,
    same_link_clique: bool = True,
) -> tuple[ConflictGraph, MultiChannelMap]:
    """Expand a single-channel conflict graph to ``channels`` sub-channels.

    For every base edge and every channel the same-channel copy is kept with
    probability ``retain_prob``.  With ``same_link_clique`` the copies of one
    link are pairwise adjacent, so a single-radio link can use at most one
    channel per slot.
    """
    if channels < 1:
        raise ValueError("channels must be >= 1")
    rng = _rng(seed)
    n = g.n
    base_edges = g.edges()
    lo_parts = []
    hi_parts = []
    for k in range(channels):
        keep = rng.random(len(base_edges)) < retain_prob
        kept = base_edges[keep]
        lo_parts.append(kept[:, 0] + k * n)
        hi_parts.append(kept[:, 1] + k * n)
    if same_link_clique:
        for k1 in range(channels):
            for k2 in range(k1 + 1, channels):
                lo_parts.append(np.arange(n) + k1 * n)
                hi_parts.append(np.arange(n) + k2 * n)
    lo = np.concatenate(lo_parts) if lo_parts else np.zeros(0, dtype=np.int64)
    hi = np.concatenate(hi_parts) if hi_parts else np.zeros(0, dtype=np.int64)
    expanded = ConflictGraph._from_pairs(channels * n, lo.astype(np.int64), hi.astype(np.int64))
    mapping = MultiChannelMap(
        channels=channels,
        base=np.tile(np.arange(n), channels),
        channel=np.repeat(np.arange(channels), n),
    )
    return expanded, mapping


def same_channel_edge_count(g: ConflictGraph, mapping: MultiChannelMap) -> int:
    e = g.edges()
    return int(np.sum(mapping.channel[e[:, 0]] == mapping.channel[e[:, 1]]))


def perturb_edges_with_stats(g: ConflictGraph, prob: float, seed=None) -> tuple[ConflictGraph, int, int]:
    """Replace each edge with probability ``prob`` by a random absent pair.

    Returns ``(graph, replaced, skipped)``; ``skipped`` counts replacements
    abandoned because the graph was complete.
    """
    rng = _rng(seed)
    n = g.n
    original = [tuple(e) for e in g.edges().tolist()]
    present = set(original)
    current = list(original)
    max_edges = n * (n - 1) // 2
    replaced = skipped = 0
    for i, edge in enumerate(original):
        if rng.random() >= prob:
            continue
        if len(present) >= max_edges:
            skipped += 1
            continue
        while True:
            a, b = (int(x) for x in rng.integers(n, size=2))
            if a == b:
                continue
            pair = (min(a, b), max(a, b))
            if pair not in present:
                break
        present.discard(edge)
        present.add(pair)
        current[i] = pair
        replaced += 1
    if skipped:
        logger.warning("perturb_edges: %d replacements skipped on a complete graph", skipped)
    out = ConflictGraph.from_edges(n, current) if current else ConflictGraph.empty(n)
    return out, replaced, skipped


def perturb_edges(g: ConflictGraph, prob: float, seed=None) -> ConflictGraph:
    return perturb_edges_with_stats(g, prob, seed)[0]


def edit_distance(g0: ConflictGraph, g1: ConflictGraph) -> float:
    """Fraction of ``g0``'s edges missing from ``g1``."""
    if g0.edge_count == 0:
        return 0.0
    a = {tuple(e) for e in g0.edges().tolist()}
    b = {tuple(e) for e in g1.edges().tolist()}
    return len(a - b) / len(a)


# -- file I/O ------------------------------------------------------------


def save_graph(path, g: ConflictGraph, weights: np.ndarray | None = None) -> None:
    doc: dict = {"v": g.n, "edges": g.edges().tolist()}
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        if w.shape != (g.n,):
            raise GraphSchemaError("weights length must equal V")
        doc["weights"] = [float(x) for x in w]
    Path(path).write_text(json.dumps(doc))


def load_graph(path) -> tuple[ConflictGraph, np.ndarray | None]:
    """Load a JSON graph file, or a CSV edge list with a ``src,dst`` header."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".csv":
        return _load_csv(text), None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return parse_graph_doc(doc, str(path))


def parse_graph_doc(doc, where: str = "<graph>") -> tuple[ConflictGraph, np.ndarray | None]:
    if not isinstance(doc, dict) or "v" not in doc or "edges" not in doc:
        raise GraphSchemaError(f"{where}: expected object with keys 'v' and 'edges'")
    n = doc["v"]
    if not isinstance(n, int) or n < 0:
        raise GraphSchemaError(f"{where}: 'v' must be a non-negative integer")
    edges = doc["edges"]
    for e in edges:
        if not (isinstance(e, list) and len(e) == 2 and all(isinstance(x, int) for x in e)):
            raise GraphSchemaError(f"{where}: malformed edge {e!r}")
        if not 0 <= e[0] < e[1] < n:
            raise GraphSchemaError(f"{where}: edge {e!r} must satisfy 0 <= i < j < V")
    g = ConflictGraph.from_edges(n, edges) if edges else ConflictGraph.empty(n)
    weights = doc.get("weights")
    if weights is not None:
        if len(weights) != n:
            raise GraphSchemaError(f"{where}: {len(weights)} weights for V={n}")
        weights = np.asarray(weights, dtype=float)
        if not np.all(np.isfinite(weights)):
            raise GraphSchemaError(f"{where}: non-finite weight")
    return g, weights


def _load_csv(text: str) -> ConflictGraph:
    reader = csv.reader(text.splitlines())
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["src", "dst"]:
        raise GraphFormatError("line 1: CSV edge list needs header 'src,dst'")
    edges = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            a, b = (int(x) for x in row)
        except ValueError as exc:
            raise GraphFormatError(f"line {lineno}: bad edge row {row!r}") from exc
        edges.append((a, b))
    n = 1 + max((max(e) for e in edges), default=-1)
    return ConflictGraph.from_edges(n, edges) if edges else ConflictGraph.empty(n)


def uniform_weights(n: int, seed=None) -> np.ndarray:
    return _rng(seed).random(n)


def er_for_degree(n: int, avg_degree: float, seed=None) -> ConflictGraph:
    """ER graph with expected average degree ``avg_degree`` (``p = d/(n-1)``)."""
    p = min(1.0, avg_degree / (n - 1)) if n > 1 else 0.0
    return gen_er(n, p, seed)


def ba_for_degree(n: int, avg_degree: float, seed=None) -> ConflictGraph:
    m = max(1, min(n - 1, int(math.floor(avg_degree + 0.5))))
    return gen_ba(n, m, seed)
