"""Distributed solvers: local greedy on topology-aware utilities ``z * u``."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from linksched.gcn import GcnModel, embed, init_model
from linksched.graph import ConflictGraph
from linksched.greedy import SolveResult, lgs, local_max_round, neighbors_of, total_utility

EMBEDDING_KINDS = ("gcn", "mlp", "random", "constant", "cached")


@dataclass
class EmbeddingSource:
    """Where a solver gets its per-link scaling ``z`` from.

    ``cached`` replays a stored embedding computed on an earlier topology;
    ``random`` draws ``z ~ N(mean, std)`` per call.
    """

    kind: str = "constant"
    model: GcnModel | None = None
    mean: float = 1.0
    std: float = 0.2
    seed: int | None = None
    cache: np.ndarray | None = None
    origin: str | None = None

    def __post_init__(self):
        if self.kind not in EMBEDDING_KINDS:
            raise ValueError(f"unknown embedding kind {self.kind!r}")
        if self.kind in ("gcn", "mlp") and self.model is None:
            raise ValueError(f"{self.kind} embedding needs a model")
        if self.kind == "cached" and self.cache is None:
            raise ValueError("cached embedding needs a stored vector")

    @classmethod
    def cached_from(cls, g: ConflictGraph, source: "EmbeddingSource", features=None, origin: str | None = None):
        z = resolve_embedding(source, g, features)
        return cls(kind="cached", cache=z.copy(), origin=origin)

    @property
    def extra_rounds(self) -> int:
        """Exchange rounds spent computing ``z`` before the greedy phase."""
        if self.kind == "gcn":
            return self.model.depth
        return 0


def mlp_features(g: ConflictGraph) -> np.ndarray:
    """Per-vertex perceptron input: a constant channel and ``d / mean(d)``."""
    d = g.degrees.astype(float)
    mean = d.mean() if g.n and d.mean() > 0 else 1.0
    return np.stack([np.ones(g.n), d / mean], axis=1)


def init_mlp(depth: int = 5, width: int = 32, seed=None, noise: float | None = 0.1) -> GcnModel:
    """Per-vertex perceptron on ``mlp_features``.

    With ``noise`` set, Glorot weights are scaled by ``noise`` and the
    constant input channel is routed through unit 0 of every layer, so the
    untrained output is ``z ~ 1`` plus a small degree-dependent term (the
    analogue of the GCN identity start).  ``noise=None`` gives plain Glorot.
    """
    dims = [2] + [width] * (depth - 1) + [1]
    model = init_model(dims, seed, use_laplacian=False)
    if noise is not None:
        for layer in model.layers:
            layer.theta0 *= noise
            layer.theta0[0, 0] += 1.0
    return model


def default_features(model: GcnModel, g: ConflictGraph, u: np.ndarray) -> np.ndarray:
    if not model.use_laplacian and model.input_dim == 2:
        return mlp_features(g)
    if model.features == "ones":
        return np.ones(g.n)
    return np.asarray(u, dtype=float)


def resolve_embedding(source: EmbeddingSource, g: ConflictGraph, features=None, u=None) -> np.ndarray:
    """Per-vertex scaling ``z`` for graph ``g``.

    ``features`` overrides the model input; otherwise it follows the model's
    feature mode (``u`` is needed for utility-fed models).
    """
    n = g.n
    if source.kind == "constant":
        return np.ones(n)
    if source.kind == "random":
        return np.random.default_rng(source.seed).normal(source.mean, source.std, size=n)
    if source.kind == "cached":
        if len(source.cache) != n:
            raise ValueError(f"cached embedding has length {len(source.cache)}, graph has {n} vertices")
        return np.asarray(source.cache, dtype=float)
    model = source.model
    if source.kind == "mlp":
        x = mlp_features(g) if features is None else features
    else:
        if features is None:
            if model.features == "utility" and u is None:
                raise ValueError("utility-fed model needs u")
            features = default_features(model, g, u if u is not None else np.ones(n))
        x = features
    return embed(g, x, model)


def gcn_lgs(
    g: ConflictGraph,
    u: np.ndarray,
    source: EmbeddingSource,
    features=None,
    max_rounds: int | None = None,
) -> SolveResult:
    """Local greedy on ``w = z * u``; utility reported on ``u``.

    A freshly computed GCN embedding adds one exchange round per layer to
    the round count; cached, random, and constant embeddings add none.
    Truncation (``max_rounds``) applies to the greedy phase only.
    """
    t0 = time.perf_counter()
    u = np.asarray(u, dtype=float)
    z = resolve_embedding(source, g, features, u)
    res = lgs(g, z * u, max_rounds=max_rounds, u=u)
    res.rounds += source.extra_rounds
    res.elapsed = time.perf_counter() - t0
    res.info["embedding"] = source.kind
    return res


def gcn_lgs_it(
    g: ConflictGraph,
    u: np.ndarray,
    model: GcnModel,
    features=None,
    max_outer: int | None = None,
) -> SolveResult:
    """GCN re-applied to the residual graph before every greedy round.

    Each outer round runs the GCN on the residual graph (one exchange per
    layer), then one selection round where every strict local maximum of
    ``z * u`` joins and knocks out its neighbors.  ``features`` is a full
    length-V input; it is restricted to the residual each round.
    """
    t0 = time.perf_counter()
    u = np.asarray(u, dtype=float)
    n = g.n
    full_x = default_features(model, g, u) if features is None else np.asarray(features, dtype=float)
    alive = np.ones(n, dtype=bool)
    selected = np.zeros(n, dtype=bool)
    outer = rounds = messages = 0
    while alive.any():
        if max_outer is not None and outer >= max_outer:
            break
        idx = np.flatnonzero(alive)
        sub = g.subgraph(idx)
        is_mlp = not model.use_laplacian and model.input_dim == 2
        x = mlp_features(sub) if is_mlp else full_x[idx]
        z = embed(sub, x, model)
        w = np.zeros(n)
        w[idx] = z * u[idx]
        winners = local_max_round(g, w, alive)
        selected |= winners
        alive &= ~(winners | neighbors_of(g, winners))
        messages += int(winners.sum())
        rounds += model.depth + 1
        outer += 1
    sol = np.flatnonzero(selected).tolist()
    return SolveResult(
        solution=tuple(sol),
        utility=total_utility(u, sol),
        rounds=rounds,
        messages=messages,
        elapsed=time.perf_counter() - t0,
        info={"outer": outer},
    )
