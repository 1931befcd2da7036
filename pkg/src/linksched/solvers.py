"""Name-based registry of every MWIS solver, for the CLI and batch evaluation."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from linksched.distributed import EmbeddingSource, gcn_lgs, gcn_lgs_it
from linksched.exact import ExactBudget, mwis_exact
from linksched.gcn import GcnModel
from linksched.graph import ConflictGraph
from linksched.greedy import SolveResult, cgs, lgs
from linksched.search import RolloutConfig, gcn_cgs_search, gcn_crs, gcn_crts

Solver = Callable[..., SolveResult]

# solver name -> model slot it needs
MODEL_SLOTS = {
    "gcn-lgs": "gcn",
    "gcn-lgs-it": "gcn",
    "gcn-crs-v": "gcn",
    "gcn-crs-e": "gcn",
    "gcn-crs-f": "gcn",
    "mlp-lgs": "mlp",
    "gcn-cgs-search": "q",
    "gcn-crts": "crts",
}
PLAIN = ("cgs", "lgs", "random-lgs", "exact")


class MissingModelError(LookupError):
    pass


@dataclass
class SolverOptions:
    branching: int = 32
    crts_timeout: float = 10.0
    crts_max_pops: int | None = None
    crts_backtrack: float = 0.02
    exact: ExactBudget = field(default_factory=ExactBudget)


def solver_names() -> list[str]:
    return list(PLAIN) + list(MODEL_SLOTS) + ["lgs-<N>"]


def build_solver(name: str, models: dict[str, GcnModel] | None = None, opts: SolverOptions | None = None) -> Solver:
    """Callable ``solver(g, u, seed=None) -> SolveResult``.

    ``lgs-<N>`` is local greedy cut off after ``N`` rounds.  Model-guided
    solvers look up their model by slot in ``models``.
    """
    models = models or {}
    opts = opts or SolverOptions()
    m = re.fullmatch(r"lgs-(\d+)", name)
    if m:
        n_rounds = int(m.group(1))
        if n_rounds < 1:
            raise ValueError("truncated greedy needs at least one round")
        return lambda g, u, seed=None: lgs(g, u, max_rounds=n_rounds)
    if name == "cgs":
        return lambda g, u, seed=None: cgs(g, u)
    if name == "lgs":
        return lambda g, u, seed=None: lgs(g, u)
    if name == "exact":
        return lambda g, u, seed=None: mwis_exact(g, u, opts.exact)
    if name == "random-lgs":
        return lambda g, u, seed=None: gcn_lgs(g, u, EmbeddingSource("random", seed=seed))
    if name not in MODEL_SLOTS:
        raise ValueError(f"unknown solver {name!r}; known: {', '.join(solver_names())}")
    slot = MODEL_SLOTS[name]
    model = models.get(slot)
    if model is None:
        raise MissingModelError(f"solver {name!r} needs a {slot!r} model")
    if name == "gcn-lgs":
        src = EmbeddingSource("gcn", model=model)
        return lambda g, u, seed=None: gcn_lgs(g, u, src)
    if name == "mlp-lgs":
        src = EmbeddingSource("mlp", model=model)
        return lambda g, u, seed=None: gcn_lgs(g, u, src)
    if name == "gcn-lgs-it":
        return lambda g, u, seed=None: gcn_lgs_it(g, u, model)
    if name.startswith("gcn-crs"):
        variant = "vanilla" if name == "gcn-crs-v" else "enhanced"
        cfg = RolloutConfig(branching=opts.branching, variant=variant, fortify=name == "gcn-crs-f")
        return lambda g, u, seed=None: gcn_crs(g, u, model, cfg)
    if name == "gcn-cgs-search":
        return lambda g, u, seed=None: gcn_cgs_search(g, u, model)
    # gcn-crts
    return lambda g, u, seed=None: gcn_crts(
        g,
        u,
        model,
        backtrack_prob=opts.crts_backtrack,
        timeout=opts.crts_timeout,
        seed=seed,
        max_pops=opts.crts_max_pops,
    )


def run(solver: Solver, g: ConflictGraph, u: np.ndarray, seed=None) -> SolveResult:
    return solver(g, np.asarray(u, dtype=float), seed=seed)
