"""Graph dataset specifications and deterministic generation."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from linksched.graph import ConflictGraph, ba_for_degree, er_for_degree, load_graph, save_graph

FAMILIES = ("er", "ba")


@dataclass
class DatasetSpec:
    """Grid of ``(family, V, degree)`` cells with ``count`` graphs each.

    ``utilities`` adds one ``U(0, 1)`` weight vector per graph to the files.
    """

    families: list[str] = field(default_factory=lambda: ["er"])
    sizes: list[int] = field(default_factory=lambda: [30, 60])
    degrees: list[float] = field(default_factory=lambda: [5.0, 10.0])
    count: int = 100
    seed: int = 0
    utilities: bool = True

    def __post_init__(self):
        bad = [f for f in self.families if f not in FAMILIES]
        if bad:
            raise ValueError(f"unknown graph families {bad}")
        if self.count < 0:
            raise ValueError("count must be >= 0")
        for v, d in itertools.product(self.sizes, self.degrees):
            if v < 2 or not 0 <= d <= v - 1:
                raise ValueError(f"degree {d} infeasible for V={v}")

    @classmethod
    def from_dict(cls, doc: dict) -> "DatasetSpec":
        known = {k: doc[k] for k in ("families", "sizes", "degrees", "count", "seed", "utilities") if k in doc}
        if "family" in doc:
            known["families"] = [doc["family"]] if isinstance(doc["family"], str) else list(doc["family"])
        return cls(**known)

    def to_dict(self) -> dict:
        return asdict(self)

    def cells(self):
        return list(itertools.product(self.families, self.sizes, self.degrees))

    @property
    def total(self) -> int:
        return len(self.cells()) * self.count


@dataclass
class Instance:
    name: str
    graph: ConflictGraph
    u: np.ndarray | None
    family: str
    size: int
    degree: float


def _cell_seed(seed: int, cell: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, cell, k]).generate_state(1)[0])


def generate(spec: DatasetSpec) -> list[Instance]:
    out = []
    for ci, (fam, v, d) in enumerate(spec.cells()):
        for k in range(spec.count):
            s = _cell_seed(spec.seed, ci, k)
            g = er_for_degree(v, d, s) if fam == "er" else ba_for_degree(v, d, s)
            u = np.random.default_rng([s, 1]).random(v) if spec.utilities else None
            out.append(Instance(f"{fam}_v{v}_d{d:g}_{k:04d}", g, u, fam, v, d))
    return out


def write_dataset(instances: list[Instance], out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for inst in instances:
        p = out_dir / f"{inst.name}.json"
        save_graph(p, inst.graph, inst.u)
        paths.append(p)
    return paths


def read_dataset(dir_path) -> list[Instance]:
    """Every ``*.json`` graph file in ``dir_path`` (manifest excluded), sorted by name."""
    out = []
    for p in sorted(Path(dir_path).glob("*.json")):
        if p.name == "manifest.json":
            continue
        g, u = load_graph(p)
        fam, v, d = p.stem.split("_")[:3] if p.stem.count("_") >= 3 else ("?", "v0", "d0")
        out.append(Instance(p.stem, g, u, fam, g.n, float(d[1:]) if d[1:] else 0.0))
    return out
