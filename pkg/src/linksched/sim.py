"""Time-slotted link scheduling on random geometric wireless networks.

Every slot each link draws a rate ``r`` and each scheduler picks an
independent set of the conflict graph under a per-link utility built from
queue ``q`` and rate (``min(q, r)`` or ``q * r``).  Scheduled links deliver
``min(q, r)`` packets, then Poisson arrivals join the queues.  Arrival and
rate streams are drawn once per instance and replayed for every scheduler.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from linksched.distributed import EmbeddingSource, gcn_lgs
from linksched.exact import ExactBudget, mwis_exact
from linksched.gcn import GcnModel
from linksched.graph import ConflictGraph, MultiChannelMap, multi_channel_graph
from linksched.greedy import SolveResult, cgs, is_independent, lgs
from linksched.search import RolloutConfig, gcn_crs

RATE_MEAN = 50.0
RATE_STD = 25.0
RATE_MAX = 100.0

Scheduler = Callable[[ConflictGraph, np.ndarray], SolveResult]


@dataclass(frozen=True)
class WirelessNetwork:
    positions: np.ndarray  # (n_users, 2)
    links: np.ndarray  # (L, 2) user pairs, one single-hop flow per link
    graph: ConflictGraph
    seed: int | None = None

    @property
    def link_count(self) -> int:
        return len(self.links)


def conflict_graph(positions: np.ndarray, links: np.ndarray, interf_radius: float) -> ConflictGraph:
    """Links conflict when any endpoint of one is within ``interf_radius`` of the other's."""
    n_links = len(links)
    if n_links < 2:
        return ConflictGraph.empty(n_links)
    ends = positions[links]  # (L, 2 users, 2 coords)
    close = np.zeros((n_links, n_links), dtype=bool)
    for a in range(2):
        for b in range(2):
            diff = ends[:, None, a, :] - ends[None, :, b, :]
            dist = np.sqrt((diff**2).sum(-1))
            close |= dist <= interf_radius
            # shared users always conflict, even at radius 0
            close |= (links[:, None, a] == links[None, :, b])
    i, j = np.nonzero(np.triu(close, 1))
    return ConflictGraph._from_pairs(n_links, i.astype(np.int64), j.astype(np.int64))


def gen_network(
    n_users: int = 100,
    area: float = 250.0,
    link_radius: float = 1.0,
    interf_radius: float = 4.0,
    seed=None,
    positions: np.ndarray | None = None,
) -> WirelessNetwork:
    """Uniform users in a square of the given area; links between users closer than ``link_radius``."""
    if n_users < 0 or area <= 0 or link_radius <= 0 or interf_radius < 0:
        raise ValueError("network parameters must be positive")
    if positions is None:
        side = np.sqrt(area)
        positions = np.random.default_rng(seed).uniform(0.0, side, size=(n_users, 2))
    positions = np.asarray(positions, dtype=float)
    tree = cKDTree(positions)
    pairs = tree.query_pairs(link_radius, output_type="ndarray")
    # query_pairs is inclusive; links need strict distance < radius
    if len(pairs):
        d = np.linalg.norm(positions[pairs[:, 0]] - positions[pairs[:, 1]], axis=1)
        pairs = pairs[d < link_radius]
        pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    links = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return WirelessNetwork(positions, links, conflict_graph(positions, links, interf_radius), seed)


def draw_rates(shape, rng_or_seed=None, mean: float = RATE_MEAN, std: float = RATE_STD) -> np.ndarray:
    """Normal rates clipped to ``[0, 2 * mean]``."""
    rng = np.random.default_rng(rng_or_seed)
    return np.clip(rng.normal(mean, std, size=shape), 0.0, 2 * mean)


def draw_arrivals(lam: float, shape, rng_or_seed=None) -> np.ndarray:
    if lam < 0:
        raise ValueError("arrival rate must be non-negative")
    rng = np.random.default_rng(rng_or_seed)
    return rng.poisson(lam, size=shape).astype(float)


def link_utility(q: np.ndarray, r: np.ndarray, kind: str) -> np.ndarray:
    if kind == "min":
        return np.minimum(q, r)
    if kind == "product":
        return q * r
    raise ValueError(f"unknown utility kind {kind!r}")


def step(
    q: np.ndarray,
    graph: ConflictGraph,
    schedule,
    rates: np.ndarray,
    arrivals: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Serve the scheduled links, then add arrivals.

    Returns ``(new_q, delivered)``.  A non-independent schedule is a
    contract violation.
    """
    sched = list(schedule)
    assert is_independent(graph, sched), "schedule is not an independent set"
    delivered = np.zeros_like(q)
    delivered[sched] = np.minimum(q[sched], rates[sched])
    return q - delivered + arrivals, delivered


# -- schedulers -----------------------------------------------------------


def exact_scheduler(budget: ExactBudget | None = None) -> Scheduler:
    return lambda g, u: mwis_exact(g, u, budget)


def make_scheduler(
    name: str,
    model: GcnModel | None = None,
    branching: int = 32,
    budget: ExactBudget | None = None,
) -> Scheduler:
    """Scheduler by name: exact, cgs, lgs, gcn-lgs, gcn-crs-e, gcn-crs-v."""
    if name == "exact":
        return exact_scheduler(budget)
    if name == "cgs":
        return lambda g, u: cgs(g, u)
    if name == "lgs":
        return lambda g, u: lgs(g, u)
    if model is None:
        raise ValueError(f"scheduler {name!r} needs a model")
    if name == "gcn-lgs":
        src = EmbeddingSource("gcn", model=model)
        return lambda g, u: gcn_lgs(g, u, src)
    if name in ("gcn-crs-e", "gcn-crs-v"):
        cfg = RolloutConfig(branching=branching, variant="enhanced" if name.endswith("e") else "vanilla")
        return lambda g, u: gcn_crs(g, u, model, cfg)
    raise ValueError(f"unknown scheduler {name!r}")


# -- simulation -----------------------------------------------------------


@dataclass
class SimConfig:
    slots: int = 200
    channels: int = 1
    utility_kind: str = "min"
    channel_mode: str = "joint"  # "joint" or "sequential"
    arrival_rate: float | None = None  # per link per slot; None = oversaturated
    retain_prob: float = 0.8
    rate_mean: float = RATE_MEAN
    rate_std: float = RATE_STD
    check_oracle: bool = False  # solve exactly on every slot's weights too
    exact_budget: ExactBudget = field(default_factory=ExactBudget)

    def __post_init__(self):
        if self.slots < 0 or self.channels < 1:
            raise ValueError("slots must be >= 0 and channels >= 1")
        if self.channel_mode not in ("joint", "sequential"):
            raise ValueError("channel_mode must be 'joint' or 'sequential'")
        if self.utility_kind not in ("min", "product"):
            raise ValueError("utility_kind must be 'min' or 'product'")

    @property
    def lam(self) -> float:
        # oversaturated: arrivals outpace any single link's service
        return 2.0 * self.rate_mean if self.arrival_rate is None else self.arrival_rate


@dataclass
class Realization:
    """Replayed randomness of one instance: rates ``(T, K, L)``, arrivals ``(T, L)``."""

    rates: np.ndarray
    arrivals: np.ndarray
    multi: tuple[ConflictGraph, MultiChannelMap] | None

    @classmethod
    def draw(cls, net: WirelessNetwork, cfg: SimConfig, seed) -> "Realization":
        ss = np.random.SeedSequence(seed)
        s_rates, s_arr, s_chan = ss.spawn(3)
        L = net.link_count
        rates = draw_rates((cfg.slots, cfg.channels, L), np.random.default_rng(s_rates), cfg.rate_mean, cfg.rate_std)
        arrivals = draw_arrivals(cfg.lam, (cfg.slots, L), np.random.default_rng(s_arr))
        multi = None
        if cfg.channels > 1:
            # one channel realization per network, shared by all its instances
            chan = s_chan if net.seed is None else np.random.SeedSequence([net.seed, 0x6368])
            multi = multi_channel_graph(net.graph, cfg.channels, cfg.retain_prob, np.random.default_rng(chan))
        return cls(rates, arrivals, multi)


@dataclass
class SimMetrics:
    scheduler: str
    delivered: np.ndarray  # per slot
    utility: np.ndarray  # per slot, scheduled utility
    oracle_utility: np.ndarray | None  # per slot, exact optimum on the same weights
    backlog: np.ndarray  # per slot total queue after arrivals
    arrivals_total: float
    rounds: np.ndarray
    final_queue: np.ndarray
    elapsed: float = 0.0
    schedules: list = field(default_factory=list)

    @property
    def throughput(self) -> float:
        return float(self.delivered.sum())

    @property
    def median_backlog(self) -> float:
        return float(np.median(self.backlog)) if len(self.backlog) else 0.0

    @property
    def mean_ar(self) -> float:
        if self.oracle_utility is None:
            return float("nan")
        ok = self.oracle_utility > 0
        if not ok.any():
            return 1.0
        return float(np.mean(self.utility[ok] / self.oracle_utility[ok]))


def _channel_graphs(net: WirelessNetwork, real: Realization, cfg: SimConfig) -> list[ConflictGraph]:
    if real.multi is None:
        return [net.graph]
    mg, _ = real.multi
    L = net.link_count
    return [mg.subgraph(np.arange(k * L, (k + 1) * L)) for k in range(cfg.channels)]


def simulate(
    net: WirelessNetwork,
    scheduler: Scheduler,
    cfg: SimConfig,
    real: Realization,
    name: str = "",
    keep_schedules: bool = False,
) -> SimMetrics:
    """Run one scheduler through a pre-drawn realization.

    Joint mode solves one MWIS on the ``K``-channel graph per slot (copies of
    a link form a clique, so a link uses at most one channel).  Sequential
    mode solves the channels one after another, serving each before
    computing the next channel's utilities.
    """
    t0 = time.perf_counter()
    L = net.link_count
    K = cfg.channels
    q = np.zeros(L)
    T = cfg.slots
    delivered = np.zeros(T)
    util = np.zeros(T)
    oracle = np.zeros(T) if cfg.check_oracle else None
    backlog = np.zeros(T)
    rounds = np.zeros(T)
    schedules = []
    oracle_solver = exact_scheduler(cfg.exact_budget)
    per_channel = _channel_graphs(net, real, cfg)
    for t in range(T):
        r = real.rates[t]
        served = np.zeros(L)
        slot_sched = []
        if K == 1 or cfg.channel_mode == "joint":
            g = net.graph if K == 1 else real.multi[0]
            u = link_utility(np.tile(q, K), r.reshape(-1), cfg.utility_kind)
            res = scheduler(g, u)
            assert is_independent(g, res.solution), f"{name}: infeasible schedule"
            util[t] = u[list(res.solution)].sum()
            rounds[t] = res.rounds
            if oracle is not None:
                oracle[t] = _oracle_value(oracle_solver, g, u, res)
            for x in res.solution:
                k, v = divmod(int(x), L)
                slot_sched.append((v, k))
                served[v] += min(q[v] - served[v], r[k, v])
        else:
            qk = q.copy()
            for k in range(K):
                g = per_channel[k]
                u = link_utility(qk, r[k], cfg.utility_kind)
                res = scheduler(g, u)
                assert is_independent(g, res.solution), f"{name}: infeasible schedule"
                util[t] += u[list(res.solution)].sum()
                rounds[t] += res.rounds
                if oracle is not None:
                    oracle[t] += _oracle_value(oracle_solver, g, u, res)
                for v in res.solution:
                    d = min(qk[v], r[k, v])
                    qk[v] -= d
                    served[v] += d
                    slot_sched.append((int(v), k))
        q = q - served + real.arrivals[t]
        delivered[t] = served.sum()
        backlog[t] = q.sum()
        if keep_schedules:
            schedules.append(slot_sched)
    return SimMetrics(
        scheduler=name,
        delivered=delivered,
        utility=util,
        oracle_utility=oracle,
        backlog=backlog,
        arrivals_total=float(real.arrivals.sum()),
        rounds=rounds,
        final_queue=q,
        elapsed=time.perf_counter() - t0,
        schedules=schedules,
    )


def _oracle_value(solver: Scheduler, g: ConflictGraph, u: np.ndarray, res: SolveResult) -> float:
    if res.optimal:
        return float(u[list(res.solution)].sum())
    return solver(g, u).utility


def compare(
    net: WirelessNetwork,
    schedulers: dict[str, Scheduler],
    cfg: SimConfig,
    seed,
    reference: str | None = "exact",
) -> dict[str, dict]:
    """Replay one realization through every scheduler.

    Returns per-scheduler summaries; throughput and median backlog are also
    given relative to ``reference`` when it is among the schedulers.
    """
    real = Realization.draw(net, cfg, seed)
    runs = {name: simulate(net, s, cfg, real, name) for name, s in schedulers.items()}
    ref = runs.get(reference) if reference else None
    out = {}
    for name, m in runs.items():
        row = {
            "throughput": m.throughput,
            "median_backlog": m.median_backlog,
            "mean_ar": m.mean_ar,
            "rounds_mean": float(m.rounds.mean()) if len(m.rounds) else 0.0,
            "metrics": m,
        }
        if ref is not None:
            row["norm_throughput"] = m.throughput / ref.throughput if ref.throughput > 0 else 1.0
            rb = ref.median_backlog
            row["norm_backlog"] = m.median_backlog / rb if rb > 0 else float("nan")
        out[name] = row
    return out


# -- load ---------------------------------------------------------------


def service_fraction(net: WirelessNetwork, cfg: SimConfig, scheduler: Scheduler | None = None, samples: int = 20, seed=0) -> float:
    """Mean fraction of links scheduled per slot when queues never limit service."""
    L = net.link_count
    if L == 0:
        return 1.0
    scheduler = scheduler or exact_scheduler()
    rates = draw_rates((samples, L), seed, cfg.rate_mean, cfg.rate_std)
    sizes = [len(scheduler(net.graph, r).solution) for r in rates]
    return float(np.mean(sizes)) / L


def arrival_rate_for_load(mu: float, rate_mean: float, serve_fraction: float, mapping: str = "service") -> float:
    """Per-link arrival rate for traffic load ``mu``.

    ``"service"``: ``lam = mu * E(r) * serve_fraction``, so load 1 matches the
    average per-link service capacity.  ``"literal"``: ``lam = E(r) / mu``.
    """
    if mapping == "service":
        return mu * rate_mean * serve_fraction
    if mapping == "literal":
        if mu <= 0:
            raise ValueError("literal load mapping needs mu > 0")
        return rate_mean / mu
    raise ValueError(f"unknown load mapping {mapping!r}")


def mean_queue(net: WirelessNetwork, lam: float, cfg: SimConfig, scheduler: Scheduler, seed) -> float:
    c = SimConfig(
        slots=cfg.slots,
        channels=cfg.channels,
        utility_kind=cfg.utility_kind,
        channel_mode=cfg.channel_mode,
        arrival_rate=lam,
        retain_prob=cfg.retain_prob,
        rate_mean=cfg.rate_mean,
        rate_std=cfg.rate_std,
        exact_budget=cfg.exact_budget,
    )
    m = simulate(net, scheduler, c, Realization.draw(net, c, seed))
    L = max(net.link_count, 1)
    return float(m.backlog.mean()) / L


def estimate_saturation_load(
    net: WirelessNetwork,
    cfg: SimConfig,
    seed=0,
    scheduler: Scheduler | None = None,
    tol: float = 1.0,
    max_iter: int = 30,
    serve_fraction: float | None = None,
) -> tuple[float, float]:
    """Bisect the arrival rate until the mean queue equals the mean rate.

    Returns ``(mu_s, lam_s)``, with ``mu_s`` under the service load mapping.
    The same realization seed is used at every probe, so the mean queue is
    a monotone function of the probe rate up to Poisson sampling noise.
    """
    scheduler = scheduler or exact_scheduler()
    target = cfg.rate_mean
    lo, hi = 0.0, max(cfg.rate_mean, 1.0)
    f = lambda lam: mean_queue(net, lam, cfg, scheduler, seed) - target
    for _ in range(6):
        if f(hi) > 0:
            break
        lo, hi = hi, 2 * hi
    else:
        raise RuntimeError("could not bracket the saturation load")
    mid = hi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        val = f(mid)
        if abs(val) < tol:
            break
        if val > 0:
            hi = mid
        else:
            lo = mid
    if serve_fraction is None:
        serve_fraction = service_fraction(net, cfg, scheduler, seed=seed)
    return mid / (cfg.rate_mean * serve_fraction), mid
