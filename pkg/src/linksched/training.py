"""Trainers: policy gradient for scalar embeddings, supervised CRTS, Q-learning.

The policy-gradient trainer treats the downstream greedy solver as a black
box.  For a graph with utilities ``u`` and embedding ``z``, the reward is
``gamma = u(greedy(z * u)) / u(greedy(u))`` and the parameter update is
``gamma * d(sel . z)/d(theta)`` where ``sel`` is the indicator of the
selected links.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from linksched.distributed import default_features
from linksched.gcn import ForwardTape, GcnModel, backward, forward, identity_model, init_model
from linksched.graph import ConflictGraph
from linksched.greedy import cgs, greedy_order, greedy_select, lgs
from linksched.search import model_features, residual_embedding, gcn_cgs_search

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "mean_train_gamma", "mean_val_gamma", "skipped")
CLAMP_EPS = 1e-7


class ConfigError(ValueError):
    pass


@dataclass
class TrainSample:
    graph: ConflictGraph
    features: np.ndarray
    u: np.ndarray
    z: np.ndarray
    selection: np.ndarray
    gamma: float
    tape: ForwardTape | None = None


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 32
    epochs: int = 25
    val_fraction: float = 0.05
    seed: int = 0
    momentum: float = 0.0
    reset_period: int = 1  # epochs between optimizer-state resets
    grad_clip: float | None = None  # max global gradient norm, None = off
    # Q-learning
    buffer_capacity: int = 10_000
    eps_decay: float = 0.999
    eps_min: float = 0.05

    def __post_init__(self):
        if not 0 <= self.lr < 1:
            raise ConfigError("learning rate must lie in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("validation fraction must lie in (0, 1)")
        if self.reset_period < 1:
            raise ConfigError("reset period must be >= 1")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("gradient clip must be positive")


class ReplayBuffer:
    """Bounded FIFO of transitions ``(state, action, reward, next_state, done)``."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def push(self, item) -> None:
        self._items.append(item)

    def sample(self, k: int, rng: np.random.Generator) -> list:
        k = min(k, len(self._items))
        picks = rng.choice(len(self._items), size=k, replace=False)
        return [self._items[i] for i in picks]


@dataclass
class RewardStats:
    used: int = 0
    skipped: int = 0

    @property
    def total(self) -> int:
        return self.used + self.skipped


# -- policy gradient ------------------------------------------------------


def compute_reward(
    g: ConflictGraph,
    u: np.ndarray,
    model: GcnModel,
    downstream: str = "lgs",
    features=None,
    stats: RewardStats | None = None,
) -> TrainSample | None:
    """Run the pipeline once and score it against plain greedy.

    ``downstream="crs-step"`` uses the centralized greedy completion that a
    rollout step evaluates from the root; for distinct weights it selects
    the same set as ``"lgs"``.  Returns ``None`` (and counts a skip) when
    plain greedy has zero utility.
    """
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise ValueError("utilities must be non-negative")
    ref = cgs(g, u).utility if g.n else 0.0
    if ref <= 0:
        if stats is not None:
            stats.skipped += 1
        return None
    x = default_features(model, g, u) if features is None else np.asarray(features, dtype=float)
    out, tape = forward(g, x, model)
    z = out[:, 0]
    w = z * u
    if downstream == "lgs":
        sol = lgs(g, w).solution
    elif downstream == "crs-step":
        sol = greedy_select(g, w)
    else:
        raise ValueError(f"unknown downstream {downstream!r}")
    sel = np.zeros(g.n)
    sel[list(sol)] = 1.0
    gamma = float(u @ sel) / ref
    if stats is not None:
        stats.used += 1
    return TrainSample(g, x, u, z, sel, gamma, tape)


def dpg_gradient(batch: list[TrainSample], model: GcnModel) -> list[tuple[np.ndarray, np.ndarray]]:
    """Mean over the batch of ``gamma * backward(tape, upstream=selection)``."""
    total = [(np.zeros_like(l.theta0), np.zeros_like(l.theta1)) for l in model.layers]
    if not batch:
        return total
    for s in batch:
        grads = backward(s.tape, model, s.selection * s.gamma)
        total = [(a0 + b0, a1 + b1) for (a0, a1), (b0, b1) in zip(total, grads)]
    k = len(batch)
    return [(a0 / k, a1 / k) for a0, a1 in total]


def dpg_step(batch: list[TrainSample], model: GcnModel, lr: float) -> list[tuple[np.ndarray, np.ndarray]]:
    """One ascent step in place; returns the gradient used."""
    grads = dpg_gradient(batch, model)
    model.apply_update(grads, lr)
    return grads


def clip_gradient(grads, max_norm: float | None):
    """Rescale ``grads`` so their global 2-norm is at most ``max_norm``."""
    if max_norm is None:
        return grads
    norm = math.sqrt(sum(float((a * a).sum() + (b * b).sum()) for a, b in grads))
    if norm <= max_norm:
        return grads
    k = max_norm / norm
    return [(a * k, b * k) for a, b in grads]


class _Momentum:
    def __init__(self, beta: float):
        self.beta = beta
        self.velocity = None

    def reset(self) -> None:
        self.velocity = None

    def direction(self, grads):
        if self.beta == 0:
            return grads
        if self.velocity is None:
            self.velocity = [(np.zeros_like(a), np.zeros_like(b)) for a, b in grads]
        self.velocity = [
            (self.beta * v0 + g0, self.beta * v1 + g1) for (v0, v1), (g0, g1) in zip(self.velocity, grads)
        ]
        return self.velocity


def split_validation(n: int, fraction: float, seed) -> tuple[np.ndarray, np.ndarray]:
    n_val = int(round(fraction * n))
    if n_val == 0 or n_val >= n:
        raise ConfigError(f"validation split of {fraction} on {n} graphs leaves an empty side")
    perm = np.random.default_rng(seed).permutation(n)
    return perm[n_val:], perm[:n_val]


def mean_gamma(graphs, utilities, model: GcnModel, downstream: str = "lgs") -> float:
    vals = []
    for g, u in zip(graphs, utilities):
        s = compute_reward(g, u, model, downstream)
        if s is not None:
            vals.append(s.gamma)
    return float(np.mean(vals)) if vals else float("nan")


@dataclass
class TrainResult:
    model: GcnModel
    log: list[dict]
    best_val_gamma: float
    initial_val_gamma: float
    stats: RewardStats = field(default_factory=RewardStats)


def dpg_train(
    graphs: list[ConflictGraph],
    config: TrainConfig,
    model: GcnModel | None = None,
    downstream: str = "lgs",
) -> TrainResult:
    """Policy-gradient training with validation-based model selection.

    Utilities are redrawn ``U(0, 1)`` on every pass.  Samples fill a FIFO
    buffer; each full buffer is averaged into one update, after which the
    mean validation reward is recomputed.  The returned model is the one
    with the highest validation reward seen, the starting model included.
    """
    if not graphs:
        raise ConfigError("empty training set")
    model = (model or identity_model(features="ones")).copy()
    rng = np.random.default_rng(config.seed)
    train_idx, val_idx = split_validation(len(graphs), config.val_fraction, rng.integers(2**63))
    val_graphs = [graphs[i] for i in val_idx]
    val_u = [rng.random(g.n) for g in val_graphs]

    best = model.copy()
    best_val = initial_val = mean_gamma(val_graphs, val_u, model, downstream)
    opt = _Momentum(config.momentum)
    stats = RewardStats()
    rows = []
    for epoch in range(config.epochs):
        if epoch % config.reset_period == 0:
            opt.reset()
        skipped_before = stats.skipped
        train_gammas = []
        buffer: list[TrainSample] = []

        def update():
            nonlocal best, best_val
            grads = clip_gradient(dpg_gradient(buffer, model), config.grad_clip)
            model.apply_update(opt.direction(grads), config.lr)
            buffer.clear()
            if not model.is_finite():
                raise FloatingPointError("non-finite parameters after update")
            val = mean_gamma(val_graphs, val_u, model, downstream)
            if val > best_val:
                best, best_val = model.copy(), val

        for i in rng.permutation(train_idx):
            g = graphs[int(i)]
            s = compute_reward(g, rng.random(g.n), model, downstream, stats=stats)
            if s is None:
                continue
            train_gammas.append(s.gamma)
            buffer.append(s)
            if len(buffer) >= config.batch_size:
                update()
        if buffer:
            update()
        rows.append(
            {
                "epoch": epoch,
                "mean_train_gamma": float(np.mean(train_gammas)) if train_gammas else float("nan"),
                "mean_val_gamma": mean_gamma(val_graphs, val_u, model, downstream),
                "skipped": stats.skipped - skipped_before,
            }
        )
        log.info("epoch %d train %.4f val %.4f", epoch, rows[-1]["mean_train_gamma"], rows[-1]["mean_val_gamma"])
    return TrainResult(best, rows, best_val, initial_val, stats)


def write_log(rows: list[dict], path, columns=LOG_COLUMNS) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns))
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


# -- supervised CRTS ------------------------------------------------------


def crts_label(g: ConflictGraph, u: np.ndarray) -> np.ndarray:
    return cgs(g, u).indicator(g.n)


def crts_loss(g: ConflictGraph, u: np.ndarray, y: np.ndarray, model: GcnModel):
    """Min over columns of the mean binary cross entropy, and its gradient.

    Only the minimizing column receives gradient.  Probabilities are clamped
    to ``[eps, 1 - eps]``; clamped entries contribute no gradient.
    """
    if model.output_kind != "crts":
        raise ValueError("crts_loss needs a model with output_kind='crts'")
    y = np.asarray(y, dtype=float)
    logits, tape = forward(g, u, model)
    a = logits[:, 0::2]
    if model.pair_activation == "softmax":
        a = a - logits[:, 1::2]
    p = 0.5 * (1.0 + np.tanh(0.5 * a))
    pc = np.clip(p, CLAMP_EPS, 1 - CLAMP_EPS)
    ce = -(y[:, None] * np.log(pc) + (1 - y[:, None]) * np.log(1 - pc))
    per_col = ce.mean(axis=0)
    b = int(np.argmin(per_col))
    inside = (p[:, b] > CLAMP_EPS) & (p[:, b] < 1 - CLAMP_EPS)
    da = np.where(inside, p[:, b] - y, 0.0) / g.n
    up = np.zeros_like(logits)
    up[:, 2 * b] = da
    if model.pair_activation == "softmax":
        up[:, 2 * b + 1] = -da
    return float(per_col[b]), backward(tape, model, up)


def crts_supervised_step(batch, model: GcnModel, lr: float) -> float:
    """Gradient descent on the mean loss of ``batch`` of ``(g, u, y)``; returns that loss."""
    losses = []
    total = None
    for g, u, y in batch:
        loss, grads = crts_loss(g, u, y, model)
        losses.append(loss)
        total = grads if total is None else [(a0 + b0, a1 + b1) for (a0, a1), (b0, b1) in zip(total, grads)]
    if total is None:
        return 0.0
    k = len(batch)
    model.apply_update([(a0 / k, a1 / k) for a0, a1 in total], -lr)
    return float(np.mean(losses))


def crts_train(graphs: list[ConflictGraph], config: TrainConfig, model: GcnModel | None = None):
    """Fit a CRTS model to greedy labels; returns ``(model, log_rows)``."""
    model = (model or init_model([1, 32, 32, 32, 64], config.seed, output_kind="crts")).copy()
    rng = np.random.default_rng(config.seed)
    rows = []
    for epoch in range(config.epochs):
        losses = []
        batch = []
        for i in rng.permutation(len(graphs)):
            g = graphs[int(i)]
            u = rng.random(g.n)
            batch.append((g, u, crts_label(g, u)))
            if len(batch) >= config.batch_size:
                losses.append(crts_supervised_step(batch, model, config.lr))
                batch = []
        if batch:
            losses.append(crts_supervised_step(batch, model, config.lr))
        if not model.is_finite():
            raise FloatingPointError("non-finite parameters after update")
        rows.append({"epoch": epoch, "mean_loss": float(np.mean(losses)) if losses else float("nan")})
    return model, rows


# -- Q-learning for the greedy Q search -----------------------------------


def epsilon_schedule(t: int, decay: float = 0.999, floor: float = 0.05) -> float:
    return max(floor, decay**t)


@dataclass(frozen=True)
class Transition:
    graph: ConflictGraph
    u: np.ndarray
    state: np.ndarray  # residual vertex ids before the action
    action: int  # position within ``state``
    reward: float
    next_state: np.ndarray
    done: bool


def q_target(tr: Transition, model: GcnModel) -> float:
    """``reward`` at a terminal node, ``reward + max Q(next)`` otherwise."""
    if tr.done:
        return tr.reward
    q = residual_embedding(tr.graph, tr.next_state, tr.u, model)
    return tr.reward + float(q.max())


def episode_transitions(g: ConflictGraph, u: np.ndarray, model: GcnModel, epsilon: float, seed) -> tuple[list[Transition], float]:
    trace: list = []
    res = gcn_cgs_search(g, u, model, epsilon=epsilon, seed=seed, trace=trace)
    ref = cgs(g, u).utility
    gamma = res.utility / ref if ref > 0 else 1.0
    out = []
    for k, (idx, pos) in enumerate(trace):
        last = k == len(trace) - 1
        nxt = trace[k + 1][0] if not last else np.zeros(0, dtype=np.int64)
        out.append(Transition(g, u, idx, pos, gamma if last else 0.0, nxt, last))
    return out, gamma


def q_step(batch: list[Transition], model: GcnModel, lr: float) -> float:
    """Squared-error descent of ``Q(state, action)`` toward its target."""
    targets = [q_target(tr, model) for tr in batch]
    total = None
    err2 = []
    for tr, y in zip(batch, targets):
        sub = tr.graph.subgraph(tr.state)
        out, tape = forward(sub, model_features(model, tr.u[tr.state]), model)
        diff = out[tr.action, 0] - y
        err2.append(diff * diff)
        up = np.zeros_like(out)
        up[tr.action, 0] = diff
        grads = backward(tape, model, up)
        total = grads if total is None else [(a0 + b0, a1 + b1) for (a0, a1), (b0, b1) in zip(total, grads)]
    k = len(batch)
    model.apply_update([(a0 / k, a1 / k) for a0, a1 in total], -lr)
    return float(np.mean(err2))


def dqn_train(graphs: list[ConflictGraph], config: TrainConfig, model: GcnModel | None = None):
    """Episodic Q-learning with an undiscounted finite horizon.

    Every step earns zero reward except the last, which earns the episode's
    ratio to plain greedy.  One replay minibatch update follows every
    episode.  Returns ``(model, log_rows)``.
    """
    model = (model or init_model([1, 32, 32, 32, 32, 1], config.seed, output_kind="q")).copy()
    rng = np.random.default_rng(config.seed)
    buffer = ReplayBuffer(config.buffer_capacity)
    t = 0
    rows = []
    for epoch in range(config.epochs):
        gammas, losses = [], []
        for i in rng.permutation(len(graphs)):
            g = graphs[int(i)]
            if g.n == 0:
                continue
            u = rng.random(g.n)
            eps = epsilon_schedule(t, config.eps_decay, config.eps_min)
            trs, gamma = episode_transitions(g, u, model, eps, rng.integers(2**63))
            t += 1
            gammas.append(gamma)
            for tr in trs:
                buffer.push(tr)
            losses.append(q_step(buffer.sample(config.batch_size, rng), model, config.lr))
            if not model.is_finite():
                raise FloatingPointError("non-finite parameters after update")
        rows.append(
            {
                "epoch": epoch,
                "mean_gamma": float(np.mean(gammas)) if gammas else float("nan"),
                "mean_loss": float(np.mean(losses)) if losses else float("nan"),
                "epsilon": epsilon_schedule(t, config.eps_decay, config.eps_min),
            }
        )
    return model, rows
