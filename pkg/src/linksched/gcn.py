"""Graph convolutional network with hand-written reverse mode.

Layer ``l`` computes ``X_l = act(X_{l-1} @ theta0 + L @ X_{l-1} @ theta1)``
where ``L`` is the normalized Laplacian of the conflict graph.  No bias
terms.  The same layer family, with the Laplacian term switched off, serves
as the per-vertex perceptron used in ablations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from linksched.graph import ConflictGraph, normalized_laplacian

MODEL_FORMAT_VERSION = 1

LEAKY_SLOPE = 0.2

OUTPUT_KINDS = ("scalar", "q", "crts")


class ModelFormatError(ValueError):
    pass


@dataclass
class GcnLayer:
    theta0: np.ndarray
    theta1: np.ndarray
    activation: str = "leaky_relu"  # or "linear"

    def __post_init__(self):
        self.theta0 = np.asarray(self.theta0, dtype=float)
        self.theta1 = np.asarray(self.theta1, dtype=float)
        if self.theta0.shape != self.theta1.shape or self.theta0.ndim != 2:
            raise ValueError("theta0 and theta1 must be matrices of equal shape")
        if self.activation not in ("leaky_relu", "linear"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.theta0.shape


@dataclass
class GcnModel:
    layers: list[GcnLayer]
    output_kind: str = "scalar"
    leaky_slope: float = LEAKY_SLOPE
    use_laplacian: bool = True
    pair_activation: str = "sigmoid"  # crts only: "sigmoid" or "softmax"
    features: str = "utility"  # input on (residual) graphs: "utility" or "ones"

    def __post_init__(self):
        if self.features not in ("utility", "ones"):
            raise ValueError("features must be 'utility' or 'ones'")
        if not self.layers:
            raise ValueError("model needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValueError(f"layer dims do not chain: {a.shape} -> {b.shape}")
        if self.output_kind not in OUTPUT_KINDS:
            raise ValueError(f"unknown output kind {self.output_kind!r}")
        if self.output_kind == "crts" and self.output_dim % 2:
            raise ValueError("crts output needs an even number of logits")
        if self.pair_activation not in ("sigmoid", "softmax"):
            raise ValueError("pair_activation must be 'sigmoid' or 'softmax'")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].shape[0]] + [layer.shape[1] for layer in self.layers]

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    @property
    def output_dim(self) -> int:
        return self.dims[-1]

    @property
    def branching(self) -> int:
        return self.output_dim // 2

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.append(layer.theta0)
            out.append(layer.theta1)
        return out

    def copy(self) -> "GcnModel":
        return GcnModel(
            layers=[GcnLayer(l.theta0.copy(), l.theta1.copy(), l.activation) for l in self.layers],
            output_kind=self.output_kind,
            leaky_slope=self.leaky_slope,
            use_laplacian=self.use_laplacian,
            pair_activation=self.pair_activation,
            features=self.features,
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())

    def apply_update(self, grads: list[tuple[np.ndarray, np.ndarray]], step: float) -> None:
        """``theta += step * grad`` for every layer (in place)."""
        for layer, (g0, g1) in zip(self.layers, grads):
            layer.theta0 += step * g0
            if self.use_laplacian:
                layer.theta1 += step * g1


def init_model(
    dims: list[int],
    seed=None,
    *,
    output_kind: str = "scalar",
    leaky_slope: float = LEAKY_SLOPE,
    use_laplacian: bool = True,
    pair_activation: str = "sigmoid",
    features: str = "utility",
) -> GcnModel:
    """Glorot-uniform parameters; hidden layers leaky ReLU, output linear."""
    rng = np.random.default_rng(seed)
    layers = []
    for i, (a, b) in enumerate(zip(dims, dims[1:])):
        s = math.sqrt(6.0 / (a + b))
        t0 = rng.uniform(-s, s, size=(a, b))
        t1 = rng.uniform(-s, s, size=(a, b)) if use_laplacian else np.zeros((a, b))
        act = "linear" if i == len(dims) - 2 else "leaky_relu"
        layers.append(GcnLayer(t0, t1, act))
    return GcnModel(
        layers,
        output_kind=output_kind,
        leaky_slope=leaky_slope,
        use_laplacian=use_laplacian,
        pair_activation=pair_activation,
        features=features,
    )


def identity_model(output_kind: str = "scalar", features: str = "utility") -> GcnModel:
    """One linear layer with ``theta0 = 1, theta1 = 0``: output equals input."""
    return GcnModel([GcnLayer([[1.0]], [[0.0]], "linear")], output_kind=output_kind, features=features)


def _act(x: np.ndarray, kind: str, slope: float) -> np.ndarray:
    if kind == "linear":
        return x
    return np.where(x > 0, x, slope * x)


def _act_grad(pre: np.ndarray, kind: str, slope: float) -> np.ndarray:
    if kind == "linear":
        return np.ones_like(pre)
    return np.where(pre > 0, 1.0, slope)


@dataclass
class ForwardTape:
    laplacian: sp.csr_matrix | None
    inputs: list[np.ndarray] = field(default_factory=list)
    smoothed: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)


def _as_features(x0, n: int) -> np.ndarray:
    x = np.asarray(x0, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] != n:
        raise ValueError(f"feature matrix has {x.shape[0]} rows for a graph of {n} vertices")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input features")
    return x


def forward(
    g: ConflictGraph,
    x0,
    model: GcnModel,
    laplacian: sp.csr_matrix | None = None,
) -> tuple[np.ndarray, ForwardTape]:
    """Dense-matrix forward pass; returns ``X_L`` (V x g_L) and the tape."""
    x = _as_features(x0, g.n)
    if x.shape[1] != model.input_dim:
        raise ValueError(f"features have {x.shape[1]} columns, model expects {model.input_dim}")
    lap = None
    if model.use_laplacian:
        lap = normalized_laplacian(g) if laplacian is None else laplacian
    tape = ForwardTape(lap)
    for layer in model.layers:
        lx = lap @ x if lap is not None else np.zeros_like(x)
        pre = x @ layer.theta0 + lx @ layer.theta1
        tape.inputs.append(x)
        tape.smoothed.append(lx)
        tape.pre.append(pre)
        x = _act(pre, layer.activation, model.leaky_slope)
    return x, tape


def forward_local(g: ConflictGraph, x0, model: GcnModel) -> np.ndarray:
    """Per-vertex evaluation using only neighbor exchanges.

    Each vertex aggregates ``x_v - sum_u x_u / sqrt(d_v d_u)`` over its
    neighbors in ascending index order; no global matrix is formed.
    """
    x = _as_features(x0, g.n)
    if x.shape[1] != model.input_dim:
        raise ValueError(f"features have {x.shape[1]} columns, model expects {model.input_dim}")
    deg = g.degrees
    nbrs = g.neighbor_lists
    for layer in model.layers:
        out = np.empty((g.n, layer.shape[1]))
        for v in range(g.n):
            row = x[v] @ layer.theta0
            if model.use_laplacian:
                agg = x[v].copy()
                for u in nbrs[v]:
                    agg = agg - x[u] / math.sqrt(deg[v] * deg[u])
                row = row + agg @ layer.theta1
            out[v] = _act(row, layer.activation, model.leaky_slope)
        x = out
    return x


def backward(
    tape: ForwardTape,
    model: GcnModel,
    upstream,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Gradients of ``sum(upstream * X_L)`` w.r.t. every ``(theta0, theta1)``."""
    if len(tape.pre) != model.depth:
        raise ValueError("tape does not match model depth")
    grad = np.asarray(upstream, dtype=float)
    if grad.ndim == 1:
        grad = grad[:, None]
    if grad.shape != tape.pre[-1].shape:
        raise ValueError(f"upstream shape {grad.shape} != output shape {tape.pre[-1].shape}")
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * model.depth  # type: ignore[list-item]
    for i in range(model.depth - 1, -1, -1):
        layer = model.layers[i]
        if tape.pre[i].shape[1] != layer.shape[1]:
            raise ValueError("tape does not match model shapes")
        dpre = grad * _act_grad(tape.pre[i], layer.activation, model.leaky_slope)
        g0 = tape.inputs[i].T @ dpre
        g1 = tape.smoothed[i].T @ dpre if model.use_laplacian else np.zeros_like(layer.theta1)
        grads[i] = (g0, g1)
        if i:
            grad = dpre @ layer.theta0.T
            if model.use_laplacian:
                # Laplacian is symmetric
                grad = grad + tape.laplacian @ (dpre @ layer.theta1.T)
    return grads


def embed(g: ConflictGraph, x0, model: GcnModel) -> np.ndarray:
    """Scalar node embedding ``z`` (length V) from a one-output model."""
    if model.output_dim != 1:
        raise ValueError("embed() needs a model with one output channel")
    if g.n == 0:
        return np.zeros(0)
    return forward(g, x0, model)[0][:, 0]


def pair_probabilities(logits: np.ndarray, pair_activation: str = "sigmoid") -> np.ndarray:
    """First member of each logit pair mapped to ``[0, 1]``.

    Logit pairs are adjacent columns ``(2b, 2b+1)``.
    """
    a = logits[:, 0::2]
    if pair_activation == "softmax":
        a = a - logits[:, 1::2]
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def forward_crts(g: ConflictGraph, u, model: GcnModel) -> np.ndarray:
    """``V x B`` matrix of membership probabilities for the random tree search."""
    if model.output_kind != "crts":
        raise ValueError("forward_crts needs a model with output_kind='crts'")
    logits, _ = forward(g, u, model)
    return pair_probabilities(logits, model.pair_activation)


# -- serialization --------------------------------------------------------


def model_to_dict(model: GcnModel) -> dict:
    return {
        "version": MODEL_FORMAT_VERSION,
        "dims": model.dims,
        "activations": [layer.activation for layer in model.layers],
        "output_kind": model.output_kind,
        "leaky_slope": model.leaky_slope,
        "use_laplacian": model.use_laplacian,
        "pair_activation": model.pair_activation,
        "features": model.features,
        "layers": [{"theta0": l.theta0.tolist(), "theta1": l.theta1.tolist()} for l in model.layers],
    }


def model_from_dict(doc: dict) -> GcnModel:
    version = doc.get("version")
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"model format version {version!r} unsupported (expected {MODEL_FORMAT_VERSION})")
    try:
        layers = [
            GcnLayer(np.array(spec["theta0"], dtype=float), np.array(spec["theta1"], dtype=float), act)
            for spec, act in zip(doc["layers"], doc["activations"], strict=True)
        ]
        model = GcnModel(
            layers,
            output_kind=doc.get("output_kind", "scalar"),
            leaky_slope=float(doc.get("leaky_slope", LEAKY_SLOPE)),
            use_laplacian=bool(doc.get("use_laplacian", True)),
            pair_activation=doc.get("pair_activation", "sigmoid"),
            features=doc.get("features", "utility"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model document: {exc}") from exc
    if model.dims != list(doc["dims"]):
        raise ModelFormatError(f"declared dims {doc['dims']} do not match layers {model.dims}")
    return model


def save_model(model: GcnModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path) -> GcnModel:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return model_from_dict(doc)
