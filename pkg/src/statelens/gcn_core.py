"""Dense GCN kernel: two propagation layers, mean-pool readout, binary head.

Layer rule: H' = relu(S H W) with S the symmetrically normalized adjacency
(self-loops included). Readout is the column mean of the second layer,
followed by a linear classifier and a max-subtracted softmax over
(clean, defective). Gradients are hand-derived reverse mode through this
exact computation; everything is float64 and deterministic.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SchemaViolationError, ShapeMismatchError
from .graph_pipeline import NormalizedGraph

CLASSES = ("clean", "defective")
DEFECTIVE = 1  # logit/probability index of the defective class

MODEL_MAGIC = b"SGM1"


@dataclass
class GcnParams:
    w1: np.ndarray  # d x h
    w2: np.ndarray  # h x h
    w_out: np.ndarray  # h x 2
    b_out: np.ndarray  # (2,)

    @property
    def dim(self) -> int:
        return int(self.w1.shape[0])

    @property
    def hidden(self) -> int:
        return int(self.w1.shape[1])

    def arrays(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "w2": self.w2, "w_out": self.w_out, "b_out": self.b_out}

    def map(self, fn) -> "GcnParams":
        return GcnParams(**{name: fn(arr) for name, arr in self.arrays().items()})

    def combine(self, other: "GcnParams", fn) -> "GcnParams":
        mine, theirs = self.arrays(), other.arrays()
        return GcnParams(**{name: fn(mine[name], theirs[name]) for name in mine})

    def norm_sq(self) -> float:
        return float(sum(np.sum(arr * arr) for arr in self.arrays().values()))

    def copy(self) -> "GcnParams":
        return self.map(np.copy)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 100
    seed: int = 42
    hidden_width: int = 32
    l2_penalty: float = 5e-4
    optimizer: str = "adam"  # "adam" or "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.l2_penalty < 0:
            raise ValueError("l2_penalty must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class ForwardTrace:
    h0: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    pooled: np.ndarray
    logits: np.ndarray
    probability: float  # P(defective)


def init_params(dim: int, hidden: int, seed: int) -> GcnParams:
    """Glorot-uniform weights, zero classifier bias."""
    rng = np.random.default_rng(seed)

    def glorot(rows: int, cols: int) -> np.ndarray:
        bound = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-bound, bound, size=(rows, cols))

    return GcnParams(
        w1=glorot(dim, hidden),
        w2=glorot(hidden, hidden),
        w_out=glorot(hidden, 2),
        b_out=np.zeros(2),
    )


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    exp = np.exp(shifted)
    return exp / exp.sum()


def gcn_layer(
    s_hat: np.ndarray, h: np.ndarray, w: np.ndarray, apply_activation: bool = True
) -> np.ndarray:
    """One propagation step: relu(S @ H @ W), or the linear part alone."""
    if s_hat.ndim != 2 or s_hat.shape[0] != s_hat.shape[1]:
        raise ShapeMismatchError(f"s_hat must be square, got {s_hat.shape}")
    if h.shape[0] != s_hat.shape[0]:
        raise ShapeMismatchError(f"s_hat {s_hat.shape} does not match h {h.shape}")
    if w.shape[0] != h.shape[1]:
        raise ShapeMismatchError(f"h {h.shape} does not match w {w.shape}")
    out = s_hat @ h @ w
    return relu(out) if apply_activation else out


def forward(params: GcnParams, graph: NormalizedGraph) -> ForwardTrace:
    if graph.features.shape[1] != params.dim:
        raise ShapeMismatchError(
            f"graph features have width {graph.features.shape[1]}, model expects {params.dim}"
        )
    h0 = graph.features
    h1 = gcn_layer(graph.s_hat, h0, params.w1, apply_activation=True)
    h2 = gcn_layer(graph.s_hat, h1, params.w2, apply_activation=True)
    pooled = h2.mean(axis=0)
    logits = pooled @ params.w_out + params.b_out
    probability = float(softmax(logits)[DEFECTIVE])
    return ForwardTrace(h0=h0, h1=h1, h2=h2, pooled=pooled, logits=logits, probability=probability)


def label_index(label: str) -> int:
    try:
        return CLASSES.index(label)
    except ValueError:
        raise ValueError(f"label must be one of {CLASSES}, got {label!r}") from None


def loss_and_grads(
    params: GcnParams, graph: NormalizedGraph, label: str, l2_penalty: float = 0.0
) -> tuple[float, GcnParams]:
    """Cross-entropy plus (l2/2)*||params||^2, with exact reverse-mode grads."""
    trace = forward(params, graph)
    target = label_index(label)
    probs = softmax(trace.logits)
    loss = -float(np.log(probs[target])) + 0.5 * l2_penalty * params.norm_sq()

    n = trace.h0.shape[0]
    s_hat = graph.s_hat

    d_logits = probs.copy()
    d_logits[target] -= 1.0
    d_w_out = np.outer(trace.pooled, d_logits)
    d_b_out = d_logits
    d_pooled = params.w_out @ d_logits

    d_h2 = np.broadcast_to(d_pooled / n, trace.h2.shape).copy()
    d_z2 = d_h2 * (trace.h2 > 0)
    sh1 = s_hat @ trace.h1
    d_w2 = sh1.T @ d_z2
    d_h1 = s_hat.T @ (d_z2 @ params.w2.T)

    d_z1 = d_h1 * (trace.h1 > 0)
    sh0 = s_hat @ trace.h0
    d_w1 = sh0.T @ d_z1

    grads = GcnParams(w1=d_w1, w2=d_w2, w_out=d_w_out, b_out=d_b_out)
    if l2_penalty:
        grads = grads.combine(params, lambda g, p: g + l2_penalty * p)
    return loss, grads


@dataclass
class OptimizerState:
    step: int = 0
    m: GcnParams | None = None  # first moment (adam)
    v: GcnParams | None = None  # second moment (adam)


def optimizer_step(
    state: OptimizerState, params: GcnParams, grads: GcnParams, config: TrainConfig
) -> tuple[GcnParams, OptimizerState]:
    """One SGD or bias-corrected Adam update; returns fresh params and state."""
    lr = config.learning_rate
    if config.optimizer == "sgd":
        updated = params.combine(grads, lambda p, g: p - lr * g)
        return updated, OptimizerState(step=state.step + 1)

    t = state.step + 1
    zeros = params.map(np.zeros_like)
    m_prev = state.m if state.m is not None else zeros
    v_prev = state.v if state.v is not None else zeros
    m = m_prev.combine(grads, lambda m_, g: config.beta1 * m_ + (1 - config.beta1) * g)
    v = v_prev.combine(grads, lambda v_, g: config.beta2 * v_ + (1 - config.beta2) * g * g)
    bias1 = 1.0 - config.beta1**t
    bias2 = 1.0 - config.beta2**t

    names = params.arrays()
    m_arrays, v_arrays = m.arrays(), v.arrays()
    updated = GcnParams(
        **{
            name: arr - lr * (m_arrays[name] / bias1) / (np.sqrt(v_arrays[name] / bias2) + config.eps)
            for name, arr in names.items()
        }
    )
    return updated, OptimizerState(step=t, m=m, v=v)


# ---------------------------------------------------------------------------
# Model container: magic "SGM1", little-endian u32 dim and hidden, a
# length-prefixed vocabulary fingerprint, then row-major f64 blobs for
# w1, w2, w_out, b_out. A JSON export is available for inspection.
# ---------------------------------------------------------------------------


def params_to_bytes(params: GcnParams, vocab_fingerprint: str = "") -> bytes:
    fp = vocab_fingerprint.encode("utf-8")
    parts = [
        MODEL_MAGIC,
        struct.pack("<III", params.dim, params.hidden, len(fp)),
        fp,
        np.ascontiguousarray(params.w1, dtype="<f8").tobytes(),
        np.ascontiguousarray(params.w2, dtype="<f8").tobytes(),
        np.ascontiguousarray(params.w_out, dtype="<f8").tobytes(),
        np.ascontiguousarray(params.b_out, dtype="<f8").tobytes(),
    ]
    return b"".join(parts)


def params_from_bytes(blob: bytes) -> tuple[GcnParams, str]:
    if blob[:4] != MODEL_MAGIC:
        raise SchemaViolationError(f"bad model magic {blob[:4]!r}")
    dim, hidden, fp_len = struct.unpack_from("<III", blob, 4)
    offset = 16
    fingerprint = blob[offset : offset + fp_len].decode("utf-8")
    offset += fp_len

    def take(rows: int, cols: int) -> np.ndarray:
        nonlocal offset
        count = rows * cols
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).copy()
        offset += count * 8
        return arr.reshape(rows, cols)

    params = GcnParams(
        w1=take(dim, hidden),
        w2=take(hidden, hidden),
        w_out=take(hidden, 2),
        b_out=np.frombuffer(blob, dtype="<f8", count=2, offset=offset).copy(),
    )
    return params, fingerprint


def save_model(path: str | Path, params: GcnParams, vocab_fingerprint: str = "") -> None:
    Path(path).write_bytes(params_to_bytes(params, vocab_fingerprint))


def load_model(path: str | Path) -> tuple[GcnParams, str]:
    path = Path(path)
    if not path.exists():
        raise SchemaViolationError(f"model file not found: {path}")
    return params_from_bytes(path.read_bytes())


def params_fingerprint(params: GcnParams) -> str:
    return hashlib.sha256(params_to_bytes(params)).hexdigest()


def model_to_json_dict(params: GcnParams, vocab_fingerprint: str = "") -> dict:
    return {
        "dim": params.dim,
        "hidden": params.hidden,
        "classes": list(CLASSES),
        "vocab_fingerprint": vocab_fingerprint,
        "w1": params.w1.tolist(),
        "w2": params.w2.tolist(),
        "w_out": params.w_out.tolist(),
        "b_out": params.b_out.tolist(),
    }
