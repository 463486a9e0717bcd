"""Trainable fusion-head classifier over frozen embeddings.

Each modality passes through one linear layer + ReLU; the two hidden
vectors are fused by elementwise product; a final linear layer + sigmoid
yields the probability that the sentence is hallucinated:

    act_a = relu(w_a @ h_a + b_a)
    act_t = relu(w_t @ h_t + b_t)
    fused = act_a * act_t
    y_hat = sigmoid(w_out @ fused + b_out)

Training minimizes binary cross entropy with AdamW (decoupled weight
decay). The upstream encoders are represented purely by their stored
embedding vectors, so there is nothing trainable outside the head and
input vectors are never modified.

All math runs in float64; checkpoints store float32 (see save_head).
ReLU's subgradient at exactly 0 is taken as 0, and predicted
probabilities are clamped to [1e-12, 1 - 1e-12] before logs.
"""
from __future__ import annotations

import math
import os
import struct
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .evaluation import compute_metrics

BCE_CLAMP = 1e-12

CHECKPOINT_MAGIC = b"FUSH"
CHECKPOINT_VERSION = 1

PARAM_NAMES = ("w_a", "b_a", "w_t", "b_t", "w_out", "b_out")


class FusionError(Exception):
    """Invalid head configuration, data or training state."""


@dataclass
class FusionHead:
    """Parameters of the two branch MLPs and the output layer.

    ``w_a``: (d, dim_a), ``w_t``: (d, dim_t), ``w_out``: (d,); the two
    branch outputs share width d because they are fused elementwise.
    """

    w_a: np.ndarray
    b_a: np.ndarray
    w_t: np.ndarray
    b_t: np.ndarray
    w_out: np.ndarray
    b_out: float

    def __post_init__(self) -> None:
        self.w_a = np.asarray(self.w_a, dtype=np.float64)
        self.b_a = np.asarray(self.b_a, dtype=np.float64)
        self.w_t = np.asarray(self.w_t, dtype=np.float64)
        self.b_t = np.asarray(self.b_t, dtype=np.float64)
        self.w_out = np.asarray(self.w_out, dtype=np.float64)
        self.b_out = float(self.b_out)
        d = self.w_a.shape[0] if self.w_a.ndim == 2 else -1
        if (
            self.w_a.ndim != 2
            or self.w_t.ndim != 2
            or self.w_t.shape[0] != d
            or self.b_a.shape != (d,)
            or self.b_t.shape != (d,)
            or self.w_out.shape != (d,)
        ):
            raise FusionError("inconsistent parameter shapes; branch widths must match")
        for name in PARAM_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise FusionError(f"non-finite values in parameter {name}")

    @property
    def hidden_size(self) -> int:
        return self.w_a.shape[0]

    @property
    def dim_a(self) -> int:
        return self.w_a.shape[1]

    @property
    def dim_t(self) -> int:
        return self.w_t.shape[1]

    def copy(self) -> "FusionHead":
        return FusionHead(
            w_a=self.w_a.copy(),
            b_a=self.b_a.copy(),
            w_t=self.w_t.copy(),
            b_t=self.b_t.copy(),
            w_out=self.w_out.copy(),
            b_out=self.b_out,
        )


def snap_f32(head: FusionHead) -> FusionHead:
    """Round parameters through float32, the checkpoint precision.

    A snapped head survives save/load bit-exactly, so its predictions
    before and after a checkpoint round trip are identical.
    """
    return FusionHead(
        w_a=head.w_a.astype(np.float32).astype(np.float64),
        b_a=head.b_a.astype(np.float32).astype(np.float64),
        w_t=head.w_t.astype(np.float32).astype(np.float64),
        b_t=head.b_t.astype(np.float32).astype(np.float64),
        w_out=head.w_out.astype(np.float32).astype(np.float64),
        b_out=float(np.float32(head.b_out)),
    )


def init_head(
    dim_a: int, dim_t: int, hidden_size: int, rng: np.random.Generator
) -> FusionHead:
    """Seeded init: Kaiming-uniform fan-in for the ReLU branches,
    Xavier-uniform for the output layer, zero biases."""
    if hidden_size < 1:
        raise FusionError(f"hidden size must be positive, got {hidden_size}")
    bound_a = math.sqrt(6.0 / dim_a)
    bound_t = math.sqrt(6.0 / dim_t)
    bound_out = math.sqrt(6.0 / (hidden_size + 1))
    return FusionHead(
        w_a=rng.uniform(-bound_a, bound_a, size=(hidden_size, dim_a)),
        b_a=np.zeros(hidden_size),
        w_t=rng.uniform(-bound_t, bound_t, size=(hidden_size, dim_t)),
        b_t=np.zeros(hidden_size),
        w_out=rng.uniform(-bound_out, bound_out, size=hidden_size),
        b_out=0.0,
    )


def _sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class ForwardCache:
    """Intermediate values needed to run backward for one input pair."""

    h_a: np.ndarray
    h_t: np.ndarray
    z_a: np.ndarray
    z_t: np.ndarray
    act_a: np.ndarray
    act_t: np.ndarray
    fused: np.ndarray
    logit: float
    y_hat: float


def forward(head: FusionHead, h_a, h_t) -> tuple[float, ForwardCache]:
    """Predicted hallucination probability for one embedding pair."""
    h_a = np.asarray(h_a, dtype=np.float64)
    h_t = np.asarray(h_t, dtype=np.float64)
    if h_a.shape != (head.dim_a,):
        raise FusionError(f"audio vector has shape {h_a.shape}, expected ({head.dim_a},)")
    if h_t.shape != (head.dim_t,):
        raise FusionError(f"text vector has shape {h_t.shape}, expected ({head.dim_t},)")
    z_a = head.w_a @ h_a + head.b_a
    z_t = head.w_t @ h_t + head.b_t
    act_a = np.maximum(z_a, 0.0)
    act_t = np.maximum(z_t, 0.0)
    fused = act_a * act_t
    logit = float(head.w_out @ fused + head.b_out)
    if not math.isfinite(logit):
        raise FusionError("non-finite intermediate in forward pass")
    y_hat = float(_sigmoid(logit))
    return y_hat, ForwardCache(
        h_a=h_a, h_t=h_t, z_a=z_a, z_t=z_t,
        act_a=act_a, act_t=act_t, fused=fused, logit=logit, y_hat=y_hat,
    )


def bce_loss(y_hat: float, y: int) -> float:
    """Binary cross entropy -[y ln p + (1-y) ln (1-p)], p clamped away from 0/1."""
    p = min(max(float(y_hat), BCE_CLAMP), 1.0 - BCE_CLAMP)
    y = float(y)
    return -(y * math.log(p) + (1.0 - y) * math.log(1.0 - p))


@dataclass
class Gradients:
    """Loss gradients, one array per head parameter (b_out is 0-d)."""

    w_a: np.ndarray
    b_a: np.ndarray
    w_t: np.ndarray
    b_t: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray

    def items(self):
        return [(name, getattr(self, name)) for name in PARAM_NAMES]


def backward(head: FusionHead, cache: ForwardCache, y: int) -> Gradients:
    """Exact analytic gradients of bce_loss(forward(...), y).

    Uses the sigmoid + BCE composite d(loss)/d(logit) = y_hat - y, which
    is exact regardless of the display clamp in bce_loss. The encoders
    are frozen, so no gradient flows to the input vectors.
    """
    if cache.h_a.shape != (head.dim_a,) or cache.h_t.shape != (head.dim_t,) or (
        cache.z_a.shape != (head.hidden_size,)
    ):
        raise FusionError("stale forward cache: shapes do not match this head")
    dlogit = cache.y_hat - float(y)
    d_fused = dlogit * head.w_out
    d_act_a = d_fused * cache.act_t
    d_act_t = d_fused * cache.act_a
    dz_a = d_act_a * (cache.z_a > 0.0)
    dz_t = d_act_t * (cache.z_t > 0.0)
    return Gradients(
        w_a=np.outer(dz_a, cache.h_a),
        b_a=dz_a,
        w_t=np.outer(dz_t, cache.h_t),
        b_t=dz_t,
        w_out=dlogit * cache.fused,
        b_out=np.float64(dlogit),
    )


def batch_loss_and_grads(
    head: FusionHead, audio: np.ndarray, text: np.ndarray, labels: np.ndarray
) -> tuple[float, Gradients]:
    """Mean BCE over a mini-batch and its gradients (vectorized)."""
    n = audio.shape[0]
    z_a = audio @ head.w_a.T + head.b_a
    z_t = text @ head.w_t.T + head.b_t
    act_a = np.maximum(z_a, 0.0)
    act_t = np.maximum(z_t, 0.0)
    fused = act_a * act_t
    logits = fused @ head.w_out + head.b_out
    if not np.all(np.isfinite(logits)):
        raise FusionError("non-finite intermediate in forward pass")
    y_hat = _sigmoid(logits)
    p = np.clip(y_hat, BCE_CLAMP, 1.0 - BCE_CLAMP)
    loss = float(np.mean(-(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p))))

    dlogits = (y_hat - labels) / n
    d_fused = dlogits[:, None] * head.w_out[None, :]
    dz_a = d_fused * act_t * (z_a > 0.0)
    dz_t = d_fused * act_a * (z_t > 0.0)
    grads = Gradients(
        w_a=dz_a.T @ audio,
        b_a=dz_a.sum(axis=0),
        w_t=dz_t.T @ text,
        b_t=dz_t.sum(axis=0),
        w_out=fused.T @ dlogits,
        b_out=np.float64(dlogits.sum()),
    )
    return loss, grads


@dataclass
class OptimizerState:
    """AdamW accumulators: first/second moments per parameter, step count."""

    lr: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_optimizer(head: FusionHead, lr: float, weight_decay: float = 0.0) -> OptimizerState:
    state = OptimizerState(lr=lr, weight_decay=weight_decay)
    for name in PARAM_NAMES:
        param = np.asarray(getattr(head, name), dtype=np.float64)
        state.m[name] = np.zeros_like(param)
        state.v[name] = np.zeros_like(param)
    return state


def adamw_step(
    head: FusionHead, grads: Gradients, state: OptimizerState
) -> tuple[FusionHead, OptimizerState]:
    """One bias-corrected Adam update with decoupled weight decay:

        p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p

    Returns the updated head and state; aborts on non-finite gradients.
    """
    t = state.step_count + 1
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, grad in grads.items():
        grad = np.asarray(grad, dtype=np.float64)
        if not np.all(np.isfinite(grad)):
            raise FusionError(f"non-finite gradient for {name}; step aborted")
        param = np.asarray(getattr(head, name), dtype=np.float64)
        if grad.shape != param.shape:
            raise FusionError(
                f"gradient shape {grad.shape} does not match parameter {name} {param.shape}"
            )
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * grad
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * grad * grad
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        update = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_params[name] = param - update - state.lr * state.weight_decay * param
        new_m[name] = m
        new_v[name] = v
    new_head = FusionHead(
        w_a=new_params["w_a"],
        b_a=new_params["b_a"],
        w_t=new_params["w_t"],
        b_t=new_params["b_t"],
        w_out=new_params["w_out"],
        b_out=float(new_params["b_out"]),
    )
    new_state = replace(state, step_count=t, m=new_m, v=new_v)
    return new_head, new_state


@dataclass(frozen=True)
class TrainConfig:
    """Trainer hyperparameters; a single seed fixes init and shuffling."""

    hidden_size: int = 512
    batch_size: int = 32
    lr: float = 0.001
    weight_decay: float = 0.01
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0
    decision_threshold: float = 0.5
    normalize_inputs: bool = False

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise FusionError("batch_size must be >= 1")
        if self.patience > self.max_epochs:
            raise FusionError("patience must not exceed max_epochs")
        if not 0.0 < self.decision_threshold < 1.0:
            raise FusionError("decision_threshold must lie in (0, 1)")


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    val_f1: float


@dataclass(frozen=True)
class Prediction:
    sample_id: str
    score: float
    hallucinated: bool


def _stack_triples(
    triples: Sequence[tuple[bool, np.ndarray, np.ndarray]], normalize: bool, what: str
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not triples:
        raise FusionError(f"{what} set is empty")
    labels = np.array([float(bool(label)) for label, _, _ in triples])
    audio = np.stack([np.asarray(a, dtype=np.float64) for _, a, _ in triples])
    text = np.stack([np.asarray(t, dtype=np.float64) for _, _, t in triples])
    if normalize:
        for mat, side in ((audio, "audio"), (text, "text")):
            norms = np.linalg.norm(mat, axis=1, keepdims=True)
            if np.any(norms == 0.0):
                raise FusionError(f"cannot normalize zero-norm {side} vector in {what} set")
            mat /= norms
    return labels, audio, text


def predict_scores(
    head: FusionHead, audio: np.ndarray, text: np.ndarray, normalize: bool = False
) -> np.ndarray:
    """Batch of predicted probabilities (pure; inputs untouched)."""
    audio = np.asarray(audio, dtype=np.float64)
    text = np.asarray(text, dtype=np.float64)
    if normalize:
        audio = audio / np.linalg.norm(audio, axis=1, keepdims=True)
        text = text / np.linalg.norm(text, axis=1, keepdims=True)
    z_a = audio @ head.w_a.T + head.b_a
    z_t = text @ head.w_t.T + head.b_t
    fused = np.maximum(z_a, 0.0) * np.maximum(z_t, 0.0)
    return _sigmoid(fused @ head.w_out + head.b_out)


def predict(
    head: FusionHead, h_a, h_t, threshold: float = 0.5, sample_id: str = ""
) -> Prediction:
    """Label positive ("hallucinated") iff the predicted probability >= threshold."""
    y_hat, _ = forward(head, h_a, h_t)
    return Prediction(sample_id=sample_id, score=y_hat, hallucinated=y_hat >= threshold)


def train(
    train_triples: Sequence[tuple[bool, np.ndarray, np.ndarray]],
    val_triples: Sequence[tuple[bool, np.ndarray, np.ndarray]],
    config: TrainConfig,
) -> tuple[FusionHead, list[EpochLog]]:
    """Mini-batch BCE training with AdamW and early stopping.

    After each epoch, F1 on the validation triples (at the configured
    decision threshold) selects the best parameters; training stops after
    ``patience`` epochs without improvement or at ``max_epochs``. The
    logged train_loss is the epoch mean of per-batch mean losses; the
    last incomplete batch is kept. Deterministic given (data, config).

    The returned head is snapped to float32 checkpoint precision so a
    saved and reloaded head predicts identically.
    """
    y_train, a_train, t_train = _stack_triples(train_triples, config.normalize_inputs, "train")
    y_val, a_val, t_val = _stack_triples(val_triples, config.normalize_inputs, "val")
    if y_train.min() == y_train.max():
        raise FusionError("training split contains a single class")

    rng = np.random.default_rng(config.seed)
    head = init_head(a_train.shape[1], t_train.shape[1], config.hidden_size, rng)
    state = init_optimizer(head, lr=config.lr, weight_decay=config.weight_decay)

    best_head = head.copy()
    best_f1 = -1.0
    epochs_since_improvement = 0
    log: list[EpochLog] = []
    n = y_train.shape[0]

    for epoch in range(config.max_epochs):
        perm = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            loss, grads = batch_loss_and_grads(head, a_train[idx], t_train[idx], y_train[idx])
            head, state = adamw_step(head, grads, state)
            batch_losses.append(loss)
        train_loss = float(np.mean(batch_losses))

        scores = predict_scores(head, a_val, t_val)
        preds = scores >= config.decision_threshold
        val_f1 = compute_metrics(preds.tolist(), (y_val > 0.5).tolist()).f1
        log.append(EpochLog(epoch=epoch, train_loss=train_loss, val_f1=val_f1))

        if val_f1 > best_f1:
            best_f1 = val_f1
            best_head = head.copy()
            epochs_since_improvement = 0
        else:
            epochs_since_improvement += 1
            if epochs_since_improvement >= config.patience:
                break

    return snap_f32(best_head), log


def save_head(head: FusionHead, path: str | Path) -> None:
    """Checkpoint: header (magic, version, dim_a, dim_t, d) then float32
    parameters in declared order w_a, b_a, w_t, b_t, w_out, b_out."""
    path = Path(path)
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<IIII", CHECKPOINT_VERSION, head.dim_a, head.dim_t, head.hidden_size),
    ]
    for name in PARAM_NAMES:
        arr = np.asarray(getattr(head, name), dtype=np.float64)
        parts.append(arr.astype("<f4").tobytes(order="C"))
    blob = b"".join(parts)
    fd, tmp_name = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=str(path.parent))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise


def load_head(path: str | Path) -> FusionHead:
    """Load a checkpoint; parameters are upcast to float64 for computation."""
    path = Path(path)
    if not path.exists():
        raise FusionError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FusionError(f"bad magic; not a fusion checkpoint: {path}")
    if len(blob) < 20:
        raise FusionError("truncated checkpoint header")
    version, dim_a, dim_t, hidden = struct.unpack("<IIII", blob[4:20])
    if version != CHECKPOINT_VERSION:
        raise FusionError(f"unsupported checkpoint version {version}")
    shapes = {
        "w_a": (hidden, dim_a),
        "b_a": (hidden,),
        "w_t": (hidden, dim_t),
        "b_t": (hidden,),
        "w_out": (hidden,),
        "b_out": (),
    }
    expected = 20 + 4 * sum(int(np.prod(s)) for s in shapes.values())
    if len(blob) != expected:
        raise FusionError(
            f"checkpoint size {len(blob)} does not match header (expected {expected})"
        )
    offset = 20
    params: dict[str, np.ndarray] = {}
    for name in PARAM_NAMES:
        shape = shapes[name]
        count = int(np.prod(shape))
        arr = np.frombuffer(blob[offset : offset + 4 * count], dtype="<f4")
        offset += 4 * count
        params[name] = arr.astype(np.float64).reshape(shape)
    return FusionHead(
        w_a=params["w_a"],
        b_a=params["b_a"],
        w_t=params["w_t"],
        b_t=params["b_t"],
        w_out=params["w_out"],
        b_out=float(params["b_out"]),
    )


def fd_gradients(head: FusionHead, h_a, h_t, y: int, step: float = 1e-5) -> Gradients:
    """Central finite differences of bce_loss(forward(...)) over every
    parameter; independent of backward(), so it serves as its oracle."""
    def loss_for(candidate: FusionHead) -> float:
        y_hat, _ = forward(candidate, h_a, h_t)
        return bce_loss(y_hat, y)

    def loss_with(name: str, flat_index: int, value: float) -> float:
        perturbed = head.copy()
        arr = np.asarray(getattr(perturbed, name), dtype=np.float64).copy()
        arr.reshape(-1)[flat_index] = value
        if name == "b_out":
            perturbed.b_out = float(arr)
        else:
            setattr(perturbed, name, arr)
        return loss_for(perturbed)

    grads = {}
    for name in PARAM_NAMES:
        base = np.asarray(getattr(head, name), dtype=np.float64)
        grad = np.zeros_like(base)
        flat_base = base.reshape(-1)
        flat_grad = grad.reshape(-1)
        for i in range(flat_base.size):
            plus = loss_with(name, i, flat_base[i] + step)
            minus = loss_with(name, i, flat_base[i] - step)
            flat_grad[i] = (plus - minus) / (2.0 * step)
        grads[name] = grad
    return Gradients(
        w_a=grads["w_a"], b_a=grads["b_a"], w_t=grads["w_t"], b_t=grads["b_t"],
        w_out=grads["w_out"], b_out=np.asarray(grads["b_out"]),
    )


def gradient_check(
    head: FusionHead, h_a, h_t, y: int, step: float = 1e-5
) -> float:
    """Max over parameters of the relative error between analytic and
    central-finite-difference gradients, measured per tensor as
    ||ga - gn|| / (||ga|| + ||gn||) (0 when both vanish)."""
    y_hat, cache = forward(head, h_a, h_t)
    analytic = backward(head, cache, y)
    numeric = fd_gradients(head, h_a, h_t, y, step=step)
    worst = 0.0
    for (name, ga), (_, gn) in zip(analytic.items(), numeric.items()):
        ga = np.asarray(ga, dtype=np.float64)
        gn = np.asarray(gn, dtype=np.float64)
        denom = float(np.linalg.norm(ga) + np.linalg.norm(gn))
        if denom == 0.0:
            continue
        worst = max(worst, float(np.linalg.norm(ga - gn)) / denom)
    return worst
