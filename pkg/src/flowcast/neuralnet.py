"""Feed-forward network with grouped softmax output, trained by hand.

The output layer is read as consecutive groups of `group_size` logits, one
group per demand slot; softmax is applied within each group and the loss is
the sum of per-group cross-entropies. Everything is 64-bit and seeded, so a
training run is a pure function of (data, config): repeating it reproduces
the checkpoint bit for bit.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Mlp",
    "AdamState",
    "TrainConfig",
    "EpochMetrics",
    "init_mlp",
    "forward",
    "loss_and_gradients",
    "adam_step",
    "normalize_input",
    "grouped_softmax",
    "accuracy_score",
    "train",
    "save_model",
    "load_model",
]

_MAGIC = b"FCMLP\x00"
_VERSION = 1
_NORM_MAX_DIVIDE = 1  # normalization rule id stored in checkpoints


@dataclass
class Mlp:
    sizes: tuple[int, ...]
    group_size: int
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dropout: float = 0.5
    topology_hash: str = ""

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


def init_mlp(
    sizes: tuple[int, ...] | list[int],
    group_size: int,
    seed: int,
    dropout: float = 0.5,
    topology_hash: str = "",
) -> Mlp:
    """Seeded init: weights uniform in +/- 1/sqrt(fan_in), biases zero."""
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) < 2:
        raise ValueError("need at least an input and an output size")
    if any(s < 1 for s in sizes):
        raise ValueError("layer sizes must be positive")
    if group_size < 1 or sizes[-1] % group_size != 0:
        raise ValueError("output size must be a multiple of group_size")
    if not 0 <= dropout < 1:
        raise ValueError("dropout must be in [0, 1)")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out, dtype=np.float64))
    return Mlp(
        sizes=sizes,
        group_size=group_size,
        weights=weights,
        biases=biases,
        dropout=dropout,
        topology_hash=topology_hash,
    )


def normalize_input(vec: np.ndarray) -> tuple[np.ndarray, float]:
    """Scale a nonnegative vector by its max; all-zero passes through.

    Returns (scaled vector, scale) with scale chosen so vec == scaled * scale.
    """
    vec = np.asarray(vec, dtype=np.float64)
    if np.any(vec < 0):
        raise ValueError("normalize_input expects nonnegative entries")
    scale = float(vec.max()) if vec.size else 0.0
    if scale == 0.0:
        return vec.copy(), 1.0
    return vec / scale, scale


def grouped_softmax(logits: np.ndarray, group_size: int) -> np.ndarray:
    """Softmax over consecutive groups along the last axis, max-subtracted."""
    shape = logits.shape
    if shape[-1] % group_size != 0:
        raise ValueError("logit width not divisible by group size")
    g = logits.reshape(*shape[:-1], shape[-1] // group_size, group_size)
    g = g - g.max(axis=-1, keepdims=True)
    e = np.exp(g)
    p = e / e.sum(axis=-1, keepdims=True)
    return p.reshape(shape)


def _dropout_mask(rng: np.random.Generator, shape: tuple[int, ...], rate: float) -> np.ndarray:
    # inverted dropout: surviving units scaled by 1/(1-rate) at train time,
    # so inference needs no rescaling
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


def forward(
    mlp: Mlp,
    x: np.ndarray,
    train: bool = False,
    dropout_seed: int | tuple | None = None,
) -> np.ndarray:
    """Probabilities for one input vector or a batch (rows are samples).

    In train mode with dropout enabled, a seed is required and the dropout
    masks are a pure function of it.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.shape[1] != mlp.sizes[0]:
        raise ValueError(f"input width {a.shape[1]} != expected {mlp.sizes[0]}")
    use_dropout = train and mlp.dropout > 0.0
    rng = None
    if use_dropout:
        if dropout_seed is None:
            raise ValueError("train-mode forward with dropout needs a dropout_seed")
        rng = np.random.default_rng(np.random.SeedSequence(dropout_seed))
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = a @ w + b
        if i < len(mlp.weights) - 1:
            a = np.maximum(z, 0.0)
            if use_dropout:
                a = a * _dropout_mask(rng, a.shape, mlp.dropout)
        else:
            a = grouped_softmax(z, mlp.group_size)
    return a[0] if single else a


def loss_and_gradients(
    mlp: Mlp,
    x: np.ndarray,
    labels: np.ndarray,
    dropout_seed: int | tuple | None = None,
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Summed per-group cross-entropy and its gradients for a batch.

    labels holds one candidate index per group, shape (batch, n_groups).
    Returns (mean loss per sample, weight grads, bias grads). Deterministic
    for a given dropout seed.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    labels = np.asarray(labels)
    if labels.ndim == 1:
        labels = labels[None, :]
    batch, _ = x.shape
    n_groups = mlp.sizes[-1] // mlp.group_size
    if labels.shape != (batch, n_groups):
        raise ValueError(f"labels shape {labels.shape} != {(batch, n_groups)}")

    use_dropout = mlp.dropout > 0.0
    rng = None
    if use_dropout:
        if dropout_seed is None:
            raise ValueError("loss_and_gradients needs a dropout_seed when dropout > 0")
        rng = np.random.default_rng(np.random.SeedSequence(dropout_seed))

    # forward, keeping activations and dropout masks for the backward sweep
    acts = [x]
    masks: list[np.ndarray | None] = []
    a = x
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = a @ w + b
        if i < len(mlp.weights) - 1:
            a = np.maximum(z, 0.0)
            if use_dropout:
                m = _dropout_mask(rng, a.shape, mlp.dropout)
                a = a * m
                masks.append(m)
            else:
                masks.append(None)
            acts.append(a)
        else:
            probs = grouped_softmax(z, mlp.group_size)

    pg = probs.reshape(batch, n_groups, mlp.group_size)
    rows = np.arange(batch)[:, None]
    cols = np.arange(n_groups)[None, :]
    picked = pg[rows, cols, labels]
    loss = float(-np.log(np.maximum(picked, 1e-300)).sum() / batch)

    # d(loss)/d(logits) for softmax + cross-entropy, averaged over the batch
    delta = pg.copy()
    delta[rows, cols, labels] -= 1.0
    delta = delta.reshape(batch, -1) / batch

    grad_w = [np.empty_like(w) for w in mlp.weights]
    grad_b = [np.empty_like(b) for b in mlp.biases]
    for i in range(len(mlp.weights) - 1, -1, -1):
        grad_w[i] = acts[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ mlp.weights[i].T
            if masks[i - 1] is not None:
                delta = delta * masks[i - 1]
            delta = delta * (acts[i] > 0.0)
    return loss, grad_w, grad_b


@dataclass
class AdamState:
    """First/second moment accumulators for a list of parameter arrays."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[np.ndarray], **kwargs) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            **kwargs,
        )


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float,
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update, in place on the parameter arrays."""
    if len(params) != len(state.m) or len(params) != len(grads):
        raise ValueError("params, grads and state must have matching lengths")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def accuracy_score(
    probs: np.ndarray,
    labels: np.ndarray,
    group_size: int,
    active: np.ndarray | None = None,
) -> float:
    """Fraction of (active) groups where the argmax matches the label.

    Ties go to the lowest index, matching the path decoder. With no active
    group at all the score is defined as 1.0.
    """
    if probs.ndim == 1:
        probs = probs[None, :]
        labels = np.asarray(labels)[None, :]
        if active is not None:
            active = np.asarray(active)[None, :]
    batch = probs.shape[0]
    pg = probs.reshape(batch, -1, group_size)
    pred = pg.argmax(axis=-1)
    hit = pred == labels
    if active is not None:
        total = int(active.sum())
        if total == 0:
            return 1.0
        return float(hit[active].sum() / total)
    return float(hit.mean())


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 100
    epochs: int = 10
    dropout: float = 0.5
    seed: int = 0
    target_accuracy: float | None = None
    # wall-clock cap; the epoch that crosses it is the last one
    budget_seconds: float | None = None


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    msr: float
    accuracy: float
    seconds: float


def _msr(probs: np.ndarray, labels: np.ndarray, group_size: int) -> float:
    """Mean squared residual between probabilities and one-hot labels."""
    batch = probs.shape[0]
    pg = probs.reshape(batch, -1, group_size)
    onehot = np.zeros_like(pg)
    rows = np.arange(batch)[:, None]
    cols = np.arange(pg.shape[1])[None, :]
    onehot[rows, cols, labels] = 1.0
    return float(np.mean((pg - onehot) ** 2))


def train(
    mlp: Mlp,
    x: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
    eval_x: np.ndarray | None = None,
    eval_labels: np.ndarray | None = None,
    eval_active: np.ndarray | None = None,
) -> list[EpochMetrics]:
    """Minibatch Adam training; returns one metrics row per epoch.

    Shuffling and dropout are seeded, so two runs with the same data and
    config produce identical parameters. When an eval split is passed, the
    reported accuracy/MSR come from it (inference mode); otherwise they are
    computed on the training data. Stops early once target_accuracy is hit.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    mlp.dropout = config.dropout
    params = mlp.weights + mlp.biases
    state = AdamState.for_params(params)
    history: list[EpochMetrics] = []
    started = time.perf_counter()
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = np.random.default_rng(
            np.random.SeedSequence((config.seed, epoch))
        ).permutation(n)
        total_loss = 0.0
        n_batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, gw, gb = loss_and_gradients(
                mlp, x[idx], labels[idx],
                dropout_seed=(config.seed, epoch, n_batches),
            )
            adam_step(params, gw + gb, state, config.lr)
            total_loss += loss
            n_batches += 1
        if eval_x is not None:
            probs = forward(mlp, eval_x)
            acc = accuracy_score(probs, eval_labels, mlp.group_size, eval_active)
            msr = _msr(probs, eval_labels, mlp.group_size)
        else:
            probs = forward(mlp, x)
            acc = accuracy_score(probs, labels, mlp.group_size)
            msr = _msr(probs, labels, mlp.group_size)
        history.append(
            EpochMetrics(
                epoch=epoch,
                loss=total_loss / n_batches,
                msr=msr,
                accuracy=acc,
                seconds=time.perf_counter() - t0,
            )
        )
        if config.target_accuracy is not None and acc >= config.target_accuracy:
            break
        if (config.budget_seconds is not None
                and time.perf_counter() - started >= config.budget_seconds):
            break
    return history


# ---------------------------------------------------------------------------
# checkpoints: little-endian binary, bitwise round-trip

def save_model(mlp: Mlp, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HBI", _VERSION, _NORM_MAX_DIVIDE, mlp.group_size))
        fh.write(struct.pack("<d", mlp.dropout))
        hash_bytes = bytes.fromhex(mlp.topology_hash) if mlp.topology_hash else b"\x00" * 32
        if len(hash_bytes) != 32:
            raise ValueError("topology_hash must be 32 bytes of hex")
        fh.write(hash_bytes)
        fh.write(struct.pack("<I", len(mlp.sizes)))
        fh.write(struct.pack(f"<{len(mlp.sizes)}I", *mlp.sizes))
        for w, b in zip(mlp.weights, mlp.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_model(path: str) -> Mlp:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        version, norm_id, group_size = struct.unpack("<HBI", fh.read(7))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        if norm_id != _NORM_MAX_DIVIDE:
            raise ValueError(f"{path}: unknown normalization rule {norm_id}")
        (dropout,) = struct.unpack("<d", fh.read(8))
        hash_bytes = fh.read(32)
        topology_hash = "" if hash_bytes == b"\x00" * 32 else hash_bytes.hex()
        (n_sizes,) = struct.unpack("<I", fh.read(4))
        sizes = struct.unpack(f"<{n_sizes}I", fh.read(4 * n_sizes))
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            w = np.frombuffer(fh.read(8 * fan_in * fan_out), dtype="<f8")
            weights.append(w.reshape(fan_in, fan_out).astype(np.float64))
            b = np.frombuffer(fh.read(8 * fan_out), dtype="<f8")
            biases.append(b.astype(np.float64))
        trailing = fh.read(1)
        if trailing:
            raise ValueError(f"{path}: trailing bytes in checkpoint")
    return Mlp(
        sizes=tuple(int(s) for s in sizes),
        group_size=int(group_size),
        weights=weights,
        biases=biases,
        dropout=float(dropout),
        topology_hash=topology_hash,
    )
