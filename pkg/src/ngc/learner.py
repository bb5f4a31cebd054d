"""Small feedforward learners with hand-written backprop and AdamW.

Parameters live in one flat float64 vector laid out layer by layer as
``W (fan_in x fan_out, row-major)`` followed by ``b (fan_out)``.
"""

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LOG_EPS = 1e-12
ACTIVATIONS = ("relu", "tanh")
HEADS = ("regression", "classification")


class ShapeError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, value):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden: tuple = ()
    output_dim: int = 1
    activation: str = "relu"
    head: str = "regression"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim <= 0 or self.output_dim <= 0 or any(h <= 0 for h in self.hidden):
            raise ValueError(f"all widths must be positive: {self}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}")
        if self.head == "classification" and self.output_dim < 2:
            raise ValueError("classification head needs output_dim = class count >= 2")

    @property
    def widths(self):
        return (self.input_dim, *self.hidden, self.output_dim)

    @property
    def n_params(self):
        w = self.widths
        return sum(w[i] * w[i + 1] + w[i + 1] for i in range(len(w) - 1))

    def layer_slices(self):
        """(W slice, W shape, b slice) per layer, into the flat parameter vector."""
        out, off = [], 0
        w = self.widths
        for i in range(len(w) - 1):
            n_w = w[i] * w[i + 1]
            out.append((slice(off, off + n_w), (w[i], w[i + 1]), slice(off + n_w, off + n_w + w[i + 1])))
            off += n_w + w[i + 1]
        return out


@dataclass
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-3
    weight_decay: float = 1e-2
    batch_size: int = 256
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class DenseModel:
    spec: ModelSpec
    params: np.ndarray
    m: np.ndarray = None
    v: np.ndarray = None
    step_count: int = 0

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (self.spec.n_params,):
            raise ShapeError(f"expected {self.spec.n_params} parameters, got {self.params.shape}")
        if self.m is None:
            self.m = np.zeros_like(self.params)
        if self.v is None:
            self.v = np.zeros_like(self.params)

    @classmethod
    def init(cls, spec):
        """Glorot-uniform weights, zero biases, drawn from ``spec.seed``."""
        rng = np.random.default_rng(spec.seed)
        params = np.zeros(spec.n_params)
        for ws, shape, _ in spec.layer_slices():
            lim = math.sqrt(6.0 / (shape[0] + shape[1]))
            params[ws] = rng.uniform(-lim, lim, size=shape[0] * shape[1])
        return cls(spec, params)

    def copy(self):
        return DenseModel(self.spec, self.params.copy(), self.m.copy(), self.v.copy(), self.step_count)

    def weights(self, params=None):
        p = self.params if params is None else params
        return [(p[ws].reshape(shape), p[bs]) for ws, shape, bs in self.spec.layer_slices()]


def _act(kind, z):
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(kind, z, a):
    return (z > 0).astype(z.dtype) if kind == "relu" else 1.0 - a * a


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_batch(model, batch):
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != model.spec.input_dim:
        raise ShapeError(f"batch of shape {batch.shape} does not match input_dim {model.spec.input_dim}")
    return batch


def _forward_cache(model, batch, params=None):
    layers = model.weights(params)
    acts, pre = [batch], []
    a = batch
    for i, (W, b) in enumerate(layers):
        z = a @ W + b
        pre.append(z)
        if i < len(layers) - 1:
            a = _act(model.spec.activation, z)
        elif model.spec.head == "classification":
            a = softmax(z)
        else:
            a = z
        acts.append(a)
    return acts, pre


def forward(model, batch):
    """Per-row outputs; probabilities for a classification head."""
    batch = _check_batch(model, batch)
    return _forward_cache(model, batch)[0][-1]


def loss_l2(pred, target):
    """Mean squared elementwise difference."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def loss_cross_entropy(pred, labels):
    """Mean negative log-probability of the true class, clamped at 1e-12."""
    pred = np.asarray(pred, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64).ravel()
    if pred.ndim != 2 or pred.shape[0] != labels.shape[0]:
        raise ShapeError(f"shape mismatch {pred.shape} vs {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= pred.shape[1]):
        raise ShapeError("label out of range")
    p = pred[np.arange(labels.size), labels]
    return float(-np.mean(np.log(np.maximum(p, LOG_EPS))))


def _loss(model, out, target):
    if model.spec.head == "classification":
        return loss_cross_entropy(out, target)
    return loss_l2(out, target)


def backward(model, batch, target, params=None):
    """Gradient of the head's loss (L2 or cross-entropy) w.r.t. the flat parameters.

    Returns ``(loss, grad)``.
    """
    batch = _check_batch(model, batch)
    acts, pre = _forward_cache(model, batch, params)
    out = acts[-1]
    n = batch.shape[0]
    if model.spec.head == "classification":
        labels = np.asarray(target).astype(np.int64).ravel()
        loss = loss_cross_entropy(out, labels)
        delta = out.copy()
        delta[np.arange(n), labels] -= 1.0
        delta /= n
    else:
        target = np.asarray(target, dtype=np.float64).reshape(out.shape)
        loss = loss_l2(out, target)
        delta = 2.0 * (out - target) / out.size

    layers = model.weights(params)
    grad = np.empty(model.spec.n_params)
    slices = model.spec.layer_slices()
    for i in range(len(layers) - 1, -1, -1):
        ws, shape, bs = slices[i]
        grad[ws] = (acts[i].T @ delta).ravel()
        grad[bs] = delta.sum(axis=0)
        if i:
            delta = (delta @ layers[i][0].T) * _act_grad(model.spec.activation, pre[i - 1], acts[i])
    return loss, grad


def grad_check(model, batch, target, step=1e-4):
    """Max relative error between analytic and central-difference gradients."""
    if model.spec.n_params > 5000:
        raise ValueError("grad_check is meant for models with <= 5000 parameters")
    _, analytic = backward(model, batch, target)
    batch = _check_batch(model, batch)
    p0 = model.params
    numeric = np.empty_like(p0)
    for i in range(p0.size):
        p = p0.copy()
        p[i] = p0[i] + step
        up = _loss(model, _forward_cache(model, batch, p)[0][-1], target)
        p[i] = p0[i] - step
        down = _loss(model, _forward_cache(model, batch, p)[0][-1], target)
        numeric[i] = (up - down) / (2 * step)
    rel = np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(rel.max()) if rel.size else 0.0


def adamw_step(model, grad, lr, weight_decay, t, beta1=0.9, beta2=0.999, eps=1e-8):
    """One decoupled-weight-decay Adam update in place; ``t`` is the 1-based step within this run."""
    model.m *= beta1
    model.m += (1 - beta1) * grad
    model.v *= beta2
    model.v += (1 - beta2) * grad * grad
    m_hat = model.m / (1 - beta1**t)
    v_hat = model.v / (1 - beta2**t)
    model.params *= 1.0 - lr * weight_decay
    model.params -= lr * m_hat / (np.sqrt(v_hat) + eps)
    model.step_count += 1


def fit(model, inputs, targets, config):
    """Mini-batch AdamW training. Returns ``(model, per-epoch mean loss)``.

    The model is updated in place. Moment estimates restart with every call, so
    a fine-tuning run depends only on the parameters it starts from.
    """
    inputs = _check_batch(model, inputs)
    targets = np.asarray(targets)
    n = inputs.shape[0]
    if n == 0:
        raise ValueError("empty dataset")
    if targets.shape[0] != n:
        raise ShapeError(f"{n} inputs but {targets.shape[0]} targets")
    if model.spec.head == "regression":
        targets = targets.astype(np.float64).reshape(n, model.spec.output_dim)
    else:
        targets = targets.astype(np.int64).ravel()

    model.m = np.zeros_like(model.params)
    model.v = np.zeros_like(model.params)
    rng = np.random.default_rng(config.shuffle_seed)
    trace = []
    t = 0
    bs = config.batch_size
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, bs):
            idx = order[lo : lo + bs]
            loss, grad = backward(model, inputs[idx], targets[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, loss)
            t += 1
            adamw_step(model, grad, config.learning_rate, config.weight_decay, t)
            total += loss * idx.size
        mean = total / n
        if not math.isfinite(mean):
            raise TrainingDiverged(epoch, mean)
        trace.append(mean)
    return model, trace


def predict(model, batch, chunk=65536):
    """``forward`` in row chunks, for large inference batches."""
    batch = np.asarray(batch)
    if batch.shape[0] <= chunk:
        return forward(model, batch)
    return np.concatenate([forward(model, batch[i : i + chunk]) for i in range(0, batch.shape[0], chunk)])


# -- checkpoints --------------------------------------------------------------

CKPT_MAGIC = b"NGCM"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _encode_spec(spec):
    h = spec.hidden
    return (
        struct.pack("<II", spec.input_dim, len(h))
        + struct.pack(f"<{len(h)}I", *h)
        + struct.pack(
            "<IBBQ",
            spec.output_dim,
            ACTIVATIONS.index(spec.activation),
            HEADS.index(spec.head),
            spec.seed,
        )
    )


def save_checkpoint(path, model):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = CKPT_MAGIC + struct.pack("<I", CKPT_VERSION) + _encode_spec(model.spec)
    body += struct.pack("<Q", model.step_count)
    body += model.params.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(body)


def load_checkpoint(path):
    buf = Path(path).read_bytes()
    if buf[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    try:
        (version,) = struct.unpack_from("<I", buf, 4)
        if version != CKPT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        off = 8
        in_dim, n_hidden = struct.unpack_from("<II", buf, off)
        off += 8
        hidden = struct.unpack_from(f"<{n_hidden}I", buf, off)
        off += 4 * n_hidden
        out_dim, act, head, seed = struct.unpack_from("<IBBQ", buf, off)
        off += struct.calcsize("<IBBQ")
        (steps,) = struct.unpack_from("<Q", buf, off)
        off += 8
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header") from exc
    spec = ModelSpec(in_dim, hidden, out_dim, ACTIVATIONS[act], HEADS[head], seed)
    if len(buf) - off != 4 * spec.n_params:
        raise CheckpointError(f"{path}: expected {spec.n_params} parameters")
    params = np.frombuffer(buf, dtype="<f4", offset=off).astype(np.float64)
    return DenseModel(spec, params, step_count=steps)


def snap_to_float32(model):
    """Round parameters to what a checkpoint stores, so resumed runs match live ones."""
    model.params = model.params.astype(np.float32).astype(np.float64)
    return model
