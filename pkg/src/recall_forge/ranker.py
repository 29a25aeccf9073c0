"""16-128-64-1 MLP ranker: Linear -> BatchNorm -> ReLU -> Dropout, twice, then a
sigmoid output, trained with binary cross-entropy and Adam in numpy.
"""

from __future__ import annotations

import copy
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .sampler import hash_keys

log = logging.getLogger(__name__)

LAYER_SIZES = (16, 128, 64, 1)
DROPOUT = (0.30, 0.50)
PARAM_NAMES = ("W1", "b1", "gamma1", "beta1", "W2", "b2", "gamma2", "beta2", "W3", "b3")
BUFFER_NAMES = ("mean1", "var1", "mean2", "var2")
MODEL_MAGIC = b"RFNN"
MODEL_VERSION = 1


class TrainingDegenerateError(ValueError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_epochs: int = 30
    patience: int = 3
    batch_size: int = 256
    inference_batch: int = 8192
    seed: int = 42
    val_fraction: float = 0.2
    split_seed: int = 0
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        if min(self.learning_rate, self.epsilon, self.batch_size, self.inference_batch) <= 0:
            raise ValueError("learning rate, epsilon and batch sizes must be positive")
        if self.max_epochs < 0 or self.patience < 1:
            raise ValueError("max_epochs must be >= 0 and patience >= 1")


@dataclass
class RankerModel:
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    dropout: tuple[float, float] = DROPOUT
    bn_eps: float = 1e-5
    training: bool = False
    history: list[dict] = field(default_factory=list, compare=False)

    def eval(self) -> RankerModel:
        self.training = False
        return self

    def copy(self) -> RankerModel:
        return RankerModel(
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
            self.dropout,
            self.bn_eps,
            self.training,
            copy.deepcopy(self.history),
        )

    def tensors(self):
        for name in PARAM_NAMES:
            yield name, self.params[name]
        for name in BUFFER_NAMES:
            yield name, self.buffers[name]

    def equal_bits(self, other: RankerModel) -> bool:
        return all(np.array_equal(a, b) for (_, a), (_, b) in zip(self.tensors(), other.tensors()))


def init_model(rng: np.random.Generator | int = 0, bn_eps: float = 1e-5) -> RankerModel:
    """He-uniform weights (bound sqrt(6 / fan_in)), zero biases, identity batch-norm."""
    rng = np.random.default_rng(rng)
    params, buffers = {}, {}
    for layer, (fan_in, fan_out) in enumerate(zip(LAYER_SIZES[:-1], LAYER_SIZES[1:]), start=1):
        bound = np.sqrt(6.0 / fan_in)
        params[f"W{layer}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[f"b{layer}"] = np.zeros(fan_out)
        if layer < 3:
            params[f"gamma{layer}"] = np.ones(fan_out)
            params[f"beta{layer}"] = np.zeros(fan_out)
            buffers[f"mean{layer}"] = np.zeros(fan_out)
            buffers[f"var{layer}"] = np.ones(fan_out)
    return RankerModel(params, buffers, DROPOUT, bn_eps)


def _dense(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # Row results must not depend on how many rows are in the batch: BLAS uses
    # different kernels for a single row or a single output column.
    if w.shape[1] == 1:
        out = np.zeros(x.shape[0])
        for k in range(w.shape[0]):
            out += x[:, k] * w[k, 0]
        return out[:, None]
    if x.shape[0] == 1:
        return (np.vstack([x, x]) @ w)[:1]
    return x @ w


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def bce_with_logits(logits: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.maximum(logits, 0.0) - logits * y + np.log1p(np.exp(-np.abs(logits)))))


def forward(model: RankerModel, x: np.ndarray, batch_stats: bool = False, rng=None, momentum: float | None = None):
    """Logits and a backward cache.

    ``batch_stats`` normalises with the batch's own statistics (training);
    otherwise running statistics are used. Dropout is applied only when an
    ``rng`` is given. Running statistics are updated when ``momentum`` is set.
    """
    p = model.params
    eps = model.bn_eps
    cache = {"x": x, "layers": []}
    h = x
    for layer in (1, 2):
        z = _dense(h, p[f"W{layer}"]) + p[f"b{layer}"]
        if batch_stats:
            mu = z.mean(axis=0)
            var = z.var(axis=0)
            if momentum is not None:
                n = z.shape[0]
                unbiased = var * n / max(n - 1, 1)
                model.buffers[f"mean{layer}"] = (1 - momentum) * model.buffers[f"mean{layer}"] + momentum * mu
                model.buffers[f"var{layer}"] = (1 - momentum) * model.buffers[f"var{layer}"] + momentum * unbiased
        else:
            mu = model.buffers[f"mean{layer}"]
            var = model.buffers[f"var{layer}"]
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (z - mu) * inv_std
        y = p[f"gamma{layer}"] * xhat + p[f"beta{layer}"]
        a = np.maximum(y, 0.0)
        mask = None
        if rng is not None:
            keep = 1.0 - model.dropout[layer - 1]
            mask = (rng.random(a.shape) < keep) / keep
            a = a * mask
        cache["layers"].append({"in": h, "xhat": xhat, "inv_std": inv_std, "y": y, "mask": mask})
        h = a
    cache["h"] = h
    cache["batch_stats"] = batch_stats
    logits = _dense(h, p["W3"])[:, 0] + p["b3"][0]
    return logits, cache


def backward(model: RankerModel, cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    p = model.params
    grads = {}
    h = cache["h"]
    grads["W3"] = h.T @ dlogits[:, None]
    grads["b3"] = np.array([dlogits.sum()])
    da = dlogits[:, None] * p["W3"][:, 0][None, :]
    for layer in (2, 1):
        c = cache["layers"][layer - 1]
        if c["mask"] is not None:
            da = da * c["mask"]
        dy = da * (c["y"] > 0)
        grads[f"gamma{layer}"] = (dy * c["xhat"]).sum(axis=0)
        grads[f"beta{layer}"] = dy.sum(axis=0)
        dxhat = dy * p[f"gamma{layer}"]
        if cache["batch_stats"]:
            n = dxhat.shape[0]
            dz = (c["inv_std"] / n) * (n * dxhat - dxhat.sum(axis=0) - c["xhat"] * (dxhat * c["xhat"]).sum(axis=0))
        else:
            dz = dxhat * c["inv_std"]
        grads[f"W{layer}"] = c["in"].T @ dz
        grads[f"b{layer}"] = dz.sum(axis=0)
        da = dz @ p[f"W{layer}"].T
    return grads


def loss_and_grads(model: RankerModel, x, y, batch_stats: bool = False, rng=None):
    """Mean BCE and its gradient for every parameter tensor."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    logits, cache = forward(model, x, batch_stats=batch_stats, rng=rng)
    loss = bce_with_logits(logits, y)
    dlogits = (sigmoid(logits) - y) / y.size
    return loss, backward(model, cache, dlogits)


class _Adam:
    def __init__(self, params, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        corr1 = 1.0 - c.beta1**self.t
        corr2 = 1.0 - c.beta2**self.t
        for k, g in grads.items():
            self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * g * g
            params[k] -= c.learning_rate * (self.m[k] / corr1) / (np.sqrt(self.v[k] / corr2) + c.epsilon)


def validation_split(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (train, val) index split: val holds the smallest hashed keys."""
    ids = np.arange(n, dtype=np.int64)
    order = ids[np.lexsort((ids, hash_keys(ids, 0, seed)))]
    n_val = int(round(fraction * n)) if n >= 5 else 0
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def _round_to_f32(model: RankerModel) -> RankerModel:
    for d in (model.params, model.buffers):
        for k in d:
            d[k] = d[k].astype(np.float32).astype(np.float64)
    return model


def train(features, labels, cfg: TrainConfig | None = None) -> RankerModel:
    """Fit the ranker; returns the snapshot with the best validation loss.

    The returned tensors are rounded to float32 so that a saved model reloads
    bit-identically.
    """
    cfg = cfg or TrainConfig()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != LAYER_SIZES[0]:
        raise ValueError(f"features must have shape (n, {LAYER_SIZES[0]}), got {x.shape}")
    if y.shape != (x.shape[0],):
        raise ValueError("labels must have one entry per feature row")
    if x.shape[0] < 2 or np.unique(y).size < 2:
        raise TrainingDegenerateError("training needs at least two examples covering both classes")
    rng = np.random.default_rng(cfg.seed)
    model = init_model(rng, cfg.bn_eps)
    model.training = True
    tr, va = validation_split(x.shape[0], cfg.val_fraction, cfg.split_seed)
    monitor = va if va.size else tr
    opt = _Adam(model.params, cfg)
    best, best_loss, stale = model.copy(), np.inf, 0
    for epoch in range(cfg.max_epochs):
        perm = rng.permutation(tr)
        for lo in range(0, perm.size, cfg.batch_size):
            batch = perm[lo : lo + cfg.batch_size]
            if batch.size < 2:
                continue
            logits, cache = forward(model, x[batch], batch_stats=True, rng=rng, momentum=cfg.bn_momentum)
            dlogits = (sigmoid(logits) - y[batch]) / batch.size
            opt.step(model.params, backward(model, cache, dlogits))
        train_loss = bce_with_logits(forward(model, x[tr])[0], y[tr])
        val_loss = bce_with_logits(forward(model, x[monitor])[0], y[monitor])
        improved = val_loss < best_loss
        if improved:
            best, best_loss, stale = model.copy(), val_loss, 0
        else:
            stale += 1
        model.history.append(
            {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "best_val_loss": min(best_loss, val_loss)}
        )
        if stale >= cfg.patience:
            break
    best.history = model.history
    best.training = False
    return _round_to_f32(best)


def predict(model: RankerModel, features, batch_size: int = 8192, workers: int = 1) -> np.ndarray:
    """Match probabilities in (0, 1), computed in eval mode, row by row independent."""
    if model.training:
        raise ValueError("predict requires an eval-mode model")
    x = np.asarray(features)
    if x.ndim != 2 or x.shape[1] != LAYER_SIZES[0]:
        raise ValueError(f"features must have shape (n, {LAYER_SIZES[0]}), got {x.shape}")
    if x.shape[0] == 0:
        return np.empty(0)

    def run(lo):
        logits, _ = forward(model, x[lo : lo + batch_size].astype(np.float64))
        return sigmoid(logits)

    starts = range(0, x.shape[0], batch_size)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(lo) for lo in starts]
    tiny = np.finfo(np.float64).tiny
    return np.clip(np.concatenate(parts), tiny, np.nextafter(1.0, 0.0))


def save_model(path, model: RankerModel) -> None:
    """RFNN file: magic, u16 version, f64 dropout rates and bn eps, a shape
    manifest, then every tensor as f32 LE in manifest order."""
    tensors = list(model.tensors())
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<HdddH", MODEL_VERSION, *model.dropout, model.bn_eps, len(tensors)))
        for name, t in tensors:
            raw = name.encode()
            fh.write(struct.pack("<B", len(raw)) + raw)
            fh.write(struct.pack("<B", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
        for _, t in tensors:
            fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def load_model(path) -> RankerModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MODEL_MAGIC:
        raise ValueError(f"{path}: not an RFNN file")
    version, d1, d2, eps, count = struct.unpack_from("<HdddH", data, 4)
    if version != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported RFNN version {version}")
    pos = 4 + struct.calcsize("<HdddH")
    manifest = []
    for _ in range(count):
        (ln,) = struct.unpack_from("<B", data, pos)
        name = data[pos + 1 : pos + 1 + ln].decode()
        pos += 1 + ln
        (ndim,) = struct.unpack_from("<B", data, pos)
        shape = struct.unpack_from(f"<{ndim}I", data, pos + 1)
        pos += 1 + 4 * ndim
        manifest.append((name, shape))
    params, buffers = {}, {}
    for name, shape in manifest:
        size = int(np.prod(shape))
        arr = np.frombuffer(data, "<f4", size, pos).reshape(shape).astype(np.float64)
        pos += 4 * size
        (params if name in PARAM_NAMES else buffers)[name] = arr
    return RankerModel(params, buffers, (d1, d2), eps)
