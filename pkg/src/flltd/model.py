"""Softmax-regression / one-hidden-layer classifier on flat parameter vectors.

Parameters live in a single 1-D float64 array so that client updates and the
global model can be added, scaled and averaged directly. Layout, in order:

* ``hidden_dim == 0``: ``W (input_dim x num_classes)``, ``b (num_classes)``
* ``hidden_dim > 0``:  ``W1 (input_dim x hidden_dim)``, ``b1 (hidden_dim)``,
  ``W2 (hidden_dim x num_classes)``, ``b2 (num_classes)``

All matrices are stored row-major.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_FLOOR = 1e-12
_LOG_FLOOR = np.log(PROB_FLOOR)
INIT_SCALE = 0.05


@dataclass(frozen=True)
class ModelArch:
    input_dim: int
    num_classes: int
    hidden_dim: int = 0

    def __post_init__(self):
        if int(self.input_dim) < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if int(self.num_classes) < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if int(self.hidden_dim) < 0:
            raise ValueError(f"hidden_dim must be >= 0, got {self.hidden_dim}")

    @property
    def n_params(self) -> int:
        d, h, c = self.input_dim, self.hidden_dim, self.num_classes
        if h == 0:
            return d * c + c
        return d * h + h + h * c + c


@dataclass(frozen=True)
class Batch:
    """Feature matrix plus integer labels."""

    features: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)


def _unpack(arch: ModelArch, params: np.ndarray):
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1 or params.shape[0] != arch.n_params:
        raise ValueError(
            f"parameter vector has shape {params.shape}, expected ({arch.n_params},)"
        )
    d, h, c = arch.input_dim, arch.hidden_dim, arch.num_classes
    if h == 0:
        return params[: d * c].reshape(d, c), params[d * c :]
    o = 0
    w1 = params[o : o + d * h].reshape(d, h)
    o += d * h
    b1 = params[o : o + h]
    o += h
    w2 = params[o : o + h * c].reshape(h, c)
    o += h * c
    return w1, b1, w2, params[o:]


def _check_features(arch: ModelArch, features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != arch.input_dim:
        raise ValueError(
            f"features have shape {x.shape}, expected (n, {arch.input_dim})"
        )
    return x


def _check_batch(arch: ModelArch, batch) -> tuple[np.ndarray, np.ndarray]:
    x = _check_features(arch, batch.features)
    y = np.asarray(batch.labels, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("batch must contain at least one example")
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"{x.shape[0]} feature rows but {y.shape[0]} labels")
    if y.min() < 0 or y.max() >= arch.num_classes:
        raise ValueError(f"labels must lie in [0, {arch.num_classes})")
    return x, y


def init_params(arch: ModelArch, seed: int) -> np.ndarray:
    """Uniform(-0.05, 0.05) initialisation, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=arch.n_params)


def _forward(arch, params, x):
    """Return logits and the hidden activations needed for backprop."""
    if arch.hidden_dim == 0:
        w, b = _unpack(arch, params)
        return x @ w + b, None
    w1, b1, w2, b2 = _unpack(arch, params)
    pre = x @ w1 + b1
    act = np.maximum(pre, 0.0)
    return act @ w2 + b2, (pre, act)


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def logits(arch: ModelArch, params, features) -> np.ndarray:
    return _forward(arch, params, _check_features(arch, features))[0]


def predict_proba(arch: ModelArch, params, features) -> np.ndarray:
    z = logits(arch, params, features)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def predict(arch: ModelArch, params, features) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return np.argmax(logits(arch, params, features), axis=1)


def loss(arch: ModelArch, params, batch) -> float:
    """Mean cross-entropy with probabilities floored at ``PROB_FLOOR``."""
    x, y = _check_batch(arch, batch)
    logp = _log_softmax(_forward(arch, params, x)[0])
    true_logp = np.maximum(logp[np.arange(len(y)), y], _LOG_FLOOR)
    return float(-true_logp.mean())


def grad(arch: ModelArch, params, batch) -> np.ndarray:
    """Exact gradient of :func:`loss` (floored examples contribute zero)."""
    x, y = _check_batch(arch, batch)
    n = len(y)
    z, cache = _forward(arch, params, x)
    logp = _log_softmax(z)
    rows = np.arange(n)
    dz = np.exp(logp)
    dz[rows, y] -= 1.0
    dz[logp[rows, y] < _LOG_FLOOR] = 0.0
    dz /= n
    if arch.hidden_dim == 0:
        return np.concatenate([(x.T @ dz).ravel(), dz.sum(axis=0)])
    _, _, w2, _ = _unpack(arch, params)
    pre, act = cache
    dact = (dz @ w2.T) * (pre > 0)
    return np.concatenate(
        [
            (x.T @ dact).ravel(),
            dact.sum(axis=0),
            (act.T @ dz).ravel(),
            dz.sum(axis=0),
        ]
    )


def sgd_epoch(
    arch: ModelArch,
    params,
    data,
    lr: float,
    batch_size: int,
    rng_seed: int,
) -> tuple[np.ndarray, float]:
    """One shuffled pass of mini-batch SGD.

    Returns the updated parameters and the mean of the mini-batch losses, each
    measured before the step taken on that mini-batch. A ``batch_size`` larger
    than the dataset means a single full batch.
    """
    if lr < 0:
        raise ValueError(f"lr must be non-negative, got {lr}")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    x, y = _check_batch(arch, data)
    w = np.array(params, dtype=np.float64, copy=True)
    order = np.random.default_rng(rng_seed).permutation(len(y))
    losses = []
    for start in range(0, len(y), batch_size):
        idx = order[start : start + batch_size]
        mb = Batch(x[idx], y[idx])
        losses.append(loss(arch, w, mb))
        if lr:
            w -= lr * grad(arch, w, mb)
    return w, float(np.mean(losses))


def evaluate(arch: ModelArch, params, test) -> float:
    """Top-1 accuracy; ties go to the lowest class index."""
    x, y = _check_batch(arch, test)
    return float(np.mean(predict(arch, params, x) == y))
