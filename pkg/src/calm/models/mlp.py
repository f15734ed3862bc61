"""Fully connected classifier with batch normalisation, trained with Adam.

Each hidden block is ``Linear (no bias) -> BatchNorm -> ReLU``; the output
layer is ``Linear`` with bias followed by softmax. Hidden linear layers carry
no bias because the batch-norm shift makes it redundant.
"""

from __future__ import annotations

import copy
import logging
from contextlib import nullcontext
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, TrainingError, ValidationError
from .forest import encode_labels

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None

log = logging.getLogger(__name__)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class MLPConfig:
    hidden: tuple = (256, 128, 64)
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 20

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if min(self.batch_size, self.max_epochs, self.patience) < 1 or min(self.hidden) < 1:
            raise ValidationError("batch_size, max_epochs, patience and hidden sizes must be positive")


@dataclass
class MlpModel:
    """Parameters are kept in ``params`` under names like ``W0``, ``gamma0``, ``Wout``."""

    params: dict
    running_mean: list
    running_var: list
    feature_names: list
    classes: list
    seed: int
    config: MLPConfig = field(default_factory=MLPConfig)
    input_mean: np.ndarray | None = None
    input_scale: np.ndarray | None = None
    epochs_trained: int = 0

    @property
    def n_hidden(self) -> int:
        return len(self.running_mean)

    @property
    def dims(self) -> list:
        return [self.params["W0"].shape[0]] + [self.params[f"W{i}"].shape[1] for i in range(self.n_hidden)] + [
            self.params["Wout"].shape[1]
        ]


def init_mlp(n_in: int, n_classes: int, hidden=(256, 128, 64), seed: int = 0, zero: bool = False) -> MlpModel:
    """He-initialised parameters (or all-zero weights with ``zero=True``)."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 0x4D4C50])))
    dims = [n_in] + list(hidden)
    params = {}
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        params[f"W{i}"] = np.zeros((a, b)) if zero else rng.normal(0.0, np.sqrt(2.0 / a), (a, b))
        params[f"gamma{i}"] = np.ones(b)
        params[f"beta{i}"] = np.zeros(b)
    params["Wout"] = np.zeros((dims[-1], n_classes)) if zero else rng.normal(
        0.0, np.sqrt(2.0 / dims[-1]), (dims[-1], n_classes))
    params["bout"] = np.zeros(n_classes)
    return MlpModel(
        params,
        [np.zeros(b) for b in hidden],
        [np.ones(b) for b in hidden],
        [f"f{j}" for j in range(n_in)],
        list(range(n_classes)),
        int(seed),
        MLPConfig(hidden=tuple(hidden)),
    )


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(model: MlpModel, X: np.ndarray, train: bool):
    """Logits plus the cache used for back-propagation.

    In train mode batch statistics are used (running stats are untouched here).
    """
    p = model.params
    a = X
    cache = []
    for i in range(model.n_hidden):
        z = a @ p[f"W{i}"]
        if train:
            mu, var = z.mean(axis=0), z.var(axis=0)
        else:
            mu, var = model.running_mean[i], model.running_var[i]
        inv = 1.0 / np.sqrt(var + BN_EPS)
        zh = (z - mu) * inv
        h = p[f"gamma{i}"] * zh + p[f"beta{i}"]
        cache.append((a, zh, inv, h, mu, var))
        a = np.maximum(h, 0.0)
    logits = a @ p["Wout"] + p["bout"]
    cache.append(a)
    return logits, cache


def loss_and_grads(model: MlpModel, X: np.ndarray, y: np.ndarray):
    """Mean softmax cross-entropy and its gradient for every parameter (train-mode BN)."""
    loss, g, _ = _loss_grads_cache(model, X, y)
    return loss, g


def _loss_grads_cache(model, X, y):
    p = model.params
    logits, cache = forward(model, X, train=True)
    n = X.shape[0]
    prob = softmax(logits)
    loss = float(-np.mean(np.log(prob[np.arange(n), y] + 1e-300)))
    g = {}
    d = prob.copy()
    d[np.arange(n), y] -= 1.0
    d /= n
    a_last = cache[-1]
    g["Wout"] = a_last.T @ d
    g["bout"] = d.sum(axis=0)
    da = d @ p["Wout"].T
    for i in range(model.n_hidden - 1, -1, -1):
        a_in, zh, inv, h, _, _ = cache[i]
        dh = da * (h > 0)
        g[f"gamma{i}"] = (dh * zh).sum(axis=0)
        g[f"beta{i}"] = dh.sum(axis=0)
        dzh = dh * p[f"gamma{i}"]
        dz = inv / n * (n * dzh - dzh.sum(axis=0) - zh * (dzh * zh).sum(axis=0))
        g[f"W{i}"] = a_in.T @ dz
        da = dz @ p[f"W{i}"].T
    return loss, g, cache


def mlp_proba(model: MlpModel, X, feature_names=None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if feature_names is not None and list(feature_names) != list(model.feature_names):
        raise ContractError(f"feature schema {list(feature_names)} != model schema {model.feature_names}")
    if X.ndim != 2 or X.shape[1] != len(model.feature_names):
        raise ContractError(f"expected {len(model.feature_names)} feature columns")
    if model.input_mean is not None:
        X = (X - model.input_mean) / model.input_scale
    return softmax(forward(model, X, train=False)[0])


def mlp_predict(model: MlpModel, X, feature_names=None):
    """Returns ``(labels, confidences)``; confidence is the max softmax probability."""
    prob = mlp_proba(model, X, feature_names)
    idx = np.argmax(prob, axis=1)
    labels = np.array([model.classes[i] for i in idx], dtype=object)
    return labels, prob[np.arange(idx.size), idx]


def _single_thread():
    return threadpool_limits(1) if threadpool_limits is not None else nullcontext()


def train_mlp(X, y, config: MLPConfig | None = None, seed: int = 0, X_val=None, y_val=None,
              feature_names=None, classes=None, standardize: bool = True) -> MlpModel:
    """Minibatch Adam on softmax cross-entropy with early stopping on validation accuracy.

    Inputs are z-scored with training statistics (stored in the model) unless
    ``standardize`` is false. Without a validation set the training accuracy
    drives early stopping. The best-scoring weights are returned.
    """
    cfg = config or MLPConfig()
    X = np.asarray(X, dtype=float)
    yi, classes = encode_labels(y, classes)
    if X.shape[0] < cfg.batch_size:
        raise ValidationError(f"need at least batch_size={cfg.batch_size} rows, got {X.shape[0]}")
    if np.isnan(X).any():
        raise ValidationError("training features contain missing values; impute first")
    mean = X.mean(axis=0) if standardize else None
    scale = np.where(X.std(axis=0) > 0, X.std(axis=0), 1.0) if standardize else None
    Xn = (X - mean) / scale if standardize else X
    has_val = X_val is not None and len(X_val) > 0
    if has_val:
        Xv = np.asarray(X_val, dtype=float)
        Xv = (Xv - mean) / scale if standardize else Xv
        yv, _ = encode_labels(y_val, classes)
    else:
        Xv, yv = Xn, yi

    model = init_mlp(X.shape[1], len(classes), cfg.hidden, seed)
    model.config = cfg
    model.classes = list(classes)
    model.feature_names = list(feature_names) if feature_names is not None else model.feature_names
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 0xBA7C])))
    m = {k: np.zeros_like(v) for k, v in model.params.items()}
    v = {k: np.zeros_like(val) for k, val in model.params.items()}
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    best_acc, best_state, best_epoch, stale = -1.0, None, 0, 0
    n = X.shape[0]
    with _single_thread():
        for epoch in range(1, cfg.max_epochs + 1):
            perm = rng.permutation(n)
            for s in range(0, n, cfg.batch_size):
                idx = perm[s : s + cfg.batch_size]
                if idx.size < 2:
                    continue
                loss, g, cache = _loss_grads_cache(model, Xn[idx], yi[idx])
                if not np.isfinite(loss):
                    raise TrainingError(f"loss became non-finite at epoch {epoch}")
                for i in range(model.n_hidden):
                    mu, var = cache[i][4], cache[i][5]
                    unbiased = var * idx.size / (idx.size - 1)
                    model.running_mean[i] = (1 - BN_MOMENTUM) * model.running_mean[i] + BN_MOMENTUM * mu
                    model.running_var[i] = (1 - BN_MOMENTUM) * model.running_var[i] + BN_MOMENTUM * unbiased
                step += 1
                for k, grad in g.items():
                    m[k] = b1 * m[k] + (1 - b1) * grad
                    v[k] = b2 * v[k] + (1 - b2) * grad * grad
                    mh = m[k] / (1 - b1**step)
                    vh = v[k] / (1 - b2**step)
                    model.params[k] = model.params[k] - cfg.learning_rate * mh / (np.sqrt(vh) + eps)
            logits, _ = forward(model, Xv, train=False)
            acc = float(np.mean(np.argmax(logits, axis=1) == yv))
            if acc > best_acc:
                best_acc, best_epoch, stale = acc, epoch, 0
                best_state = copy.deepcopy((model.params, model.running_mean, model.running_var))
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    model.params, model.running_mean, model.running_var = best_state
    model.input_mean, model.input_scale = mean, scale
    model.epochs_trained = best_epoch
    return model


def mlp_gradient_check(model: MlpModel, X, y, eps: float = 1e-5) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    Relative error per parameter is ``|ga - gn| / max(|ga|, |gn|, 1e-8)``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    _, grads = loss_and_grads(model, X, y)
    worst = 0.0
    for name, w in model.params.items():
        flat = w.reshape(-1)
        ga = grads[name].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            lp, _ = loss_and_grads(model, X, y)
            flat[j] = orig - eps
            lm, _ = loss_and_grads(model, X, y)
            flat[j] = orig
            gn = (lp - lm) / (2 * eps)
            rel = abs(ga[j] - gn) / max(abs(ga[j]), abs(gn), 1e-8)
            worst = max(worst, rel)
    return worst
