"""From-scratch softmax classifiers trained with plain minibatch SGD.

Small enough to run at desk scale, used to check whether a protected training
set still teaches anything that transfers to clean validation data.
Everything is float64 numpy; there is no momentum or weight decay.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .core import LabeledDataset
from .countermeasures import AugmentationConfig, augmentation_pipeline, center_crop
from .errors import ConfigError, ParameterError, ShapeError

KINDS = ("linear", "mlp")


@dataclass
class ModelConfig:
    kind: str = "linear"
    hidden_dim: int = 64


@dataclass
class ModelParams:
    kind: str
    params: dict  # name -> float64 array; W is (out, in)

    @property
    def input_dim(self) -> int:
        return self.params["W1" if self.kind == "mlp" else "W"].shape[1]

    @property
    def num_classes(self) -> int:
        return self.params["b2" if self.kind == "mlp" else "b"].shape[0]

    def copy(self) -> "ModelParams":
        return ModelParams(self.kind, {k: v.copy() for k, v in self.params.items()})

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.params.values())


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    shuffle: bool = True
    augmentation: AugmentationConfig | None = None

    def validate(self):
        if not self.learning_rate > 0:
            raise ParameterError(f"learning rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ParameterError("epochs and batch size must be >= 1")
        return self


@dataclass
class EpochRecord:
    epoch: int
    train_accuracy: float
    val_accuracy: float
    train_loss: float


@dataclass
class EvalReport:
    epochs: list = field(default_factory=list)

    @property
    def best_val_accuracy(self) -> float:
        return max(r.val_accuracy for r in self.epochs)

    @property
    def final(self) -> EpochRecord:
        return self.epochs[-1]

    @property
    def generalization_gap(self) -> float:
        return self.final.train_accuracy - self.final.val_accuracy

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("epoch,train_acc,val_acc,train_loss\n")
        for r in self.epochs:
            out.write(f"{r.epoch},{r.train_accuracy!r},{r.val_accuracy!r},{r.train_loss!r}\n")
        f = self.final
        out.write(f"best,{f.train_accuracy!r},{self.best_val_accuracy!r},{f.train_loss!r}\n")
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EvalReport":
        lines = text.strip().splitlines()
        if not lines or lines[0] != "epoch,train_acc,val_acc,train_loss":
            raise ValueError("not an EvalReport CSV")
        rep = cls()
        for line in lines[1:]:
            cols = line.split(",")
            if cols[0] == "best":
                continue
            rep.epochs.append(EpochRecord(int(cols[0]), float(cols[1]), float(cols[2]),
                                          float(cols[3])))
        return rep


# -- model math --------------------------------------------------------------

def init_model(cfg: ModelConfig, input_dim: int, num_classes: int, prng: _rng.Prng) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias."""
    if cfg.kind not in KINDS:
        raise ConfigError(f"unknown model kind {cfg.kind!r}")

    def layer(fan_out, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        W = (2.0 * prng.units(fan_out * fan_in) - 1.0).reshape(fan_out, fan_in) * bound
        b = (2.0 * prng.units(fan_out) - 1.0) * bound
        return W, b

    if cfg.kind == "linear":
        W, b = layer(num_classes, input_dim)
        return ModelParams("linear", {"W": W, "b": b})
    W1, b1 = layer(cfg.hidden_dim, input_dim)
    W2, b2 = layer(num_classes, cfg.hidden_dim)
    return ModelParams("mlp", {"W1": W1, "b1": b1, "W2": W2, "b2": b2})


def _forward(model: ModelParams, X: np.ndarray):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.input_dim:
        raise ShapeError(f"input dim {X.shape[1]} but model expects {model.input_dim}")
    p = model.params
    if model.kind == "linear":
        return X @ p["W"].T + p["b"], None
    pre = X @ p["W1"].T + p["b1"]
    hidden = np.maximum(pre, 0.0)
    return hidden @ p["W2"].T + p["b2"], (pre, hidden)


def forward_logits(model: ModelParams, X) -> np.ndarray:
    return _forward(model, X)[0]


def softmax_cross_entropy(logits: np.ndarray, labels):
    labels = np.asarray(labels, dtype=np.int64)
    n, K = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise ParameterError(f"labels must lie in 0..{K - 1}")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    logp = z - logsum[:, None]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def loss_and_grads(model: ModelParams, X, labels):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    logits, cache = _forward(model, X)
    loss, g = softmax_cross_entropy(logits, labels)
    if model.kind == "linear":
        return loss, {"W": g.T @ X, "b": g.sum(axis=0)}
    pre, hidden = cache
    W2 = model.params["W2"]
    g_hidden = (g @ W2) * (pre > 0)
    return loss, {
        "W2": g.T @ hidden, "b2": g.sum(axis=0),
        "W1": g_hidden.T @ X, "b1": g_hidden.sum(axis=0),
    }


def sgd_step(model: ModelParams, grads: dict, lr: float) -> ModelParams:
    if not lr > 0:
        raise ParameterError(f"learning rate must be > 0, got {lr}")
    return ModelParams(model.kind, {k: v - lr * grads[k] for k, v in model.params.items()})


def predict(model: ModelParams, X) -> np.ndarray:
    # argmax returns the first maximum, i.e. ties go to the lowest class index
    return forward_logits(model, X).argmax(axis=1)


def evaluate_accuracy(model: ModelParams, ds_or_X, labels=None) -> float:
    if isinstance(ds_or_X, LabeledDataset):
        X, labels = ds_or_X.as_matrix(), ds_or_X.label_array()
    else:
        X, labels = ds_or_X, np.asarray(labels)
    if len(labels) == 0:
        raise ConfigError("cannot measure accuracy on an empty dataset")
    return float((predict(model, X) == labels).mean())


# -- gradient check ----------------------------------------------------------

def gradient_check(model: ModelParams, X, labels, n_params: int = 100,
                   step: float = 1e-4, seed: int = 0) -> float:
    """Largest relative error between analytic and central-difference gradients
    over ``n_params`` randomly chosen parameter entries."""
    _, grads = loss_and_grads(model, X, labels)
    names = sorted(model.params)
    sizes = np.array([model.params[k].size for k in names])
    total = int(sizes.sum())
    prng = _rng.Prng(seed)
    picks = np.unique(prng.integers(4 * n_params, total))[:n_params]
    if picks.size < min(n_params, total):
        picks = np.arange(min(n_params, total))
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    probe = model.copy()
    for flat in picks:
        i = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, j = names[i], int(flat - offsets[i])
        arr = probe.params[name].reshape(-1)
        orig = arr[j]
        arr[j] = orig + step
        up, _ = loss_and_grads(probe, X, labels)
        arr[j] = orig - step
        down, _ = loss_and_grads(probe, X, labels)
        arr[j] = orig
        numeric = (up - down) / (2 * step)
        analytic = grads[name].reshape(-1)[j]
        denom = max(abs(numeric), abs(analytic))
        if denom > 1e-10:
            worst = max(worst, abs(numeric - analytic) / denom)
    return worst


# -- training loop -----------------------------------------------------------

def _prepare_val(ds: LabeledDataset, aug: AugmentationConfig | None) -> np.ndarray:
    if aug is not None and aug.crop_size is not None and aug.crop_size < ds.shape[0]:
        return np.stack([center_crop(img, aug.crop_size).flat() for img in ds.images])
    return ds.as_matrix()


def train(model_cfg: ModelConfig, train_ds: LabeledDataset, val_ds: LabeledDataset,
          cfg: TrainConfig, progress=None):
    cfg.validate()
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise ConfigError("training and validation sets must be non-empty")
    if train_ds.shape != val_ds.shape or train_ds.num_classes != val_ds.num_classes:
        raise ConfigError(f"incompatible datasets: {train_ds.shape}/{train_ds.num_classes} "
                          f"vs {val_ds.shape}/{val_ds.num_classes}")
    aug = cfg.augmentation
    if aug is not None:
        aug.validate(train_ds.shape)
    K = train_ds.num_classes
    X_clean = train_ds.as_matrix()
    y = train_ds.label_array()
    X_val = _prepare_val(val_ds, aug)
    y_val = val_ds.label_array()
    input_dim = X_val.shape[1]

    model = init_model(model_cfg, input_dim, K, _rng.child(cfg.seed, 0))
    report = EvalReport()
    n = len(y)
    for epoch in range(cfg.epochs):
        stream = _rng.child(cfg.seed, epoch + 1)
        order = np.argsort(stream.units(n), kind="stable") if cfg.shuffle else np.arange(n)
        if aug is not None:
            # per (image, epoch) stream: fresh augmentation every epoch
            aug_seed = stream.next_u64()
            X = np.stack([augmentation_pipeline(img, aug, _rng.child(aug_seed, i)).flat()
                          for i, img in enumerate(train_ds.images)])
        else:
            X = X_clean
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(model, X[idx], y[idx])
            model = sgd_step(model, grads, cfg.learning_rate)
            losses.append(loss * len(idx))
        if not model.is_finite():
            raise ConfigError(f"training diverged at epoch {epoch} (lr={cfg.learning_rate})")
        train_acc = evaluate_accuracy(model, X, y)
        val_acc = evaluate_accuracy(model, X_val, y_val)
        rec = EpochRecord(epoch, train_acc, val_acc, float(sum(losses) / n))
        report.epochs.append(rec)
        if progress:
            progress(rec)
    return model, report
