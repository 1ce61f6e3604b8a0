"""
Loss, AdamW and the epoch loop shared by LiuNet and the ROCKET softmax heads.

Both models expose the same small surface: ``prepare`` (sees the first
training batch), ``encode`` (spectra -> model input), ``loss_and_grads``,
``logits`` and a ``params`` dict updated in place by the optimizer.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint, liunet, metrics
from .data import PixelSet, batch_indices
from .hdc import hdc_transform
from .rocket import FEATURE_DIM, FittedTransform, fit, transform

log = logging.getLogger(__name__)

MODELS = ("liunet", "minirocket", "hdc-minirocket")
DEFAULT_LR = {"liunet": 1e-3, "minirocket": 3e-5, "hdc-minirocket": 3e-5}


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 4096
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    # ROCKET bias fitting: None uses the first batch; an integer fits on a seeded subsample of that size
    bias_fit_samples: int | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")
        if self.bias_fit_samples is not None and self.bias_fit_samples < 1:
            raise ValueError("bias_fit_samples must be positive")

    @classmethod
    def for_model(cls, model: str, **overrides) -> "TrainConfig":
        overrides = {k: v for k, v in overrides.items() if v is not None}
        overrides.setdefault("learning_rate", DEFAULT_LR[model])
        return cls(**overrides)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits.

    Accepts a single logit vector with an int label, or a batch (N, c) with
    N labels.
    """
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z = z[None]
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if (labels >= z.shape[1]).any() or (labels < 0).any():
        raise ValueError("label out of range")
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    n = len(z)
    loss = float(np.mean(lse - shifted[np.arange(n), labels]))
    grad = np.exp(shifted - lse[:, None])
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, (grad[0] if single else grad)


# -- optimizer -----------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: dict, grads: dict, state: AdamState, config: TrainConfig):
    """One decoupled-weight-decay Adam update, in place on ``params``."""
    state.step += 1
    b1, b2, lr = config.beta1, config.beta2, config.learning_rate
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if config.weight_decay:
            p *= 1.0 - lr * config.weight_decay
        p -= lr * (m / bc1) / (np.sqrt(v) / np.sqrt(bc2) + config.eps)
    return params, state


# -- models --------------------------------------------------------------------


class LiuNetModel:
    kind = "liunet"

    def __init__(self, length: int, classes: int, seed: int = 0, depth: int | None = None):
        self.net = liunet.init_params(length, classes, seed, depth)
        self.length, self.classes = length, classes
        self.params = self.net.arrays()

    def prepare(self, first_batch):
        pass

    def encode(self, spectra) -> np.ndarray:
        return np.asarray(spectra, dtype=np.float64)

    def _sync(self):
        self.net = liunet.LiuNetParams.from_arrays(self.length, self.classes, self.params)

    def loss_and_grads(self, x, y):
        self._sync()
        logits, caches = liunet.forward(self.net, x)
        loss, dlogits = softmax_cross_entropy(logits, y)
        return loss, liunet.backward(self.net, caches, dlogits).arrays()

    def logits(self, x, chunk: int = 8192) -> np.ndarray:
        self._sync()
        return np.concatenate([liunet.forward(self.net, x[i : i + chunk])[0] for i in range(0, len(x), chunk)])

    def meta(self) -> dict:
        return {"model": self.kind, "length": self.length, "classes": self.classes, "depth": self.net.depth}

    def state_arrays(self) -> dict:
        return dict(self.params)

    @classmethod
    def from_state(cls, meta, arrays):
        model = cls(meta["length"], meta["classes"], depth=meta["depth"])
        model.params = {k: np.array(arrays[k], dtype=np.float64) for k in model.params}
        model._sync()
        return model


class RocketModel:
    """Frozen (HDC-)MiniROCKET transform under a trainable linear softmax head.

    Transformed features are cached as float32; head products are computed
    in float64 over fixed-size row chunks.
    """

    def __init__(self, length: int, classes: int, seed: int = 0, scale: float = 0.0, hdc: bool = False,
                 standardize: bool = False, workers: int = 1):
        self.length, self.classes, self.seed = length, classes, seed
        self.scale = float(scale)
        self.hdc = hdc
        self.standardize = standardize
        self.workers = workers
        self.fitted: FittedTransform | None = None
        self.mean = np.zeros(FEATURE_DIM)
        self.std = np.ones(FEATURE_DIM)
        bound = 1.0 / np.sqrt(FEATURE_DIM)
        rng = np.random.default_rng(seed)
        self.params = {
            "head.weight": rng.uniform(-bound, bound, (FEATURE_DIM, classes)),
            "head.bias": rng.uniform(-bound, bound, classes),
        }

    @property
    def kind(self) -> str:
        return "hdc-minirocket" if self.hdc else "minirocket"

    def prepare(self, first_batch):
        """Fit biases (and optional standardization) on the first training batch."""
        self.fitted = fit(first_batch, seed=self.seed, scale=self.scale)
        if self.standardize:
            f = self._features(first_batch)
            self.mean = f.mean(axis=0)
            self.std = f.std(axis=0) + 1e-8

    def _features(self, spectra) -> np.ndarray:
        if self.fitted is None:
            raise RuntimeError("transform not fitted; call prepare() first")
        if self.hdc:
            return hdc_transform(spectra, self.fitted, self.scale, workers=self.workers)
        return transform(spectra, self.fitted, workers=self.workers)

    def encode(self, spectra, chunk: int = 8192) -> np.ndarray:
        spectra = np.asarray(spectra, dtype=np.float64)
        out = np.empty((len(spectra), FEATURE_DIM), dtype=np.float32)
        for i in range(0, len(spectra), chunk):
            f = self._features(spectra[i : i + chunk])
            if self.standardize:
                f = (f - self.mean) / self.std
            out[i : i + chunk] = f
        return out

    def loss_and_grads(self, feats, y, chunk: int = 1024):
        w, b = self.params["head.weight"], self.params["head.bias"]
        logits = self.logits(feats, chunk)
        loss, dlogits = softmax_cross_entropy(logits, y)
        gw = np.zeros_like(w)
        for i in range(0, len(feats), chunk):
            gw += feats[i : i + chunk].astype(np.float64).T @ dlogits[i : i + chunk]
        return loss, {"head.weight": gw, "head.bias": dlogits.sum(axis=0)}

    def logits(self, feats, chunk: int = 1024) -> np.ndarray:
        w, b = self.params["head.weight"], self.params["head.bias"]
        out = np.empty((len(feats), self.classes))
        for i in range(0, len(feats), chunk):
            out[i : i + chunk] = feats[i : i + chunk].astype(np.float64) @ w + b
        return out

    def meta(self) -> dict:
        return {"model": self.kind, "length": self.length, "classes": self.classes, "seed": self.seed,
                "scale": self.scale, "standardize": self.standardize}

    def state_arrays(self) -> dict:
        out = dict(self.params)
        out["transform"] = np.frombuffer(self.fitted.to_bytes(), dtype=np.uint8)
        if self.standardize:
            out["standardize.mean"] = self.mean
            out["standardize.std"] = self.std
        return out

    @classmethod
    def from_state(cls, meta, arrays):
        model = cls(meta["length"], meta["classes"], meta["seed"], meta["scale"], meta["model"] == "hdc-minirocket",
                    meta.get("standardize", False))
        model.params = {k: np.array(arrays[k], dtype=np.float64) for k in model.params}
        model.fitted = FittedTransform.from_bytes(arrays["transform"].tobytes())
        if model.standardize:
            model.mean = np.array(arrays["standardize.mean"])
            model.std = np.array(arrays["standardize.std"])
        return model


def build_model(kind: str, length: int, classes: int, seed: int = 0, scale: float = 0.0, **kw):
    if kind == "liunet":
        return LiuNetModel(length, classes, seed, kw.get("depth"))
    if kind in ("minirocket", "hdc-minirocket"):
        return RocketModel(length, classes, seed, scale if kind == "hdc-minirocket" else 0.0,
                           hdc=kind == "hdc-minirocket", standardize=kw.get("standardize", False),
                           workers=kw.get("workers", 1))
    raise ValueError(f"unknown model {kind!r}; expected one of {MODELS}")


def save_model(model, path):
    checkpoint.save(path, model.meta(), model.state_arrays())


def load_model(path):
    meta, arrays = checkpoint.load(path)
    cls = LiuNetModel if meta["model"] == "liunet" else RocketModel
    return cls.from_state(meta, arrays)


# -- loop ----------------------------------------------------------------------


def argmax_lowest(logits) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest class index."""
    return np.asarray(logits).argmax(axis=-1)


def predict(model, samples, encoded: bool = False) -> np.ndarray:
    x = samples.spectra if isinstance(samples, PixelSet) else samples
    feats = x if encoded else model.encode(x)
    return argmax_lowest(model.logits(feats))


def evaluate(model, samples: PixelSet, encoded=None) -> np.ndarray:
    """Confusion matrix of ``model`` on ``samples``."""
    feats = model.encode(samples.spectra) if encoded is None else encoded
    return metrics.confusion(argmax_lowest(model.logits(feats)), samples.labels, model.classes)


@dataclass
class TrainResult:
    model: object
    log: list[dict]
    best_epoch: int

    @property
    def best(self) -> dict:
        return self.log[self.best_epoch - 1]


def bias_fit_indices(n: int, config: TrainConfig) -> np.ndarray:
    """Rows used to fit ROCKET biases: the first batch, or a seeded subsample when configured."""
    if config.bias_fit_samples is None:
        return batch_indices(n, config.batch_size, config.seed, 0)[0]
    rng = np.random.default_rng([config.seed, 2])
    return np.sort(rng.permutation(n)[: min(config.bias_fit_samples, n)])


def train(model, train_samples: PixelSet, val_samples: PixelSet, config: TrainConfig) -> TrainResult:
    """Mini-batch training; returns the epoch with the highest validation mIoU.

    Batch order is a pure function of ``(config.seed, epoch)``. ROCKET models
    fit their transform on epoch 1's first batch before the first step
    (or on ``config.bias_fit_samples`` seeded rows when set).
    Ties in validation mIoU keep the earlier epoch.
    """
    if len(train_samples) == 0 or len(val_samples) == 0:
        raise ValueError("training and validation sets must be non-empty")
    model.prepare(train_samples.spectra[bias_fit_indices(len(train_samples), config)])
    x_train = model.encode(train_samples.spectra)
    x_val = model.encode(val_samples.spectra)
    y = train_samples.labels
    state = AdamState()
    history, best_state, best_epoch, best_miou = [], None, 0, -np.inf
    for epoch in range(1, config.epochs + 1):
        total, seen = 0.0, 0
        for idx in batch_indices(len(train_samples), config.batch_size, config.seed, epoch - 1):
            loss, grads = model.loss_and_grads(x_train[idx], y[idx])
            adamw_step(model.params, grads, state, config)
            total += loss * len(idx)
            seen += len(idx)
        cm = evaluate(model, val_samples, x_val)
        row = {"epoch": epoch, "split": "val", "loss": total / seen, **metrics.summary(cm)}
        history.append(row)
        log.info("%s epoch %d loss %.4f val mIoU %.4f", model.kind, epoch, row["loss"], row["mIoU"])
        if row["mIoU"] > best_miou:
            best_miou, best_epoch = row["mIoU"], epoch
            best_state = copy.deepcopy(model.params)
    model.params = best_state
    return TrainResult(model, history, best_epoch)
