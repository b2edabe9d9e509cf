#!/usr/bin/env python3
"""
Small deterministic MLP engine.

Layers are affine maps W x + b with W stored as (out, in); a layer may be
split into two factors (left @ right) after low-rank pruning. Activation
(abs or relu) follows every layer except, unless activation_on_final is
set, the last one. Gradients are written out by hand.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp, softmax

from .config import get_config
from .errors import (ConfigError, ContractError, DimensionError, DomainError,
                     NonFiniteGradientError, ParameterError)
from .matrixio import ACTIVATIONS, LabeledDataset, ModelCheckpoint, validate_checkpoint
from .parallel import make_rng

logger = logging.getLogger(__name__)

LR_SCHEDULES = ("none", "step", "cosine")

# hook(model, completed_epochs, state) -> extra log columns or None
EpochHook = Callable[["MLPModel", int, "SGDState"], Optional[Dict[str, float]]]


@dataclass
class DenseLayer:
    weight: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None
    left: Optional[np.ndarray] = None
    right: Optional[np.ndarray] = None

    @property
    def split(self) -> bool:
        return self.left is not None

    @property
    def shape(self) -> Tuple[int, int]:
        if self.split:
            return self.left.shape[0], self.right.shape[1]
        return self.weight.shape

    def effective_weight(self) -> np.ndarray:
        return self.left @ self.right if self.split else self.weight

    def penalized(self) -> List[Tuple[str, np.ndarray]]:
        """Matrices carrying the L1 / L2 / stable-rank penalties (never the bias)"""
        if self.split:
            return [("left", self.left), ("right", self.right)]
        return [("weight", self.weight)]

    def nnz(self) -> int:
        return sum(int(np.count_nonzero(m)) for _, m in self.penalized())

    def param_count(self) -> int:
        return sum(m.size for _, m in self.penalized())

    def apply_mask(self):
        if self.mask is not None and not self.split:
            self.weight[self.mask == 0] = 0.0

    def copy(self) -> "DenseLayer":
        def dup(a):
            return None if a is None else a.copy()
        return DenseLayer(dup(self.weight), dup(self.bias), dup(self.mask), dup(self.left), dup(self.right))


@dataclass
class MLPModel:
    layers: List[DenseLayer]
    activation: str = "relu"
    activation_on_final: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if not self.layers:
            raise ContractError("a model needs at least one layer")
        previous_out = None
        for k, layer in enumerate(self.layers):
            if layer.split:
                if layer.left.shape[1] != layer.right.shape[0]:
                    raise DimensionError(f"layer {k}: factor inner dimensions {layer.left.shape} x {layer.right.shape}")
                if layer.mask is not None:
                    raise ContractError(f"layer {k}: split layers do not carry masks")
            elif layer.weight is None or layer.weight.ndim != 2:
                raise DimensionError(f"layer {k} has no 2-D weight")
            n_out, n_in = layer.shape
            if previous_out is not None and n_in != previous_out:
                raise DimensionError(f"layer {k} expects {n_in} inputs, previous layer gives {previous_out}")
            if layer.bias is not None and layer.bias.shape != (n_out,):
                raise DimensionError(f"layer {k} bias shape {layer.bias.shape}, expected {(n_out,)}")
            if layer.mask is not None:
                if layer.mask.shape != layer.weight.shape:
                    raise DimensionError(f"layer {k} mask shape {layer.mask.shape} != weight {layer.weight.shape}")
                if not np.all((layer.mask == 0) | (layer.mask == 1)):
                    raise ContractError(f"layer {k} mask is not binary")
            previous_out = n_out

    @property
    def topology(self) -> List[int]:
        return [self.layers[0].shape[1]] + [layer.shape[0] for layer in self.layers]

    @property
    def has_masks(self) -> bool:
        return any(layer.mask is not None for layer in self.layers)

    def nnz(self) -> int:
        return sum(layer.nnz() for layer in self.layers)

    def param_count(self) -> int:
        return sum(layer.param_count() for layer in self.layers)

    def copy(self) -> "MLPModel":
        return MLPModel([layer.copy() for layer in self.layers], self.activation, self.activation_on_final)

    def freeze_masks(self):
        """Turn the current zero pattern of every unsplit weight into its mask"""
        for layer in self.layers:
            if not layer.split:
                layer.mask = (layer.weight != 0).astype(np.float64)


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.0
    lr_schedule: str = "none"
    step_factor: float = 0.96
    step_period: int = 4
    warmup_epochs: int = 0
    warmup_divisor: float = 100.0
    mu1: float = 0.0
    mu2: float = 0.0
    stable_rank_coeff: float = 0.0
    stable_rank_period: int = 1
    epochs: int = 10
    batch_size: int = get_config().DEFAULT_BATCH_SIZE
    seed: int = 0
    grad_clip: Optional[float] = None

    def __post_init__(self):
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"lr_schedule must be one of {LR_SCHEDULES}, got {self.lr_schedule!r}")
        for name in ("learning_rate", "momentum", "step_factor", "mu1", "mu2",
                     "stable_rank_coeff", "epochs", "warmup_epochs", "seed"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.step_period < 1 or self.stable_rank_period < 1:
            raise ConfigError("step_period and stable_rank_period must be at least 1")
        if self.warmup_divisor <= 0:
            raise ConfigError(f"warmup_divisor must be positive, got {self.warmup_divisor}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError(f"grad_clip must be positive when set, got {self.grad_clip}")


@dataclass
class LossBreakdown:
    cross_entropy: float
    l1_term: float
    l2_term: float
    stable_rank_term: float
    total: float


@dataclass
class SGDState:
    """Momentum buffers and cached top singular pairs, keyed by (layer, matrix name)"""

    velocity: Dict[Tuple[int, str], np.ndarray] = field(default_factory=dict)
    top_pairs: Dict[Tuple[int, str], Tuple[int, np.ndarray, np.ndarray]] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Construction and conversion
# ---------------------------------------------------------------------------

def init_mlp(topology: Sequence[int], activation: str = "relu", activation_on_final: bool = False,
             bias: bool = True, seed: int = 0, variance_power: float = 1.0) -> MLPModel:
    """Weights i.i.d. N(0, 1 / fan_in**variance_power), zero biases"""
    if len(topology) < 2 or any(w < 1 for w in topology):
        raise ContractError(f"invalid topology {list(topology)}")
    rng = make_rng(seed)
    layers = []
    for n_in, n_out in zip(topology[:-1], topology[1:]):
        weight = rng.standard_normal((n_out, n_in)) / n_in ** (variance_power / 2.0)
        layers.append(DenseLayer(weight=weight, bias=np.zeros(n_out) if bias else None))
    return MLPModel(layers, activation, activation_on_final)


def model_to_checkpoint(model: MLPModel) -> ModelCheckpoint:
    named = []
    masks = {}
    for k, layer in enumerate(model.layers):
        if layer.split:
            named += [(f"layer{k}.left", layer.left), (f"layer{k}.right", layer.right)]
        else:
            named.append((f"layer{k}.weight", layer.weight))
            if layer.mask is not None:
                masks[f"layer{k}.weight"] = layer.mask
        if layer.bias is not None:
            named.append((f"layer{k}.bias", layer.bias.reshape(1, -1)))
    return ModelCheckpoint(
        topology=model.topology,
        activation=model.activation,
        activation_on_final=model.activation_on_final,
        layers=named,
        masks=masks,
        split_flags=[layer.split for layer in model.layers],
    )


def model_from_checkpoint(ckpt: ModelCheckpoint) -> MLPModel:
    validate_checkpoint(ckpt)
    named = ckpt.named()
    layers = []
    for k in range(len(ckpt.topology) - 1):
        bias = named.get(f"layer{k}.bias")
        bias = None if bias is None else bias.reshape(-1).copy()
        if ckpt.split_flags and ckpt.split_flags[k]:
            layers.append(DenseLayer(bias=bias, left=named[f"layer{k}.left"].copy(),
                                     right=named[f"layer{k}.right"].copy()))
        else:
            mask = ckpt.masks.get(f"layer{k}.weight")
            layers.append(DenseLayer(weight=named[f"layer{k}.weight"].copy(), bias=bias,
                                     mask=None if mask is None else mask.copy()))
    return MLPModel(layers, ckpt.activation, ckpt.activation_on_final)


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------

def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    return np.abs(z) if kind == "abs" else np.maximum(z, 0.0)


def _activation_slope(z: np.ndarray, kind: str) -> np.ndarray:
    # kinks get slope 0
    return np.sign(z) if kind == "abs" else (z > 0).astype(np.float64)


def _forward(model: MLPModel, X: np.ndarray, keep: bool = False):
    h = X
    cache = []
    last = len(model.layers) - 1
    for k, layer in enumerate(model.layers):
        if layer.split:
            mid = h @ layer.right.T
            z = mid @ layer.left.T
        else:
            mid = None
            z = h @ layer.weight.T
        if layer.bias is not None:
            z = z + layer.bias
        applied = k < last or model.activation_on_final
        if keep:
            cache.append((h, mid, z, applied))
        h = _activate(z, model.activation) if applied else z
    return h, cache


def forward_batch(model: MLPModel, features: np.ndarray) -> np.ndarray:
    """Logits for every row of features"""
    features = np.asarray(features, dtype=np.float64)
    n_in = model.topology[0]
    if features.ndim != 2 or features.shape[1] != n_in:
        raise DimensionError(f"model expects rows of length {n_in}, got shape {features.shape}")
    logits, _ = _forward(model, features)
    return logits


def forward(model: MLPModel, s) -> Tuple[np.ndarray, np.ndarray]:
    """Logits X(s) and softmax probabilities for one sample"""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 1:
        raise DimensionError(f"expected a feature vector, got shape {s.shape}")
    logits = forward_batch(model, s[None, :])[0]
    return logits, softmax(logits)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    log_probs = logits - logsumexp(logits, axis=1, keepdims=True)
    return float(-np.mean(log_probs[np.arange(labels.size), labels]))


def margins(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Correct-class logit minus the best other logit, per row"""
    rows = np.arange(labels.size)
    correct = logits[rows, labels]
    others = logits.copy()
    others[rows, labels] = -np.inf
    return correct - others.max(axis=1)


def classification_confidence(model: MLPModel, s, label: int) -> float:
    logits, _ = forward(model, s)
    if not 0 <= label < logits.size:
        raise ContractError(f"label {label} outside [0, {logits.size})")
    return float(margins(logits[None, :], np.array([label]))[0])


def accuracy(model: MLPModel, dataset: LabeledDataset) -> float:
    if dataset.n_samples == 0:
        raise DomainError("accuracy of an empty dataset")
    logits = forward_batch(model, dataset.features)
    return float(np.mean(margins(logits, dataset.labels) > 0))


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def stable_rank(W: np.ndarray) -> float:
    """||W||_F^2 / ||W||_2^2 (0 for the zero matrix)"""
    spectral = float(np.linalg.norm(W, ord=2))
    if spectral == 0.0:
        return 0.0
    return float(np.sum(W * W)) / spectral ** 2


def _stable_scheduled(config: TrainConfig, epoch: int) -> bool:
    return config.stable_rank_coeff > 0 and epoch % config.stable_rank_period == 0


def _check_labels(model: MLPModel, labels: np.ndarray):
    n_out = model.topology[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_out):
        raise DimensionError(f"labels must lie in [0, {n_out}) for this model")


def objective(model: MLPModel, features: np.ndarray, labels: np.ndarray,
              config: TrainConfig, epoch: int = 0) -> LossBreakdown:
    """Cross-entropy on the given rows plus the enabled weight penalties"""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise DomainError("loss of an empty dataset")
    _check_labels(model, labels)

    ce = cross_entropy(forward_batch(model, features), labels)
    mats = [m for layer in model.layers for _, m in layer.penalized()]
    l1 = config.mu1 * sum(float(np.abs(m).sum()) for m in mats) if config.mu1 else 0.0
    l2 = config.mu2 * sum(float(np.sum(m * m)) for m in mats) if config.mu2 else 0.0
    sr = config.stable_rank_coeff * sum(stable_rank(m) for m in mats) if _stable_scheduled(config, epoch) else 0.0
    return LossBreakdown(ce, l1, l2, sr, ce + l1 + l2 + sr)


def loss(model: MLPModel, dataset: LabeledDataset, config: TrainConfig, epoch: int = 0) -> LossBreakdown:
    return objective(model, dataset.features, dataset.labels, config, epoch)


# ---------------------------------------------------------------------------
# Gradients and SGD
# ---------------------------------------------------------------------------

def _top_pair(W: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    u, _, vt = np.linalg.svd(W, full_matrices=False)
    return u[:, 0], vt[0]


def _stable_rank_grad(W: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    top = float(u @ W @ v)
    if top == 0.0:
        return np.zeros_like(W)
    frob_sq = float(np.sum(W * W))
    return 2.0 * W / top ** 2 - 2.0 * frob_sq / abs(top) ** 3 * np.sign(top) * np.outer(u, v)


def compute_gradients(model: MLPModel, features: np.ndarray, labels: np.ndarray, config: TrainConfig,
                      epoch: int = 0, state: Optional[SGDState] = None) -> List[Dict[str, np.ndarray]]:
    """Gradient of objective(...) with respect to every parameter, per layer"""
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    if n == 0:
        raise DomainError("gradient of an empty batch")
    _check_labels(model, labels)

    logits, cache = _forward(model, np.asarray(features, dtype=np.float64), keep=True)
    delta = softmax(logits, axis=1)
    delta[np.arange(n), labels] -= 1.0
    delta /= n

    stable = _stable_scheduled(config, epoch)
    grads: List[Dict[str, np.ndarray]] = [dict() for _ in model.layers]
    for k in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[k]
        h, mid, z, applied = cache[k]
        dz = delta * _activation_slope(z, model.activation) if applied else delta

        if layer.bias is not None:
            grads[k]["bias"] = dz.sum(axis=0)
        if layer.split:
            grads[k]["left"] = dz.T @ mid
            dmid = dz @ layer.left
            grads[k]["right"] = dmid.T @ h
            delta = dmid @ layer.right
        else:
            grads[k]["weight"] = dz.T @ h
            delta = dz @ layer.weight

        for name, W in layer.penalized():
            g = grads[k][name]
            if config.mu1:
                g += config.mu1 * np.sign(W)
            if config.mu2:
                g += 2.0 * config.mu2 * W
            if stable:
                cached = state.top_pairs.get((k, name)) if state is not None else None
                if cached is None or cached[0] != epoch or cached[1].shape[0] != W.shape[0] \
                        or cached[2].shape[0] != W.shape[1]:
                    u, v = _top_pair(W)
                    if state is not None:
                        state.top_pairs[(k, name)] = (epoch, u, v)
                else:
                    _, u, v = cached
                g += config.stable_rank_coeff * _stable_rank_grad(W, u, v)
            if name == "weight" and layer.mask is not None:
                g[layer.mask == 0] = 0.0

        for name, g in grads[k].items():
            if not np.all(np.isfinite(g)):
                logger.error(f"Non-finite gradient in layer {k} ({name})")
                raise NonFiniteGradientError(f"non-finite gradient in layer {k} ({name})", layer=k)

    return grads


def lr_at(config: TrainConfig, epoch: int) -> float:
    """Learning rate for a 0-based epoch index"""
    lr = config.learning_rate
    warmup = config.warmup_epochs
    if epoch < warmup:
        start = lr / config.warmup_divisor
        return start + (lr - start) * epoch / warmup

    e = epoch - warmup
    if config.lr_schedule == "step":
        return lr * config.step_factor ** (e // config.step_period)
    if config.lr_schedule == "cosine":
        span = max(1, config.epochs - warmup)
        return lr * 0.5 * (1.0 + math.cos(math.pi * min(e, span) / span))
    return lr


def backward_and_step(model: MLPModel, features: np.ndarray, labels: np.ndarray, config: TrainConfig,
                      epoch: int = 0, state: Optional[SGDState] = None) -> MLPModel:
    """One momentum-SGD step on a batch; updates the model in place and returns it"""
    state = state if state is not None else SGDState()
    grads = compute_gradients(model, features, labels, config, epoch, state)

    if config.grad_clip is not None:
        norm = math.sqrt(sum(float(np.sum(g * g)) for layer_grads in grads for g in layer_grads.values()))
        if norm > config.grad_clip:
            scale = config.grad_clip / norm
            for layer_grads in grads:
                for g in layer_grads.values():
                    g *= scale

    lr = lr_at(config, epoch)
    if lr == 0.0:
        return model

    for k, layer in enumerate(model.layers):
        for name, g in grads[k].items():
            key = (k, name)
            velocity = state.velocity.get(key)
            if velocity is None or velocity.shape != g.shape:
                velocity = np.zeros_like(g)
            velocity = config.momentum * velocity + g
            state.velocity[key] = velocity
            setattr(layer, name, getattr(layer, name) - lr * velocity)
        layer.apply_mask()
    return model


def _log_row(model: MLPModel, dataset: LabeledDataset, config: TrainConfig, epoch: int,
             eval_dataset: Optional[LabeledDataset]) -> Dict[str, float]:
    breakdown = loss(model, dataset, config, epoch)
    row = {
        "epoch": epoch + 1,
        "lr": lr_at(config, epoch),
        "cross_entropy": breakdown.cross_entropy,
        "l1": breakdown.l1_term,
        "l2": breakdown.l2_term,
        "stable_rank": breakdown.stable_rank_term,
        "total": breakdown.total,
        "train_acc": accuracy(model, dataset),
        "test_acc": accuracy(model, eval_dataset) if eval_dataset is not None else float("nan"),
    }
    for k, layer in enumerate(model.layers):
        row[f"nnz_layer{k}"] = layer.nnz()
    return row


def train(model: MLPModel, dataset: LabeledDataset, config: TrainConfig,
          hooks: Sequence[EpochHook] = (), eval_dataset: Optional[LabeledDataset] = None
          ) -> Tuple[MLPModel, pd.DataFrame]:
    """Seeded minibatch training; returns the model and one log row per epoch"""
    if dataset.n_samples == 0:
        raise DomainError("cannot train on an empty dataset")
    _check_labels(model, dataset.labels)

    rng = make_rng(config.seed, stream=1)
    state = SGDState()
    log = []
    for epoch in range(config.epochs):
        order = rng.permutation(dataset.n_samples)
        for start in range(0, dataset.n_samples, config.batch_size):
            batch = order[start:start + config.batch_size]
            backward_and_step(model, dataset.features[batch], dataset.labels[batch], config, epoch, state)

        row = _log_row(model, dataset, config, epoch, eval_dataset)
        for hook in hooks:
            extra = hook(model, epoch + 1, state)
            if extra:
                row.update(extra)
        log.append(row)
        logger.info(
            f"Epoch {epoch + 1}/{config.epochs}: loss={row['total']:.5f} "
            f"ce={row['cross_entropy']:.5f} train_acc={row['train_acc']:.4f}"
        )

    return model, pd.DataFrame(log)


def inject_noise(model: MLPModel, layer_indices: Sequence[int], eps: float, seed: int = 0) -> MLPModel:
    """Copy of the model with i.i.d. N(0, eps) added to the selected weights"""
    if eps < 0:
        raise ParameterError(f"eps must be nonnegative, got {eps}")
    noisy = model.copy()
    if eps == 0.0:
        return noisy

    rng = make_rng(seed, stream=2)
    std = math.sqrt(eps)
    for k in layer_indices:
        layer = noisy.layers[k]
        if layer.split:
            raise ContractError(f"layer {k} is split; noise injection needs a dense weight")
        layer.weight = layer.weight + rng.normal(0.0, std, size=layer.weight.shape)
        layer.apply_mask()
    return noisy
