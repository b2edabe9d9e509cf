#!/usr/bin/env python3
"""
Pruning mechanisms driven by the random-matrix metrics of each layer.

* prune_value / prune_matrix: magnitude pruning with a closed threshold
* prune_singular_vectors: sparsify the singular vectors of a layer, harder
  for triplets deep inside the MP bulk
* zeta1 / find_pruning_factor: per-layer pruning targets scaled by the
  spike metric gamma and the fit metric mu, and the factor search that
  reaches them
* run_prune_cycles: the data-free cycle (vectors, metrics, coefficients,
  regularization) repeated n_cycles times
* mp_singular_value_prune: drop bulk singular values during training and
  split a layer into two factors when that saves parameters
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .config import get_config
from .errors import (ContractError, CycleAbortedError, DegenerateInputError, NumericError,
                     ParameterError, RMTPruneError, SearchOverflowError)
from .matrixio import LabeledDataset
from .nn_core import (DenseLayer, LossBreakdown, MLPModel, SGDState, TrainConfig, accuracy, loss,
                      train)
from .parallel import ordered_map
from .rmt_core import LayerMetrics, bema_fit, compute_esd, layer_metrics

logger = logging.getLogger(__name__)

_cfg = get_config()


@dataclass
class PruneConfig:
    r: float = 0.06
    n_cycles: int = 19
    theta_coeff: float = 0.00001125
    sv_floor: float = 1.0 / 750.0
    sv_exponent: float = 30.0
    f_init: float = 1e-6
    f_step: float = 5e-6
    min_mult: float = 3.0
    max_mult: float = 5.0
    reg_epochs_start: int = 15
    reg_epochs_step: int = 5
    reg_epochs_cap: int = 40
    mu1: float = 5e-6
    mu2: float = 2e-6
    reg_lr: float = 0.05e-6
    alpha: float = _cfg.BEMA_ALPHA
    beta: float = _cfg.BEMA_BETA
    tau: float = _cfg.FIT_TAU
    sv_prune: bool = True
    sv_prune_every_other_cycle: bool = True
    strict_sv_algorithm: bool = False
    min_spectral_dim: int = _cfg.MIN_SPECTRAL_DIM
    split_layers: bool = True

    def __post_init__(self):
        if not 0.0 < self.r < 1.0:
            raise ParameterError(f"r must lie in (0, 1), got {self.r}")
        if self.n_cycles < 0:
            raise ParameterError(f"n_cycles must be nonnegative, got {self.n_cycles}")
        for name in ("theta_coeff", "sv_floor", "sv_exponent", "f_step", "min_mult", "max_mult"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("f_init", "mu1", "mu2", "reg_lr", "reg_epochs_start", "reg_epochs_step",
                     "reg_epochs_cap", "min_spectral_dim"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be nonnegative, got {getattr(self, name)}")

    def reg_epochs(self, cycle: int) -> int:
        return min(self.reg_epochs_start + (cycle - 1) * self.reg_epochs_step, self.reg_epochs_cap)

    def sv_step_enabled(self, cycle: int) -> bool:
        if not self.sv_prune:
            return False
        return cycle % 2 == 1 if self.sv_prune_every_other_cycle else True


@dataclass
class LayerCycleRecord:
    layer: int
    exempt: bool = False
    sv_pruned: bool = False
    sv_entries_zeroed: int = 0
    gamma: float = float("nan")
    mu: float = float("nan")
    lambda_plus: float = float("nan")
    zeta1_target: int = 0
    pruned: int = 0
    factor: float = float("nan")
    threshold: float = float("nan")
    nnz_before: int = 0
    nnz_after: int = 0


@dataclass
class CycleReport:
    cycle: int
    layers: List[LayerCycleRecord] = field(default_factory=list)
    sv_step: bool = False
    reg_epochs: int = 0
    nnz: int = 0
    sparsity: float = 0.0
    param_reduction: float = 0.0
    loss: Optional[LossBreakdown] = None
    accuracy: Optional[float] = None

    def to_records(self) -> List[dict]:
        """One flat row per layer, cycle-level fields repeated"""
        shared = {
            "cycle": self.cycle,
            "sv_step": self.sv_step,
            "reg_epochs": self.reg_epochs,
            "model_nnz": self.nnz,
            "sparsity": self.sparsity,
            "param_reduction": self.param_reduction,
            "accuracy": float("nan") if self.accuracy is None else self.accuracy,
        }
        if self.loss is not None:
            shared.update({f"loss_{k}": v for k, v in asdict(self.loss).items()})
        return [{**shared, **asdict(record)} for record in self.layers]


@dataclass
class SingularVectorPruning:
    U: np.ndarray
    s: np.ndarray
    Vt: np.ndarray
    thresholds: np.ndarray
    entries_zeroed: int

    def recompose(self) -> np.ndarray:
        return (self.U * self.s) @ self.Vt


@dataclass
class MPLayerOutcome:
    layer: int
    action: str  # pruned | split | merged | rejected | exempt | skipped
    fit_error: float = float("nan")
    lambda_plus: float = float("nan")
    n_spikes: int = 0
    n_bulk: int = 0
    kept_bulk: int = 0
    retained_rank: int = 0


# ---------------------------------------------------------------------------
# Magnitude pruning
# ---------------------------------------------------------------------------

def prune_value(x: float, theta: float) -> float:
    if theta < 0:
        raise ParameterError(f"theta must be nonnegative, got {theta}")
    return x if abs(x) > theta else 0.0


def prune_matrix(W: np.ndarray, theta: float) -> Tuple[np.ndarray, int]:
    """Zero every entry with |x| <= theta; returns the copy and how many nonzeros were zeroed"""
    if theta < 0:
        raise ParameterError(f"theta must be nonnegative, got {theta}")
    W = np.array(W, dtype=np.float64)
    hit = (np.abs(W) <= theta) & (W != 0)
    W[np.abs(W) <= theta] = 0.0
    return W, int(np.count_nonzero(hit))


# ---------------------------------------------------------------------------
# Singular-vector sparsification
# ---------------------------------------------------------------------------

def sv_theta(cfg: PruneConfig, shape: Tuple[int, int]) -> float:
    return cfg.theta_coeff * cfg.r * shape[0] * shape[1]


def _svd(W: np.ndarray):
    try:
        return np.linalg.svd(W, full_matrices=False)
    except np.linalg.LinAlgError as e:
        logger.error(f"SVD failed on a {W.shape[0]}x{W.shape[1]} layer: {e}")
        raise NumericError(f"SVD did not converge: {e}") from e


def sparsify_singular_vectors(W: np.ndarray, lambda_plus_hat: float, theta: float,
                              sv_floor: float = 1.0 / 750.0, sv_exponent: float = 30.0,
                              strict: bool = False) -> SingularVectorPruning:
    """
    Prune the left and right singular vectors of W entrywise.

    Default: triplet i uses theta * max(sv_floor, (1 - s_i/sqrt(lambda_+))^exp)
    with the power term 0 above the edge. strict=True prunes only bulk
    triplets with theta * (1 - s_i/sqrt(lambda_+))^exp and then runs a
    universal theta * sv_floor pass over every vector.
    """
    if theta < 0:
        raise ParameterError(f"theta must be nonnegative, got {theta}")
    if lambda_plus_hat <= 0:
        raise ParameterError(f"lambda_plus_hat must be positive, got {lambda_plus_hat}")
    W = np.asarray(W, dtype=np.float64)
    U, s, Vt = _svd(W)

    ratio = (s / math.sqrt(W.shape[0])) / math.sqrt(lambda_plus_hat)
    in_bulk = ratio < 1.0
    power = np.where(in_bulk, np.clip(1.0 - ratio, 0.0, None) ** sv_exponent, 0.0)

    U = U.copy()
    Vt = Vt.copy()
    before = np.count_nonzero(U) + np.count_nonzero(Vt)
    if strict:
        bulk_thr = theta * power
        U[:, in_bulk] = np.where(np.abs(U[:, in_bulk]) <= bulk_thr[in_bulk], 0.0, U[:, in_bulk])
        Vt[in_bulk] = np.where(np.abs(Vt[in_bulk]) <= bulk_thr[in_bulk, None], 0.0, Vt[in_bulk])
        universal = theta * sv_floor
        U[np.abs(U) <= universal] = 0.0
        Vt[np.abs(Vt) <= universal] = 0.0
        thresholds = np.maximum(bulk_thr, universal)
    else:
        thresholds = theta * np.maximum(sv_floor, power)
        U[np.abs(U) <= thresholds[None, :]] = 0.0
        Vt[np.abs(Vt) <= thresholds[:, None]] = 0.0

    zeroed = int(before - np.count_nonzero(U) - np.count_nonzero(Vt))
    return SingularVectorPruning(U, s, Vt, thresholds, zeroed)


def prune_singular_vectors(W: np.ndarray, lambda_plus_hat: float, theta: float,
                           sv_floor: float = 1.0 / 750.0, sv_exponent: float = 30.0,
                           strict: bool = False) -> np.ndarray:
    return sparsify_singular_vectors(W, lambda_plus_hat, theta, sv_floor, sv_exponent, strict).recompose()


# ---------------------------------------------------------------------------
# Targeted coefficient pruning
# ---------------------------------------------------------------------------

def _randomness_weight(mu: float, gamma: float, t: int) -> float:
    if t < 1:
        raise ParameterError(f"cycle index t must be >= 1, got {t}")
    if not (0.0 <= mu <= 1.0 and 0.0 <= gamma <= 1.0):
        raise ParameterError(f"mu and gamma must lie in [0, 1], got mu={mu}, gamma={gamma}")
    return ((1.0 - mu) * gamma) ** (1.5 / t)


def zeta1(mu: float, gamma: float, r: float, t: int, nnz: int) -> int:
    """Number of coefficients to prune in a layer during cycle t"""
    return int(math.floor(_randomness_weight(mu, gamma, t) * r * nnz))


def pruning_multiplier(mu: float, gamma: float, t: int, cfg: PruneConfig) -> float:
    return max(cfg.min_mult, cfg.max_mult * _randomness_weight(mu, gamma, t))


def find_pruning_factor(W: np.ndarray, target: int, mu: float, gamma: float, t: int,
                        cfg: PruneConfig) -> Tuple[float, np.ndarray, int]:
    """
    Smallest f on the grid f_init + k * f_step whose threshold f * m zeroes
    at least `target` nonzero entries of W. Returns (f, pruned W, count).
    """
    W = np.asarray(W, dtype=np.float64)
    mult = pruning_multiplier(mu, gamma, t, cfg)
    magnitudes = np.sort(np.abs(W[W != 0]))
    if target > magnitudes.size:
        raise SearchOverflowError(
            f"target {target} exceeds the {magnitudes.size} nonzero entries of the layer",
            achieved=int(magnitudes.size),
        )

    def factor(k):
        return cfg.f_init + k * cfg.f_step

    def zeroed(k):
        return int(np.searchsorted(magnitudes, factor(k) * mult, side="right"))

    k = 0
    if target > 0:
        needed = magnitudes[target - 1] / mult
        k = max(0, math.ceil((needed - cfg.f_init) / cfg.f_step))
        while zeroed(k) < target:
            k += 1
        while k > 0 and zeroed(k - 1) >= target:
            k -= 1

    f = factor(k)
    pruned, count = prune_matrix(W, f * mult)
    logger.debug(f"pruning factor search: target={target} f={f:.3e} m={mult:.3f} zeroed={count}")
    return f, pruned, count


# ---------------------------------------------------------------------------
# Data-free regularization
# ---------------------------------------------------------------------------

def regularize_data_free(model: MLPModel, cfg: PruneConfig, epochs: int) -> MLPModel:
    """Gradient steps on mu1*|W|_1 + mu2*|W|_F^2 alone; biases and masked entries untouched"""
    if epochs < 0:
        raise ParameterError(f"epochs must be nonnegative, got {epochs}")
    for _ in range(epochs):
        for layer in model.layers:
            for name, W in layer.penalized():
                grad = cfg.mu1 * np.sign(W) + 2.0 * cfg.mu2 * W
                setattr(layer, name, W - cfg.reg_lr * grad)
            layer.apply_mask()
    return model


def _regularization_loss(model: MLPModel, cfg: PruneConfig,
                         eval_dataset: Optional[LabeledDataset]) -> LossBreakdown:
    reg = TrainConfig(mu1=cfg.mu1, mu2=cfg.mu2)
    if eval_dataset is not None and eval_dataset.n_samples:
        return loss(model, eval_dataset, reg)
    mats = [m for layer in model.layers for _, m in layer.penalized()]
    l1 = cfg.mu1 * sum(float(np.abs(m).sum()) for m in mats)
    l2 = cfg.mu2 * sum(float(np.sum(m * m)) for m in mats)
    return LossBreakdown(float("nan"), l1, l2, 0.0, l1 + l2)


# ---------------------------------------------------------------------------
# Prune cycles
# ---------------------------------------------------------------------------

def _eligible(layer: DenseLayer, cfg: PruneConfig) -> bool:
    return not layer.split and min(layer.shape) >= cfg.min_spectral_dim


def _prune_layer_in_cycle(k: int, layer: DenseLayer, cfg: PruneConfig, t: int, sv_step: bool) -> LayerCycleRecord:
    record = LayerCycleRecord(layer=k, nnz_before=layer.nnz())
    if not _eligible(layer, cfg):
        record.exempt = True
        record.nnz_after = record.nnz_before
        return record

    W = layer.weight
    metrics: LayerMetrics = layer_metrics(W, cfg.alpha, cfg.beta, cfg.tau)
    if sv_step and not metrics.degenerate:
        sv = sparsify_singular_vectors(W, metrics.lambda_plus_hat, sv_theta(cfg, W.shape),
                                       cfg.sv_floor, cfg.sv_exponent, cfg.strict_sv_algorithm)
        recomposed = sv.recompose()
        # previously pruned coefficients stay pruned
        recomposed[W == 0] = 0.0
        if layer.mask is not None:
            recomposed[layer.mask == 0] = 0.0
        W = recomposed
        record.sv_pruned = True
        record.sv_entries_zeroed = sv.entries_zeroed
        metrics = layer_metrics(W, cfg.alpha, cfg.beta, cfg.tau)

    record.gamma = metrics.gamma
    record.mu = metrics.mu
    record.lambda_plus = metrics.lambda_plus_hat

    nnz = int(np.count_nonzero(W))
    record.zeta1_target = zeta1(metrics.mu, metrics.gamma, cfg.r, t, nnz)
    f, W, pruned = find_pruning_factor(W, record.zeta1_target, metrics.mu, metrics.gamma, t, cfg)
    record.factor = f
    record.threshold = f * pruning_multiplier(metrics.mu, metrics.gamma, t, cfg)
    record.pruned = pruned

    layer.weight = W
    layer.mask = (W != 0).astype(np.float64)
    record.nnz_after = layer.nnz()
    return record


def _run_cycle(model: MLPModel, cfg: PruneConfig, t: int, threads: Optional[int]) -> CycleReport:
    sv_step = cfg.sv_step_enabled(t)
    report = CycleReport(cycle=t, sv_step=sv_step)

    def work(k):
        try:
            return _prune_layer_in_cycle(k, model.layers[k], cfg, t, sv_step), None
        except (RMTPruneError, np.linalg.LinAlgError) as e:
            return None, e

    outcomes = ordered_map(work, range(len(model.layers)), threads)
    for k, (record, error) in enumerate(outcomes):
        if error is not None:
            logger.error(f"Cycle {t}: layer {k} failed: {error}")
            report.layers = [rec for rec, _ in outcomes[:k]]
            raise CycleAbortedError(f"cycle {t} aborted at layer {k}: {error}", reports=[report], cause=error)
        if record.exempt:
            logger.warning(f"Cycle {t}: layer {k} {model.layers[k].shape} exempt from pruning")
        report.layers.append(record)
    return report


def run_prune_cycles(model: MLPModel, cfg: PruneConfig, eval_dataset: Optional[LabeledDataset] = None,
                     threads: Optional[int] = None) -> Tuple[MLPModel, List[CycleReport]]:
    """Run cfg.n_cycles pruning cycles on a copy of the model"""
    model = model.copy()
    initial_nnz = model.nnz()
    reports: List[CycleReport] = []

    for t in range(1, cfg.n_cycles + 1):
        try:
            report = _run_cycle(model, cfg, t, threads)
        except CycleAbortedError as e:
            e.reports = reports + e.reports
            raise

        report.reg_epochs = cfg.reg_epochs(t)
        regularize_data_free(model, cfg, report.reg_epochs)

        report.nnz = model.nnz()
        report.sparsity = 1.0 - report.nnz / model.param_count()
        report.param_reduction = 1.0 - report.nnz / initial_nnz if initial_nnz else 0.0
        report.loss = _regularization_loss(model, cfg, eval_dataset)
        if eval_dataset is not None and eval_dataset.n_samples:
            report.accuracy = accuracy(model, eval_dataset)
        reports.append(report)

        acc = f", accuracy={report.accuracy:.4f}" if report.accuracy is not None else ""
        logger.info(
            f"Cycle {t}/{cfg.n_cycles}: pruned {sum(r.pruned for r in report.layers)} coefficients, "
            f"nnz={report.nnz}, reduction={report.param_reduction:.3%}{acc}"
        )

    return model, reports


def cycle_reports_frame(reports: Sequence[CycleReport]) -> pd.DataFrame:
    return pd.DataFrame([row for report in reports for row in report.to_records()])


def mask_frozen_finetune(model: MLPModel, dataset: LabeledDataset, train_cfg: TrainConfig,
                         eval_dataset: Optional[LabeledDataset] = None) -> Tuple[MLPModel, pd.DataFrame]:
    """Train a copy of a pruned model with its zero pattern held fixed"""
    if not model.has_masks:
        raise ContractError("mask-frozen fine-tuning needs a model with masks")
    tuned = model.copy()
    if train_cfg.epochs == 0:
        return tuned, pd.DataFrame()
    logger.info(f"Fine-tuning for {train_cfg.epochs} epochs with frozen masks")
    return train(tuned, dataset, train_cfg, eval_dataset=eval_dataset)


# ---------------------------------------------------------------------------
# MP-based singular-value pruning during training
# ---------------------------------------------------------------------------

def keep_fraction(epoch: int, slope: float = 1.0 / 200.0) -> float:
    """max(0, 1 - slope * epoch)"""
    return max(0.0, 1.0 - slope * epoch)


def _mp_prune_dense(k: int, layer: DenseLayer, keep: float, cfg: PruneConfig) -> MPLayerOutcome:
    W = layer.weight
    n_rows, n_cols = W.shape
    try:
        fit = bema_fit(compute_esd(W), cfg.alpha, cfg.beta, cfg.tau)
    except (DegenerateInputError, ParameterError) as e:
        logger.warning(f"MP prune: layer {k} skipped ({e})")
        return MPLayerOutcome(k, "skipped")

    outcome = MPLayerOutcome(k, "rejected", fit_error=fit.fit_error, lambda_plus=fit.lambda_plus_hat)
    if not fit.accepted:
        logger.info(f"MP prune: layer {k} fit rejected (s={fit.fit_error:.4f} > tau={cfg.tau})")
        return outcome

    U, s, Vt = _svd(W)
    edge = math.sqrt(fit.lambda_plus_hat * n_rows)
    bulk = np.flatnonzero(s < edge)
    n_keep = int(math.floor(keep * bulk.size))
    s_new = s.copy()
    s_new[bulk[n_keep:]] = 0.0

    rank = int(np.count_nonzero(s_new))
    outcome.n_spikes = s.size - bulk.size
    outcome.n_bulk = int(bulk.size)
    outcome.kept_bulk = n_keep
    outcome.retained_rank = rank

    if cfg.split_layers and rank * (n_rows + n_cols) < n_rows * n_cols:
        root = np.sqrt(s_new[:rank])
        layer.left = U[:, :rank] * root
        layer.right = root[:, None] * Vt[:rank]
        layer.weight = None
        layer.mask = None
        outcome.action = "split"
        logger.info(f"MP prune: layer {k} split at rank {rank} ({rank * (n_rows + n_cols)} < {n_rows * n_cols} params)")
    else:
        layer.weight = (U * s_new) @ Vt
        layer.apply_mask()
        outcome.action = "pruned"
    return outcome


def _try_merge(k: int, layer: DenseLayer, keep: float, cfg: PruneConfig) -> bool:
    """Re-merge a split layer when its product fits MP and pruning it densely would need fewer parameters"""
    W = layer.effective_weight()
    try:
        fit = bema_fit(compute_esd(W), cfg.alpha, cfg.beta, cfg.tau)
    except (DegenerateInputError, ParameterError):
        return False
    if not fit.accepted:
        return False

    n_rows, n_cols = W.shape
    s = np.linalg.svd(W, compute_uv=False)
    bulk = int(np.count_nonzero(s < math.sqrt(fit.lambda_plus_hat * n_rows)))
    rank = s.size - bulk + int(math.floor(keep * bulk))
    hypothetical = min(n_rows * n_cols, rank * (n_rows + n_cols))
    if hypothetical >= layer.param_count():
        return False

    layer.weight = W
    layer.left = None
    layer.right = None
    logger.info(f"MP prune: layer {k} merged back ({hypothetical} < {layer.param_count()} params after pruning)")
    return True


def mp_singular_value_prune(model: MLPModel, f_keep: Union[float, Callable[[int], float]], cfg: PruneConfig,
                            epoch: int = 0) -> Tuple[MLPModel, List[MPLayerOutcome]]:
    """
    One pass of MP-based singular-value pruning, in place.

    Split layers are first checked for re-merging; then every unsplit
    eligible layer whose ESD fits MP keeps its spikes and the largest
    f_keep(epoch) fraction of its bulk singular values.
    """
    keep = f_keep(epoch) if callable(f_keep) else float(f_keep)
    if not 0.0 <= keep <= 1.0:
        raise ParameterError(f"keep fraction must lie in [0, 1], got {keep}")

    outcomes = []
    for k, layer in enumerate(model.layers):
        if min(layer.shape) < cfg.min_spectral_dim:
            outcomes.append(MPLayerOutcome(k, "exempt", retained_rank=min(layer.shape)))
            continue

        merged = layer.split and _try_merge(k, layer, keep, cfg)
        if layer.split:
            outcomes.append(MPLayerOutcome(k, "skipped", retained_rank=layer.left.shape[1]))
            continue

        outcome = _mp_prune_dense(k, layer, keep, cfg)
        if merged and outcome.action == "pruned":
            outcome.action = "merged"
        outcomes.append(outcome)

    model.validate()
    return model, outcomes


def _retained_rank(layer: DenseLayer) -> int:
    if layer.split:
        return int(layer.left.shape[1])
    return int(np.linalg.matrix_rank(layer.weight))


def mp_prune_hook(cfg: PruneConfig, every: int, slope: float = 1.0 / 200.0):
    """Training hook running mp_singular_value_prune every `every` epochs"""
    if every < 1:
        raise ParameterError(f"every must be at least 1, got {every}")

    def hook(model: MLPModel, epoch: int, state: SGDState) -> Optional[Dict[str, float]]:
        if epoch % every:
            return None
        keep = keep_fraction(epoch, slope)
        before = [layer.split for layer in model.layers]
        _, outcomes = mp_singular_value_prune(model, keep, cfg, epoch)

        for k, layer in enumerate(model.layers):
            if outcomes[k].action in ("pruned", "split", "merged") or layer.split != before[k]:
                for key in [key for key in state.velocity if key[0] == k]:
                    del state.velocity[key]

        extra = {"keep_fraction": keep}
        for k, layer in enumerate(model.layers):
            extra[f"retained_rank_layer{k}"] = _retained_rank(layer)
            extra[f"split_layer{k}"] = int(layer.split)
        return extra

    return hook


# ---------------------------------------------------------------------------
# Element-wise sparsification
# ---------------------------------------------------------------------------

def sparsify_model(model: MLPModel, xi: float) -> MLPModel:
    """Copy of the model with every weight entry |w| <= xi set to zero"""
    sparse = model.copy()
    for layer in sparse.layers:
        for name, W in layer.penalized():
            setattr(layer, name, prune_matrix(W, xi)[0])
    return sparse


def sparsify_sweep(model: MLPModel, dataset: LabeledDataset, thresholds: Sequence[float]) -> pd.DataFrame:
    """Accuracy and cross-entropy against sparsity along a threshold grid"""
    rows = []
    total = model.param_count()
    for xi in thresholds:
        sparse = sparsify_model(model, xi)
        nnz = sparse.nnz()
        rows.append({
            "threshold": float(xi),
            "nnz": nnz,
            "sparsity": 1.0 - nnz / total,
            "accuracy": accuracy(sparse, dataset),
            "cross_entropy": loss(sparse, dataset, TrainConfig()).cross_entropy,
        })
        logger.debug(f"sparsify xi={xi:.3g}: sparsity={rows[-1]['sparsity']:.3f} acc={rows[-1]['accuracy']:.4f}")
    return pd.DataFrame(rows)
