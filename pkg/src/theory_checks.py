#!/usr/bin/env python3
"""
Runnable checks of the noise-removal results on three-layer nets whose
middle weight is W2 = R + S (random plus low rank):

* perturbation bounds a(N, s), b(N) and the Borell-TIS tail bound
* output perturbation: |X_i(s; S) - X_i(s; R + S)| against a(N, s)
* loss reduction when R is removed, and the gamma sweep W2 = gamma R + S
* noise injection into a trained net
* a(N) / b(N) scaling over a grid of widths
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import get_config
from .errors import ContractError, ParameterError
from .matrixio import LabeledDataset, normalize_dataset
from .nn_core import (DenseLayer, MLPModel, TrainConfig, accuracy, forward_batch, inject_noise, objective,
                      train)
from .parallel import make_rng, ordered_map
from .spiked_lab import DeformedSample, SpikedSpec, generate_spiked

logger = logging.getLogger(__name__)

NORM_CONVENTIONS = ("column", "row")
AN_PROTOCOLS = {
    # weight variance 1/N**power, data max-norm
    "a": (1.0, 0.1),
    "b": (2.0, 10.0),
}


@dataclass
class PerturbationBound:
    a_simple: float
    a_full: float
    b_full: float
    n: int
    w3_norm: float
    w1s_norm: float
    prob_bound: float
    convention: str = "column"


@dataclass
class LossReductionReport:
    records: pd.DataFrame
    pass_fraction: float
    mu: float
    epsilon: float


@dataclass
class GammaSweepReport:
    records: pd.DataFrame
    monotone: pd.Series
    monotone_fraction: float


# ---------------------------------------------------------------------------
# Closed-form bounds
# ---------------------------------------------------------------------------

def induced_l1_norm(W: np.ndarray, convention: str = "column") -> float:
    """
    "column": largest column absolute sum of W as stored (out x in).
    "row": largest row absolute sum, the Lipschitz constant of x -> W x
    from the max-norm to the max-norm.
    """
    if convention not in NORM_CONVENTIONS:
        raise ParameterError(f"convention must be one of {NORM_CONVENTIONS}, got {convention!r}")
    axis = 0 if convention == "column" else 1
    return float(np.abs(W).sum(axis=axis).max())


def bound_terms(n: int, w3_norm: float, w1s_norm: float) -> Tuple[float, float, float]:
    """(a_simple, a_full, b_full) for width n"""
    if n < 2:
        raise ParameterError(f"n must be at least 2, got {n}")
    scale = w3_norm * w1s_norm
    a_simple = scale / n ** (1.5 / 4.0)
    a_full = math.sqrt(2.0 * math.log(n) / n) * scale + a_simple
    n2 = float(n) ** 2
    b_full = math.sqrt(2.0 * math.log(n2) / n2) * scale + scale / n2 ** (1.5 / 4.0)
    return a_simple, a_full, b_full


def perturbation_probability(n: int) -> float:
    """2 exp(-N^(1/4) / 2)"""
    return 2.0 * math.exp(-n ** 0.25 / 2.0)


def _check_planted_architecture(model: MLPModel) -> int:
    if len(model.layers) != 3:
        raise ContractError(f"expected a three-layer net, got {len(model.layers)} layers")
    if any(layer.split for layer in model.layers):
        raise ContractError("perturbation bounds need unsplit layers")
    n_out, n_in = model.layers[1].shape
    if n_out != n_in:
        raise ContractError(f"middle layer must be square, got {n_out}x{n_in}")
    return n_out


def perturbation_bounds(model: MLPModel, dataset: LabeledDataset, convention: str = "column") -> PerturbationBound:
    n = _check_planted_architecture(model)
    if dataset.n_samples == 0:
        raise ContractError("perturbation bounds need at least one sample")
    w3_norm = induced_l1_norm(model.layers[2].weight, convention)
    w1s_norm = float(np.linalg.norm(dataset.features @ model.layers[0].weight.T, axis=1).max())
    a_simple, a_full, b_full = bound_terms(n, w3_norm, w1s_norm)
    return PerturbationBound(a_simple, a_full, b_full, n, w3_norm, w1s_norm, perturbation_probability(n), convention)


def borell_tis_threshold(n: int, variance: float, t: float) -> float:
    """sqrt(2 variance log n) + t"""
    return math.sqrt(2.0 * variance * math.log(n)) + t


def borell_tis_bound(n: int, variance: float, t: float) -> float:
    """Bound on P(max_i |X_i| > borell_tis_threshold) for n i.i.d. N(0, variance)"""
    if t <= 0:
        raise ParameterError(f"t must be positive, got {t}")
    if variance <= 0 or n < 1:
        raise ParameterError(f"need n >= 1 and positive variance, got n={n}, variance={variance}")
    return min(1.0, 2.0 * math.exp(-t * t / (2.0 * variance)))


def borell_tis_monte_carlo(n: int, variance: float, t: float, draws: int, seed: int,
                           chunk: int = 256) -> float:
    """Empirical rate at which max_i |X_i| exceeds the Borell-TIS threshold"""
    threshold = borell_tis_threshold(n, variance, t)
    rng = make_rng(seed)
    std = math.sqrt(variance)
    hits = 0
    done = 0
    while done < draws:
        rows = min(chunk, draws - done)
        block = rng.standard_normal((rows, n)) * std
        hits += int(np.count_nonzero(np.abs(block).max(axis=1) > threshold))
        done += rows
    return hits / draws


# ---------------------------------------------------------------------------
# Planted three-layer nets
# ---------------------------------------------------------------------------

def build_planted_net(spec: SpikedSpec, input_dim: int, n_classes: int, outer_scale: float = 1.0,
                      noise_multiplier: float = 1.0, activation: str = "abs") -> Tuple[MLPModel, DeformedSample]:
    """
    Net s -> W3 act(W2 act(W1 s)) with W2 = noise_multiplier * R + S.
    W1 and W3 have i.i.d. N(0, 1/N) entries, W3 multiplied by outer_scale.
    """
    if spec.n_rows != spec.n_cols:
        raise ContractError(f"planted middle layer must be square, got {spec.n_rows}x{spec.n_cols}")
    n = spec.n_rows
    sample = generate_spiked(spec)
    rng = make_rng(spec.seed, stream=3)
    w1 = rng.standard_normal((n, input_dim)) / math.sqrt(n)
    w3 = outer_scale * rng.standard_normal((n_classes, n)) / math.sqrt(n)
    w2 = noise_multiplier * sample.R + sample.S
    model = MLPModel([DenseLayer(weight=w1), DenseLayer(weight=w2), DenseLayer(weight=w3)], activation)
    return model, sample


def with_middle(model: MLPModel, W2: np.ndarray) -> MLPModel:
    swapped = model.copy()
    swapped.layers[1].weight = np.array(W2, dtype=np.float64)
    return swapped


def _relabel(model: MLPModel, dataset: LabeledDataset) -> LabeledDataset:
    labels = np.argmax(forward_batch(model, dataset.features), axis=1)
    return LabeledDataset(dataset.features, labels, dataset.n_classes)


def output_perturbation_check(spec: SpikedSpec, outer_scale: float, dataset: LabeledDataset,
                              seeds: Sequence[int], convention: str = "row", noise_multiplier: float = 1.0,
                              activation: str = "abs", threads: Optional[int] = None) -> pd.DataFrame:
    """Per seed: largest output deviation between the R+S and S nets and the a(N, s) violation rate"""

    def one_seed(seed):
        model, sample = build_planted_net(replace(spec, seed=seed), dataset.n_features, dataset.n_classes,
                                          outer_scale, noise_multiplier, activation)
        clean = with_middle(model, sample.S)
        deviation = np.abs(forward_batch(model, dataset.features) - forward_batch(clean, dataset.features)).max(axis=1)

        n = spec.n_rows
        w3_norm = induced_l1_norm(model.layers[2].weight, convention)
        w1s = np.linalg.norm(dataset.features @ model.layers[0].weight.T, axis=1)
        bounds = np.array([bound_terms(n, w3_norm, v)[1] for v in w1s])
        return {
            "seed": int(seed),
            "n": n,
            "convention": convention,
            "n_samples": dataset.n_samples,
            "max_deviation": float(deviation.max()),
            "mean_deviation": float(deviation.mean()),
            "max_bound": float(bounds.max()),
            "violation_rate": float(np.mean(deviation > bounds)),
            "prob_bound": perturbation_probability(n),
        }

    logger.info(f"Output perturbation check N={spec.n_rows}, {len(seeds)} seeds, {convention} norm")
    return pd.DataFrame(ordered_map(one_seed, seeds, threads))


def loss_reduction_check(spec: SpikedSpec, dataset: LabeledDataset, mu: float, epsilon: float,
                         seeds: Sequence[int], outer_scale: float = 1.0, activation: str = "abs",
                         threads: Optional[int] = None) -> LossReductionReport:
    """
    Compare the regularized loss of the R+S net with the S net. Labels are
    the S net's predictions, so the S net is the reference classifier.
    """
    if mu < 0 or epsilon < 0:
        raise ParameterError(f"mu and epsilon must be nonnegative, got mu={mu}, epsilon={epsilon}")
    reg = TrainConfig(mu2=mu)

    def one_seed(seed):
        model, sample = build_planted_net(replace(spec, seed=seed), dataset.n_features, dataset.n_classes,
                                          outer_scale, 1.0, activation)
        clean = with_middle(model, sample.S)
        data = _relabel(clean, dataset)
        loss_w = objective(model, data.features, data.labels, reg)
        loss_s = objective(clean, data.features, data.labels, reg)
        removed = mu * float(np.sum(sample.R * sample.R))
        acc_w, acc_s = accuracy(model, data), accuracy(clean, data)
        return {
            "seed": int(seed),
            "loss_w": loss_w.total,
            "loss_s": loss_s.total,
            "mu_r_frob_sq": removed,
            "cross_entropy_w": loss_w.cross_entropy,
            "cross_entropy_s": loss_s.cross_entropy,
            "cross_entropy_delta": loss_s.cross_entropy - loss_w.cross_entropy,
            "loss_delta": loss_s.total - loss_w.total,
            "accuracy_w": acc_w,
            "accuracy_s": acc_s,
            "accuracy_delta": acc_s - acc_w,
            "passed": bool(loss_s.total < (1.0 + epsilon) * (loss_w.total - removed)),
        }

    records = pd.DataFrame(ordered_map(one_seed, seeds, threads))
    pass_fraction = float(records["passed"].mean()) if len(records) else 0.0
    logger.info(f"Loss reduction check: {pass_fraction:.0%} of {len(records)} seeds pass (mu={mu}, eps={epsilon})")
    return LossReductionReport(records, pass_fraction, mu, epsilon)


def gamma_sweep(spec: SpikedSpec, dataset: LabeledDataset, mu: float, grid: Sequence[float],
                seeds: Sequence[int], outer_scale: float = 1.0, activation: str = "abs",
                threads: Optional[int] = None) -> GammaSweepReport:
    """Regularized loss of the net with W2 = gamma R + S along a descending gamma grid"""
    grid = [float(g) for g in grid]
    if not grid or any(not 0.0 <= g <= 1.0 for g in grid):
        raise ParameterError(f"gamma grid must lie in [0, 1], got {grid}")
    if any(b >= a for a, b in zip(grid, grid[1:])):
        raise ParameterError(f"gamma grid must be strictly descending, got {grid}")
    reg = TrainConfig(mu2=mu)

    def one_seed(seed):
        model, sample = build_planted_net(replace(spec, seed=seed), dataset.n_features, dataset.n_classes,
                                          outer_scale, 1.0, activation)
        data = _relabel(with_middle(model, sample.S), dataset)
        r_sq = float(np.sum(sample.R * sample.R))
        cross = float(np.sum(sample.R * sample.S))
        rows = []
        for gamma in grid:
            breakdown = objective(with_middle(model, gamma * sample.R + sample.S), data.features, data.labels, reg)
            rows.append({
                "seed": int(seed),
                "gamma": gamma,
                "total": breakdown.total,
                "cross_entropy": breakdown.cross_entropy,
                "reg_term": breakdown.l2_term,
                "reg_drop": 0.0 if not rows else rows[0]["reg_term"] - breakdown.l2_term,
                "predicted_reg_drop": mu * ((grid[0] ** 2 - gamma ** 2) * r_sq + 2.0 * (grid[0] - gamma) * cross),
                "mu_gamma_r_frob_sq": mu * gamma * r_sq,
            })
        return rows

    records = pd.DataFrame([row for rows in ordered_map(one_seed, seeds, threads) for row in rows])
    monotone = records.groupby("seed")["total"].apply(lambda s: bool(np.all(np.diff(s.to_numpy()) <= 0)))
    fraction = float(monotone.mean()) if len(monotone) else 0.0
    logger.info(f"Gamma sweep: loss monotone along {grid} in {fraction:.0%} of seeds")
    return GammaSweepReport(records, monotone, fraction)


# ---------------------------------------------------------------------------
# Trained-net experiments
# ---------------------------------------------------------------------------

def noise_injection_experiment(model: MLPModel, dataset: LabeledDataset, eps_grid: Sequence[float],
                               seeds: Sequence[int], layers: Optional[Sequence[int]] = None,
                               mu: float = get_config().NOISE_INJECTION_MU,
                               threads: Optional[int] = None) -> pd.DataFrame:
    """Accuracy, cross-entropy and L2-regularized loss after adding N(0, eps) noise to hidden layers"""
    if layers is None:
        layers = range(len(model.layers) - 1)
    layers = list(layers)
    reg = TrainConfig(mu2=mu)
    base = objective(model, dataset.features, dataset.labels, reg)
    base_acc = accuracy(model, dataset)

    def one_point(point):
        eps, seed = point
        noisy = inject_noise(model, layers, eps, seed)
        breakdown = objective(noisy, dataset.features, dataset.labels, reg)
        acc = accuracy(noisy, dataset)
        return {
            "eps": float(eps),
            "seed": int(seed),
            "accuracy": acc,
            "cross_entropy": breakdown.cross_entropy,
            "l2_loss": breakdown.total,
            "delta_accuracy": acc - base_acc,
            "delta_cross_entropy": breakdown.cross_entropy - base.cross_entropy,
            "delta_l2_loss": breakdown.total - base.total,
        }

    points = [(eps, seed) for eps in eps_grid for seed in seeds]
    logger.info(f"Noise injection over {len(eps_grid)} eps values x {len(seeds)} seeds on layers {layers}")
    return pd.DataFrame(ordered_map(one_point, points, threads))


def _scaled_net(topology: List[int], n: int, power: float, seed: int) -> MLPModel:
    rng = make_rng(seed, stream=4)
    layers = [
        DenseLayer(weight=rng.standard_normal((n_out, n_in)) / n ** (power / 2.0), bias=np.zeros(n_out))
        for n_in, n_out in zip(topology[:-1], topology[1:])
    ]
    return MLPModel(layers, "relu")


def an_scaling(n_grid: Sequence[int], protocol: str, dataset: LabeledDataset, train_cfg: TrainConfig,
               seed: int = 0, eval_dataset: Optional[LabeledDataset] = None) -> pd.DataFrame:
    """
    For each width N: a [d, N, N, K] net with weights N(0, 1/N) (protocol a)
    or N(0, 1/N^2) (protocol b), data rescaled to max-norm 0.1 resp. 10,
    trained with train_cfg, then its perturbation bounds.
    """
    if protocol not in AN_PROTOCOLS:
        raise ParameterError(f"protocol must be one of {sorted(AN_PROTOCOLS)}, got {protocol!r}")
    power, max_norm = AN_PROTOCOLS[protocol]
    data = normalize_dataset(dataset, max_norm)
    evaluation = normalize_dataset(eval_dataset, max_norm) if eval_dataset is not None else data

    rows = []
    for n in n_grid:
        model = _scaled_net([data.n_features, n, n, data.n_classes], n, power, seed)
        model, _ = train(model, data, train_cfg)
        bound = perturbation_bounds(model, data, "column")
        rows.append({
            "n": int(n),
            "protocol": protocol,
            "a_simple": bound.a_simple,
            "a_full": bound.a_full,
            "b_full": bound.b_full,
            "w3_norm": bound.w3_norm,
            "w1s_norm": bound.w1s_norm,
            "test_accuracy": accuracy(model, evaluation),
        })
        logger.info(f"a(N) scaling protocol {protocol} N={n}: a_full={bound.a_full:.5g}, b_full={bound.b_full:.5g}")
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

SUITES = ("perturbation", "loss-reduction", "gamma-sweep", "noise-injection", "an-scaling", "borell-tis")


@dataclass
class SuiteConfig:
    n: int = 2000
    planted_sigmas: Tuple[float, ...] = (2.0, 3.0)
    noise_scale: float = 1.0
    input_dim: int = 50
    n_classes: int = 10
    n_samples: int = 100
    n_seeds: int = 10
    outer_scale: float = 1.0
    convention: str = "row"
    activation: str = "abs"
    mu: float = 0.01
    epsilon: float = 0.01
    gamma_grid: Tuple[float, ...] = (1.0, 0.75, 0.5, 0.25, 0.0)
    eps_multipliers: Tuple[float, ...] = (0.0, 1.0, 10.0, 100.0)
    n_grid: Tuple[int, ...] = (500, 1000, 1500, 2000, 3000, 4000, 5000, 7000, 10000, 20000)
    protocol: str = "a"
    train_epochs: int = 10
    train_lr: float = 1e-4
    train_l1: float = 1e-7
    train_l2: float = 1e-7
    bt_n: int = 10000
    bt_draws: int = 100000

    def __post_init__(self):
        if self.convention not in NORM_CONVENTIONS:
            raise ParameterError(f"convention must be one of {NORM_CONVENTIONS}, got {self.convention!r}")
        if self.protocol not in AN_PROTOCOLS:
            raise ParameterError(f"protocol must be one of {sorted(AN_PROTOCOLS)}, got {self.protocol!r}")
        if self.n_seeds < 1 or self.n_samples < 1:
            raise ParameterError("n_seeds and n_samples must be positive")


def planted_inputs(n_samples: int, input_dim: int, n_classes: int, seed: int) -> LabeledDataset:
    """Gaussian inputs of norm about 1; labels are placeholders (the checks relabel)"""
    features = make_rng(seed, stream=6).standard_normal((n_samples, input_dim)) / math.sqrt(input_dim)
    return LabeledDataset(features, np.zeros(n_samples, dtype=np.int64), n_classes)


def run_suite(suite: str, cfg: SuiteConfig, seed: int, dataset: Optional[LabeledDataset] = None,
              model: Optional[MLPModel] = None, eval_dataset: Optional[LabeledDataset] = None,
              threads: Optional[int] = None) -> pd.DataFrame:
    """Run one named check and return its report table"""
    if suite not in SUITES:
        raise ParameterError(f"unknown suite {suite!r}; choose from {SUITES}")
    seeds = list(range(seed, seed + cfg.n_seeds))

    if suite in ("perturbation", "loss-reduction", "gamma-sweep"):
        spec = SpikedSpec(cfg.n, cfg.n, cfg.planted_sigmas, cfg.noise_scale, seed)
        data = dataset if dataset is not None else planted_inputs(cfg.n_samples, cfg.input_dim, cfg.n_classes, seed)
        if suite == "perturbation":
            return output_perturbation_check(spec, cfg.outer_scale, data, seeds, cfg.convention,
                                             activation=cfg.activation, threads=threads)
        if suite == "loss-reduction":
            return loss_reduction_check(spec, data, cfg.mu, cfg.epsilon, seeds, cfg.outer_scale,
                                        cfg.activation, threads).records
        return gamma_sweep(spec, data, cfg.mu, cfg.gamma_grid, seeds, cfg.outer_scale,
                           cfg.activation, threads).records

    if suite == "borell-tis":
        variance = 1.0 / cfg.bt_n
        t = cfg.bt_n ** (-3.0 / 8.0)
        return pd.DataFrame([{
            "n": cfg.bt_n,
            "variance": variance,
            "t": t,
            "bound": borell_tis_bound(cfg.bt_n, variance, t),
            "empirical_rate": borell_tis_monte_carlo(cfg.bt_n, variance, t, cfg.bt_draws, seed),
        }])

    if dataset is None:
        raise ContractError(f"suite {suite!r} needs a dataset")
    if suite == "noise-injection":
        if model is None:
            raise ContractError("suite 'noise-injection' needs a trained model")
        width = model.topology[1]
        eps_grid = [m / width for m in cfg.eps_multipliers]
        return noise_injection_experiment(model, dataset, eps_grid, seeds, mu=cfg.mu, threads=threads)

    train_cfg = TrainConfig(learning_rate=cfg.train_lr, mu1=cfg.train_l1, mu2=cfg.train_l2,
                            epochs=cfg.train_epochs, seed=seed)
    return an_scaling(cfg.n_grid, cfg.protocol, dataset, train_cfg, seed, eval_dataset)
