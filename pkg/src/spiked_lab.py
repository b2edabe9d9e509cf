#!/usr/bin/env python3
"""
Planted low-rank-plus-noise matrices W = R + S and the asymptotic
predictions for their top singular values and vectors.

R has i.i.d. N(0, g/N) entries; S = sum_i sigma_i u_i v_i^T with
orthonormal u's and v's drawn by orthonormalizing Gaussian matrices.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import ContractError, NumericError, SpecError
from .parallel import make_rng, ordered_map
from .rmt_core import MPParams, d_inverse, theta_bar

logger = logging.getLogger(__name__)

SPIKE_SEPARATION = 1e-6


@dataclass(frozen=True)
class SpikedSpec:
    n_rows: int
    n_cols: int
    planted_sigmas: Tuple[float, ...] = ()
    noise_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_rows < 1 or self.n_cols < 1:
            raise SpecError(f"matrix must be at least 1x1, got {self.n_rows}x{self.n_cols}")
        if not 0.0 < self.noise_scale <= 1.0:
            raise SpecError(f"noise_scale g must lie in (0, 1], got {self.noise_scale}")

        sigmas = tuple(sorted((float(s) for s in self.planted_sigmas), reverse=True))
        if any(s < 0 or not math.isfinite(s) for s in sigmas):
            raise SpecError(f"planted sigmas must be finite and nonnegative, got {sigmas}")
        if len(sigmas) > min(self.n_rows, self.n_cols):
            raise SpecError(f"{len(sigmas)} spikes exceed min(N, M) = {min(self.n_rows, self.n_cols)}")
        for hi, lo in zip(sigmas, sigmas[1:]):
            if hi - lo < SPIKE_SEPARATION:
                raise SpecError(f"planted sigmas {hi} and {lo} are not distinct")
        object.__setattr__(self, "planted_sigmas", sigmas)

    @property
    def rank(self) -> int:
        return len(self.planted_sigmas)


@dataclass
class DeformedSample:
    W: np.ndarray
    R: np.ndarray
    S: np.ndarray
    U: np.ndarray
    V: np.ndarray
    sigmas: np.ndarray
    noise_scale: float


@dataclass
class SpikePrediction:
    """Singular values and squared overlaps, predicted or measured"""

    sigmas: np.ndarray
    sigma_prime: np.ndarray
    overlap_left: np.ndarray
    overlap_right: np.ndarray
    cross_left_max: Optional[float] = None
    cross_right_max: Optional[float] = None


def generate_spiked(spec: SpikedSpec) -> DeformedSample:
    rng = make_rng(spec.seed)
    n, m, r = spec.n_rows, spec.n_cols, spec.rank

    R = rng.standard_normal((n, m)) * math.sqrt(spec.noise_scale / n)
    if r:
        U, _ = np.linalg.qr(rng.standard_normal((n, r)))
        V, _ = np.linalg.qr(rng.standard_normal((m, r)))
    else:
        U, V = np.zeros((n, 0)), np.zeros((m, 0))
    sigmas = np.asarray(spec.planted_sigmas, dtype=np.float64)
    S = (U * sigmas) @ V.T

    return DeformedSample(W=R + S, R=R, S=S, U=U, V=V, sigmas=sigmas, noise_scale=spec.noise_scale)


def predict_singular_value(sigma: float, g: float = 1.0) -> float:
    """Almost-sure limit of a planted singular value for square Gaussian noise of variance g/N"""
    if sigma < 0:
        raise ContractError(f"sigma must be nonnegative, got {sigma}")
    if not 0.0 < g <= 1.0:
        raise ContractError(f"g must lie in (0, 1], got {g}")
    x = sigma / math.sqrt(g)
    return math.sqrt(g) * ((1.0 + x * x) / x if x > 1.0 else 2.0)


def predict_overlap(sigma: float, g: float = 1.0) -> float:
    """Limit of |<u_i, u'_i>|^2 (and of the right-vector overlap) for square Gaussian noise"""
    if sigma < 0:
        raise ContractError(f"sigma must be nonnegative, got {sigma}")
    x = sigma / math.sqrt(g)
    return 1.0 - 1.0 / (x * x) if x > 1.0 else 0.0


def predict_singular_value_general(sigma: float, p: MPParams) -> float:
    """Rectangular prediction through the D-transform: D^{-1}(1/sigma^2) above theta_bar, else the edge"""
    if sigma <= theta_bar(p):
        return math.sqrt(p.lambda_plus)
    return d_inverse(1.0 / (sigma * sigma), p)


def predict_spikes(spec: SpikedSpec) -> SpikePrediction:
    g = spec.noise_scale
    sigmas = np.asarray(spec.planted_sigmas, dtype=np.float64)
    if spec.n_rows == spec.n_cols:
        primes = np.array([predict_singular_value(s, g) for s in sigmas])
    else:
        p = MPParams(g, spec.n_cols / spec.n_rows)
        primes = np.array([predict_singular_value_general(s, p) for s in sigmas])
    overlaps = np.array([predict_overlap(s, g) for s in sigmas])
    return SpikePrediction(sigmas, primes, overlaps, overlaps.copy())


def measure_spikes(sample: DeformedSample) -> SpikePrediction:
    """Top-r singular triplets of W paired with the planted spikes by rank"""
    r = sample.sigmas.size
    if r < 1:
        raise ContractError("measure_spikes needs at least one planted spike")

    try:
        Uw, s, Vt = np.linalg.svd(sample.W, full_matrices=False)
    except np.linalg.LinAlgError as e:
        logger.error(f"SVD failed on spiked sample: {e}")
        raise NumericError(f"SVD did not converge: {e}") from e

    left = (sample.U.T @ Uw[:, :r]) ** 2
    right = (sample.V.T @ Vt[:r].T) ** 2
    off = ~np.eye(r, dtype=bool)
    return SpikePrediction(
        sigmas=sample.sigmas.copy(),
        sigma_prime=s[:r].copy(),
        overlap_left=np.diag(left).copy(),
        overlap_right=np.diag(right).copy(),
        cross_left_max=float(left[off].max()) if r > 1 else 0.0,
        cross_right_max=float(right[off].max()) if r > 1 else 0.0,
    )


def detection_thresholds(g: float = 1.0, c: float = 1.0) -> Dict[str, float]:
    """The planted-spike threshold sqrt(lambda_+)/2 next to theta_bar"""
    p = MPParams(g, c)
    return {
        "assumption_threshold": math.sqrt(p.lambda_plus) / 2.0,
        "theta_bar": theta_bar(p),
    }


def norm_scaling_check(n_grid: Sequence[int], g: float = 1.0, seed: int = 0) -> pd.DataFrame:
    """Frobenius and spectral norms of pure-noise R against their limits N*g and 4g"""
    rows = []
    for n in n_grid:
        R = make_rng(seed, stream=int(n)).standard_normal((n, n)) * math.sqrt(g / n)
        frob_sq = float(np.sum(R * R))
        spectral = float(np.linalg.norm(R, ord=2))
        rows.append({
            "n": int(n),
            "g": g,
            "frobenius_sq_ratio": frob_sq / (n * g),
            "spectral_norm": spectral,
            "spectral_sq_ratio": spectral ** 2 / (4.0 * g),
        })
        logger.debug(f"norm check N={n}: |R|_F^2/(Ng)={rows[-1]['frobenius_sq_ratio']:.4f}, |R|_2={spectral:.4f}")
    return pd.DataFrame(rows)


def shrink_sweep(sample: DeformedSample, gammas: Sequence[float]) -> pd.DataFrame:
    """Top singular values of gamma*R + S along a grid of noise multipliers"""
    r = sample.sigmas.size
    rows = []
    for gamma in gammas:
        s = np.linalg.svd(gamma * sample.R + sample.S, compute_uv=False)[:r]
        for i in range(r):
            rows.append({"gamma": float(gamma), "i": i, "sigma": float(sample.sigmas[i]), "sigma_prime": float(s[i])})
    return pd.DataFrame(rows)


def run_spiked_experiment(spec: SpikedSpec, seeds: Sequence[int], threads: Optional[int] = None) -> pd.DataFrame:
    """Predicted vs measured spikes for every seed, one row per (seed, spike)"""
    prediction = predict_spikes(spec)

    def one_seed(seed):
        measured = measure_spikes(generate_spiked(replace(spec, seed=seed)))
        return [
            {
                "seed": int(seed),
                "i": i,
                "sigma": float(spec.planted_sigmas[i]),
                "sigma_prime_pred": float(prediction.sigma_prime[i]),
                "sigma_prime_emp": float(measured.sigma_prime[i]),
                "overlap_pred": float(prediction.overlap_left[i]),
                "overlap_left_emp": float(measured.overlap_left[i]),
                "overlap_right_emp": float(measured.overlap_right[i]),
                "cross_left_max": measured.cross_left_max,
                "cross_right_max": measured.cross_right_max,
            }
            for i in range(spec.rank)
        ]

    logger.info(f"Spiked experiment {spec.n_rows}x{spec.n_cols}, sigmas={spec.planted_sigmas}, {len(seeds)} seeds")
    rows = [row for seed_rows in ordered_map(one_seed, seeds, threads) for row in seed_rows]
    return pd.DataFrame(rows)
