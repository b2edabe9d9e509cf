#!/usr/bin/env python3
"""
Noisy multi-output regression on a fixed Fourier feature map.

Targets y_k(x) are linear combinations of cos(pi f x) and sin(pi f x)
for f in {0, 0.2, ..., 2.0}; samples carry N(0, noise_scale^2) noise.
The lab compares the unregularized fit, ridge, lasso and spectral
pruning (BEMA edge on the fitted weight matrix) by their error against
the true functions.

The true coefficients are i.i.d. N(0, 1) by default. `truth="sparse"`
keeps only a few random frequencies, and `truth="low_rank"` additionally
gives the coefficient matrix a small rank; LOW_RANK_SETTINGS is the
configuration under which the four estimators separate.

Weight matrices are (n_targets x n_features), predictions are Phi @ W.T.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import DegenerateInputError, IterationLimitError, ParameterError
from .parallel import make_rng, ordered_map
from .rmt_core import bema_fit, compute_esd

logger = logging.getLogger(__name__)

FREQUENCIES = np.round(np.arange(11) * 0.2, 10)
CONDITION_LIMIT = 1e12
RIDGE_GRID = (1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0)
LASSO_GRID = (1.0, 3.0, 10.0, 30.0, 100.0, 300.0)
ESTIMATORS = ("none", "ridge", "lasso", "pruning")
TRUTH_MODELS = ("dense", "sparse", "low_rank")
PRUNING_BASES = ("weights", "whitened")

# coordinate-descent sweeps between exact active-set solves
LASSO_POLISH_EVERY = 20

# every feature frequency is a multiple of 1/10 cycles per unit, so the
# features are orthogonal over any interval of length 10
LOW_RANK_SETTINGS = {
    "truth": "low_rank",
    "truth_rank": 1,
    "n_active_frequencies": 3,
    "domain": (-5.0, 5.0),
    "n_samples": 800,
}


@dataclass(frozen=True)
class FourierFeatureMap:
    frequencies: Tuple[float, ...] = tuple(FREQUENCIES)

    @property
    def dim(self) -> int:
        return 2 * len(self.frequencies)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
        arg = np.pi * x * np.asarray(self.frequencies)[None, :]
        return np.hstack([np.cos(arg), np.sin(arg)])


@dataclass
class RegressionProblem:
    n_targets: int = 50
    n_samples: int = 200
    noise_scale: float = 7.0
    domain: Tuple[float, ...] = (-1.0, 1.0)
    seed: int = 0
    truth: str = "dense"
    n_active_frequencies: int = 3
    truth_rank: int = 1
    pruning_basis: str = "weights"
    eval_points: int = 1001
    holdout_fraction: float = 0.25
    ridge_lambda: Optional[float] = None
    lasso_lambda: Optional[float] = None

    def __post_init__(self):
        dim = FourierFeatureMap().dim
        if self.n_samples <= dim:
            raise ParameterError(f"n_samples must exceed the feature dimension {dim}, got {self.n_samples}")
        if self.n_targets < 1:
            raise ParameterError(f"n_targets must be positive, got {self.n_targets}")
        if self.noise_scale < 0:
            raise ParameterError(f"noise_scale must be nonnegative, got {self.noise_scale}")
        if len(self.domain) != 2 or not self.domain[0] < self.domain[1]:
            raise ParameterError(f"domain must be an interval (lo, hi), got {self.domain}")
        if self.truth not in TRUTH_MODELS:
            raise ParameterError(f"truth must be one of {TRUTH_MODELS}, got {self.truth!r}")
        if self.pruning_basis not in PRUNING_BASES:
            raise ParameterError(f"pruning_basis must be one of {PRUNING_BASES}, got {self.pruning_basis!r}")
        if not 1 <= self.n_active_frequencies <= len(FREQUENCIES) - 1:
            raise ParameterError(f"n_active_frequencies must lie in [1, {len(FREQUENCIES) - 1}]")
        if self.truth == "low_rank" and not 1 <= self.truth_rank <= min(self.n_targets, 2 * self.n_active_frequencies):
            raise ParameterError(
                f"truth_rank must lie in [1, {min(self.n_targets, 2 * self.n_active_frequencies)}], got {self.truth_rank}"
            )
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ParameterError(f"holdout_fraction must lie in (0, 1), got {self.holdout_fraction}")
        if self.eval_points < 2:
            raise ParameterError(f"eval_points must be at least 2, got {self.eval_points}")


@dataclass
class RegressionData:
    x: np.ndarray
    features: np.ndarray
    targets: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.x.size

    def subset(self, idx) -> "RegressionData":
        return RegressionData(self.x[idx], self.features[idx], self.targets[idx])


@dataclass
class RegressionTruth:
    coefficients: np.ndarray
    active_frequencies: Tuple[float, ...] = ()
    domain: Tuple[float, ...] = (-1.0, 1.0)


@dataclass
class SpectralFit:
    """Pruned weights plus the spectrum the BEMA edge was placed on"""

    weights: np.ndarray
    retained_rank: int
    lambda_plus: float = float("nan")
    fit_error: float = float("nan")
    singular_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    basis: str = "weights"


def _true_coefficients(spec: RegressionProblem, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    fmap = FourierFeatureMap()
    n_freq = len(fmap.frequencies)
    if spec.truth == "dense":
        return rng.standard_normal((spec.n_targets, fmap.dim)), np.arange(n_freq)

    # sin(0 x) vanishes, so the zero frequency is left out of sparse supports
    active = np.sort(rng.choice(np.arange(1, n_freq), size=spec.n_active_frequencies, replace=False))
    columns = np.concatenate([active, active + n_freq])
    coefficients = np.zeros((spec.n_targets, fmap.dim))
    if spec.truth == "sparse":
        coefficients[:, columns] = rng.standard_normal((spec.n_targets, columns.size))
    else:
        loadings = rng.standard_normal((spec.n_targets, spec.truth_rank))
        directions = rng.standard_normal((spec.truth_rank, columns.size))
        coefficients[:, columns] = loadings @ directions / np.sqrt(spec.truth_rank)
    return coefficients, active


def generate_problem(spec: RegressionProblem) -> Tuple[RegressionData, RegressionTruth]:
    rng = make_rng(spec.seed)
    fmap = FourierFeatureMap()
    coefficients, active = _true_coefficients(spec, rng)

    x = rng.uniform(spec.domain[0], spec.domain[1], size=spec.n_samples)
    features = fmap(x)
    targets = features @ coefficients.T + spec.noise_scale * rng.standard_normal((spec.n_samples, spec.n_targets))

    truth = RegressionTruth(coefficients, tuple(float(fmap.frequencies[i]) for i in active), tuple(spec.domain))
    return RegressionData(x, features, targets), truth


def _svd(features: np.ndarray):
    U, s, Vt = np.linalg.svd(features, full_matrices=False)
    tol = s[0] * max(features.shape) * np.finfo(float).eps if s.size else 0.0
    keep = s > tol
    return U[:, keep], s[keep], Vt[keep]


def fit_unregularized(data: RegressionData) -> np.ndarray:
    """Minimum-norm least squares"""
    W, *_ = np.linalg.lstsq(data.features, data.targets, rcond=None)
    return W.T


def fit_ridge(data: RegressionData, lam: float) -> np.ndarray:
    """(Phi^T Phi + lam I)^-1 Phi^T Y through the SVD of Phi"""
    if lam < 0:
        raise ParameterError(f"lambda must be nonnegative, got {lam}")
    if lam == 0:
        return fit_unregularized(data)
    U, s, Vt = _svd(data.features)
    condition = (s[0] ** 2 + lam) / (s[-1] ** 2 + lam)
    if condition > CONDITION_LIMIT:
        logger.warning(f"ridge system condition number {condition:.3g} exceeds {CONDITION_LIMIT:.0e}")
    W = Vt.T @ ((s / (s * s + lam))[:, None] * (U.T @ data.targets))
    return W.T


def _soft_threshold(rho: np.ndarray, lam: float) -> np.ndarray:
    return np.sign(rho) * np.maximum(np.abs(rho) - lam, 0.0)


def _lasso_objective(Phi: np.ndarray, y: np.ndarray, w: np.ndarray, lam: float) -> float:
    r = y - Phi @ w
    return 0.5 * float(r @ r) + lam * float(np.abs(w).sum())


def _sign_restricted_target(Phi_A: np.ndarray, y: np.ndarray, theta: np.ndarray, lam: float) -> np.ndarray:
    """
    Minimizer of 1/2 |y - Phi_A w|^2 + lam theta.w. When Phi_A is rank
    deficient that objective is unbounded along its null space, and the
    target is pushed far along the descending null direction instead.
    """
    U, S, Vt = np.linalg.svd(Phi_A, full_matrices=False)
    cutoff = S[0] * max(Phi_A.shape) * np.finfo(float).eps if S.size else 0.0
    r = int(np.count_nonzero(S > cutoff)) if cutoff > 0 else 0
    coef = (U[:, :r].T @ y) / S[:r] - lam * (Vt[:r] @ theta) / S[:r] ** 2
    target = Vt[:r].T @ coef
    if r < theta.size and lam > 0:
        null = Vt[r:]
        drift = -(null.T @ (null @ theta))
        if np.any(drift):
            reach = 1e3 * (np.abs(target).max(initial=0.0) + 1.0) / np.abs(drift).max()
            target = target + reach * drift
    return target


def _line_search(Phi: np.ndarray, y: np.ndarray, w: np.ndarray, A: np.ndarray, target: np.ndarray,
                 lam: float) -> Optional[np.ndarray]:
    """Best point on the segment w -> target among its end and its zero crossings, or None if none improves"""
    w_A = w[A]
    step = target - w_A
    with np.errstate(divide="ignore", invalid="ignore"):
        cross = -w_A / step
    best, best_obj = None, _lasso_objective(Phi, y, w, lam)
    for t in np.unique(np.append(cross[(cross > 0) & (cross < 1)], 1.0)):
        values = w_A + t * step
        values[cross == t] = 0.0
        candidate = w.copy()
        candidate[A] = values
        obj = _lasso_objective(Phi, y, candidate, lam)
        if obj < best_obj:
            best, best_obj = candidate, obj
    return best


def _feature_sign(Phi: np.ndarray, y: np.ndarray, w: np.ndarray, lam: float, tol: float,
                  usable: np.ndarray) -> Optional[np.ndarray]:
    """
    Exact lasso solution for one output by feature-sign search started at w.
    Returns None when the search stops improving before the optimality
    conditions hold; the slack on those conditions covers the rounding of
    Phi^T (Phi w - y).
    """
    w = w.copy()
    eps = np.finfo(float).eps
    abs_phi = np.abs(Phi)
    for _ in range(5 * Phi.shape[1]):
        theta = np.sign(w)
        grad = Phi.T @ (Phi @ w - y)
        slack = tol * max(1.0, lam) + 2 * sum(Phi.shape) * eps * (abs_phi.T @ (abs_phi @ np.abs(w) + np.abs(y)))
        active = theta != 0
        if np.all(np.abs(grad[active] + lam * theta[active]) <= slack[active]):
            excess = np.where(active | ~usable, -np.inf, np.abs(grad) - slack)
            i = int(np.argmax(excess))
            if excess[i] <= lam:
                return w
            theta[i] = -np.sign(grad[i])
            active[i] = True
        A = np.flatnonzero(active)
        w_next = _line_search(Phi, y, w, A, _sign_restricted_target(Phi[:, A], y, theta[A], lam), lam)
        if w_next is None:
            return None
        w = w_next
    return None


def _polish_lasso(Phi: np.ndarray, Y: np.ndarray, W: np.ndarray, lam: float, tol: float,
                  usable: np.ndarray) -> Optional[np.ndarray]:
    out = np.empty_like(W)
    for k in range(Y.shape[1]):
        w = _feature_sign(Phi, Y[:, k], W[:, k], lam, tol, usable)
        if w is None:
            return None
        out[:, k] = w
    return out


def fit_lasso(data: RegressionData, lam: float, tol: float = 1e-8, max_sweeps: int = 10_000,
              init: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Cyclic coordinate descent on 1/2 |Y - Phi W^T|^2 + lam |W|_1, all
    outputs updated together. Stops when the largest coordinate change in
    a sweep falls below tol * max(1, max |W|). Every LASSO_POLISH_EVERY
    sweeps the current support and signs seed an exact active-set solve,
    which ends the descent once it satisfies the optimality conditions.
    """
    if lam < 0:
        raise ParameterError(f"lambda must be nonnegative, got {lam}")
    Phi, Y = data.features, data.targets
    col_sq = np.sum(Phi * Phi, axis=0)
    usable = col_sq > 0
    W = np.zeros((Phi.shape[1], Y.shape[1])) if init is None else np.array(init, dtype=np.float64).T
    residual = Y - Phi @ W

    change = np.inf
    for sweep in range(1, max_sweeps + 1):
        change = 0.0
        for j in np.flatnonzero(usable):
            old = W[j].copy()
            rho = Phi[:, j] @ residual + col_sq[j] * old
            W[j] = _soft_threshold(rho, lam) / col_sq[j]
            delta = W[j] - old
            if np.any(delta):
                residual -= np.outer(Phi[:, j], delta)
                change = max(change, float(np.abs(delta).max()))
        if change < tol * max(1.0, float(np.abs(W).max())):
            logger.debug(f"lasso lambda={lam} converged after {sweep} sweeps")
            return W.T
        if sweep % LASSO_POLISH_EVERY == 0:
            polished = _polish_lasso(Phi, Y, W, lam, tol, usable)
            if polished is not None:
                logger.debug(f"lasso lambda={lam} solved on its active set after {sweep} sweeps")
                return polished.T

    logger.error(f"lasso lambda={lam} did not converge in {max_sweeps} sweeps (last change {change:.3g})")
    raise IterationLimitError(f"coordinate descent did not converge in {max_sweeps} sweeps", residual=change)


def _prune_below_edge(M: np.ndarray, to_weights: Callable[[np.ndarray], np.ndarray], basis: str) -> SpectralFit:
    Um, sm, Vmt = np.linalg.svd(M, full_matrices=False)
    try:
        fit = bema_fit(compute_esd(M))
    except (DegenerateInputError, ParameterError) as e:
        logger.info(f"no noise bulk to prune ({e}); keeping the least-squares fit")
        floor = sm[0] * max(M.shape) * np.finfo(float).eps if sm.size else 0.0
        return SpectralFit(to_weights(M), int(np.count_nonzero(sm > floor)), singular_values=sm, basis=basis)

    keep = sm > np.sqrt(fit.lambda_plus_hat * M.shape[0])
    pruned = (Um[:, keep] * sm[keep]) @ Vmt[keep]
    rank = int(np.count_nonzero(keep))
    logger.debug(f"spectral pruning ({basis}) kept {rank} of {sm.size} singular values "
                 f"(lambda+={fit.lambda_plus_hat:.4g})")
    return SpectralFit(to_weights(pruned), rank, fit.lambda_plus_hat, fit.fit_error, sm, basis)


def spectral_prune_details(data: RegressionData, basis: str = "weights") -> SpectralFit:
    """
    BEMA on the ESD of a fitted matrix, singular values at or below the
    edge sqrt(lambda_+ N) removed, the rest recomposed. basis="weights"
    prunes the least-squares weight matrix itself; basis="whitened" prunes
    the (n_targets x rank) least-squares solution in the orthonormal
    coordinates of the design, where the noise is i.i.d., and maps back.
    """
    if basis not in PRUNING_BASES:
        raise ParameterError(f"basis must be one of {PRUNING_BASES}, got {basis!r}")
    if basis == "weights":
        return _prune_below_edge(fit_unregularized(data), lambda M: M, basis)

    U, s, Vt = _svd(data.features)
    return _prune_below_edge(data.targets.T @ U, lambda Z: (Z / s) @ Vt, basis)


def fit_spectral_pruned(data: RegressionData, basis: str = "weights") -> np.ndarray:
    return spectral_prune_details(data, basis).weights


def tune_lambda(data: RegressionData, fitter: Callable[..., np.ndarray], grid: Sequence[float],
                holdout_fraction: float = 0.25, seed: int = 0) -> Tuple[float, pd.DataFrame]:
    """
    Pick lambda from grid by error on a seeded hold-out split of the samples.
    Grid points whose fit does not converge are recorded with a nan error.
    """
    if not grid:
        raise ParameterError("lambda grid is empty")
    order = make_rng(seed, stream=5).permutation(data.n_samples)
    n_hold = max(1, int(round(holdout_fraction * data.n_samples)))
    held, train = data.subset(order[:n_hold]), data.subset(order[n_hold:])

    rows = []
    previous = None
    # largest lambda first so lasso can warm-start down the path
    for lam in sorted(grid, reverse=True):
        try:
            if fitter is fit_lasso:
                W = fit_lasso(train, lam, init=previous)
                previous = W
            else:
                W = fitter(train, lam)
        except IterationLimitError as e:
            logger.warning(f"lambda={lam} dropped from tuning: {e}")
            rows.append({"lambda": float(lam), "holdout_mse": float("nan")})
            continue
        residual = held.targets - held.features @ W.T
        rows.append({"lambda": float(lam), "holdout_mse": float(np.mean(residual ** 2))})

    table = pd.DataFrame(rows).sort_values("lambda").reset_index(drop=True)
    if table["holdout_mse"].isna().all():
        raise IterationLimitError("no lambda on the grid produced a converged fit", residual=float("nan"))
    best = float(table.loc[table["holdout_mse"].idxmin(), "lambda"])
    logger.debug(f"{getattr(fitter, '__name__', 'fitter')}: hold-out choice lambda={best}")
    return best, table


def evaluation_grid(domain: Sequence[float], points: int) -> np.ndarray:
    return np.linspace(domain[0], domain[1], points)


def function_mse(W: np.ndarray, truth: RegressionTruth, grid: np.ndarray) -> float:
    """Mean squared error against the true functions over grid points and targets"""
    diff = FourierFeatureMap()(grid) @ (W - truth.coefficients).T
    return float(np.mean(diff ** 2))


def cumulative_spectrum(W: np.ndarray) -> pd.DataFrame:
    """Empirical CDF of the singular values of W"""
    s = np.sort(np.linalg.svd(np.asarray(W, dtype=np.float64), compute_uv=False))
    return pd.DataFrame({"index": np.arange(1, s.size + 1), "sigma": s,
                         "cumulative_fraction": np.arange(1, s.size + 1) / s.size})


def fit_estimators(problem: RegressionProblem, data: RegressionData,
                   estimators: Sequence[str] = ESTIMATORS) -> Dict[str, Tuple[np.ndarray, float]]:
    """Weights and the lambda used (nan when none) for each named estimator"""
    fits = {}
    for name in estimators:
        if name == "none":
            fits[name] = (fit_unregularized(data), float("nan"))
        elif name == "ridge":
            lam = problem.ridge_lambda
            if lam is None:
                lam, _ = tune_lambda(data, fit_ridge, RIDGE_GRID, problem.holdout_fraction, problem.seed)
            fits[name] = (fit_ridge(data, lam), lam)
        elif name == "lasso":
            lam = problem.lasso_lambda
            if lam is None:
                lam, _ = tune_lambda(data, fit_lasso, LASSO_GRID, problem.holdout_fraction, problem.seed)
            fits[name] = (fit_lasso(data, lam), lam)
        elif name == "pruning":
            fits[name] = (fit_spectral_pruned(data, problem.pruning_basis), float("nan"))
        else:
            raise ParameterError(f"unknown estimator {name!r}; choose from {ESTIMATORS}")
    return fits


def mse_report(problem: RegressionProblem, estimators: Sequence[str] = ESTIMATORS
               ) -> Tuple[pd.DataFrame, Dict[str, pd.DataFrame]]:
    """MSE table against the true functions plus the cumulative spectrum of each estimator"""
    data, truth = generate_problem(problem)
    grid = evaluation_grid(problem.domain, problem.eval_points)
    fits = fit_estimators(problem, data, estimators)

    rows = []
    spectra = {}
    for name, (W, lam) in fits.items():
        rows.append({
            "seed": problem.seed,
            "estimator": name,
            "mse": function_mse(W, truth, grid),
            "retained_rank": int(np.linalg.matrix_rank(W)),
            "lambda": lam,
        })
        spectra[name] = cumulative_spectrum(W)
    table = pd.DataFrame(rows)
    logger.info("MSE " + ", ".join(f"{r['estimator']}={r['mse']:.4f}" for r in rows))
    return table, spectra


def run_regression_experiment(problem: RegressionProblem, seeds: Sequence[int],
                              threads: Optional[int] = None) -> pd.DataFrame:
    def one_seed(seed):
        return mse_report(replace(problem, seed=seed))[0]

    return pd.concat(ordered_map(one_seed, seeds, threads), ignore_index=True)
