#!/usr/bin/env python3
"""
Marchenko-Pastur spectral analysis of weight matrices.

Conventions: for an N x M matrix W the ESD is the spectrum of
X = (1/N) W^T W restricted to its min(N, M) leading eigenvalues, i.e. the
squared singular values of W divided by N, sorted ascending. The aspect
ratio is c = M/N. For c > 1 the MP law carries an atom of mass 1 - 1/c at 0;
the "bulk" helpers describe the law of the nonzero eigenvalues only, which
is what an ESD of length min(N, M) samples.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import pandas as pd
from scipy import integrate, optimize

from .config import get_config
from .errors import (DataError, DegenerateInputError, DimensionError, DomainError,
                     NumericError, ParameterError)
from .tracy_widom import tw_quantile

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# slack for k/m window arithmetic (0.3 * 10 must give 3, not 3.0000000000000004)
_WINDOW_SLACK = 1e-9


@dataclass(frozen=True)
class MPParams:
    """Marchenko-Pastur law with variance sigma2 and aspect ratio c"""

    sigma2: float
    c: float

    def __post_init__(self):
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise ParameterError(f"sigma2 must be positive, got {self.sigma2}")
        if not (np.isfinite(self.c) and self.c > 0):
            raise ParameterError(f"c must be positive, got {self.c}")

    @property
    def lambda_minus(self) -> float:
        return self.sigma2 * (1.0 - math.sqrt(self.c)) ** 2

    @property
    def lambda_plus(self) -> float:
        return self.sigma2 * (1.0 + math.sqrt(self.c)) ** 2

    @property
    def atom(self) -> float:
        """Mass of the point at zero"""
        return max(0.0, 1.0 - 1.0 / self.c)


@dataclass(frozen=True)
class BemaSettings:
    """Trim fraction, TW confidence and fit-acceptance threshold"""

    alpha: float = get_config().BEMA_ALPHA
    beta: float = get_config().BEMA_BETA
    tau: float = get_config().FIT_TAU

    def __post_init__(self):
        if not 0.0 < self.alpha < 0.5:
            raise ParameterError(f"alpha must lie in (0, 0.5), got {self.alpha}")
        if not 0.0 < self.beta < 1.0:
            raise ParameterError(f"beta must lie in (0, 1), got {self.beta}")
        if not 0.0 <= self.tau <= 1.0:
            raise ParameterError(f"tau must lie in [0, 1], got {self.tau}")


@dataclass(frozen=True)
class ESD:
    """Ascending eigenvalues of (1/N) W^T W, length min(N, M)"""

    eigenvalues: np.ndarray
    n_rows: int
    n_cols: int

    def __post_init__(self):
        eig = np.asarray(self.eigenvalues, dtype=np.float64)
        if eig.ndim != 1 or eig.size != min(self.n_rows, self.n_cols):
            raise DimensionError(
                f"ESD of a {self.n_rows}x{self.n_cols} matrix needs {min(self.n_rows, self.n_cols)} values"
            )
        if eig.size and (eig[0] < 0 or np.any(np.diff(eig) < 0)):
            raise DataError("ESD eigenvalues must be nonnegative and ascending")
        object.__setattr__(self, "eigenvalues", eig)

    @property
    def c(self) -> float:
        return self.n_cols / self.n_rows

    @property
    def m(self) -> int:
        return self.eigenvalues.size

    def scaled(self, factor: float) -> "ESD":
        return ESD(self.eigenvalues * factor, self.n_rows, self.n_cols)


@dataclass
class MPFitResult:
    sigma2_hat: float
    lambda_plus_hat: float
    c: float
    fit_error: float
    accepted: bool
    alpha: float
    beta: float
    tau: float

    @property
    def params(self) -> MPParams:
        return MPParams(self.sigma2_hat, self.c)


@dataclass
class LayerMetrics:
    """Spike metric gamma, MP-fit metric mu and the fitted edge of one layer"""

    gamma: float
    mu: float
    lambda_plus_hat: float
    nnz: int
    degenerate: bool = False
    fit: Optional[MPFitResult] = field(default=None, repr=False)

    def to_record(self, layer) -> dict:
        return {
            "layer": layer,
            "gamma": float(self.gamma),
            "mu": float(self.mu),
            "lambda_plus": float(self.lambda_plus_hat),
            "nnz": int(self.nnz),
            "degenerate": bool(self.degenerate),
        }


def _scalar_or_array(values: np.ndarray, like) -> ArrayLike:
    return float(values) if np.ndim(like) == 0 else values


# ---------------------------------------------------------------------------
# MP law
# ---------------------------------------------------------------------------

def mp_pdf(x: ArrayLike, p: MPParams) -> ArrayLike:
    """Density of the continuous part; zero outside (lambda_-, lambda_+)"""
    xs = np.atleast_1d(np.asarray(x, dtype=np.float64))
    a, b = p.lambda_minus, p.lambda_plus
    out = np.zeros_like(xs)
    inside = (xs > a) & (xs < b)
    xi = xs[inside]
    out[inside] = np.sqrt((b - xi) * (xi - a)) / (2.0 * math.pi * p.sigma2 * p.c * xi)
    return _scalar_or_array(out.reshape(np.shape(x)), x)


def _continuous_mass(xs: np.ndarray, p: MPParams) -> np.ndarray:
    """
    Integral of mp_pdf from lambda_- to x, for x inside the support.

    Substituting x = mid - half*cos(theta) turns the square-root density
    into a smooth integrand with the antiderivative used here.
    """
    a, b = p.lambda_minus, p.lambda_plus
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    theta = np.arccos(np.clip((mid - xs) / half, -1.0, 1.0))
    sin_t, cos_t = np.sin(theta), np.cos(theta)
    edge_term = 2.0 * math.sqrt(a * b) * np.arctan2(math.sqrt(b) * sin_t, math.sqrt(a) * (1.0 + cos_t))
    return (half * sin_t + mid * theta - edge_term) / (2.0 * math.pi * p.sigma2 * p.c)


def mp_cdf(x: ArrayLike, p: MPParams) -> ArrayLike:
    """CDF of the MP law including the atom at 0 for c > 1"""
    xs = np.atleast_1d(np.asarray(x, dtype=np.float64))
    a, b = p.lambda_minus, p.lambda_plus
    out = np.where(xs < 0.0, 0.0, p.atom)
    out = np.where(xs >= b, 1.0, out)
    inside = (xs > a) & (xs < b)
    out[inside] = p.atom + _continuous_mass(xs[inside], p)
    return _scalar_or_array(np.clip(out, 0.0, 1.0).reshape(np.shape(x)), x)


def mp_bulk_cdf(x: ArrayLike, p: MPParams) -> ArrayLike:
    """CDF of the nonzero eigenvalues (the atom removed and renormalized)"""
    if p.atom == 0.0:
        return mp_cdf(x, p)
    xs = np.atleast_1d(np.asarray(x, dtype=np.float64))
    out = (np.atleast_1d(mp_cdf(xs, p)) - p.atom) / (1.0 - p.atom)
    out = np.where(xs <= p.lambda_minus, 0.0, np.clip(out, 0.0, 1.0))
    return _scalar_or_array(out.reshape(np.shape(x)), x)


def _invert_cdf(cdf, qs: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Vectorized bisection for cdf(x) = q on [lo, hi]"""
    lo_arr = np.full_like(qs, lo)
    hi_arr = np.full_like(qs, hi)
    tol = 1e-14 * max(hi, 1.0)
    for _ in range(200):
        if np.all(hi_arr - lo_arr <= tol):
            break
        mid = 0.5 * (lo_arr + hi_arr)
        below = np.atleast_1d(cdf(mid)) < qs
        lo_arr = np.where(below, mid, lo_arr)
        hi_arr = np.where(below, hi_arr, mid)
    return 0.5 * (lo_arr + hi_arr)


def _check_probabilities(q: ArrayLike) -> np.ndarray:
    qs = np.atleast_1d(np.asarray(q, dtype=np.float64))
    if np.any(~np.isfinite(qs)) or np.any(qs < 0.0) or np.any(qs > 1.0):
        raise DomainError(f"quantile levels must lie in [0, 1]")
    return qs


def mp_quantile(q: ArrayLike, p: MPParams) -> ArrayLike:
    """Quantile function of the MP law (0 for levels inside the atom)"""
    qs = _check_probabilities(q)
    out = np.zeros_like(qs)
    cont = qs > p.atom
    if p.atom == 0.0:
        cont = np.ones_like(qs, dtype=bool)
    if np.any(cont):
        out[cont] = _invert_cdf(lambda x: mp_cdf(x, p), qs[cont], p.lambda_minus, p.lambda_plus)
    return _scalar_or_array(out.reshape(np.shape(q)), q)


def mp_bulk_quantile(q: ArrayLike, p: MPParams) -> ArrayLike:
    """Quantile function of the nonzero-eigenvalue law"""
    qs = _check_probabilities(q)
    out = _invert_cdf(lambda x: mp_bulk_cdf(x, p), qs, p.lambda_minus, p.lambda_plus)
    return _scalar_or_array(out.reshape(np.shape(q)), q)


# ---------------------------------------------------------------------------
# ESD and BEMA
# ---------------------------------------------------------------------------

def _as_weight(W) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.size == 0:
        raise DimensionError(f"expected a nonempty 2-D matrix, got shape {W.shape}")
    if not np.all(np.isfinite(W)):
        raise DataError("matrix contains non-finite entries")
    return W


def singular_values(W) -> np.ndarray:
    """Descending singular values"""
    W = _as_weight(W)
    try:
        return np.linalg.svd(W, compute_uv=False)
    except np.linalg.LinAlgError as e:
        logger.error(f"SVD failed on a {W.shape[0]}x{W.shape[1]} matrix: {e}")
        raise NumericError(f"SVD did not converge: {e}") from e


def _esd_from_singular_values(s: np.ndarray, n_rows: int, n_cols: int) -> ESD:
    return ESD(np.sort(s ** 2 / n_rows), n_rows, n_cols)


def compute_esd(W) -> ESD:
    W = _as_weight(W)
    return _esd_from_singular_values(singular_values(W), *W.shape)


def _window(m: int, alpha: float):
    lo = max(1, math.ceil(alpha * m - _WINDOW_SLACK))
    hi = math.floor((1.0 - alpha) * m + _WINDOW_SLACK)
    return lo, hi


def edge_factor(c: float, n_rows: int, beta: float) -> float:
    """lambda_+ / sigma2 including the Tracy-Widom correction"""
    root_c = math.sqrt(c)
    t = tw_quantile(beta)
    return (1.0 + root_c) ** 2 + t * n_rows ** (-2.0 / 3.0) * (1.0 + root_c) * (1.0 + 1.0 / root_c) ** (1.0 / 3.0)


def bema_fit(esd: ESD, alpha: float = get_config().BEMA_ALPHA, beta: float = get_config().BEMA_BETA,
             tau: float = get_config().FIT_TAU) -> MPFitResult:
    """
    Estimate sigma^2 by least squares of the central ESD quantiles against
    unit-variance MP quantiles, then place lambda_+ with a TW correction.
    """
    settings = BemaSettings(alpha, beta, tau)
    m = esd.m
    if m < 10:
        raise ParameterError(f"BEMA needs at least 10 eigenvalues, got {m}")
    if alpha * m < 1:
        raise ParameterError(f"alpha * m = {alpha * m:.3g} < 1; trim window would be empty")

    k_lo, k_hi = _window(m, alpha)
    if k_lo > k_hi:
        raise ParameterError(f"empty trim window [{k_lo}, {k_hi}] for m={m}, alpha={alpha}")

    ks = np.arange(k_lo, k_hi + 1)
    lam = esd.eigenvalues[ks - 1]
    if lam[0] <= 1e-14 * max(esd.eigenvalues[-1], np.finfo(float).tiny):
        raise DegenerateInputError(
            f"spectrum is zero or rank-deficient inside the trim window (lowest windowed value {lam[0]:.3g})"
        )

    q = np.atleast_1d(mp_bulk_quantile(ks / m, MPParams(1.0, esd.c)))
    sigma2_hat = float(np.dot(q, lam) / np.dot(q, q))
    if not sigma2_hat > 0:
        raise DegenerateInputError(f"non-positive variance estimate {sigma2_hat}")

    lambda_plus_hat = sigma2_hat * edge_factor(esd.c, esd.n_rows, beta)
    fit = MPFitResult(
        sigma2_hat=sigma2_hat,
        lambda_plus_hat=lambda_plus_hat,
        c=esd.c,
        fit_error=1.0,
        accepted=False,
        alpha=settings.alpha,
        beta=settings.beta,
        tau=settings.tau,
    )
    fit.fit_error = fit_error(esd, fit, alpha)
    fit.accepted = fit.fit_error <= tau
    logger.debug(
        f"BEMA {esd.n_rows}x{esd.n_cols}: sigma2={sigma2_hat:.6g}, lambda+={lambda_plus_hat:.6g}, "
        f"s={fit.fit_error:.4f} ({'accepted' if fit.accepted else 'rejected'})"
    )
    return fit


def fit_error(esd: ESD, fit: MPFitResult, alpha: float, inverted_ratio: bool = False) -> float:
    """
    Largest gap between the empirical CDF i/m and the fitted MP CDF over the
    central window.

    The ratio can be written two ways. inverted_ratio=True uses c = N/M,
    rows over columns. The default uses the fit's own c = M/N, the ratio
    bema_fit estimated sigma^2 under, so a pure-noise matrix scores near
    zero in either orientation.
    """
    m = esd.m
    i_lo, i_hi = _window(m, alpha)
    if i_lo > i_hi:
        raise ParameterError(f"empty window for m={m}, alpha={alpha}")
    c = esd.n_rows / esd.n_cols if inverted_ratio else fit.c

    i = np.arange(i_lo, i_hi + 1)
    fitted = np.atleast_1d(mp_bulk_cdf(esd.eigenvalues[i - 1], MPParams(fit.sigma2_hat, c)))
    s = float(np.max(np.abs(i / m - fitted)))
    return min(max(s, 0.0), 1.0)


def _spike_fraction(s: np.ndarray, lambda_plus_hat: float, n_rows: int) -> float:
    threshold = math.sqrt(lambda_plus_hat * n_rows)
    return float(np.count_nonzero(s <= threshold)) / s.size


def spike_metric(W, lambda_plus_hat: float) -> float:
    """Fraction of singular values at or below sqrt(lambda_+ * N)"""
    if lambda_plus_hat < 0:
        raise ParameterError(f"lambda_plus_hat must be nonnegative, got {lambda_plus_hat}")
    W = _as_weight(W)
    return _spike_fraction(singular_values(W), lambda_plus_hat, W.shape[0])


def layer_metrics(W, alpha: float = get_config().BEMA_ALPHA, beta: float = get_config().BEMA_BETA,
                  tau: float = get_config().FIT_TAU) -> LayerMetrics:
    W = _as_weight(W)
    n_rows, n_cols = W.shape
    s = singular_values(W)
    nnz = int(np.count_nonzero(W))

    try:
        fit = bema_fit(_esd_from_singular_values(s, n_rows, n_cols), alpha, beta, tau)
    except DegenerateInputError as e:
        logger.warning(f"Degenerate {n_rows}x{n_cols} layer: {e}")
        return LayerMetrics(gamma=1.0, mu=1.0, lambda_plus_hat=0.0, nnz=nnz, degenerate=True)

    gamma = _spike_fraction(s, fit.lambda_plus_hat, n_rows)
    return LayerMetrics(gamma=gamma, mu=fit.fit_error, lambda_plus_hat=fit.lambda_plus_hat, nnz=nnz, fit=fit)


def esd_histogram(esd: ESD, fit: MPFitResult, bins: int = 50) -> pd.DataFrame:
    """Empirical density of the ESD next to the fitted bulk density"""
    upper = 1.05 * max(float(esd.eigenvalues[-1]), fit.lambda_plus_hat)
    edges = np.linspace(0.0, upper, bins + 1)
    density, _ = np.histogram(esd.eigenvalues, bins=edges, density=True)
    centers = 0.5 * (edges[:-1] + edges[1:])
    params = MPParams(fit.sigma2_hat, fit.c)
    fitted = np.atleast_1d(mp_pdf(centers, params)) / (1.0 - params.atom)
    return pd.DataFrame({
        "bin_left": edges[:-1],
        "bin_right": edges[1:],
        "empirical_density": density,
        "mp_density": fitted,
    })


# ---------------------------------------------------------------------------
# D-transform
# ---------------------------------------------------------------------------

def _singular_stieltjes(z: float, p: MPParams) -> float:
    """
    phi(z) = integral of z / (z^2 - lambda) against the MP law.

    Uses x = a + (b - a) sin^2(theta/2), which removes both square-root
    endpoints and keeps the integrand bounded at z = sqrt(lambda_+).
    """
    a, b = p.lambda_minus, p.lambda_plus
    gap = max(z * z - b, 0.0)
    width = b - a

    def integrand(theta):
        s2 = math.sin(0.5 * theta) ** 2
        c2 = math.cos(0.5 * theta) ** 2
        x = a + width * s2
        return 4.0 * s2 * c2 / (x * (gap + width * c2))

    value, _ = integrate.quad(integrand, 0.0, math.pi, epsabs=1e-13, epsrel=1e-11, limit=200)
    continuous = z * width * width / 4.0 * value / (2.0 * math.pi * p.sigma2 * p.c)
    return continuous + p.atom / z


def d_transform(z: float, p: MPParams) -> float:
    edge = math.sqrt(p.lambda_plus)
    if z < edge * (1.0 - 1e-12):
        raise DomainError(f"D-transform needs z >= sqrt(lambda_+) = {edge:.6g}, got {z}")
    phi = _singular_stieltjes(z, p)
    return phi * (p.c * phi + (1.0 - p.c) / z)


def theta_bar(p: MPParams) -> float:
    """Detectability threshold D(sqrt(lambda_+))^(-1/2)"""
    return d_transform(math.sqrt(p.lambda_plus), p) ** -0.5


def d_inverse(y: float, p: MPParams) -> float:
    lo = math.sqrt(p.lambda_plus)
    hi = 10.0 * lo
    d_lo, d_hi = d_transform(lo, p), d_transform(hi, p)
    if not d_hi <= y <= d_lo:
        raise DomainError(f"y={y} outside the range [{d_hi:.6g}, {d_lo:.6g}] of D on (sqrt(lambda_+), 10 sqrt(lambda_+))")
    if y == d_lo:
        return lo
    if y == d_hi:
        return hi
    return optimize.brentq(lambda z: d_transform(z, p) - y, lo, hi, xtol=1e-14, rtol=1e-14, maxiter=200)
