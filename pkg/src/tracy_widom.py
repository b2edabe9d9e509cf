#!/usr/bin/env python3
"""
Tracy-Widom (beta = 1) quantiles.

Knots are read from data/tw1_quantiles.csv, which
scripts/generate_tw1_table.py rebuilds from the Hastings-McLeod solution
of Painleve II. Between knots the quantile is interpolated monotonically
(PCHIP) against the normal score Phi^-1(p), on which TW1 is nearly linear.
Past the end knots the end segments are extended linearly in that score.
"""

import logging
from pathlib import Path
from typing import Tuple

import numpy as np
import pandas as pd
from scipy import interpolate, stats

from .errors import DataError, DomainError

logger = logging.getLogger(__name__)

TABLE_PATH = Path(__file__).resolve().parent / "data" / "tw1_quantiles.csv"


def load_tw1_table(path: Path = TABLE_PATH) -> Tuple[np.ndarray, np.ndarray]:
    """Read (probabilities, quantiles) from a tabulated TW1 csv"""
    try:
        frame = pd.read_csv(path, comment="#")
        probabilities = frame["probability"].to_numpy(dtype=float)
        quantiles = frame["quantile"].to_numpy(dtype=float)
    except (OSError, KeyError, ValueError) as e:
        raise DataError(f"{path}: cannot read TW1 table: {e}") from e

    if (
        probabilities.size < 2
        or probabilities[0] <= 0.0
        or probabilities[-1] >= 1.0
        or np.any(np.diff(probabilities) <= 0.0)
        or np.any(np.diff(quantiles) <= 0.0)
    ):
        raise DataError(
            f"{path}: TW1 table needs at least two rows, probabilities in (0, 1) "
            "and both columns strictly increasing"
        )
    logger.debug("Loaded %d TW1 knots from %s", probabilities.size, path)
    return probabilities, quantiles


TW1_PROBABILITIES, TW1_QUANTILES = load_tw1_table()
_SCORES = stats.norm.ppf(TW1_PROBABILITIES)
_INTERPOLANT = interpolate.PchipInterpolator(_SCORES, TW1_QUANTILES, extrapolate=False)
_LOW_SLOPE = (TW1_QUANTILES[1] - TW1_QUANTILES[0]) / (_SCORES[1] - _SCORES[0])
_HIGH_SLOPE = (TW1_QUANTILES[-1] - TW1_QUANTILES[-2]) / (_SCORES[-1] - _SCORES[-2])


def tw1_ppf(p: float) -> float:
    """Quantile of TW1 at probability p"""
    if not 0.0 < p < 1.0:
        raise DomainError(f"probability must lie in (0, 1), got {p}")
    score = float(stats.norm.ppf(p))
    if score < _SCORES[0]:
        return float(TW1_QUANTILES[0] + _LOW_SLOPE * (score - _SCORES[0]))
    if score > _SCORES[-1]:
        return float(TW1_QUANTILES[-1] + _HIGH_SLOPE * (score - _SCORES[-1]))
    return float(_INTERPOLANT(score))


def tw_quantile(beta: float) -> float:
    """The (1 - beta) quantile of TW1, as used by the BEMA edge correction"""
    if not 0.0 < beta < 1.0:
        raise DomainError(f"beta must lie in (0, 1), got {beta}")
    return tw1_ppf(1.0 - beta)
