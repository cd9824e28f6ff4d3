"""Conformal p-values with Benjamini-Hochberg selection, used as a power baseline.

The alignment score of a record is ``-uncertainty``. Each test record gets the
p-value

    p_j = (1 + #{i in C0 : s_i >= s_j}) / (1 + |C0|)

where ``C0`` holds the inadmissible calibration records, and BH at level
``alpha`` decides which test records are kept.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from .calibration import GridStats, as_arrays
from .evaluation import selection_stats, split_indices, summarize
from .model import RiskConfig, ScoredRecord, TrialResult


def conformal_pvalues(cal: Sequence[ScoredRecord], test: Sequence[ScoredRecord]) -> np.ndarray:
    null_u = np.array([r.uncertainty for r in cal if r.admissible == 0], dtype=float)
    test_u = np.array([r.uncertainty for r in test], dtype=float)
    return _pvalues(null_u, test_u)


def _pvalues(null_u: np.ndarray, test_u: np.ndarray) -> np.ndarray:
    # s_i >= s_j  <=>  u_i <= u_j
    null_sorted = np.sort(null_u)
    exceed = np.searchsorted(null_sorted, test_u, side="right")
    return (1.0 + exceed) / (1.0 + null_sorted.size)


def bh_select(p, alpha: float) -> np.ndarray:
    """Indices kept by the Benjamini-Hochberg step-up rule, ascending."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    p = np.asarray(p, dtype=float)
    n = p.size
    if n == 0:
        return np.array([], dtype=np.int64)
    ranked = np.sort(p)
    passing = np.flatnonzero(ranked <= alpha * np.arange(1, n + 1) / n)
    if passing.size == 0:
        return np.array([], dtype=np.int64)
    k_star = passing[-1] + 1
    return np.flatnonzero(p <= k_star * alpha / n)


def ca_trial(cal: Sequence[ScoredRecord], test: Sequence[ScoredRecord], alpha: float) -> tuple[Optional[float], float]:
    """``(test_fdr, power)`` of the BH selection; FDR is None when nothing is selected."""
    null_u = np.array([r.uncertainty for r in cal if r.admissible == 0], dtype=float)
    test_u = np.array([r.uncertainty for r in test], dtype=float)
    test_adm = np.array([r.admissible for r in test], dtype=np.int8)
    fdr, pw, _ = ca_trial_arrays(null_u, test_u, test_adm, alpha)
    return fdr, pw


def ca_trial_arrays(null_u: np.ndarray, test_u: np.ndarray, test_adm: np.ndarray, alpha: float):
    keep = bh_select(_pvalues(null_u, test_u), alpha)
    mask = np.zeros(test_u.size, dtype=bool)
    mask[keep] = True
    return selection_stats(mask, test_adm, alpha)


def run_comparison(population: Sequence[ScoredRecord], alphas: Sequence[float], config: RiskConfig) -> list[dict]:
    """Mean power and FDR of the calibrated threshold and of the BH baseline.

    Both methods see identical calibration/test splits in every trial. FDR
    means are taken over trials with a nonempty selection (None if there were
    none).
    """
    u, adm = as_arrays(population)
    coin: list[list[TrialResult]] = [[] for _ in alphas]
    base: list[list[TrialResult]] = [[] for _ in alphas]
    for k in range(config.n_trials):
        cal, test = split_indices(len(population), config.split_ratio, config.seed, k)
        stats = GridStats(u[cal], adm[cal])
        null_u = u[cal][adm[cal] == 0]
        for i, alpha in enumerate(alphas):
            t_hat = stats.largest_threshold(alpha, config.delta, config.bound_method)
            fdr, pw, n_sel = selection_stats(u[test] <= t_hat if t_hat is not None
                                             else np.zeros(test.size, dtype=bool), adm[test], alpha)
            coin[i].append(TrialResult(k, t_hat, fdr, pw, n_sel))
            fdr, pw, n_sel = ca_trial_arrays(null_u, u[test], adm[test], alpha)
            base[i].append(TrialResult(k, None, fdr, pw, n_sel))
    rows = []
    for alpha, c_rows, b_rows in zip(alphas, coin, base):
        c, b = summarize(c_rows, alpha), summarize(b_rows, alpha)
        rows.append({
            "alpha": alpha,
            "coin_power": c.mean_power,
            "ca_power": b.mean_power,
            "coin_fdr": None if math.isnan(c.mean_fdr) else c.mean_fdr,
            "ca_fdr": None if math.isnan(b.mean_fdr) else b.mean_fdr,
        })
    return rows
