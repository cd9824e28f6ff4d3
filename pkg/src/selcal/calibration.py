"""Threshold calibration on a labeled calibration set.

For every candidate threshold ``t`` (the distinct calibration uncertainties)
we count the selected records ``m_hat(t) = #{u <= t}`` and the failures among
them ``w_hat(t)``, bound the conditional failure rate from above at confidence
``1 - delta``, and keep the largest ``t`` whose bound is at most ``alpha``.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from . import bounds
from .model import BoundCurve, BoundMethod, CalibrationOutcome, CurveEntry, RiskConfig, ScoredRecord

LARGEST = "largest"
PREFIX = "prefix"
SELECTION_RULES = (LARGEST, PREFIX)


def as_arrays(records: Sequence[ScoredRecord]) -> tuple[np.ndarray, np.ndarray]:
    u = np.fromiter((r.uncertainty for r in records), dtype=float, count=len(records))
    adm = np.fromiter((r.admissible for r in records), dtype=np.int8, count=len(records))
    return u, adm


def ecfr(records: Sequence[ScoredRecord], t: float) -> tuple[int, int, Optional[float]]:
    """``(m_hat, w_hat, r_hat)`` at threshold ``t``; ``r_hat`` is None when nothing is selected."""
    m_hat = 0
    w_hat = 0
    for r in records:
        if r.uncertainty <= t:
            m_hat += 1
            w_hat += 1 - r.admissible
    return m_hat, w_hat, (w_hat / m_hat if m_hat else None)


def grid_counts(u: np.ndarray, adm: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distinct sorted thresholds with cumulative selected and failure counts."""
    if u.size == 0:
        raise ValueError("calibration set is empty")
    order = np.argsort(u, kind="stable")
    us = u[order]
    fails = np.cumsum(1 - adm[order].astype(np.int64))
    # last index of each run of equal values
    last = np.flatnonzero(np.append(us[1:] != us[:-1], True))
    return us[last], last + 1, fails[last]


def build_curve(records: Sequence[ScoredRecord], delta: float,
                method: BoundMethod | str = BoundMethod.CP_EXACT) -> BoundCurve:
    u, adm = as_arrays(records)
    t, m, w = grid_counts(u, adm)
    upper = bounds.upper_bound_many(w, m, delta, method)
    entries = tuple(
        CurveEntry(float(ti), int(mi), int(wi), float(wi / mi), float(ub))
        for ti, mi, wi, ub in zip(t, m, w, upper)
    )
    return BoundCurve(entries)


def select_threshold(curve: BoundCurve, alpha: float, rule: str = LARGEST) -> Optional[float]:
    """Pick the calibrated threshold from a bound curve.

    ``rule="largest"`` returns the largest ``t`` whose bound is at most
    ``alpha``. ``rule="prefix"`` returns the end of the run of admissible
    entries that starts at the smallest ``t`` and stops at the first violation.
    Returns None when no entry qualifies.
    """
    index = _select_index(np.asarray(curve.uppers, dtype=float), alpha, rule)
    return None if index is None else curve[index].t


def _select_index(uppers: np.ndarray, alpha: float, rule: str) -> Optional[int]:
    if rule not in SELECTION_RULES:
        raise ValueError(f"unknown selection rule {rule!r}")
    ok = uppers <= alpha
    if rule == LARGEST:
        hits = np.flatnonzero(ok)
        return int(hits[-1]) if hits.size else None
    bad = np.flatnonzero(~ok)
    if bad.size == 0:
        return uppers.size - 1 if uppers.size else None
    return int(bad[0]) - 1 if bad[0] > 0 else None


def calibrate(records: Sequence[ScoredRecord], config: RiskConfig, rule: str = LARGEST) -> CalibrationOutcome:
    if len(records) == 0:
        raise ValueError("calibration set is empty")
    curve = build_curve(records, config.delta, config.bound_method)
    index = _select_index(np.asarray(curve.uppers, dtype=float), config.alpha, rule)
    if index is None:
        return CalibrationOutcome(None, curve, config, 0, None)
    entry = curve[index]
    return CalibrationOutcome(entry.t, curve, config, entry.m_hat, entry.upper)


# -- fast path for repeated calibration -------------------------------------

_AMBIGUOUS_LOG_GAP = 1e-6


class GridStats:
    """Cumulative calibration counts reused across several ``alpha`` values."""

    def __init__(self, u: np.ndarray, adm: np.ndarray):
        self.t, self.m, self.w = grid_counts(np.asarray(u, dtype=float), np.asarray(adm))
        self._cache: dict[tuple[float, str], np.ndarray] = {}

    def largest_threshold(self, alpha: float, delta: float, method: BoundMethod | str) -> Optional[float]:
        """Same answer as ``calibrate(...).threshold`` with the ``largest`` rule.

        Instead of the full bound curve this scans candidates from the top and
        stops at the first one whose bound is at most ``alpha``. For the exact
        bound the test ``cp_upper <= alpha`` is decided by the sign of
        ``log Pr(Binomial(m, alpha) <= w) - log(delta)``, falling back to the
        same bisection ``build_curve`` uses when that gap is within 1e-6.
        """
        method = BoundMethod.parse(method)
        if method is BoundMethod.HOEFFDING:
            ub = self._hoeffding(delta)
            hits = np.flatnonzero(ub <= alpha)
            return float(self.t[hits[-1]]) if hits.size else None

        # cp_upper >= w/m and >= 1 - delta**(1/m); skip candidates failing either
        m_min = math.log(delta) / math.log1p(-alpha)
        cand = np.flatnonzero((self.w <= alpha * self.m) & (self.w < self.m) & (self.m >= m_min - 1e-9))
        log_delta = math.log(delta)
        hi = cand.size
        chunk = 64
        while hi > 0:
            lo = max(0, hi - chunk)
            idx = cand[lo:hi]
            gaps = bounds.log_cdf_many(self.w[idx], self.m[idx], alpha) - log_delta
            for pos in np.flatnonzero(gaps <= _AMBIGUOUS_LOG_GAP)[::-1]:
                j = idx[pos]
                if gaps[pos] < -_AMBIGUOUS_LOG_GAP:
                    return float(self.t[j])
                if bounds.cp_upper_many(self.w[j:j + 1], self.m[j:j + 1], delta)[0] <= alpha:
                    return float(self.t[j])
            hi = lo
            chunk *= 2
        return None

    def _hoeffding(self, delta: float) -> np.ndarray:
        key = (delta, "hfd")
        if key not in self._cache:
            self._cache[key] = bounds.hoeffding_upper_many(self.w, self.m, delta)
        return self._cache[key]
