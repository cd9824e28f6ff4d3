"""Randomized-split evaluation and a synthetic population with known risk.

Randomness is drawn from Philox streams keyed by ``(seed, purpose, index)``,
so trial ``k`` sees the same split no matter how many trials run or in which
order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from .calibration import GridStats, as_arrays
from .model import BoundMethod, RiskConfig, ScoredRecord, TrialReport, TrialResult

_POPULATION = 1
_SPLIT = 2
_GUARANTEE = 3


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based generator for the stream named by ``keys`` under ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


# -- synthetic model ----------------------------------------------------------

LINEAR = "linear"
LOGISTIC = "logistic"
STEP = "step"


@dataclass(frozen=True)
class SyntheticModel:
    """Uncertainty ``u ~ Uniform[0, 1]`` with failure probability ``q(u)``.

    ``linear``: q(u) = u. ``logistic``: q(u) = 1 / (1 + exp(-slope (u - center))).
    ``step``: q(u) = low for u < center, else high.
    """

    kind: str = LINEAR
    slope: float = 10.0
    center: float = 0.5
    low: float = 0.0
    high: float = 1.0

    def __post_init__(self):
        if self.kind not in (LINEAR, LOGISTIC, STEP):
            raise ValueError(f"unknown synthetic model {self.kind!r}")
        if self.kind == LOGISTIC and self.slope < 0:
            raise ValueError("logistic slope must be nonnegative")
        if self.kind == STEP:
            if not (0.0 <= self.low <= 1.0 and 0.0 <= self.high <= 1.0):
                raise ValueError("step levels must lie in [0, 1]")
            if self.low > self.high:
                raise ValueError("step model must be non-decreasing (low <= high)")

    @classmethod
    def linear(cls) -> "SyntheticModel":
        return cls(LINEAR)

    @classmethod
    def logistic(cls, slope: float = 10.0, center: float = 0.5) -> "SyntheticModel":
        return cls(LOGISTIC, slope=slope, center=center)

    @classmethod
    def step(cls, low: float, high: float, center: float = 0.5) -> "SyntheticModel":
        return cls(STEP, center=center, low=low, high=high)

    def failure_prob(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == LINEAR:
            return np.clip(u, 0.0, 1.0)
        if self.kind == LOGISTIC:
            return 0.5 * (1.0 + np.tanh(0.5 * self.slope * (u - self.center)))
        return np.where(u < self.center, self.low, self.high)

    def describe(self) -> dict:
        if self.kind == LINEAR:
            return {"kind": LINEAR}
        if self.kind == LOGISTIC:
            return {"kind": LOGISTIC, "slope": self.slope, "center": self.center}
        return {"kind": STEP, "low": self.low, "high": self.high, "center": self.center}


def gen_population(n: int, model: SyntheticModel, seed: int) -> list[ScoredRecord]:
    u, adm = _draw(n, model, substream(seed, _POPULATION))
    width = len(str(max(n - 1, 0)))
    return [ScoredRecord(f"s{i:0{width}d}", float(ui), int(ai)) for i, (ui, ai) in enumerate(zip(u, adm))]


def _draw(n: int, model: SyntheticModel, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    if n < 1:
        raise ValueError(f"population size must be positive, got {n}")
    u = rng.random(n)
    fail = rng.random(n) < model.failure_prob(u)
    return u, (~fail).astype(np.int8)


def true_tcfr(model: SyntheticModel, t: float) -> float:
    """E[q(u) | u <= t] under the uniform uncertainty law."""
    if t < 0.0:
        raise ValueError(f"threshold {t} lies below the support [0, 1]")
    t = min(t, 1.0)
    if t == 0.0:
        return float(model.failure_prob(0.0))
    if model.kind == LINEAR:
        return t / 2.0
    if model.kind == STEP:
        c = model.center
        if t <= c:
            return model.low
        return (model.low * c + model.high * (t - c)) / t
    area, _ = integrate.quad(lambda x: float(model.failure_prob(x)), 0.0, t,
                             epsabs=1e-12, epsrel=1e-10, limit=200)
    return area / t


# -- selection metrics --------------------------------------------------------


def apply_threshold(test: Sequence[ScoredRecord], t_hat: Optional[float]) -> list[ScoredRecord]:
    if t_hat is None:
        return []
    return [r for r in test if r.uncertainty <= t_hat]


def test_fdr(selected: Sequence[ScoredRecord]) -> Optional[float]:
    if not selected:
        return None
    return sum(1 - r.admissible for r in selected) / len(selected)


test_fdr.__test__ = False  # keep pytest from collecting the name


def power(selected: Sequence[ScoredRecord], test: Sequence[ScoredRecord], alpha: float) -> float:
    """Fraction of admissible test records selected, zeroed if the selection's FDR exceeds ``alpha``."""
    n_adm = sum(r.admissible for r in test)
    if n_adm == 0:
        raise ValueError("power is undefined without admissible test records")
    fdr = test_fdr(selected)
    if fdr is not None and fdr > alpha:
        return 0.0
    return sum(r.admissible for r in selected) / n_adm


def selection_stats(selected: np.ndarray, adm: np.ndarray, alpha: float) -> tuple[Optional[float], float, int]:
    """``(fdr, power, n_selected)`` for a boolean selection mask over test labels."""
    n_adm = int(adm.sum())
    if n_adm == 0:
        raise ValueError("power is undefined without admissible test records")
    n_sel = int(selected.sum())
    if n_sel == 0:
        return None, 0.0, 0
    good = int(adm[selected].sum())
    fdr = (n_sel - good) / n_sel
    return fdr, (0.0 if fdr > alpha else good / n_adm), n_sel


def _threshold_mask(u: np.ndarray, t_hat: Optional[float]) -> np.ndarray:
    if t_hat is None:
        return np.zeros(u.shape, dtype=bool)
    return u <= t_hat


# -- trial harness ------------------------------------------------------------


def split_indices(n: int, split_ratio: float, seed: int, trial: int) -> tuple[np.ndarray, np.ndarray]:
    if n < 2:
        raise ValueError("need at least two records to split")
    n_cal = min(n, math.ceil(split_ratio * n - 1e-9))
    perm = substream(seed, _SPLIT, trial).permutation(n)
    return perm[:n_cal], perm[n_cal:]


def summarize(per_trial: Sequence[TrialResult], alpha: float) -> TrialReport:
    fdrs = np.array([r.test_fdr for r in per_trial if r.test_fdr is not None], dtype=float)
    mean_fdr = float(fdrs.mean()) if fdrs.size else float("nan")
    std_fdr = float(fdrs.std()) if fdrs.size else float("nan")
    mean_power = math.fsum(r.power for r in per_trial) / len(per_trial)
    violations = sum(1 for r in per_trial if r.test_fdr is not None and r.test_fdr > alpha)
    return TrialReport(tuple(per_trial), mean_fdr, std_fdr, mean_power, violations / len(per_trial), alpha)


def run_trials_grid(population: Sequence[ScoredRecord], alphas: Sequence[float], config: RiskConfig) -> list[TrialReport]:
    """One :class:`TrialReport` per ``alpha``; every alpha sees the same splits."""
    u, adm = as_arrays(population)
    per_alpha: list[list[TrialResult]] = [[] for _ in alphas]
    for k in range(config.n_trials):
        cal, test = split_indices(len(population), config.split_ratio, config.seed, k)
        stats = GridStats(u[cal], adm[cal])
        for i, alpha in enumerate(alphas):
            t_hat = stats.largest_threshold(alpha, config.delta, config.bound_method)
            fdr, pw, n_sel = selection_stats(_threshold_mask(u[test], t_hat), adm[test], alpha)
            per_alpha[i].append(TrialResult(k, t_hat, fdr, pw, n_sel))
    return [summarize(rows, alpha) for rows, alpha in zip(per_alpha, alphas)]


def run_trials(population: Sequence[ScoredRecord], config: RiskConfig) -> TrialReport:
    return run_trials_grid(population, [config.alpha], config)[0]


def guarantee_check(model: SyntheticModel, cal_size: int, n_repeats: int, config: RiskConfig) -> tuple[float, float]:
    """Monte Carlo frequency of ``R(t_hat) > alpha`` over fresh calibration sets.

    Returns ``(violation_fraction, mean_true_tcfr)``. A repeat without a
    threshold abstains on everything and never violates; the mean true risk
    is taken over repeats that did produce a threshold, and is 0.0 when none
    did since an empty selection admits no failures.
    """
    if n_repeats < 1:
        raise ValueError("need at least one repeat")
    violations = 0
    risks: list[float] = []
    for r in range(n_repeats):
        u, adm = _draw(cal_size, model, substream(config.seed, _GUARANTEE, r))
        t_hat = GridStats(u, adm).largest_threshold(config.alpha, config.delta, config.bound_method)
        if t_hat is None:
            continue
        risk = true_tcfr(model, t_hat)
        risks.append(risk)
        violations += risk > config.alpha
    mean_risk = math.fsum(risks) / len(risks) if risks else 0.0
    return violations / n_repeats, mean_risk


def guarantee_tolerance(delta: float, n_repeats: int) -> float:
    """Pass line ``delta + 3 sqrt(delta (1 - delta) / n_repeats)`` for :func:`guarantee_check`."""
    return delta + 3.0 * math.sqrt(delta * (1.0 - delta) / n_repeats)


__all__ = [
    "SyntheticModel", "gen_population", "true_tcfr", "apply_threshold", "test_fdr", "power",
    "run_trials", "run_trials_grid", "guarantee_check", "guarantee_tolerance", "split_indices",
    "substream", "BoundMethod",
]
