"""Shared record and configuration types.

Every type here is a frozen dataclass holding tuples rather than lists, so
instances can be shared freely once built. Records round-trip through plain
dicts (``to_dict`` / ``from_dict``) which is what the JSON-lines readers and
writers in :mod:`selcal.io` use.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

PROB_SUM_TOL = 1e-6


class BoundMethod(str, enum.Enum):
    CP_EXACT = "cp"
    HOEFFDING = "hfd"

    @classmethod
    def parse(cls, value: "str | BoundMethod") -> "BoundMethod":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {
            "cp": cls.CP_EXACT,
            "cp_exact": cls.CP_EXACT,
            "clopper-pearson": cls.CP_EXACT,
            "hfd": cls.HOEFFDING,
            "hoeffding": cls.HOEFFDING,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown bound method {value!r}") from None


def _tuple_or_none(values, cast):
    if values is None:
        return None
    return tuple(cast(v) for v in values)


@dataclass(frozen=True)
class EvidenceRecord:
    """Raw model evidence for one question plus its admissibility label."""

    id: str
    admissible: int
    option_probs: Optional[tuple[float, ...]] = None
    sampled_option_ids: Optional[tuple[int, ...]] = None
    cluster_labels: Optional[tuple[int, ...]] = None
    sequence_probs: Optional[tuple[float, ...]] = None
    similarity: Optional[tuple[tuple[float, ...], ...]] = None
    precomputed_uncertainty: Optional[float] = None

    EVIDENCE_FIELDS = (
        "option_probs",
        "sampled_option_ids",
        "cluster_labels",
        "sequence_probs",
        "similarity",
    )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"id": self.id, "admissible": self.admissible}
        for name in self.EVIDENCE_FIELDS:
            value = getattr(self, name)
            if value is None:
                continue
            if name == "similarity":
                out[name] = [list(row) for row in value]
            else:
                out[name] = list(value)
        if self.precomputed_uncertainty is not None:
            out["precomputed_uncertainty"] = self.precomputed_uncertainty
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EvidenceRecord":
        if "id" not in data:
            raise ValueError("record has no 'id'")
        if "admissible" not in data:
            raise ValueError("record has no 'admissible'")
        unknown = set(data) - {"id", "admissible", "precomputed_uncertainty", *cls.EVIDENCE_FIELDS}
        if unknown:
            raise ValueError(f"unknown fields: {sorted(unknown)}")
        sim = data.get("similarity")
        if sim is not None:
            sim = tuple(tuple(float(x) for x in row) for row in sim)
        pre = data.get("precomputed_uncertainty")
        return cls(
            id=str(data["id"]),
            admissible=_as_label(data["admissible"]),
            option_probs=_tuple_or_none(data.get("option_probs"), float),
            sampled_option_ids=_tuple_or_none(data.get("sampled_option_ids"), int),
            cluster_labels=_tuple_or_none(data.get("cluster_labels"), int),
            sequence_probs=_tuple_or_none(data.get("sequence_probs"), float),
            similarity=sim,
            precomputed_uncertainty=None if pre is None else float(pre),
        )


def _as_label(value) -> int:
    if isinstance(value, bool):
        return int(value)
    if value in (0, 1):
        return int(value)
    raise ValueError(f"admissible must be 0 or 1, got {value!r}")


def validate_record(record: EvidenceRecord) -> list[str]:
    """Return one description per violated invariant; empty means valid."""
    problems: list[str] = []
    if record.admissible not in (0, 1):
        problems.append(f"admissible must be 0 or 1, got {record.admissible!r}")

    has_evidence = any(getattr(record, f) is not None for f in EvidenceRecord.EVIDENCE_FIELDS)
    if not has_evidence and record.precomputed_uncertainty is None:
        problems.append("no evidence fields and no precomputed_uncertainty")

    if record.option_probs is not None:
        probs = record.option_probs
        if len(probs) == 0:
            problems.append("option_probs is empty")
        elif any(not math.isfinite(p) or p < 0 for p in probs):
            problems.append("option_probs has negative or non-finite entries")
        else:
            total = math.fsum(probs)
            if abs(total - 1.0) > PROB_SUM_TOL:
                word = "exceeds" if total > 1 else "falls short of"
                problems.append(f"option_probs sum {total:.6g} {word} tolerance")

    if record.sampled_option_ids is not None:
        if len(record.sampled_option_ids) == 0:
            problems.append("sampled_option_ids is empty")
        elif any(i < 0 for i in record.sampled_option_ids):
            problems.append("sampled_option_ids has negative entries")

    if record.cluster_labels is not None and len(record.cluster_labels) == 0:
        problems.append("cluster_labels is empty")

    if record.sequence_probs is not None:
        if any(not (0.0 < p <= 1.0) for p in record.sequence_probs):
            problems.append("sequence_probs entries must lie in (0, 1]")
        if record.cluster_labels is not None and len(record.cluster_labels) != len(record.sequence_probs):
            problems.append(
                f"cluster_labels has {len(record.cluster_labels)} entries "
                f"but sequence_probs has {len(record.sequence_probs)}"
            )

    if record.similarity is not None:
        n = len(record.similarity)
        if n == 0:
            problems.append("similarity matrix is empty")
        elif any(len(row) != n for row in record.similarity):
            problems.append("similarity matrix is not square")
        elif any(not math.isfinite(x) for row in record.similarity for x in row):
            problems.append("similarity matrix has non-finite entries")

    if record.precomputed_uncertainty is not None and not math.isfinite(record.precomputed_uncertainty):
        problems.append("precomputed_uncertainty is not finite")
    return problems


@dataclass(frozen=True)
class ScoredRecord:
    id: str
    uncertainty: float
    admissible: int

    def __post_init__(self):
        if not math.isfinite(self.uncertainty):
            raise ValueError(f"record {self.id!r}: uncertainty must be finite, got {self.uncertainty!r}")
        if self.admissible not in (0, 1):
            raise ValueError(f"record {self.id!r}: admissible must be 0 or 1")

    def sort_key(self) -> tuple[float, str]:
        return (self.uncertainty, self.id)

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "uncertainty": self.uncertainty, "admissible": self.admissible}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScoredRecord":
        try:
            return cls(str(data["id"]), float(data["uncertainty"]), _as_label(data["admissible"]))
        except KeyError as exc:
            raise ValueError(f"scored record is missing {exc.args[0]!r}") from None


def sort_records(records: Sequence[ScoredRecord]) -> list[ScoredRecord]:
    """Sort by ``(uncertainty, id)``; ids break ties deterministically."""
    return sorted(records, key=ScoredRecord.sort_key)


@dataclass(frozen=True)
class RiskConfig:
    alpha: float
    delta: float = 0.05
    bound_method: BoundMethod = BoundMethod.CP_EXACT
    split_ratio: float = 0.5
    n_trials: int = 100
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "bound_method", BoundMethod.parse(self.bound_method))
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError(f"split_ratio must lie in (0, 1), got {self.split_ratio}")
        if int(self.n_trials) != self.n_trials or self.n_trials < 1:
            raise ValueError(f"n_trials must be a positive integer, got {self.n_trials}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "alpha": self.alpha,
            "delta": self.delta,
            "bound_method": self.bound_method.value,
            "split_ratio": self.split_ratio,
            "n_trials": self.n_trials,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RiskConfig":
        return cls(**data)


@dataclass(frozen=True)
class CurveEntry:
    t: float
    m_hat: int
    w_hat: int
    r_hat: float
    upper: float

    def to_dict(self) -> dict[str, Any]:
        return {"t": self.t, "m_hat": self.m_hat, "w_hat": self.w_hat, "r_hat": self.r_hat, "upper": self.upper}


@dataclass(frozen=True)
class BoundCurve:
    """Per-threshold calibration statistics, ascending in ``t``."""

    entries: tuple[CurveEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    @property
    def thresholds(self) -> list[float]:
        return [e.t for e in self.entries]

    @property
    def uppers(self) -> list[float]:
        return [e.upper for e in self.entries]

    def to_list(self) -> list[dict[str, Any]]:
        return [e.to_dict() for e in self.entries]

    @classmethod
    def from_list(cls, items: Sequence[dict[str, Any]]) -> "BoundCurve":
        return cls(tuple(CurveEntry(float(d["t"]), int(d["m_hat"]), int(d["w_hat"]),
                                    float(d["r_hat"]), float(d["upper"])) for d in items))


@dataclass(frozen=True)
class CalibrationOutcome:
    threshold: Optional[float]
    curve: BoundCurve
    config: RiskConfig
    selected_count_cal: int
    bound_at_threshold: Optional[float]

    def to_dict(self) -> dict[str, Any]:
        return {
            "threshold": self.threshold,
            "bound_at_threshold": self.bound_at_threshold,
            "selected_count_cal": self.selected_count_cal,
            "config": self.config.to_dict(),
            "curve": self.curve.to_list(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "CalibrationOutcome":
        return cls(
            threshold=data.get("threshold"),
            curve=BoundCurve.from_list(data.get("curve", [])),
            config=RiskConfig.from_dict(data["config"]),
            selected_count_cal=int(data.get("selected_count_cal", 0)),
            bound_at_threshold=data.get("bound_at_threshold"),
        )


@dataclass(frozen=True)
class TrialResult:
    trial_index: int
    threshold: Optional[float]
    test_fdr: Optional[float]
    power: float
    n_selected: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "trial_index": self.trial_index,
            "threshold": self.threshold,
            "test_fdr": self.test_fdr,
            "power": self.power,
            "n_selected": self.n_selected,
        }


@dataclass(frozen=True)
class TrialReport:
    per_trial: tuple[TrialResult, ...]
    mean_fdr: float
    std_fdr: float
    mean_power: float
    violation_fraction: float
    alpha: float = field(default=float("nan"))

    @property
    def mean_threshold(self) -> float:
        ts = [r.threshold for r in self.per_trial if r.threshold is not None]
        return math.fsum(ts) / len(ts) if ts else float("nan")

    def to_dict(self) -> dict[str, Any]:
        return {
            "alpha": self.alpha,
            "mean_fdr": _json_float(self.mean_fdr),
            "std_fdr": _json_float(self.std_fdr),
            "mean_power": self.mean_power,
            "violation_fraction": self.violation_fraction,
            "mean_threshold": _json_float(self.mean_threshold),
            "per_trial": [r.to_dict() for r in self.per_trial],
        }


def _json_float(x: float) -> Optional[float]:
    return None if x is None or math.isnan(x) else x
