"""Evaluation arithmetic: EM, token F1, consistency ratios, agreement,
Wilson intervals, the exact sign test, and Spearman rank correlation.

All operations are pure and reentrant. Ratios are always computed exactly;
rounding for display happens only at report-rendering time.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import dataclass
from statistics import NormalDist
from typing import Any, Sequence


class UndefinedCRError(ValueError):
    """CR is undefined when the Real success rate is zero."""


@dataclass(frozen=True)
class OutcomeTable:
    """Per-task success bitmaps for two conditions (e.g. a=Real, b=W2R)."""

    task_ids: tuple[str, ...]
    outcomes_a: tuple[bool, ...]
    outcomes_b: tuple[bool, ...]

    def __post_init__(self) -> None:
        if not (len(self.task_ids) == len(self.outcomes_a) == len(self.outcomes_b)):
            raise ValueError("task_ids and both outcome lists must have equal length")
        if len(set(self.task_ids)) != len(self.task_ids):
            raise ValueError("task_ids must be unique")

    def __len__(self) -> int:
        return len(self.task_ids)

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_ids": list(self.task_ids),
            "outcomes_a": list(self.outcomes_a),
            "outcomes_b": list(self.outcomes_b),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "OutcomeTable":
        return cls(
            task_ids=tuple(data["task_ids"]),
            outcomes_a=tuple(bool(x) for x in data["outcomes_a"]),
            outcomes_b=tuple(bool(x) for x in data["outcomes_b"]),
        )


@dataclass(frozen=True)
class AgreementSummary:
    """Task-level agreement counts between two conditions.

    With a=WM and b=Real: tp/tn count simultaneous successes/failures,
    fp counts WM-only successes, fn counts Real-only successes.
    """

    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def agree_rate(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "tp": self.tp,
            "tn": self.tn,
            "fp": self.fp,
            "fn": self.fn,
            "agree_rate": self.agree_rate,
        }


@dataclass(frozen=True)
class PairwiseCR:
    """CR_pw with its effective sample size.

    When no task succeeded under condition a the ratio is undefined;
    `empty` is set and `value` is None rather than NaN.
    """

    value: float | None
    n_real: int
    preserved: int

    @property
    def empty(self) -> bool:
        return self.value is None


def exact_match(pred: str, gold: str) -> bool:
    """Equality after trimming outer whitespace and normalizing line endings."""

    def norm(s: str) -> str:
        return s.replace("\r\n", "\n").replace("\r", "\n").strip()

    return norm(pred) == norm(gold)


def token_f1(pred: str, gold: str) -> float:
    """Token-level F1 with lowercase whitespace tokenization and multiset
    precision/recall. Both empty gives 1.0, exactly one empty gives 0.0.
    """
    pred_tokens = pred.lower().split()
    gold_tokens = gold.lower().split()
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def consistency_ratio(sr_w2r: float, sr_real: float) -> float:
    """CR = SR_W2R / SR_Real, the aggregate calibration ratio. May exceed 1
    (a "too easy" simulator). Undefined when SR_Real is zero."""
    if sr_real <= 0:
        raise UndefinedCRError("CR undefined: Real success rate is zero")
    return sr_w2r / sr_real


def pairwise_cr(outcomes: OutcomeTable) -> PairwiseCR:
    """Fraction of individually a-successful tasks that remain successful
    under condition b. With a=Real and b=W2R this is CR_pw."""
    n_real = sum(outcomes.outcomes_a)
    preserved = sum(a and b for a, b in zip(outcomes.outcomes_a, outcomes.outcomes_b))
    if n_real == 0:
        return PairwiseCR(value=None, n_real=0, preserved=0)
    return PairwiseCR(value=preserved / n_real, n_real=n_real, preserved=preserved)


def agreement(outcomes: OutcomeTable) -> AgreementSummary:
    """Partition the task set into tp/tn/fp/fn counts (a=WM, b=Real)."""
    tp = tn = fp = fn = 0
    for a, b in zip(outcomes.outcomes_a, outcomes.outcomes_b):
        if a and b:
            tp += 1
        elif not a and not b:
            tn += 1
        elif a and not b:
            fp += 1
        else:
            fn += 1
    return AgreementSummary(tp=tp, tn=tn, fp=fp, fn=fn)


def wilson_ci(successes: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    """Wilson score confidence interval for a binomial proportion.

    With p = successes/n and z the two-sided normal quantile for the given
    confidence (1.959964 at 95%):

        center = (p + z^2/2n) / (1 + z^2/n)
        margin = z/(1 + z^2/n) * sqrt(p(1-p)/n + z^2/4n^2)

    The interval always brackets p and stays inside [0, 1].
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 <= successes <= n:
        raise ValueError("successes must lie in 0..n")
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")
    z = NormalDist().inv_cdf(1 - (1 - confidence) / 2)
    p = successes / n
    denom = 1 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    margin = (z / denom) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return (max(0.0, center - margin), min(1.0, center + margin))


def sign_test(wins: int, losses: int) -> float:
    """Two-sided exact binomial sign test at p=0.5, ties excluded beforehand.

    Returns 2 * P(X <= min(wins, losses)) for X ~ Binomial(n, 0.5), capped
    at 1. For symmetric p=0.5 this equals the equal-tails exact test.
    """
    if wins < 0 or losses < 0:
        raise ValueError("counts must be non-negative")
    n = wins + losses
    if n < 1:
        raise ValueError("need at least one non-tied comparison")
    k = min(wins, losses)
    tail = sum(math.comb(n, i) for i in range(0, k + 1)) / 2**n
    return min(1.0, 2 * tail)


def _average_ranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1  # ranks are 1-based
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def spearman_rho(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Spearman rank correlation with average ranks for ties."""
    if len(xs) != len(ys):
        raise ValueError("sequences must have equal length")
    if len(xs) < 2:
        raise ValueError("need at least two points")
    rx, ry = _average_ranks(xs), _average_ranks(ys)
    mx = sum(rx) / len(rx)
    my = sum(ry) / len(ry)
    cov = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    vx = sum((a - mx) ** 2 for a in rx)
    vy = sum((b - my) ** 2 for b in ry)
    if vx == 0 or vy == 0:
        raise ValueError("rank variance is zero; rho undefined")
    return cov / math.sqrt(vx * vy)


def report_to_json(report: dict[str, Any]) -> str:
    return json.dumps(report, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def rows_to_csv(rows: Sequence[dict[str, Any]]) -> str:
    """Flat CSV for a list of homogeneous report rows."""
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()
