"""Discounted returns, batch-normalized advantages, masking, and the
REINFORCE objective over externally supplied log-probabilities.

G_t folds the step's intermediate reward with the discounted tail of
accumulated rewards: G_t = R_t^I + sum_{j=t}^{T-1} gamma^(j-t) R_j^A.
Advantages standardize returns over the whole batch with the population
standard deviation; masking zeroes positive-advantage contributions of
flagged steps without touching the batch statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from insightenv.rewards import RewardBreakdown

DEGENERATE_STD = 1e-12


@dataclass(frozen=True)
class TrajectoryReturns:
    values: tuple[float, ...]
    gamma: float


@dataclass(frozen=True)
class StepFlags:
    syntax_failed: bool = False
    has_invalid_insight: bool = False

    @property
    def masked(self) -> bool:
        return self.syntax_failed or self.has_invalid_insight

    @classmethod
    def from_breakdown(cls, breakdown: RewardBreakdown) -> "StepFlags":
        return cls(syntax_failed=breakdown.syntax_failed,
                   has_invalid_insight=breakdown.has_invalid_insight)


@dataclass(frozen=True)
class AdvantageBatch:
    advantages: tuple[tuple[float, ...], ...]  # [sample][step]
    batch_mean: float
    batch_std: float
    masks: tuple[tuple[bool, ...], ...] = ()  # True = contribution zeroed

    def masked_advantage(self, n: int, t: int) -> float:
        if self.masks and self.masks[n][t]:
            return 0.0
        return self.advantages[n][t]


@dataclass(frozen=True)
class ObjectiveInput:
    log_probs: tuple[tuple[float, ...], ...]
    advantages: AdvantageBatch


def compute_returns(
    breakdowns: Sequence[RewardBreakdown], gamma: float,
) -> TrajectoryReturns:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    if not breakdowns:
        raise ValueError("empty trajectory")
    accumulated = [b.accumulated_total for b in breakdowns]
    # suffix sums right-to-left keep the per-step cost linear
    values: list[float] = [0.0] * len(breakdowns)
    tail = 0.0
    for t in range(len(breakdowns) - 1, -1, -1):
        tail = accumulated[t] + gamma * tail
        values[t] = breakdowns[t].intermediate_total + tail
    return TrajectoryReturns(values=tuple(values), gamma=gamma)


def rebn_advantages(
    batch_returns: Sequence[TrajectoryReturns | Sequence[float]],
) -> AdvantageBatch:
    if not batch_returns:
        raise ValueError("empty batch")
    rows: list[tuple[float, ...]] = []
    for item in batch_returns:
        values = item.values if isinstance(item, TrajectoryReturns) else tuple(item)
        rows.append(tuple(float(v) for v in values))
    flat = [v for row in rows for v in row]
    if not flat:
        raise ValueError("batch holds no steps")
    mean = sum(flat) / len(flat)
    std = math.sqrt(sum((v - mean) ** 2 for v in flat) / len(flat))
    if std < DEGENERATE_STD:
        advantages = tuple(tuple(0.0 for _ in row) for row in rows)
        return AdvantageBatch(advantages=advantages, batch_mean=mean, batch_std=0.0)
    advantages = tuple(tuple((v - mean) / std for v in row) for row in rows)
    return AdvantageBatch(advantages=advantages, batch_mean=mean, batch_std=std)


def apply_masks(
    batch: AdvantageBatch,
    step_flags: Sequence[Sequence[StepFlags]],
) -> AdvantageBatch:
    """Flag positive-advantage steps that failed syntax or logical checks."""
    if len(step_flags) != len(batch.advantages):
        raise ValueError("flags and advantages must cover the same samples")
    masks: list[tuple[bool, ...]] = []
    for row, flag_row in zip(batch.advantages, step_flags):
        if len(flag_row) != len(row):
            raise ValueError("flags and advantages must cover the same steps")
        masks.append(tuple(a > 0 and f.masked for a, f in zip(row, flag_row)))
    return AdvantageBatch(
        advantages=batch.advantages,
        batch_mean=batch.batch_mean,
        batch_std=batch.batch_std,
        masks=tuple(masks),
    )


def objective(inputs: ObjectiveInput) -> float:
    """(1/N) sum over unmasked steps of A * log pi."""
    batch = inputs.advantages
    if len(inputs.log_probs) != len(batch.advantages):
        raise ValueError("log_probs and advantages must cover the same samples")
    total = 0.0
    for n, (logp_row, adv_row) in enumerate(zip(inputs.log_probs, batch.advantages)):
        if len(logp_row) != len(adv_row):
            raise ValueError("log_probs and advantages must cover the same steps")
        for t in range(len(adv_row)):
            total += batch.masked_advantage(n, t) * logp_row[t]
    return total / len(batch.advantages)
