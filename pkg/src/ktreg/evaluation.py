"""AUC metric, monotonicity-violation reports, and the two dataset/model
analyses (past-correctness-rate distributions and per-correctness mean
consistency loss).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .augment import AugmentConfig, replace
from .core import AugmentedSequence, Dataset, InteractionSequence, SkillMap, window
from .model import DktParams, forward, forward_batch


def auc(scores, labels) -> float:
    """Rank-based (Mann-Whitney) AUC with midranks for ties."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: both classes must be present")

    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size, dtype=np.float64)
    sorted_s = s[order]
    boundaries = np.flatnonzero(np.diff(sorted_s)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [s.size]))
    for a, b in zip(starts, ends):
        ranks[order[a:b]] = 0.5 * (a + b + 1)  # midrank of 1-based ranks a+1..b
    rank_sum_pos = ranks[y == 1].sum()
    return float((rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def dataset_predictions(
    params: DktParams,
    sequences: Sequence[InteractionSequence],
    max_seq_len: int,
    batch_size: int = 256,
) -> tuple[np.ndarray, np.ndarray]:
    """Pooled per-timestep (score, label) pairs over windowed sequences."""
    chunks = [c for s in sequences for c in window(s, max_seq_len)]
    scores, labels = [], []
    for start in range(0, len(chunks), batch_size):
        group = chunks[start : start + batch_size]
        picked, lengths = forward_batch(params, group)
        for b, seq in enumerate(group):
            n = lengths[b]
            scores.append(picked[b, :n])
            labels.append(seq.responses())
    return np.concatenate(scores), np.concatenate(labels)


def evaluate_dataset(params: DktParams, data: Dataset, max_seq_len: int) -> float:
    scores, labels = dataset_predictions(params, data.sequences, max_seq_len)
    return auc(scores, labels)


@dataclass(frozen=True)
class MonotonicityRow:
    step: int  # 1-based original timestep
    p_original: float
    p_augmented: Optional[float]  # None when the original step was deleted
    violation: Optional[bool]


@dataclass(frozen=True)
class MonotonicityReport:
    kind: str
    flavor: str
    rows: tuple[MonotonicityRow, ...]
    violation_fraction: float


def align_violations(
    trace_ori, trace_aug, aug: AugmentedSequence
) -> tuple[tuple[MonotonicityRow, ...], float]:
    """Pair traces through sigma and flag monotonicity-hypothesis violations.

    One row per original timestep. Equality never counts as a violation;
    deleted positions carry no pair and are excluded from the fraction.
    Replacement draws get gap rows only (no order hypothesis to violate).
    """
    p = np.asarray(trace_ori.probs if hasattr(trace_ori, "probs") else trace_ori,
                   dtype=np.float64)
    pa = np.asarray(trace_aug.probs if hasattr(trace_aug, "probs") else trace_aug,
                    dtype=np.float64)
    aligned = {a: b for a, b in aug.sigma}

    def violated(orig: float, paired: float) -> Optional[bool]:
        if aug.kind == "replacement":
            return None
        if aug.kind == "insertion":
            hypothesis_up = aug.target_response == 1
        else:  # deletion removes evidence: correct deletion should lower predictions
            hypothesis_up = aug.target_response == 0
        return paired < orig if hypothesis_up else paired > orig

    rows = []
    n_violations = 0
    n_aligned = 0
    for t in range(p.size):
        if t in aligned:
            paired = float(pa[aligned[t]])
            flag = violated(float(p[t]), paired)
            n_aligned += 1
            if flag:
                n_violations += 1
        else:
            paired, flag = None, None
        rows.append(MonotonicityRow(t + 1, float(p[t]), paired, flag))
    fraction = n_violations / n_aligned if n_aligned else 0.0
    return tuple(rows), fraction


def monotonicity_report(
    params: DktParams, seq: InteractionSequence, aug: AugmentedSequence
) -> MonotonicityReport:
    """Aligned prediction pairs and violation fraction for a trained model."""
    trace_ori, _ = forward(params, seq)
    trace_aug, _ = forward(params, aug)
    rows, fraction = align_violations(trace_ori, trace_aug, aug)
    return MonotonicityReport(aug.kind, aug.flavor, rows, fraction)


@dataclass(frozen=True)
class MonotonicityAnalysis:
    """Past-correctness-rate distributions split by the current response."""

    rates_when_correct: np.ndarray
    rates_when_incorrect: np.ndarray
    bin_edges: np.ndarray
    hist_correct: np.ndarray
    hist_incorrect: np.ndarray

    @property
    def mean_correct(self) -> float:
        return float(self.rates_when_correct.mean()) if self.rates_when_correct.size else 0.0

    @property
    def mean_incorrect(self) -> float:
        return float(self.rates_when_incorrect.mean()) if self.rates_when_incorrect.size else 0.0

    @property
    def n_contributing(self) -> int:
        return self.rates_when_correct.size + self.rates_when_incorrect.size


def dataset_monotonicity_analysis(
    sequences: Sequence[InteractionSequence], bins: int = 10
) -> MonotonicityAnalysis:
    """For every interaction with t >= 2, the fraction of earlier correct
    responses, bucketed by whether the current response is correct."""
    when_correct, when_incorrect = [], []
    for seq in sequences:
        r = seq.responses()
        if r.size < 2:
            continue
        prefix = np.cumsum(r)
        for t in range(1, r.size):
            rate = prefix[t - 1] / t
            (when_correct if r[t] == 1 else when_incorrect).append(rate)
    rc = np.asarray(when_correct, dtype=np.float64)
    ri = np.asarray(when_incorrect, dtype=np.float64)
    edges = np.linspace(0.0, 1.0, bins + 1)
    hist_c, _ = np.histogram(rc, bins=edges)
    hist_i, _ = np.histogram(ri, bins=edges)
    return MonotonicityAnalysis(rc, ri, edges, hist_c, hist_i)


@dataclass(frozen=True)
class ConsistencyAnalysis:
    """Mean squared prediction gap under skill replacement, split by whether
    the model's original prediction was correct at threshold 0.5."""

    mean_when_correct: float
    mean_when_incorrect: float
    n_correct: int
    n_incorrect: int


def consistency_loss_analysis(
    params: DktParams,
    data: Dataset,
    skills: SkillMap,
    alpha: float = 0.3,
    seed: int = 0,
    max_seq_len: int = 100,
) -> ConsistencyAnalysis:
    """One skill-based replacement draw per sequence; per-position squared
    gaps pooled by prediction correctness (p >= 0.5 predicts "correct").

    Replaced positions are excluded, matching the consistency loss: only
    positions whose own question is unchanged compare like with like.
    """
    if skills is None:
        raise ValueError("consistency analysis requires a skill map")
    cfg = AugmentConfig(alpha=alpha, flavor="skill", seed=seed)
    gaps_correct, gaps_incorrect = [], []
    for original in data.sequences:
        for seq in window(original, max_seq_len):
            aug = replace(seq, skills, data.n_questions, cfg)
            trace_ori, _ = forward(params, seq)
            trace_aug, _ = forward(params, aug)
            p = trace_ori.array()
            pa = trace_aug.array()
            r = seq.responses()
            for t in range(len(seq)):
                if t in aug.touched:
                    continue
                gap = (p[t] - pa[t]) ** 2
                predicted = 1 if p[t] >= 0.5 else 0
                (gaps_correct if predicted == r[t] else gaps_incorrect).append(gap)
    return ConsistencyAnalysis(
        mean_when_correct=float(np.mean(gaps_correct)) if gaps_correct else 0.0,
        mean_when_incorrect=float(np.mean(gaps_incorrect)) if gaps_incorrect else 0.0,
        n_correct=len(gaps_correct),
        n_incorrect=len(gaps_incorrect),
    )
