"""Training objectives: KT cross-entropy, consistency and monotonicity
regularizers, their reversed/variant ablation forms, the total-loss
combinator, and the reconstruction/waviness/Laplacian comparison
regularizers.

All functions accept plain arrays (returning numpy scalars) or autodiff
Tensors (returning a Tensor on the tape), so the exact same formula is used
for oracle tests, evaluation reports, and training. Expectations are means
over the stated index sets; an empty index set yields 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .core import AugmentedSequence, PredictionTrace, SkillMap

EPS = 1e-7  # probability clamp inside BCE


@dataclass(frozen=True)
class LossWeights:
    """Weights of one augmentation's terms in the total loss."""

    lambda_aug: float = 1.0
    lambda_reg: float = 1.0

    def __post_init__(self):
        if self.lambda_aug < 0 or self.lambda_reg < 0:
            raise ValueError("loss weights must be non-negative")


def _probs(trace):
    if isinstance(trace, PredictionTrace):
        return trace.array()
    if isinstance(trace, ad.Tensor):
        return trace
    return np.asarray(trace, dtype=np.float64)


def _length(p) -> int:
    return p.shape[0] if isinstance(p, ad.Tensor) else len(p)


def _index_array(mask: Iterable[int], n: int, what: str) -> np.ndarray:
    idx = np.asarray(sorted(int(i) for i in mask), dtype=np.intp)
    if idx.size and (idx[0] < 0 or idx[-1] >= n):
        raise ValueError(f"{what} index out of range for length {n}")
    if idx.size and np.any(np.diff(idx) == 0):
        raise ValueError(f"duplicate index in {what}")
    return idx


def kt_bce(trace, labels, mask: Iterable[int]):
    """Mean binary cross-entropy over the masked indices.

    Probabilities are clamped to [EPS, 1 - EPS]. The mask implements the
    rule that replaced and inserted positions carry no KT loss: callers pass
    [T] - R for replacement, the sigma image for insertion, and all
    positions for deletion/original sequences.
    """
    p = _probs(trace)
    y = np.asarray(labels, dtype=np.float64)
    n = _length(p)
    if n != y.shape[0]:
        raise ValueError(f"trace length {n} != labels length {y.shape[0]}")
    idx = _index_array(mask, n, "mask")
    if idx.size == 0:
        raise ValueError("empty mask")
    pm = ad.take(p, idx)
    ym = y[idx]
    pc = ad.clip(pm, EPS, 1.0 - EPS)
    return ad.mean(-(ym * ad.log(pc) + (1.0 - ym) * ad.log(1.0 - pc)))


def consistency_rep(trace, trace_rep, touched: Iterable[int]):
    """Mean squared prediction gap over the positions that were NOT replaced."""
    p, pr = _probs(trace), _probs(trace_rep)
    n = _length(p)
    if n != _length(pr):
        raise ValueError("replacement must preserve length")
    touched = set(int(t) for t in touched)
    keep = np.asarray([t for t in range(n) if t not in touched], dtype=np.intp)
    if keep.size == 0:
        return 0.0
    return ad.mean((ad.take(p, keep) - ad.take(pr, keep)) ** 2)


def consistency_rep_variant(trace, trace_rep, touched: Iterable[int], variant: str):
    """Ablation variants: mean gap over replaced positions only, or over all."""
    p, pr = _probs(trace), _probs(trace_rep)
    n = _length(p)
    if n != _length(pr):
        raise ValueError("replacement must preserve length")
    if variant == "replaced_only":
        idx = _index_array(touched, n, "touched")
        if idx.size == 0:
            return 0.0
        return ad.mean((ad.take(p, idx) - ad.take(pr, idx)) ** 2)
    if variant == "full":
        return ad.mean((p - pr) ** 2)
    raise ValueError(f"unknown variant {variant!r}")


def _validate_sigma(sigma) -> tuple[np.ndarray, np.ndarray]:
    dom = np.asarray([a for a, _ in sigma], dtype=np.intp)
    img = np.asarray([b for _, b in sigma], dtype=np.intp)
    if dom.size and (dom[0] < 0 or img[0] < 0):
        raise ValueError("sigma indices must be non-negative")
    if dom.size and (np.any(np.diff(dom) <= 0) or np.any(np.diff(img) <= 0)):
        raise ValueError("sigma must be strictly increasing")
    return dom, img


def monotonicity_ins(trace, trace_ins, sigma, target_response: int, reversed_reg: bool = False):
    """Hinge penalty aligning original predictions with the inserted sequence.

    target 1 (correct insertion) penalizes p_t exceeding the aligned
    augmented prediction; target 0 the other direction. The reversed form
    swaps the hinge, which equals the aligned loss of the opposite target.
    """
    p, pi = _probs(trace), _probs(trace_ins)
    dom, img = _validate_sigma(sigma)
    T, Tp = _length(p), _length(pi)
    if dom.size != T or (dom.size and dom[-1] >= T):
        raise ValueError("sigma domain must cover every original index")
    if img.size and img[-1] >= Tp:
        raise ValueError("sigma image exceeds augmented length")
    if T == 0:
        return 0.0
    a = ad.take(p, dom)
    b = ad.take(pi, img)
    effective = target_response if not reversed_reg else 1 - target_response
    diff = a - b if effective == 1 else b - a
    return ad.mean(ad.relu(diff))


def monotonicity_del(trace, trace_del, sigma, target_response: int, reversed_reg: bool = False):
    """Hinge penalty aligning surviving predictions with the deleted sequence.

    target 1 (correct deletion) penalizes the augmented prediction exceeding
    the original; target 0 the other direction; reversed swaps.
    """
    p, pd = _probs(trace), _probs(trace_del)
    dom, img = _validate_sigma(sigma)
    T, Tp = _length(p), _length(pd)
    if img.size != Tp or not np.array_equal(img, np.arange(Tp)):
        raise ValueError("sigma image must enumerate the deleted sequence")
    if dom.size and dom[-1] >= T:
        raise ValueError("sigma domain exceeds original length")
    if dom.size == 0:
        return 0.0
    a = ad.take(p, dom)
    b = ad.take(pd, img)
    effective = target_response if not reversed_reg else 1 - target_response
    diff = b - a if effective == 1 else a - b
    return ad.mean(ad.relu(diff))


def total_loss(l_ori, per_aug: Sequence[tuple]):
    """L_ori + sum over augmentations of lambda_aug * L_aug + lambda_reg * L_reg."""
    total = l_ori
    for l_aug, l_reg, w in per_aug:
        total = total + w.lambda_aug * l_aug + w.lambda_reg * l_reg
    return total


def aug_losses(
    trace_ori,
    trace_aug,
    aug: AugmentedSequence,
    reversed_reg: bool = False,
    variant: str = "remaining",
):
    """(L_aug, L_reg) for one augmentation draw, per its kind.

    Codifies the masking rule once: replacement and insertion exclude the
    augmented positions from L_aug; deletion keeps every surviving position.
    A replacement whose untouched set is empty contributes L_aug = 0.
    """
    labels_aug = aug.responses()
    if aug.kind == "replacement":
        keep = [t for t in range(len(aug)) if t not in aug.touched]
        l_aug = kt_bce(trace_aug, labels_aug, keep) if keep else 0.0
        if variant == "remaining":
            l_reg = consistency_rep(trace_ori, trace_aug, aug.touched)
        else:
            l_reg = consistency_rep_variant(trace_ori, trace_aug, aug.touched, variant)
    elif aug.kind == "insertion":
        mask = [int(b) for _, b in aug.sigma]
        l_aug = kt_bce(trace_aug, labels_aug, mask) if mask else 0.0
        l_reg = monotonicity_ins(
            trace_ori, trace_aug, aug.sigma, aug.target_response, reversed_reg
        )
    elif aug.kind == "deletion":
        l_aug = kt_bce(trace_aug, labels_aug, range(len(aug)))
        l_reg = monotonicity_del(
            trace_ori, trace_aug, aug.sigma, aug.target_response, reversed_reg
        )
    else:
        raise ValueError(f"unknown augmentation kind {aug.kind!r}")
    return l_aug, l_reg


def dktplus_losses(prob_matrix, seq):
    """Reconstruction and waviness regularizers of the DKT+ baseline.

    prob_matrix is the (T, n_questions) per-step probability matrix.
    Returns (L_r, L_w1, L_w2); both waviness terms and L_r are 0 when T < 2.
    """
    P = prob_matrix if isinstance(prob_matrix, ad.Tensor) else np.asarray(
        prob_matrix, dtype=np.float64
    )
    T = len(seq)
    if P.shape[0] != T:
        raise ValueError(f"matrix has {P.shape[0]} rows for a length-{T} sequence")
    q = seq.questions()
    if T and int(q.max()) >= P.shape[1]:
        raise ValueError("question id outside the matrix's catalog")
    if T < 2:
        return 0.0, 0.0, 0.0
    head = ad.slice_(P, (slice(0, T - 1), slice(None)))
    tail = ad.slice_(P, (slice(1, T), slice(None)))
    picked = ad.pick(head, q[: T - 1])
    l_r = kt_bce(picked, seq.responses()[: T - 1], range(T - 1))
    diff = tail - head
    l_w1 = ad.mean(ad.absolute(diff))
    l_w2 = ad.mean(diff**2)
    return l_r, l_w1, l_w2


def qdkt_laplacian(question_probs, skills: Optional[SkillMap]):
    """Mean squared gap over question pairs sharing at least one skill.

    Ordered and unordered means coincide for a symmetric integrand; pairs
    are enumerated unordered. No qualifying pair yields 0.
    """
    if skills is None:
        raise ValueError("laplacian loss requires a skill map")
    p = question_probs if isinstance(question_probs, ad.Tensor) else np.asarray(
        question_probs, dtype=np.float64
    )
    n = _length(p)
    pairs = set()
    for qid in skills.entries:
        if qid >= n:
            continue
        for peer in skills.common_skill_peers(qid):
            if peer < n and qid < peer:
                pairs.add((qid, peer))
    if not pairs:
        return 0.0
    left = np.asarray(sorted(pairs), dtype=np.intp)
    a = ad.take(p, left[:, 0])
    b = ad.take(p, left[:, 1])
    return ad.mean((a - b) ** 2)
