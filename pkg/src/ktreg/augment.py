"""Seeded interaction-sequence augmentations: replacement, insertion, deletion.

Every function is a pure function of (sequence, config): the RNG stream is
derived from (seed, student_id, kind, flavor), so augmenting a batch in any
order, or in parallel, yields identical results.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import AugmentedSequence, Interaction, InteractionSequence, SkillMap

REPLACEMENT_FLAVORS = ("skill", "skill_set", "question_random", "interaction_random")


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from arbitrary parts (order-sensitive)."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


@dataclass(frozen=True)
class AugmentConfig:
    """Parameters of one augmentation draw.

    alpha: replacement/deletion Bernoulli probability, or insertion proportion.
    flavor: replacement flavor; ignored by insertion/deletion.
    target_response: inserted/deleted response value (1 correct, 0 incorrect).
    """

    alpha: float
    flavor: str = "question_random"
    target_response: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.target_response not in (0, 1):
            raise ValueError(f"target_response must be 0 or 1, got {self.target_response}")


def _rng(cfg: AugmentConfig, seq: InteractionSequence, kind: str, flavor: str):
    return np.random.default_rng(derive_seed(cfg.seed, seq.student_id, kind, flavor))


def _identity_sigma(n: int) -> tuple:
    return tuple((t, t) for t in range(n))


def replace(
    seq: InteractionSequence,
    skills: Optional[SkillMap],
    n_questions: int,
    cfg: AugmentConfig,
) -> AugmentedSequence:
    """Replace each question independently with probability alpha.

    Candidate pools per flavor (always excluding the original question):
      skill               questions sharing at least one skill
      skill_set           questions with the identical skill set
      question_random     any other question in the catalog
      interaction_random  as question_random, plus the response is resampled
                          fair-coin
    A question with no eligible candidate is left untouched and dropped from
    the touched set.
    """
    if cfg.flavor not in REPLACEMENT_FLAVORS:
        raise ValueError(f"unknown replacement flavor {cfg.flavor!r}")
    if n_questions < 1:
        raise ValueError("empty question catalog")
    if cfg.flavor in ("skill", "skill_set") and skills is None:
        raise ValueError(f"{cfg.flavor} replacement requires a skill map")

    rng = _rng(cfg, seq, "replacement", cfg.flavor)
    T = len(seq)
    selected = rng.random(T) < cfg.alpha

    out = list(seq.interactions)
    touched = []
    for t in range(T):
        if not selected[t]:
            continue
        q, r = seq.interactions[t]
        if cfg.flavor == "skill":
            cands = skills.common_skill_peers(q)
        elif cfg.flavor == "skill_set":
            cands = skills.same_set_peers(q)
        else:
            cands = None  # uniform over catalog minus q, sampled without a list
        if cands is None:
            if n_questions < 2:
                continue
            new_q = int(rng.integers(n_questions - 1))
            if new_q >= q:
                new_q += 1
        else:
            if not cands:
                continue
            new_q = int(cands[rng.integers(len(cands))])
        new_r = int(rng.integers(2)) if cfg.flavor == "interaction_random" else r
        out[t] = Interaction(new_q, new_r)
        touched.append(t)

    return AugmentedSequence(
        interactions=tuple(out),
        kind="replacement",
        flavor=cfg.flavor,
        touched=frozenset(touched),
        sigma=_identity_sigma(T),
    )


def insert(
    seq: InteractionSequence, n_questions: int, cfg: AugmentConfig
) -> AugmentedSequence:
    """Insert round(alpha * T) fixed-response interactions at uniform slots.

    The insertion count rounds half up and is at least 1 whenever alpha > 0
    and T >= 2. Slots are a uniform size-k subset of the T + k augmented
    positions; inserted questions are drawn uniformly from the catalog.
    """
    if n_questions < 1:
        raise ValueError("empty question catalog")
    flavor = "correct" if cfg.target_response == 1 else "incorrect"
    rng = _rng(cfg, seq, "insertion", flavor)
    T = len(seq)
    k = int(math.floor(cfg.alpha * T + 0.5))
    if cfg.alpha > 0 and T >= 2:
        k = max(k, 1)
    if k == 0:
        return AugmentedSequence(
            interactions=seq.interactions,
            kind="insertion",
            flavor=flavor,
            touched=frozenset(),
            sigma=_identity_sigma(T),
        )

    total = T + k
    slots = np.sort(rng.choice(total, size=k, replace=False))
    slot_set = frozenset(int(s) for s in slots)
    new_questions = rng.integers(n_questions, size=k)

    out = []
    sigma = []
    next_ins = 0
    next_ori = 0
    for pos in range(total):
        if pos in slot_set:
            out.append(Interaction(int(new_questions[next_ins]), cfg.target_response))
            next_ins += 1
        else:
            out.append(seq.interactions[next_ori])
            sigma.append((next_ori, pos))
            next_ori += 1

    return AugmentedSequence(
        interactions=tuple(out),
        kind="insertion",
        flavor=flavor,
        touched=slot_set,
        sigma=tuple(sigma),
    )


def delete(seq: InteractionSequence, cfg: AugmentConfig) -> AugmentedSequence:
    """Delete each target-response interaction independently with probability alpha.

    If the draw would delete every interaction, the last matching index is
    retained so the augmented sequence is never empty.
    """
    flavor = "correct" if cfg.target_response == 1 else "incorrect"
    rng = _rng(cfg, seq, "deletion", flavor)
    T = len(seq)
    draws = rng.random(T) < cfg.alpha
    deleted = [
        t for t in range(T)
        if seq.interactions[t].response == cfg.target_response and draws[t]
    ]
    if len(deleted) == T:
        deleted.pop()

    deleted_set = frozenset(deleted)
    out = []
    sigma = []
    for t in range(T):
        if t in deleted_set:
            continue
        sigma.append((t, len(out)))
        out.append(seq.interactions[t])

    return AugmentedSequence(
        interactions=tuple(out),
        kind="deletion",
        flavor=flavor,
        touched=deleted_set,
        sigma=tuple(sigma),
    )
