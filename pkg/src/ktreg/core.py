"""Domain types for student interaction sequences.

Everything here is immutable after construction and safe to share across
threads. Indices are 0-based internally; user-facing reports convert to
1-based timesteps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Optional

import numpy as np


class Interaction(NamedTuple):
    """One (question, response) event. response is 1 = correct, 0 = incorrect."""

    question_id: int
    response: int


@dataclass(frozen=True)
class InteractionSequence:
    """A student's chronologically ordered interactions."""

    student_id: str | int
    interactions: tuple[Interaction, ...]

    def __post_init__(self):
        fixed = tuple(Interaction(int(q), int(r)) for q, r in self.interactions)
        object.__setattr__(self, "interactions", fixed)

    def __len__(self) -> int:
        return len(self.interactions)

    def questions(self) -> np.ndarray:
        return np.fromiter((i.question_id for i in self.interactions), dtype=np.int64,
                           count=len(self.interactions))

    def responses(self) -> np.ndarray:
        return np.fromiter((i.response for i in self.interactions), dtype=np.int64,
                           count=len(self.interactions))


@dataclass(frozen=True)
class SkillMap:
    """question_id -> non-empty set of skill ids.

    Datasets without skill annotations use ``None`` instead of a SkillMap.
    The two inverse indexes (by shared skill / by identical skill set) are
    precomputed so candidate lookups during augmentation are O(result).
    """

    entries: Mapping[int, frozenset[int]]
    _common_peers: dict = field(init=False, repr=False, compare=False)
    _same_set_peers: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        norm = {}
        for qid, skills in self.entries.items():
            skills = frozenset(int(s) for s in skills)
            if not skills:
                raise ValueError(f"question {qid} has an empty skill set")
            norm[int(qid)] = skills
        object.__setattr__(self, "entries", norm)

        by_skill: dict[int, list[int]] = {}
        by_set: dict[frozenset, list[int]] = {}
        for qid in sorted(norm):
            for s in norm[qid]:
                by_skill.setdefault(s, []).append(qid)
            by_set.setdefault(norm[qid], []).append(qid)

        common = {}
        same = {}
        for qid in sorted(norm):
            peers = set()
            for s in norm[qid]:
                peers.update(by_skill[s])
            peers.discard(qid)
            common[qid] = tuple(sorted(peers))
            same[qid] = tuple(q for q in by_set[norm[qid]] if q != qid)
        object.__setattr__(self, "_common_peers", common)
        object.__setattr__(self, "_same_set_peers", same)

    def __contains__(self, qid: int) -> bool:
        return int(qid) in self.entries

    def skills_of(self, qid: int) -> frozenset[int]:
        return self.entries[int(qid)]

    def common_skill_peers(self, qid: int) -> tuple[int, ...]:
        """Questions sharing at least one skill with qid, excluding qid."""
        return self._common_peers[int(qid)]

    def same_set_peers(self, qid: int) -> tuple[int, ...]:
        """Questions whose skill set equals qid's exactly, excluding qid."""
        return self._same_set_peers[int(qid)]

    def missing_from(self, questions: Iterable[int]) -> list[int]:
        return sorted({int(q) for q in questions} - set(self.entries))


@dataclass(frozen=True)
class AugmentedSequence:
    """Output of one augmentation draw.

    kind/flavor:
      * replacement: flavor in {skill, skill_set, question_random, interaction_random},
        touched = replaced original indices, sigma = identity on [0, T).
      * insertion: flavor in {correct, incorrect}, touched = inserted positions in
        the augmented index space, sigma maps each original index to its shifted
        position.
      * deletion: flavor in {correct, incorrect}, touched = deleted original
        indices, sigma maps each surviving original index to its new position.

    sigma is stored as (original_index, augmented_index) pairs, strictly
    increasing in both components.
    """

    interactions: tuple[Interaction, ...]
    kind: str
    flavor: str
    touched: frozenset[int]
    sigma: tuple[tuple[int, int], ...]

    def __post_init__(self):
        fixed = tuple(Interaction(int(q), int(r)) for q, r in self.interactions)
        object.__setattr__(self, "interactions", fixed)
        object.__setattr__(self, "touched", frozenset(int(t) for t in self.touched))
        object.__setattr__(
            self, "sigma", tuple((int(a), int(b)) for a, b in self.sigma)
        )

    def __len__(self) -> int:
        return len(self.interactions)

    def questions(self) -> np.ndarray:
        return np.fromiter((i.question_id for i in self.interactions), dtype=np.int64,
                           count=len(self.interactions))

    def responses(self) -> np.ndarray:
        return np.fromiter((i.response for i in self.interactions), dtype=np.int64,
                           count=len(self.interactions))

    @property
    def target_response(self) -> int:
        """Fixed response carried by inserted/deleted interactions."""
        if self.kind not in ("insertion", "deletion"):
            raise ValueError(f"{self.kind} has no target response")
        return 1 if self.flavor == "correct" else 0

    def sigma_domain(self) -> np.ndarray:
        return np.array([a for a, _ in self.sigma], dtype=np.int64)

    def sigma_image(self) -> np.ndarray:
        return np.array([b for _, b in self.sigma], dtype=np.int64)


@dataclass(frozen=True)
class PredictionTrace:
    """Per-timestep predicted correctness probabilities for one sequence."""

    probs: tuple[float, ...]

    def __post_init__(self):
        fixed = tuple(float(p) for p in self.probs)
        if any(not 0.0 <= p <= 1.0 for p in fixed):
            raise ValueError("probabilities must lie in [0, 1]")
        object.__setattr__(self, "probs", fixed)

    def __len__(self) -> int:
        return len(self.probs)

    def array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=np.float64)


@dataclass(frozen=True)
class Dataset:
    """A set of interaction sequences over a dense question catalog [0, n_questions)."""

    sequences: tuple[InteractionSequence, ...]
    n_questions: int

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(self.sequences))

    def __len__(self) -> int:
        return len(self.sequences)

    def student_ids(self) -> list:
        seen = {}
        for s in self.sequences:
            seen.setdefault(s.student_id, None)
        return list(seen)


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    index: Optional[int] = None
    reason: Optional[str] = None


def validate_sequence(seq: InteractionSequence, catalog_size: int) -> ValidationResult:
    """Check sequence invariants; reports the first offending index."""
    if len(seq.interactions) == 0:
        return ValidationResult(False, None, "empty sequence")
    for t, (q, r) in enumerate(seq.interactions):
        if r not in (0, 1):
            return ValidationResult(False, t, f"response {r} not in {{0, 1}}")
        if q < 0 or q >= catalog_size:
            return ValidationResult(
                False, t, f"question id {q} outside catalog of size {catalog_size}"
            )
    return ValidationResult(True)


def window(seq: InteractionSequence, max_len: int) -> list[InteractionSequence]:
    """Split a history into consecutive non-overlapping chunks of length <= max_len.

    Concatenating the chunks reproduces the input exactly. When a sequence is
    split, chunk ids get a ``#k`` suffix so each chunk owns a distinct
    augmentation RNG stream.
    """
    if max_len < 2:
        raise ValueError(f"max_len must be >= 2, got {max_len}")
    n = len(seq.interactions)
    if n <= max_len:
        return [seq]
    chunks = []
    for k, start in enumerate(range(0, n, max_len)):
        chunks.append(
            InteractionSequence(
                student_id=f"{seq.student_id}#{k}",
                interactions=seq.interactions[start : start + max_len],
            )
        )
    return chunks


def check_augmented(
    original: InteractionSequence,
    aug: AugmentedSequence,
    skills: Optional[SkillMap] = None,
) -> list[str]:
    """Mechanically check every AugmentedSequence invariant against its original.

    Returns a list of violation messages; empty means the pair is valid.
    When a SkillMap is given, skill/skill_set replacement candidates are
    checked against it as well.
    """
    problems = []
    ori = original.interactions
    out = aug.interactions
    T, Tp = len(ori), len(out)
    dom = [a for a, _ in aug.sigma]
    img = [b for _, b in aug.sigma]

    if any(x >= y for x, y in zip(dom, dom[1:])) or any(
        x >= y for x, y in zip(img, img[1:])
    ):
        problems.append("sigma is not strictly increasing")
    for t, tp in aug.sigma:
        if not (0 <= t < T and 0 <= tp < Tp):
            problems.append(f"sigma pair ({t}, {tp}) out of range")
            return problems

    if aug.kind == "replacement":
        if Tp != T:
            problems.append(f"replacement changed length {T} -> {Tp}")
        if list(aug.sigma) != [(t, t) for t in range(T)]:
            problems.append("replacement sigma is not the identity")
        for t in range(min(T, Tp)):
            if t in aug.touched:
                if out[t].question_id == ori[t].question_id:
                    problems.append(f"index {t} touched but question unchanged")
                if aug.flavor != "interaction_random" and out[t].response != ori[t].response:
                    problems.append(f"index {t} response changed under {aug.flavor}")
                if skills is not None and aug.flavor == "skill":
                    if not (skills.skills_of(out[t].question_id)
                            & skills.skills_of(ori[t].question_id)):
                        problems.append(f"index {t} replacement shares no skill")
                if skills is not None and aug.flavor == "skill_set":
                    if skills.skills_of(out[t].question_id) != skills.skills_of(
                        ori[t].question_id
                    ):
                        problems.append(f"index {t} replacement skill set differs")
            elif out[t] != ori[t]:
                problems.append(f"untouched index {t} was modified")

    elif aug.kind == "insertion":
        if Tp != T + len(aug.touched):
            problems.append(f"length {Tp} != {T} + {len(aug.touched)} inserted")
        if not all(0 <= i < Tp for i in aug.touched):
            problems.append("inserted indices outside augmented range")
        expected_img = [i for i in range(Tp) if i not in aug.touched]
        if dom != list(range(T)) or img != expected_img:
            problems.append("sigma does not map originals onto non-inserted slots")
        for t, tp in aug.sigma:
            if out[tp] != ori[t]:
                problems.append(f"surviving interaction mismatch at sigma({t}) = {tp}")
        for i in aug.touched:
            if out[i].response != aug.target_response:
                problems.append(f"inserted index {i} response != {aug.target_response}")

    elif aug.kind == "deletion":
        if Tp != T - len(aug.touched):
            problems.append(f"length {Tp} != {T} - {len(aug.touched)} deleted")
        if not all(0 <= t < T for t in aug.touched):
            problems.append("deleted indices outside original range")
        expected_dom = [t for t in range(T) if t not in aug.touched]
        if dom != expected_dom or img != list(range(Tp)):
            problems.append("sigma does not enumerate survivors in order")
        for t, tp in aug.sigma:
            if out[tp] != ori[t]:
                problems.append(f"surviving interaction mismatch at sigma({t}) = {tp}")
        for t in aug.touched:
            if ori[t].response != aug.target_response:
                problems.append(f"deleted index {t} response != {aug.target_response}")

    else:
        problems.append(f"unknown augmentation kind {aug.kind!r}")

    return problems
