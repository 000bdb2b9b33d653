"""Synthetic student-interaction generator with monotone learning dynamics.

Questions within a skill share a base difficulty up to small noise, so
skill-based replacement swaps near-equivalent questions; every correct
answer raises the student's ability in the touched skills by a fixed
increment, so inserting/deleting correct answers moves the true future
correctness probability the way the monotonicity hypothesis expects.

All students start at ability 0: with a zero learning increment the
construction is symmetric and past correctness carries no information
about the current response.
"""

from __future__ import annotations

import numpy as np

from .augment import derive_seed
from .core import Dataset, InteractionSequence, SkillMap


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def generate(
    n_students: int,
    n_questions: int,
    n_skills: int,
    seq_len_range: tuple[int, int],
    seed: int,
    learn_increment: float = 0.4,
    difficulty_scale: float = 0.7,
    within_skill_noise: float = 0.08,
) -> tuple[Dataset, SkillMap]:
    """Returns (dataset, skill map); fully determined by the arguments."""
    lo, hi = seq_len_range
    if n_skills > n_questions:
        raise ValueError("need at least one question per skill")
    if min(n_students, n_questions, n_skills) < 1 or lo < 1 or hi < lo:
        raise ValueError("infeasible dimensions")

    rng = np.random.default_rng(derive_seed(seed, "synth"))
    skill_difficulty = rng.normal(0.0, difficulty_scale, size=n_skills)
    # center so the dataset-level correctness rate is stable across seeds
    skill_difficulty -= skill_difficulty.mean()

    question_skills: list[frozenset[int]] = []
    difficulty = np.empty(n_questions)
    for q in range(n_questions):
        primary = int(rng.integers(n_skills))
        skills = {primary}
        if n_skills > 1 and rng.random() < 0.5:
            second = int(rng.integers(n_skills - 1))
            if second >= primary:
                second += 1
            skills.add(second)
        question_skills.append(frozenset(skills))
        base = float(np.mean([skill_difficulty[s] for s in skills]))
        difficulty[q] = base + rng.normal(0.0, within_skill_noise)

    sequences = []
    for u in range(n_students):
        length = int(rng.integers(lo, hi + 1))
        ability = np.zeros(n_skills)
        events = []
        for _ in range(length):
            q = int(rng.integers(n_questions))
            skills = sorted(question_skills[q])
            a = float(np.mean(ability[skills]))
            p = float(_sigmoid(a - difficulty[q]))
            r = int(rng.random() < p)
            if r == 1:
                ability[skills] += learn_increment
            events.append((q, r))
        sequences.append(InteractionSequence(f"s{u:05d}", tuple(events)))

    skill_map = SkillMap({q: question_skills[q] for q in range(n_questions)})
    return Dataset(tuple(sequences), n_questions), skill_map


def dataset_stats(dataset: Dataset) -> dict:
    """Summary statistics used to check seed-to-seed stability."""
    lengths = np.array([len(s) for s in dataset.sequences])
    responses = np.concatenate([s.responses() for s in dataset.sequences])
    return {
        "n_students": len(dataset.sequences),
        "n_interactions": int(responses.size),
        "correct_rate": float(responses.mean()),
        "length_min": int(lengths.min()),
        "length_mean": float(lengths.mean()),
        "length_max": int(lengths.max()),
    }
