"""Delimited-log ingestion with dense id re-indexing, plus the matching
exporters (export -> ingest round-trips exactly).

interactions file: header student_id,order_key,question_id,correct
skills file:       header question_id,skill_id (multiple rows per question)

Rows whose correct value is numeric but not 0/1 are dropped and counted
(the ASSISTments2015 filter rule); structurally broken rows are errors
reported with their line number. Ids sort numerically when every id in the
column parses as a number, lexicographically otherwise, and are re-indexed
densely in that order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

from .core import Dataset, InteractionSequence, SkillMap

INTERACTION_COLUMNS = ("student_id", "order_key", "question_id", "correct")
SKILL_COLUMNS = ("question_id", "skill_id")


class IngestError(ValueError):
    pass


@dataclass
class IngestResult:
    dataset: Dataset
    skills: Optional[SkillMap]
    question_map: dict[str, int]  # original id -> dense id
    skill_map: Optional[dict[str, int]]
    n_dropped: int


def _sort_ids(ids) -> list[str]:
    ids = list(ids)
    try:
        return sorted(ids, key=float)
    except ValueError:
        return sorted(ids)


def _read_rows(path, required: tuple[str, ...], what: str):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise IngestError(f"{what} file missing column(s): {', '.join(missing)}")
        for line_no, row in enumerate(reader, start=2):
            if None in row.values() or any(row[c] is None or row[c] == ""
                                           for c in required):
                raise IngestError(f"{what} file line {line_no}: malformed row")
            yield line_no, row


def ingest(interactions_path, skills_path=None) -> IngestResult:
    """Parse, filter, densely re-index, and group into per-student sequences."""
    raw = []
    n_dropped = 0
    for line_no, row in _read_rows(interactions_path, INTERACTION_COLUMNS,
                                   "interactions"):
        try:
            correct = float(row["correct"])
        except ValueError:
            raise IngestError(
                f"interactions file line {line_no}: unparseable correct value "
                f"{row['correct']!r}"
            ) from None
        if correct not in (0.0, 1.0):
            n_dropped += 1
            continue
        raw.append((row["student_id"], row["order_key"], row["question_id"],
                    int(correct)))
    if not raw:
        raise IngestError("interactions file has no usable rows")

    question_map = {q: i for i, q in enumerate(_sort_ids({r[2] for r in raw}))}

    # order keys sort numerically only when the whole column is numeric
    try:
        order_key = lambda key: float(key)  # noqa: E731
        for _, key, _, _ in raw:
            float(key)
    except ValueError:
        order_key = lambda key: key  # noqa: E731

    by_student: dict[str, list] = {}
    for student, key, question, correct in raw:
        by_student.setdefault(student, []).append((order_key(key),
                                                   question_map[question], correct))
    sequences = []
    for student in _sort_ids(by_student):
        events = sorted(by_student[student], key=lambda e: e[0])
        sequences.append(
            InteractionSequence(student, tuple((q, r) for _, q, r in events))
        )
    dataset = Dataset(tuple(sequences), len(question_map))

    skills = None
    skill_map = None
    if skills_path is not None:
        pairs = []
        for line_no, row in _read_rows(skills_path, SKILL_COLUMNS, "skills"):
            if row["question_id"] not in question_map:
                raise IngestError(
                    f"skills file line {line_no}: unknown question "
                    f"{row['question_id']!r}"
                )
            pairs.append((row["question_id"], row["skill_id"]))
        skill_map = {s: i for i, s in enumerate(_sort_ids({p[1] for p in pairs}))}
        entries: dict[int, set] = {}
        for question, skill in pairs:
            entries.setdefault(question_map[question], set()).add(skill_map[skill])
        skills = SkillMap(entries)
        missing = skills.missing_from(range(len(question_map)))
        if missing:
            raise IngestError(
                f"skills file covers {len(question_map) - len(missing)} of "
                f"{len(question_map)} questions; every question needs a skill "
                f"row (or omit the skills file entirely)"
            )

    return IngestResult(dataset, skills, question_map, skill_map, n_dropped)


def export_interactions(path, dataset: Dataset) -> None:
    """Write the standard interactions CSV; order_key is the position index."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(INTERACTION_COLUMNS)
        for seq in dataset.sequences:
            for t, (q, r) in enumerate(seq.interactions):
                writer.writerow([seq.student_id, t, q, r])


def export_skills(path, skills: SkillMap) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SKILL_COLUMNS)
        for q in sorted(skills.entries):
            for s in sorted(skills.entries[q]):
                writer.writerow([q, s])


def export_id_map(path, id_map: dict[str, int], original_label: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([original_label, "dense_id"])
        for original, dense in sorted(id_map.items(), key=lambda kv: kv[1]):
            writer.writerow([original, dense])
