"""Usability questionnaire scoring.

Ten items rated 1-5; items 6 and 7 are reverse-scored.  A response maps to
[0, 100] via the canonical scheme: positive items contribute (score - 1),
reverse items contribute (5 - score), and the sum is multiplied by 2.5.
Per-question aggregates are means of the raw pre-reversal ratings.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from statistics import fmean
from typing import Iterable, Sequence

from .errors import TmdError

__all__ = [
    "SUSResponse",
    "SUSGroup",
    "SUSReport",
    "InvalidScore",
    "REVERSE_ITEMS",
    "score_sus",
    "aggregate_sus",
    "load_responses_csv",
]

# 1-based indices of the reverse-scored items.
REVERSE_ITEMS = (6, 7)

PLATFORMS = frozenset({"ios", "android"})
EXPERTISE = frozenset({"expert", "non_expert"})


class InvalidScore(TmdError):
    code = "InvalidScore"


@dataclass(frozen=True)
class SUSResponse:
    item_scores: tuple[int, ...]
    scenario: int
    platform: str
    expertise: str

    def __post_init__(self):
        if len(self.item_scores) != 10:
            raise InvalidScore(f"expected 10 item scores, got {len(self.item_scores)}")
        for i, score in enumerate(self.item_scores, start=1):
            if not isinstance(score, int) or not 1 <= score <= 5:
                raise InvalidScore(f"item {i} score {score!r} outside [1, 5]")
        if self.scenario not in (1, 2, 3):
            raise InvalidScore(f"scenario must be 1, 2 or 3, got {self.scenario!r}")
        if self.platform not in PLATFORMS:
            raise InvalidScore(f"platform must be one of {sorted(PLATFORMS)}")
        if self.expertise not in EXPERTISE:
            raise InvalidScore(f"expertise must be one of {sorted(EXPERTISE)}")


def score_sus(r: SUSResponse) -> float:
    """One response's usability score on [0, 100]."""
    total = 0
    for i, score in enumerate(r.item_scores, start=1):
        total += (5 - score) if i in REVERSE_ITEMS else (score - 1)
    return total * 2.5


@dataclass(frozen=True)
class SUSGroup:
    """One aggregate row: group key items, cohort size, mean score, and the
    ten raw per-question means."""

    key: tuple[tuple[str, object], ...]
    n: int
    score_mean: float
    question_means: tuple[float, ...]

    def __post_init__(self):
        if not 0.0 <= self.score_mean <= 100.0:
            raise InvalidScore(f"score mean {self.score_mean} outside [0, 100]")

    def to_dict(self) -> dict:
        return {
            **{name: value for name, value in self.key},
            "n": self.n,
            "score_mean": self.score_mean,
            "question_means": list(self.question_means),
        }


@dataclass(frozen=True)
class SUSReport:
    by: tuple[str, ...]
    groups: tuple[SUSGroup, ...]

    def to_dict(self) -> dict:
        return {"by": list(self.by), "groups": [g.to_dict() for g in self.groups]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_table(self) -> str:
        """Aligned plain-text table: one row per group, means to one decimal."""
        headers = [*self.by, "n", "score"] + [f"q{i}" for i in range(1, 11)]
        rows = []
        for g in self.groups:
            cells = [str(value) for _, value in g.key]
            cells.append(str(g.n))
            cells.append(f"{g.score_mean:.1f}")
            cells.extend(f"{m:.1f}" for m in g.question_means)
            rows.append(cells)
        widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
                  for i, h in enumerate(headers)]
        def fmt(cells: Sequence[str]) -> str:
            return "  ".join(c.rjust(w) for c, w in zip(cells, widths))
        return "\n".join([fmt(headers)] + [fmt(r) for r in rows])


def aggregate_sus(
    responses: Iterable[SUSResponse],
    by: Sequence[str] = ("scenario",),
) -> SUSReport:
    """Group responses by the given keys ("scenario" and/or "platform") and
    report per-group mean scores plus raw per-question means.  Empty groups
    are simply absent."""
    for name in by:
        if name not in ("scenario", "platform"):
            raise ValueError(f"unknown group key {name!r}")
    buckets: dict[tuple, list[SUSResponse]] = {}
    for r in responses:
        key = tuple((name, getattr(r, name)) for name in by)
        buckets.setdefault(key, []).append(r)
    groups = []
    for key in sorted(buckets, key=lambda k: tuple(str(v) for _, v in k)):
        cohort = buckets[key]
        question_means = tuple(
            fmean(r.item_scores[i] for r in cohort) for i in range(10)
        )
        groups.append(
            SUSGroup(
                key=key,
                n=len(cohort),
                score_mean=fmean(score_sus(r) for r in cohort),
                question_means=question_means,
            )
        )
    return SUSReport(by=tuple(by), groups=tuple(groups))


_CSV_COLUMNS = ["scenario", "platform", "expertise"] + [f"q{i}" for i in range(1, 11)]


def load_responses_csv(path) -> list[SUSResponse]:
    """Read responses from a CSV with header scenario,platform,expertise,q1..q10.

    Raises InvalidScore naming the offending line for any structural or
    range problem.
    """
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            raise InvalidScore("line 1: empty file, expected a header row")
        missing = [c for c in _CSV_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise InvalidScore(f"line 1: header missing columns {missing}")
        responses = []
        for row in reader:
            lineno = reader.line_num
            try:
                scores = tuple(int(row[f"q{i}"]) for i in range(1, 11))
                responses.append(
                    SUSResponse(
                        item_scores=scores,
                        scenario=int(row["scenario"]),
                        platform=row["platform"].strip(),
                        expertise=row["expertise"].strip(),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise InvalidScore(f"line {lineno}: {exc}") from exc
            except InvalidScore as exc:
                raise InvalidScore(f"line {lineno}: {exc.message}") from exc
    return responses
