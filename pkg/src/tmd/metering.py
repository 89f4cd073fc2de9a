"""Token counting, wall-time records, and cost estimation.

Costs follow the two-term model

    total = sum_i tokens_i * token_rate_i  +  sum_j seconds_j * second_rate_j

where both sums run over one list of meter records and each record resolves
its own rates through ``backend_id``.  Arithmetic is exact decimal up to a
single round-half-even quantization to micro-currency at the very end, so
cost breakdowns are additive and monotone.

The token counter is a deterministic splitter, not a vendor BPE: a token is
either a maximal run of word characters (``\\w+``) or a single non-space,
non-word character.  Example: ``"A transverse crack, approximately 2 inches
long"`` counts 8 tokens (the comma is its own token).  Remote backends report
their own authoritative usage; the splitter serves offline backends and
cross-checks.
"""

from __future__ import annotations

import json
import math
import re
import statistics
import threading
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal, localcontext
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import TmdError

__all__ = [
    "MICRO",
    "count_tokens",
    "MeterRecord",
    "BackendRate",
    "RateCard",
    "CostBreakdown",
    "estimate_cost",
    "LatencyStats",
    "latency_report",
    "TokenStats",
    "token_report",
    "MeterStore",
    "UnknownBackendRate",
]

MICRO = Decimal("0.000001")

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class UnknownBackendRate(TmdError):
    code = "UnknownBackendRate"


def count_tokens(text: str) -> int:
    """Count tokens of ``text`` under the documented splitter."""
    return len(_TOKEN_RE.findall(text))


@dataclass(frozen=True)
class MeterRecord:
    """Usage record for a single generation task.

    ``wall_time_ms`` is the client-observed end-to-end wall time; optional
    ``stage_spans`` holds per-stage ``(start_ms, end_ms)`` offsets relative
    to the start of the request so stage ordering stays observable.
    """

    request_id: str
    scenario: str
    backend_id: str
    prompt_tokens: int
    completion_tokens: int
    wall_time_ms: int
    stage_spans: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be >= 0")
        if self.wall_time_ms < 0:
            raise ValueError("wall_time_ms must be >= 0")

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def to_dict(self) -> dict:
        d = {
            "request_id": self.request_id,
            "scenario": self.scenario,
            "backend_id": self.backend_id,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "wall_time_ms": self.wall_time_ms,
        }
        if self.stage_spans:
            d["stages"] = {k: [v[0], v[1]] for k, v in self.stage_spans.items()}
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "MeterRecord":
        spans = {k: (float(v[0]), float(v[1])) for k, v in d.get("stages", {}).items()}
        return cls(
            request_id=str(d["request_id"]),
            scenario=str(d["scenario"]),
            backend_id=str(d["backend_id"]),
            prompt_tokens=int(d["prompt_tokens"]),
            completion_tokens=int(d["completion_tokens"]),
            wall_time_ms=int(d["wall_time_ms"]),
            stage_spans=spans,
        )


@dataclass(frozen=True)
class BackendRate:
    """Prices for one backend: currency per token and per second."""

    token_rate: Decimal
    second_rate: Decimal

    def __post_init__(self):
        if self.token_rate < 0 or self.second_rate < 0:
            raise ValueError("rates must be >= 0")


@dataclass(frozen=True)
class RateCard:
    """Per-backend rate table keyed by backend_id."""

    rates: Mapping[str, BackendRate]

    def rate_for(self, backend_id: str) -> BackendRate:
        try:
            return self.rates[backend_id]
        except KeyError:
            raise UnknownBackendRate(f"no rate entry for backend {backend_id!r}") from None

    @classmethod
    def from_dict(cls, d: Mapping) -> "RateCard":
        rates = {}
        for backend_id, entry in d.items():
            rates[backend_id] = BackendRate(
                token_rate=_as_decimal(entry["token_rate"]),
                second_rate=_as_decimal(entry["second_rate"]),
            )
        return cls(rates=rates)

    @classmethod
    def load(cls, path: str | Path) -> "RateCard":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh, parse_float=Decimal, parse_int=Decimal)
        return cls.from_dict(raw)

    @classmethod
    def default(cls) -> "RateCard":
        """The packaged rate table (data/rate_card.json)."""
        from importlib import resources

        ref = resources.files("tmd.data").joinpath("rate_card.json")
        with ref.open("r", encoding="utf-8") as fh:
            raw = json.load(fh, parse_float=Decimal, parse_int=Decimal)
        return cls.from_dict(raw)


def _as_decimal(v) -> Decimal:
    if isinstance(v, Decimal):
        return v
    if isinstance(v, float):
        # Guard against silent binary-float noise in programmatic rate cards.
        return Decimal(str(v))
    return Decimal(v)


@dataclass(frozen=True)
class CostBreakdown:
    """Cost totals in integer micro-currency; ``total = token + time`` exactly."""

    token_cost_micro: int
    time_cost_micro: int
    total_micro: int
    n: int

    def __post_init__(self):
        if self.total_micro != self.token_cost_micro + self.time_cost_micro:
            raise ValueError("total must equal token_cost + time_cost")

    @property
    def token_cost(self) -> Decimal:
        return Decimal(self.token_cost_micro) * MICRO

    @property
    def time_cost(self) -> Decimal:
        return Decimal(self.time_cost_micro) * MICRO

    @property
    def total(self) -> Decimal:
        return Decimal(self.total_micro) * MICRO

    def __add__(self, other: "CostBreakdown") -> "CostBreakdown":
        return CostBreakdown(
            token_cost_micro=self.token_cost_micro + other.token_cost_micro,
            time_cost_micro=self.time_cost_micro + other.time_cost_micro,
            total_micro=self.total_micro + other.total_micro,
            n=self.n + other.n,
        )

    def to_dict(self) -> dict:
        return {
            "token_cost": str(self.token_cost),
            "time_cost": str(self.time_cost),
            "total": str(self.total),
            "n": self.n,
        }


def estimate_cost(records: Sequence[MeterRecord], rates: RateCard) -> CostBreakdown:
    """Evaluate the two-term cost model over ``records``.

    Raises:
        UnknownBackendRate: a record's backend_id has no rate entry.
    """
    with localcontext() as ctx:
        ctx.prec = 50
        token_cost = Decimal(0)
        time_cost = Decimal(0)
        for rec in records:
            rate = rates.rate_for(rec.backend_id)
            token_cost += Decimal(rec.total_tokens) * rate.token_rate
            # scaleb(-3) converts ms to s without a division step
            time_cost += Decimal(rec.wall_time_ms).scaleb(-3) * rate.second_rate
        token_micro = int(token_cost.scaleb(6).quantize(Decimal(1), rounding=ROUND_HALF_EVEN))
        time_micro = int(time_cost.scaleb(6).quantize(Decimal(1), rounding=ROUND_HALF_EVEN))
    return CostBreakdown(
        token_cost_micro=token_micro,
        time_cost_micro=time_micro,
        total_micro=token_micro + time_micro,
        n=len(records),
    )


@dataclass(frozen=True)
class LatencyStats:
    n: int
    mean_ms: int
    min_ms: int
    max_ms: int
    p50_ms: int
    p95_ms: int

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mean_ms": self.mean_ms,
            "min_ms": self.min_ms,
            "max_ms": self.max_ms,
            "p50_ms": self.p50_ms,
            "p95_ms": self.p95_ms,
        }


def _nearest_rank(sorted_vals: Sequence[int], pct: float) -> int:
    # k-th smallest with k = ceil(pct/100 * n), 1-indexed
    k = max(1, math.ceil(pct / 100.0 * len(sorted_vals)))
    return sorted_vals[k - 1]


def latency_report(
    records: Iterable[MeterRecord], key: str = "scenario"
) -> dict[str, LatencyStats]:
    """Per-group wall-time stats; groups with no records are omitted.

    ``key`` selects the grouping attribute (``scenario`` or ``backend_id``).
    Percentiles use the nearest-rank method on sorted values; the mean is
    rounded to the nearest millisecond.
    """
    groups: dict[str, list[int]] = {}
    for rec in records:
        groups.setdefault(getattr(rec, key), []).append(rec.wall_time_ms)
    out = {}
    for name, vals in sorted(groups.items()):
        vals.sort()
        out[name] = LatencyStats(
            n=len(vals),
            mean_ms=round(statistics.fmean(vals)),
            min_ms=vals[0],
            max_ms=vals[-1],
            p50_ms=_nearest_rank(vals, 50),
            p95_ms=_nearest_rank(vals, 95),
        )
    return out


@dataclass(frozen=True)
class TokenStats:
    n: int
    prompt_mean: float
    completion_mean: float
    total_mean: float
    total_min: int
    total_max: int

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "prompt_mean": self.prompt_mean,
            "completion_mean": self.completion_mean,
            "total_mean": self.total_mean,
            "total_min": self.total_min,
            "total_max": self.total_max,
        }


def token_report(records: Iterable[MeterRecord], key: str = "scenario") -> dict[str, TokenStats]:
    """Per-group token usage summary (prompt, completion, and combined)."""
    groups: dict[str, list[MeterRecord]] = {}
    for rec in records:
        groups.setdefault(getattr(rec, key), []).append(rec)
    out = {}
    for name, recs in sorted(groups.items()):
        totals = [r.total_tokens for r in recs]
        out[name] = TokenStats(
            n=len(recs),
            prompt_mean=statistics.fmean(r.prompt_tokens for r in recs),
            completion_mean=statistics.fmean(r.completion_tokens for r in recs),
            total_mean=statistics.fmean(totals),
            total_min=min(totals),
            total_max=max(totals),
        )
    return out


class MeterStore:
    """Append-only JSON Lines persistence for meter records.

    Appends are serialized behind a lock; reads take a consistent snapshot.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, record: MeterRecord) -> None:
        line = json.dumps(record.to_dict(), sort_keys=True, separators=(",", ":"))
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    def snapshot(self) -> list[MeterRecord]:
        with self._lock:
            if not self.path.exists():
                return []
            text = self.path.read_text(encoding="utf-8")
        records = []
        for line in text.splitlines():
            if line.strip():
                records.append(MeterRecord.from_dict(json.loads(line)))
        return records
