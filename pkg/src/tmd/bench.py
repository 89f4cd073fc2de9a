"""Repeated-generation benchmark: N runs per scenario through the full
pipeline, reporting latency, token, and cost summaries per scenario.

A scenario aborts after 3 consecutive failures and its partial results are
flagged incomplete; other scenarios still run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .metering import (
    CostBreakdown,
    LatencyStats,
    MeterRecord,
    TokenStats,
    estimate_cost,
    latency_report,
    token_report,
)
from .model import CreativePrompt, ImageInpaint, LibrarySelect, ScenarioKind, ScenarioRequest
from .pipeline import Pipeline, StageFailure
from .synth import render_texture

__all__ = ["BenchScenario", "BenchReport", "run_bench", "ABORT_AFTER"]

# Consecutive-failure threshold that aborts one scenario's loop.
ABORT_AFTER = 3

_BENCH_PROMPT = "crack on the rail"
_BENCH_INSTRUCTION = "add rust in this area"
_BENCH_BASE_PROMPT = "clean steel rail surface"


def _bench_request(kind: ScenarioKind, seed: int, base: Optional[np.ndarray]) -> ScenarioRequest:
    if kind is ScenarioKind.LIBRARY:
        return LibrarySelect(request_id="", material_id="rail_head", defect_id="crack", seed=seed)
    if kind is ScenarioKind.PROMPT:
        return CreativePrompt(request_id="", text=_BENCH_PROMPT, seed=seed)
    mask = np.zeros(base.shape[:2], dtype=np.uint8)
    h, w = base.shape[:2]
    mask[h // 4 : h // 2, w // 4 : w // 2] = 1
    return ImageInpaint(
        request_id="", image=base, instruction=_BENCH_INSTRUCTION, mask=mask, seed=seed
    )


@dataclass(frozen=True)
class BenchScenario:
    scenario: str
    runs_requested: int
    runs_completed: int
    incomplete: bool
    latency: Optional[LatencyStats]
    tokens: Optional[TokenStats]
    cost: Optional[CostBreakdown]

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "runs_requested": self.runs_requested,
            "runs_completed": self.runs_completed,
            "incomplete": self.incomplete,
            "latency": self.latency.to_dict() if self.latency else None,
            "tokens": self.tokens.to_dict() if self.tokens else None,
            "cost": self.cost.to_dict() if self.cost else None,
        }


@dataclass(frozen=True)
class BenchReport:
    scenarios: tuple[BenchScenario, ...]

    @property
    def total_runs(self) -> int:
        return sum(s.runs_completed for s in self.scenarios)

    def to_dict(self) -> dict:
        return {
            "total_runs": self.total_runs,
            "scenarios": [s.to_dict() for s in self.scenarios],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def run_bench(
    pipeline: Pipeline,
    scenarios: Sequence[ScenarioKind],
    runs_per_scenario: int,
    base_seed: int = 0,
) -> BenchReport:
    """Run ``runs_per_scenario`` generations per scenario; seeds are
    ``base_seed + run_index`` so reruns are reproducible."""
    if runs_per_scenario < 1:
        raise ValueError("runs_per_scenario must be >= 1")

    # One deterministic base photo shared by all inpaint runs.
    base = None
    if ScenarioKind.INPAINT in scenarios:
        base = render_texture(_BENCH_BASE_PROMPT, 512, 512, seed=1)

    results = []
    for kind in scenarios:
        records: list[MeterRecord] = []
        consecutive = 0
        incomplete = False
        for i in range(runs_per_scenario):
            request = _bench_request(kind, base_seed + i, base)
            try:
                outcome = pipeline.run(request)
            except StageFailure:
                consecutive += 1
                if consecutive >= ABORT_AFTER:
                    incomplete = True
                    break
                continue
            consecutive = 0
            records.append(outcome.meter)
        latency = latency_report(records).get(kind.value) if records else None
        tokens = token_report(records).get(kind.value) if records else None
        cost = estimate_cost(records, pipeline.rate_card) if records else None
        results.append(
            BenchScenario(
                scenario=kind.value,
                runs_requested=runs_per_scenario,
                runs_completed=len(records),
                incomplete=incomplete,
                latency=latency,
                tokens=tokens,
                cost=cost,
            )
        )
    return BenchReport(scenarios=tuple(results))
