"""Shared fixtures and helpers for the suite."""

import re
from pathlib import Path

import numpy as np
import pytest

from tmd.config import AppConfig
from tmd.service import build_pipeline

FIXTURES = Path(__file__).parent / "fixtures"

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def strip_text_chunk(png: bytes, key: str = "tmdf") -> bytes:
    """PNG bytes with any tEXt chunk keyed ``key`` removed.

    Lets byte-level comparisons ignore per-run provenance (request id,
    measured wall time) while still covering every other byte.
    """
    assert png[:8] == _PNG_MAGIC, "not a PNG stream"
    out = bytearray(png[:8])
    needle = key.encode("latin-1") + b"\x00"
    pos = 8
    while pos < len(png):
        length = int.from_bytes(png[pos : pos + 4], "big")
        ctype = png[pos + 4 : pos + 8]
        end = pos + 12 + length
        if not (ctype == b"tEXt" and png[pos + 8 : pos + 8 + length].startswith(needle)):
            out += png[pos:end]
        pos = end
    return bytes(out)


def make_offline_config(tmp_path: Path) -> AppConfig:
    return AppConfig(
        artifact_dir=str(tmp_path / "artifacts"),
        meter_path=str(tmp_path / "meters.jsonl"),
        dataset_dir=str(tmp_path / "datasets"),
    )


@pytest.fixture
def offline_pipeline(tmp_path):
    """A fully offline pipeline writing all state under tmp_path."""
    return build_pipeline(make_offline_config(tmp_path))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_rgba(rng, height: int, width: int) -> np.ndarray:
    px = rng.integers(0, 256, size=(height, width, 4), dtype=np.uint8)
    px[:, :, 3] = 255
    return px


_CRITERION_LABELS = {
    1: "cost model exactness (fixed-point, oracle-checked)",
    2: "dataset forge: 5 captions x K=10, dedup, attempt cap",
    3: "routing table exhaustive",
    4: "masked compositing vs per-pixel oracle",
    5: "standardization idempotence + crop geometry",
    6: "usability scoring extremes, properties, pinned cohort",
    7: "bench shape: 50 runs x 3 scenarios, independent recount",
    8: "end-to-end offline determinism incl. 16-way concurrency",
    9: "dataset export/import round trip + corrupt imports",
}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    seen: dict[int, bool] = {}
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            if "test_acceptance" not in report.nodeid:
                continue
            match = re.search(r"criterion_(\d+)", report.nodeid)
            if match:
                num = int(match.group(1))
                seen[num] = seen.get(num, True) and outcome == "passed"
    if not seen:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for num in sorted(seen):
        verdict = "PASS" if seen[num] else "FAIL"
        label = _CRITERION_LABELS.get(num, "")
        terminalreporter.write_line(f"{verdict}  criterion {num}: {label}")
