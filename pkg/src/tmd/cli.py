"""Command-line entry points.

`tmd serve` runs the HTTP service; `tmd generate` drives one pipeline run
from the shell; `tmd dataset build` forges an instruction dataset;
`tmd bench` measures repeated generations; `tmd sus score` aggregates
questionnaire CSVs; `tmd report` summarizes a persisted meter file.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .bench import run_bench
from .config import AppConfig, load_config
from .errors import TmdError
from .forge import (
    DEFAULT_CREATED_AT,
    ForgeConfig,
    OfflineCaptionBackend,
    OfflineRephraseBackend,
    RemoteCaptionBackend,
    RemoteRephraseBackend,
    build_dataset,
    export_dataset,
)
from .metering import MeterStore, RateCard, estimate_cost, latency_report, token_report
from .model import CreativePrompt, ImageInpaint, LibrarySelect, ScenarioKind
from .pipeline import StageFailure
from .processor import decode_png
from .service import build_pipeline, serve
from .sus import aggregate_sus, load_responses_csv


def _fail(exc: TmdError):
    if isinstance(exc, StageFailure):
        click.echo(f"error[{exc.stage}/{exc.code}]: {exc.message}", err=True)
    else:
        click.echo(f"error[{exc.code}]: {exc.message}", err=True)
    sys.exit(2)


def _load_app_config(path: str | None) -> AppConfig:
    return load_config(path) if path else AppConfig()


@click.group()
def main():
    """Defect-texture generation toolkit."""


@main.command("serve")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def serve_cmd(config_path):
    """Run the HTTP service."""
    try:
        serve(_load_app_config(config_path))
    except TmdError as exc:
        _fail(exc)


@main.command("generate")
@click.option("--scenario", type=click.Choice(["library", "prompt", "inpaint"]), required=True)
@click.option("--material", default=None, help="library scenario: material id")
@click.option("--defect", default=None, help="library scenario: defect id")
@click.option("--text", default=None, help="prompt scenario: free-text prompt")
@click.option("--image", "image_path", type=click.Path(exists=True), default=None)
@click.option("--mask", "mask_path", type=click.Path(exists=True), default=None)
@click.option("--instruction", default=None, help="inpaint scenario: edit instruction")
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def generate_cmd(scenario, material, defect, text, image_path, mask_path, instruction,
                 seed, out_path, config_path):
    """Run one generation and write the artifact PNG."""
    try:
        pipeline = build_pipeline(_load_app_config(config_path))
        if scenario == "library":
            if not material or not defect:
                raise click.UsageError("--material and --defect are required for library")
            request = LibrarySelect(request_id="", material_id=material, defect_id=defect,
                                    seed=seed)
        elif scenario == "prompt":
            if not text:
                raise click.UsageError("--text is required for prompt")
            request = CreativePrompt(request_id="", text=text, seed=seed)
        else:
            if not image_path or not instruction:
                raise click.UsageError("--image and --instruction are required for inpaint")
            image_px, _ = decode_png(Path(image_path).read_bytes())
            mask_arr = None
            if mask_path:
                mask_px, _ = decode_png(Path(mask_path).read_bytes())
                channel = mask_px[:, :, 0] if mask_px.ndim == 3 else mask_px
                mask_arr = (channel >= 128).astype("uint8")
            request = ImageInpaint(request_id="", image=image_px, instruction=instruction,
                                   mask=mask_arr, seed=seed)
        result = pipeline.run(request)
    except TmdError as exc:
        _fail(exc)

    destination = Path(out_path) if out_path else Path(f"{result.request_id}.png")
    destination.write_bytes(result.artifact_bytes)
    click.echo(json.dumps({
        "request_id": result.request_id,
        "artifact": str(destination),
        "tuned_prompt": result.tuned.refined_text,
        "wall_time_ms": result.meter.wall_time_ms,
        "cost_total": str(result.cost.total),
    }, indent=2))


@main.group("dataset")
def dataset_group():
    """Dataset forging commands."""


@dataset_group.command("build")
@click.option("--images", "images_dir", type=click.Path(exists=True, file_okay=False),
              required=True)
@click.option("--k", type=int, required=True)
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--backend", type=click.Choice(["offline", "remote"]), default="offline")
@click.option("--remote-url", default=None)
@click.option("--remote-model", default=None)
@click.option("--created-at", default=DEFAULT_CREATED_AT,
              help="timestamp stamped into the dataset header (fixed for reproducible files)")
def dataset_build_cmd(images_dir, k, seed, out_path, backend, remote_url, remote_model,
                      created_at):
    """Caption every PNG under --images and forge K rephrasings each."""
    paths = sorted(Path(images_dir).glob("*.png"))
    if not paths:
        click.echo(f"no .png files under {images_dir}", err=True)
        sys.exit(2)
    if backend == "remote":
        if not remote_url or not remote_model:
            raise click.UsageError("--remote-url and --remote-model are required for remote")
        caption_backend = RemoteCaptionBackend(remote_url, remote_model)
        rephrase_backend = RemoteRephraseBackend(remote_url, remote_model)
    else:
        caption_backend = OfflineCaptionBackend()
        rephrase_backend = OfflineRephraseBackend()
    config = ForgeConfig(k=k, seed=seed)
    try:
        dataset = build_dataset(
            [(str(p), p.read_bytes()) for p in paths],
            config,
            caption_backend,
            rephrase_backend,
            created_at=created_at,
        )
        export_dataset(dataset, out_path)
    except TmdError as exc:
        _fail(exc)
    click.echo(f"wrote {len(dataset.entries)} entries ({len(paths)} images x k={k}) "
               f"to {out_path}")


def _parse_scenarios(text: str) -> list[ScenarioKind]:
    if text == "all":
        return [ScenarioKind.LIBRARY, ScenarioKind.PROMPT, ScenarioKind.INPAINT]
    kinds = []
    for name in text.split(","):
        try:
            kinds.append(ScenarioKind(name.strip()))
        except ValueError:
            raise click.UsageError(f"unknown scenario {name.strip()!r}") from None
    return kinds


@main.command("bench")
@click.option("--runs", type=int, default=50, show_default=True)
@click.option("--scenarios", default="all", show_default=True,
              help="'all' or a comma list of library,prompt,inpaint")
@click.option("--mode", type=click.Choice(["offline", "remote"]), default="offline")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=0)
@click.option("--json-out", type=click.Path(), default=None)
def bench_cmd(runs, scenarios, mode, config_path, seed, json_out):
    """Benchmark repeated generations per scenario."""
    try:
        config = _load_app_config(config_path)
        if mode == "remote" and all(e.mode == "offline" for e in config.backends):
            raise click.UsageError("--mode remote requires remote backends in --config")
        pipeline = build_pipeline(config)
        report = run_bench(pipeline, _parse_scenarios(scenarios), runs, base_seed=seed)
    except TmdError as exc:
        _fail(exc)
    if json_out:
        Path(json_out).write_text(report.to_json() + "\n", encoding="utf-8")
    for entry in report.scenarios:
        status = "INCOMPLETE" if entry.incomplete else "ok"
        line = f"{entry.scenario:8s} n={entry.runs_completed}/{entry.runs_requested} {status}"
        if entry.latency:
            line += (f"  mean={entry.latency.mean_ms}ms p95={entry.latency.p95_ms}ms")
        if entry.cost:
            line += f"  cost={entry.cost.total}"
        click.echo(line)
    click.echo(f"total runs: {report.total_runs}")


@main.group("sus")
def sus_group():
    """Questionnaire scoring commands."""


@sus_group.command("score")
@click.option("--input", "input_path", type=click.Path(exists=True), required=True)
@click.option("--by", default="scenario", show_default=True,
              help="comma list of scenario,platform")
@click.option("--json", "as_json", is_flag=True, default=False)
def sus_score_cmd(input_path, by, as_json):
    """Score a response CSV and print per-group aggregates."""
    try:
        responses = load_responses_csv(input_path)
        report = aggregate_sus(responses, by=tuple(k.strip() for k in by.split(",")))
    except (TmdError, ValueError) as exc:
        if isinstance(exc, TmdError):
            _fail(exc)
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(report.to_json() if as_json else report.to_table())


@main.command("report")
@click.option("--meters", "meters_path", type=click.Path(exists=True), required=True)
@click.option("--rate-card", "rate_card_path", type=click.Path(exists=True), default=None)
def report_cmd(meters_path, rate_card_path):
    """Summarize a persisted meter file: latency, tokens, cost per scenario."""
    try:
        records = MeterStore(meters_path).snapshot()
        rates = RateCard.load(rate_card_path) if rate_card_path else RateCard.default()
        latency = {k: v.to_dict() for k, v in latency_report(records).items()}
        tokens = {k: v.to_dict() for k, v in token_report(records).items()}
        priced = [r for r in records if r.backend_id in rates.rates]
        by_scenario: dict[str, list] = {}
        for rec in priced:
            by_scenario.setdefault(rec.scenario, []).append(rec)
        cost = {name: estimate_cost(recs, rates).to_dict()
                for name, recs in sorted(by_scenario.items())}
        if priced:
            cost["total"] = estimate_cost(priced, rates).to_dict()
    except TmdError as exc:
        _fail(exc)
    click.echo(json.dumps(
        {"n_records": len(records), "latency": latency, "tokens": tokens, "cost": cost},
        indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
