"""Full-study orchestration: config in, report directory out.

Output layout (all inside the run's --out directory, which must be fresh):

    report.json                     structured results for every study
    manifest.json                   digest, versions, paths, failure ledger
    transcripts/<cell>.jsonl        raw per-trial transcripts, append-only
    tables/*.json, tables/*.tsv     comparison tables
    plots/*.tsv                     columnar series for plotting
"""

from __future__ import annotations

import logging
import os
import time

from . import reporting
from .backends import make_backend
from .config import ExperimentConfig
from .core import Alphabet
from .errors import ConfigError, InsufficientStepsError, SampleProbeError
from .harness import (
    first_token_study,
    prior_study,
    quota_analysis,
    run_cell,
    temperature_sweep,
)

log = logging.getLogger("sampleprobe")


def _fresh_dir(path: str) -> None:
    if os.path.exists(path) and os.listdir(path):
        raise ConfigError(
            f"output directory {path!r} is not empty; runs never overwrite"
        )
    os.makedirs(path, exist_ok=True)


def _prior_alphabet(cfg: ExperimentConfig) -> Alphabet:
    if cfg.prior_labels:
        return Alphabet.from_labels(cfg.prior_labels)
    return cfg.tasks[0].spec.effective_alphabet()


class _Out:
    """Tracks every file written under the run directory for the manifest."""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self.paths: list[str] = []

    def abspath(self, rel: str) -> str:
        return os.path.join(self.out_dir, rel)

    def register(self, rel: str) -> None:
        if os.path.exists(self.abspath(rel)):
            self.paths.append(rel)


def run_experiment(
    cfg: ExperimentConfig,
    raw_config: dict,
    out_dir: str | None = None,
    seed: int | None = None,
    jobs: int = 1,
) -> dict:
    """Execute every configured study and write the full report tree.

    Deterministic for synthetic/replay backends: cells run in config order,
    trials are seeded by (seed, trial index), and aggregation folds in trial
    order, so --jobs never changes any emitted number.
    """
    out_dir = out_dir or cfg.out_dir
    seed = cfg.seed if seed is None else int(seed)
    started = time.monotonic()
    _fresh_dir(out_dir)

    out = _Out(out_dir)
    digest = reporting.config_digest(raw_config)
    failures: list[dict] = []
    backends = [(b, make_backend(b.config, seed)) for b in cfg.backends]

    report: dict = {
        "config_digest": digest,
        "toolkit_version": reporting.TOOLKIT_VERSION,
        "seed": seed,
        "cells": [],
        "studies": {},
    }

    sampling_cells = []
    if "sampling" in cfg.studies:
        for entry, backend in backends:
            for task in cfg.tasks:
                cell_id = f"{entry.config.model}__{task.task_id}"
                store_rel = os.path.join("transcripts", f"{cell_id}.jsonl")
                log.info("cell %s: %d trials", cell_id, cfg.runs_per_cell)
                try:
                    cell = run_cell(
                        backend,
                        entry.config,
                        task.task_id,
                        task.spec,
                        cfg.runs_per_cell,
                        store_path=out.abspath(store_rel),
                        jobs=jobs,
                        thresholds=cfg.thresholds,
                        cell_id=cell_id,
                    )
                except SampleProbeError as exc:
                    failures.append(
                        {"cell": cell_id, "error": f"{type(exc).__name__}: {exc}"}
                    )
                    log.error("cell %s failed: %s", cell_id, exc)
                    out.register(store_rel)
                    continue
                out.register(store_rel)
                sampling_cells.append(cell)
                for trial in cell.trials:
                    if trial.error:
                        failures.append(
                            {"cell": cell_id, "trial": trial.trial_id, "error": trial.error}
                        )
        if sampling_cells:
            report["cells"] = [reporting.cell_to_dict(c) for c in sampling_cells]
            reporting.emit_table(
                sampling_cells,
                "sampling",
                out.abspath(os.path.join("tables", "sampling.json")),
                out.abspath(os.path.join("tables", "sampling.tsv")),
            )
            out.register(os.path.join("tables", "sampling.json"))
            out.register(os.path.join("tables", "sampling.tsv"))
            rel = os.path.join("plots", "escore_bars.tsv")
            reporting.emit_escore_bars(sampling_cells, out.abspath(rel))
            out.register(rel)
            for cell in sampling_cells:
                rel = os.path.join("plots", f"step_trace__{cell.cell_id}.tsv")
                reporting.emit_step_trace(cell, out.abspath(rel))
                out.register(rel)

    if "quota" in cfg.studies and sampling_cells:
        quota_entries = []
        quota_report = {}
        for cell in sampling_cells:
            try:
                analysis = quota_analysis(cell.trials, cell.task)
            except InsufficientStepsError as exc:
                failures.append(
                    {"cell": cell.cell_id, "error": f"InsufficientSteps: {exc}"}
                )
                continue
            quota_entries.append((cell.cell_id, analysis))
            quota_report[cell.cell_id] = reporting.quota_to_dict(analysis)
        if quota_entries:
            report["studies"]["quota"] = quota_report
            rel = os.path.join("plots", "quota_r.tsv")
            reporting.emit_quota_bars(quota_entries, out.abspath(rel))
            out.register(rel)

    if "sweep" in cfg.studies:
        if not cfg.temperature_grid:
            raise ConfigError("sweep study requires a temperature_grid")
        sweep_report = {}
        for entry, backend in backends:
            for task in cfg.tasks:
                if task.spec.kind != "simulated":
                    continue
                name = f"{entry.config.model}__{task.task_id}"
                store_rel = os.path.join("transcripts", f"sweep__{name}.jsonl")
                cells = temperature_sweep(
                    backend,
                    entry.config,
                    task.task_id,
                    task.spec,
                    cfg.temperature_grid,
                    cfg.runs_per_cell,
                    store_path=out.abspath(store_rel),
                    jobs=jobs,
                    thresholds=cfg.thresholds,
                )
                out.register(store_rel)
                sweep_report[name] = [
                    {
                        "temperature": c.temperature,
                        "e_score": c.aggregate["e_score"][0],
                        "std": c.aggregate["e_score"][1],
                    }
                    for c in cells
                ]
                rel = os.path.join("plots", f"temperature__{name}.tsv")
                reporting.emit_temperature_curve(cells, out.abspath(rel))
                out.register(rel)
        report["studies"]["sweep"] = sweep_report

    if "prior" in cfg.studies:
        alphabet = _prior_alphabet(cfg)
        prior_cells = []
        for entry, backend in backends:
            store_rel = os.path.join(
                "transcripts", f"prior__{entry.config.model}.jsonl"
            )
            cell = prior_study(
                backend,
                entry.config,
                alphabet,
                cfg.runs_per_cell,
                store_path=out.abspath(store_rel),
                jobs=jobs,
            )
            out.register(store_rel)
            prior_cells.append(cell)
        report["studies"]["prior"] = [reporting.cell_to_dict(c) for c in prior_cells]
        reporting.emit_table(
            prior_cells,
            "prior",
            out.abspath(os.path.join("tables", "prior.json")),
            out.abspath(os.path.join("tables", "prior.tsv")),
        )
        out.register(os.path.join("tables", "prior.json"))
        out.register(os.path.join("tables", "prior.tsv"))

    if "first_token" in cfg.studies:
        if not cfg.first_token_corpus:
            raise ConfigError("first_token study requires first_token_corpus")
        ft_report = {}
        ft_results = {}
        for entry, backend in backends:
            store_rel = os.path.join(
                "transcripts", f"first_token__{entry.config.model}.jsonl"
            )
            result = first_token_study(
                backend,
                entry.config,
                cfg.first_token_corpus,
                store_path=out.abspath(store_rel),
            )
            out.register(store_rel)
            ft_results[entry.config.model] = result
            ft_report[entry.config.model] = reporting.first_token_to_dict(result)
            rel = os.path.join(
                "plots", f"first_token_hist__{entry.config.model}.tsv"
            )
            reporting.emit_first_token_hist(result, out.abspath(rel))
            out.register(rel)
        report["studies"]["first_token"] = ft_report
        reporting.emit_first_token_table(
            ft_results,
            out.abspath(os.path.join("tables", "first_token.json")),
            out.abspath(os.path.join("tables", "first_token.tsv")),
        )
        out.register(os.path.join("tables", "first_token.json"))
        out.register(os.path.join("tables", "first_token.tsv"))

    reporting.write_json_atomic(out.abspath("report.json"), report)
    out.register("report.json")

    manifest = reporting.RunManifest(
        digest=digest,
        paths=out.paths,
        wall_clock_s=time.monotonic() - started,
        generated_at=time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        failures=failures,
    )
    reporting.write_manifest(manifest, out_dir)
    return report
