"""Command-line entry point.

Subcommands:
    run          full study from an experiment config
    replay       recompute every report from stored transcripts
    sweep        temperature-sweep study only
    prior        prior-probe study only
    first-token  first-token study only
    quota        quota-compensation analysis over a transcript store
    layers       layer-dump analysis (up-layer, convergence)
    validate     lint configs, transcript stores, and layer dumps

Failures exit nonzero and print one machine-parsable JSON error record to
stderr. The API token is only ever read from the environment variable named
in the config, never from the command line.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from . import layerprobe, reporting
from .backends import BackendConfig, load_transcripts
from .config import load_experiment_config
from .errors import ConfigError, SampleProbeError
from .harness import analyze_transcript, quota_analysis
from .runner import run_experiment


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="experiment config file (JSON)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--jobs", type=int, default=1, help="concurrent trials per cell")
    parser.add_argument(
        "--log-level",
        default="warning",
        choices=["debug", "info", "warning", "error"],
    )


def _load_config(args):
    if not args.config:
        raise ConfigError("this command requires --config")
    return load_experiment_config(args.config)


def _run_with_studies(args, studies=None):
    cfg, raw = _load_config(args)
    if studies is not None:
        cfg = dataclasses.replace(cfg, studies=studies)
    return run_experiment(cfg, raw, out_dir=args.out, seed=args.seed, jobs=args.jobs)


def cmd_run(args) -> int:
    _run_with_studies(args)
    return 0


def cmd_sweep(args) -> int:
    _run_with_studies(args, studies=("sweep",))
    return 0


def cmd_prior(args) -> int:
    _run_with_studies(args, studies=("prior",))
    return 0


def cmd_first_token(args) -> int:
    _run_with_studies(args, studies=("first_token",))
    return 0


def cmd_replay(args) -> int:
    cfg, raw = _load_config(args)
    replayed = []
    for entry in cfg.backends:
        replay_cfg = BackendConfig(
            kind="replay",
            store_path=args.store,
            model=entry.config.model,
            top_k=entry.config.top_k,
            temperature=entry.config.temperature,
            max_tokens=entry.config.max_tokens,
        )
        replayed.append(dataclasses.replace(entry, config=replay_cfg))
    cfg = dataclasses.replace(cfg, backends=replayed)
    run_experiment(cfg, raw, out_dir=args.out, seed=args.seed, jobs=args.jobs)
    return 0


def _trials_from_store(store, task):
    transcripts = load_transcripts(store)
    return [analyze_transcript(t, task) for t in transcripts]


def _task_by_id(cfg, task_id):
    from .harness import reference_distribution

    for task in cfg.tasks:
        if task_id in (None, task.task_id):
            return task.task_id, reference_distribution(task.spec)
    raise ConfigError(f"task {task_id!r} not found in config")


def cmd_quota(args) -> int:
    cfg, _raw = _load_config(args)
    task_id, task = _task_by_id(cfg, args.task)
    trials = _trials_from_store(args.store, task)
    analysis = quota_analysis(trials, task)
    payload = {"task": task_id, **reporting.quota_to_dict(analysis)}
    _emit_payload(payload, args.out, "quota.json")
    return 0


def cmd_layers(args) -> int:
    trace = layerprobe.load_trace(args.dump)
    jump = layerprobe.up_layer(trace, jump_fraction=args.jump_fraction)
    payload = {
        "model": trace.model_id,
        "prompt_id": trace.prompt_id,
        "n_layers": trace.n_layers,
        "steps": list(trace.steps),
        "up_layer": jump.aggregate,
        "up_layer_per_step": {str(k): v for k, v in jump.per_step.items()},
    }
    if args.config:
        cfg, _raw = _load_config(args)
        task_id, task = _task_by_id(cfg, args.task)
        curve = layerprobe.layer_convergence(trace, task)
        per_step = layerprobe.per_step_layer_curves(trace, task)
        payload["task"] = task_id
        payload["convergence"] = curve
        payload["convergence_per_step"] = {str(k): v for k, v in per_step.items()}
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            reporting.emit_layer_curve(
                curve, os.path.join(args.out, "layer_convergence.tsv")
            )
            for step, step_curve in per_step.items():
                reporting.emit_layer_curve(
                    step_curve,
                    os.path.join(args.out, f"layer_convergence_step{step}.tsv"),
                )
    _emit_payload(payload, args.out, "layers.json")
    return 0


def cmd_validate(args) -> int:
    checked = []
    if args.config:
        load_experiment_config(args.config)
        checked.append({"kind": "config", "path": args.config})
    if args.store:
        transcripts = load_transcripts(args.store)
        checked.append({"kind": "store", "path": args.store, "records": len(transcripts)})
    if args.dump:
        trace = layerprobe.load_trace(args.dump)
        checked.append(
            {
                "kind": "dump",
                "path": args.dump,
                "n_layers": trace.n_layers,
                "cells": len(trace.logits),
            }
        )
    if not checked:
        raise ConfigError("nothing to validate; pass --config, --store, or --dump")
    print(json.dumps({"ok": True, "checked": checked}, sort_keys=True))
    return 0


def _emit_payload(payload: dict, out_dir, filename: str) -> None:
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        reporting.write_json_atomic(os.path.join(out_dir, filename), payload)
    print(json.dumps(payload, sort_keys=True))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sampleprobe",
        description="Distribution-sampling fidelity diagnostics for token-level models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    commands = {
        "run": (cmd_run, "run every configured study"),
        "replay": (cmd_replay, "recompute reports from a transcript store"),
        "sweep": (cmd_sweep, "temperature sweep study"),
        "prior": (cmd_prior, "prior-probe study"),
        "first-token": (cmd_first_token, "first-token study"),
        "quota": (cmd_quota, "quota-compensation analysis"),
        "layers": (cmd_layers, "layer-dump analysis"),
        "validate": (cmd_validate, "lint config / store / dump files"),
    }
    for name, (func, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        _common_flags(p)
        p.set_defaults(func=func)
        if name == "replay":
            p.add_argument("--store", required=True,
                           help="transcript store file or directory")
        if name == "quota":
            p.add_argument("--store", required=True)
            p.add_argument("--task", default=None, help="task id (default: first)")
        if name == "layers":
            p.add_argument("--dump", required=True, help="layer-dump file")
            p.add_argument("--task", default=None)
            p.add_argument("--jump-fraction", type=float, default=0.5)
        if name == "validate":
            p.add_argument("--store", default=None)
            p.add_argument("--dump", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper()),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except SampleProbeError as exc:
        print(
            json.dumps(
                {"error": type(exc).__name__, "message": str(exc)}, sort_keys=True
            ),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
