"""Report, table, and plot-data emission.

Everything written here is deterministic given the inputs: fixed column
orders, repr-precision floats in structured files, 3-decimal mean +/- std in
the human tables. Files are staged and atomically renamed, so a crashed run
never leaves a half-written report.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

from .errors import EmptyListError
from .harness import CellResult, FirstTokenResult, QuotaAnalysis

TOOLKIT_VERSION = "0.1.0"

SAMPLING_METRICS = ("atvd_step", "atvd_task_token", "atvd_task_result", "atvd_token_result")
PRIOR_METRICS = ("atvd_task_result", "atvd_task_token", "atvd_token_result")


def write_text_atomic(path, text: str) -> None:
    path = os.fspath(path)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_json_atomic(path, obj) -> None:
    write_text_atomic(path, json.dumps(obj, sort_keys=True, indent=1) + "\n")


def config_digest(raw_config: dict) -> str:
    canonical = json.dumps(raw_config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def fmt_mean_std(mean: float, std: float) -> str:
    return f"{mean:.3f} ± {std:.3f}"


# ---------------------------------------------------------------------------
# Structured report
# ---------------------------------------------------------------------------

def trial_to_dict(trial) -> dict:
    out = {
        "trial_id": trial.trial_id,
        "ok": trial.ok,
        "error": trial.error,
        "all_missing_steps": trial.all_missing_steps,
    }
    if trial.metrics is not None:
        out["metrics"] = {
            name: getattr(trial.metrics, name)
            for name in trial.metrics.SCALAR_FIELDS
        }
        out["mean_token_distribution"] = list(trial.metrics.mean_token_distribution)
    return out


def cell_to_dict(cell: CellResult) -> dict:
    return {
        "cell_id": cell.cell_id,
        "model": cell.model_id,
        "task": cell.task_id,
        "temperature": cell.temperature,
        "classification": cell.classification,
        "task_probs": list(cell.task.probs),
        "alphabet": list(cell.task.alphabet.labels),
        "aggregate": {
            name: {"mean": mean, "std": std}
            for name, (mean, std) in sorted(cell.aggregate.items())
        },
        "exclusions": cell.exclusions,
        "trials": [trial_to_dict(t) for t in cell.trials],
    }


def quota_to_dict(q: QuotaAnalysis) -> dict:
    return {
        "pooled_r": q.pooled_r,
        "pooled_slope": q.pooled_slope,
        "per_symbol_r": q.per_symbol_r,
        "n_pairs": q.n_pairs,
        "degenerate": q.degenerate,
    }


def first_token_to_dict(r: FirstTokenResult) -> dict:
    return {
        "e_score": r.e_score,
        "n_prompts": len(r.p_max_values),
        "excluded": r.excluded,
        "p_max_values": r.p_max_values,
        "histogram_edges": r.histogram_edges,
        "histogram_counts": r.histogram_counts,
    }


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

def _sorted_cells(cells) -> list[CellResult]:
    return sorted(cells, key=lambda c: (c.model_id, c.task_id, c.temperature))


def emit_table(cells, shape: str, json_path, tsv_path) -> dict:
    """Write one comparison table as a structured JSON file plus a delimited
    text file. Shapes: sampling (pivoted grid: 4 ATVD metrics per task),
    prior (3 ATVD columns vs uniform), first_token (one e-score column)."""
    cells = list(cells)
    if not cells:
        raise EmptyListError("no cells to tabulate")
    cells = _sorted_cells(cells)
    if shape == "sampling":
        task_ids = sorted({c.task_id for c in cells})
        columns = [f"{task}:{metric}" for task in task_ids for metric in SAMPLING_METRICS]
        rows = []
        by_key = {(c.model_id, c.task_id): c for c in cells}
        for model in sorted({c.model_id for c in cells}):
            values = {}
            for task in task_ids:
                cell = by_key.get((model, task))
                for metric in SAMPLING_METRICS:
                    key = f"{task}:{metric}"
                    if cell is None:
                        values[key] = None
                    else:
                        mean, std = cell.aggregate[metric]
                        values[key] = {"mean": mean, "std": std}
            rows.append({"model": model, "values": values})
    elif shape == "prior":
        columns = list(PRIOR_METRICS)
        rows = [
            {
                "model": c.model_id,
                "values": {
                    m: {"mean": c.aggregate[m][0], "std": c.aggregate[m][1]}
                    for m in PRIOR_METRICS
                },
            }
            for c in cells
        ]
    else:
        raise ValueError(f"unknown table shape {shape!r}")

    table = {"shape": shape, "columns": columns, "rows": rows}
    write_json_atomic(json_path, table)

    lines = ["\t".join(["model"] + columns)]
    for row in rows:
        rendered = [row["model"]]
        for col in columns:
            v = row["values"].get(col)
            rendered.append("-" if v is None else fmt_mean_std(v["mean"], v["std"]))
        lines.append("\t".join(rendered))
    write_text_atomic(tsv_path, "\n".join(lines) + "\n")
    return table


def emit_first_token_table(results, json_path, tsv_path) -> dict:
    """First-token table: per-model first-token e-score over the corpus.

    results: mapping model -> FirstTokenResult.
    """
    if not results:
        raise EmptyListError("no first-token results to tabulate")
    columns = ["e_score", "n_prompts", "excluded"]
    rows = [
        {
            "model": model,
            "values": {
                "e_score": r.e_score,
                "n_prompts": len(r.p_max_values),
                "excluded": r.excluded,
            },
        }
        for model, r in sorted(results.items())
    ]
    table = {"shape": "first_token", "columns": columns, "rows": rows}
    write_json_atomic(json_path, table)
    lines = ["\t".join(["model"] + columns)]
    for row in rows:
        v = row["values"]
        lines.append(
            "\t".join(
                [row["model"], f"{v['e_score']:.3f}", str(v["n_prompts"]),
                 str(v["excluded"])]
            )
        )
    write_text_atomic(tsv_path, "\n".join(lines) + "\n")
    return table


# ---------------------------------------------------------------------------
# Plot data (columnar numeric series, one file per figure family)
# ---------------------------------------------------------------------------

def _tsv(header, rows) -> str:
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    return "\n".join(lines) + "\n"


def emit_escore_bars(cells, path) -> None:
    """E-score bar series: one bar (mean, std) per cell."""
    cells = _sorted_cells(cells)
    if not cells:
        raise EmptyListError("no cells")
    rows = [
        (c.model_id, c.task_id, c.temperature, c.aggregate["e_score"][0],
         c.aggregate["e_score"][1], c.classification)
        for c in cells
    ]
    write_text_atomic(
        path, _tsv(("model", "task", "temperature", "e_score", "std", "class"), rows)
    )


def emit_step_trace(cell: CellResult, path) -> None:
    """Per-step restricted-distribution trace of the first parsed trial."""
    trial = next((t for t in cell.trials if t.metrics is not None), None)
    if trial is None:
        raise EmptyListError(f"cell {cell.cell_id} has no parsed trial")
    labels = cell.task.alphabet.labels
    rows = [
        (i,) + tuple(float(p) for p in dist.probs)
        for i, dist in enumerate(trial.step_dists)
    ]
    write_text_atomic(path, _tsv(("step",) + labels, rows))


def emit_temperature_curve(cells, path) -> None:
    """Sweep series: e-score vs temperature for one (model, task)."""
    cells = sorted(cells, key=lambda c: c.temperature)
    if not cells:
        raise EmptyListError("no cells")
    rows = [
        (c.temperature, c.aggregate["e_score"][0], c.aggregate["e_score"][1])
        for c in cells
    ]
    write_text_atomic(path, _tsv(("temperature", "e_score", "std"), rows))


def emit_layer_curve(curve, path) -> None:
    """Layer series: per-layer ATVD toward the task."""
    if not list(curve):
        raise EmptyListError("empty layer curve")
    rows = [(layer, float(v)) for layer, v in enumerate(curve)]
    write_text_atomic(path, _tsv(("layer", "atvd_task"), rows))


def emit_quota_bars(entries, path) -> None:
    """Correlation bars: pooled r and slope per analyzed cell."""
    entries = sorted(entries, key=lambda e: e[0])
    if not entries:
        raise EmptyListError("no quota entries")
    rows = [
        (
            name,
            "nan" if q.pooled_r is None else q.pooled_r,
            "nan" if q.pooled_slope is None else q.pooled_slope,
            q.n_pairs,
        )
        for name, q in entries
    ]
    write_text_atomic(path, _tsv(("cell", "pooled_r", "slope", "n_pairs"), rows))


def emit_first_token_hist(result: FirstTokenResult, path) -> None:
    rows = [
        (result.histogram_edges[i], result.histogram_edges[i + 1], result.histogram_counts[i])
        for i in range(len(result.histogram_counts))
    ]
    write_text_atomic(path, _tsv(("bin_lo", "bin_hi", "count"), rows))


# ---------------------------------------------------------------------------
# Run manifest
# ---------------------------------------------------------------------------

@dataclass
class RunManifest:
    digest: str
    version: str = TOOLKIT_VERSION
    paths: list[str] = field(default_factory=list)
    wall_clock_s: float = 0.0
    generated_at: str = ""
    failures: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "config_digest": self.digest,
            "toolkit_version": self.version,
            "paths": sorted(self.paths),
            "wall_clock_s": self.wall_clock_s,
            "generated_at": self.generated_at,
            "failures": self.failures,
        }


def write_manifest(manifest: RunManifest, out_dir) -> str:
    """Manifest goes last; every referenced path must already exist."""
    missing = [p for p in manifest.paths if not os.path.exists(os.path.join(out_dir, p))]
    if missing:
        raise FileNotFoundError(f"manifest references missing paths: {missing}")
    path = os.path.join(out_dir, "manifest.json")
    write_json_atomic(path, manifest.to_dict())
    return path
