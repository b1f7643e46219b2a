"""Layer-wise probability analysis over exporter dumps.

The dump is line-delimited JSON: one header declaring the grid (layer count,
alphabet labels, sample-step indices) followed by one record per (layer,
step) cell holding alphabet-restricted logits. Softmax over those logits per
cell gives the layer-wise distributions; the up-layer is where the maximum
probability jumps toward its final value.
"""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass

from .core import TaskDistribution
from .errors import (
    FormatError,
    IncompleteGridError,
    LengthMismatchError,
    NonFiniteLogitError,
)
from .extract import StepDistribution
from .metrics import atvd

DUMP_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class LayerProbeTrace:
    model_id: str
    prompt_id: str
    n_layers: int
    alphabet_labels: tuple[str, ...]
    steps: tuple[int, ...]
    # logits[(layer, step)] -> tuple of floats in alphabet order
    logits: dict

    @property
    def n_symbols(self) -> int:
        return len(self.alphabet_labels)


def load_trace(path) -> LayerProbeTrace:
    """Parse and validate a layer dump; incomplete grids are rejected."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise FormatError(f"cannot read dump {path}: {exc}") from exc

    header = None
    logits: dict = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON ({exc})", line=lineno) from exc
        if not isinstance(record, dict):
            raise FormatError("record is not an object", line=lineno)
        version = record.get("schema_version")
        if version != DUMP_SCHEMA_VERSION:
            raise FormatError(
                f"schema_version {version!r}, this build reads {DUMP_SCHEMA_VERSION}",
                line=lineno,
            )
        if "n_layers" in record:
            if header is not None:
                raise FormatError("duplicate header record", line=lineno)
            try:
                header = {
                    "model": record["model"],
                    "prompt_id": record["prompt_id"],
                    "n_layers": int(record["n_layers"]),
                    "alphabet": tuple(str(x) for x in record["alphabet"]),
                    "steps": tuple(int(t) for t in record["steps"]),
                }
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"bad header ({exc})", line=lineno) from exc
            continue
        if header is None:
            raise FormatError("data record before header", line=lineno)
        try:
            layer = int(record["layer"])
            step = int(record["step"])
            values = tuple(float(v) for v in record["logits"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad data record ({exc})", line=lineno) from exc
        if len(values) != len(header["alphabet"]):
            raise FormatError(
                f"{len(values)} logits for alphabet of size {len(header['alphabet'])}",
                line=lineno,
            )
        if (layer, step) in logits:
            raise FormatError(f"duplicate cell (layer={layer}, step={step})", line=lineno)
        logits[(layer, step)] = values

    if header is None:
        raise FormatError(f"dump {path} has no header record")

    missing = [
        (l, t)
        for l in range(header["n_layers"])
        for t in header["steps"]
        if (l, t) not in logits
    ]
    if missing:
        raise IncompleteGridError(
            f"{len(missing)} missing cells, first {missing[0]}"
        )
    extra = [
        key
        for key in logits
        if key[0] >= header["n_layers"] or key[1] not in set(header["steps"])
    ]
    if extra:
        raise IncompleteGridError(f"cells outside declared grid, first {extra[0]}")
    return LayerProbeTrace(
        model_id=header["model"],
        prompt_id=header["prompt_id"],
        n_layers=header["n_layers"],
        alphabet_labels=header["alphabet"],
        steps=header["steps"],
        logits=logits,
    )


def _softmax(values) -> tuple[float, ...]:
    for v in values:
        if not math.isfinite(v):
            raise NonFiniteLogitError(f"non-finite logit {v!r}")
    peak = max(values)
    exps = [math.exp(v - peak) for v in values]
    total = math.fsum(exps)
    return tuple(e / total for e in exps)


def layer_distributions(trace: LayerProbeTrace) -> dict:
    """Softmax per (layer, step): the layer-wise restricted distributions."""
    return {
        (layer, step): StepDistribution(step, _softmax(trace.logits[(layer, step)]), 1.0)
        for layer in range(trace.n_layers)
        for step in trace.steps
    }


@dataclass(frozen=True)
class UpLayerResult:
    per_step: dict  # step -> layer index, or None where no jump exists
    aggregate: int | None  # median over steps with a jump; None if none have one

    NO_JUMP = None


def up_layer(trace: LayerProbeTrace, jump_fraction: float = 0.5) -> UpLayerResult:
    """Smallest layer whose max-probability rise over its predecessor covers
    at least jump_fraction of the total rise from layer 0 to the final layer.

    Steps whose total rise is under 0.1, or where no single layer carries the
    required fraction, report no jump. The aggregate is the median over steps
    that do have one.
    """
    if trace.n_layers < 2:
        raise LengthMismatchError("up_layer needs at least 2 layers")
    dists = layer_distributions(trace)
    per_step: dict = {}
    for step in trace.steps:
        curve = [dists[(layer, step)].p_max for layer in range(trace.n_layers)]
        total_rise = curve[-1] - curve[0]
        if total_rise < 0.1:
            per_step[step] = None
            continue
        found = None
        for layer in range(1, trace.n_layers):
            if curve[layer] - curve[layer - 1] >= jump_fraction * total_rise:
                found = layer
                break
        per_step[step] = found
    jumps = [v for v in per_step.values() if v is not None]
    aggregate = int(statistics.median(jumps)) if jumps else None
    return UpLayerResult(per_step=per_step, aggregate=aggregate)


def layer_convergence(trace: LayerProbeTrace, task: TaskDistribution) -> list[float]:
    """Per-layer ATVD between the step-averaged layer distribution and the
    task; the tail of this curve shows whether late layers align with P_task."""
    if len(trace.alphabet_labels) != task.alphabet.size:
        raise LengthMismatchError(
            f"trace alphabet size {len(trace.alphabet_labels)} vs task {task.alphabet.size}"
        )
    dists = layer_distributions(trace)
    n = task.alphabet.size
    steps = trace.steps
    curve = []
    for layer in range(trace.n_layers):
        mean = tuple(
            math.fsum(dists[(layer, step)].probs[i] for step in steps) / len(steps)
            for i in range(n)
        )
        curve.append(atvd(mean, task.probs))
    return curve


def per_step_layer_curves(trace: LayerProbeTrace, task: TaskDistribution) -> dict:
    """Per-step variant of layer_convergence (both are emitted for plots)."""
    dists = layer_distributions(trace)
    return {
        step: [
            atvd(dists[(layer, step)].probs, task.probs)
            for layer in range(trace.n_layers)
        ]
        for step in trace.steps
    }
