"""Run a causal LM over a prompt and dump per-layer alphabet-restricted logits.

For every generated step whose sampled token is one of the alphabet tokens,
each layer's residual stream is projected through the model's own final
normalization and unembedding head (the logit-lens convention) and the logits
at the alphabet token ids are written out, in alphabet order.

Layer indexing: row l is the residual stream after block l, so a model with
N blocks yields N rows per sample step. Hugging Face models return the last
hidden state already normalized, so the final row skips the extra norm; this
makes the final row bit-identical to the model head's own logits, which the
consistency check below enforces at 1e-4 per symbol.

The dump is line-delimited JSON, bit-compatible with the analysis toolkit's
loader: one header record {schema_version, model, prompt_id, n_layers,
alphabet, steps} followed by one record per (layer, step) cell.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import torch

SCHEMA_VERSION = 1
CONSISTENCY_TOL = 1e-4


class ExporterError(Exception):
    """Base class for exporter failures."""


class TokenizationError(ExporterError):
    """An alphabet symbol does not map to exactly one vocabulary token."""


class ModelLoadError(ExporterError):
    """The model reference cannot be loaded or lacks a usable norm/head."""


class ConsistencyError(ExporterError):
    """Final-layer restricted distribution disagrees with the model head."""


@dataclass(frozen=True)
class ExportJob:
    model_ref: str
    prompt: str
    labels: tuple[str, ...]
    token_texts: tuple[str, ...]
    output_path: str
    max_tokens: int = 256
    seed: int = 0
    device: str = "cpu"
    temperature: float = 1.0
    greedy: bool = False
    prompt_id: str = "p0"
    full_vocab: bool = False  # debugging: also write unrestricted logits

    def __post_init__(self):
        if len(self.labels) != len(self.token_texts):
            raise ValueError("labels and token_texts must align")
        if len(self.labels) < 2:
            raise ValueError("alphabet needs at least 2 symbols")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")


@dataclass
class ExportResult:
    output_path: str
    n_layers: int
    sample_steps: list[int]
    sampled_ids: list[int]  # every generated token id, in order
    max_head_deviation: float


_FINAL_NORM_PATHS = (
    "transformer.ln_f",        # gpt2
    "model.norm",              # llama, mistral, qwen2
    "model.final_layernorm",   # phi, persimmon
    "gpt_neox.final_layer_norm",
    "transformer.norm_f",      # mpt
    "model.decoder.final_layer_norm",  # opt
)


def _resolve_attr(root, dotted):
    node = root
    for part in dotted.split("."):
        if not hasattr(node, part):
            return None
        node = getattr(node, part)
    return node


def find_final_norm(model):
    for path in _FINAL_NORM_PATHS:
        norm = _resolve_attr(model, path)
        if norm is not None:
            return norm
    raise ModelLoadError(
        "cannot locate the final normalization layer; known paths: "
        + ", ".join(_FINAL_NORM_PATHS)
    )


def single_token_ids(tokenizer, token_texts) -> list[int]:
    """One vocabulary id per symbol; the id must round-trip to the same text
    (an unk fallback or a multi-token split is an error, not a warning)."""
    ids = []
    for text in token_texts:
        encoded = tokenizer.encode(text, add_special_tokens=False)
        if len(encoded) != 1:
            raise TokenizationError(
                f"symbol {text!r} tokenizes to {len(encoded)} ids, need exactly 1"
            )
        token = tokenizer.convert_ids_to_tokens(encoded[0])
        if token != text and tokenizer.decode(encoded) != text:
            raise TokenizationError(
                f"symbol {text!r} does not round-trip (maps to {token!r})"
            )
        ids.append(encoded[0])
    if len(set(ids)) != len(ids):
        raise TokenizationError("alphabet symbols collide on the same token id")
    return ids


def load_model(job: ExportJob):
    from transformers import AutoModelForCausalLM, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(job.model_ref)
        model = AutoModelForCausalLM.from_pretrained(job.model_ref)
    except (OSError, ValueError) as exc:
        raise ModelLoadError(f"cannot load {job.model_ref!r}: {exc}") from exc
    model.to(job.device)
    model.eval()
    return tokenizer, model


def export(job: ExportJob) -> ExportResult:
    """Generate from the prompt and write the layer dump. Deterministic given
    the job (seeded sampling, eager single-device execution)."""
    tokenizer, model = load_model(job)
    return export_with(job, tokenizer, model)


def export_with(job: ExportJob, tokenizer, model) -> ExportResult:
    alphabet_ids = single_token_ids(tokenizer, job.token_texts)
    final_norm = find_final_norm(model)
    head = model.get_output_embeddings()
    if head is None:
        raise ModelLoadError("model has no output embedding head")

    device = torch.device(job.device)
    id_tensor = torch.tensor(alphabet_ids, device=device)
    generator = torch.Generator(device=device)
    generator.manual_seed(job.seed)

    ids = tokenizer.encode(job.prompt, add_special_tokens=False)
    if not ids:
        raise ExporterError("prompt tokenizes to nothing")
    context = torch.tensor([ids], device=device)

    records = []
    sample_steps: list[int] = []
    sampled_ids: list[int] = []
    n_layers = None
    max_dev = 0.0
    eos_id = getattr(model.config, "eos_token_id", None)

    with torch.no_grad():
        for step in range(job.max_tokens):
            out = model(context, output_hidden_states=True)
            logits = out.logits[0, -1, :]
            if job.greedy:
                next_id = int(torch.argmax(logits).item())
            else:
                probs = torch.softmax(logits / job.temperature, dim=-1)
                next_id = int(
                    torch.multinomial(probs, 1, generator=generator).item()
                )
            sampled_ids.append(next_id)

            if next_id in alphabet_ids:
                hidden = out.hidden_states  # embeddings + one entry per block
                if n_layers is None:
                    n_layers = len(hidden) - 1
                sample_steps.append(step)
                head_restricted = torch.softmax(logits[id_tensor], dim=-1)
                for layer in range(n_layers):
                    state = hidden[layer + 1][0, -1, :]
                    if layer < n_layers - 1:
                        state = final_norm(state)
                    # the last hidden state arrives already normalized
                    row = head(state)[id_tensor]
                    record = {
                        "schema_version": SCHEMA_VERSION,
                        "model": job.model_ref,
                        "prompt_id": job.prompt_id,
                        "layer": layer,
                        "step": step,
                        "logits": [float(v) for v in row.tolist()],
                    }
                    if job.full_vocab:
                        record["full_logits"] = [float(v) for v in head(state).tolist()]
                    records.append(record)
                    if layer == n_layers - 1:
                        dist = torch.softmax(row, dim=-1)
                        dev = float((dist - head_restricted).abs().max().item())
                        max_dev = max(max_dev, dev)
                        if dev > CONSISTENCY_TOL:
                            raise ConsistencyError(
                                f"step {step}: final-layer distribution deviates "
                                f"from the model head by {dev:.2e} (> {CONSISTENCY_TOL})"
                            )

            context = torch.cat(
                [context, torch.tensor([[next_id]], device=device)], dim=1
            )
            if eos_id is not None and next_id == eos_id:
                break

    if not sample_steps:
        raise ExporterError(
            "no generated token matched the alphabet; nothing to dump"
        )

    header = {
        "schema_version": SCHEMA_VERSION,
        "model": job.model_ref,
        "prompt_id": job.prompt_id,
        "n_layers": n_layers,
        "alphabet": list(job.labels),
        "steps": sample_steps,
    }
    parent = os.path.dirname(job.output_path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    tmp = f"{job.output_path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    os.replace(tmp, job.output_path)

    return ExportResult(
        output_path=job.output_path,
        n_layers=n_layers,
        sample_steps=sample_steps,
        sampled_ids=sampled_ids,
        max_head_deviation=max_dev,
    )
