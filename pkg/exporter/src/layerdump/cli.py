"""Command-line entry: layerdump --model REF --prompt-file F --alphabet-file A --out PATH.

The alphabet file is JSON: {"labels": [...], "token_texts": [...]} with
token_texts optional (defaults to the labels)."""

from __future__ import annotations

import argparse
import json
import sys

from .export import ExporterError, ExportJob, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="layerdump",
        description="Dump per-layer alphabet-restricted logits from a causal LM",
    )
    parser.add_argument("--model", required=True, help="model path or hub id")
    parser.add_argument("--prompt-file", required=True)
    parser.add_argument("--alphabet-file", required=True)
    parser.add_argument("--out", required=True, help="output dump path")
    parser.add_argument("--max-tokens", type=int, default=256)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--temperature", type=float, default=1.0)
    parser.add_argument("--greedy", action="store_true")
    parser.add_argument("--prompt-id", default=None)
    parser.add_argument("--full-vocab", action="store_true",
                        help="also record unrestricted logits (debugging)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.prompt_file, "r", encoding="utf-8") as fh:
            prompt = fh.read().strip()
        with open(args.alphabet_file, "r", encoding="utf-8") as fh:
            alphabet = json.load(fh)
        labels = tuple(str(l) for l in alphabet["labels"])
        token_texts = tuple(str(t) for t in alphabet.get("token_texts", labels))
        job = ExportJob(
            model_ref=args.model,
            prompt=prompt,
            labels=labels,
            token_texts=token_texts,
            output_path=args.out,
            max_tokens=args.max_tokens,
            seed=args.seed,
            device=args.device,
            temperature=args.temperature,
            greedy=args.greedy,
            prompt_id=args.prompt_id or args.prompt_file.rsplit("/", 1)[-1],
            full_vocab=args.full_vocab,
        )
        result = export(job)
    except (ExporterError, OSError, KeyError, ValueError) as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1
    print(
        json.dumps(
            {
                "output": result.output_path,
                "n_layers": result.n_layers,
                "sample_steps": len(result.sample_steps),
                "max_head_deviation": result.max_head_deviation,
            },
            sort_keys=True,
        )
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
