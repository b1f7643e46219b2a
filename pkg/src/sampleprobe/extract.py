"""Turn raw per-step top-k logprobs into restricted distributions, and parse
generated text into sample sequences and their empirical distribution.

The restriction rule: an alphabet token absent from a step's top-k entries is
treated as logit -inf, i.e. probability exactly 0 (never a small positive
number), and the remaining mass is renormalized over the alphabet.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace

from .core import Alphabet
from .errors import AllMissingError, EmptyOutputError

LOGPROB_SLACK = 1e-6  # providers round; tolerate logprobs marginally above 0


@dataclass(frozen=True)
class StepRecord:
    """One generation step as reported by a backend."""

    step_index: int
    sampled_token_text: str
    top_entries: tuple[tuple[str, float], ...]  # (token_text, natural logprob)
    is_sample_step: bool = False

    def __post_init__(self):
        if self.step_index < 0:
            raise ValueError("step_index must be >= 0")
        if not self.top_entries:
            raise ValueError("top_entries must be non-empty")
        tokens = [tok for tok, _ in self.top_entries]
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate token in top_entries")
        for tok, lp in self.top_entries:
            if lp > LOGPROB_SLACK:
                raise ValueError(f"logprob {lp!r} for {tok!r} above 0")


@dataclass(frozen=True)
class StepDistribution:
    """Restricted, renormalized distribution over the alphabet at one step."""

    step_index: int
    probs: tuple[float, ...]
    covered_mass: float  # top-k probability mass before restriction

    @property
    def p_max(self) -> float:
        return max(self.probs)


@dataclass(frozen=True)
class SampleSequence:
    """Alphabet labels parsed from an output string, in emission order."""

    labels: tuple[str, ...]
    rejected_tokens: tuple[tuple[int, str], ...]  # (run position, text)

    @property
    def n(self) -> int:
        return len(self.labels)


def restrict_and_normalize(step: StepRecord, alphabet: Alphabet) -> StepDistribution:
    """Eq-2 style restriction: keep alphabet tokens from the top-k, zero the
    rest, renormalize. Raises AllMissingError when no alphabet token is
    present (the step carries no usable distribution)."""
    masses = {tok: math.exp(min(lp, 0.0)) for tok, lp in step.top_entries}
    covered = math.fsum(masses.values())
    vals = [masses.get(tok, 0.0) for tok in alphabet.token_texts]
    total = math.fsum(vals)
    if total == 0.0:
        raise AllMissingError(
            f"step {step.step_index}: no alphabet token among {len(step.top_entries)} top entries"
        )
    probs = tuple(v / total for v in vals)
    return StepDistribution(step.step_index, probs, covered)


def mark_sample_steps(steps, alphabet: Alphabet) -> list[StepRecord]:
    """Flag steps whose sampled token exactly matches an alphabet token.

    Separator steps (commas, spaces) and multi-token emissions stay unflagged
    and are excluded from step-level aggregates.
    """
    tokens = set(alphabet.token_texts)
    return [replace(s, is_sample_step=(s.sampled_token_text in tokens)) for s in steps]


def sample_step_count(steps) -> int:
    return sum(1 for s in steps if s.is_sample_step)


def _run_pattern(alphabet: Alphabet) -> re.Pattern:
    chars = sorted({c for label in alphabet.labels for c in label})
    return re.compile("[" + re.escape("".join(chars)) + "]+")


def parse_output(text: str, alphabet: Alphabet) -> SampleSequence:
    """Extract maximal label-shaped runs from text in order.

    A run that exactly equals an alphabet label is accepted; any other run
    ("41" against {1..4}, say) is rejected whole rather than split or clamped,
    so off-alphabet output cannot bias the empirical distribution. Everything
    else (commas, whitespace, prose) separates runs.
    """
    known = set(alphabet.labels)
    labels: list[str] = []
    rejected: list[tuple[int, str]] = []
    for pos, match in enumerate(_run_pattern(alphabet).finditer(text)):
        run = match.group(0)
        if run in known:
            labels.append(run)
        else:
            rejected.append((pos, run))
    if not labels:
        raise EmptyOutputError("no alphabet labels found in output")
    return SampleSequence(tuple(labels), tuple(rejected))


def empirical_distribution(seq: SampleSequence, alphabet: Alphabet) -> tuple[float, ...]:
    """Frequency vector over the alphabet: count(x_i) / N."""
    if seq.n == 0:
        raise EmptyOutputError("empty sample sequence")
    index = alphabet.label_index()
    counts = [0] * alphabet.size
    for label in seq.labels:
        counts[index[label]] += 1
    return tuple(c / seq.n for c in counts)


def prefix_distributions(seq: SampleSequence, alphabet: Alphabet) -> list[tuple[float, ...]]:
    """Running empirical distribution after each accepted sample.

    Entry t is the frequency vector over the first t+1 labels; quota analysis
    reads residuals off these prefixes.
    """
    if seq.n == 0:
        raise EmptyOutputError("empty sample sequence")
    index = alphabet.label_index()
    counts = [0] * alphabet.size
    out = []
    for t, label in enumerate(seq.labels):
        counts[index[label]] += 1
        out.append(tuple(c / (t + 1) for c in counts))
    return out
