"""Alphabets, task distributions, and prompt rendering.

The alphabet is the ordered set of sample symbols the experiment asks the
model to emit. Each symbol has a display label (what appears in the output
list) and the single vocabulary token that emits it; both must be unique.
All values are immutable after construction and safe to share.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import (
    LengthMismatchError,
    MissingDistributionError,
    NotNormalizedError,
    OutOfRangeError,
)

NORMALIZATION_TOL = 1e-9

SIMULATED_TEMPLATE = (
    "Given the probability distribution: {distribution}, generate {count} in "
    "{alphabet}, and give the final list (numbers separated by commas) strictly "
    "according to the requirements, without adding any text or process description."
)

PRIOR_TEMPLATE = (
    "Must generate {count} in {alphabet} randomly, and give the final list "
    "(numbers separated by commas) strictly according to the requirements, "
    "without adding any text or process description."
)


@dataclass(frozen=True)
class Symbol:
    """One sample symbol: display label plus the token text that emits it."""

    label: str
    token_text: str


@dataclass(frozen=True)
class Alphabet:
    symbols: tuple[Symbol, ...]

    def __post_init__(self):
        if len(self.symbols) < 2:
            raise ValueError("alphabet needs at least 2 symbols")
        labels = [s.label for s in self.symbols]
        tokens = [s.token_text for s in self.symbols]
        if len(set(labels)) != len(labels):
            raise ValueError("alphabet labels must be unique")
        if len(set(tokens)) != len(tokens):
            raise ValueError("alphabet token_texts must be unique")

    @classmethod
    def from_labels(cls, labels, token_texts=None) -> "Alphabet":
        """Build an alphabet; token_text defaults to the label itself."""
        if token_texts is None:
            token_texts = labels
        if len(labels) != len(token_texts):
            raise LengthMismatchError(
                f"{len(labels)} labels vs {len(token_texts)} token_texts"
            )
        return cls(tuple(Symbol(str(l), str(t)) for l, t in zip(labels, token_texts)))

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(s.label for s in self.symbols)

    @property
    def token_texts(self) -> tuple[str, ...]:
        return tuple(s.token_text for s in self.symbols)

    def token_index(self) -> dict[str, int]:
        """token_text -> position, for restricting top-k entries."""
        return {s.token_text: i for i, s in enumerate(self.symbols)}

    def label_index(self) -> dict[str, int]:
        return {s.label: i for i, s in enumerate(self.symbols)}


@dataclass(frozen=True)
class TaskDistribution:
    """Target distribution over an alphabet (the prompt's sampling goal)."""

    alphabet: Alphabet
    probs: tuple[float, ...]

    @property
    def max_prob(self) -> float:
        return max(self.probs)

    def as_mapping(self) -> dict[str, float]:
        return dict(zip(self.alphabet.labels, self.probs))


def make_distribution(alphabet: Alphabet, probs) -> TaskDistribution:
    """Validate probs against the alphabet and return a TaskDistribution.

    Probs must lie in [0, 1] and sum to 1 within 1e-9. A sub-tolerance
    deviation is renormalized away; anything larger is an error, not a fixup.
    """
    probs = [float(p) for p in probs]
    if len(probs) != alphabet.size:
        raise LengthMismatchError(
            f"{len(probs)} probs for alphabet of size {alphabet.size}"
        )
    for p in probs:
        if not (0.0 <= p <= 1.0):
            raise OutOfRangeError(f"probability {p!r} outside [0, 1]")
    total = math.fsum(probs)
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise NotNormalizedError(f"probs sum to {total!r}, not 1")
    if total != 1.0:
        probs = [p / total for p in probs]
    return TaskDistribution(alphabet, tuple(probs))


def uniform_distribution(alphabet: Alphabet) -> TaskDistribution:
    """U(X): every symbol gets 1/n."""
    return make_distribution(alphabet, [1.0 / alphabet.size] * alphabet.size)


@dataclass(frozen=True)
class PromptSpec:
    """What to ask the model: a simulated-distribution task, a prior probe,
    or a first-token (option-restricted) prompt supplied via template_override.
    """

    kind: str  # "simulated" | "prior" | "first_token"
    distribution: TaskDistribution | None = None
    alphabet: Alphabet | None = None
    sample_count: int = 100
    template_override: str | None = None

    def __post_init__(self):
        if self.kind not in ("simulated", "prior", "first_token"):
            raise ValueError(f"unknown prompt kind {self.kind!r}")
        if self.kind == "simulated" and self.distribution is None:
            raise MissingDistributionError("simulated prompt requires a distribution")
        if self.kind == "prior" and self.alphabet is None and self.distribution is None:
            raise MissingDistributionError("prior prompt requires an alphabet")
        if self.sample_count < 1:
            raise ValueError("sample_count must be positive")

    def effective_alphabet(self) -> Alphabet:
        if self.alphabet is not None:
            return self.alphabet
        if self.distribution is not None:
            return self.distribution.alphabet
        raise MissingDistributionError(f"{self.kind} prompt carries no alphabet")


def format_probability(p: float) -> str:
    """Minimal exact decimal form: 0.1, not 0.10 (repr is shortest round-trip)."""
    return repr(float(p))


def _alphabet_set_text(alphabet: Alphabet) -> str:
    return "{" + ", ".join(alphabet.labels) + "}"


def _distribution_text(dist: TaskDistribution) -> str:
    pairs = ", ".join(
        f"{label}: {format_probability(p)}"
        for label, p in zip(dist.alphabet.labels, dist.probs)
    )
    return "{" + pairs + "}"


def render_prompt(spec: PromptSpec) -> str:
    """Deterministic prompt text for a spec; equal specs render identical bytes."""
    if spec.kind == "first_token":
        if spec.template_override is None:
            raise MissingDistributionError(
                "first_token prompts come from the corpus; set template_override"
            )
        return spec.template_override

    alphabet = spec.effective_alphabet()
    set_text = _alphabet_set_text(alphabet)
    if spec.kind == "simulated":
        if spec.distribution is None:
            raise MissingDistributionError("simulated prompt requires a distribution")
        count = (
            "a number of hundreds"
            if spec.sample_count == 100
            else f"{spec.sample_count} numbers"
        )
        template = spec.template_override or SIMULATED_TEMPLATE
        return template.format(
            distribution=_distribution_text(spec.distribution),
            count=count,
            alphabet=set_text,
        )

    # prior
    count = (
        "a hundred numbers" if spec.sample_count == 100 else f"{spec.sample_count} numbers"
    )
    template = spec.template_override or PRIOR_TEMPLATE
    return template.format(count=count, alphabet=set_text)


# Reference tasks used throughout the experiments.
def extreme_task() -> TaskDistribution:
    """{1: 0.1, 2: 0.7, 3: 0.1, 4: 0.1} - highly concentrated."""
    return make_distribution(Alphabet.from_labels("1234"), [0.1, 0.7, 0.1, 0.1])


def flat_task() -> TaskDistribution:
    """{1..9 at 0.1 except 4: 0.2} - approximately uniform."""
    return make_distribution(
        Alphabet.from_labels("123456789"),
        [0.1, 0.1, 0.1, 0.2, 0.1, 0.1, 0.1, 0.1, 0.1],
    )
