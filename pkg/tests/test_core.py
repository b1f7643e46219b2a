import re

import pytest

from sampleprobe.core import (
    Alphabet,
    PromptSpec,
    extreme_task,
    flat_task,
    make_distribution,
    render_prompt,
    uniform_distribution,
)
from sampleprobe.errors import (
    LengthMismatchError,
    MissingDistributionError,
    NotNormalizedError,
    OutOfRangeError,
)


def test_alphabet_basics():
    a = Alphabet.from_labels("1234")
    assert a.size == 4
    assert a.labels == ("1", "2", "3", "4")
    assert a.token_texts == ("1", "2", "3", "4")
    assert a.token_index()["3"] == 2


def test_alphabet_rejects_duplicates_and_tiny():
    with pytest.raises(ValueError):
        Alphabet.from_labels(["1", "1"])
    with pytest.raises(ValueError):
        Alphabet.from_labels(["1"])
    with pytest.raises(ValueError):
        Alphabet.from_labels(["1", "2"], ["x", "x"])


def test_make_distribution_extreme_task():
    dist = make_distribution(Alphabet.from_labels("1234"), [0.1, 0.7, 0.1, 0.1])
    assert dist.probs == (0.1, 0.7, 0.1, 0.1)
    assert dist.max_prob == 0.7


def test_make_distribution_flat_task():
    dist = flat_task()
    assert len(dist.probs) == 9
    assert dist.probs[3] == 0.2
    assert sum(dist.probs) == pytest.approx(1.0, abs=1e-12)


def test_make_distribution_rejects_unnormalized():
    with pytest.raises(NotNormalizedError):
        make_distribution(Alphabet.from_labels("12"), [0.5, 0.6])


def test_make_distribution_rejects_out_of_range_and_mismatch():
    with pytest.raises(OutOfRangeError):
        make_distribution(Alphabet.from_labels("12"), [-0.1, 1.1])
    with pytest.raises(LengthMismatchError):
        make_distribution(Alphabet.from_labels("123"), [0.5, 0.5])


def test_uniform_distribution_sizes():
    assert uniform_distribution(Alphabet.from_labels("1234")).probs == (0.25,) * 4
    nine = uniform_distribution(Alphabet.from_labels("123456789"))
    assert all(p == pytest.approx(1 / 9) for p in nine.probs)
    assert uniform_distribution(Alphabet.from_labels("12")).probs == (0.5, 0.5)


def test_uniform_passes_validation_for_every_size_up_to_1000():
    # uniform_distribution routes through make_distribution, so constructing
    # it exercises the full validation for each n
    for n in range(2, 1001):
        labels = [f"s{i}" for i in range(n)]
        dist = uniform_distribution(Alphabet.from_labels(labels))
        assert len(dist.probs) == n


def test_render_simulated_prompt_matches_template():
    text = render_prompt(PromptSpec(kind="simulated", distribution=extreme_task()))
    assert "Given the probability distribution: {1: 0.1, 2: 0.7, 3: 0.1, 4: 0.1}" in text
    assert "generate a number of hundreds in {1, 2, 3, 4}" in text
    assert text.endswith("without adding any text or process description.")


def test_render_prior_prompt():
    text = render_prompt(
        PromptSpec(kind="prior", alphabet=Alphabet.from_labels("1234"))
    )
    assert text.startswith("Must generate a hundred numbers")
    assert "{1, 2, 3, 4}" in text


def test_render_prompt_deterministic():
    spec = PromptSpec(kind="simulated", distribution=extreme_task())
    assert render_prompt(spec) == render_prompt(spec)


def test_render_prompt_custom_count():
    spec = PromptSpec(kind="simulated", distribution=extreme_task(), sample_count=200)
    assert "generate 200 numbers in" in render_prompt(spec)


def test_simulated_requires_distribution():
    with pytest.raises(MissingDistributionError):
        PromptSpec(kind="simulated")


def test_first_token_requires_override():
    spec = PromptSpec(kind="first_token", alphabet=Alphabet.from_labels("AB"))
    with pytest.raises(MissingDistributionError):
        render_prompt(spec)
    assert render_prompt(
        PromptSpec(kind="first_token", alphabet=Alphabet.from_labels("AB"),
                   template_override="Pick A or B.")
    ) == "Pick A or B."


def test_rendered_probs_read_back_identically():
    # probs with <= 6 decimal digits render losslessly and revalidate
    import random

    rng = random.Random(20240817)
    alphabet = Alphabet.from_labels("1234")
    for _ in range(200):
        cuts = sorted(rng.randrange(0, 1000001) for _ in range(3))
        parts = [cuts[0], cuts[1] - cuts[0], cuts[2] - cuts[1], 1000000 - cuts[2]]
        probs = [p / 1000000 for p in parts]
        if min(probs) <= 0:
            continue
        dist = make_distribution(alphabet, probs)
        text = render_prompt(PromptSpec(kind="simulated", distribution=dist))
        rendered = re.search(r"\{([^}]*)\}", text).group(1)
        parsed = [float(pair.split(": ")[1]) for pair in rendered.split(", ")]
        assert tuple(parsed) == dist.probs
