import math
import random

import pytest

from sampleprobe.core import Alphabet
from sampleprobe.errors import AllMissingError, EmptyOutputError
from sampleprobe.extract import (
    StepRecord,
    empirical_distribution,
    mark_sample_steps,
    parse_output,
    prefix_distributions,
    restrict_and_normalize,
    sample_step_count,
)

ALPHABET = Alphabet.from_labels("1234")


def step(entries, token="2", index=0):
    return StepRecord(index, token, tuple(entries))


def test_restrict_hand_example():
    # 0.9 on "2", 0.05 on "1", 0.05 off-alphabet -> [0.05, 0.9]/0.95
    s = step([("2", math.log(0.9)), ("1", math.log(0.05)), ("the", math.log(0.05))])
    dist = restrict_and_normalize(s, ALPHABET)
    assert dist.probs[0] == pytest.approx(0.05 / 0.95, abs=1e-12)
    assert dist.probs[1] == pytest.approx(0.9 / 0.95, abs=1e-12)
    assert dist.probs[2] == 0.0
    assert dist.probs[3] == 0.0
    assert dist.covered_mass == pytest.approx(1.0, abs=1e-12)


def test_restrict_already_normalized_passthrough():
    entries = [(t, math.log(p)) for t, p in zip("1234", [0.1, 0.7, 0.1, 0.1])]
    dist = restrict_and_normalize(step(entries), ALPHABET)
    assert dist.probs == pytest.approx((0.1, 0.7, 0.1, 0.1), abs=1e-15)


def test_restrict_all_missing():
    with pytest.raises(AllMissingError):
        restrict_and_normalize(step([("foo", 0.0)]), ALPHABET)


def test_step_record_validation():
    with pytest.raises(ValueError):
        StepRecord(0, "2", ())
    with pytest.raises(ValueError):
        StepRecord(0, "2", (("2", 0.5),))  # logprob above slack
    with pytest.raises(ValueError):
        StepRecord(0, "2", (("2", -1.0), ("2", -2.0)))  # duplicate token


def test_restricted_sums_to_one_property():
    rng = random.Random(99)
    tokens = ["1", "2", "3", "4", "the", "a", ",", "x", "y"]
    for _ in range(300):
        k = rng.randrange(1, 6)
        chosen = rng.sample(tokens, k)
        weights = [rng.random() + 1e-9 for _ in chosen]
        total = sum(weights)
        entries = [(t, math.log(w / total)) for t, w in zip(chosen, weights)]
        s = step(entries, token=chosen[0])
        if not set(chosen) & {"1", "2", "3", "4"}:
            with pytest.raises(AllMissingError):
                restrict_and_normalize(s, ALPHABET)
            continue
        dist = restrict_and_normalize(s, ALPHABET)
        assert math.fsum(dist.probs) == pytest.approx(1.0, abs=1e-12)
        # absent symbols are exactly zero, never a small positive number
        for i, tok in enumerate(ALPHABET.token_texts):
            if tok not in chosen:
                assert dist.probs[i] == 0.0


def test_logprob_shift_invariance():
    rng = random.Random(7)
    for _ in range(100):
        weights = [rng.random() + 0.01 for _ in range(4)]
        total = sum(weights)
        entries = [(t, math.log(w / total)) for t, w in zip("1234", weights)]
        base = restrict_and_normalize(step(entries), ALPHABET)
        c = -rng.random() * 5  # keep logprobs <= 0
        shifted_entries = [(t, lp + c) for t, lp in entries]
        shifted = restrict_and_normalize(step(shifted_entries), ALPHABET)
        for a, b in zip(base.probs, shifted.probs):
            assert a == pytest.approx(b, abs=1e-12)


def test_mark_sample_steps():
    steps = [
        StepRecord(0, "1", (("1", 0.0),)),
        StepRecord(1, ",", ((",", 0.0),)),
        StepRecord(2, " ", ((" ", 0.0),)),
        StepRecord(3, "2", (("2", 0.0),)),
    ]
    marked = mark_sample_steps(steps, ALPHABET)
    assert [s.is_sample_step for s in marked] == [True, False, False, True]
    assert sample_step_count(marked) == 2
    # inputs are frozen records; marking returns fresh ones
    assert all(not s.is_sample_step for s in steps)


def test_mark_sample_steps_all_separators():
    steps = [StepRecord(i, ",", ((",", 0.0),)) for i in range(3)]
    assert sample_step_count(mark_sample_steps(steps, ALPHABET)) == 0


def test_mark_sample_steps_no_partial_match():
    steps = [StepRecord(0, "12", (("12", 0.0),))]
    assert sample_step_count(mark_sample_steps(steps, Alphabet.from_labels("12"))) == 0


def test_parse_output_plain_list():
    seq = parse_output("1, 2, 2, 3", ALPHABET)
    assert seq.labels == ("1", "2", "2", "3")
    assert seq.n == 4
    assert seq.rejected_tokens == ()


def test_parse_output_rejects_maximal_run():
    seq = parse_output("The list: 2,2,41", ALPHABET)
    assert seq.labels == ("2", "2")
    assert seq.rejected_tokens == ((2, "41"),)


def test_parse_output_empty():
    with pytest.raises(EmptyOutputError):
        parse_output("no numbers here", ALPHABET)


def test_empirical_distribution_counts():
    seq = parse_output("2, 2, 2, 1", ALPHABET)
    assert empirical_distribution(seq, ALPHABET) == (0.25, 0.75, 0.0, 0.0)


def test_empirical_distribution_degenerate_and_uniform():
    all_two = parse_output(", ".join(["2"] * 100), ALPHABET)
    assert empirical_distribution(all_two, ALPHABET) == (0.0, 1.0, 0.0, 0.0)
    one_each = parse_output("1, 2, 3, 4", ALPHABET)
    assert empirical_distribution(one_each, ALPHABET) == (0.25, 0.25, 0.25, 0.25)


def test_parse_then_empirical_matches_split_counter_oracle():
    rng = random.Random(4242)
    labels = ALPHABET.labels
    for _ in range(100):
        n = rng.randrange(1, 60)
        drawn = [rng.choice(labels) for _ in range(n)]
        text = ", ".join(drawn)
        # independent oracle: split on comma and count directly
        counted = {l: 0 for l in labels}
        for item in text.split(","):
            counted[item.strip()] += 1
        expected = tuple(counted[l] / n for l in labels)
        seq = parse_output(text, ALPHABET)
        assert empirical_distribution(seq, ALPHABET) == pytest.approx(expected, abs=1e-15)


def test_prefix_distributions():
    seq = parse_output("2, 2, 1", ALPHABET)
    prefixes = prefix_distributions(seq, ALPHABET)
    assert prefixes[0] == (0.0, 1.0, 0.0, 0.0)
    assert prefixes[1] == (0.0, 1.0, 0.0, 0.0)
    assert prefixes[2] == pytest.approx((1 / 3, 2 / 3, 0.0, 0.0))
