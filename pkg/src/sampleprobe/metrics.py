"""Pure metric functions.

ATVD here divides by n (the alphabet size) rather than the classical
total-variation 1/2; reported values are only comparable under that
convention.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import TaskDistribution
from .errors import (
    DegenerateVarianceError,
    EmptyListError,
    EmptyStepsError,
    LengthMismatchError,
    NotNormalizedError,
    OutOfRangeError,
)

SUM_TOL = 1e-6

# Padding sentinel for Hamming comparisons; outside every alphabet, so a
# padded position always counts as a mismatch against a real label.
PAD = object()


@dataclass
class MetricReport:
    """Per-trial metric bundle; aggregated across trials as mean +/- std."""

    e_score: float
    atvd_task_token: float
    atvd_task_result: float
    atvd_token_result: float
    atvd_step: float
    hamming: float = 0.0
    per_step_max: tuple[float, ...] = field(default_factory=tuple)
    mean_token_distribution: tuple[float, ...] = field(default_factory=tuple)

    SCALAR_FIELDS = (
        "e_score",
        "atvd_step",
        "atvd_task_token",
        "atvd_task_result",
        "atvd_token_result",
        "hamming",
    )

    def validate(self):
        for name in self.SCALAR_FIELDS:
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise OutOfRangeError(f"{name}={v!r} outside [0, 1]")
        if self.per_step_max:
            if abs(self.e_score - math.fsum(self.per_step_max) / len(self.per_step_max)) > 1e-12:
                raise ValueError("e_score is not the mean of per_step_max")


def _mean(values) -> float:
    """fsum-based mean; a run of identical values returns that value exactly
    (plain summation can drift the mean by an ulp, which would break the
    exact-equality contracts of the synthetic oracles)."""
    values = list(values)
    first = values[0]
    if all(v == first for v in values):
        return first
    return math.fsum(values) / len(values)


def e_score(step_dists) -> float:
    """Mean over sample steps of the maximum restricted probability."""
    step_dists = list(step_dists)
    if not step_dists:
        raise EmptyStepsError("e_score over zero steps")
    return _mean(d.p_max for d in step_dists)


def _check_prob_vector(v, name):
    total = math.fsum(v)
    if abs(total - 1.0) > SUM_TOL:
        raise NotNormalizedError(f"{name} sums to {total!r}, not 1")


def atvd(p, q) -> float:
    """(1/n) * sum_i |p_i - q_i| over two aligned probability vectors."""
    p = list(p)
    q = list(q)
    if len(p) != len(q):
        raise LengthMismatchError(f"{len(p)} vs {len(q)}")
    _check_prob_vector(p, "p")
    _check_prob_vector(q, "q")
    return math.fsum(abs(a - b) for a, b in zip(p, q)) / len(p)


def mean_step_distribution(step_dists) -> tuple[float, ...]:
    """P_token: the per-symbol mean of the step distributions."""
    step_dists = list(step_dists)
    if not step_dists:
        raise EmptyStepsError("mean over zero steps")
    n = len(step_dists[0].probs)
    return tuple(_mean(d.probs[i] for d in step_dists) for i in range(n))


def atvd_step(step_dists, task: TaskDistribution) -> float:
    """Step-resolved deviation: (1/(nT)) * sum_t sum_i |P^t_i - task_i|."""
    step_dists = list(step_dists)
    if not step_dists:
        raise EmptyStepsError("atvd_step over zero steps")
    n = task.alphabet.size
    for d in step_dists:
        if len(d.probs) != n:
            raise LengthMismatchError(f"step has {len(d.probs)} probs, task has {n}")
    total = math.fsum(
        abs(d.probs[i] - task.probs[i]) for d in step_dists for i in range(n)
    )
    return total / (n * len(step_dists))


def hamming_diversity(a, b) -> float:
    """Fraction of differing positions after zero-padding the shorter list.

    Padding uses a sentinel outside the alphabet, so length differences always
    count as mismatches. Two empty sequences have distance 0.
    """
    a = list(a)
    b = list(b)
    length = max(len(a), len(b))
    if length == 0:
        return 0.0
    a += [PAD] * (length - len(a))
    b += [PAD] * (length - len(b))
    return sum(1 for x, y in zip(a, b) if x != y) / length


def pearson_r(xs, ys) -> float:
    """Sample Pearson correlation; raises DegenerateVarianceError when either
    series is constant (callers report that state rather than a number)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape:
        raise LengthMismatchError(f"{xs.shape} vs {ys.shape}")
    if xs.size < 2:
        raise EmptyListError("pearson_r needs at least 2 points")
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    sx = float(np.sqrt(np.dot(dx, dx)))
    sy = float(np.sqrt(np.dot(dy, dy)))
    if sx == 0.0 or sy == 0.0:
        raise DegenerateVarianceError("constant series has no correlation")
    r = float(np.dot(dx, dy) / (sx * sy))
    return max(-1.0, min(1.0, r))


def regression_slope(xs, ys) -> float:
    """Least-squares slope of ys on xs (quota analysis recovers lambda here)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape:
        raise LengthMismatchError(f"{xs.shape} vs {ys.shape}")
    dx = xs - xs.mean()
    var = float(np.dot(dx, dx))
    if var == 0.0:
        raise DegenerateVarianceError("constant regressor")
    return float(np.dot(dx, ys - ys.mean()) / var)


def delta_pass(pass1: float, pass5: float) -> float:
    """exp(pass@5) - exp(pass@1); negative values are anomalous and warned."""
    for name, v in (("pass1", pass1), ("pass5", pass5)):
        if not (0.0 <= v <= 1.0):
            raise OutOfRangeError(f"{name}={v!r} outside [0, 1]")
    if pass5 < pass1:
        warnings.warn("pass@5 below pass@1; delta_pass is negative", stacklevel=2)
    return math.exp(pass5) - math.exp(pass1)


def precision_at_k(recommended, relevant) -> float:
    recommended = list(recommended)
    if not recommended:
        raise EmptyListError("no recommendations")
    relevant = set(relevant)
    return sum(1 for r in recommended if r in relevant) / len(recommended)


def can_hit(recommended, candidates) -> float:
    """Fraction of recommended items that appear in the candidate list."""
    recommended = list(recommended)
    if not recommended:
        raise EmptyListError("no recommendations")
    candidates = set(candidates)
    return sum(1 for r in recommended if r in candidates) / len(recommended)


def aggregate_trials(trial_metrics) -> dict[str, tuple[float, float]]:
    """Per-metric (mean, sample std) across trials; std of one trial is 0."""
    trial_metrics = list(trial_metrics)
    if not trial_metrics:
        raise EmptyListError("no trials to aggregate")
    out = {}
    for name in MetricReport.SCALAR_FIELDS:
        vals = [getattr(m, name) for m in trial_metrics]
        mean = _mean(vals)
        if len(vals) > 1:
            std = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (len(vals) - 1))
        else:
            std = 0.0
        out[name] = (mean, std)
    return out
