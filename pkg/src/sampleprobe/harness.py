"""Experiment orchestration.

A cell is one (backend, task) pair run R times. Every raw transcript is
persisted before any metric is computed; failed trials are enumerated in the
cell result, never dropped silently. Aggregation folds over trials in index
order, so results are identical for any --jobs value.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import backends as bk
from .core import (
    Alphabet,
    PromptSpec,
    TaskDistribution,
    render_prompt,
    uniform_distribution,
)
from .errors import (
    AllMissingError,
    AllTrialsFailedError,
    ConfigError,
    CorpusFormatError,
    DegenerateVarianceError,
    EmptyOutputError,
    InsufficientStepsError,
    SampleProbeError,
)
from .extract import (
    SampleSequence,
    StepDistribution,
    empirical_distribution,
    mark_sample_steps,
    parse_output,
    restrict_and_normalize,
)
from .metrics import (
    MetricReport,
    aggregate_trials,
    atvd,
    atvd_step,
    e_score,
    hamming_diversity,
    mean_step_distribution,
    pearson_r,
    regression_slope,
)

DEFAULT_D_ESCORE_MIN = 0.9
DEFAULT_MARGIN_MIN = 0.15


@dataclass(frozen=True)
class ClassifyThresholds:
    d_escore_min: float = DEFAULT_D_ESCORE_MIN
    margin_min: float = DEFAULT_MARGIN_MIN


@dataclass
class TrialRecord:
    trial_id: str
    transcript: bk.Transcript | None
    sequence: SampleSequence | None = None
    step_dists: list[StepDistribution] = field(default_factory=list)
    result: tuple[float, ...] | None = None
    metrics: MetricReport | None = None
    all_missing_steps: int = 0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.metrics is not None


@dataclass
class CellResult:
    cell_id: str
    model_id: str
    task_id: str
    temperature: float
    task: TaskDistribution
    trials: list[TrialRecord]
    aggregate: dict[str, tuple[float, float]]
    classification: str
    exclusions: dict[str, int]


def reference_distribution(spec: PromptSpec) -> TaskDistribution:
    """The distribution metrics compare against: the simulated task itself,
    or U(X) for prior probes."""
    if spec.kind == "simulated":
        return spec.distribution
    return uniform_distribution(spec.effective_alphabet())


def analyze_transcript(transcript: bk.Transcript, task: TaskDistribution) -> TrialRecord:
    """Parse one transcript into step distributions, P_result, and metrics.

    AllMissing steps are excluded from step aggregates but counted; a trial
    with no parsable samples is kept as a counted failure.
    """
    alphabet = task.alphabet
    record = TrialRecord(transcript.trial_id, transcript)
    steps = mark_sample_steps(transcript.steps, alphabet)
    dists = []
    missing = 0
    for step in steps:
        if not step.is_sample_step:
            continue
        try:
            dists.append(restrict_and_normalize(step, alphabet))
        except AllMissingError:
            missing += 1
    record.all_missing_steps = missing
    record.step_dists = dists

    try:
        seq = parse_output(transcript.output_text, alphabet)
    except EmptyOutputError as exc:
        record.error = f"EmptyOutput: {exc}"
        return record
    record.sequence = seq
    result = empirical_distribution(seq, alphabet)
    record.result = result

    if not dists:
        record.error = "EmptySteps: no usable sample steps"
        return record

    token_mean = mean_step_distribution(dists)
    per_step_max = tuple(d.p_max for d in dists)
    record.metrics = MetricReport(
        e_score=e_score(dists),
        atvd_task_token=atvd(task.probs, token_mean),
        atvd_task_result=atvd(task.probs, result),
        atvd_token_result=atvd(token_mean, result),
        atvd_step=atvd_step(dists, task),
        per_step_max=per_step_max,
        mean_token_distribution=token_mean,
    )
    record.metrics.validate()
    return record


def _fill_pairwise_hamming(trials: list[TrialRecord]) -> None:
    """Per-trial diversity: mean Hamming distance to every other parsed trial.

    The mean of these per-trial values equals the mean pairwise distance.
    With fewer than two parsed trials the distance is 0 by convention.
    """
    parsed = [t for t in trials if t.metrics is not None and t.sequence is not None]
    if len(parsed) < 2:
        return
    seqs = {id(t): list(t.sequence.labels) for t in parsed}
    for t in parsed:
        others = [
            hamming_diversity(seqs[id(t)], seqs[id(o)]) for o in parsed if o is not t
        ]
        t.metrics.hamming = math.fsum(others) / len(others)


def classify(
    cell_aggregate: dict,
    task: TaskDistribution,
    thresholds: ClassifyThresholds = ClassifyThresholds(),
) -> str:
    """D / E / indeterminate from the cell aggregate.

    D: mean e-score at least d_escore_min AND at least margin_min above the
    task's own maximum probability (extreme regardless of what was asked).
    E: step-level deviation no worse than twice the mean-level deviation AND
    e-score within margin_min of the task maximum (tracks the task).
    Thresholds use strict >= boundaries. The step/mean comparison carries a
    1e-12 absolute slack so an exactly-aligned sampler (both deviations at
    float noise) still lands in E.
    """
    mean_e = cell_aggregate["e_score"][0]
    mean_atvd_step = cell_aggregate["atvd_step"][0]
    mean_atvd_tt = cell_aggregate["atvd_task_token"][0]
    margin = mean_e - task.max_prob
    if mean_e >= thresholds.d_escore_min and margin >= thresholds.margin_min:
        return "D"
    if mean_atvd_step <= 2.0 * mean_atvd_tt + 1e-12 and margin < thresholds.margin_min:
        return "E"
    return "indeterminate"


def run_cell(
    backend,
    backend_config: bk.BackendConfig,
    task_id: str,
    spec: PromptSpec,
    runs: int,
    store_path=None,
    temperature: float | None = None,
    jobs: int = 1,
    thresholds: ClassifyThresholds = ClassifyThresholds(),
    cell_id: str | None = None,
) -> CellResult:
    """Run R trials of one (backend, task) pair and aggregate.

    Transcripts are all persisted before metric computation. Trial failures
    are recorded; only a cell with zero successes raises.
    """
    if runs < 1:
        raise ConfigError("runs_per_cell must be >= 1")
    task = reference_distribution(spec)
    prompt = render_prompt(spec)
    tau = backend_config.temperature if temperature is None else float(temperature)
    cell_id = cell_id or f"{backend_config.model}__{task_id}__T{tau:g}"

    def one(index: int):
        trial_id = f"{cell_id}__r{index}"
        try:
            return backend.generate(
                prompt, trial_index=index, temperature=tau, trial_id=trial_id
            ), None
        except SampleProbeError as exc:
            return None, f"{type(exc).__name__}: {exc}"

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(one, range(runs)))
    else:
        outcomes = [one(i) for i in range(runs)]

    # persist raw data first, in trial order
    if store_path is not None:
        for transcript, _err in outcomes:
            if transcript is not None:
                bk.record_transcript(transcript, store_path)

    trials: list[TrialRecord] = []
    for index, (transcript, err) in enumerate(outcomes):
        if transcript is None:
            trials.append(
                TrialRecord(f"{cell_id}__r{index}", None, error=err)
            )
            continue
        trials.append(analyze_transcript(transcript, task))

    _fill_pairwise_hamming(trials)
    parsed = [t.metrics for t in trials if t.metrics is not None]
    if not parsed:
        raise AllTrialsFailedError(f"cell {cell_id}: all {runs} trials failed")
    aggregate = aggregate_trials(parsed)

    exclusions = {
        "attempted": runs,
        "succeeded": len(parsed),
        "failed_trials": sum(1 for t in trials if t.transcript is None),
        "empty_outputs": sum(
            1 for t in trials if t.error is not None and t.error.startswith("EmptyOutput")
        ),
        "truncated_trials": sum(
            1 for t in trials if t.transcript is not None and t.transcript.truncated
        ),
        "all_missing_steps": sum(t.all_missing_steps for t in trials),
    }
    return CellResult(
        cell_id=cell_id,
        model_id=backend_config.model,
        task_id=task_id,
        temperature=tau,
        task=task,
        trials=trials,
        aggregate=aggregate,
        classification=classify(aggregate, task, thresholds),
        exclusions=exclusions,
    )


def temperature_sweep(
    backend,
    backend_config: bk.BackendConfig,
    task_id: str,
    spec: PromptSpec,
    grid,
    runs: int,
    store_path=None,
    jobs: int = 1,
    thresholds: ClassifyThresholds = ClassifyThresholds(),
) -> list[CellResult]:
    """One cell per grid temperature; the e-score series is the sweep curve."""
    grid = list(grid)
    if not grid:
        raise ConfigError("temperature grid is empty")
    for tau in grid:
        if tau <= 0:
            raise ConfigError(f"temperature {tau!r} must be > 0")
    return [
        run_cell(
            backend,
            backend_config,
            task_id,
            spec,
            runs,
            store_path=store_path,
            temperature=tau,
            jobs=jobs,
            thresholds=thresholds,
        )
        for tau in grid
    ]


def prior_study(
    backend,
    backend_config: bk.BackendConfig,
    alphabet: Alphabet,
    runs: int,
    store_path=None,
    jobs: int = 1,
    sample_count: int = 100,
) -> CellResult:
    """Prior probe: no target distribution in the prompt; ATVDs are computed
    against U(X)."""
    spec = PromptSpec(kind="prior", alphabet=alphabet, sample_count=sample_count)
    return run_cell(
        backend,
        backend_config,
        "prior",
        spec,
        runs,
        store_path=store_path,
        jobs=jobs,
    )


# ---------------------------------------------------------------------------
# First-token study
# ---------------------------------------------------------------------------

@dataclass
class FirstTokenResult:
    p_max_values: list[float]
    e_score: float
    excluded: int  # prompts whose first step had no option token in top-k
    histogram_edges: list[float]
    histogram_counts: list[int]


def load_first_token_corpus(path) -> list[tuple[str, Alphabet, str | None]]:
    """Line-delimited corpus: {prompt, options: [{label, token_text}], gold?}."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise CorpusFormatError(f"cannot read corpus {path}: {exc}") from exc
    entries = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
            prompt = record["prompt"]
            options = record["options"]
            alphabet = Alphabet.from_labels(
                [o["label"] for o in options],
                [o.get("token_text", o["label"]) for o in options],
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise CorpusFormatError(f"line {lineno}: {exc}") from exc
        entries.append((prompt, alphabet, record.get("gold")))
    if not entries:
        raise CorpusFormatError(f"corpus {path} has no prompts")
    return entries


def first_token_study(
    backend,
    backend_config: bk.BackendConfig,
    corpus_path,
    store_path=None,
    bins: int = 20,
) -> FirstTokenResult:
    """p_max of the first generated token, restricted to each prompt's
    options; the aggregate e-score is the mean over prompts."""
    corpus = load_first_token_corpus(corpus_path)
    p_max_values = []
    excluded = 0
    for index, (prompt, alphabet, _gold) in enumerate(corpus):
        transcript = backend.generate(
            prompt, trial_index=index, trial_id=f"first_token__{index}"
        )
        if store_path is not None:
            bk.record_transcript(transcript, store_path)
        if not transcript.steps:
            excluded += 1
            continue
        try:
            dist = restrict_and_normalize(transcript.steps[0], alphabet)
        except AllMissingError:
            excluded += 1
            continue
        p_max_values.append(dist.p_max)
    if not p_max_values:
        raise CorpusFormatError("no prompt produced a usable first token")
    counts, edges = np.histogram(p_max_values, bins=bins, range=(0.0, 1.0))
    return FirstTokenResult(
        p_max_values=p_max_values,
        e_score=math.fsum(p_max_values) / len(p_max_values),
        excluded=excluded,
        histogram_edges=[float(e) for e in edges],
        histogram_counts=[int(c) for c in counts],
    )


# ---------------------------------------------------------------------------
# Quota-compensation analysis
# ---------------------------------------------------------------------------

@dataclass
class QuotaAnalysis:
    pooled_r: float | None  # None when the pooled delta series is constant
    pooled_slope: float | None
    per_symbol_r: dict[str, float | None]
    n_pairs: int
    degenerate: bool


def quota_analysis(trials, task: TaskDistribution) -> QuotaAnalysis:
    """Regress step-to-step changes of P_token on the running residual
    d_i = task_i - P_result^t(x_i).

    Pairs come from the transcript's sample steps directly: the prefix after
    step t counts every sampled alphabet token through t (off-alphabet
    emissions never count), and a pair (t, t+1) is used only when both steps
    are adjacent sample steps with defined restricted distributions. Synthetic
    quota transcripts annotate steps where the probability floor bound; those
    pairs are excluded so the floor-free mechanism is what gets measured.
    """
    alphabet = task.alphabet
    n = alphabet.size
    token_pos = alphabet.token_index()
    ds: list[list[float]] = [[] for _ in range(n)]
    dps: list[list[float]] = [[] for _ in range(n)]
    usable = 0
    for trial in trials:
        if trial.transcript is None:
            continue
        skip = set(trial.transcript.meta.get("floor_bound_steps", []))
        marked = mark_sample_steps(trial.transcript.steps, alphabet)
        dists: list[StepDistribution | None] = []
        counts = [0] * n
        prefixes: list[tuple[float, ...]] = []
        for step in marked:
            if not step.is_sample_step:
                continue
            try:
                dists.append(restrict_and_normalize(step, alphabet))
            except AllMissingError:
                dists.append(None)
            counts[token_pos[step.sampled_token_text]] += 1
            total = sum(counts)
            prefixes.append(tuple(c / total for c in counts))
        for t in range(len(dists) - 1):
            if t in skip or dists[t] is None or dists[t + 1] is None:
                continue
            usable += 1
            freq = prefixes[t]
            for i in range(n):
                ds[i].append(task.probs[i] - freq[i])
                dps[i].append(dists[t + 1].probs[i] - dists[t].probs[i])
    if usable < 1:
        raise InsufficientStepsError(
            "need at least two consecutive sample steps across the trials"
        )

    def safe_r(xs, ys):
        try:
            return pearson_r(xs, ys)
        except DegenerateVarianceError:
            return None

    per_symbol = {
        alphabet.labels[i]: safe_r(ds[i], dps[i]) if len(ds[i]) >= 2 else None
        for i in range(n)
    }
    pooled_d = [v for col in ds for v in col]
    pooled_dp = [v for col in dps for v in col]
    pooled = safe_r(pooled_d, pooled_dp)
    slope = None
    if pooled is not None:
        try:
            slope = regression_slope(pooled_d, pooled_dp)
        except DegenerateVarianceError:
            slope = None
    return QuotaAnalysis(
        pooled_r=pooled,
        pooled_slope=slope,
        per_symbol_r=per_symbol,
        n_pairs=usable,
        degenerate=pooled is None,
    )
