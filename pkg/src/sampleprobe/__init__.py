"""sampleprobe: distribution-sampling fidelity diagnostics for token-level models.

Measures the alignment between a prescribed task distribution, the model's
per-step restricted token distributions, and the empirical output
distribution; classifies samplers into deterministic (D) and exploratory (E)
regimes; and runs temperature, prior, first-token, layer-probe, and
quota-compensation studies.
"""

from .backends import (
    BackendConfig,
    SyntheticSpec,
    Transcript,
    load_transcript,
    load_transcripts,
    make_backend,
    record_transcript,
    synthetic_step_distribution,
)
from .core import (
    Alphabet,
    PromptSpec,
    Symbol,
    TaskDistribution,
    extreme_task,
    flat_task,
    make_distribution,
    render_prompt,
    uniform_distribution,
)
from .extract import (
    SampleSequence,
    StepDistribution,
    StepRecord,
    empirical_distribution,
    mark_sample_steps,
    parse_output,
    prefix_distributions,
    restrict_and_normalize,
)
from .harness import (
    CellResult,
    ClassifyThresholds,
    TrialRecord,
    analyze_transcript,
    classify,
    first_token_study,
    prior_study,
    quota_analysis,
    run_cell,
    temperature_sweep,
)
from .layerprobe import (
    LayerProbeTrace,
    layer_convergence,
    layer_distributions,
    load_trace,
    up_layer,
)
from .metrics import (
    MetricReport,
    aggregate_trials,
    atvd,
    atvd_step,
    can_hit,
    delta_pass,
    e_score,
    hamming_diversity,
    pearson_r,
    precision_at_k,
)

__version__ = "0.1.0"
