"""layerdump: layer-wise restricted-logit exporter for open-weights causal LMs."""

from .export import (
    ConsistencyError,
    ExporterError,
    ExportJob,
    ExportResult,
    ModelLoadError,
    TokenizationError,
    export,
    export_with,
    find_final_norm,
    single_token_ids,
)

__version__ = "0.1.0"
