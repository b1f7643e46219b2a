"""Experiment config file loading.

The config is a single JSON object: tasks, backends, run counts, study list,
grids, thresholds, output directory. JSON was chosen over looser formats so a
config digest is stable and replayable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .backends import BackendConfig, SyntheticSpec
from .core import Alphabet, PromptSpec, make_distribution
from .errors import ConfigError
from .harness import ClassifyThresholds

KNOWN_STUDIES = ("sampling", "sweep", "prior", "quota", "first_token")


@dataclass(frozen=True)
class ExperimentTask:
    task_id: str
    spec: PromptSpec


@dataclass(frozen=True)
class ExperimentBackend:
    backend_id: str
    config: BackendConfig


@dataclass
class ExperimentConfig:
    tasks: list[ExperimentTask]
    backends: list[ExperimentBackend]
    runs_per_cell: int = 10
    seed: int = 0
    out_dir: str = "out"
    studies: tuple[str, ...] = ("sampling",)
    temperature_grid: list[float] = field(default_factory=list)
    first_token_corpus: str | None = None
    prior_labels: list[str] | None = None
    thresholds: ClassifyThresholds = field(default_factory=ClassifyThresholds)

    def __post_init__(self):
        if self.runs_per_cell < 1:
            raise ConfigError("runs_per_cell must be >= 1")
        for tau in self.temperature_grid:
            if tau <= 0:
                raise ConfigError(f"temperature {tau!r} must be > 0")
        for study in self.studies:
            if study not in KNOWN_STUDIES:
                raise ConfigError(f"unknown study {study!r}")
        ids = [t.task_id for t in self.tasks]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate task ids")
        bids = [b.backend_id for b in self.backends]
        if len(set(bids)) != len(bids):
            raise ConfigError("duplicate backend ids")


def _build_alphabet(obj: dict, where: str) -> Alphabet:
    labels = obj.get("labels")
    if not labels:
        raise ConfigError(f"{where}: missing labels")
    return Alphabet.from_labels(labels, obj.get("token_texts"))


def _build_task(obj: dict) -> ExperimentTask:
    task_id = obj.get("id")
    if not task_id:
        raise ConfigError("task without id")
    kind = obj.get("kind", "simulated")
    alphabet = _build_alphabet(obj, f"task {task_id}")
    sample_count = int(obj.get("sample_count", 100))
    if kind == "simulated":
        probs = obj.get("probs")
        if probs is None:
            raise ConfigError(f"task {task_id}: simulated task needs probs")
        dist = make_distribution(alphabet, probs)
        spec = PromptSpec(kind="simulated", distribution=dist, sample_count=sample_count)
    elif kind == "prior":
        spec = PromptSpec(kind="prior", alphabet=alphabet, sample_count=sample_count)
    else:
        raise ConfigError(f"task {task_id}: unsupported kind {kind!r}")
    return ExperimentTask(task_id, spec)


def _build_synthetic_spec(obj: dict, tasks: dict[str, ExperimentTask], where: str) -> SyntheticSpec:
    family = obj.get("family")
    if family not in ("E", "D", "quota"):
        raise ConfigError(f"{where}: synthetic family must be E, D, or quota")
    task_ref = obj.get("task")
    if isinstance(task_ref, str):
        if task_ref not in tasks:
            raise ConfigError(f"{where}: unknown task reference {task_ref!r}")
        spec = tasks[task_ref].spec
        if spec.kind == "simulated":
            dist = spec.distribution
        else:
            from .core import uniform_distribution

            dist = uniform_distribution(spec.effective_alphabet())
    elif isinstance(task_ref, dict):
        dist = make_distribution(
            _build_alphabet(task_ref, where), task_ref.get("probs")
        )
    else:
        raise ConfigError(f"{where}: synthetic backend needs a task (id or inline)")
    return SyntheticSpec(
        family=family,
        task=dist,
        epsilon=float(obj.get("epsilon", 0.0)),
        lam=float(obj.get("lambda", obj.get("lam", 0.5))),
        plan_policy=obj.get("plan_policy", "iid_draw"),
        n_samples=int(obj.get("n_samples", 100)),
        emit_separators=bool(obj.get("emit_separators", True)),
        floor=float(obj.get("floor", 1e-6)),
    )


def _build_backend(obj: dict, tasks: dict[str, ExperimentTask]) -> ExperimentBackend:
    backend_id = obj.get("id") or obj.get("model")
    if not backend_id:
        raise ConfigError("backend without id or model")
    kind = obj.get("kind")
    common = dict(
        model=obj.get("model", backend_id),
        top_k=int(obj.get("top_k", 5)),
        temperature=float(obj.get("temperature", 1.0)),
        max_tokens=int(obj.get("max_tokens", 4096)),
        timeout=float(obj.get("timeout", 60.0)),
        retries=int(obj.get("retries", 3)),
    )
    if kind == "synthetic":
        config = BackendConfig(
            kind="synthetic",
            synthetic=_build_synthetic_spec(obj, tasks, f"backend {backend_id}"),
            **common,
        )
    elif kind == "http":
        if not obj.get("endpoint"):
            raise ConfigError(f"backend {backend_id}: http backend needs endpoint")
        config = BackendConfig(
            kind="http",
            endpoint=obj["endpoint"],
            api_key_env=obj.get("api_key_env"),
            **common,
        )
    elif kind == "replay":
        if not obj.get("store_path"):
            raise ConfigError(f"backend {backend_id}: replay backend needs store_path")
        config = BackendConfig(kind="replay", store_path=obj["store_path"], **common)
    else:
        raise ConfigError(f"backend {backend_id}: unknown kind {kind!r}")
    return ExperimentBackend(backend_id, config)


def parse_experiment_config(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    try:
        tasks = [_build_task(t) for t in data.get("tasks", [])]
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad task entry: {exc}") from exc
    if not tasks:
        raise ConfigError("config declares no tasks")
    task_map = {t.task_id: t for t in tasks}
    backends = [_build_backend(b, task_map) for b in data.get("backends", [])]
    if not backends:
        raise ConfigError("config declares no backends")
    thresholds_obj = data.get("thresholds", {})
    thresholds = ClassifyThresholds(
        d_escore_min=float(thresholds_obj.get("d_escore_min", 0.9)),
        margin_min=float(thresholds_obj.get("margin_min", 0.15)),
    )
    return ExperimentConfig(
        tasks=tasks,
        backends=backends,
        runs_per_cell=int(data.get("runs_per_cell", 10)),
        seed=int(data.get("seed", 0)),
        out_dir=data.get("out_dir", "out"),
        studies=tuple(data.get("studies", ["sampling"])),
        temperature_grid=[float(t) for t in data.get("temperature_grid", [])],
        first_token_corpus=data.get("first_token_corpus"),
        prior_labels=data.get("prior_labels"),
        thresholds=thresholds,
    )


def load_experiment_config(path) -> tuple[ExperimentConfig, dict]:
    """Returns (config, raw dict); the raw dict feeds the run digest."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_experiment_config(data), data
