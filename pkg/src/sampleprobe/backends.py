"""Model backends that produce per-step top-k logprob transcripts.

Three kinds behind one generate() surface:

* synthetic -- seeded generator families (E, D, quota-compensating) used as
  test oracles; deterministic given (spec, seed, trial index).
* http      -- OpenAI-compatible chat-completions client with logprobs.
* replay    -- replays a stored transcript file, byte-identically.

Transcripts round-trip losslessly through an append-only JSONL store.
"""

from __future__ import annotations

import json
import math
import os
import threading
import time
from dataclasses import dataclass, field

import numpy as np
import requests

from .core import TaskDistribution
from .errors import (
    LogprobsUnavailableError,
    NetworkBackendError,
    PlanExhaustedError,
    SchemaVersionError,
    StoreError,
)
from .extract import StepRecord

SCHEMA_VERSION = 1
SEPARATOR_TOKEN = ", "


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a synthetic generator family.

    family "E": every sample step's restricted distribution equals the task.
    family "D": near-one-hot steps following a fixed per-trial plan; epsilon
    is the total probability mass leaked off the plan token.
    family "quota": compensating process that shifts each symbol's probability
    by lam times its running residual (task minus emitted frequency).
    """

    family: str  # "E" | "D" | "quota"
    task: TaskDistribution
    epsilon: float = 0.0
    lam: float = 0.5
    plan_policy: str = "iid_draw"  # or "sorted_blocks"
    n_samples: int = 100
    emit_separators: bool = True
    floor: float = 1e-6

    def __post_init__(self):
        if self.family not in ("E", "D", "quota"):
            raise ValueError(f"unknown synthetic family {self.family!r}")
        if not (0.0 <= self.epsilon < 0.5):
            raise ValueError("epsilon must be in [0, 0.5)")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.plan_policy not in ("iid_draw", "sorted_blocks"):
            raise ValueError(f"unknown plan_policy {self.plan_policy!r}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")


@dataclass(frozen=True)
class BackendConfig:
    kind: str  # "http" | "replay" | "synthetic"
    model: str = "synthetic"
    top_k: int = 5
    temperature: float = 1.0
    max_tokens: int = 4096
    endpoint: str | None = None
    api_key_env: str | None = None
    timeout: float = 60.0
    retries: int = 3
    max_in_flight: int = 8  # concurrent generate() calls per http backend
    synthetic: SyntheticSpec | None = None
    store_path: str | None = None

    def __post_init__(self):
        if self.kind not in ("http", "replay", "synthetic"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.kind == "synthetic" and self.synthetic is None:
            raise ValueError("synthetic backend needs a SyntheticSpec")
        if self.kind == "http" and not self.endpoint:
            raise ValueError("http backend needs an endpoint")
        if self.kind == "replay" and not self.store_path:
            raise ValueError("replay backend needs a store_path")


@dataclass
class Transcript:
    """One full generation: prompt, raw steps, and backend metadata.

    Invariant: output_text is exactly the concatenation of sampled tokens.
    """

    trial_id: str
    prompt: str
    output_text: str
    steps: list[StepRecord]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        joined = "".join(s.sampled_token_text for s in self.steps)
        if joined != self.output_text:
            raise ValueError("steps do not reconstruct output_text")

    @property
    def truncated(self) -> bool:
        return bool(self.meta.get("truncated", False))


def exact_logprob(p: float) -> float:
    """log(p), nudged by up to 2 ulps so exp() recovers p bitwise when a
    double with that property exists (it does for most round probabilities).
    Keeps synthetic-backend distributions exact through the extraction path."""
    if p <= 0.0:
        raise ValueError("probability must be positive")
    lp = math.log(p)
    cand = lp
    for _ in range(2):
        cand = math.nextafter(cand, math.inf)
        if math.exp(cand) == p:
            return cand
    cand = lp
    for _ in range(2):
        cand = math.nextafter(cand, -math.inf)
        if math.exp(cand) == p:
            return cand
    return lp


def reshape_temperature(probs, tau: float) -> tuple[float, ...]:
    """Local temperature reshaping p_i^(1/tau) / sum_j p_j^(1/tau).

    tau == 1.0 is the identity, bit-for-bit, so default-temperature runs stay
    exact. Zero entries stay exactly zero for every tau.
    """
    if tau <= 0:
        raise ValueError("temperature must be > 0")
    if tau == 1.0:
        return tuple(probs)
    powered = [p ** (1.0 / tau) if p > 0.0 else 0.0 for p in probs]
    total = math.fsum(powered)
    return tuple(w / total for w in powered)


def _d_family_distribution(n: int, plan_index: int, epsilon: float) -> tuple[float, ...]:
    # on-plan mass 1 - epsilon, leak epsilon/(n-1) per off-plan symbol
    if epsilon == 0.0:
        return tuple(1.0 if i == plan_index else 0.0 for i in range(n))
    leak = epsilon / (n - 1)
    return tuple(1.0 - epsilon if i == plan_index else leak for i in range(n))


def _quota_update(probs, lam, floor, task_probs, freq):
    """One compensation step: p_i + lam * (task_i - freq_i), floored and
    renormalized. Returns (new probs, whether the floor bound)."""
    raw = [p + lam * (t - f) for p, t, f in zip(probs, task_probs, freq)]
    bound = any(v < floor for v in raw)
    if bound:
        raw = [max(v, floor) for v in raw]
    total = math.fsum(raw)
    return tuple(v / total for v in raw), bound


def synthetic_step_distribution(
    spec: SyntheticSpec,
    history,
    t: int,
    plan=None,
    temperature: float = 1.0,
) -> tuple[float, ...]:
    """Distribution the family assigns at sample step t given the accepted
    prefix emitted so far (a list of alphabet labels).

    The quota family is a pure function of the prefix: it replays the
    compensation process over every partial prefix, so this agrees exactly
    with the incremental generator. D needs the trial plan.
    """
    task = spec.task
    n = task.alphabet.size
    if spec.family == "E":
        probs = task.probs
    elif spec.family == "D":
        if plan is None:
            raise ValueError("D family needs the trial plan")
        if t >= len(plan):
            raise PlanExhaustedError(f"step {t} beyond plan of length {len(plan)}")
        probs = _d_family_distribution(n, int(plan[t]), spec.epsilon)
    else:  # quota
        history = list(history)[:t]
        index = task.alphabet.label_index()
        probs = task.probs
        counts = [0] * n
        for s, label in enumerate(history, start=1):
            counts[index[label]] += 1
            freq = [c / s for c in counts]
            probs, _ = _quota_update(probs, spec.lam, spec.floor, task.probs, freq)
    return reshape_temperature(probs, temperature)


class SyntheticBackend:
    """Seeded generator for the E / D / quota families.

    Per-trial RNG streams derive from (seed, trial_index), so concurrent
    trials reproduce identically regardless of scheduling.
    """

    def __init__(self, config: BackendConfig, seed: int = 0):
        self.config = config
        self.spec = config.synthetic
        self.seed = int(seed)

    def _rng(self, trial_index: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, int(trial_index)])

    def generate(
        self,
        prompt: str,
        trial_index: int = 0,
        temperature: float | None = None,
        trial_id: str | None = None,
    ) -> Transcript:
        spec = self.spec
        task = spec.task
        alphabet = task.alphabet
        n = alphabet.size
        tau = self.config.temperature if temperature is None else float(temperature)
        rng = self._rng(trial_index)

        plan = None
        if spec.family == "D":
            plan = rng.choice(n, size=spec.n_samples, p=np.asarray(task.probs))
            if spec.plan_policy == "sorted_blocks":
                plan = np.sort(plan)

        steps: list[StepRecord] = []
        emitted_counts = [0] * n
        emitted_total = 0
        quota_probs = task.probs
        floor_bound_steps: list[int] = []
        truncated = False
        step_index = 0

        for k in range(spec.n_samples):
            if step_index >= self.config.max_tokens:
                truncated = True
                break
            if spec.family == "E":
                probs = task.probs
            elif spec.family == "D":
                probs = _d_family_distribution(n, int(plan[k]), spec.epsilon)
            else:
                probs = quota_probs
            probs = reshape_temperature(probs, tau)
            choice = int(rng.choice(n, p=np.asarray(probs)))
            token = alphabet.token_texts[choice]
            # synthetic families model full-logit access: every positive-mass
            # alphabet token is reported, regardless of top_k
            top = sorted(
                ((alphabet.token_texts[i], probs[i]) for i in range(n) if probs[i] > 0.0),
                key=lambda e: (-e[1], e[0]),
            )
            steps.append(
                StepRecord(
                    step_index,
                    token,
                    tuple((tok, exact_logprob(p)) for tok, p in top),
                )
            )
            step_index += 1

            emitted_counts[choice] += 1
            emitted_total += 1
            if spec.family == "quota":
                freq = [c / emitted_total for c in emitted_counts]
                quota_probs, bound = _quota_update(
                    quota_probs, spec.lam, spec.floor, task.probs, freq
                )
                if bound:
                    # the k -> k+1 update hit the floor; pair (k, k+1) is tainted
                    floor_bound_steps.append(k)

            if spec.emit_separators and k < spec.n_samples - 1:
                if step_index >= self.config.max_tokens:
                    truncated = True
                    break
                steps.append(StepRecord(step_index, SEPARATOR_TOKEN, ((SEPARATOR_TOKEN, 0.0),)))
                step_index += 1

        meta = {
            "model": self.config.model,
            "temperature": tau,
            "top_k": self.config.top_k,
            "seed": self.seed,
            "trial_index": int(trial_index),
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "truncated": truncated,
            "family": spec.family,
        }
        if spec.family == "quota":
            meta["floor_bound_steps"] = floor_bound_steps
        return Transcript(
            trial_id or f"trial-{trial_index}",
            prompt,
            "".join(s.sampled_token_text for s in steps),
            steps,
            meta,
        )


class HttpBackend:
    """OpenAI-compatible chat-completions client with top-k logprobs.

    The temperature parameter is forwarded to the provider and never
    re-applied locally; recorded logprobs are provider-reported, verbatim.
    Retries (exponential backoff) cover transport errors and 5xx only; a
    provider refusing logprobs is a hard, distinct failure.
    """

    def __init__(self, config: BackendConfig, seed: int = 0):
        self.config = config
        self.seed = int(seed)
        self.session = requests.Session()
        self._gate = threading.Semaphore(max(config.max_in_flight, 1))

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key_env:
            token = os.environ.get(self.config.api_key_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def generate(
        self,
        prompt: str,
        trial_index: int = 0,
        temperature: float | None = None,
        trial_id: str | None = None,
    ) -> Transcript:
        cfg = self.config
        tau = cfg.temperature if temperature is None else float(temperature)
        url = cfg.endpoint.rstrip("/") + "/chat/completions"
        body = {
            "model": cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": tau,
            "max_tokens": cfg.max_tokens,
            "logprobs": True,
            "top_logprobs": cfg.top_k,
        }
        with self._gate:
            data = self._post_with_retries(url, body)
        try:
            choice = data["choices"][0]
        except (KeyError, IndexError) as exc:
            raise NetworkBackendError(f"malformed provider response: {exc}") from exc

        logprobs = choice.get("logprobs") or {}
        content_entries = logprobs.get("content")
        if not content_entries:
            raise LogprobsUnavailableError(
                f"provider returned no logprobs for model {cfg.model!r}"
            )

        steps = []
        try:
            for i, entry in enumerate(content_entries):
                top = []
                seen = set()
                for item in entry.get("top_logprobs") or []:
                    tok = item["token"]
                    if tok in seen:
                        continue
                    seen.add(tok)
                    top.append((tok, float(item["logprob"])))
                if not top:
                    top = [(entry["token"], float(entry["logprob"]))]
                steps.append(StepRecord(i, entry["token"], tuple(top)))
        except (KeyError, TypeError, ValueError) as exc:
            # a trial with corrupt logprob data is a recorded failure, not a crash
            raise NetworkBackendError(f"malformed provider logprobs: {exc}") from exc

        output_text = "".join(s.sampled_token_text for s in steps)
        provider_text = (choice.get("message") or {}).get("content", "")
        meta = {
            "model": cfg.model,
            "temperature": tau,
            "top_k": cfg.top_k,
            "seed": self.seed,
            "trial_index": int(trial_index),
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "truncated": choice.get("finish_reason") == "length",
        }
        if provider_text != output_text:
            meta["provider_text"] = provider_text
        return Transcript(trial_id or f"trial-{trial_index}", prompt, output_text, steps, meta)

    def _post_with_retries(self, url: str, body: dict) -> dict:
        attempts = max(self.config.retries, 0) + 1
        last_exc: Exception | None = None
        for attempt in range(attempts):
            if attempt:
                time.sleep(min(0.25 * 2 ** (attempt - 1), 8.0))
            try:
                resp = self.session.post(
                    url, json=body, headers=self._headers(), timeout=self.config.timeout
                )
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_exc = exc
                continue
            if resp.status_code >= 500:
                last_exc = NetworkBackendError(f"server error {resp.status_code}")
                continue
            if resp.status_code >= 400:
                text = resp.text[:500]
                if "logprob" in text.lower():
                    raise LogprobsUnavailableError(f"{resp.status_code}: {text}")
                raise NetworkBackendError(f"{resp.status_code}: {text}")
            try:
                return resp.json()
            except ValueError as exc:
                raise NetworkBackendError(f"non-JSON provider response: {exc}") from exc
        raise NetworkBackendError(f"transport failed after {attempts} attempts: {last_exc}")


class ReplayBackend:
    """Replays stored transcripts; generate(prompt, i) returns the i-th
    stored transcript whose prompt (and, when recorded, temperature) matches,
    so repeated invocations produce identical results.

    store_path may be a single JSONL file or a directory of them (merged in
    sorted filename order).
    """

    def __init__(self, config: BackendConfig, seed: int = 0):
        self.config = config
        path = config.store_path
        if os.path.isdir(path):
            self.transcripts = []
            for name in sorted(os.listdir(path)):
                if name.endswith(".jsonl"):
                    self.transcripts.extend(load_transcripts(os.path.join(path, name)))
        else:
            self.transcripts = load_transcripts(path)
        self._by_prompt: dict[str, list[Transcript]] = {}
        for t in self.transcripts:
            self._by_prompt.setdefault(t.prompt, []).append(t)

    def generate(
        self,
        prompt: str,
        trial_index: int = 0,
        temperature: float | None = None,
        trial_id: str | None = None,
    ) -> Transcript:
        matching = self._by_prompt.get(prompt, [])
        # narrow by recorded model and temperature where the store has them,
        # so merged multi-cell stores replay into the right cells
        by_model = [t for t in matching if t.meta.get("model") == self.config.model]
        if by_model:
            matching = by_model
        if temperature is not None:
            at_temp = [t for t in matching if t.meta.get("temperature") == temperature]
            if at_temp:
                matching = at_temp
        if trial_index >= len(matching):
            raise StoreError(
                f"store has {len(matching)} transcripts for this prompt, "
                f"trial {trial_index} requested"
            )
        return matching[trial_index]


def make_backend(config: BackendConfig, seed: int = 0):
    if config.kind == "synthetic":
        return SyntheticBackend(config, seed)
    if config.kind == "http":
        return HttpBackend(config, seed)
    return ReplayBackend(config, seed)


# ---------------------------------------------------------------------------
# Transcript store: append-only JSONL, one self-contained record per line.
# ---------------------------------------------------------------------------

def transcript_to_record(t: Transcript) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "trial_id": t.trial_id,
        "prompt": t.prompt,
        "output_text": t.output_text,
        "steps": [
            {
                "t": s.step_index,
                "token": s.sampled_token_text,
                "top": [{"tok": tok, "logprob": lp} for tok, lp in s.top_entries],
            }
            for s in t.steps
        ],
        "meta": t.meta,
    }


def transcript_from_record(record: dict) -> Transcript:
    version = record.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"record schema_version {version!r}, this build reads {SCHEMA_VERSION}"
        )
    steps = [
        StepRecord(
            int(s["t"]),
            s["token"],
            tuple((e["tok"], float(e["logprob"])) for e in s["top"]),
        )
        for s in record["steps"]
    ]
    return Transcript(
        record["trial_id"],
        record["prompt"],
        record["output_text"],
        steps,
        record.get("meta", {}),
    )


def record_transcript(t: Transcript, store) -> None:
    """Append one transcript to the store file (created if missing)."""
    path = os.fspath(store)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    try:
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(transcript_to_record(t), sort_keys=True) + "\n")
    except OSError as exc:
        raise StoreError(f"cannot write {path}: {exc}") from exc


def load_transcripts(store) -> list[Transcript]:
    path = os.fspath(store)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise StoreError(f"cannot read {path}: {exc}") from exc
    out = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise StoreError(f"{path} line {lineno}: invalid JSON ({exc})") from exc
        try:
            out.append(transcript_from_record(record))
        except SchemaVersionError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise StoreError(f"{path} line {lineno}: bad record ({exc})") from exc
    return out


def load_transcript(store, trial_id: str) -> Transcript:
    for t in load_transcripts(store):
        if t.trial_id == trial_id:
            return t
    raise StoreError(f"no transcript with trial_id {trial_id!r} in {store}")
