import json
import os

import pytest

from sampleprobe.backends import BackendConfig, SyntheticSpec, make_backend
from sampleprobe.core import PromptSpec, extreme_task, flat_task
from sampleprobe.harness import run_cell
from sampleprobe.reporting import (
    RunManifest,
    config_digest,
    emit_escore_bars,
    emit_quota_bars,
    emit_step_trace,
    emit_table,
    emit_temperature_curve,
    fmt_mean_std,
    write_manifest,
)


def make_cell(family="E", task=None, task_id="extreme", runs=3, seed=7):
    task = task or extreme_task()
    cfg = BackendConfig(
        kind="synthetic",
        model=f"synth-{family}",
        synthetic=SyntheticSpec(family=family, task=task, n_samples=30),
    )
    backend = make_backend(cfg, seed=seed)
    spec = PromptSpec(kind="simulated", distribution=task)
    return run_cell(backend, cfg, task_id, spec, runs)


def test_fmt_mean_std():
    assert fmt_mean_std(0.0804, 0.0213) == "0.080 ± 0.021"


def test_sampling_table_shape(tmp_path):
    cells = [
        make_cell("E", extreme_task(), "extreme"),
        make_cell("D", extreme_task(), "extreme"),
        make_cell("E", flat_task(), "flat"),
        make_cell("D", flat_task(), "flat"),
    ]
    table = emit_table(cells, "sampling", tmp_path / "t.json", tmp_path / "t.tsv")
    # pivoted grid: 4 ATVD metrics per task, two tasks -> 8 metric columns
    assert len(table["columns"]) == 8
    assert len(table["rows"]) == 2
    tsv = (tmp_path / "t.tsv").read_text().splitlines()
    assert len(tsv) == 3
    assert tsv[0].split("\t")[0] == "model"
    # 3-decimal mean +/- std formatting
    assert "±" in tsv[1]


def test_single_cell_table(tmp_path):
    table = emit_table([make_cell()], "sampling", tmp_path / "t.json", tmp_path / "t.tsv")
    assert len(table["rows"]) == 1


def test_table_reemission_is_byte_identical(tmp_path):
    cells = [make_cell("E"), make_cell("D")]
    emit_table(cells, "sampling", tmp_path / "a.json", tmp_path / "a.tsv")
    emit_table(cells, "sampling", tmp_path / "b.json", tmp_path / "b.tsv")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()


def test_prior_table_shape(tmp_path):
    table = emit_table([make_cell()], "prior", tmp_path / "p.json", tmp_path / "p.tsv")
    assert table["columns"] == [
        "atvd_task_result",
        "atvd_task_token",
        "atvd_token_result",
    ]


def test_first_token_table(tmp_path):
    from sampleprobe.harness import FirstTokenResult
    from sampleprobe.reporting import emit_first_token_table

    results = {
        "model-a": FirstTokenResult([0.9, 0.8], 0.85, 1, [0.0, 1.0], [2]),
        "model-b": FirstTokenResult([0.25], 0.25, 0, [0.0, 1.0], [1]),
    }
    table = emit_first_token_table(results, tmp_path / "f.json", tmp_path / "f.tsv")
    assert table["columns"] == ["e_score", "n_prompts", "excluded"]
    lines = (tmp_path / "f.tsv").read_text().splitlines()
    assert lines[1].startswith("model-a\t0.850\t2\t1")


def test_plotdata_files(tmp_path):
    cells = [make_cell("E"), make_cell("D")]
    emit_escore_bars(cells, tmp_path / "bars.tsv")
    bars = (tmp_path / "bars.tsv").read_text().splitlines()
    assert len(bars) == 3

    emit_step_trace(cells[0], tmp_path / "trace.tsv")
    trace = (tmp_path / "trace.tsv").read_text().splitlines()
    assert trace[0] == "step\t1\t2\t3\t4"
    assert len(trace) == 31  # 30 sample steps + header

    emit_temperature_curve(cells, tmp_path / "temp.tsv")
    assert len((tmp_path / "temp.tsv").read_text().splitlines()) == 3


def test_quota_bars(tmp_path):
    from sampleprobe.harness import QuotaAnalysis

    entries = [
        ("cellA", QuotaAnalysis(0.95, 0.5, {"1": 0.9}, 1200, False)),
        ("cellB", QuotaAnalysis(None, None, {"1": None}, 50, True)),
    ]
    emit_quota_bars(entries, tmp_path / "q.tsv")
    lines = (tmp_path / "q.tsv").read_text().splitlines()
    assert len(lines) == 3
    assert "nan" in lines[2]


def test_manifest_requires_existing_paths(tmp_path):
    manifest = RunManifest(digest="0" * 64, paths=["missing.json"])
    with pytest.raises(FileNotFoundError):
        write_manifest(manifest, tmp_path)
    (tmp_path / "present.json").write_text("{}")
    manifest = RunManifest(digest="0" * 64, paths=["present.json"])
    path = write_manifest(manifest, tmp_path)
    assert os.path.exists(path)


def test_config_digest_stability():
    a = config_digest({"b": 1, "a": [1, 2]})
    b = config_digest({"a": [1, 2], "b": 1})
    assert a == b
    assert len(a) == 64
    assert a != config_digest({"a": [1, 2], "b": 2})
