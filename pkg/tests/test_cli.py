import json
import os
import subprocess
import sys

import pytest

from demo_config import demo_config_dict
from sampleprobe.cli import main

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def run_cli(args, capsys=None):
    code = main(args)
    if capsys is not None:
        return code, capsys.readouterr()
    return code


def write_config(tmp_path, name="cfg.json", **overrides):
    path = tmp_path / name
    path.write_text(json.dumps(demo_config_dict(**overrides), indent=1))
    return path


# ---------------------------------------------------------------------------
# determinism of `run`
# ---------------------------------------------------------------------------

def normalized_tree(out_dir):
    """Every output file with volatile fields (timestamps, wall clock)
    stripped; everything else byte-for-byte."""
    tree = {}
    for root, _dirs, files in os.walk(out_dir):
        for name in files:
            path = os.path.join(root, name)
            rel = os.path.relpath(path, out_dir)
            with open(path, "rb") as fh:
                raw = fh.read()
            if name == "manifest.json":
                obj = json.loads(raw)
                obj.pop("wall_clock_s", None)
                obj.pop("generated_at", None)
                tree[rel] = json.dumps(obj, sort_keys=True)
            elif rel.startswith("transcripts"):
                records = []
                for line in raw.decode().splitlines():
                    rec = json.loads(line)
                    rec.get("meta", {}).pop("timestamp", None)
                    records.append(json.dumps(rec, sort_keys=True))
                tree[rel] = "\n".join(records)
            else:
                tree[rel] = raw
    return tree


def test_run_deterministic_across_jobs(tmp_path):
    cfg = write_config(
        tmp_path,
        studies=["sampling", "quota", "sweep", "prior"],
        temperature_grid=[0.5, 1.0, 2.0],
    )
    out1 = tmp_path / "out1"
    out2 = tmp_path / "out2"
    assert run_cli(["run", "--config", str(cfg), "--out", str(out1),
                    "--seed", "7", "--jobs", "1"]) == 0
    assert run_cli(["run", "--config", str(cfg), "--out", str(out2),
                    "--seed", "7", "--jobs", "4"]) == 0
    t1, t2 = normalized_tree(out1), normalized_tree(out2)
    assert sorted(t1) == sorted(t2)
    for rel in t1:
        assert t1[rel] == t2[rel], f"mismatch in {rel}"


def test_run_refuses_nonempty_out(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    out.mkdir()
    (out / "junk").write_text("x")
    code, captured = run_cli(
        ["run", "--config", str(cfg), "--out", str(out)], capsys
    )
    assert code == 1
    err = json.loads(captured.err)
    assert err["error"] == "ConfigError"


def test_run_report_structure(tmp_path):
    cfg = write_config(tmp_path, studies=["sampling", "quota"])
    out = tmp_path / "out"
    assert run_cli(["run", "--config", str(cfg), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert len(report["cells"]) == 2
    by_model = {c["model"]: c for c in report["cells"]}
    assert by_model["synth-E"]["classification"] == "E"
    assert by_model["synth-D"]["classification"] == "D"
    assert by_model["synth-E"]["aggregate"]["e_score"]["mean"] == 0.7
    assert "quota" in report["studies"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_digest"] == report["config_digest"]
    for rel in manifest["paths"]:
        assert (out / rel).exists()


def test_report_matches_schema(tmp_path):
    jsonschema = pytest.importorskip("jsonschema")
    cfg = write_config(
        tmp_path,
        studies=["sampling", "quota", "sweep", "prior"],
        temperature_grid=[0.5, 1.0],
    )
    out = tmp_path / "out"
    assert run_cli(["run", "--config", str(cfg), "--out", str(out)]) == 0
    import sampleprobe

    schema_path = os.path.join(
        os.path.dirname(sampleprobe.__file__), "schemas", "report.schema.json"
    )
    schema = json.loads(open(schema_path).read())
    report = json.loads((out / "report.json").read_text())
    jsonschema.validate(report, schema)


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

def test_replay_reproduces_report(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    assert run_cli(["run", "--config", str(cfg), "--out", str(out)]) == 0
    replay_out = tmp_path / "replay_out"
    assert run_cli([
        "replay", "--config", str(cfg), "--store", str(out / "transcripts"),
        "--out", str(replay_out),
    ]) == 0
    original = json.loads((out / "report.json").read_text())
    replayed = json.loads((replay_out / "report.json").read_text())
    assert replayed["cells"] == original["cells"]
    assert replayed["studies"] == original["studies"]


def test_replay_bundled_fixture():
    store = os.path.join(FIXTURES, "synthetic_store.jsonl")
    expected = json.loads(open(os.path.join(FIXTURES, "expected_cells.json")).read())
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        cfg_path = os.path.join(tmp, "cfg.json")
        with open(cfg_path, "w") as fh:
            json.dump(demo_config_dict(), fh)
        out = os.path.join(tmp, "out")
        assert main(["replay", "--config", cfg_path, "--store", store,
                     "--out", out]) == 0
        report = json.loads(open(os.path.join(out, "report.json")).read())
        got = {
            c["model"]: {k: c["aggregate"][k] for k in sorted(c["aggregate"])}
            for c in report["cells"]
        }
        assert got == expected


# ---------------------------------------------------------------------------
# other subcommands
# ---------------------------------------------------------------------------

def test_validate_ok_and_malformed_dump(tmp_path, capsys):
    cfg = write_config(tmp_path)
    dump = tmp_path / "dump.jsonl"
    dump.write_text('{"schema_version": 1, "model": "m", "prompt_id": "p", '
                    '"n_layers": 1, "alphabet": ["1","2"], "steps": [0]}\n'
                    '{"schema_version": 1, "model": "m", "prompt_id": "p", '
                    '"layer": 0, "step": 0, "logits": [0.0, 1.0]}\n')
    code, captured = run_cli(["validate", "--config", str(cfg), "--dump", str(dump)], capsys)
    assert code == 0
    assert json.loads(captured.out.strip())["ok"] is True

    bad = tmp_path / "bad.jsonl"
    bad.write_text("{broken\n")
    code, captured = run_cli(["validate", "--dump", str(bad)], capsys)
    assert code == 1
    err = json.loads(captured.err)
    assert err["error"] == "FormatError"
    assert "line 1" in err["message"]


def test_quota_subcommand(tmp_path, capsys):
    cfg = write_config(tmp_path, backends=[
        {"id": "synthQ", "kind": "synthetic", "model": "synth-Q", "family": "quota",
         "task": "extreme", "lambda": 0.5, "n_samples": 300},
    ])
    out = tmp_path / "out"
    assert run_cli(["run", "--config", str(cfg), "--out", str(out)]) == 0
    capsys.readouterr()
    store = out / "transcripts" / "synth-Q__extreme.jsonl"
    code, captured = run_cli(
        ["quota", "--config", str(cfg), "--store", str(store)], capsys
    )
    assert code == 0
    payload = json.loads(captured.out.strip())
    assert payload["pooled_r"] >= 0.9
    assert payload["task"] == "extreme"


def test_layers_subcommand(tmp_path, capsys):
    from test_layerprobe import step_function_logits, write_dump

    dump = write_dump(tmp_path / "dump.jsonl", 16, range(5), step_function_logits(9))
    cfg = write_config(tmp_path)
    out = tmp_path / "layers_out"
    code, captured = run_cli(
        ["layers", "--dump", str(dump), "--config", str(cfg), "--out", str(out)],
        capsys,
    )
    assert code == 0
    payload = json.loads(captured.out.strip())
    assert payload["up_layer"] == 9
    assert len(payload["convergence"]) == 16
    assert len(payload["convergence_per_step"]) == 5
    assert (out / "layer_convergence.tsv").exists()
    assert (out / "layer_convergence_step0.tsv").exists()


def test_sweep_subcommand(tmp_path):
    cfg = write_config(tmp_path, temperature_grid=[0.5, 1.0, 2.0])
    out = tmp_path / "out"
    assert run_cli(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    series = report["studies"]["sweep"]["synth-E__extreme"]
    scores = [p["e_score"] for p in series]
    assert scores[0] > scores[1] > scores[2]


def test_first_token_subcommand(tmp_path):
    corpus = tmp_path / "corpus.jsonl"
    lines = [
        json.dumps({"prompt": f"Q{i}: pick.", "options": [{"label": l} for l in "1234"]})
        for i in range(10)
    ]
    corpus.write_text("\n".join(lines) + "\n")
    cfg = write_config(tmp_path, first_token_corpus=str(corpus))
    out = tmp_path / "out"
    assert run_cli(["first-token", "--config", str(cfg), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["studies"]["first_token"]["synth-D"]["e_score"] == 1.0


def test_run_with_http_backend_against_stub(tmp_path):
    # full `run` through the OpenAI-compatible client, served by a local stub
    import math

    from test_backends import StubProvider

    def payload(labels):
        tokens = []
        for i, l in enumerate(labels):
            tokens.append(l)
            if i < len(labels) - 1:
                tokens.append(", ")
        entries = []
        for tok in tokens:
            if tok == ", ":
                top = [{"token": ", ", "logprob": math.log(0.99)},
                       {"token": "\n", "logprob": math.log(0.01)}]
            else:
                top = [
                    {"token": "2", "logprob": math.log(0.7)},
                    {"token": "1", "logprob": math.log(0.1)},
                    {"token": "3", "logprob": math.log(0.1)},
                    {"token": "4", "logprob": math.log(0.1)},
                ]
            entries.append({"token": tok, "logprob": top[0]["logprob"],
                            "top_logprobs": top})
        return {
            "choices": [{
                "message": {"role": "assistant", "content": "".join(tokens)},
                "finish_reason": "stop",
                "logprobs": {"content": entries},
            }]
        }

    provider = StubProvider([(200, payload("2212")), (200, payload("2422"))])
    try:
        cfg = write_config(
            tmp_path,
            runs_per_cell=2,
            studies=["sampling"],
            backends=[{
                "id": "live",
                "kind": "http",
                "model": "stub-model",
                "endpoint": provider.endpoint,
                "top_k": 4,
            }],
        )
        out = tmp_path / "out"
        assert run_cli(["run", "--config", str(cfg), "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        cell = report["cells"][0]
        assert cell["model"] == "stub-model"
        assert cell["exclusions"]["attempted"] == 2
        assert cell["exclusions"]["succeeded"] == 2
        # every step's restricted distribution is [0.1, 0.7, 0.1, 0.1]
        assert cell["aggregate"]["e_score"]["mean"] == pytest.approx(0.7, abs=1e-12)
        assert cell["classification"] == "E"
        store = (out / "transcripts" / "stub-model__extreme.jsonl").read_text()
        assert len(store.splitlines()) == 2
    finally:
        provider.close()


def test_console_script_installed():
    proc = subprocess.run(
        [sys.executable, "-m", "sampleprobe.cli", "--help"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "sampleprobe" in proc.stdout
