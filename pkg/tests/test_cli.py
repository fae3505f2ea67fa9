import csv
import hashlib
import json
from pathlib import Path

import pytest

from s3synth import cli, core
from s3synth.cli import TIMESTAMP_KEYS, main


def read_json(path):
    return json.loads(Path(path).read_text())


def manifest_without_timestamps(path):
    doc = read_json(path)
    for key in TIMESTAMP_KEYS:
        doc.pop(key, None)
    return doc


def write_demo_task(tmp_path):
    from s3synth import demo
    spec = demo.build_task_spec()
    oracle = demo.build_oracle(42)
    task = tmp_path / "task.json"
    task.write_text(json.dumps(core.task_spec_to_json(spec)))
    oracle_path = tmp_path / "oracle.json"
    oracle_path.write_text(json.dumps(oracle.to_dict()))
    return task, oracle_path


# --- exit codes ----------------------------------------------------------------

def test_demo_negative_rounds_is_config_error(tmp_path):
    assert main(["demo", "--out-dir", str(tmp_path), "--rounds", "-1"]) == 2


def test_run_ees_negative_rounds_is_config_error(tmp_path, capsys):
    task, oracle = write_demo_task(tmp_path)
    rc = main(["run-ees", "--task", str(task), "--seed", "nope.jsonl",
               "--gold-val", "nope.jsonl", "--rounds", "-1", "--out", "o.jsonl",
               "--oracle", str(oracle), "--out-dir", str(tmp_path)])
    assert rc == 2
    assert "error[config]" in capsys.readouterr().err


def test_missing_api_key_is_backend_error(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv(cli.ENV_API_KEY, raising=False)
    task, _ = write_demo_task(tmp_path)
    rc = main(["synthesize-seed", "--task", str(task), "--out", "seed.jsonl",
               "--remote", "some-model", "--out-dir", str(tmp_path)])
    assert rc == 3
    assert cli.ENV_API_KEY in capsys.readouterr().err


def test_backend_required(tmp_path, capsys):
    task, _ = write_demo_task(tmp_path)
    rc = main(["synthesize-seed", "--task", str(task), "--out", "seed.jsonl",
               "--out-dir", str(tmp_path)])
    assert rc == 2


# --- demo + determinism -----------------------------------------------------------

@pytest.fixture(scope="module")
def demo_runs(tmp_path_factory):
    dirs = []
    for name in ("run-a", "run-b"):
        out = tmp_path_factory.mktemp(name)
        assert main(["demo", "--out-dir", str(out), "--seed", "42"]) == 0
        dirs.append(out)
    return dirs


def test_demo_produces_expected_artifacts(demo_runs):
    out = demo_runs[0]
    names = {p.name for p in out.iterdir()}
    for expected in ("seed.jsonl", "train.jsonl", "report.json", "manifest.json",
                     "gold_val.jsonl", "gold_test.jsonl", "task.json", "oracle.json",
                     "predictions.jsonl", "metrics.json"):
        assert expected in names
    manifest = read_json(out / "manifest.json")
    listed = {a["path"] for a in manifest["artifacts"]}
    assert {"seed.jsonl", "train.jsonl", "report.json"} <= listed


def test_demo_manifest_digests_match_files(demo_runs):
    out = demo_runs[0]
    manifest = read_json(out / "manifest.json")
    for artifact in manifest["artifacts"]:
        digest = hashlib.sha256((out / artifact["path"]).read_bytes()).hexdigest()
        assert digest == artifact["sha256"]
        assert (out / artifact["path"]).stat().st_size == artifact["bytes"]


def test_demo_runs_are_byte_identical(demo_runs):
    a, b = demo_runs
    for p in sorted(a.iterdir()):
        if p.name == "manifest.json":
            assert manifest_without_timestamps(p) == manifest_without_timestamps(b / p.name)
        else:
            assert p.read_bytes() == (b / p.name).read_bytes(), p.name


def test_demo_improves_test_accuracy(demo_runs):
    report = read_json(demo_runs[0] / "report.json")
    rounds = report["rounds"]
    assert rounds[-1]["test"]["accuracy"] >= rounds[0]["test"]["accuracy"] + 0.05


# --- individual subcommands ---------------------------------------------------------

def test_flops_subcommand(tmp_path, capsys):
    rc = main(["flops", "--params", "66e6", "--seq-len", "512",
               "--stage", "200000:10", "--out", str(tmp_path / "flops.json")])
    assert rc == 0
    doc = read_json(tmp_path / "flops.json")
    assert abs(doc["total"] - 4.06e17) / 4.06e17 < 0.005


def test_flops_bad_stage(capsys):
    assert main(["flops", "--params", "1e6", "--seq-len", "128", "--stage", "oops"]) == 2


def test_simulate_gap_subcommand(tmp_path):
    scenario = tmp_path / "scenario.json"
    scenario.write_text(json.dumps({
        "support": ["a", "b"], "P_D": [0.5, 0.5], "P_S0": [0.8, 0.2],
        "rounds": 4, "policy": "optimal_p"}))
    rc = main(["simulate-gap", "--scenario", str(scenario), "--out", "trace.csv",
               "--json-out", "trace.json", "--out-dir", str(tmp_path)])
    assert rc == 0
    with (tmp_path / "trace.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["tv"] == "0.3"
    assert float(rows[1]["tv"]) < 1e-12
    assert float(rows[1]["p_used"]) == pytest.approx(0.375)
    trace = read_json(tmp_path / "trace.json")
    assert trace["support"] == ["a", "b"]


def test_synthesize_seed_and_run_ees_cli(tmp_path):
    task, oracle = write_demo_task(tmp_path)
    rc = main(["synthesize-seed", "--task", str(task), "--oracle", str(oracle),
               "--out", "seed.jsonl", "--seed", "42", "--out-dir", str(tmp_path)])
    assert rc == 0
    spec = core.load_task_spec(task)
    seed = core.load_dataset(tmp_path / "seed.jsonl", spec)
    assert len(seed) == spec.seed_size

    # reuse the demo's gold files for the loop
    from s3synth import demo
    core.save_dataset(demo.build_gold(spec, 42, core.STAGE_GOLD_VAL, 40),
                      tmp_path / "val.jsonl")
    core.save_dataset(demo.build_gold(spec, 42, core.STAGE_GOLD_TEST, 40),
                      tmp_path / "test.jsonl")
    rc = main(["run-ees", "--task", str(task), "--seed", str(tmp_path / "seed.jsonl"),
               "--gold-val", str(tmp_path / "val.jsonl"),
               "--gold-test", str(tmp_path / "test.jsonl"),
               "--rounds", "2", "--out", "train.jsonl", "--report", "report.json",
               "--pred-out", "preds.jsonl", "--oracle", str(oracle),
               "--out-dir", str(tmp_path)])
    assert rc == 0
    report = read_json(tmp_path / "report.json")
    final = core.load_dataset(tmp_path / "train.jsonl", spec)
    assert report["final_size"] == len(final)
    added = sum(r.get("add_count", 0) for r in report["rounds"])
    assert len(final) == len(seed) + added

    rc = main(["evaluate", "--pred", str(tmp_path / "preds.jsonl"),
               "--gold", str(tmp_path / "test.jsonl"), "--task", str(task),
               "--out", "metrics.json", "--out-dir", str(tmp_path)])
    assert rc == 0
    doc = read_json(tmp_path / "metrics.json")
    assert doc["n"] == 40 and 0 <= doc["accuracy"] <= 1


def test_diversity_quality_cli(tmp_path):
    task, oracle = write_demo_task(tmp_path)
    out = tmp_path / "demo"
    assert main(["demo", "--out-dir", str(out), "--seed", "42"]) == 0
    rc = main(["diversity", "quality", "--task", str(task),
               "--mis", str(out / "gold_val.jsonl"), "--add", str(out / "train.jsonl"),
               "--out", "quality.json", "--out-dir", str(tmp_path)])
    assert rc == 0
    doc = read_json(tmp_path / "quality.json")
    assert doc["n_pairs"] > 0
    assert -1.0 <= doc["avg_cos_sim"] <= 1.0
    assert (tmp_path / "quality.csv").exists()


def test_diversity_coverage_cli(tmp_path):
    task, oracle = write_demo_task(tmp_path)
    out = tmp_path / "demo"
    assert main(["demo", "--out-dir", str(out), "--seed", "42"]) == 0
    rc = main(["diversity", "coverage", "--task", str(task),
               "--gold", str(out / "gold_test.jsonl"), "--syn", str(out / "train.jsonl"),
               "--out", "coverage.json", "--out-dir", str(tmp_path)])
    assert rc == 0
    doc = read_json(tmp_path / "coverage.json")
    assert 0.0 <= doc["coverage_rate"] <= 1.0
    assert doc["gamma"] >= 0


def test_cache_reuse_across_cli_runs(tmp_path):
    task, oracle = write_demo_task(tmp_path)
    args = ["synthesize-seed", "--task", str(task), "--oracle", str(oracle),
            "--out", "seed.jsonl", "--seed", "42", "--cache", "cache.jsonl",
            "--out-dir", str(tmp_path)]
    assert main(args) == 0
    first = manifest_without_timestamps(tmp_path / "manifest.json")
    assert first["cache"]["misses"] > 0
    assert main(args) == 0
    second = manifest_without_timestamps(tmp_path / "manifest.json")
    assert second["cache"]["misses"] == 0
    assert second["cache"]["hits"] >= first["cache"]["misses"]
    assert second["artifacts"] == first["artifacts"]  # identical output bytes
