"""Golden-transcript conformance test: hello / train / predict / shutdown."""

import json
import subprocess
import sys

import pytest

TRAIN_ROWS = [
    {"id": f"r{i}", "kind": "single_text_classification",
     "x": ("a delightful charming film" if i % 2 == 0 else "a boring tedious slog"),
     "y": ("positive" if i % 2 == 0 else "negative"),
     "provenance": {"stage": "seed", "round": 0}}
    for i in range(8)
]

CONFIG = {"kind": "single_text_classification", "labels": ["positive", "negative"],
          "epochs": 12, "seed": 0}


@pytest.fixture(scope="module")
def transcript():
    """Replay the golden transcript against a fresh adapter subprocess."""
    requests = [
        {"cmd": "hello"},
        {"cmd": "train", "dataset": TRAIN_ROWS, "config": CONFIG},
        {"cmd": "predict", "examples": TRAIN_ROWS},
        {"cmd": "bogus"},
        "this is not json",
        {"cmd": "shutdown"},
    ]
    payload = "\n".join(r if isinstance(r, str) else json.dumps(r) for r in requests) + "\n"
    proc = subprocess.run(
        [sys.executable, "-m", "trainer_adapter"],
        input=payload, capture_output=True, text=True, timeout=180,
    )
    assert proc.returncode == 0, proc.stderr
    responses = [json.loads(line) for line in proc.stdout.splitlines() if line.strip()]
    assert len(responses) == len(requests)
    return dict(zip(("hello", "train", "predict", "bogus", "malformed", "shutdown"),
                    responses))


def test_hello_schema(transcript):
    hello = transcript["hello"]
    assert hello["ok"] is True
    assert hello["protocol"] == 1
    assert "single_text_classification" in hello["kinds"]
    assert isinstance(hello["name"], str)


def test_train_schema(transcript):
    train = transcript["train"]
    assert train["ok"] is True
    report = train["train_report"]
    assert report["n"] == len(TRAIN_ROWS)
    assert report["labels"] == ["positive", "negative"]


def test_predict_aligned_with_input(transcript):
    predict = transcript["predict"]
    assert predict["ok"] is True
    preds = predict["predictions"]
    assert len(preds) == len(TRAIN_ROWS)
    for pred, row in zip(preds, TRAIN_ROWS):
        assert pred["value"] in ("positive", "negative")
        assert 0.0 <= pred["score"] <= 1.0
    # a model this size fits 8 separable examples exactly
    assert [p["value"] for p in preds] == [r["y"] for r in TRAIN_ROWS]


def test_unknown_cmd_is_answered_not_fatal(transcript):
    assert transcript["bogus"] == {"ok": False, "error": "unknown cmd"}


def test_malformed_line_is_answered_not_fatal(transcript):
    resp = transcript["malformed"]
    assert resp["ok"] is False and "error" in resp


def test_shutdown_acknowledged(transcript):
    assert transcript["shutdown"] == {"ok": True}


def test_predict_before_train_is_error():
    payload = json.dumps({"cmd": "predict", "examples": []}) + "\n" + \
        json.dumps({"cmd": "shutdown"}) + "\n"
    proc = subprocess.run([sys.executable, "-m", "trainer_adapter"],
                          input=payload, capture_output=True, text=True, timeout=60)
    first = json.loads(proc.stdout.splitlines()[0])
    assert first["ok"] is False and "train" in first["error"]
