"""JSON-lines request loop on stdin/stdout.

Commands: hello, train, predict, shutdown.  Every request gets exactly one
response line; anything unparseable or unknown is answered with
{"ok": false, ...} rather than crashing the process.  Training always
rebuilds the model from its base initialization, so successive train
commands are independent.
"""

from __future__ import annotations

import json
import sys

from .config import AdapterConfig
from .models import make_backend

PROTOCOL_VERSION = 1
KINDS = ["single_text_classification", "pair_classification"]


def _load_rows(msg: dict) -> list[dict]:
    rows = msg.get("dataset")
    if rows is None and msg.get("dataset_path"):
        rows = []
        with open(msg["dataset_path"], encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                if rec.get("record") == "header":
                    continue
                rows.append(rec)
    if not isinstance(rows, list) or not rows:
        raise ValueError("train needs a non-empty 'dataset' list or 'dataset_path'")
    return rows


class Server:
    def __init__(self) -> None:
        self.backend = None

    def handle(self, msg: dict) -> dict:
        cmd = msg.get("cmd")
        if cmd == "hello":
            return {"ok": True, "name": "s3-trainer-adapter", "protocol": PROTOCOL_VERSION,
                    "kinds": KINDS}
        if cmd == "train":
            rows = _load_rows(msg)
            cfg = AdapterConfig.from_message(msg.get("config") or {})
            if cfg.kind not in KINDS:
                return {"ok": False, "error": f"unsupported kind {cfg.kind!r}"}
            self.backend = make_backend(cfg)
            report = self.backend.train(rows)
            return {"ok": True, "train_report": report}
        if cmd == "predict":
            if self.backend is None:
                return {"ok": False, "error": "predict before train"}
            examples = msg.get("examples")
            if not isinstance(examples, list):
                return {"ok": False, "error": "predict needs an 'examples' list"}
            return {"ok": True, "predictions": self.backend.predict(examples)}
        if cmd == "shutdown":
            return {"ok": True, "_shutdown": True}
        return {"ok": False, "error": "unknown cmd"}


def serve(stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    server = Server()
    print("adapter ready", file=sys.stderr, flush=True)
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
            if not isinstance(msg, dict):
                raise ValueError("request must be a JSON object")
            resp = server.handle(msg)
        except Exception as exc:  # never crash on malformed traffic
            resp = {"ok": False, "error": f"{type(exc).__name__}: {exc}"}
        shutdown = resp.pop("_shutdown", False)
        stdout.write(json.dumps(resp) + "\n")
        stdout.flush()
        if shutdown:
            return 0
    return 0


def main() -> int:
    return serve()


if __name__ == "__main__":
    raise SystemExit(main())
