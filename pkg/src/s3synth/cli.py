"""Command-line entry point.

Subcommands: synthesize-seed, run-ees, evaluate, diversity, simulate-gap,
flops, demo.  Every run writes a manifest next to its outputs listing the
resolved configuration, seeds, backend identity, cache statistics, and a
SHA-256 digest of each produced artifact, so runs are self-verifying.
Exit codes: 0 success, 2 config error, 3 backend error, 4 internal error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import core, demo, diversity, ees, gapsim, llm, metrics, synthesis, trainer
from .errors import AuthError, ConfigError, S3Error
from .rng import derive_seed

log = logging.getLogger("s3synth")

ENV_API_KEY = "S3_LLM_API_KEY"
ENV_BASE_URL = "S3_LLM_BASE_URL"

# Manifest keys stripped when comparing runs for byte-identity.
TIMESTAMP_KEYS = ("started_at", "finished_at", "duration_s")


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class ManifestBuilder:
    command: str
    config: dict = field(default_factory=dict)
    seed: int | None = None
    backend_id: str | None = None
    cache_stats: dict | None = None
    artifacts: list[Path] = field(default_factory=list)
    started_at: float = field(default_factory=time.time)

    def add(self, *paths: Path) -> None:
        self.artifacts.extend(paths)

    def write(self, out_dir: Path, name: str = "manifest.json") -> Path:
        finished = time.time()
        doc = {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "backend": self.backend_id,
            "cache": self.cache_stats,
            "started_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(self.started_at)),
            "finished_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(finished)),
            "duration_s": round(finished - self.started_at, 3),
            "artifacts": [
                {
                    "path": p.name,
                    "sha256": _sha256_file(p),
                    "bytes": p.stat().st_size,
                }
                for p in self.artifacts
            ],
        }
        path = out_dir / name
        path.write_text(json.dumps(doc, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
        return path


def _resolve(out_dir: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else out_dir / p


def _make_backend(args) -> llm.Backend:
    oracle = getattr(args, "oracle", None)
    remote = getattr(args, "remote", None)
    if oracle and remote:
        raise ConfigError("choose one of --oracle and --remote, not both")
    if oracle:
        return llm.ScriptedOracle.from_file(oracle)
    if remote:
        api_key = os.environ.get(ENV_API_KEY)
        if not api_key:
            raise AuthError(f"remote backend selected but {ENV_API_KEY} is not set")
        base_url = os.environ.get(ENV_BASE_URL, "https://api.openai.com/v1")
        return llm.RemoteBackend(model=remote, api_key=api_key, base_url=base_url)
    raise ConfigError("a generation backend is required: pass --oracle FILE or --remote MODEL")


def _make_cache(args, out_dir: Path) -> llm.ResponseCache | None:
    path = getattr(args, "cache", None)
    if not path:
        return None
    return llm.ResponseCache(_resolve(out_dir, path))


def _make_trainer(args) -> trainer.TrainerConfig:
    backend = getattr(args, "trainer", "builtin_nb")
    if backend == "builtin_nb":
        return trainer.TrainerConfig(backend="builtin_nb")
    hyper = {}
    for item in getattr(args, "trainer_arg", None) or []:
        if "=" not in item:
            raise ConfigError(f"--trainer-arg expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        try:
            hyper[key] = json.loads(value)
        except json.JSONDecodeError:
            hyper[key] = value
    return trainer.TrainerConfig(backend="external", external_cmd=backend, hyperparameters=hyper)


def cmd_synthesize_seed(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = core.load_task_spec(args.task)
    backend = _make_backend(args)
    cache = _make_cache(args, out_dir)
    manifest = ManifestBuilder(
        command="synthesize-seed",
        config={"task": str(args.task), "out": args.out, "seed": args.seed,
                "parallel": args.parallel, "contexts": args.contexts},
        seed=args.seed,
        backend_id=backend.backend_id,
    )
    rng_seed = derive_seed(args.seed, "synthesis.seed")
    if spec.kind == core.SINGLE_TEXT:
        rations = synthesis.synthesize_rationales(spec, backend, cache=cache)
        dataset = synthesis.synthesize_seed(
            spec, rations, backend, rng_seed, cache=cache, parallel=args.parallel
        )
    else:
        if not args.contexts:
            raise ConfigError(f"task kind {spec.kind} requires --contexts POOL.jsonl")
        pool = synthesis.ContextPool.from_file(args.contexts)
        dataset = synthesis.synthesize_seed_conditional(
            spec, pool, backend, rng_seed, cache=cache, parallel=args.parallel
        )
    out_path = _resolve(out_dir, args.out)
    core.save_dataset(dataset, out_path)
    manifest.cache_stats = cache.stats() if cache else None
    manifest.add(out_path)
    manifest.write(out_dir)
    log.info("wrote %d seed examples to %s", len(dataset), out_path)
    return 0


def cmd_run_ees(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = core.load_task_spec(args.task)
    if args.rounds is not None and args.rounds < 0:
        raise ConfigError("--rounds must be >= 0")
    backend = _make_backend(args)
    cache = _make_cache(args, out_dir)
    seed_data = core.load_dataset(args.seed, spec)
    gold_val = core.load_dataset(args.gold_val, spec)
    gold_test = core.load_dataset(args.gold_test, spec) if args.gold_test else None
    trainer_cfg = _make_trainer(args)
    manifest = ManifestBuilder(
        command="run-ees",
        config={"task": str(args.task), "seed_data": str(args.seed), "rounds": args.rounds,
                "expansion": args.expansion, "trainer": args.trainer, "parallel": args.parallel},
        seed=args.rng_seed,
        backend_id=backend.backend_id,
    )
    try:
        final, reports = ees.run_ees(
            spec, seed_data, gold_val, gold_test, trainer_cfg, backend,
            rounds=args.rounds, cache=cache, expansion=args.expansion, parallel=args.parallel,
        )
    finally:
        trainer_cfg.close()
    out_path = _resolve(out_dir, args.out)
    core.save_dataset(final, out_path)
    manifest.add(out_path)
    report_path = _resolve(out_dir, args.report) if args.report else None
    if report_path:
        report_path.write_text(
            json.dumps({"rounds": [r.to_json() for r in reports], "final_size": len(final)},
                       ensure_ascii=False, indent=2) + "\n",
            encoding="utf-8",
        )
        manifest.add(report_path)
    if args.pred_out and gold_test is not None:
        cfg2 = _make_trainer(args)
        try:
            model = trainer.train(cfg2, final)
            preds = trainer.predict(model, gold_test)
        finally:
            cfg2.close()
        pred_path = _resolve(out_dir, args.pred_out)
        with pred_path.open("w", encoding="utf-8") as fh:
            for ex, pred in zip(gold_test, preds):
                fh.write(json.dumps({"id": ex.id, "value": pred.value}, ensure_ascii=False) + "\n")
        manifest.add(pred_path)
    manifest.cache_stats = cache.stats() if cache else None
    manifest.write(out_dir)
    for r in reports:
        log.info("round %d: %s", r.round, json.dumps(r.to_json()))
    return 0


def _load_predictions(path: Path) -> list[str]:
    values = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {lineno}: invalid JSON: {exc.msg}") from None
        if isinstance(rec, str):
            values.append(rec)
        elif isinstance(rec, dict) and "value" in rec:
            values.append(str(rec["value"]))
        else:
            raise ConfigError(f"{path}: line {lineno}: expected a string or {{id, value}}")
    return values


def cmd_evaluate(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = core.load_task_spec(args.task)
    gold = core.load_dataset(args.gold, spec)
    preds = _load_predictions(Path(args.pred))
    report = metrics.evaluate_predictions(preds, gold, spec)
    out_path = _resolve(out_dir, args.out)
    out_path.write_text(json.dumps(report.to_json(), ensure_ascii=False, indent=2) + "\n",
                        encoding="utf-8")
    manifest = ManifestBuilder(
        command="evaluate",
        config={"pred": str(args.pred), "gold": str(args.gold), "task": str(args.task)},
    )
    manifest.add(out_path)
    manifest.write(out_dir)
    print(json.dumps(report.to_json()))
    return 0


def cmd_flops(args) -> int:
    stages = []
    for stage in args.stage:
        try:
            records, epochs = stage.split(":")
            stages.append((float(records), float(epochs)))
        except ValueError:
            raise ConfigError(f"--stage expects RECORDS:EPOCHS, got {stage!r}") from None
    report = metrics.flops(args.params, args.seq_len, stages)
    doc = json.dumps(report.to_json(), ensure_ascii=False, indent=2)
    if args.out:
        Path(args.out).write_text(doc + "\n", encoding="utf-8")
    print(doc)
    return 0


def cmd_simulate_gap(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        scenario = json.loads(Path(args.scenario).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"scenario file not found: {args.scenario}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"could not parse scenario {args.scenario}: {exc}") from None
    try:
        support = tuple(scenario["support"])
        p_real = gapsim.DiscreteDistribution(support, scenario["P_D"])
        p_syn = gapsim.DiscreteDistribution(support, scenario["P_S0"])
        rounds = int(scenario.get("rounds", 5))
        policy = scenario.get("policy", "optimal_p")
        fixed_p = scenario.get("p")
    except KeyError as exc:
        raise ConfigError(f"scenario is missing key {exc}") from None
    trace = gapsim.simulate_ees_rounds(p_real, p_syn, rounds, policy=policy, fixed_p=fixed_p)
    out_path = _resolve(out_dir, args.out)
    with out_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "tv", "p_used"])
        for state in trace.rounds:
            writer.writerow([state.round, f"{state.tv:.12g}",
                             "" if state.p_used is None else f"{state.p_used:.12g}"])
    manifest = ManifestBuilder(command="simulate-gap", config={"scenario": str(args.scenario)})
    manifest.add(out_path)
    if args.json_out:
        json_path = _resolve(out_dir, args.json_out)
        json_path.write_text(json.dumps(trace.to_json(), ensure_ascii=False, indent=2) + "\n",
                             encoding="utf-8")
        manifest.add(json_path)
    manifest.write(out_dir)
    print(f"final tv: {trace.final_tv:.6g} after {len(trace.rounds) - 1} round(s)")
    return 0


def _embeddings_for(datasets: list[core.Dataset], emb_path: str | None) -> diversity.EmbeddingSet:
    if emb_path:
        return diversity.EmbeddingSet.from_file(emb_path)
    kind = datasets[0].task.kind if datasets[0].task else core.SINGLE_TEXT
    texts: dict[str, str] = {}
    for ds in datasets:
        for ex in ds:
            texts[ex.id or ""] = ex.text(kind)
    return diversity.hash_embed(texts)


def cmd_diversity(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = core.load_task_spec(args.task)
    manifest = ManifestBuilder(command=f"diversity-{args.mode}", config=vars(args).copy())
    manifest.config.pop("func", None)

    if args.mode == "quality":
        mis = core.load_dataset(args.mis, spec)
        add_all = core.load_dataset(args.add, spec)
        added = core.Dataset.from_examples(
            spec,
            [ex for ex in add_all if ex.provenance.stage == core.STAGE_ADD],
            validate=False,
            on_id_collision="suffix",
        )
        emb = _embeddings_for([mis, added], args.embeddings)
        report = diversity.quality_report(mis, added, emb)
        doc = report.to_json()
        rows = [doc]
    else:
        gold = core.load_dataset(args.gold, spec)
        syn = core.load_dataset(args.syn, spec)
        if args.sample:
            rng = __import__("random").Random(derive_seed(args.seed, "diversity.sample"))
            gold = core.Dataset.from_examples(
                spec, rng.sample(list(gold), min(args.sample, len(gold))),
                validate=False, on_id_collision="suffix")
            syn = core.Dataset.from_examples(
                spec, rng.sample(list(syn), min(args.sample, len(syn))),
                validate=False, on_id_collision="suffix")
        emb = _embeddings_for([gold, syn], args.embeddings)
        coords = diversity.project_2d(
            emb, method=args.method, coords=args.coords if args.method == "external" else None
        )
        gold_pts = [coords[ex.id or ""] for ex in gold]
        syn_pts = [coords[ex.id or ""] for ex in syn]
        gamma = args.gamma if args.gamma is not None else diversity.median_nn_distance(gold_pts)
        rate = diversity.coverage_rate(gold_pts, syn_pts, gamma)
        doc = {"coverage_rate": rate, "gamma": gamma, "n_gold": len(gold), "n_syn": len(syn)}
        rows = [doc]

    out_path = _resolve(out_dir, args.out)
    out_path.write_text(json.dumps(doc, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    csv_path = out_path.with_suffix(".csv")
    with csv_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    manifest.add(out_path, csv_path)
    manifest.write(out_dir)
    print(json.dumps(doc))
    return 0


def cmd_demo(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.rounds < 0:
        raise ConfigError("--rounds must be >= 0")
    manifest = ManifestBuilder(
        command="demo",
        config={"seed": args.seed, "rounds": args.rounds, "parallel": args.parallel},
        seed=args.seed,
    )
    result = demo.run_demo(out_dir, args.seed, args.rounds, parallel=args.parallel)
    manifest.backend_id = result["oracle"].backend_id
    manifest.add(*result["artifacts"])
    manifest.write(out_dir)
    summary = {
        "seed_only_test_accuracy": result["seed_only_test_accuracy"],
        "final_test_accuracy": result["final_test_accuracy"],
        "final_size": len(result["final"]),
        "backend_calls": result["backend_calls"],
        "out_dir": str(out_dir),
    }
    print(json.dumps(summary, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="s3", description=__doc__)
    parser.add_argument("--log-level", default="warning",
                        choices=["debug", "info", "warning", "error"])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, *, backend=False):
        p.add_argument("--out-dir", default=".", help="directory for outputs and the manifest")
        if backend:
            p.add_argument("--oracle", help="scripted oracle JSON file (offline backend)")
            p.add_argument("--remote", metavar="MODEL",
                           help=f"OpenAI-compatible model name; key from {ENV_API_KEY}")
            p.add_argument("--cache", help="response cache JSONL path")
            p.add_argument("--parallel", type=int, default=4, help="max in-flight generations")

    p = sub.add_parser("synthesize-seed", help="build the seed dataset")
    add_common(p, backend=True)
    p.add_argument("--task", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--contexts", help="context pool JSONL for pair/QA tasks")
    p.add_argument("--seed", type=int, default=42, help="master rng seed")
    p.set_defaults(func=cmd_synthesize_seed)

    p = sub.add_parser("run-ees", help="run the error-extrapolation loop")
    add_common(p, backend=True)
    p.add_argument("--task", required=True)
    p.add_argument("--seed", required=True, metavar="SEED_DATA",
                   help="seed dataset JSONL (synthesize-seed output)")
    p.add_argument("--gold-val", required=True)
    p.add_argument("--gold-test")
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--expansion", type=int, default=1,
                   help="extrapolated examples per error")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--pred-out", help="write final-model test predictions here")
    p.add_argument("--trainer", default="builtin_nb",
                   help="builtin_nb, or a command line for an external trainer")
    p.add_argument("--trainer-arg", action="append",
                   help="key=value hyperparameter forwarded to the external trainer")
    p.add_argument("--rng-seed", type=int, default=42)
    p.set_defaults(func=cmd_run_ees)

    p = sub.add_parser("evaluate", help="score predictions against gold data")
    add_common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("flops", help="fine-tuning cost accounting")
    p.add_argument("--params", type=float, required=True)
    p.add_argument("--seq-len", type=float, required=True)
    p.add_argument("--stage", action="append", required=True, metavar="RECORDS:EPOCHS")
    p.add_argument("--out")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("simulate-gap", help="run the distribution-gap simulator")
    add_common(p)
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True, help="per-round trace CSV")
    p.add_argument("--json-out")
    p.set_defaults(func=cmd_simulate_gap)

    p = sub.add_parser("diversity", help="quality and coverage analyses")
    add_common(p)
    p.add_argument("mode", choices=["quality", "coverage"])
    p.add_argument("--task", required=True)
    p.add_argument("--mis", help="quality: source-error dataset (e.g. gold_val.jsonl)")
    p.add_argument("--add", help="quality: dataset holding stage=add examples")
    p.add_argument("--gold", help="coverage: gold dataset")
    p.add_argument("--syn", help="coverage: synthesized dataset")
    p.add_argument("--embeddings", help="id -> vector JSONL; hashed bag-of-words if omitted")
    p.add_argument("--method", default="pca", choices=["pca", "external"])
    p.add_argument("--coords", help="id -> (x, y) JSONL for --method external")
    p.add_argument("--gamma", type=float, default=None,
                   help="coverage radius; default: median gold nearest-neighbor distance")
    p.add_argument("--sample", type=int, default=None, help="subsample each side to N points")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diversity)

    p = sub.add_parser("demo", help="fully offline end-to-end scenario")
    add_common(p)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--rounds", type=int, default=2)
    p.add_argument("--parallel", type=int, default=4)
    p.set_defaults(func=cmd_demo)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper()),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except S3Error as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # pragma: no cover - safety net
        log.debug("unexpected failure", exc_info=True)
        print(f"error[internal]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
