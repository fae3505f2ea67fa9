"""Bundled fully-offline demonstration scenario.

A two-label review-classification task over a finite space of 48 short
texts in four vocabulary clusters.  The distributional oracle's seed
weights give the positive label's "gritty" cluster zero mass, so seed
synthesis under-covers it; gold data covers all clusters evenly.  The
builtin classifier therefore misreads gritty-positive reviews (their
overlap words — dark, slow, brutal — only ever appear in negative
training text), error extrapolation pulls gritty-positive atoms into the
training set, and test accuracy recovers.  Everything is deterministic
given the run seed.
"""

from __future__ import annotations

import json
from itertools import combinations
from pathlib import Path

from . import core, ees, llm, metrics, synthesis, trainer
from .rng import derive_seed, stream_rng

TASK_NAME = "offline-demo"
LABELS = ("positive", "negative")

SEED_SIZE = 200
GOLD_VAL_SIZE = 100
GOLD_TEST_SIZE = 100

_BRIGHT = ("delightful", "charming", "uplifting", "heartwarming", "witty", "graceful")
_GRITTY_UNIQUE = ("masterpiece", "riveting", "haunting", "mesmerizing")
_DULL = ("boring", "tedious", "bland", "forgettable", "stale", "lifeless")
_HARSH_UNIQUE = ("sloppy", "grating", "incoherent", "clumsy")
_OVERLAP = ("dark", "slow", "brutal")  # shared by gritty-positive and harsh-negative

_SENTENCES = (
    "the film was {0} and {1}, with a {2} finale",
    "a {0} story that felt {1} and {2} throughout",
    "overall a {0}, {1} picture with {2} moments",
    "this movie seemed {0} yet {1}, honestly {2} at times",
)

RATIONALES = {
    "positive": ("great acting", "intriguing plot", "beautiful cinematography"),
    "negative": ("bad acting", "boring plot", "poor pacing"),
}


def _texts(triples) -> list[str]:
    return [_SENTENCES[i % len(_SENTENCES)].format(*t) for i, t in enumerate(triples)]


def _cluster_atoms() -> dict[tuple[str, str], list[str]]:
    bright = list(combinations(_BRIGHT, 3))[:12]
    dull = list(combinations(_DULL, 3))[:12]
    # Gritty-positive: one overlap word, two cluster-unique words — enough
    # unique signal to win once the cluster enters the training set.
    gritty = []
    unique_pairs = list(combinations(_GRITTY_UNIQUE, 2))  # 6 pairs
    for overlap_word in _OVERLAP:
        for pair in unique_pairs[:4]:
            gritty.append((overlap_word, pair[0], pair[1]))
    # Harsh-negative: two overlap words, one unique word.
    harsh = []
    overlap_pairs = list(combinations(_OVERLAP, 2))  # 3 pairs
    for unique_word in _HARSH_UNIQUE:
        for pair in overlap_pairs:
            harsh.append((pair[0], unique_word, pair[1]))
    return {
        ("positive", "bright"): _texts(bright),
        ("positive", "gritty"): _texts(gritty),
        ("negative", "dull"): _texts(dull),
        ("negative", "harsh"): _texts(harsh),
    }


def build_task_spec() -> core.TaskSpec:
    return core.parse_task_spec(
        {
            "name": TASK_NAME,
            "kind": core.SINGLE_TEXT,
            "labels": list(LABELS),
            "template_defaults": "imdb",
            "rationale_count": 3,
            "rationales_per_query": 3,
            "seed_size": SEED_SIZE,
            "ees_rounds": 2,
            "dedup": False,
        }
    )


def build_oracle(master_seed: int) -> llm.ScriptedOracle:
    atoms = []
    for (label, cluster), texts in _cluster_atoms().items():
        atoms.extend(llm.Atom(text=t, label=label, cluster=cluster) for t in texts)
    rules = [
        llm.OracleRule(
            match=f"reasons that may lead to {label} impression",
            responses=("\n".join(f"{i + 1}. {r}" for i, r in enumerate(phrases)),),
        )
        for label, phrases in RATIONALES.items()
    ]
    distributional = llm.DistributionalSpec(
        space=tuple(atoms),
        weights={
            "positive": {"bright": 1.0, "gritty": 0.0},
            "negative": {"dull": 0.5, "harsh": 0.5},
        },
    )
    return llm.ScriptedOracle(
        rules=rules, distributional=distributional, rng_seed=derive_seed(master_seed, "oracle")
    )


def build_gold(spec: core.TaskSpec, master_seed: int, stage: str, size: int) -> core.Dataset:
    """Gold data: uniform over labels and clusters, sampled with replacement."""
    clusters = _cluster_atoms()
    rng = stream_rng(master_seed, f"demo.{stage}")
    examples = []
    for _ in range(size):
        label = LABELS[rng.randrange(2)]
        cluster_names = [c for (lbl, c) in clusters if lbl == label]
        cluster = cluster_names[rng.randrange(len(cluster_names))]
        text = clusters[(label, cluster)][rng.randrange(len(clusters[(label, cluster)]))]
        examples.append(
            core.Example(provenance=core.Provenance(stage=stage), x=text, y=label)
        )
    return core.Dataset.from_examples(spec, examples, on_id_collision="suffix")


def run_demo(
    out_dir: str | Path,
    master_seed: int = 42,
    rounds: int = 2,
    *,
    trainer_cfg: trainer.TrainerConfig | None = None,
    parallel: int = 1,
) -> dict:
    """Build the scenario, run seed synthesis plus EES, evaluate, write artifacts.

    Returns a summary dict with the per-round reports and artifact paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = build_task_spec()
    oracle = build_oracle(master_seed)
    gold_val = build_gold(spec, master_seed, core.STAGE_GOLD_VAL, GOLD_VAL_SIZE)
    gold_test = build_gold(spec, master_seed, core.STAGE_GOLD_TEST, GOLD_TEST_SIZE)

    task_path = out_dir / "task.json"
    task_path.write_text(
        json.dumps(core.task_spec_to_json(spec), ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
    oracle_path = out_dir / "oracle.json"
    oracle_path.write_text(
        json.dumps(oracle.to_dict(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    val_path = out_dir / "gold_val.jsonl"
    test_path = out_dir / "gold_test.jsonl"
    core.save_dataset(gold_val, val_path)
    core.save_dataset(gold_test, test_path)

    rations = synthesis.synthesize_rationales(spec, oracle)
    seed_data = synthesis.synthesize_seed(
        spec, rations, oracle, derive_seed(master_seed, "synthesis.seed"), parallel=parallel
    )
    seed_path = out_dir / "seed.jsonl"
    core.save_dataset(seed_data, seed_path)

    cfg = trainer_cfg or trainer.TrainerConfig()
    final, reports = ees.run_ees(
        spec,
        seed_data,
        gold_val,
        gold_test,
        cfg,
        oracle,
        rounds=rounds,
        parallel=parallel,
    )
    train_path = out_dir / "train.jsonl"
    core.save_dataset(final, train_path)
    report_path = out_dir / "report.json"
    report_path.write_text(
        json.dumps({"rounds": [r.to_json() for r in reports], "final_size": len(final)},
                   ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )

    # Final-model predictions on the test split, then the standalone metrics
    # file (the evaluate step of the pipeline).
    model = trainer.train(cfg, final)
    test_preds = trainer.predict(model, gold_test)
    pred_path = out_dir / "predictions.jsonl"
    with pred_path.open("w", encoding="utf-8") as fh:
        for ex, pred in zip(gold_test, test_preds):
            fh.write(json.dumps({"id": ex.id, "value": pred.value}, ensure_ascii=False) + "\n")
    report = metrics.evaluate_predictions(test_preds.values, gold_test, spec)
    metrics_path = out_dir / "metrics.json"
    metrics_path.write_text(json.dumps(report.to_json(), ensure_ascii=False, indent=2) + "\n",
                            encoding="utf-8")

    seed_only = reports[0].test_metrics.accuracy if reports and reports[0].test_metrics else None
    final_acc = reports[-1].test_metrics.accuracy if reports and reports[-1].test_metrics else None
    return {
        "spec": spec,
        "oracle": oracle,
        "reports": reports,
        "final": final,
        "seed_data": seed_data,
        "gold_val": gold_val,
        "gold_test": gold_test,
        "seed_only_test_accuracy": seed_only,
        "final_test_accuracy": final_acc,
        "backend_calls": oracle.calls,
        "artifacts": [
            task_path,
            oracle_path,
            val_path,
            test_path,
            seed_path,
            train_path,
            report_path,
            pred_path,
            metrics_path,
        ],
    }
