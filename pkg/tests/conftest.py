import sys
from pathlib import Path

import pytest

# Make the shared reference oracles importable from any test module.
sys.path.insert(0, str(Path(__file__).parent))

from s3synth import core, llm


@pytest.fixture
def text_spec():
    """Minimal single-text classification task with builtin templates."""
    return core.parse_task_spec(
        {
            "name": "toy-reviews",
            "kind": core.SINGLE_TEXT,
            "labels": ["positive", "negative"],
            "template_defaults": "imdb",
            "rationale_count": 3,
            "rationales_per_query": 2,
            "seed_size": 4,
            "ees_rounds": 2,
        }
    )


@pytest.fixture
def qa_spec():
    return core.parse_task_spec(
        {
            "name": "toy-qa",
            "kind": core.CONTEXT_QA,
            "labels": [],
            "template_defaults": "adqa",
            "seed_size": 3,
        }
    )


@pytest.fixture
def pair_spec():
    return core.parse_task_spec(
        {
            "name": "toy-nli",
            "kind": core.PAIR,
            "labels": ["entailment", "not_entailment"],
            "template_defaults": "rte",
            "seed_size": 100,
        }
    )


@pytest.fixture
def echo_oracle():
    """Oracle answering every prompt with a distinct deterministic line."""
    return llm.ScriptedOracle(
        rules=[
            llm.OracleRule(
                match="reasons that may lead to positive",
                responses=("1. great acting\n2. intriguing plot\n3. beautiful cinematography",),
            ),
            llm.OracleRule(
                match="reasons that may lead to negative",
                responses=("1. bad acting\n2. boring plot\n3. poor pacing",),
            ),
            llm.OracleRule(
                match="positive review",
                responses=("a lovely uplifting watch", "gentle and charming throughout"),
            ),
            llm.OracleRule(
                match="negative review",
                responses=("a dreary tedious slog", "clumsy and forgettable"),
            ),
        ],
        rng_seed=7,
    )
