import pytest

from s3synth import core, llm, synthesis
from s3synth.errors import BackendError, ConfigError, OracleMatchError
from s3synth.synthesis import (
    ContextPool, ContextRecord, RationaleSet, join_phrases, strip_echo,
    synthesize_rationales, synthesize_seed, synthesize_seed_conditional,
)


def test_join_phrases():
    assert join_phrases(["a"]) == "a"
    assert join_phrases(["a", "b"]) == "a and b"
    assert join_phrases(["great acting", "intriguing plot", "beautiful cinematography"]) == (
        "great acting, intriguing plot, and beautiful cinematography")


def test_strip_echo():
    assert strip_echo('"quoted text"', "prompt") == "quoted text"
    assert strip_echo("Review: the actual text", "prompt") == "the actual text"
    prompt = "Now you should write a positive review about this movie."
    echoed = "write a positive review about this movie. Here is the real content"
    assert strip_echo(echoed, prompt) == "Here is the real content"
    assert strip_echo("clean text", prompt) == "clean text"


# --- rationale synthesis -----------------------------------------------------

def test_synthesize_rationales(text_spec, echo_oracle):
    rations = synthesize_rationales(text_spec, echo_oracle)
    assert rations.for_label("positive") == (
        "great acting", "intriguing plot", "beautiful cinematography")
    assert rations.for_label("negative") == ("bad acting", "boring plot", "poor pacing")


def test_synthesize_rationales_missing_label_rule(text_spec):
    oracle = llm.ScriptedOracle(rules=[llm.OracleRule(
        match="reasons that may lead to positive",
        responses=("1. a\n2. b\n3. c",))])
    with pytest.raises(BackendError, match="'negative'"):
        synthesize_rationales(text_spec, oracle)


def test_synthesize_rationales_wrong_kind(qa_spec, echo_oracle):
    with pytest.raises(ConfigError, match="single-text"):
        synthesize_rationales(qa_spec, echo_oracle)


def test_rationale_set_validation(text_spec):
    with pytest.raises(ConfigError, match="duplicates"):
        RationaleSet(by_label={"positive": ("a", "a", "b")})
    short = RationaleSet(by_label={"positive": ("a", "b"), "negative": ("c", "d", "e")})
    with pytest.raises(ConfigError, match="expected K=3"):
        short.validate_for(text_spec)


# --- seed synthesis ------------------------------------------------------------

def test_synthesize_seed_empty(text_spec, echo_oracle):
    spec = core.parse_task_spec({**core.task_spec_to_json(text_spec), "seed_size": 0})
    rations = synthesize_rationales(spec, echo_oracle)
    assert len(synthesize_seed(spec, rations, echo_oracle, rng_seed=1)) == 0


def test_synthesize_seed_counts_and_provenance(text_spec, echo_oracle):
    rations = synthesize_rationales(text_spec, echo_oracle)
    ds = synthesize_seed(text_spec, rations, echo_oracle, rng_seed=1)
    assert len(ds) == text_spec.seed_size
    for ex in ds:
        assert ex.y in text_spec.labels
        assert ex.provenance.stage == core.STAGE_SEED
        assert ex.provenance.round == 0
        assert ex.provenance.prompt_hash
        # x is what the scripted oracle answers for that label's query prompt
        if ex.y == "positive":
            assert ex.x in ("a lovely uplifting watch", "gentle and charming throughout")
        else:
            assert ex.x in ("a dreary tedious slog", "clumsy and forgettable")


def test_synthesize_seed_bit_reproducible(text_spec, echo_oracle):
    rations = synthesize_rationales(text_spec, echo_oracle)
    a = synthesize_seed(text_spec, rations, echo_oracle, rng_seed=5)
    b = synthesize_seed(text_spec, rations, echo_oracle, rng_seed=5, parallel=4)
    assert a.examples == b.examples
    c = synthesize_seed(text_spec, rations, echo_oracle, rng_seed=6)
    assert c.examples != a.examples


def test_synthesize_seed_retries_with_fresh_draw(text_spec):
    # negative-label prompts always fail; retries redraw until the budget
    # is exhausted, so the run errors out only if a negative draw persists.
    oracle = llm.ScriptedOracle(rules=[
        llm.OracleRule(match="positive review", responses=("fine text",)),
    ])
    rations = RationaleSet(by_label={
        "positive": ("a", "b", "c"), "negative": ("d", "e", "f")})
    spec = core.parse_task_spec({**core.task_spec_to_json(text_spec), "seed_size": 6})
    try:
        ds = synthesize_seed(spec, rations, oracle, rng_seed=3, retry_budget=8)
        assert len(ds) == 6
        assert all(ex.x == "fine text" for ex in ds)
    except BackendError:
        pass  # acceptable: budget exhausted on an unlucky seed


def test_synthesize_seed_hard_error_after_budget(text_spec):
    oracle = llm.ScriptedOracle(rules=[
        llm.OracleRule(match="never matches anything", responses=("x",))])
    rations = RationaleSet(by_label={
        "positive": ("a", "b", "c"), "negative": ("d", "e", "f")})
    with pytest.raises(BackendError, match="failed after"):
        synthesize_seed(text_spec, rations, oracle, rng_seed=1, retry_budget=1)


# --- conditional synthesis -------------------------------------------------------

def _qa_oracle():
    return llm.ScriptedOracle(rules=[
        llm.OracleRule(match="is the answer to the following question",
                       responses=("What flows to the sea?", "Where does water end up?")),
    ])


def test_conditional_qa_singleton_pool(qa_spec):
    pool = ContextPool(records=(ContextRecord(context="Rivers flow to the sea.",
                                              answer="the sea"),))
    ds = synthesize_seed_conditional(qa_spec, pool, _qa_oracle(), rng_seed=2)
    assert len(ds) == qa_spec.seed_size == 3
    for ex in ds:
        assert ex.context == "Rivers flow to the sea."
        assert ex.answer == "the sea"
        assert ex.question.endswith("?")


def test_conditional_pair_label_histogram(pair_spec):
    oracle = llm.ScriptedOracle(rules=[
        llm.OracleRule(match="Based on the above description",
                       responses=("Hypothesis one.", "Hypothesis two.", "Hypothesis three.")),
    ])
    pool = ContextPool(records=tuple(ContextRecord(context=f"Premise {i}.") for i in range(5)))
    ds = synthesize_seed_conditional(pair_spec, pool, oracle, rng_seed=11)
    assert len(ds) == 100
    count = sum(1 for ex in ds if ex.y == "entailment")
    # Binomial(100, 0.5): sigma = 5, so a 3-sigma band is 50 +/- 15.
    assert 35 <= count <= 65
    assert all(ex.context.startswith("Premise") for ex in ds)


def test_conditional_empty_pool(qa_spec):
    with pytest.raises(ConfigError, match="non-empty"):
        synthesize_seed_conditional(qa_spec, ContextPool(records=()), _qa_oracle(), rng_seed=0)


def test_conditional_requires_answer_when_template_needs_it(qa_spec):
    pool = ContextPool(records=(ContextRecord(context="No answer here."),))
    with pytest.raises(ConfigError, match="answer"):
        synthesize_seed_conditional(qa_spec, pool, _qa_oracle(), rng_seed=0)


def test_conditional_wrong_kind(text_spec, echo_oracle):
    pool = ContextPool(records=(ContextRecord(context="c"),))
    with pytest.raises(ConfigError, match="pair and QA"):
        synthesize_seed_conditional(text_spec, pool, echo_oracle, rng_seed=0)


def test_context_pool_from_file(tmp_path):
    path = tmp_path / "pool.jsonl"
    path.write_text('{"context": "c1", "answer": "a1"}\n{"context": "c2"}\n')
    pool = ContextPool.from_file(path)
    assert len(pool) == 2
    assert pool.records[0].answer == "a1"
    assert pool.records[1].answer is None
