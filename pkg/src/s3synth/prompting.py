"""Prompt templates and rendering.

A template body is plain text containing angle-bracket placeholders such
as ``<X>``, ``<Y>``, or ``<X["premise"]>``.  Newlines may be spelled as a
literal two-character ``\\n`` sequence; rendering converts those to real
newlines *before* substituting bindings, so bound values are inserted
verbatim and never rewritten.

Five roles cover the pipeline: ``ration`` asks for reason phrases,
``query1``/``mis1`` drive single-text seed synthesis and error
extrapolation, and ``query2``/``mis2`` are their counterparts for
pair-classification and QA tasks.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping

from .errors import ConfigError

RATION = "ration"
QUERY1 = "query1"
QUERY2 = "query2"
MIS1 = "mis1"
MIS2 = "mis2"
ROLES = (RATION, QUERY1, QUERY2, MIS1, MIS2)

X = "<X>"
Y = "<Y>"
X_PREMISE = '<X["premise"]>'
X_QUESTION = '<X["question"]>'
X_HYPOTHESIS = '<X["Hypothesis"]>'
X_CONTEXT = '<X["context"]>'
X_ANSWER = '<X["answer"]>'
PLACEHOLDERS = (X, Y, X_PREMISE, X_QUESTION, X_HYPOTHESIS, X_CONTEXT, X_ANSWER)

# Matches anything placeholder-shaped; membership in PLACEHOLDERS is
# checked separately so typos like <Z> are rejected at construction.
_TOKEN_RE = re.compile(r'<X\["[^"\]]*"\]>|<[A-Za-z]>')


def placeholders_in(body: str) -> list[str]:
    """Placeholder-shaped tokens in ``body``, in order of appearance."""
    return _TOKEN_RE.findall(body)


@dataclass(frozen=True)
class PromptTemplate:
    role: str
    body: str
    label_map: Mapping[str, str] | None = None

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ConfigError(f"unknown template role {self.role!r}; expected one of {ROLES}")
        unknown = [t for t in placeholders_in(self.body) if t not in PLACEHOLDERS]
        if unknown:
            raise ConfigError(
                f"template {self.role!r} contains unrecognized placeholder(s): "
                + ", ".join(sorted(set(unknown)))
            )
        if self.label_map is not None:
            object.__setattr__(self, "label_map", MappingProxyType(dict(self.label_map)))

    def map_label(self, label: str) -> str:
        """Label word for an internal label; identity when unmapped."""
        if self.label_map is None:
            return label
        return self.label_map.get(label, label)


def render(template: PromptTemplate, bindings: Mapping[str, str], *, strict: bool = False) -> str:
    """Substitute every placeholder in the template body.

    The ``<Y>`` binding is passed through the template's label map; all
    other bindings are inserted verbatim.  With ``strict`` on, bindings
    for placeholders the body does not use are rejected.
    """
    body = template.body.replace("\\n", "\n")
    needed = placeholders_in(body)
    if strict:
        extra = sorted(set(bindings) - set(needed))
        if extra:
            raise ConfigError(
                "binding for unknown placeholder " + ", ".join(extra)
                + f" (template role {template.role!r})"
            )
    missing = [t for t in needed if t not in bindings]
    if missing:
        raise ConfigError(f"unbound placeholder {missing[0]}")

    def _sub(match: re.Match[str]) -> str:
        token = match.group(0)
        value = bindings[token]
        if token == Y:
            value = template.map_label(value)
        return value

    return _TOKEN_RE.sub(_sub, body)


def parse_template_map(obj: Mapping[str, object]) -> dict[str, PromptTemplate]:
    """Parse a role -> {body, label_map} JSON mapping (body alone also accepted)."""
    templates: dict[str, PromptTemplate] = {}
    for role, entry in obj.items():
        if isinstance(entry, str):
            templates[role] = PromptTemplate(role=role, body=entry)
        elif isinstance(entry, Mapping):
            body = entry.get("body")
            if not isinstance(body, str):
                raise ConfigError(f"template override for role {role!r} is missing a 'body' string")
            label_map = entry.get("label_map")
            if label_map is not None and not isinstance(label_map, Mapping):
                raise ConfigError(f"template override for role {role!r}: label_map must be a mapping")
            templates[role] = PromptTemplate(role=role, body=body, label_map=label_map)
        else:
            raise ConfigError(f"template override for role {role!r} must be a string or mapping")
    return templates


# Built-in template sets for the four reference tasks.  Bodies keep the
# literal `\n` spelling; render() turns it into a real newline.
_QNLI_MAP = {"entailment": "in", "not_entailment": "not in"}
_RTE_MAP = {"entailment": "correct", "not_entailment": "wrong"}

_BUILTIN: dict[str, dict[str, PromptTemplate]] = {
    "imdb": {
        RATION: PromptTemplate(
            RATION,
            "Imagine you are watching a movie; consider <X> reasons that may lead to <Y> impression of the movie.",
        ),
        QUERY1: PromptTemplate(
            QUERY1,
            "Now imagine that you just watched a movie that has <X>. Now you should write a <Y> review about this movie.",
        ),
        MIS1: PromptTemplate(MIS1, "Write a <Y> movie similar to: \\n <X>"),
    },
    "qnli": {
        QUERY2: PromptTemplate(
            QUERY2,
            "Given an information paragraph: <X> \\n Please ask a question that has answers <Y> the information paragraph",
            label_map=_QNLI_MAP,
        ),
        MIS2: PromptTemplate(
            MIS2,
            'Given a premise: <X["premise"]> \\n And here is a question: <X["question"]> that the answer of question is'
            " <Y> the premise.\\nPlease write another question similar to the given question and have answers <Y> the premise.",
            label_map=_QNLI_MAP,
        ),
    },
    "rte": {
        QUERY2: PromptTemplate(
            QUERY2,
            "<X> \\nBased on the above description, the following sentence is definitely <Y>:",
            label_map=_RTE_MAP,
        ),
        MIS2: PromptTemplate(
            MIS2,
            '<X["premise"]> \\nBased on the above description, the following sentence: <X["Hypothesis"]> is definitely <Y>.'
            " Now write a sentence similar to the given sentence and is definitely <Y> based on the given description.",
            label_map=_RTE_MAP,
        ),
    },
    "adqa": {
        QUERY2: PromptTemplate(
            QUERY2,
            'Given a context: <X["context"]> \\n<X["answer"]> is the answer to the following question:',
        ),
        MIS2: PromptTemplate(
            MIS2,
            'Given a context: <X["context"]> \\n<X["answer"]> is the answer to: <X["question"]>.'
            "\\nA question that has the same answer in the context is: ",
        ),
    },
}


def builtin_templates(dataset_name: str) -> dict[str, PromptTemplate]:
    """The built-in template set for one of: imdb, qnli, rte, adqa."""
    try:
        return dict(_BUILTIN[dataset_name])
    except KeyError:
        raise ConfigError(
            f"unknown builtin template set {dataset_name!r}; available: " + ", ".join(sorted(_BUILTIN))
        ) from None
