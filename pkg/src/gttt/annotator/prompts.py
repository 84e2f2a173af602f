"""Annotation prompt templates and response parsing."""

import ast
import hashlib
import json
import math
import re

from gttt.errors import ResponseParseError, UnknownCategoryError, ValidationError

PROMPT_KINDS = ("zero_shot", "few_shot", "few_shot_gnn", "few_shot_2hop")

SHOTS_HEADER = "# Information for the first few-shot samples\n"
PAPER = "Paper: \n{content}\n"
NEIGHBOR = "Neighbor Summary: {summary}\n"
TASK = (
    "Task: \n"
    "There are following categories: \n"
    "{categories}\n"
    "What's the category of this paper Output your answer together with a confidence "
    "ranging from 0 to 100, in the form of a list of python dicts like "
    '[{{"answer":<answer_here>, "confidence": <confidence_here>}}]'
)
GNN_HINT = (
    ".\nThe psuedo label generated by GCN is: {label} The confidence of this pseudo-label "
    "is {confidence}. Use this information to help your prediction."
)
SHOT = "Paper: \n{content}\nCategory: {category}\n\n"
SUMMARY = (
    "The following list records some papers related to the current one. \n"
    "{neighbors}\n"
    "Please summarize the information above with a short paragraph, find some common "
    "points which can reflect the category of this paper"
)


def _categories(categories):
    return ", ".join(categories)


def build_prompt(kind, node_text, categories, shots=(), gnn_hint=None, neighbor_summary=None):
    """Render one annotation prompt.

    ``shots`` is a sequence of ``(text, category)`` pairs, ``gnn_hint`` a
    ``(category, confidence)`` pair for ``few_shot_gnn`` and
    ``neighbor_summary`` the text for ``few_shot_2hop``.
    """
    if kind not in PROMPT_KINDS:
        raise ValidationError(f"unknown prompt kind {kind!r}; expected one of {PROMPT_KINDS}")
    if not categories:
        raise ValidationError("categories are required")
    if kind != "zero_shot" and not shots:
        raise ValidationError(f"{kind} prompt requires few-shot examples")
    if kind == "few_shot_gnn" and gnn_hint is None:
        raise ValidationError("few_shot_gnn prompt requires gnn_hint")
    if kind == "few_shot_2hop" and neighbor_summary is None:
        raise ValidationError("few_shot_2hop prompt requires neighbor_summary")

    parts = []
    if kind != "zero_shot":
        parts.append(SHOTS_HEADER)
        parts.extend(SHOT.format(content=t, category=c) for t, c in shots)
    parts.append(PAPER.format(content=node_text))
    if kind == "few_shot_2hop":
        parts.append(NEIGHBOR.format(summary=neighbor_summary))
    parts.append(TASK.format(categories=_categories(categories)))
    if kind == "few_shot_gnn":
        label, conf = gnn_hint
        parts.append(GNN_HINT.format(label=label, confidence=_fmt_conf(conf)))
    return "".join(parts)


def build_summary_prompt(neighbors):
    """``neighbors`` is a list of dicts with a ``content`` and optional ``category`` key."""
    return SUMMARY.format(neighbors=json.dumps(list(neighbors), ensure_ascii=False))


def template_hash():
    blob = "\x00".join([SHOTS_HEADER, PAPER, NEIGHBOR, TASK, GNN_HINT, SHOT, SUMMARY])
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _fmt_conf(c):
    c = float(c)
    return str(int(c)) if c.is_integer() else f"{c:g}"


def render_response(category, confidence):
    """The reply format the prompts ask for."""
    return json.dumps([{"answer": category, "confidence": confidence}])


_LIST_RE = re.compile(r"\[\s*\{.*?\}\s*\]", re.DOTALL)
_DICT_RE = re.compile(r"\{[^{}]*\}", re.DOTALL)
_LOOSE_RE = re.compile(
    r"""['"]?answer['"]?\s*:\s*['"]?(?P<answer>[^'",}\]]+?)['"]?\s*,\s*"""
    r"""['"]?confidence['"]?\s*:\s*['"]?(?P<conf>-?\d+(?:\.\d*)?)""",
    re.IGNORECASE,
)


def _as_answer(obj):
    if isinstance(obj, list) and obj:
        obj = obj[0]
    if not isinstance(obj, dict):
        return None
    keys = {str(k).strip().lower(): v for k, v in obj.items()}
    if "answer" not in keys or "confidence" not in keys:
        return None
    return keys["answer"], keys["confidence"]


def _literal(text):
    for loader in (json.loads, ast.literal_eval):
        try:
            return loader(text)
        except (ValueError, SyntaxError, TypeError, MemoryError, RecursionError):
            continue
    return None


def _extract(raw):
    for regex in (_LIST_RE, _DICT_RE):
        for m in regex.finditer(raw):
            found = _as_answer(_literal(m.group(0)))
            if found is not None:
                return found
    m = _LOOSE_RE.search(raw)
    if m:
        return m.group("answer"), m.group("conf")
    return None


def _to_confidence(value):
    if isinstance(value, str):
        value = value.strip().rstrip("%").strip()
    try:
        c = float(value)
    except (TypeError, ValueError):
        raise ResponseParseError(f"confidence {value!r} is not a number") from None
    if math.isnan(c):
        raise ResponseParseError("confidence is NaN")
    return min(100.0, max(0.0, c))


def parse_llm_response(raw, categories):
    """Extract ``(category_index, confidence)`` from a model reply.

    Takes the first ``[{"answer": ..., "confidence": ...}]``-shaped object
    anywhere in the text; the answer is matched to ``categories`` ignoring
    case and the confidence is clamped to [0, 100].
    """
    found = _extract(raw or "")
    if found is None:
        raise ResponseParseError("no answer/confidence object in response")
    answer, conf = found
    confidence = _to_confidence(conf)
    key = str(answer).strip().strip("'\"").strip().casefold()
    for i, c in enumerate(categories):
        if c.casefold() == key:
            return i, confidence
    raise UnknownCategoryError(str(answer).strip(), categories)
