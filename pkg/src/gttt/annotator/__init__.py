"""Pseudo-label providers: a seeded oracle and an LLM endpoint client."""

from gttt.annotator.llm import (
    AnnotationBatch,
    ChatClient,
    EndpointConfig,
    LlmAnnotator,
    annotate_llm,
    neighbor_summary,
)
from gttt.annotator.oracle import OracleAnnotator, OracleConfig, annotate_oracle
from gttt.annotator.prompts import PROMPT_KINDS, build_prompt, parse_llm_response, render_response
from gttt.annotator.records import (
    AnnotationRecord,
    BudgetLedger,
    append_records,
    default_budget,
    read_records,
)

__all__ = [
    "AnnotationBatch", "AnnotationRecord", "BudgetLedger", "ChatClient", "EndpointConfig",
    "LlmAnnotator", "OracleAnnotator", "OracleConfig", "PROMPT_KINDS", "annotate_llm",
    "annotate_oracle", "append_records", "build_prompt", "default_budget", "neighbor_summary",
    "parse_llm_response", "read_records", "render_response",
]
