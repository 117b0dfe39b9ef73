"""Benchmark construction: prompts, generation and audit sampling."""
from tailkg.benchgen.audit import AUDIT_INSTRUCTIONS, AuditManifest, ErrorRates, Verdict, audit_sample, error_rates
from tailkg.benchgen.generate import EntityTriples, GenerationSettings, ReportEntry, generate_dataset
from tailkg.benchgen.prompts import (
    ConvParse,
    NoBlocks,
    ParseError,
    QAParse,
    RoleOrderViolation,
    parse_conv_response,
    parse_qa_response,
    render_conv_prompt,
    render_qa_prompt,
)

__all__ = [
    "AUDIT_INSTRUCTIONS",
    "AuditManifest",
    "ConvParse",
    "EntityTriples",
    "ErrorRates",
    "GenerationSettings",
    "NoBlocks",
    "ParseError",
    "QAParse",
    "ReportEntry",
    "RoleOrderViolation",
    "Verdict",
    "audit_sample",
    "error_rates",
    "generate_dataset",
    "parse_conv_response",
    "parse_qa_response",
    "render_conv_prompt",
    "render_qa_prompt",
]
