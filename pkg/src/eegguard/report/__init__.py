"""Two-stage reporting: a validated findings document, then a slot-constrained narrative."""

from .narrative import (DEFAULT_TEMPLATES, Clause, MaskEvent, NarrativePlan, NarrativeResult,
                        NarrativeTemplate, Slot, TemplateTokenStream, Token, TokenStream, decode,
                        digit_runs, generate_narrative, number_words, numeric, punctuation,
                        select_template, slot_close, slot_open, template_set_from_dict, unsupported_runs,
                        word)
from .schema import (FIELD_KINDS, IMPRESSIONS, SCHEMA_VERSION, Finding, RecordingInfo, ReportSchema,
                     SchemaValidationError, build_schema, schema_document, validate_document)

__all__ = [
    "DEFAULT_TEMPLATES", "Clause", "MaskEvent", "NarrativePlan", "NarrativeResult", "NarrativeTemplate",
    "Slot", "TemplateTokenStream", "Token", "TokenStream", "decode", "digit_runs", "generate_narrative",
    "number_words", "numeric", "punctuation", "select_template", "slot_close", "slot_open",
    "template_set_from_dict", "unsupported_runs", "word", "FIELD_KINDS", "IMPRESSIONS", "SCHEMA_VERSION", "Finding",
    "RecordingInfo", "ReportSchema", "SchemaValidationError", "build_schema", "schema_document",
    "validate_document",
]
