"""Constrained narrative generation over frozen measurement slots.

Any token source may propose the narrative. The decoder walks the tokens as
a small state machine. Outside a slot it drops every token that carries a
numeral or a unit symbol. Inside a slot it discards whatever was proposed
and writes the slot's canonical text followed by its unit. Numbers in the
output therefore can only be copies of frozen values.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Protocol, Sequence

from ..recording import ConfigurationError
from .schema import FIELD_KINDS, OPTIONAL_FIELDS, Finding, ReportSchema

KIND_FIELDS = {kind: name for name, kind in FIELD_KINDS.items()}
DISPLAY_UNITS = {"frequency_hz": "Hz", "duration_s": "s", "onset_s": "s", "amplitude_uv": "µV",
                 "lateralization_index": ""}
LABELS = {"frequency_hz": "dominant frequency", "duration_s": "duration", "onset_s": "onset",
          "amplitude_uv": "amplitude", "lateralization_index": "asymmetry index"}
FIELD_LABELS = {KIND_FIELDS[k]: v for k, v in LABELS.items()}
UNIT_WORDS = frozenset({"Hz", "hz", "HZ", "kHz", "µV", "μV", "uV", "mV", "ms"})
WORD_PLACEHOLDERS = ("ordinal", "Ordinal")
TOKEN_KINDS = ("word", "punctuation", "numeric", "slot_open", "slot_close")

_PLACEHOLDER = re.compile(r"\{(\w+)(?::(\w+))?\}")
_TEXT_TOKEN = re.compile(r"\s*[A-Za-z'À-ɏ-]+|\s*[^\sA-Za-z]|\s+$")
_DIGIT_RUN = re.compile(r"[0-9.]*[0-9][0-9.]*")

_SMALL = ("zero one two three four five six seven eight nine ten eleven twelve thirteen fourteen "
          "fifteen sixteen seventeen eighteen nineteen").split()
_TENS = "twenty thirty forty fifty sixty seventy eighty ninety".split()
_ORDINALS = ("first second third fourth fifth sixth seventh eighth ninth tenth eleventh twelfth "
             "thirteenth fourteenth fifteenth sixteenth seventeenth eighteenth nineteenth "
             "twentieth").split()


def number_words(n: int) -> str:
    """English words for ``0 <= n < 10**6``."""
    if not 0 <= n < 10 ** 6:
        raise ConfigurationError("number out of range for spelling")
    if n < 20:
        return _SMALL[n]
    if n < 100:
        tens, rest = divmod(n, 10)
        return _TENS[tens - 2] + (f"-{_SMALL[rest]}" if rest else "")
    if n < 1000:
        hundreds, rest = divmod(n, 100)
        return f"{_SMALL[hundreds]} hundred" + (f" and {number_words(rest)}" if rest else "")
    thousands, rest = divmod(n, 1000)
    return f"{number_words(thousands)} thousand" + (f" {number_words(rest)}" if rest else "")


def ordinal_word(i: int) -> str:
    """``first`` .. ``twentieth`` for 1-based ``i``, then ``next``."""
    return _ORDINALS[i - 1] if 1 <= i <= len(_ORDINALS) else "next"


def has_numeral(text: str) -> bool:
    return any(c.isnumeric() for c in text)


def digit_runs(text: str) -> list[str]:
    """Maximal runs of ``[0-9.]`` containing at least one digit."""
    return _DIGIT_RUN.findall(text)


def unsupported_runs(text: str, canonical_texts: Iterable[str]) -> list[str]:
    """Digit runs of ``text`` that are not the digits of some canonical slot text."""
    allowed = set()
    for t in canonical_texts:
        allowed.update(digit_runs(t))
    return [r for r in digit_runs(text) if r not in allowed]


# -- templates ---------------------------------------------------------------

@dataclass(frozen=True)
class Clause:
    """A sentence of a template.

    ``requires`` names the optional finding fields the clause reports; when
    any of them is abstained the clause is replaced by ``fallback`` (or
    dropped when there is none).
    """

    text: str
    requires: tuple[str, ...] = ()
    fallback: str | None = None


@dataclass(frozen=True)
class NarrativeTemplate:
    """Sentences with typed slot placeholders ``{name:kind}``.

    A unit written right after a placeholder (``{f:frequency_hz} Hz``) is
    absorbed, since units are always rendered from the measurement kind.
    """

    name: str
    clauses: tuple[Clause, ...]
    tier: str = "high"

    def __post_init__(self):
        clauses = tuple(self._normalize(c) for c in self.clauses)
        object.__setattr__(self, "clauses", clauses)
        seen = set()
        for c in clauses:
            for text in (c.text, c.fallback or ""):
                if has_numeral(_PLACEHOLDER.sub("", text)):
                    raise ConfigurationError(f"template {self.name!r} has a literal numeral outside slots")
                for slot, kind in _PLACEHOLDER.findall(text):
                    if not kind:
                        if slot not in WORD_PLACEHOLDERS:
                            raise ConfigurationError(f"unknown word placeholder {{{slot}}}")
                        continue
                    if kind not in KIND_FIELDS:
                        raise ConfigurationError(f"placeholder {{{slot}:{kind}}} names no schema field")
                    if slot in seen:
                        raise ConfigurationError(f"slot name {slot!r} used twice")
                    seen.add(slot)
            for req in c.requires:
                if req not in OPTIONAL_FIELDS:
                    raise ConfigurationError(f"clause requires unknown optional field {req!r}")

    @staticmethod
    def _normalize(c: Clause) -> Clause:
        def absorb(text):
            def repl(m):
                return m.group(1)
            for kind, unit in DISPLAY_UNITS.items():
                if unit:
                    text = re.sub(r"(\{\w+:" + kind + r"\})\s+" + re.escape(unit) + r"(?![A-Za-z])", repl, text)
            return text

        text = absorb(c.text)
        fallback = absorb(c.fallback) if c.fallback is not None else None
        requires = tuple(c.requires) or tuple(
            KIND_FIELDS[k] for _, k in _PLACEHOLDER.findall(text) if k and KIND_FIELDS.get(k) in OPTIONAL_FIELDS)
        return Clause(text, requires, fallback)

    @classmethod
    def from_text(cls, text: str, name: str = "custom", tier: str = "high") -> "NarrativeTemplate":
        return cls(name, (Clause(text),), tier)

    def variant(self, abstained: Iterable[str]) -> "NarrativeTemplate":
        """Copy with clauses for abstained fields swapped for their fallbacks."""
        abstained = set(abstained)
        clauses = []
        for c in self.clauses:
            if abstained.intersection(c.requires):
                if c.fallback is not None:
                    clauses.append(Clause(c.fallback, ()))
            else:
                clauses.append(c)
        return NarrativeTemplate(self.name, tuple(clauses), self.tier)

    @property
    def text(self) -> str:
        return " ".join(c.text for c in self.clauses)

    def placeholders(self) -> list[tuple[str, str]]:
        return [(s, k) for s, k in _PLACEHOLDER.findall(self.text) if k]


def _no_value(field_name: str) -> str:
    return f"No reliable {FIELD_LABELS[field_name]} could be measured."


DEFAULT_TEMPLATES = {
    "high": NarrativeTemplate("assertive", (
        Clause("The {ordinal} event begins at {onset:onset_s} and lasts {dur:duration_s}."),
        Clause("Its dominant frequency is {f:frequency_hz}.", fallback=_no_value("dominant_frequency_hz")),
        Clause("Robust amplitude is {amp:amplitude_uv}.", fallback=_no_value("amplitude_uv")),
        Clause("The hemispheric asymmetry index is {lat:lateralization_index} "
               "(positive values indicate left predominance).", fallback=_no_value("lateralization")),
    ), "high"),
    "medium": NarrativeTemplate("qualified", (
        Clause("The {ordinal} event, detected with moderate confidence, begins at {onset:onset_s} "
               "and lasts {dur:duration_s}."),
        Clause("Its dominant frequency measures {f:frequency_hz}.", fallback=_no_value("dominant_frequency_hz")),
        Clause("Robust amplitude measures {amp:amplitude_uv}.", fallback=_no_value("amplitude_uv")),
        Clause("The hemispheric asymmetry index measures {lat:lateralization_index} "
               "(positive values indicate left predominance).", fallback=_no_value("lateralization")),
    ), "medium"),
    "low": NarrativeTemplate("hedged", (
        Clause("A possible event, detected with low confidence, begins at {onset:onset_s} "
               "and may last {dur:duration_s}."),
        Clause("Its dominant frequency may be {f:frequency_hz}."),
        Clause("Its robust amplitude may be {amp:amplitude_uv}."),
        Clause("Hemispheric asymmetry, if present, has index {lat:lateralization_index} "
               "(positive values indicate left predominance)."),
    ), "low"),
}


def confidence_tier(confidence: float, tiers: tuple[float, float] = (0.8, 0.5)) -> str:
    high, medium = tiers
    if confidence >= high:
        return "high"
    return "medium" if confidence >= medium else "low"


def select_template(confidence: float, abstained: Iterable[str] = (),
                    tiers: tuple[float, float] = (0.8, 0.5),
                    templates: Mapping[str, NarrativeTemplate] | None = None) -> NarrativeTemplate:
    """Template for a confidence tier, without clauses for abstained fields."""
    templates = DEFAULT_TEMPLATES if templates is None else templates
    return templates[confidence_tier(confidence, tiers)].variant(abstained)


def template_set_from_dict(doc: Mapping) -> dict[str, NarrativeTemplate]:
    """Per-tier templates from a document ``{tier: [clause, ...]}``.

    A clause is a string or ``{"text", "fallback", "requires"}``. Tiers not
    given keep their defaults.
    """
    out = dict(DEFAULT_TEMPLATES)
    unknown = set(doc) - set(DEFAULT_TEMPLATES)
    if unknown:
        raise ConfigurationError(f"unknown template tier(s): {', '.join(sorted(unknown))}")
    for tier, clauses in doc.items():
        if isinstance(clauses, str):
            clauses = [clauses]
        built = []
        for c in clauses:
            if isinstance(c, str):
                built.append(Clause(c))
            elif isinstance(c, Mapping) and set(c) <= {"text", "fallback", "requires"} and "text" in c:
                built.append(Clause(c["text"], tuple(c.get("requires", ())), c.get("fallback")))
            else:
                raise ConfigurationError(f"invalid clause in tier {tier!r}: {c!r}")
        out[tier] = NarrativeTemplate(f"custom-{tier}", tuple(built), tier)
    return out


# -- tokens ------------------------------------------------------------------

@dataclass(frozen=True)
class Token:
    kind: str
    text: str = ""
    slot: str | None = None

    def __post_init__(self):
        if self.kind not in TOKEN_KINDS:
            raise ConfigurationError(f"unknown token kind {self.kind!r}")
        if self.kind == "slot_open" and not self.slot:
            raise ConfigurationError("slot_open needs a slot name")


def word(text: str) -> Token:
    return Token("word", text)


def punctuation(text: str) -> Token:
    return Token("punctuation", text)


def numeric(text: str) -> Token:
    return Token("numeric", text)


def slot_open(name: str, text: str = "") -> Token:
    return Token("slot_open", text, name)


def slot_close() -> Token:
    return Token("slot_close")


class TokenStream(Protocol):
    def __iter__(self) -> Iterator[Token]: ...


@dataclass(frozen=True)
class Slot:
    slot_id: str
    kind: str
    text: str

    @property
    def unit(self) -> str:
        return DISPLAY_UNITS[self.kind]

    @property
    def rendered(self) -> str:
        return f"{self.text} {self.unit}" if self.unit else self.text


@dataclass(frozen=True)
class NarrativePlan:
    """Which template renders which finding, plus the resulting slot table."""

    entries: tuple[tuple[Finding, NarrativeTemplate], ...]
    preamble: bool = True

    @classmethod
    def build(cls, schema: ReportSchema, template: NarrativeTemplate | Mapping[str, NarrativeTemplate] | None = None,
              tiers: tuple[float, float] = (0.8, 0.5),
              template_set: Mapping[str, NarrativeTemplate] | None = None) -> "NarrativePlan":
        entries = []
        for f in schema.findings:
            if template is None:
                t = select_template(f.detection_confidence, f.abstained, tiers, template_set)
            elif isinstance(template, NarrativeTemplate):
                t = template.variant(f.abstained)
            else:
                t = template[f.event_id].variant(f.abstained)
            entries.append((f, t))
        return cls(tuple(entries), template is None)

    def slots(self) -> dict[str, Slot]:
        table = {}
        for f, t in self.entries:
            for name, kind in t.placeholders():
                m = getattr(f, KIND_FIELDS[kind])
                if m is None:
                    raise ConfigurationError(f"placeholder {{{name}:{kind}}} has no value in {f.event_id}")
                table[f"{f.event_id}.{name}"] = Slot(f"{f.event_id}.{name}", kind, m.canonical_text)
        return table

    def resolve(self, name: str, slots: Mapping[str, Slot] | None = None) -> str | None:
        slots = self.slots() if slots is None else slots
        if name in slots:
            return name
        if "." not in name and len(self.entries) == 1:
            qualified = f"{self.entries[0][0].event_id}.{name}"
            return qualified if qualified in slots else None
        return None


def _text_tokens(text: str) -> list[Token]:
    out = []
    for piece in _TEXT_TOKEN.findall(text):
        stripped = piece.strip()
        if not stripped:
            continue
        out.append(word(piece) if stripped[0].isalpha() or stripped[0] == "'" else punctuation(piece))
    return out


class TemplateTokenStream:
    """Default, well-behaved producer: renders the plan's templates token by token."""

    def __init__(self, schema: ReportSchema, template=None, tiers: tuple[float, float] = (0.8, 0.5),
                 template_set: Mapping[str, NarrativeTemplate] | None = None):
        self.schema = schema
        self.plan = NarrativePlan.build(schema, template, tiers, template_set)

    def preamble(self) -> str:
        n = len(self.schema.findings)
        if n == 0:
            return "No events were detected in this recording."
        count = number_words(n) if n < 10 ** 6 else "Many"
        count = count[0].upper() + count[1:]
        return f"{count} event{'s were' if n != 1 else ' was'} detected in this recording."

    def __iter__(self) -> Iterator[Token]:
        if self.plan.preamble:
            yield from _text_tokens(self.preamble())
        for index, (f, t) in enumerate(self.plan.entries, start=1):
            text = t.text
            pos = 0
            first = index == 1 and not self.plan.preamble
            lead = "" if first else " "
            for m in _PLACEHOLDER.finditer(text):
                literal = text[pos:m.start()]
                name, kind = m.group(1), m.group(2)
                if not kind:
                    w = ordinal_word(index)
                    literal += w.capitalize() if name == "Ordinal" else w
                    yield from _text_tokens(lead + literal)
                else:
                    yield from _text_tokens(lead + literal)
                    space = " " if literal.endswith(" ") or (not literal and lead) else ""
                    slot = f"{f.event_id}.{name}"
                    yield slot_open(slot, space)
                    yield numeric(getattr(f, KIND_FIELDS[kind]).canonical_text)
                    yield slot_close()
                lead = ""
                pos = m.end()
            yield from _text_tokens(lead + text[pos:])


# -- decoding ----------------------------------------------------------------

@dataclass(frozen=True)
class MaskEvent:
    position: int
    reason: str
    text: str = ""
    slot: str | None = None


@dataclass(frozen=True)
class NarrativeResult:
    text: str
    mask_events: tuple[MaskEvent, ...]
    slots: Mapping[str, Slot] = field(default_factory=dict)

    @property
    def mask_count(self) -> int:
        return len(self.mask_events)


class _Writer:
    """Accumulates output, keeping slot text from fusing with neighbouring dots or digits."""

    def __init__(self):
        self.parts: list[str] = []
        self.after_slot = False

    def _last(self) -> str:
        for p in reversed(self.parts):
            if p:
                return p[-1]
        return ""

    def literal(self, text: str):
        if not text:
            return
        if self.after_slot and text[0] in "0123456789.":
            self.parts.append(" ")
        self.parts.append(text)
        self.after_slot = False

    def slot(self, lead: str, rendered: str):
        if lead:
            self.parts.append(lead)
        last = self._last()
        if last and last in "0123456789.":
            self.parts.append(" ")
        self.parts.append(rendered)
        self.after_slot = rendered[-1] in "0123456789."

    def text(self) -> str:
        return re.sub(r"\s+", " ", "".join(self.parts)).strip()


def decode(tokens: Iterable[Token], plan: NarrativePlan) -> NarrativeResult:
    """Run the masking state machine over ``tokens``."""
    slots = plan.slots()
    out = _Writer()
    events: list[MaskEvent] = []
    used: set[str] = set()
    current: str | None = None   # resolved slot id while inside a region
    inside = False
    buffer: list[str] = []

    def close(pos: int, reason: str | None = None):
        nonlocal inside, current
        content = "".join(buffer).strip()
        if current is not None:
            slot = slots[current]
            if content != slot.text:
                events.append(MaskEvent(pos, reason or "slot content replaced", content, current))
            out.slot(lead, slot.rendered)
            used.add(current)
        inside, current = False, None
        buffer.clear()

    lead = ""
    pos = -1
    for pos, tok in enumerate(tokens):
        if not isinstance(tok, Token):
            events.append(MaskEvent(pos, "not a token", repr(tok)[:40]))
            continue
        if inside:
            if tok.kind == "slot_close":
                close(pos)
            elif tok.kind == "slot_open":
                events.append(MaskEvent(pos, "nested slot", tok.text, tok.slot))
            else:
                buffer.append(tok.text)
            continue
        if tok.kind == "slot_open":
            resolved = plan.resolve(tok.slot, slots)
            inside = True
            lead = tok.text if tok.text.isspace() else ""
            if resolved is None:
                events.append(MaskEvent(pos, "unknown slot", tok.text, tok.slot))
                current = None
            elif resolved in used:
                events.append(MaskEvent(pos, "duplicate slot", tok.text, resolved))
                current = None
            else:
                current = resolved
        elif tok.kind == "slot_close":
            events.append(MaskEvent(pos, "unbalanced slot close"))
        elif has_numeral(tok.text):
            events.append(MaskEvent(pos, "numeral outside slot", tok.text))
        elif tok.text.strip().strip(".,;:()") in UNIT_WORDS:
            events.append(MaskEvent(pos, "unit outside slot", tok.text))
        else:
            out.literal(tok.text)
    if inside:
        close(pos + 1, "unterminated slot")
    for slot_id, slot in slots.items():
        if slot_id not in used:
            events.append(MaskEvent(pos + 1, "missing slot appended", "", slot_id))
            out.literal(f" ({LABELS[slot.kind]}")
            out.slot(" ", slot.rendered)
            out.literal(")")
            used.add(slot_id)
    return NarrativeResult(out.text(), tuple(events), slots)


def generate_narrative(schema: ReportSchema, template=None, tokens: Iterable[Token] | None = None,
                       tiers: tuple[float, float] = (0.8, 0.5),
                       template_set: Mapping[str, NarrativeTemplate] | None = None) -> NarrativeResult:
    """Narrative text for ``schema`` plus the decoder's mask events.

    Parameters
    ----------
    schema : ReportSchema
    template : NarrativeTemplate, mapping of event id to template, or None
        ``None`` selects a template per finding by confidence tier and adds
        a preamble sentence.
    tokens : iterable of Token, optional
        Token proposals; defaults to :class:`TemplateTokenStream`.
    template_set : mapping of tier to template, optional
        Replaces the default per-tier templates when ``template`` is None.
    """
    plan = NarrativePlan.build(schema, template, tiers, template_set)
    if tokens is None:
        tokens = TemplateTokenStream(schema, template, tiers, template_set)
    return decode(tokens, plan)
