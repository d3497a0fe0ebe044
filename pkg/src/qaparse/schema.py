"""Domain schema: intents, slots, slot questions and the mappings between them."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

LABEL_RE = re.compile(r"[A-Z0-9_]+")
MAX_DEPTH = 4


class SchemaError(ValueError):
    """Raised when a schema document cannot be parsed or violates an invariant."""


def naturalize_label(label: str) -> str:
    """Turn ``CREATE_CALL`` into ``"create call"``."""
    return " ".join(label.lower().replace("_", " ").split())


@dataclass(frozen=True, eq=False)
class Schema:
    """Immutable intent/slot schema.

    ``intents`` and ``slots`` keep document order; ``i2s`` lists are ordered
    and drive the order in which the pipeline asks slot questions. A slot may
    be listed under several intents, in which case ``s2i`` points at the first
    owner in document order.
    """

    intents: tuple[str, ...]
    slots: tuple[str, ...]
    questions: Mapping[str, str]
    i2s: Mapping[str, tuple[str, ...]]
    s2ni: Mapping[str, tuple[str, ...]]
    s2i: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.s2i:
            s2i: dict[str, str] = {}
            for intent in self.intents:
                for slot in self.i2s.get(intent, ()):
                    s2i.setdefault(slot, intent)
            object.__setattr__(self, "s2i", s2i)
        for name in ("questions", "i2s", "s2ni", "s2i"):
            object.__setattr__(self, name, dict(getattr(self, name)))
        validate_schema(self)

    @property
    def n_intents(self) -> int:
        return len(self.intents)

    @property
    def n_slots(self) -> int:
        return len(self.slots)

    def slots_of(self, intent: str) -> tuple[str, ...]:
        return self.i2s.get(intent, ())

    def nested_candidates(self, slot: str) -> tuple[str, ...]:
        return self.s2ni.get(slot, ())

    def question(self, slot: str) -> str:
        try:
            return self.questions[slot]
        except KeyError:
            raise SchemaError(f"slot {slot} has no question") from None

    def intent_index(self, intent: str) -> int:
        return self.intents.index(intent)

    def to_dict(self) -> dict[str, Any]:
        return {
            "intents": [{"name": i, "slots": list(self.i2s.get(i, ()))} for i in self.intents],
            "slots": [
                {"name": s, "question": self.questions[s], "nested_intents": list(self.s2ni.get(s, ()))}
                for s in self.slots
            ],
        }

    @classmethod
    def from_dict(cls, doc: Any) -> "Schema":
        return _schema_from_document(doc)


def validate_schema(schema: Schema) -> None:
    """Raise :class:`SchemaError` naming the first violated invariant."""
    _check_unique("intent", schema.intents)
    _check_unique("slot", schema.slots)
    slot_set = set(schema.slots)
    intent_set = set(schema.intents)

    for slot in schema.slots:
        q = schema.questions.get(slot)
        if not isinstance(q, str) or not q.strip():
            raise SchemaError(f"slot {slot} has no question")
    for intent in schema.intents:
        listed = schema.i2s.get(intent, ())
        if len(set(listed)) != len(listed):
            raise SchemaError(f"intent {intent} lists a slot twice")
        for slot in listed:
            if slot not in slot_set:
                raise SchemaError(f"intent {intent} uses undeclared slot {slot}")
    for intent in schema.i2s:
        if intent not in intent_set:
            raise SchemaError(f"i2s refers to undeclared intent {intent}")
    for slot in schema.slots:
        owner = schema.s2i.get(slot)
        if owner is None:
            raise SchemaError(f"slot {slot} is not used by any intent")
        if slot not in schema.i2s.get(owner, ()):
            raise SchemaError(f"s2i maps slot {slot} to {owner}, which does not list it")
    for slot, nested in schema.s2ni.items():
        if slot not in slot_set:
            raise SchemaError(f"s2ni refers to undeclared slot {slot}")
        for intent in nested:
            if intent not in intent_set:
                raise SchemaError(f"slot {slot} lists unknown nested intent {intent}")

    # a nested intent may not host further nested intents
    for slot, nested in schema.s2ni.items():
        for intent in nested:
            for inner in schema.i2s.get(intent, ()):
                if schema.s2ni.get(inner):
                    raise SchemaError(
                        f"depth limit exceeded: nested intent {intent} (via slot {slot}) "
                        f"has slot {inner} with nested intents"
                    )


def _check_unique(kind: str, labels: tuple[str, ...]) -> None:
    seen = set()
    for label in labels:
        if not isinstance(label, str) or not LABEL_RE.fullmatch(label):
            raise SchemaError(f"invalid {kind} label {label!r}")
        if label in seen:
            raise SchemaError(f"duplicate {kind} label {label}")
        seen.add(label)


def _require(obj: Any, key: str, where: str, kind: type) -> Any:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected a mapping")
    if key not in obj:
        raise SchemaError(f"{where}.{key}: missing field")
    value = obj[key]
    if not isinstance(value, kind):
        raise SchemaError(f"{where}.{key}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def _schema_from_document(doc: Any) -> Schema:
    if not isinstance(doc, dict):
        raise SchemaError("schema document must be a mapping with 'intents' and 'slots'")
    intents_doc = _require(doc, "intents", "schema", list)
    slots_doc = _require(doc, "slots", "schema", list)

    intents, i2s = [], {}
    for n, entry in enumerate(intents_doc):
        where = f"intents[{n}]"
        name = _require(entry, "name", where, str)
        slots = entry.get("slots", [])
        if not isinstance(slots, list) or not all(isinstance(s, str) for s in slots):
            raise SchemaError(f"{where}.slots: expected a list of slot names")
        intents.append(name)
        i2s[name] = tuple(slots)

    slots, questions, s2ni = [], {}, {}
    for n, entry in enumerate(slots_doc):
        where = f"slots[{n}]"
        name = _require(entry, "name", where, str)
        slots.append(name)
        question = entry.get("question")
        if question is not None:
            if not isinstance(question, str):
                raise SchemaError(f"{where}.question: expected str")
            questions[name] = question
        nested = entry.get("nested_intents", [])
        if not isinstance(nested, list) or not all(isinstance(s, str) for s in nested):
            raise SchemaError(f"{where}.nested_intents: expected a list of intent names")
        if nested:
            s2ni[name] = tuple(nested)

    return Schema(tuple(intents), tuple(slots), questions, i2s, s2ni)


def load_schema(path: str | Path) -> Schema:
    """Load a JSON or YAML schema file and validate it."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() in (".yaml", ".yml"):
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            loc = f" at line {mark.line + 1}" if mark is not None else ""
            raise SchemaError(f"{path}: YAML parse error{loc}: {exc}") from exc
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: JSON parse error at line {exc.lineno}: {exc.msg}") from exc
    try:
        return _schema_from_document(doc)
    except SchemaError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
