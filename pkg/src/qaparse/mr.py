"""Meaning-representation trees and the bracketed ``[IN:... [SL:... ] ]`` format."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Union

from .schema import LABEL_RE, MAX_DEPTH

if TYPE_CHECKING:
    from .schema import Schema


class MRSyntaxError(ValueError):
    def __init__(self, message: str, token_index: int | None = None):
        if token_index is not None:
            message = f"{message} (token {token_index})"
        super().__init__(message)
        self.token_index = token_index


class MRSchemaError(ValueError):
    pass


@dataclass(frozen=True)
class SlotFilling:
    slot: str
    value: Union[str, "IntentFrame"]

    @property
    def is_nested(self) -> bool:
        return isinstance(self.value, IntentFrame)


@dataclass(frozen=True)
class IntentFrame:
    intent: str
    fillings: tuple[SlotFilling, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not isinstance(self.fillings, tuple):
            object.__setattr__(self, "fillings", tuple(self.fillings))

    @property
    def depth(self) -> int:
        """Top intent counts 1, its slots 2, a nested intent 3, nested slots 4."""
        deepest = 0
        for f in self.fillings:
            deepest = max(deepest, 1 + f.value.depth if f.is_nested else 1)
        return 1 + deepest

    def slot_values(self) -> dict[str, list]:
        out: dict[str, list] = {}
        for f in self.fillings:
            out.setdefault(f.slot, []).append(f.value)
        return out

    def __str__(self) -> str:
        return serialize_mr(self)


def normalize_text(text: str) -> str:
    return " ".join(text.split())


def parse_mr(text: str, schema: "Schema | None" = None, max_depth: int = MAX_DEPTH) -> IntentFrame:
    """Parse a bracketed meaning representation.

    Tokens are whitespace separated. ``[IN:LABEL`` opens an intent, ``[SL:LABEL``
    opens a slot, ``]`` closes the innermost node and every other token is slot
    value text. With ``schema`` given, labels and intent/slot membership are
    checked as well.
    """
    tokens = text.split()
    if not tokens:
        raise MRSyntaxError("empty meaning representation", 0)

    # stack entries: ["IN", label, fillings, start] or ["SL", label, parts, start]
    stack: list[list] = []
    root: IntentFrame | None = None
    for i, tok in enumerate(tokens):
        if tok.startswith("["):
            kind, _, label = tok[1:].partition(":")
            if kind not in ("IN", "SL") or not LABEL_RE.fullmatch(label):
                raise MRSyntaxError(f"malformed node opener {tok!r}", i)
            if root is not None:
                raise MRSyntaxError("content after the root intent", i)
            if kind == "IN":
                if stack and stack[-1][0] != "SL":
                    raise MRSyntaxError("intent must be the root or a slot value", i)
                if stack and stack[-1][2]:
                    raise MRSyntaxError("slot mixes text and a nested intent", i)
            else:
                if not stack or stack[-1][0] != "IN":
                    raise MRSyntaxError("slot must appear directly inside an intent", i)
            stack.append([kind, label, [], i])
            if len(stack) > max_depth:
                raise MRSyntaxError(f"depth limit exceeded ({max_depth})", i)
        elif tok == "]":
            if not stack:
                raise MRSyntaxError("unbalanced ']'", i)
            kind, label, parts, start = stack.pop()
            if kind == "IN":
                node = IntentFrame(label, tuple(parts))
                if stack:
                    stack[-1][2].append(node)
                else:
                    root = node
            else:
                if not parts:
                    raise MRSyntaxError(f"slot {label} has no value", start)
                if isinstance(parts[0], IntentFrame):
                    value = parts[0]
                else:
                    value = " ".join(parts)
                stack[-1][2].append(SlotFilling(label, value))
        else:
            if root is not None:
                raise MRSyntaxError("content after the root intent", i)
            if not stack:
                raise MRSyntaxError("text outside any intent", i)
            if stack[-1][0] != "SL":
                raise MRSyntaxError(f"text {tok!r} directly inside an intent", i)
            if stack[-1][2] and isinstance(stack[-1][2][0], IntentFrame):
                raise MRSyntaxError("slot mixes text and a nested intent", i)
            stack[-1][2].append(tok)
    if stack:
        raise MRSyntaxError(f"unbalanced brackets: {len(stack)} node(s) left open", len(tokens))
    if root is None:
        raise MRSyntaxError("no intent found", 0)
    if schema is not None:
        check_frame(root, schema)
    return root


def check_frame(frame: IntentFrame, schema: "Schema") -> None:
    """Raise :class:`MRSchemaError` when a label is unknown or a slot does not belong to its intent."""
    if frame.intent not in schema.i2s:
        raise MRSchemaError(f"unknown intent {frame.intent}")
    allowed = schema.slots_of(frame.intent)
    for f in frame.fillings:
        if f.slot not in schema.questions:
            raise MRSchemaError(f"unknown slot {f.slot}")
        if f.slot not in allowed:
            raise MRSchemaError(f"slot {f.slot} is not a slot of intent {frame.intent}")
        if f.is_nested:
            check_frame(f.value, schema)
    if frame.depth > MAX_DEPTH:
        raise MRSchemaError(f"depth limit exceeded ({frame.depth} > {MAX_DEPTH})")


def serialize_mr(frame: IntentFrame) -> str:
    parts = [f"[IN:{frame.intent}"]
    for f in frame.fillings:
        parts.append(f"[SL:{f.slot}")
        parts.append(serialize_mr(f.value) if f.is_nested else normalize_text(f.value))
        parts.append("]")
    parts.append("]")
    return " ".join(parts)


def _canonical(frame: IntentFrame, ordered: bool):
    fills = [
        (f.slot, _canonical(f.value, ordered) if f.is_nested else normalize_text(f.value))
        for f in frame.fillings
    ]
    if ordered:
        return (frame.intent, tuple(fills))
    return (frame.intent, frozenset(Counter(fills).items()))


def exact_match(a: IntentFrame, b: IntentFrame, ordered: bool = False) -> bool:
    """Full-tree equality; filling order is ignored unless ``ordered``."""
    return _canonical(a, ordered) == _canonical(b, ordered)
