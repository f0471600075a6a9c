"""Tagged equipment values and the converters applied along workflow links."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Union

Scalar = Union[bool, int, float, str]

_INT64_MIN = -(2**63)
_INT64_MAX = 2**63 - 1


class ConversionError(ValueError):
    """Raised when a value cannot be converted to the requested tag."""


class ValueTag(str, Enum):
    BOOL = "bool"
    INT64 = "int64"
    FLOAT64 = "float64"
    TEXT = "text"


_NUMERIC = {ValueTag.INT64, ValueTag.FLOAT64}


@dataclass(frozen=True)
class VariableValue:
    tag: ValueTag
    value: Scalar

    def __post_init__(self):
        tag, value = self.tag, self.value
        if tag is ValueTag.BOOL:
            ok = isinstance(value, bool)
        elif tag is ValueTag.INT64:
            ok = isinstance(value, int) and not isinstance(value, bool)
            if ok and not _INT64_MIN <= value <= _INT64_MAX:
                raise ConversionError(f"int64 out of range: {value}")
        elif tag is ValueTag.FLOAT64:
            ok = isinstance(value, float)
            if ok and not math.isfinite(value):
                raise ConversionError(f"float64 must be finite, got {value!r}")
        elif tag is ValueTag.TEXT:
            ok = isinstance(value, str)
        else:  # pragma: no cover - enum is closed
            ok = False
        if not ok:
            raise ConversionError(f"payload {value!r} does not match tag {tag.value}")

    @classmethod
    def bool_(cls, v: bool) -> "VariableValue":
        return cls(ValueTag.BOOL, bool(v))

    @classmethod
    def int64(cls, v: int) -> "VariableValue":
        return cls(ValueTag.INT64, int(v))

    @classmethod
    def float64(cls, v: float) -> "VariableValue":
        return cls(ValueTag.FLOAT64, float(v))

    @classmethod
    def text(cls, v: str) -> "VariableValue":
        return cls(ValueTag.TEXT, str(v))

    def to_json(self) -> dict:
        return {"tag": self.tag.value, "value": self.value}

    @classmethod
    def from_json(cls, doc: dict) -> "VariableValue":
        try:
            tag = ValueTag(doc["tag"])
            value = doc["value"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConversionError(f"malformed value document: {doc!r}") from exc
        if tag is ValueTag.FLOAT64 and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)  # JSON has one number type
        return cls(tag, value)


class ConverterKind(str, Enum):
    CAST = "cast"
    SCALE = "scale"
    OFFSET = "offset"
    BOOL_NEGATE = "boolNegate"
    IDENTITY = "identity"


# Cast targets ride in the numeric params slot of the converter document.
CAST_CODES = {
    0: ValueTag.BOOL,
    1: ValueTag.INT64,
    2: ValueTag.FLOAT64,
    3: ValueTag.TEXT,
}
_CODE_OF_TAG = {tag: code for code, tag in CAST_CODES.items()}


@dataclass(frozen=True)
class ValueConverter:
    kind: ConverterKind
    params: tuple = field(default=())

    @classmethod
    def identity(cls) -> "ValueConverter":
        return cls(ConverterKind.IDENTITY)

    @classmethod
    def cast_to(cls, tag: ValueTag) -> "ValueConverter":
        return cls(ConverterKind.CAST, (_CODE_OF_TAG[tag],))

    @classmethod
    def scale(cls, factor: float) -> "ValueConverter":
        return cls(ConverterKind.SCALE, (float(factor),))

    @classmethod
    def offset(cls, delta: float) -> "ValueConverter":
        return cls(ConverterKind.OFFSET, (float(delta),))

    @classmethod
    def bool_negate(cls) -> "ValueConverter":
        return cls(ConverterKind.BOOL_NEGATE)

    @property
    def cast_target(self) -> ValueTag:
        if self.kind is not ConverterKind.CAST:
            raise ConversionError("not a cast converter")
        try:
            return CAST_CODES[int(self.params[0])]
        except (IndexError, KeyError, ValueError) as exc:
            raise ConversionError(f"bad cast target params {self.params!r}") from exc

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "params": [float(p) for p in self.params]}

    @classmethod
    def from_json(cls, doc: dict) -> "ValueConverter":
        try:
            kind = ConverterKind(doc["kind"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConversionError(f"malformed converter document: {doc!r}") from exc
        params = tuple(doc.get("params", ()))
        if not all(isinstance(p, (int, float)) and not isinstance(p, bool) for p in params):
            raise ConversionError(f"converter params must be numeric: {params!r}")
        return cls(kind, params)


def converter_output_tag(conv: ValueConverter, input_tag: ValueTag) -> ValueTag:
    """Statically determine the output tag, rejecting illegal combinations.

    Legal casts are numeric<->numeric, anything->text, and same->same; this is
    what link validation enforces. Runtime text->numeric parsing exists in
    apply_converter but is not a legal link conversion.
    """
    kind = conv.kind
    if kind is ConverterKind.IDENTITY:
        return input_tag
    if kind in (ConverterKind.SCALE, ConverterKind.OFFSET):
        if input_tag not in _NUMERIC:
            raise ConversionError(f"{kind.value} requires a numeric input, got {input_tag.value}")
        if len(conv.params) != 1:
            raise ConversionError(f"{kind.value} takes exactly one parameter")
        return input_tag
    if kind is ConverterKind.BOOL_NEGATE:
        if input_tag is not ValueTag.BOOL:
            raise ConversionError(f"boolNegate requires bool input, got {input_tag.value}")
        return ValueTag.BOOL
    if kind is ConverterKind.CAST:
        target = conv.cast_target
        if target is input_tag or target is ValueTag.TEXT:
            return target
        if input_tag in _NUMERIC and target in _NUMERIC:
            return target
        raise ConversionError(f"illegal cast {input_tag.value} -> {target.value}")
    raise ConversionError(f"unknown converter kind {kind!r}")  # pragma: no cover


def _render_text(v: VariableValue) -> str:
    if v.tag is ValueTag.BOOL:
        return "true" if v.value else "false"
    return str(v.value)


def _cast(v: VariableValue, target: ValueTag) -> VariableValue:
    if v.tag is target:
        return v
    if target is ValueTag.TEXT:
        return VariableValue.text(_render_text(v))
    if v.tag is ValueTag.INT64 and target is ValueTag.FLOAT64:
        return VariableValue.float64(float(v.value))
    if v.tag is ValueTag.FLOAT64 and target is ValueTag.INT64:
        return VariableValue.int64(int(v.value))  # truncates toward zero
    if v.tag is ValueTag.TEXT and target in _NUMERIC:
        # Runtime-only convenience; link validation never allows this route.
        try:
            if target is ValueTag.INT64:
                return VariableValue.int64(int(v.value.strip()))
            return VariableValue.float64(float(v.value.strip()))
        except ValueError as exc:
            raise ConversionError(f"cannot parse {v.value!r} as {target.value}") from exc
    raise ConversionError(f"illegal cast {v.tag.value} -> {target.value}")


def apply_converter(conv: ValueConverter, v: VariableValue) -> VariableValue:
    """Apply one converter to one value; identity returns the value unchanged."""
    kind = conv.kind
    if kind is ConverterKind.IDENTITY:
        return v
    if kind is ConverterKind.CAST:
        return _cast(v, conv.cast_target)
    if kind in (ConverterKind.SCALE, ConverterKind.OFFSET):
        if v.tag not in _NUMERIC:
            raise ConversionError(f"{kind.value} requires a numeric value, got {v.tag.value}")
        if len(conv.params) != 1:
            raise ConversionError(f"{kind.value} takes exactly one parameter")
        p = float(conv.params[0])
        raw = v.value * p if kind is ConverterKind.SCALE else v.value + p
        if v.tag is ValueTag.INT64:
            return VariableValue.int64(round(raw))
        if not math.isfinite(raw):
            raise ConversionError(f"{kind.value} produced a non-finite result")
        return VariableValue.float64(float(raw))
    if kind is ConverterKind.BOOL_NEGATE:
        if v.tag is not ValueTag.BOOL:
            raise ConversionError(f"boolNegate requires bool, got {v.tag.value}")
        return VariableValue.bool_(not v.value)
    raise ConversionError(f"unknown converter kind {kind!r}")  # pragma: no cover
