"""
Reader for ISO 10303-21 (STEP physical file) encodings of IFC models.

Only the DATA section is interpreted. Each ``#id=TYPE(args);`` record becomes
an :class:`EntityInstance` whose attributes are plain Python values:

    $            -> NULL
    *            -> DERIVED
    12           -> int
    1.5, 1.      -> float
    'text'       -> str (ISO escapes decoded)
    .ENUM.       -> Enum("ENUM")
    #12          -> Ref(12)
    (a, b)       -> tuple
    IFCLABEL(x)  -> Typed("IFCLABEL", x)

No EXPRESS schema is embedded, so queries match entity names exactly and
subtypes are never expanded.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Any, Iterable, Iterator, List, Mapping, Tuple, Union

MAX_NESTING = 32


class StepError(Exception):
    """Base class for STEP read errors."""


class StepSyntaxError(StepError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} at line {line}, column {column}")
        self.line = line
        self.column = column


class UnterminatedString(StepSyntaxError):
    pass


class UnterminatedComment(StepSyntaxError):
    pass


class InvalidCharacter(StepSyntaxError):
    pass


class DuplicateId(StepError):
    def __init__(self, instance_id: int):
        super().__init__(f"duplicate instance id #{instance_id}")
        self.id = instance_id


class MalformedRecord(StepError):
    def __init__(self, line: int, reason: str = ""):
        msg = f"malformed record at line {line}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)
        self.line = line


class MissingDataSection(StepError):
    def __init__(self):
        super().__init__("no DATA section found")


# ---------------------------------------------------------------------------
# Attribute values
# ---------------------------------------------------------------------------

class _Marker:
    __slots__ = ("_text",)

    def __init__(self, text: str):
        self._text = text

    def __repr__(self) -> str:
        return self._text

    def __reduce__(self):
        return (_marker, (self._text,))


def _marker(text: str) -> "_Marker":
    return NULL if text == "$" else DERIVED


NULL = _Marker("$")
DERIVED = _Marker("*")


@dataclass(frozen=True)
class Ref:
    id: int

    def __post_init__(self):
        if self.id <= 0:
            raise ValueError(f"reference id must be positive, got {self.id}")

    def __repr__(self) -> str:
        return f"#{self.id}"


@dataclass(frozen=True)
class Enum:
    name: str

    def __repr__(self) -> str:
        return f".{self.name}."


@dataclass(frozen=True)
class Typed:
    type_name: str
    value: Any


@dataclass(frozen=True)
class Binary:
    """A ``"..."`` binary literal; ``hex`` keeps the leading unused-bits digit."""
    hex: str


AttributeValue = Union[_Marker, int, float, str, Enum, Ref, Typed, Binary, tuple]


def as_real(value: Any) -> float:
    """Widen an integer attribute to a real; exporters write ``0`` for ``0.``."""
    if isinstance(value, Typed):
        value = value.value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TypeError(f"expected a numeric attribute, got {value!r}")
    return float(value)


@dataclass(frozen=True)
class EntityInstance:
    id: int
    type_name: str
    attributes: Tuple[Any, ...]


@dataclass(frozen=True)
class StepModel:
    instances: Mapping[int, EntityInstance]
    header: str = ""
    _by_type: Mapping[str, Tuple[EntityInstance, ...]] = field(
        default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        instances = dict(sorted(self.instances.items()))
        by_type: dict = {}
        for inst in instances.values():
            by_type.setdefault(inst.type_name, []).append(inst)
        object.__setattr__(self, "instances", MappingProxyType(instances))
        object.__setattr__(
            self, "_by_type",
            MappingProxyType({k: tuple(v) for k, v in by_type.items()}))

    def __len__(self) -> int:
        return len(self.instances)

    def __getitem__(self, instance_id: int) -> EntityInstance:
        return self.instances[instance_id]

    def __contains__(self, instance_id: object) -> bool:
        return instance_id in self.instances

    def by_type(self, type_name: str) -> List[EntityInstance]:
        return instances_of_type(self, type_name)


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Token:
    kind: str
    value: Any
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)
    offset: int = field(default=0, compare=False)

    def __repr__(self) -> str:
        return f"Token({self.kind}, {self.value!r})"


_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<comment>/\*.*?\*/)
  | (?P<ref>\#[0-9]+)
  | (?P<real>[+-]?[0-9]+\.[0-9]*(?:[eE][+-]?[0-9]+)?)
  | (?P<integer>[+-]?[0-9]+)
  | (?P<string>'(?:[^']|'')*')
  | (?P<enum>\.[A-Za-z_][A-Za-z0-9_]*\.)
  | (?P<binary>"[0-9A-Fa-f]*")
  | (?P<keyword>!?[A-Za-z_][A-Za-z0-9_]*(?:-[A-Za-z0-9_]+)*)
  | (?P<punct>[()=,;$*])
""", re.VERBOSE | re.DOTALL)


def _decode_string(raw: str, line: int, column: int) -> str:
    """Apply ISO 10303-21 string escapes to the body of a quoted string."""
    body = raw.replace("''", "'")
    if "\\" not in body:
        return body
    out = []
    i = 0
    n = len(body)
    try:
        while i < n:
            ch = body[i]
            if ch != "\\":
                out.append(ch)
                i += 1
                continue
            if body.startswith("\\\\", i):
                out.append("\\")
                i += 2
            elif body.startswith("\\X2\\", i):
                end = body.index("\\X0\\", i + 4)
                hexs = body[i + 4:end]
                data = bytes.fromhex(hexs)
                out.append(data.decode("utf-16-be"))
                i = end + 4
            elif body.startswith("\\X4\\", i):
                end = body.index("\\X0\\", i + 4)
                hexs = body[i + 4:end]
                out.append(bytes.fromhex(hexs).decode("utf-32-be"))
                i = end + 4
            elif body.startswith("\\X\\", i):
                out.append(chr(int(body[i + 3:i + 5], 16)))
                i += 5
            elif body.startswith("\\S\\", i):
                out.append(chr(ord(body[i + 3]) + 128))
                i += 4
            elif body.startswith("\\P", i) and i + 3 < n and body[i + 3] == "\\":
                # code page switch; \S\ assumes ISO 8859-1 regardless
                i += 4
            else:
                out.append(ch)
                i += 1
    except (ValueError, IndexError, UnicodeDecodeError) as exc:
        raise UnterminatedString(f"bad escape in string ({exc})", line, column) from None
    return "".join(out)


def tokenize(text: str) -> Iterator[Token]:
    """Yield tokens of a STEP file; comments and whitespace are dropped."""
    pos = 0
    line = 1
    line_start = 0
    n = len(text)
    match = _TOKEN_RE.match
    while pos < n:
        m = match(text, pos)
        column = pos - line_start + 1
        if m is None:
            ch = text[pos]
            if ch == "'":
                raise UnterminatedString("unterminated string", line, column)
            if text.startswith("/*", pos):
                raise UnterminatedComment("unterminated comment", line, column)
            raise InvalidCharacter(f"invalid character {ch!r}", line, column)
        kind = m.lastgroup
        raw = m.group()
        if kind == "ws" or kind == "comment":
            pass
        elif kind == "ref":
            yield Token("ref", int(raw[1:]), line, column, pos)
        elif kind == "real":
            yield Token("real", float(raw), line, column, pos)
        elif kind == "integer":
            yield Token("integer", int(raw), line, column, pos)
        elif kind == "string":
            yield Token("string", _decode_string(raw[1:-1], line, column), line, column, pos)
        elif kind == "enum":
            yield Token("enum", raw[1:-1].upper(), line, column, pos)
        elif kind == "binary":
            yield Token("binary", raw[1:-1].upper(), line, column, pos)
        elif kind == "keyword":
            yield Token("keyword", raw.upper(), line, column, pos)
        else:
            yield Token(raw, raw, line, column, pos)
        newlines = raw.count("\n")
        if newlines:
            line += newlines
            line_start = pos + raw.rfind("\n") + 1
        pos = m.end()


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

class _Cursor:
    __slots__ = ("tokens", "i")

    def __init__(self, tokens: List[Token]):
        self.tokens = tokens
        self.i = 0

    def peek(self) -> Token | None:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def next(self, line: int) -> Token:
        if self.i >= len(self.tokens):
            raise MalformedRecord(line, "unexpected end of input")
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind: str, line: int) -> Token:
        tok = self.next(line)
        if tok.kind != kind:
            raise MalformedRecord(tok.line or line, f"expected {kind!r}, got {tok.value!r}")
        return tok


def _parse_list(cur: _Cursor, line: int, depth: int) -> tuple:
    """Parse ``( value, value, ... )``; the opening parenthesis is already consumed."""
    if depth > MAX_NESTING:
        raise MalformedRecord(line, f"nesting deeper than {MAX_NESTING}")
    items = []
    tok = cur.peek()
    if tok is not None and tok.kind == ")":
        cur.i += 1
        return ()
    while True:
        items.append(_parse_value(cur, line, depth))
        tok = cur.next(line)
        if tok.kind == ")":
            return tuple(items)
        if tok.kind != ",":
            raise MalformedRecord(tok.line, f"expected ',' or ')', got {tok.value!r}")


def _parse_value(cur: _Cursor, line: int, depth: int) -> Any:
    tok = cur.next(line)
    kind = tok.kind
    if kind == "$":
        return NULL
    if kind == "*":
        return DERIVED
    if kind in ("integer", "real", "string"):
        return tok.value
    if kind == "ref":
        if tok.value <= 0:
            raise MalformedRecord(tok.line, "reference id must be positive")
        return Ref(tok.value)
    if kind == "enum":
        return Enum(tok.value)
    if kind == "binary":
        return Binary(tok.value)
    if kind == "(":
        return _parse_list(cur, tok.line, depth + 1)
    if kind == "keyword":
        cur.expect("(", tok.line)
        inner = _parse_list(cur, tok.line, depth + 1)
        if len(inner) != 1:
            raise MalformedRecord(tok.line, f"typed value {tok.value} needs one argument")
        return Typed(tok.value, inner[0])
    raise MalformedRecord(tok.line, f"unexpected token {tok.value!r}")


def _parse_record(cur: _Cursor) -> EntityInstance:
    head = cur.next(0)
    line = head.line
    if head.kind != "ref":
        raise MalformedRecord(line, f"expected instance id, got {head.value!r}")
    if head.value <= 0:
        raise MalformedRecord(line, "instance id must be positive")
    cur.expect("=", line)
    name = cur.next(line)
    if name.kind != "keyword":
        # complex (multi-leaf) instances are not used by IFC exporters
        raise MalformedRecord(line, f"expected entity name, got {name.value!r}")
    cur.expect("(", line)
    attributes = _parse_list(cur, line, 0)
    cur.expect(";", line)
    return EntityInstance(head.value, name.value, attributes)


def _is_section(tokens: List[Token], i: int, name: str) -> bool:
    return (tokens[i].kind == "keyword" and tokens[i].value == name
            and i + 1 < len(tokens) and tokens[i + 1].kind in (";", "("))


def _skip_section_header(cur: _Cursor) -> None:
    # DATA; or DATA('name', (schemas));
    tok = cur.next(0)
    if tok.kind == "(":
        _parse_list(cur, tok.line, 1)
        tok = cur.next(tok.line)
    if tok.kind != ";":
        raise MalformedRecord(tok.line, "expected ';' after DATA")


def parse_data_section(tokens: Iterable[Token], header: str = "") -> StepModel:
    """Build a StepModel from the records of every DATA section in ``tokens``."""
    tokens = list(tokens)
    cur = _Cursor(tokens)
    instances: dict = {}
    found = False
    n = len(tokens)
    while cur.i < n:
        if _is_section(tokens, cur.i, "DATA"):
            found = True
            cur.i += 1
            _skip_section_header(cur)
            while True:
                tok = cur.peek()
                if tok is None:
                    raise MalformedRecord(tokens[-1].line, "DATA section not closed by ENDSEC")
                if tok.kind == "keyword" and tok.value == "ENDSEC":
                    cur.i += 1
                    cur.expect(";", tok.line)
                    break
                inst = _parse_record(cur)
                if inst.id in instances:
                    raise DuplicateId(inst.id)
                instances[inst.id] = inst
        else:
            cur.i += 1
    if not found:
        raise MissingDataSection()
    return StepModel(instances, header)


def _header_text(text: str, tokens: List[Token]) -> str:
    start = end = None
    for i, tok in enumerate(tokens):
        if start is None and _is_section(tokens, i, "HEADER"):
            start = tokens[i + 1].offset + 1
        elif start is not None and tok.kind == "keyword" and tok.value == "ENDSEC":
            end = tok.offset
            break
    if start is None or end is None:
        return ""
    return text[start:end].strip()


def parse(text: str) -> StepModel:
    tokens = list(tokenize(text))
    return parse_data_section(tokens, _header_text(text, tokens))


def read_text(path: Union[str, Path]) -> str:
    raw = Path(path).read_bytes()
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError:
        return raw.decode("latin-1")


def load(path: Union[str, Path]) -> StepModel:
    return parse(read_text(path))


def instances_of_type(model: StepModel, type_name: str) -> List[EntityInstance]:
    """Instances whose entity name equals ``type_name`` (case-insensitive), by ascending id."""
    return list(model._by_type.get(type_name.upper(), ()))


def iter_refs(value: Any) -> Iterator[int]:
    """Depth-first reference ids inside an attribute value."""
    if isinstance(value, Ref):
        yield value.id
    elif isinstance(value, tuple):
        for item in value:
            yield from iter_refs(item)
    elif isinstance(value, Typed):
        yield from iter_refs(value.value)


def validate_references(model: StepModel) -> List[Tuple[int, int]]:
    """Every (referencing id, missing id) pair; empty means the graph is closed."""
    dangling = []
    for inst in model.instances.values():
        for ref in iter_refs(inst.attributes):
            if ref not in model.instances:
                dangling.append((inst.id, ref))
    return dangling


# ---------------------------------------------------------------------------
# Canonical serialization
# ---------------------------------------------------------------------------

def _format_real(x: float) -> str:
    if x != x or x in (float("inf"), float("-inf")):
        raise ValueError("STEP reals must be finite")
    text = repr(float(x)).upper()
    mantissa, _, exponent = text.partition("E")
    if "." not in mantissa:
        mantissa += "."
    return mantissa + ("E" + exponent if exponent else "")


def _encode_string(s: str) -> str:
    out = []
    for ch in s:
        code = ord(ch)
        if ch == "'":
            out.append("''")
        elif ch == "\\":
            out.append("\\\\")
        elif 32 <= code < 127:
            out.append(ch)
        elif code <= 0xFFFF:
            out.append("\\X2\\%04X\\X0\\" % code)
        else:
            out.append("\\X4\\%08X\\X0\\" % code)
    return "'" + "".join(out) + "'"


def format_value(value: Any) -> str:
    if value is NULL:
        return "$"
    if value is DERIVED:
        return "*"
    if isinstance(value, bool):
        raise TypeError("booleans are written as enums (.T./.F.)")
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return _format_real(value)
    if isinstance(value, str):
        return _encode_string(value)
    if isinstance(value, Ref):
        return f"#{value.id}"
    if isinstance(value, Enum):
        return f".{value.name}."
    if isinstance(value, Binary):
        return f'"{value.hex}"'
    if isinstance(value, Typed):
        return f"{value.type_name}({format_value(value.value)})"
    if isinstance(value, tuple):
        return "(" + ",".join(format_value(v) for v in value) + ")"
    raise TypeError(f"cannot serialize {value!r}")


def format_record(inst: EntityInstance) -> str:
    return f"#{inst.id}={inst.type_name}{format_value(tuple(inst.attributes))};"


def format_model(model: StepModel, schema: str = "IFC2X3") -> str:
    """A minimal complete STEP file containing ``model``'s records."""
    header = model.header or (
        "FILE_DESCRIPTION((''),'2;1');\n"
        "FILE_NAME('','',(''),(''),'','','');\n"
        f"FILE_SCHEMA(('{schema}'));"
    )
    lines = ["ISO-10303-21;", "HEADER;", header, "ENDSEC;", "DATA;"]
    lines.extend(format_record(inst) for inst in model.instances.values())
    lines.extend(["ENDSEC;", "END-ISO-10303-21;", ""])
    return "\n".join(lines)
