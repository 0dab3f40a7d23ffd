"""Plain-text key/value documents used for env specs, pools, and run configs.

Format: one ``key = value`` per line. Values are numbers, booleans
(true/false), bare strings, or bracketed lists ``[a, b, [c, d]]`` which may
nest. Blank lines and lines starting with ``#`` are ignored.
"""

from __future__ import annotations

Value = object  # str | int | float | bool | list


class DocumentError(ValueError):
    """Malformed document text or an unusable key/value."""


def _parse_scalar(token: str):
    if token == "true":
        return True
    if token == "false":
        return False
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        pass
    return token


def _parse_list(text: str, line_no: int) -> list:
    # text includes the surrounding brackets
    root: list | None = None
    stack: list[list] = []
    current: list | None = None
    token = ""

    def flush():
        nonlocal token
        if token.strip():
            current.append(_parse_scalar(token.strip()))
        token = ""

    for ch in text:
        if ch == "[":
            new: list = []
            if current is not None:
                flush()
                current.append(new)
            else:
                root = new
            stack.append(new)
            current = new
        elif ch == "]":
            if current is None:
                raise DocumentError(f"line {line_no}: unbalanced ']'")
            flush()
            stack.pop()
            current = stack[-1] if stack else None
        elif ch == ",":
            if current is None:
                raise DocumentError(f"line {line_no}: ',' outside list")
            flush()
        else:
            token += ch
    if stack or current is not None:
        raise DocumentError(f"line {line_no}: unbalanced '['")
    if token.strip():
        raise DocumentError(f"line {line_no}: trailing text after list")
    return root if root is not None else []


def parse_document(text: str) -> dict[str, Value]:
    """Parse a document into an ordered key -> value mapping."""
    out: dict[str, Value] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DocumentError(f"line {line_no}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise DocumentError(f"line {line_no}: empty key")
        if key in out:
            raise DocumentError(f"line {line_no}: duplicate key {key!r}")
        if value.startswith("["):
            if not value.endswith("]"):
                raise DocumentError(f"line {line_no}: list value must close on the same line")
            out[key] = _parse_list(value, line_no)
        elif value == "":
            raise DocumentError(f"line {line_no}: empty value for {key!r}")
        elif any(ch in value for ch in "[],"):
            raise DocumentError(f"line {line_no}: stray list punctuation in scalar value")
        else:
            out[key] = _parse_scalar(value)
    return out


def _format_value(value: Value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    return str(value)


def format_document(mapping: dict[str, Value]) -> str:
    """Inverse of parse_document, one key per line, insertion order."""
    return "".join(f"{key} = {_format_value(value)}\n" for key, value in mapping.items())
