"""Signature and assertion conversion from a typed source language to Python.

The supported source grammar is deliberately narrow: method headers with
modifiers and typed parameters, and JUnit-style equality/truth assertions
whose expected side is a literal (or array of literals) and whose actual
side is a call expression.  Anything outside the fragment raises and is
dropped upstream -- precision beats recall for training data.
"""

from __future__ import annotations

import re

MODIFIERS = {
    "public",
    "private",
    "protected",
    "static",
    "final",
    "abstract",
    "synchronized",
    "native",
    "strictfp",
    "default",
    "transient",
    "volatile",
}

_IDENT = r"[A-Za-z_$][A-Za-z0-9_$]*"
_NUMBER_RE = re.compile(r"[+-]?(0[xX][0-9a-fA-F_]+|\d[\d_]*\.?[\d_]*([eE][+-]?\d+)?|\.\d[\d_]*)[lLfFdD]?")
_CALL_RE = re.compile(rf"({_IDENT})\s*\((.*)\)\s*$", re.DOTALL)


class ConversionError(ValueError):
    """Input is outside the supported source-language fragment."""


def _split_top_level(text: str, separator: str = ",") -> list[str]:
    """Split on separators not nested in (), [], {}, <> or string/char literals."""
    parts, depth, angle, current = [], 0, 0, []
    quote = None
    i = 0
    while i < len(text):
        ch = text[i]
        if quote:
            current.append(ch)
            if ch == "\\" and i + 1 < len(text):
                current.append(text[i + 1])
                i += 2
                continue
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
            current.append(ch)
        elif ch in "([{":
            depth += 1
            current.append(ch)
        elif ch in ")]}":
            depth -= 1
            current.append(ch)
        elif ch == "<":
            angle += 1
            current.append(ch)
        elif ch == ">" and angle > 0:
            angle -= 1
            current.append(ch)
        elif ch == separator and depth == 0 and angle == 0:
            parts.append("".join(current).strip())
            current = []
        else:
            current.append(ch)
        i += 1
    tail = "".join(current).strip()
    if tail:
        parts.append(tail)
    return parts


# -- signatures --------------------------------------------------------------


def convert_signature(source_signature: str) -> str:
    """Strip modifiers and types from a source method header.

    ``public static int max(int a, int b)`` becomes ``def max(a, b):``.
    """
    sig = source_signature.strip().rstrip("{").strip()
    sig = re.sub(r"^@\w+(\([^)]*\))?\s*", "", sig)
    if sig.endswith(";"):
        sig = sig[:-1].rstrip()
    m = re.match(rf"^(.*?)({_IDENT})\s*\((.*)\)\s*(throws\s+.*)?$", sig, re.DOTALL)
    if not m:
        raise ConversionError(f"cannot parse method header: {source_signature!r}")
    head, name, params_text = m.group(1), m.group(2), m.group(3)
    head_tokens = head.replace("<", " <").split()
    # everything before the name must be modifiers, annotations, type tokens
    for token in head_tokens:
        if not (
            token in MODIFIERS
            or token.startswith("@")
            or re.match(rf"^[\w$<>,\[\].?]+$", token)
        ):
            raise ConversionError(f"unsupported header token {token!r} in {source_signature!r}")
    if not head_tokens:
        raise ConversionError(f"missing return type in {source_signature!r}")
    names = []
    for param in _split_top_level(params_text):
        if not param:
            continue
        param = re.sub(r"^final\s+", "", param)
        param = re.sub(r"^@\w+(\([^)]*\))?\s*", "", param)
        pm = re.match(rf"^(.+?)(?:\.\.\.)?\s+({_IDENT})(\[\s*\])*$", param, re.DOTALL)
        if not pm:
            raise ConversionError(f"cannot parse parameter {param!r}")
        names.append(pm.group(2))
    if len(set(names)) != len(names):
        raise ConversionError(f"duplicate parameter names in {source_signature!r}")
    return f"def {name}({', '.join(names)}):"


# -- literals and expressions -------------------------------------------------


def convert_literal(text: str) -> str:
    """Map one source literal onto its Python spelling."""
    text = text.strip()
    if text in ("true", "false"):
        return "True" if text == "true" else "False"
    if text == "null":
        return "None"
    if text.startswith('"') and text.endswith('"') and len(text) >= 2:
        return text  # string escapes carry over as written
    if text.startswith("'") and text.endswith("'") and len(text) >= 2:
        inner = text[1:-1]
        if inner.startswith("\\") or len(inner) == 1:
            return f'"{inner}"' if inner != '"' else "'\"'"
        raise ConversionError(f"invalid char literal {text!r}")
    m = _NUMBER_RE.fullmatch(text)
    if m:
        cleaned = text.replace("_", "")
        if cleaned[-1] in "lLfFdD" and not cleaned.lower().startswith("0x"):
            cleaned = cleaned[:-1]
        elif cleaned[-1] in "lL":
            cleaned = cleaned[:-1]
        return cleaned
    if (text.startswith("new ") and "{" in text) or text.startswith("{"):
        body = text[text.index("{") + 1 : text.rindex("}")]
        elements = [convert_expression(e) for e in _split_top_level(body)] if body.strip() else []
        return "[" + ", ".join(elements) + "]"
    raise ConversionError(f"unsupported literal {text!r}")


def convert_expression(text: str) -> str:
    """Literal, array of literals, or a (recursively converted) call."""
    text = text.strip()
    call = _CALL_RE.fullmatch(text)
    if call and call.group(1) not in ("new",):
        name, args_text = call.group(1), call.group(2)
        args = [convert_expression(a) for a in _split_top_level(args_text)] if args_text.strip() else []
        return f"{name}({', '.join(args)})"
    return convert_literal(text)


# -- assertions ---------------------------------------------------------------


def _is_call(text: str) -> bool:
    m = _CALL_RE.fullmatch(text.strip())
    return bool(m and m.group(1) != "new")


def expected_value_text(source_assertion: str) -> str:
    """Normalized expected-value spelling, used by the same-outcome filter."""
    kind, expected, _ = _parse_assertion(source_assertion)
    if kind == "truth":
        return expected
    return convert_expression(expected)


def _parse_assertion(source_assertion: str) -> tuple[str, str, str]:
    """Returns (kind, expected, call) with kind in {equality, truth}."""
    text = source_assertion.strip().rstrip(";").strip()
    m = re.match(rf"^(assertEquals|assertTrue|assertFalse)\s*\((.*)\)$", text, re.DOTALL)
    if not m:
        raise ConversionError(f"unsupported assertion pattern: {source_assertion!r}")
    kind, args_text = m.group(1), m.group(2)
    args = _split_top_level(args_text)
    if kind == "assertEquals":
        if len(args) == 3 and args[0].startswith('"'):
            args = args[1:]  # leading message argument
        if len(args) == 3:
            raise ConversionError(f"delta-comparison assertions unsupported: {source_assertion!r}")
        if len(args) != 2:
            raise ConversionError(f"expected two arguments: {source_assertion!r}")
        expected, actual = args
        if not _is_call(actual):
            if _is_call(expected):  # tolerate swapped argument order
                expected, actual = actual, expected
            else:
                raise ConversionError(f"actual side is not a call: {source_assertion!r}")
        return "equality", expected, actual
    if len(args) != 1 or not _is_call(args[0]):
        raise ConversionError(f"truth assertion must wrap a call: {source_assertion!r}")
    return "truth", ("True" if kind == "assertTrue" else "False"), args[0]


def _is_float_literal(text: str) -> bool:
    return bool(re.fullmatch(r"[+-]?(\d+\.\d*|\.\d+|\d+[eE][+-]?\d+|\d+\.\d*[eE][+-]?\d+)", text))


def convert_assertion(source_assertion: str, float_tolerance: float | None = None) -> str:
    """Render one source assertion as a target-language assert statement.

    Expected values compare with an exact ``==`` by default; passing
    ``float_tolerance`` switches float expectations to an absolute-difference
    comparison instead.
    """
    kind, expected, call = _parse_assertion(source_assertion)
    call_text = convert_expression(call)
    if kind == "truth":
        return f"assert {call_text} == {expected}"
    expected_text = convert_expression(expected)
    if float_tolerance is not None and _is_float_literal(expected_text):
        return f"assert abs({call_text} - {expected_text}) <= {float_tolerance!r}"
    return f"assert {call_text} == {expected_text}"
