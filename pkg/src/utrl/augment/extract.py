"""Function-level extraction from a strongly-typed source corpus.

Scans ``.java`` files for documentation comments followed by a method
header, captures the brace-balanced body, and filters by description
language and length.  The English detector is pluggable; the shipped
default is a stop-word-ratio heuristic.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path

log = logging.getLogger(__name__)

_DOC_METHOD_RE = re.compile(
    r"/\*\*(?P<doc>.*?)\*/\s*(?P<header>[^;{}/]+?)\s*\{",
    re.DOTALL,
)

_STOP_WORDS = frozenset(
    """a an and are as at be but by for from had has have if in into is it its of
    on or not no that the this to was were will with you your we they he she""".split()
)

DEFAULT_MIN_TOKENS = 10
DEFAULT_MAX_TOKENS = 512


@dataclass
class SourceFunction:
    description: str
    signature: str
    code: str
    origin: str

    def __post_init__(self) -> None:
        if not self.description.strip() or not self.code.strip():
            raise ValueError("description and code must be non-empty")


def default_english_detector(text: str, threshold: float = 0.12) -> bool:
    """Stop-word-ratio heuristic; swap in a real detector via the parameter."""
    words = re.findall(r"[a-zA-Z']+", text.lower())
    if not words:
        return False
    hits = sum(1 for w in words if w in _STOP_WORDS)
    return hits / len(words) >= threshold


def _clean_doc(doc: str) -> str:
    lines = []
    for line in doc.split("\n"):
        line = line.strip()
        if line.startswith("*"):
            line = line[1:].strip()
        if line:
            lines.append(line)
    return " ".join(lines)


def _balanced_body(text: str, open_index: int) -> str | None:
    """Return the brace-balanced block starting at ``open_index`` ('{')."""
    depth = 0
    in_string = None
    i = open_index
    while i < len(text):
        ch = text[i]
        if in_string:
            if ch == "\\":
                i += 2
                continue
            if ch == in_string:
                in_string = None
        elif ch in "\"'":
            in_string = ch
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[open_index : i + 1]
        i += 1
    return None


def extract_functions(
    corpus_root,
    min_tokens: int = DEFAULT_MIN_TOKENS,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    english_detector=None,
) -> list[SourceFunction]:
    """Walk the corpus and return documented, filtered source functions."""
    detector = english_detector or default_english_detector
    root = Path(corpus_root)
    functions: list[SourceFunction] = []
    skipped_files = 0
    for path in sorted(root.rglob("*.java")):
        try:
            text = path.read_text(encoding="utf-8", errors="replace")
        except OSError as exc:
            skipped_files += 1
            log.warning("unreadable file %s: %s", path, exc)
            continue
        for match in _DOC_METHOD_RE.finditer(text):
            header = " ".join(match.group("header").split())
            if "(" not in header or header.startswith(("class ", "interface ", "enum ")):
                continue
            description = _clean_doc(match.group("doc"))
            if not description:
                continue
            token_count = len(description.split())
            if not min_tokens <= token_count <= max_tokens:
                continue
            if not detector(description):
                continue
            open_index = match.end() - 1
            body = _balanced_body(text, open_index)
            if body is None:
                continue
            functions.append(
                SourceFunction(
                    description=description,
                    signature=header,
                    code=f"{header} {body}",
                    origin=str(path),
                )
            )
    if skipped_files:
        log.warning("skipped %d unreadable files", skipped_files)
    return functions
