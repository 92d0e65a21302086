"""Tokenizer for the reward DSL.

Shared between the parser and the similarity layer so both see the exact
same token boundaries. Emits (kind, lexeme, line, column) tuples with kinds
ident / number / op / keyword.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import LexError

# Grammar keywords. Function names are keywords too: they can never be
# shadowed by hyperparameter names.
FRAME_KEYWORDS = frozenset({
    "term", "aspect", "hyper", "in", "default", "expr", "combine",
    "state", "action",
})
FUNC_KEYWORDS = frozenset({"abs", "exp", "tanh", "sqrt", "min", "max", "pow", "clip"})
KEYWORDS = FRAME_KEYWORDS | FUNC_KEYWORDS

_OP_CHARS = "{}[]();,=+-*/."

_DIGITS = "0123456789"
_IDENT_START = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_"
_IDENT_BODY = _IDENT_START + _DIGITS


@dataclass(frozen=True)
class Token:
    kind: str     # ident | number | op | keyword
    lexeme: str
    line: int
    column: int


def lex(source: str) -> list[Token]:
    """Tokenize DSL text. Raises LexError on characters outside the grammar."""
    tokens: list[Token] = []
    i = 0
    line = 1
    col = 1
    n = len(source)
    while i < n:
        ch = source[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        start_line, start_col = line, col
        if ch in _IDENT_START:
            j = i
            while j < n and source[j] in _IDENT_BODY:
                j += 1
            word = source[i:j]
            kind = "keyword" if word in KEYWORDS else "ident"
            tokens.append(Token(kind, word, start_line, start_col))
            col += j - i
            i = j
            continue
        if ch in _DIGITS:
            j = i
            while j < n and source[j] in _DIGITS:
                j += 1
            if j < n and source[j] == "." and j + 1 < n and source[j + 1] in _DIGITS:
                j += 1
                while j < n and source[j] in _DIGITS:
                    j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k] in _DIGITS:
                    j = k
                    while j < n and source[j] in _DIGITS:
                        j += 1
            text = source[i:j]
            tokens.append(Token("number", text, start_line, start_col))
            col += j - i
            i = j
            continue
        if ch in _OP_CHARS:
            tokens.append(Token("op", ch, start_line, start_col))
            i += 1
            col += 1
            continue
        raise LexError(f"unexpected character {ch!r}", line, col)
    return tokens


def merge_feature_refs(tokens: list[Token]) -> list[Token]:
    """Collapse ``state . name`` / ``action . name`` into one ident token.

    The merged lexeme is e.g. "state.v". Used by the similarity layer, where
    a feature reference is one unit of code, and by the embedder.
    """
    out: list[Token] = []
    i = 0
    n = len(tokens)
    while i < n:
        t = tokens[i]
        if (t.kind == "keyword" and t.lexeme in ("state", "action")
                and i + 2 < n
                and tokens[i + 1].kind == "op" and tokens[i + 1].lexeme == "."
                and tokens[i + 2].kind in ("ident", "keyword")):
            name = tokens[i + 2].lexeme
            out.append(Token("ident", f"{t.lexeme}.{name}", t.line, t.column))
            i += 3
            continue
        out.append(t)
        i += 1
    return out
