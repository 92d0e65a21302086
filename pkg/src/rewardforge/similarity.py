"""Textual and semantic similarity between reward sources.

Textual similarity works on canonical token streams: identifiers are renamed
to positional placeholders so two sources that differ only in naming compare
as identical, numbers are rounded to 6 significant digits so jittered
constants stay close, and similarity is one minus the normalised token-level
Levenshtein distance.

Semantic similarity is cosine over embedding vectors, affinely mapped from
[-1, 1] onto [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsl.lexer import lex, merge_feature_refs
from .errors import DimensionMismatchError, ZeroVectorError


@dataclass(frozen=True)
class TokenStream:
    """Canonicalised token sequence: tuple of (kind, lexeme) pairs."""

    tokens: tuple[tuple[str, str], ...]

    def __len__(self) -> int:
        return len(self.tokens)


def tokenize_canonical(source: str) -> TokenStream:
    """Lex DSL text into a renaming-invariant token stream.

    Identifiers are replaced by v0, v1, ... in first-occurrence order.
    Feature references are merged into single tokens ("state.v") and kept
    verbatim: they name environment quantities, not renameable variables.
    Number lexemes are rounded to 6 significant digits.
    """
    raw = merge_feature_refs(lex(source))
    rename: dict[str, str] = {}
    out: list[tuple[str, str]] = []
    for tok in raw:
        if tok.kind == "ident" and "." not in tok.lexeme:
            if tok.lexeme not in rename:
                rename[tok.lexeme] = f"v{len(rename)}"
            out.append(("ident", rename[tok.lexeme]))
        elif tok.kind == "number":
            out.append(("number", format(float(tok.lexeme), ".6g")))
        else:
            out.append((tok.kind, tok.lexeme))
    return TokenStream(tuple(out))


def levenshtein(a: TokenStream, b: TokenStream) -> int:
    """Token-level edit distance with unit insert/delete/substitute costs."""
    xs, ys = a.tokens, b.tokens
    if len(xs) < len(ys):
        xs, ys = ys, xs
    m = len(ys)
    if m == 0:
        return len(xs)
    prev = list(range(m + 1))
    for i, x in enumerate(xs, start=1):
        cur = [i] + [0] * m
        for j in range(1, m + 1):
            cost = 0 if x == ys[j - 1] else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev = cur
    return prev[m]


def textual_similarity(a: TokenStream, b: TokenStream) -> float:
    """1 - lev/max(len); two empty streams are perfectly similar."""
    la, lb = len(a), len(b)
    if la == 0 and lb == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / max(la, lb)


@dataclass(frozen=True)
class EmbeddingVector:
    """Float vector plus the id of the provider that produced it.

    Vectors from different providers live in unrelated spaces and are never
    compared.
    """

    values: tuple[float, ...]
    provider_id: str

    def __post_init__(self):
        if len(self.values) == 0:
            raise ZeroVectorError("embedding must have at least one dimension")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.provider_id != b.provider_id:
        raise DimensionMismatchError(
            f"cannot compare embeddings from providers "
            f"{a.provider_id!r} and {b.provider_id!r}")
    va, vb = a.as_array(), b.as_array()
    if va.shape != vb.shape:
        raise DimensionMismatchError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise ZeroVectorError("cosine undefined for a zero vector")
    return float(np.dot(va, vb) / (na * nb))


def semantic_similarity(source_a: str, source_b: str, provider) -> float:
    """Embed both sources with ``provider`` and map cosine onto [0, 1]."""
    ea = provider.embed(source_a)
    eb = provider.embed(source_b)
    return cosine_to_unit(cosine(ea, eb))


def cosine_to_unit(c: float) -> float:
    """(cos + 1) / 2, clamped against float round-off."""
    return min(1.0, max(0.0, (c + 1.0) / 2.0))
