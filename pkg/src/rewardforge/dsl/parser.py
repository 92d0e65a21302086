"""Recursive-descent parser for the reward DSL.

Grammar (see README for the full write-up):

    source   := term_block+ combine
    term     := "term" IDENT ["aspect" IDENT] "{" hyper* "expr" "=" expr ";" "}"
    hyper    := "hyper" IDENT "in" "[" snum "," snum "]" "default" snum ";"
    combine  := "combine" "=" NUMBER "*" IDENT ("+" NUMBER "*" IDENT)* ";"
    expr     := additive with the usual precedence; functions abs/exp/tanh/
                sqrt take one argument, min/max/pow take two, clip takes an
                expression plus two numeric bounds
    snum     := ["-"] NUMBER

Every numeric literal is normalised to its 9-significant-digit value at parse
time, which makes print_canonical followed by parse the identity map.
A literal "-" directly followed by a number folds into a negative constant;
"-(...)" stays a negation node.
"""

from __future__ import annotations

from ..errors import DslSyntaxError, DuplicateTermError, UnknownFeatureError
from .lexer import Token, lex
from .nodes import (ActionRef, Binary, Clip, Constant, EnvSignature, Expr,
                    HyperParam, HyperRef, RewardFunction, RewardTerm, StateRef,
                    Unary, UNARY_OPS)
from .printer import normalize_literal

_MAX_NESTING = 96  # parser recursion guard; the tree depth cap is checked after


class _Parser:
    def __init__(self, tokens: list[Token], signature: EnvSignature | None):
        self.tokens = tokens
        self.pos = 0
        self.signature = signature
        self.nesting = 0

    # -- token plumbing -----------------------------------------------------

    def peek(self) -> Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self) -> Token:
        t = self.peek()
        if t is None:
            last = self.tokens[-1] if self.tokens else Token("op", "", 1, 1)
            raise DslSyntaxError("unexpected end of input", last.line, last.column)
        self.pos += 1
        return t

    def expect(self, kind: str, lexeme: str | None = None) -> Token:
        t = self.next()
        if t.kind != kind or (lexeme is not None and t.lexeme != lexeme):
            want = lexeme if lexeme is not None else kind
            raise DslSyntaxError(f"expected {want!r}, found {t.lexeme!r}", t.line, t.column)
        return t

    def at(self, kind: str, lexeme: str | None = None) -> bool:
        t = self.peek()
        return (t is not None and t.kind == kind
                and (lexeme is None or t.lexeme == lexeme))

    # -- literals -----------------------------------------------------------

    def number(self) -> float:
        t = self.expect("number")
        try:
            value = float(t.lexeme)
        except ValueError:
            raise DslSyntaxError(f"bad numeric literal {t.lexeme!r}", t.line, t.column)
        if value in (float("inf"), float("-inf")):
            raise DslSyntaxError(f"literal {t.lexeme!r} overflows", t.line, t.column)
        return normalize_literal(value)

    def signed_number(self) -> float:
        if self.at("op", "-"):
            self.next()
            return -self.number()
        return self.number()

    # -- expressions ----------------------------------------------------------

    def expression(self) -> Expr:
        return self.additive()

    def additive(self) -> Expr:
        left = self.multiplicative()
        while self.at("op", "+") or self.at("op", "-"):
            op = "add" if self.next().lexeme == "+" else "sub"
            left = Binary(op, left, self.multiplicative())
        return left

    def multiplicative(self) -> Expr:
        left = self.unary()
        while self.at("op", "*") or self.at("op", "/"):
            op = "mul" if self.next().lexeme == "*" else "div"
            left = Binary(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        if self.at("op", "-"):
            t = self.next()
            if self.at("number"):
                return Constant(-self.number())
            self._push(t)
            child = self.unary()
            self._pop()
            return Unary("neg", child)
        return self.primary()

    def _push(self, t: Token) -> None:
        self.nesting += 1
        if self.nesting > _MAX_NESTING:
            raise DslSyntaxError("expression nested too deeply", t.line, t.column)

    def _pop(self) -> None:
        self.nesting -= 1

    def primary(self) -> Expr:
        t = self.peek()
        if t is None:
            raise DslSyntaxError("unexpected end of expression", 1, 1)
        if t.kind == "number":
            return Constant(self.number())
        if t.kind == "op" and t.lexeme == "(":
            self.next()
            self._push(t)
            inner = self.expression()
            self._pop()
            self.expect("op", ")")
            return inner
        if t.kind == "keyword" and t.lexeme in ("state", "action"):
            self.next()
            self.expect("op", ".")
            name_tok = self.next()
            if name_tok.kind != "ident":
                raise DslSyntaxError(
                    f"expected feature name after '{t.lexeme}.'", name_tok.line, name_tok.column)
            ref = StateRef(name_tok.lexeme) if t.lexeme == "state" else ActionRef(name_tok.lexeme)
            self._check_feature(ref, name_tok)
            return ref
        if t.kind == "keyword" and t.lexeme in UNARY_OPS:
            self.next()
            self.expect("op", "(")
            self._push(t)
            child = self.expression()
            self._pop()
            self.expect("op", ")")
            return Unary(t.lexeme, child)
        if t.kind == "keyword" and t.lexeme in ("min", "max", "pow"):
            self.next()
            self.expect("op", "(")
            self._push(t)
            left = self.expression()
            self.expect("op", ",")
            right = self.expression()
            self._pop()
            self.expect("op", ")")
            return Binary(t.lexeme, left, right)
        if t.kind == "keyword" and t.lexeme == "clip":
            self.next()
            self.expect("op", "(")
            self._push(t)
            child = self.expression()
            self._pop()
            self.expect("op", ",")
            lo = self.signed_number()
            self.expect("op", ",")
            hi = self.signed_number()
            self.expect("op", ")")
            if lo > hi:
                raise DslSyntaxError("clip bounds must satisfy lo <= hi", t.line, t.column)
            return Clip(child, lo, hi)
        if t.kind == "ident":
            self.next()
            return HyperRef(t.lexeme)
        raise DslSyntaxError(f"unexpected token {t.lexeme!r}", t.line, t.column)

    def _check_feature(self, ref: Expr, tok: Token) -> None:
        if self.signature is None:
            return
        if isinstance(ref, StateRef) and ref.name not in self.signature.state_names:
            raise UnknownFeatureError(f"state.{ref.name}", tok.line, tok.column)
        if isinstance(ref, ActionRef) and ref.name not in self.signature.action_names:
            raise UnknownFeatureError(f"action.{ref.name}", tok.line, tok.column)

    # -- declarations ---------------------------------------------------------

    def term_block(self) -> RewardTerm:
        self.expect("keyword", "term")
        name_tok = self.next()
        if name_tok.kind != "ident":
            raise DslSyntaxError("expected term name", name_tok.line, name_tok.column)
        aspect = name_tok.lexeme
        if self.at("keyword", "aspect"):
            self.next()
            tag_tok = self.next()
            if tag_tok.kind != "ident":
                raise DslSyntaxError("expected aspect tag", tag_tok.line, tag_tok.column)
            aspect = tag_tok.lexeme
        self.expect("op", "{")
        hypers: list[HyperParam] = []
        while self.at("keyword", "hyper"):
            self.next()
            h_tok = self.next()
            if h_tok.kind != "ident":
                raise DslSyntaxError("expected hyper name", h_tok.line, h_tok.column)
            self.expect("keyword", "in")
            self.expect("op", "[")
            lo = self.signed_number()
            self.expect("op", ",")
            hi = self.signed_number()
            self.expect("op", "]")
            self.expect("keyword", "default")
            default = self.signed_number()
            self.expect("op", ";")
            if not lo < hi:
                raise DslSyntaxError(
                    f"hyper {h_tok.lexeme!r}: bounds must satisfy lo < hi",
                    h_tok.line, h_tok.column)
            if not (lo <= default <= hi):
                raise DslSyntaxError(
                    f"hyper {h_tok.lexeme!r}: default outside bounds",
                    h_tok.line, h_tok.column)
            hypers.append(HyperParam(h_tok.lexeme, lo, hi, default))
        self.expect("keyword", "expr")
        self.expect("op", "=")
        body = self.expression()
        self.expect("op", ";")
        self.expect("op", "}")
        return RewardTerm(name_tok.lexeme, body, tuple(hypers), aspect)

    def combine(self, term_names: list[str]) -> dict[str, float]:
        self.expect("keyword", "combine")
        self.expect("op", "=")
        weights: dict[str, float] = {}
        while True:
            w = self.number()
            self.expect("op", "*")
            name_tok = self.next()
            if name_tok.kind != "ident":
                raise DslSyntaxError("expected term name in combine",
                                     name_tok.line, name_tok.column)
            if name_tok.lexeme not in term_names:
                raise DslSyntaxError(f"combine references unknown term {name_tok.lexeme!r}",
                                     name_tok.line, name_tok.column)
            if name_tok.lexeme in weights:
                raise DslSyntaxError(f"combine references term {name_tok.lexeme!r} twice",
                                     name_tok.line, name_tok.column)
            weights[name_tok.lexeme] = w
            if self.at("op", "+"):
                self.next()
                continue
            break
        self.expect("op", ";")
        return weights


def parse(source: str, signature: EnvSignature) -> RewardFunction:
    """Parse a full reward function and bind it to ``signature``."""
    tokens = lex(source)
    p = _Parser(tokens, signature)
    terms: list[RewardTerm] = []
    names_seen: set[str] = set()
    while p.at("keyword", "term"):
        t = p.term_block()
        if t.name in names_seen:
            raise DuplicateTermError(t.name)
        names_seen.add(t.name)
        terms.append(t)
    if not terms:
        tok = p.peek()
        line, col = (tok.line, tok.column) if tok else (1, 1)
        raise DslSyntaxError("expected at least one term block", line, col)
    weights_by_name = p.combine([t.name for t in terms])
    leftover = p.peek()
    if leftover is not None:
        raise DslSyntaxError(f"unexpected trailing token {leftover.lexeme!r}",
                             leftover.line, leftover.column)
    missing = [t.name for t in terms if t.name not in weights_by_name]
    if missing:
        raise DslSyntaxError(f"combine is missing terms: {', '.join(missing)}", 1, 1)
    weights = tuple(weights_by_name[t.name] for t in terms)
    if not any(w > 0.0 for w in weights):
        raise DslSyntaxError("at least one combine weight must be positive", 1, 1)
    return RewardFunction(tuple(terms), weights, signature)


def parse_term(source: str, signature: EnvSignature | None = None) -> RewardTerm:
    """Parse a single term block. With signature=None features are unchecked."""
    tokens = lex(source)
    p = _Parser(tokens, signature)
    term = p.term_block()
    leftover = p.peek()
    if leftover is not None:
        raise DslSyntaxError(f"unexpected trailing token {leftover.lexeme!r}",
                             leftover.line, leftover.column)
    return term


def parse_fragment(source: str) -> list[RewardTerm]:
    """Lenient structural parse used by the offline embedder.

    Accepts a full function, a run of term blocks, or a bare expression.
    Feature names are not checked against any signature.
    """
    tokens = lex(source)
    p = _Parser(tokens, None)
    if p.at("keyword", "term"):
        terms = []
        while p.at("keyword", "term"):
            terms.append(p.term_block())
        if p.at("keyword", "combine"):
            p.combine([t.name for t in terms])
        return terms
    body = p.expression()
    return [RewardTerm("fragment", body, _free_hypers(body), "fragment")]


def _free_hypers(body) -> tuple[HyperParam, ...]:
    from .nodes import hyper_refs
    names = sorted(hyper_refs(body))
    return tuple(HyperParam(n, 0.0, 1.0, 0.5) for n in names)
