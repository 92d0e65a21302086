"""Closed reward expression language: nodes, parser, printer, evaluator."""

from .nodes import (ActionRef, Binary, Clip, Constant, EnvSignature, Expr,
                    HyperParam, HyperRef, MAX_DEPTH, RewardFunction,
                    RewardTerm, StateRef, Unary, depth, hyper_refs, node_kinds)
from .lexer import Token, lex, merge_feature_refs, FRAME_KEYWORDS, FUNC_KEYWORDS, KEYWORDS
from .parser import parse, parse_fragment, parse_term
from .printer import format_number, normalize_literal, print_canonical, print_expr, print_term
from .evaluator import (BoundReward, decompose, evaluate, evaluate_combined,
                        recombine, term_values_batch)

__all__ = [
    "ActionRef", "Binary", "BoundReward", "Clip", "Constant", "EnvSignature",
    "Expr", "FRAME_KEYWORDS", "FUNC_KEYWORDS", "HyperParam", "HyperRef",
    "KEYWORDS", "MAX_DEPTH", "RewardFunction", "RewardTerm", "StateRef",
    "Token", "Unary", "decompose", "depth", "evaluate", "evaluate_combined",
    "format_number", "hyper_refs", "lex", "merge_feature_refs", "node_kinds",
    "normalize_literal", "parse", "parse_fragment", "parse_term",
    "print_canonical", "print_expr", "print_term", "recombine",
    "term_values_batch",
]
