"""Canonical printer.

One fixed textual form per tree: 2-space indent, single spaces around infix
operators, every numeric literal rendered with exactly 9 significant digits.
parse(print_canonical(rf)) is structurally identical to rf because the parser
normalises literals with the same formatter.
"""

from __future__ import annotations

from .nodes import (ActionRef, Binary, Clip, Constant, Expr, HyperRef,
                    RewardFunction, RewardTerm, StateRef, Unary)

# infix precedence levels; function-style ops are atoms
_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2}
_SYM = {"add": "+", "sub": "-", "mul": "*", "div": "/"}
_UNARY_FUNCS = ("abs", "exp", "tanh", "sqrt")
_ATOM = 9


def format_number(x: float) -> str:
    """9 significant digits, trailing zeros kept, exponent form when needed."""
    return format(float(x), "#.9g")


def normalize_literal(x: float) -> float:
    """The value a literal takes after one print/parse round trip."""
    return float(format_number(x))


def _prec(e: Expr) -> int:
    if isinstance(e, Binary) and e.op in _PREC:
        return _PREC[e.op]
    if isinstance(e, Unary) and e.op == "neg":
        return 3
    return _ATOM


def print_expr(e: Expr) -> str:
    if isinstance(e, Constant):
        return format_number(e.value)
    if isinstance(e, StateRef):
        return f"state.{e.name}"
    if isinstance(e, ActionRef):
        return f"action.{e.name}"
    if isinstance(e, HyperRef):
        return e.name
    if isinstance(e, Unary):
        if e.op == "neg":
            inner = print_expr(e.child)
            # parenthesise so "-" never fuses with a literal or an infix tree
            if isinstance(e.child, (Constant, Binary)) or (
                    isinstance(e.child, Unary) and e.child.op == "neg"):
                return f"-({inner})"
            return f"-{inner}"
        return f"{e.op}({print_expr(e.child)})"
    if isinstance(e, Binary):
        if e.op in _PREC:
            p = _PREC[e.op]
            left = print_expr(e.left)
            if _prec(e.left) < p:
                left = f"({left})"
            right = print_expr(e.right)
            # right operand parenthesised at equal precedence: keeps the tree
            # left-associative through a round trip
            if _prec(e.right) <= p:
                right = f"({right})"
            return f"{left} {_SYM[e.op]} {right}"
        return f"{e.op}({print_expr(e.left)}, {print_expr(e.right)})"
    if isinstance(e, Clip):
        return (f"clip({print_expr(e.child)}, "
                f"{format_number(e.lo)}, {format_number(e.hi)})")
    raise TypeError(f"not an expression node: {e!r}")


def print_term(term: RewardTerm) -> str:
    lines = [f"term {term.name} aspect {term.aspect_tag} {{"]
    for h in term.hypers:
        lines.append(
            f"  hyper {h.name} in [{format_number(h.lo)}, {format_number(h.hi)}]"
            f" default {format_number(h.default)};")
    lines.append(f"  expr = {print_expr(term.expr)};")
    lines.append("}")
    return "\n".join(lines)


def print_canonical(rf: RewardFunction) -> str:
    """Full function: term blocks in declaration order, then the combine line."""
    parts = [print_term(t) for t in rf.terms]
    combine = " + ".join(
        f"{format_number(w)} * {t.name}" for t, w in zip(rf.terms, rf.weights))
    parts.append(f"combine = {combine};")
    return "\n".join(parts) + "\n"
