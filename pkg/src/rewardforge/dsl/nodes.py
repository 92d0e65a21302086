"""AST node types for the closed reward expression language.

The language is deliberately small: constants, feature references, named
hyperparameters, five unary ops, seven binary ops, and clip. Trees are
immutable frozen dataclasses, so structural equality is dataclass equality
and hashing works out of the box. Constants are compared exactly; the parser
is responsible for normalising literals so that printing and re-parsing is
the identity (see printer.format_number).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import DslSyntaxError, DuplicateTermError, UndeclaredHyperError

MAX_DEPTH = 64

UNARY_OPS = ("neg", "abs", "exp", "tanh", "sqrt")
BINARY_OPS = ("add", "sub", "mul", "div", "min", "max", "pow")


class Expr:
    """Marker base class for expression nodes."""

    __slots__ = ()


@dataclass(frozen=True)
class Constant(Expr):
    value: float

    def __post_init__(self):
        v = float(self.value)
        if v != v or v in (float("inf"), float("-inf")):
            raise DslSyntaxError("constant must be finite", 0, 0)
        object.__setattr__(self, "value", v)


@dataclass(frozen=True)
class StateRef(Expr):
    name: str


@dataclass(frozen=True)
class ActionRef(Expr):
    name: str


@dataclass(frozen=True)
class HyperRef(Expr):
    name: str


@dataclass(frozen=True)
class Unary(Expr):
    op: str
    child: Expr

    def __post_init__(self):
        if self.op not in UNARY_OPS:
            raise DslSyntaxError(f"unknown unary op {self.op!r}", 0, 0)


@dataclass(frozen=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr

    def __post_init__(self):
        if self.op not in BINARY_OPS:
            raise DslSyntaxError(f"unknown binary op {self.op!r}", 0, 0)


@dataclass(frozen=True)
class Clip(Expr):
    child: Expr
    lo: float
    hi: float

    def __post_init__(self):
        if not (self.lo <= self.hi):
            raise DslSyntaxError("clip bounds must satisfy lo <= hi", 0, 0)


def depth(expr: Expr) -> int:
    """Tree depth; a leaf has depth 1."""
    stack = [(expr, 1)]
    best = 0
    while stack:
        node, d = stack.pop()
        best = max(best, d)
        if isinstance(node, Unary):
            stack.append((node.child, d + 1))
        elif isinstance(node, Binary):
            stack.append((node.left, d + 1))
            stack.append((node.right, d + 1))
        elif isinstance(node, Clip):
            stack.append((node.child, d + 1))
    return best


def hyper_refs(expr: Expr) -> set[str]:
    """Names of all HyperRef leaves in the tree."""
    out: set[str] = set()
    stack = [expr]
    while stack:
        node = stack.pop()
        if isinstance(node, HyperRef):
            out.add(node.name)
        elif isinstance(node, Unary):
            stack.append(node.child)
        elif isinstance(node, Binary):
            stack.append(node.left)
            stack.append(node.right)
        elif isinstance(node, Clip):
            stack.append(node.child)
    return out


def node_kinds(expr: Expr) -> list[str]:
    """Kind labels of every node, preorder. Used by the structural embedding."""
    out: list[str] = []
    stack = [expr]
    while stack:
        node = stack.pop()
        if isinstance(node, Constant):
            out.append("constant")
        elif isinstance(node, StateRef):
            out.append("state_ref")
        elif isinstance(node, ActionRef):
            out.append("action_ref")
        elif isinstance(node, HyperRef):
            out.append("hyper_ref")
        elif isinstance(node, Unary):
            out.append(node.op)
            stack.append(node.child)
        elif isinstance(node, Binary):
            out.append(node.op)
            stack.append(node.left)
            stack.append(node.right)
        elif isinstance(node, Clip):
            out.append("clip")
            stack.append(node.child)
    return out


@dataclass(frozen=True)
class EnvSignature:
    """Ordered feature declarations: what an environment exposes to rewards."""

    state: tuple[tuple[str, str], ...]   # (name, unit)
    action: tuple[tuple[str, str], ...]

    def __post_init__(self):
        names = [n for n, _ in self.state] + [n for n, _ in self.action]
        if len(set(names)) != len(names):
            raise DslSyntaxError("signature feature names must be unique", 0, 0)
        if not self.state or not self.action:
            raise DslSyntaxError("signature needs at least one state and one action feature", 0, 0)

    @property
    def state_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.state)

    @property
    def action_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.action)

    def to_dict(self) -> dict:
        return {"state": [list(p) for p in self.state],
                "action": [list(p) for p in self.action]}

    @staticmethod
    def from_dict(d: dict) -> "EnvSignature":
        return EnvSignature(
            state=tuple((str(n), str(u)) for n, u in d["state"]),
            action=tuple((str(n), str(u)) for n, u in d["action"]),
        )


def map_expr(expr: Expr, fn) -> Expr:
    """Rebuild a tree bottom-up; fn(node) returns a replacement or None.

    fn sees each node after its children were rebuilt, so replacements
    compose. Nodes fn declines (None) are rebuilt structurally.
    """
    if isinstance(expr, Unary):
        rebuilt: Expr = Unary(expr.op, map_expr(expr.child, fn))
    elif isinstance(expr, Binary):
        rebuilt = Binary(expr.op, map_expr(expr.left, fn), map_expr(expr.right, fn))
    elif isinstance(expr, Clip):
        rebuilt = Clip(map_expr(expr.child, fn), expr.lo, expr.hi)
    else:
        rebuilt = expr
    replacement = fn(rebuilt)
    return rebuilt if replacement is None else replacement


def rename_hypers(term: "RewardTerm", mapping: dict[str, str]) -> "RewardTerm":
    """New term with hyperparameters renamed in declarations and references."""

    def swap(node):
        if isinstance(node, HyperRef) and node.name in mapping:
            return HyperRef(mapping[node.name])
        return None

    hypers = tuple(
        HyperParam(mapping.get(h.name, h.name), h.lo, h.hi, h.default)
        for h in term.hypers)
    return RewardTerm(term.name, map_expr(term.expr, swap), hypers,
                      term.aspect_tag)


def map_constants(term: "RewardTerm", fn) -> "RewardTerm":
    """New term with fn applied to expression constants (None keeps a node).

    Clip bounds and hyperparameter declarations are left untouched: they
    carry range semantics, not expression values.
    """

    def swap(node):
        if isinstance(node, Constant):
            return fn(node)
        return None

    return RewardTerm(term.name, map_expr(term.expr, swap), term.hypers,
                      term.aspect_tag)


@dataclass(frozen=True)
class HyperParam:
    name: str
    lo: float
    hi: float
    default: float

    def __post_init__(self):
        if not (self.lo < self.hi):
            raise DslSyntaxError(f"hyper {self.name!r}: bounds must satisfy lo < hi", 0, 0)
        if not (self.lo <= self.default <= self.hi):
            raise DslSyntaxError(f"hyper {self.name!r}: default outside bounds", 0, 0)


@dataclass(frozen=True)
class RewardTerm:
    """One named reward component with its own hyperparameter box."""

    name: str
    expr: Expr
    hypers: tuple[HyperParam, ...]
    aspect_tag: str

    def __post_init__(self):
        if depth(self.expr) > MAX_DEPTH:
            raise DslSyntaxError(f"term {self.name!r}: expression deeper than {MAX_DEPTH}", 0, 0)
        declared = [h.name for h in self.hypers]
        if len(set(declared)) != len(declared):
            raise DslSyntaxError(f"term {self.name!r}: duplicate hyper declaration", 0, 0)
        referenced = hyper_refs(self.expr)
        for name in sorted(referenced):
            if name not in declared:
                raise UndeclaredHyperError(name, self.name)
        for name in declared:
            if name not in referenced:
                raise DslSyntaxError(
                    f"term {self.name!r}: hyper {name!r} declared but never used", 0, 0)

    def default_theta(self) -> dict[str, float]:
        return {h.name: h.default for h in self.hypers}


@dataclass(frozen=True)
class RewardFunction:
    """Weighted sum of terms, bound to one environment signature.

    Immutable after construction. Weights are non-negative with at least one
    positive entry; they are kept as declared, not normalised.
    """

    terms: tuple[RewardTerm, ...]
    weights: tuple[float, ...]
    signature: EnvSignature

    def __post_init__(self):
        if not self.terms:
            raise DslSyntaxError("reward function needs at least one term", 0, 0)
        if len(self.terms) != len(self.weights):
            raise DslSyntaxError("one weight per term required", 0, 0)
        seen: set[str] = set()
        for t in self.terms:
            if t.name in seen:
                raise DuplicateTermError(t.name)
            seen.add(t.name)
        for w in self.weights:
            if not (w >= 0.0) or w != w:
                raise DslSyntaxError("combine weights must be non-negative", 0, 0)
        if not any(w > 0.0 for w in self.weights):
            raise DslSyntaxError("at least one combine weight must be positive", 0, 0)
        _validate_features(self)

    def term(self, name: str) -> RewardTerm:
        for t in self.terms:
            if t.name == name:
                return t
        raise KeyError(name)

    def default_thetas(self) -> dict[str, dict[str, float]]:
        return {t.name: t.default_theta() for t in self.terms}


def _validate_features(rf: RewardFunction) -> None:
    state = set(rf.signature.state_names)
    action = set(rf.signature.action_names)
    for t in rf.terms:
        stack = [t.expr]
        while stack:
            node = stack.pop()
            if isinstance(node, StateRef) and node.name not in state:
                from ..errors import UnknownFeatureError
                raise UnknownFeatureError(f"state.{node.name}")
            if isinstance(node, ActionRef) and node.name not in action:
                from ..errors import UnknownFeatureError
                raise UnknownFeatureError(f"action.{node.name}")
            if isinstance(node, Unary):
                stack.append(node.child)
            elif isinstance(node, Binary):
                stack.append(node.left)
                stack.append(node.right)
            elif isinstance(node, Clip):
                stack.append(node.child)
