"""
AST node representation shared by parser, desugarer, checker and interpreter
"""
import itertools
from typing import Any, Callable, Dict, Iterator, List, Optional

from models import Span

# Expression precedence levels, lowest to highest
PREC_LOGICAL = 1
PREC_MEMBERSHIP = 2
PREC_COMPARE = 3
PREC_CONCAT = 4
PREC_RANGE = 5
PREC_ADD = 6
PREC_MUL = 7
PREC_UNARY = 8
PREC_POWER = 9
PREC_POSTFIX = 10

BINARY_PRECEDENCE = {
    "and": PREC_LOGICAL, "or": PREC_LOGICAL, "xor": PREC_LOGICAL,
    "in": PREC_MEMBERSHIP, "not in": PREC_MEMBERSHIP,
    "==": PREC_COMPARE, "!=": PREC_COMPARE, "<": PREC_COMPARE, "<=": PREC_COMPARE,
    ">": PREC_COMPARE, ">=": PREC_COMPARE, "=?": PREC_COMPARE,
    "|": PREC_CONCAT,
    "..": PREC_RANGE,
    "+": PREC_ADD, "-": PREC_ADD,
    "*": PREC_MUL, "/": PREC_MUL, "mod": PREC_MUL, "rem": PREC_MUL,
    "**": PREC_POWER,
}

NON_ASSOCIATIVE = {PREC_MEMBERSHIP, PREC_COMPARE, PREC_RANGE}

COMPARISON_OPS = frozenset({"==", "!=", "<", "<=", ">", ">="})

# Kinds that never survive desugaring
SUGAR_KINDS = frozenset({"index", "slice", "magnitude", "aggregate", "for-each"})

PARAM_MODES = ("read-only", "var", "ref", "ref-var", "locked", "locked-var", "queued", "queued-var")

STATEMENT_KINDS = frozenset({
    "assign", "move", "swap", "call", "return", "exit-loop", "continue-loop-with", "if",
    "loop-until", "for-then-while", "for-in-range", "for-each", "block", "decl", "ref-decl",
    "parallel-group", "then-group",
})

_node_ids = itertools.count(1)


class Node:
    """A syntax tree node; `attrs` holds syntax, `ann` holds checker annotations"""

    __slots__ = ("kind", "text", "children", "attrs", "span", "ann", "uid")

    def __init__(self, kind: str, text: Optional[str] = None, children: Optional[List["Node"]] = None,
                 span: Optional[Span] = None, **attrs):
        self.kind = kind
        self.text = text
        self.children = list(children) if children else []
        self.attrs: Dict[str, Any] = attrs
        self.span = span or Span()
        self.ann: Dict[str, Any] = {}
        self.uid = next(_node_ids)

    def __repr__(self) -> str:
        return f"Node({self.kind!r}, {self.text!r}, {len(self.children)} children)"

    def get(self, key: str, default=None):
        return self.attrs.get(key, default)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Node):
            return NotImplemented
        return (self.kind == other.kind and self.text == other.text
                and self.children == other.children and self.attrs == other.attrs)

    def __hash__(self) -> int:
        return self.uid

    def child_nodes(self) -> Iterator["Node"]:
        """Yield direct sub-nodes, children first, then nodes held in attrs"""
        yield from self.children
        for key in sorted(self.attrs):
            value = self.attrs[key]
            if isinstance(value, Node):
                yield value
            elif isinstance(value, list):
                for item in value:
                    if isinstance(item, Node):
                        yield item

    def walk(self) -> Iterator["Node"]:
        """Pre-order traversal over the whole subtree"""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(list(node.child_nodes())))

    def copy(self, **changes) -> "Node":
        """Shallow copy with selected fields replaced"""
        attrs = dict(self.attrs)
        attrs.update(changes.pop("attrs", {}))
        new = Node(changes.get("kind", self.kind), changes.get("text", self.text),
                   changes.get("children", self.children), changes.get("span", self.span), **attrs)
        return new

    def deep_copy(self) -> "Node":
        return map_tree(self, lambda n: n)


def map_tree(node: Node, fn: Callable[[Node], Node]) -> Node:
    """
    Rebuild a tree bottom-up, applying fn to every rebuilt node

    Args:
        node: Root of the tree
        fn: Called on each node after its sub-nodes were rebuilt

    Returns:
        The rebuilt root
    """
    children = [map_tree(c, fn) for c in node.children]
    attrs = {}
    for key, value in node.attrs.items():
        if isinstance(value, Node):
            attrs[key] = map_tree(value, fn)
        elif isinstance(value, list) and value and any(isinstance(v, Node) for v in value):
            attrs[key] = [map_tree(v, fn) if isinstance(v, Node) else v for v in value]
        else:
            attrs[key] = value
    rebuilt = Node(node.kind, node.text, children, node.span, **attrs)
    rebuilt.ann = dict(node.ann)
    return fn(rebuilt)


def name(text: str, span: Optional[Span] = None, quoted: bool = False, qual: Optional[str] = None) -> Node:
    return Node("name", text, span=span, quoted=quoted, qual=qual)


def call(callee: str, args: List[Node], span: Optional[Span] = None, quoted: bool = True) -> Node:
    return Node("call", children=[name(callee, span, quoted=quoted)] + list(args), span=span)


def literal(kind: str, value: Any, text: str, span: Optional[Span] = None) -> Node:
    return Node("literal", text, span=span, lit=kind, value=value)


def enum_literal(sym: str, span: Optional[Span] = None) -> Node:
    return literal("enum", sym, sym, span)


def block(stmts: List[Node], span: Optional[Span] = None) -> Node:
    return Node("block", children=stmts, span=span)


def callee_name(node: Node) -> Optional[str]:
    """Name of the operation a call node invokes"""
    target = node.children[0]
    if target.kind == "name":
        return target.text
    if target.kind == "selected":
        return target.text
    return None


def call_args(node: Node) -> List[Node]:
    return node.children[1:]


def expr_precedence(node: Node) -> int:
    """Binding strength of an expression node for parenthesization"""
    kind = node.kind
    if kind == "binary-op":
        return BINARY_PRECEDENCE.get(node.text, PREC_POSTFIX)
    if kind == "unary-op":
        return PREC_UNARY
    if kind in ("in-set", "is-null", "not-null"):
        return PREC_MEMBERSHIP
    return PREC_POSTFIX


def is_path(node: Node) -> bool:
    """Whether the expression denotes an object (a name followed by selections)"""
    while node.kind in ("selected", "index", "slice", "attribute") or (
            node.kind == "call" and node.ann.get("path_call")):
        node = node.children[0] if node.kind != "call" else node.children[1]
    return node.kind == "name" and not node.get("quoted")


def path_root(node: Node) -> Optional[str]:
    """Root identifier of a path expression, or None"""
    while True:
        if node.kind in ("selected", "index", "slice", "attribute"):
            node = node.children[0]
        elif node.kind == "call" and callee_name(node) in ("indexing", "slicing") and len(node.children) > 1:
            node = node.children[1]
        elif node.kind == "name" and not node.get("quoted"):
            return node.text
        else:
            return None
