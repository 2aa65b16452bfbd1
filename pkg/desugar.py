"""
Rewrites syntactic sugar into plain call and loop form
"""
import itertools
import logging
import threading
from typing import List, Optional

from ast_nodes import SUGAR_KINDS, Node, block, call, enum_literal, map_tree, name

logger = logging.getLogger(__name__)

COMPARISON_EXPANSIONS = {
    "==": (False, ("#equal",)),
    "!=": (True, ("#equal",)),
    "<": (False, ("#less",)),
    "<=": (False, ("#less", "#equal")),
    ">": (False, ("#greater",)),
    ">=": (False, ("#greater", "#equal")),
}

_counter = itertools.count(1)
_counter_lock = threading.Lock()


def fresh_name(prefix: str) -> str:
    """Generate a name users cannot write (the lexer rejects `@` in sources)"""
    with _counter_lock:
        return f"@{prefix}{next(_counter)}"


def reset_generated_names():
    """Restart generated-name numbering (golden tests only)"""
    global _counter
    with _counter_lock:
        _counter = itertools.count(1)


def desugar_comparison(op: str, lhs: Node, rhs: Node, span=None) -> Node:
    """
    Expand a relational operator into a "=?" membership test

    Args:
        op: One of ==, !=, <, <=, >, >=
        lhs: Left operand
        rhs: Right operand

    Returns:
        in-set node over the Ordering literals the operator accepts
    """
    negated, literals = COMPARISON_EXPANSIONS[op]
    compare = Node("binary-op", "=?", [lhs, rhs], span=span or lhs.span)
    members = [enum_literal(sym, span) for sym in literals]
    return Node("in-set", children=[compare] + members, span=span or lhs.span, negated=negated)


def desugar_indexing(node: Node) -> Node:
    """A[i] -> "indexing"(A, i); A[lo..hi] and A[..] -> "slicing"(A, range)"""
    base = node.children[0]
    if node.kind == "index":
        return _path_call(call("indexing", [base, node.children[1]], node.span))
    if node.get("full"):
        bounds = Node("binary-op", "..", [Node("attribute", "First", [base], span=node.span),
                                          Node("attribute", "Last", [base], span=node.span)], span=node.span)
    else:
        bounds = Node("binary-op", "..", node.children[1:3], span=node.span)
    return _path_call(call("slicing", [base, bounds], node.span))


def _path_call(node: Node) -> Node:
    node.ann["path_call"] = True
    return node


def desugar_magnitude(node: Node) -> Node:
    return call("magnitude", [node.children[0]], node.span)


def desugar_element_iterator(node: Node) -> Node:
    """
    Expand `for each E of C loop ... end loop` into a key-set draining loop

    Returns:
        A block declaring the key set followed by the sequential loop
    """
    span = node.span
    container = node.get("container")
    keys = fresh_name("Keys")
    key = fresh_name("K")
    remove = {"forward": "Remove_First", "reverse": "Remove_Last"}.get(node.get("direction"), "Remove_Any")
    keys_decl = Node("decl", keys, span=span, var=True, type=None, anchor=None, move=False,
                     init=call("index_set", [container], span))
    element = Node("ref-decl", node.text, span=span, var=False,
                   path=_path_call(call("indexing", [container, name(key, span)], span)))
    body = node.get("body")
    stmts = [element] + (body.children if body.kind == "block" else [body])
    loop = Node("for-then-while", key, span=span, bind=":=",
                init=call(remove, [name(keys, span)], span, quoted=False),
                next=call(remove, [name(keys, span)], span, quoted=False),
                cond=Node("not-null", children=[name(key, span)], span=span),
                body=block(stmts, span))
    loop.ann["element_iterator"] = True
    keys_decl.ann["element_iterator"] = True
    return block([keys_decl, loop], span)


def desugar_aggregate(node: Node) -> Node:
    """
    Expand an aggregate into an empty construction followed by insertions

    `[]` becomes a bare `"[]"()` call; the container type comes from context
    """
    span = node.span
    if not node.children:
        empty = call("[]", [], span)
        empty.ann["aggregate"] = True
        return empty
    temp = fresh_name("T")
    init = call("[]", [], span)
    init.ann["aggregate"] = True
    stmts: List[Node] = [Node("decl", temp, span=span, var=True, type=None, anchor=None, move=False, init=init)]
    for elem in node.children:
        if elem.kind == "comprehension":
            stmts.append(_comprehension_loop(elem, temp))
            init.ann["comprehension_of"] = elem.get("container")
            continue
        if elem.kind == "pair":
            key, value = elem.children
            elem = Node("record", children=[Node("pair", "Key", [key], span=elem.span, move=False),
                                            Node("pair", "Value", [value], span=elem.span, move=False)],
                        span=elem.span, qual=None)
        stmts.append(Node("assign", children=[name(temp, span), elem], span=elem.span, op="|="))
    result = Node("seq-expr", children=stmts + [name(temp, span)], span=span)
    result.ann["aggregate"] = True
    return result


def _comprehension_loop(comp: Node, temp: str) -> Node:
    span = comp.span
    insert = Node("assign", children=[name(temp, span), comp.get("value")], span=span, op="|=")
    if comp.get("filter") is not None:
        arm = Node("arm", children=[comp.get("filter"), block([insert], span)], span=span)
        insert = Node("if", children=[arm], span=span, **{"else": None})
    loop = Node("for-each", comp.text, span=span, container=comp.get("container"), direction=None,
                body=block([insert], span))
    return desugar_element_iterator(loop)


def desugar_op_rename(decl: Node, candidates: List[Node]) -> Optional[Node]:
    """
    Find the operation a renaming declaration `op A(...) is "B"` stands for

    Args:
        decl: The renaming op declaration
        candidates: Operation declarations visible in the same module

    Returns:
        The target declaration whose parameter count and modes match, or None
    """
    target = decl.get("rename")
    for cand in candidates:
        if cand is decl or cand.text != target or cand.get("rename") is not None:
            continue
        params, other = decl.get("params") or [], cand.get("params") or []
        if len(params) != len(other):
            continue
        if all(p.get("mode") == q.get("mode") for p, q in zip(params, other)):
            return cand
    return None


class Desugarer:
    """Applies every sugar rewrite over a tree, bottom-up"""

    def __init__(self):
        self.logger = logging.getLogger(__name__)
        self.rewrites = 0

    def rewrite(self, node: Node) -> Node:
        kind = node.kind
        if kind == "binary-op" and node.text in COMPARISON_EXPANSIONS:
            self.rewrites += 1
            return desugar_comparison(node.text, node.children[0], node.children[1], node.span)
        if kind in ("index", "slice"):
            self.rewrites += 1
            return desugar_indexing(node)
        if kind == "magnitude":
            self.rewrites += 1
            return desugar_magnitude(node)
        if kind == "aggregate":
            self.rewrites += 1
            return desugar_aggregate(node)
        if kind == "for-each":
            self.rewrites += 1
            return desugar_element_iterator(node)
        return node

    def desugar(self, node: Node) -> Node:
        result = map_tree(node, self.rewrite)
        self.logger.debug(f"Desugared {node.kind}: {self.rewrites} rewrites")
        return result


def desugar(node: Node) -> Node:
    """
    Rewrite all sugar in a tree

    Args:
        node: A unit, declaration, statement or expression

    Returns:
        A new tree with no index, slice, magnitude, aggregate, for-each or
        relational comparison nodes
    """
    return Desugarer().desugar(node)


def sugar_kinds_in(node: Node) -> List[str]:
    """Sugar node kinds still present in a tree (empty for core trees)"""
    found = []
    for sub in node.walk():
        if sub.kind in SUGAR_KINDS or (sub.kind == "binary-op" and sub.text in COMPARISON_EXPANSIONS):
            found.append(sub.kind)
    return found


def desugar_literal(lit: Node, target_type: str) -> Node:
    """
    Wrap a literal used in a non-universal context: `T::from_univ(lit)`

    Args:
        lit: The literal node
        target_type: Name of the type the context expects

    Returns:
        A qualified call node converting the literal
    """
    convert = Node("call", children=[name("from_univ", lit.span, quoted=True, qual=target_type), lit],
                   span=lit.span)
    convert.ann["literal_conversion"] = True
    return convert


def comprehension_container(seq_expr: Node) -> Optional[Node]:
    """Container expression iterated by the first comprehension of an expanded aggregate"""
    for stmt in seq_expr.children:
        if stmt.kind != "block" or not stmt.children:
            continue
        keys_decl = stmt.children[0]
        if keys_decl.kind == "decl" and keys_decl.ann.get("element_iterator"):
            init = keys_decl.get("init")
            return init.children[1] if init is not None and len(init.children) > 1 else None
    return None
