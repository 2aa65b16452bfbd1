"""
Canonical rendering of syntax trees back to source text
"""
from typing import List, Optional

from ast_nodes import (BINARY_PRECEDENCE, COMPARISON_OPS, PREC_COMPARE, PREC_LOGICAL, PREC_MEMBERSHIP,
                       PREC_POSTFIX, PREC_RANGE, PREC_UNARY, Node, expr_precedence)

INDENT = "   "

MODE_PREFIX = {
    "read-only": "", "var": "var ", "ref": "ref ", "ref-var": "ref var ", "locked": "locked ",
    "locked-var": "locked var ", "queued": "queued ", "queued-var": "queued var ",
}


class PrettyPrinter:
    """Renders nodes deterministically; re-parsing the text yields an equal tree"""

    def __init__(self):
        self.lines: List[str] = []
        self.depth = 0

    def emit(self, text: str):
        self.lines.append(f"{INDENT * self.depth}{text}")

    def render(self, node: Node) -> str:
        if node.kind == "unit":
            chunks = []
            for decl in node.children:
                sub = PrettyPrinter()
                sub.decl(decl)
                chunks.append("\n".join(sub.lines))
            return "\n\n".join(chunks) + ("\n" if chunks else "")
        if node.kind in ("block", "then-group", "parallel-group") or node.kind in STATEMENT_RENDERERS:
            self.sequence(node) if node.kind == "block" else self.statement(node)
            return "\n".join(self.lines)
        if node.kind in DECL_KINDS:
            self.decl(node)
            return "\n".join(self.lines)
        return self.expr(node)

    # Declarations

    def decl(self, node: Node):
        kind = node.kind
        if kind == "module-interface":
            self.interface(node)
        elif kind == "module-class":
            self.module_class(node)
        elif kind in ("op-decl", "func-decl"):
            self.operation(node)
        elif kind == "type-decl":
            self.emit(f"type {node.text} is {self.type_text(node.get('type'))}")
        elif kind == "component-decl":
            text = f"{'var' if node.get('var') else 'const'} {node.text}"
            if node.get("type") is not None:
                text += f": {self.type_text(node.get('type'))}"
            if node.get("init") is not None:
                text += f" := {self.expr(node.get('init'))}"
            self.emit(text)
        else:
            self.statement(node)

    def interface(self, node: Node):
        head = ""
        if node.get("abstract"):
            head += "abstract "
        if node.get("concurrent"):
            head += "concurrent "
        head += f"interface {node.get('path') or node.text}"
        if node.get("formals"):
            head += "<" + "; ".join(self.formal_text(f) for f in node.get("formals")) + ">"
        if node.get("implements"):
            head += " implements " + ", ".join(self.type_text(t) for t in node.get("implements"))
        self.emit(head + " is")
        self.items(node.children)
        self.emit(f"end interface {node.text}")

    def module_class(self, node: Node):
        head = "concurrent class" if node.get("concurrent") else "class"
        self.emit(f"{head} {node.get('path') or node.text} is")
        exports_at = node.get("exports_at", len(node.children))
        self.items(node.children[:exports_at])
        self.emit("exports")
        self.items(node.children[exports_at:])
        self.emit(f"end class {node.text}")

    def items(self, items: List[Node]):
        self.depth += 1
        for i, item in enumerate(items):
            if i and (item.kind in ("op-decl", "func-decl", "module-interface", "module-class")
                      or items[i - 1].kind != item.kind):
                self.lines.append("")
            self.decl(item)
        self.depth -= 1

    def formal_text(self, formal: Node) -> str:
        if formal.get("formal_kind") == "type":
            return f"{formal.text} is {self.type_text(formal.get('type'))}"
        text = f"{formal.text}: {self.type_text(formal.get('type'))}"
        if formal.get("default") is not None:
            text += f" := {self.bracketed_actual(formal.get('default'))}"
        return text

    def bracketed_actual(self, node: Node) -> str:
        # A bare `>` would close the actual list
        text = self.expr(node)
        if ">" in text.replace("=>", "").replace("->", ""):
            return f"({text})"
        return text

    def type_text(self, node: Optional[Node]) -> str:
        if node is None:
            return ""
        if node.kind == "type-formal":
            return f"{node.text} is {self.type_text(node.get('constraint'))}"
        text = "optional " if node.get("optional") else ""
        if node.get("qual"):
            text += f"{node.get('qual')}::"
        text += node.text
        if node.get("generic"):
            text += "<" + ", ".join(self.actual_text(a) for a in node.get("actuals", [])) + ">"
        return text

    def actual_text(self, node: Node) -> str:
        if node.kind == "type":
            return self.type_text(node)
        if node.kind == "named-actual":
            return f"{node.text} => {self.actual_text(node.get('value'))}"
        return self.bracketed_actual(node)

    def signature(self, node: Node) -> str:
        kw = "op" if node.kind == "op-decl" else "func"
        name = f'"{node.text}"' if node.get("quoted") else node.text
        params = "; ".join(self.param_text(p) for p in node.get("params") or [])
        text = f"{kw} {name}({params})"
        if node.get("pre") is not None:
            text += f" {{{self.expr(node.get('pre'))}}}"
        result = node.get("result")
        if result is not None:
            text += " -> "
            if result.get("ref"):
                text += "ref "
            if result.text:
                text += f"{result.text}: "
            text += self.type_text(result.get("type"))
        if node.get("post") is not None:
            text += f" {{{self.expr(node.get('post'))}}}"
        return text

    def param_text(self, param: Node) -> str:
        prefix = MODE_PREFIX[param.get("mode", "read-only")]
        if param.get("anonymous"):
            return prefix + self.type_text(param.get("type"))
        return f"{prefix}{param.text}: {self.type_text(param.get('type'))}"

    def operation(self, node: Node):
        head = self.signature(node)
        if node.get("rename") is not None:
            self.emit(f'{head} is "{node.get("rename")}"')
            return
        if node.get("expr_body") is not None:
            self.emit(f"{head} is ({self.expr(node.get('expr_body'))})")
            return
        if node.get("body") is None:
            self.emit(head)
            return
        self.emit(f"{head} is")
        self.depth += 1
        dequeue = node.get("dequeue")
        if dequeue is not None:
            self.emit(f"queued {dequeue.text} {self.expr(dequeue.get('cond'))} then")
        self.sequence(node.get("body"))
        self.depth -= 1
        kw = "op" if node.kind == "op-decl" else "func"
        name = f'"{node.text}"' if node.get("quoted") else node.text
        self.emit(f"end {kw} {name}")

    # Statements

    def sequence(self, node: Node):
        """Render a statement sequence without an enclosing `block` bracket"""
        if node.kind != "block":
            self.statement(node)
            return
        if len(node.children) == 1 and node.children[0].kind in ("then-group", "parallel-group"):
            self.statement(node.children[0])
            return
        for stmt in node.children:
            self.statement(stmt)

    def nested(self, node: Node):
        self.depth += 1
        self.sequence(node)
        self.depth -= 1

    def statement(self, node: Node):
        renderer = STATEMENT_RENDERERS.get(node.kind)
        if renderer is None:
            self.emit(self.expr(node))
        else:
            renderer(self, node)

    def stmt_then_group(self, node: Node):
        for i, section in enumerate(node.children):
            if i:
                self.emit("then")
            self.sequence(section)

    def stmt_parallel_group(self, node: Node):
        for i, branch in enumerate(node.children):
            if i:
                self.emit("||")
            self.sequence(branch)

    def stmt_block(self, node: Node):
        self.emit("block")
        self.nested(node)
        self.emit("end block")

    def stmt_decl(self, node: Node):
        text = f"{'var' if node.get('var') else 'const'} {node.text}"
        if node.get("type") is not None:
            text += f": {self.type_text(node.get('type'))}"
        if node.get("anchor") is not None:
            text += f" for {self.expr(node.get('anchor'))}"
        if node.get("init") is not None:
            text += f" {'<==' if node.get('move') else ':='} {self.expr(node.get('init'))}"
        self.emit(text)

    def stmt_ref_decl(self, node: Node):
        self.emit(f"ref {'var ' if node.get('var') else ''}{node.text} => {self.expr(node.get('path'))}")

    def stmt_assign(self, node: Node):
        lhs, rhs = node.children
        self.emit(f"{self.expr(lhs)} {node.get('op', ':=')} {self.expr(rhs)}")

    def stmt_move(self, node: Node):
        self.emit(f"{self.expr(node.children[0])} <== {self.expr(node.children[1])}")

    def stmt_swap(self, node: Node):
        self.emit(f"{self.expr(node.children[0])} <=> {self.expr(node.children[1])}")

    def stmt_return(self, node: Node):
        self.emit(f"return {self.expr(node.children[0])}" if node.children else "return")

    def stmt_exit(self, node: Node):
        self.emit("exit loop")

    def stmt_continue(self, node: Node):
        if not node.children:
            self.emit("continue loop")
            return
        bound = f"{node.text} => " if node.text else ""
        self.emit(f"continue loop with {bound}{self.expr(node.children[0])}")

    def stmt_if(self, node: Node):
        for i, arm in enumerate(node.children):
            cond, body = arm.children
            self.emit(f"{'if' if i == 0 else 'elsif'} {self.expr(cond)} then")
            self.nested(body)
        if node.get("else") is not None:
            self.emit("else")
            self.nested(node.get("else"))
        self.emit("end if")

    def stmt_loop_until(self, node: Node):
        self.emit(f"{node.get('loop_kind', 'until')} {self.expr(node.get('cond'))} loop")
        self.nested(node.get("body"))
        self.emit("end loop")

    def stmt_for_then_while(self, node: Node):
        text = f"for {node.text} {node.get('bind', ':=')} {self.expr(node.get('init'))}"
        if node.get("next") is not None:
            text += f" then {self.expr(node.get('next'))}"
        if node.get("cond") is not None:
            text += f" while {self.expr(node.get('cond'))}"
        self.emit(text + " loop")
        self.nested(node.get("body"))
        self.emit("end loop")

    def stmt_for_in_range(self, node: Node):
        direction = f" {node.get('direction')}" if node.get("direction") else ""
        self.emit(f"for {node.text} in {self.expr(node.get('range'))}{direction} loop")
        self.nested(node.get("body"))
        self.emit("end loop")

    def stmt_for_each(self, node: Node):
        direction = f" {node.get('direction')}" if node.get("direction") else ""
        self.emit(f"for each {node.text} of {self.expr(node.get('container'))}{direction} loop")
        self.nested(node.get("body"))
        self.emit("end loop")

    # Expressions

    def operand(self, node: Node, minimum: int) -> str:
        text = self.expr(node)
        if expr_precedence(node) < minimum:
            return f"({text})"
        return text

    def expr(self, node: Node) -> str:
        kind = node.kind
        if kind == "name":
            text = f'"{node.text}"' if node.get("quoted") else node.text
            return f"{node.get('qual')}::{text}" if node.get("qual") else text
        if kind == "literal":
            return node.text
        if kind == "binary-op":
            return self.binary(node)
        if kind == "unary-op":
            sep = " " if node.text == "not" else ""
            return f"{node.text}{sep}{self.operand(node.children[0], PREC_UNARY)}"
        if kind == "call":
            callee = self.operand(node.children[0], PREC_POSTFIX)
            return f"{callee}({', '.join(self.expr(a) for a in node.children[1:])})"
        if kind == "named-arg":
            return f"{node.text} => {self.expr(node.children[0])}"
        if kind == "selected" or kind == "attribute":
            return f"{self.operand(node.children[0], PREC_POSTFIX)}.{node.text}"
        if kind == "index":
            return f"{self.operand(node.children[0], PREC_POSTFIX)}[{self.expr(node.children[1])}]"
        if kind == "slice":
            base = self.operand(node.children[0], PREC_POSTFIX)
            if node.get("full"):
                return f"{base}[..]"
            lo, hi = node.children[1:]
            return f"{base}[{self.operand(lo, PREC_RANGE + 1)} .. {self.operand(hi, PREC_RANGE + 1)}]"
        if kind == "magnitude":
            inner = self.operand(node.children[0], PREC_RANGE)
            if inner.startswith("|") or inner.endswith("|"):
                inner = f"({inner})"
            return f"|{inner}|"
        if kind == "aggregate":
            return "[" + ", ".join(self.expr(e) for e in node.children) + "]"
        if kind == "pair":
            if node.text is not None:
                return f"{node.text} {'<==' if node.get('move') else '=>'} {self.expr(node.children[0])}"
            return f"{self.expr(node.children[0])} => {self.expr(node.children[1])}"
        if kind == "comprehension":
            text = f"for each {node.text} of {self.expr(node.get('container'))}"
            if node.get("filter") is not None:
                text += f" {{{self.expr(node.get('filter'))}}}"
            return f"{text} => {self.expr(node.get('value'))}"
        if kind == "record":
            pairs = ", ".join(self.expr(p) for p in node.children)
            qual = node.get("qual")
            if qual is not None:
                return f"{self.type_text(qual)}::({pairs})"
            return f"({pairs})"
        if kind == "in-set":
            left = self.operand(node.children[0], PREC_COMPARE + 1)
            members = ", ".join(self.expr(e) for e in node.children[1:])
            return f"{left} {'not in' if node.get('negated') else 'in'} [{members}]"
        if kind == "is-null":
            return f"{self.operand(node.children[0], PREC_COMPARE + 1)} is null"
        if kind == "not-null":
            return f"{self.operand(node.children[0], PREC_COMPARE + 1)} not null"
        if kind == "seq-expr":
            parts = []
            for stmt in node.children[:-1]:
                sub = PrettyPrinter()
                sub.statement(stmt)
                parts.append("\n".join(sub.lines))
            parts.append(self.expr(node.children[-1]))
            return "(" + "; ".join(parts) + ")"
        sub = PrettyPrinter()
        sub.statement(node)
        return "\n".join(sub.lines)

    def binary(self, node: Node) -> str:
        op = node.text
        prec = BINARY_PRECEDENCE[op]
        left, right = node.children
        if op == "**":
            return f"{self.operand(left, PREC_POSTFIX)} ** {self.operand(right, PREC_UNARY)}"
        if op in ("in", "not in"):
            rhs = self.operand(right, PREC_COMPARE)
            if right.kind == "aggregate":
                rhs = f"({rhs})"
            return f"{self.operand(left, PREC_COMPARE + 1)} {op} {rhs}"
        if prec == PREC_LOGICAL:
            return f"{self.operand(left, PREC_LOGICAL)} {op} {self.operand(right, PREC_MEMBERSHIP)}"
        if op in COMPARISON_OPS or op == "=?" or op == "..":
            return f"{self.operand(left, prec + 1)} {op} {self.operand(right, prec + 1)}"
        return f"{self.operand(left, prec)} {op} {self.operand(right, prec + 1)}"


STATEMENT_RENDERERS = {
    "then-group": PrettyPrinter.stmt_then_group,
    "parallel-group": PrettyPrinter.stmt_parallel_group,
    "block": PrettyPrinter.stmt_block,
    "decl": PrettyPrinter.stmt_decl,
    "ref-decl": PrettyPrinter.stmt_ref_decl,
    "assign": PrettyPrinter.stmt_assign,
    "move": PrettyPrinter.stmt_move,
    "swap": PrettyPrinter.stmt_swap,
    "return": PrettyPrinter.stmt_return,
    "exit-loop": PrettyPrinter.stmt_exit,
    "continue-loop-with": PrettyPrinter.stmt_continue,
    "if": PrettyPrinter.stmt_if,
    "loop-until": PrettyPrinter.stmt_loop_until,
    "for-then-while": PrettyPrinter.stmt_for_then_while,
    "for-in-range": PrettyPrinter.stmt_for_in_range,
    "for-each": PrettyPrinter.stmt_for_each,
}

DECL_KINDS = frozenset({"module-interface", "module-class", "op-decl", "func-decl", "type-decl",
                        "component-decl"})


def pretty_print(node: Node) -> str:
    """
    Render a node as canonical source text

    Args:
        node: A unit, declaration, statement sequence or expression

    Returns:
        Source text; an empty block renders as the empty string
    """
    return PrettyPrinter().render(node)
