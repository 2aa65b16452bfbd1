"""
Recursive-descent parser for the .psl surface language
"""
import logging
from typing import List, Optional, Set

from ast_nodes import COMPARISON_OPS, Node, block
from errors import DiagnosticError
from lexer import tokenize
from models import Diagnostic, Span, Token

logger = logging.getLogger(__name__)

STATEMENT_END = frozenset({"then", "||", "end", "else", "elsif", "exports"})
COMPOUND_ASSIGN = frozenset({"|=", "+=", "-=", "*=", "/="})


class ParseError(Exception):
    """Internal signal carrying the first syntax diagnostic"""

    def __init__(self, diagnostic: Diagnostic):
        self.diagnostic = diagnostic
        super().__init__(diagnostic.message)


class Parser:
    """Builds AST nodes from a token list"""

    def __init__(self, tokens: List[Token]):
        self.tokens = tokens
        self.pos = 0
        self.no_gt = 0

    # Token helpers

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def peek(self, offset: int = 1) -> Token:
        index = min(self.pos + offset, len(self.tokens) - 1)
        return self.tokens[index]

    def at(self, *texts: str) -> bool:
        tok = self.tok
        return tok.kind in ("keyword", "operator", "punctuation") and tok.text in texts

    def at_kind(self, kind: str) -> bool:
        return self.tok.kind == kind

    def advance(self) -> Token:
        tok = self.tok
        if not tok.is_eof:
            self.pos += 1
        return tok

    def accept(self, *texts: str) -> Optional[Token]:
        if self.at(*texts):
            return self.advance()
        return None

    def expect(self, *texts: str) -> Token:
        if self.at(*texts):
            return self.advance()
        self.fail(set(texts))

    def expect_identifier(self) -> Token:
        if self.at_kind("identifier"):
            return self.advance()
        self.fail({"identifier"})

    def fail(self, expected: Set[str], code: str = "SYNTAX", message: Optional[str] = None):
        tok = self.tok
        found = "end of input" if tok.is_eof else repr(tok.text)
        if message is None:
            message = f"expected one of {{{', '.join(sorted(expected))}}}, found {found}"
        raise ParseError(Diagnostic(code=code, message=message, span=tok.span))

    def error_at(self, span: Span, code: str, message: str):
        raise ParseError(Diagnostic(code=code, message=message, span=span))

    # Compilation unit

    def parse_unit(self) -> Node:
        decls = []
        start = self.tok.span
        while not self.tok.is_eof:
            if self.accept(";"):
                continue
            decls.append(self.parse_top_decl())
        return Node("unit", children=decls, span=start)

    def parse_top_decl(self) -> Node:
        if self.at("abstract", "concurrent", "interface", "class"):
            return self.parse_module()
        if self.at("func", "op"):
            return self.parse_operation()
        if self.at("type"):
            return self.parse_type_decl()
        if self.at("var", "const"):
            return self.parse_component()
        self.fail({"interface", "class", "func", "op", "type", "var", "const"})

    def parse_path(self) -> List[Token]:
        parts = [self.expect_identifier()]
        while self.at("::") and self.peek().kind == "identifier":
            self.advance()
            parts.append(self.advance())
        return parts

    def parse_end_name(self, expected_name: str, span: Span):
        if self.at_kind("identifier"):
            parts = self.parse_path()
            if parts[-1].text != expected_name:
                self.error_at(parts[-1].span, "END_NAME",
                              f"end name {parts[-1].text!r} does not match {expected_name!r}")
        elif self.at_kind("string-lit"):
            tok = self.advance()
            if tok.value != expected_name:
                self.error_at(tok.span, "END_NAME", f"end name \"{tok.value}\" does not match \"{expected_name}\"")
        self.accept(";")

    def parse_module(self) -> Node:
        start = self.tok.span
        is_abstract = bool(self.accept("abstract"))
        is_concurrent = bool(self.accept("concurrent"))
        if self.accept("class"):
            return self.parse_class_rest(start, is_concurrent)
        self.expect("interface")
        parts = self.parse_path()
        name = parts[-1].text
        formals = self.parse_formals() if self.at("<") else []
        implements = []
        if self.accept("implements"):
            implements.append(self.parse_type())
            while self.accept(","):
                implements.append(self.parse_type())
        if self.at("extends"):
            self.fail(set(), message="'extends' inheritance is not supported")
        self.expect("is")
        items = []
        while not self.at("end"):
            if self.tok.is_eof:
                self.fail({"end"})
            if self.accept(";"):
                continue
            items.append(self.parse_module_item())
        self.expect("end")
        end_abstract = bool(self.accept("abstract"))
        self.accept("concurrent")
        self.expect("interface")
        self.parse_end_name(name, start)
        return Node("module-interface", name, items, span=start, path="::".join(p.text for p in parts),
                    abstract=is_abstract, concurrent=is_concurrent, formals=formals,
                    implements=implements, end_abstract=end_abstract)

    def parse_class_rest(self, start: Span, is_concurrent: bool) -> Node:
        parts = self.parse_path()
        name = parts[-1].text
        self.expect("is")
        items = []
        exports_at = None
        while not self.at("end"):
            if self.tok.is_eof:
                self.fail({"end"})
            if self.accept(";"):
                continue
            if self.accept("exports"):
                exports_at = len(items)
                continue
            items.append(self.parse_module_item())
        self.expect("end")
        self.accept("concurrent")
        self.expect("class")
        self.parse_end_name(name, start)
        return Node("module-class", name, items, span=start, path="::".join(p.text for p in parts),
                    concurrent=is_concurrent, exports_at=len(items) if exports_at is None else exports_at)

    def parse_module_item(self) -> Node:
        if self.at("func", "op"):
            return self.parse_operation()
        if self.at("var", "const"):
            return self.parse_component()
        if self.at("type"):
            return self.parse_type_decl()
        if self.at("abstract", "concurrent", "interface", "class"):
            return self.parse_module()
        self.fail({"func", "op", "var", "const", "type", "interface"})

    def parse_formals(self) -> List[Node]:
        self.expect("<")
        formals = []
        self.no_gt += 1
        try:
            while not self.at(">"):
                tok = self.expect_identifier()
                if self.accept("is"):
                    constraint = self.parse_type()
                    formals.append(Node("formal", tok.text, span=tok.span, formal_kind="type", type=constraint,
                                        default=None))
                else:
                    self.expect(":")
                    ftype = self.parse_type()
                    default = self.parse_expr() if self.accept(":=") else None
                    formals.append(Node("formal", tok.text, span=tok.span, formal_kind="value", type=ftype,
                                        default=default))
                if not self.accept(";", ","):
                    break
        finally:
            self.no_gt -= 1
        self.expect(">")
        return formals

    def parse_type_decl(self) -> Node:
        start = self.expect("type").span
        name = self.expect_identifier().text
        self.expect("is")
        ttype = self.parse_type()
        self.accept(";")
        return Node("type-decl", name, span=start, type=ttype)

    def parse_component(self) -> Node:
        kw = self.advance()
        name_tok = self.expect_identifier()
        ctype = self.parse_type() if self.accept(":") else None
        init = self.parse_expr() if self.accept(":=") else None
        self.accept(";")
        return Node("component-decl", name_tok.text, span=name_tok.span, var=kw.text == "var",
                    type=ctype, init=init)

    # Types

    def parse_type(self) -> Node:
        start = self.tok.span
        optional = bool(self.accept("optional"))
        parts = self.parse_path()
        actuals = None
        if self.at("<"):
            self.advance()
            actuals = []
            self.no_gt += 1
            try:
                while not self.at(">"):
                    actuals.append(self.parse_actual())
                    if not self.accept(",", ";"):
                        break
            finally:
                self.no_gt -= 1
            self.expect(">")
        qual = "::".join(p.text for p in parts[:-1]) or None
        return Node("type", parts[-1].text, span=start, optional=optional, qual=qual,
                    actuals=actuals if actuals is not None else [], generic=actuals is not None)

    def parse_actual(self) -> Node:
        tok = self.tok
        if tok.kind == "identifier" and self.peek().text == "=>":
            self.advance()
            self.advance()
            return Node("named-actual", tok.text, span=tok.span, value=self.parse_actual())
        if self.at("optional"):
            return self.parse_type()
        if tok.kind == "identifier" and self.peek().text in ("<", ",", ";", ">", "::"):
            return self.parse_type()
        return self.parse_expr()

    # Operations

    def parse_operation(self) -> Node:
        kw = self.advance()
        start = kw.span
        if kw.text == "op" and self.at_kind("string-lit"):
            name_tok = self.advance()
            name = name_tok.value
            quoted = True
        else:
            name = self.expect_identifier().text
            quoted = False
        params = self.parse_params()
        pre = post = result = None
        while True:
            if self.at("{"):
                cond = self.parse_condition()
                if result is None:
                    pre = cond
                else:
                    post = cond
            elif self.at("->") and result is None:
                result = self.parse_result()
            else:
                break
        attrs = dict(params=params, result=result, pre=pre, post=post, rename=None, expr_body=None,
                     body=None, dequeue=None, quoted=quoted)
        if self.accept("is"):
            if self.at_kind("string-lit"):
                attrs["rename"] = self.advance().value
            elif self.at("("):
                self.advance()
                attrs["expr_body"] = self.parse_expr()
                self.expect(")")
            else:
                if self.at("queued"):
                    qtok = self.advance()
                    kind = self.expect("until", "while").text
                    cond = self.parse_expr()
                    self.expect("then")
                    attrs["dequeue"] = Node("dequeue", kind, span=qtok.span, cond=cond)
                attrs["body"] = self.parse_sequence()
                self.expect("end")
                self.expect(kw.text)
                self.parse_end_name(name, start)
                return Node("op-decl" if kw.text == "op" else "func-decl", name, span=start, **attrs)
        self.accept(";")
        return Node("op-decl" if kw.text == "op" else "func-decl", name, span=start, **attrs)

    def parse_condition(self) -> Node:
        self.expect("{")
        cond = self.parse_expr()
        self.expect("}")
        return cond

    def parse_mode(self) -> str:
        if self.at_kind("identifier") and self.tok.text == "lock_free":
            self.fail(set(), code="SYNC_UNSUPPORTED", message="lock-free operations are not supported")
        if self.accept("var"):
            return "var"
        for kw in ("ref", "locked", "queued"):
            if self.accept(kw):
                return f"{kw}-var" if self.accept("var") else kw
        return "read-only"

    def _named_param_group(self) -> bool:
        offset = 0
        while True:
            if self.peek(offset).kind != "identifier":
                return False
            nxt = self.peek(offset + 1)
            if nxt.text == ":" and nxt.kind == "operator":
                return True
            if nxt.text != ",":
                return False
            offset += 2

    def parse_params(self) -> List[Node]:
        self.expect("(")
        params = []
        while not self.at(")"):
            start = self.tok.span
            mode = self.parse_mode()
            if self._named_param_group():
                names = [self.expect_identifier()]
                while self.accept(","):
                    names.append(self.expect_identifier())
                self.expect(":")
                ptype = self.parse_param_type()
                for tok in names:
                    params.append(Node("param", tok.text, span=tok.span, mode=mode, type=ptype, anonymous=False))
            else:
                ptype = self.parse_param_type()
                params.append(Node("param", ptype.text, span=start, mode=mode, type=ptype, anonymous=True))
            if not self.accept(";", ","):
                break
        self.expect(")")
        return params

    def parse_param_type(self) -> Node:
        if self.at_kind("identifier") and self.peek().text == "is":
            tok = self.advance()
            self.advance()
            return Node("type-formal", tok.text, span=tok.span, constraint=self.parse_type(), optional=False)
        return self.parse_type()

    def parse_result(self) -> Node:
        start = self.expect("->").span
        is_ref = bool(self.accept("ref"))
        name = None
        if self.at_kind("identifier") and self.peek().text == ":" and self.peek().kind == "operator":
            name = self.advance().text
            self.advance()
        return Node("result", name, span=start, ref=is_ref, type=self.parse_type())

    # Statements

    def parse_sequence(self) -> Node:
        """Statement sequence: parallel sequences separated by `then`"""
        start = self.tok.span
        sections = [self.parse_parallel()]
        while self.accept("then"):
            sections.append(self.parse_parallel())
        if len(sections) == 1:
            return sections[0]
        return block([Node("then-group", children=sections, span=start)], start)

    def parse_parallel(self) -> Node:
        start = self.tok.span
        branches = [self.parse_statement_list()]
        while self.accept("||"):
            branches.append(self.parse_statement_list())
        if len(branches) == 1:
            return branches[0]
        return block([Node("parallel-group", children=branches, span=start)], start)

    def parse_statement_list(self) -> Node:
        start = self.tok.span
        stmts = []
        while True:
            if self.accept(";"):
                continue
            if self.tok.is_eof or self.at(*STATEMENT_END):
                break
            stmts.append(self.parse_statement())
        return block(stmts, start)

    def at_statement_boundary(self) -> bool:
        return (self.tok.is_eof or self.tok.newline_before or self.at(";") or self.at(*STATEMENT_END))

    def parse_statement(self) -> Node:
        tok = self.tok
        span = tok.span
        if self.at("var", "const"):
            return self.parse_decl()
        if self.accept("ref"):
            is_var = bool(self.accept("var"))
            name = self.expect_identifier().text
            self.expect("=>")
            return Node("ref-decl", name, span=span, path=self.parse_expr(), var=is_var)
        if self.accept("return"):
            if self.at_statement_boundary():
                return Node("return", span=span)
            return Node("return", children=[self.parse_expr()], span=span)
        if self.accept("exit"):
            self.expect("loop")
            return Node("exit-loop", span=span)
        if self.accept("continue"):
            self.expect("loop")
            if not self.accept("with"):
                return Node("continue-loop-with", span=span)
            bound = None
            if self.at_kind("identifier") and self.peek().text == "=>":
                bound = self.advance().text
                self.advance()
            return Node("continue-loop-with", bound, [self.parse_expr()], span=span)
        if self.at("if"):
            return self.parse_if()
        if self.at("until", "while"):
            kind = self.advance().text
            cond = self.parse_expr()
            body = self.parse_loop_body()
            return Node("loop-until", span=span, loop_kind=kind, cond=cond, body=body)
        if self.at("for"):
            return self.parse_for()
        if self.accept("block"):
            body = self.parse_sequence()
            self.expect("end")
            self.expect("block")
            return body.copy(span=span) if body.kind == "block" else block([body], span)
        if self.at("queued"):
            self.fail(set(), message="dequeue condition allowed only at the start of an operation body")
        expr = self.parse_expr()
        if self.at(":=") or self.at(*COMPOUND_ASSIGN):
            op = self.advance().text
            return Node("assign", children=[expr, self.parse_expr()], span=span, op=op)
        if self.accept("<=="):
            return Node("move", children=[expr, self.parse_expr()], span=span)
        if self.accept("<=>"):
            return Node("swap", children=[expr, self.parse_expr()], span=span)
        if expr.kind != "call":
            self.error_at(span, "SYNTAX", "expression is not a statement")
        return expr

    def parse_decl(self) -> Node:
        kw = self.advance()
        name_tok = self.expect_identifier()
        dtype = anchor = init = None
        move = False
        if self.at(":") and self.tok.kind == "operator":
            self.advance()
            dtype = self.parse_type()
        if self.accept("for"):
            anchor = self.parse_expr()
        if self.accept(":="):
            init = self.parse_expr()
        elif self.accept("<=="):
            init = self.parse_expr()
            move = True
        return Node("decl", name_tok.text, span=name_tok.span, var=kw.text == "var", type=dtype,
                    init=init, move=move, anchor=anchor)

    def parse_loop_body(self) -> Node:
        self.expect("loop")
        body = self.parse_sequence()
        self.expect("end")
        self.expect("loop")
        if self.at_kind("identifier") and not self.tok.newline_before:
            self.advance()
        return body

    def parse_if(self) -> Node:
        span = self.expect("if").span
        arms = []
        cond = self.parse_expr()
        self.expect("then")
        arms.append(Node("arm", children=[cond, self.parse_sequence()], span=cond.span))
        else_block = None
        while True:
            if self.accept("elsif"):
                cond = self.parse_expr()
                self.expect("then")
                arms.append(Node("arm", children=[cond, self.parse_sequence()], span=cond.span))
            elif self.accept("else"):
                else_block = self.parse_sequence()
            else:
                break
        self.expect("end")
        self.expect("if")
        return Node("if", children=arms, span=span, **{"else": else_block})

    def parse_direction(self) -> Optional[str]:
        tok = self.accept("forward", "reverse")
        return tok.text if tok else None

    def parse_for(self) -> Node:
        span = self.expect("for").span
        if self.accept("each"):
            var = self.expect_identifier().text
            self.expect("of")
            container = self.parse_expr()
            direction = self.parse_direction()
            body = self.parse_loop_body()
            return Node("for-each", var, span=span, container=container, direction=direction, body=body)
        var_tok = self.expect_identifier()
        if self.accept("in"):
            rng = self.parse_expr()
            direction = self.parse_direction()
            body = self.parse_loop_body()
            return Node("for-in-range", var_tok.text, span=span, range=rng, direction=direction, body=body)
        bind = self.expect("=>", ":=").text
        init = self.parse_expr()
        nxt = self.parse_expr() if self.accept("then") else None
        cond = self.parse_expr() if self.accept("while") else None
        body = self.parse_loop_body()
        return Node("for-then-while", var_tok.text, span=span, bind=bind, init=init, next=nxt, cond=cond,
                    body=body)

    # Expressions

    def parse_expr(self) -> Node:
        left = self.parse_membership()
        while self.at("and", "or", "xor"):
            op = self.advance()
            right = self.parse_membership()
            left = Node("binary-op", op.text, [left, right], span=left.span)
        return left

    def parse_membership(self) -> Node:
        left = self.parse_comparison()
        if self.at("in") or (self.at("not") and self.peek().text == "in"):
            negated = self.advance().text == "not"
            if negated:
                self.advance()
            if self.at("["):
                agg = self.parse_bracket_aggregate()
                if all(e.kind not in ("pair", "comprehension") for e in agg.children):
                    return Node("in-set", children=[left] + agg.children, span=left.span, negated=negated)
                right = agg
            else:
                right = self.parse_comparison()
            return Node("binary-op", "not in" if negated else "in", [left, right], span=left.span)
        if self.at("is") and self.peek().text == "null":
            self.advance()
            self.advance()
            return Node("is-null", children=[left], span=left.span)
        if self.at("not") and self.peek().text == "null":
            self.advance()
            self.advance()
            return Node("not-null", children=[left], span=left.span)
        return left

    def _comparison_op(self) -> Optional[str]:
        tok = self.tok
        if tok.kind != "operator":
            return None
        if tok.text in COMPARISON_OPS or tok.text == "=?":
            if self.no_gt and tok.text in (">", ">="):
                return None
            return tok.text
        return None

    def parse_comparison(self) -> Node:
        left = self.parse_concat()
        op = self._comparison_op()
        if op is None:
            return left
        self.advance()
        right = self.parse_concat()
        node = Node("binary-op", op, [left, right], span=left.span)
        if self._comparison_op() is not None:
            self.fail(set(), code="CHAINED_COMPARE", message="chained comparisons are ambiguous; add parentheses")
        return node

    def parse_concat(self) -> Node:
        left = self.parse_range()
        while self.at("|"):
            self.advance()
            right = self.parse_range()
            left = Node("binary-op", "|", [left, right], span=left.span)
        return left

    def parse_range(self) -> Node:
        left = self.parse_additive()
        if self.accept(".."):
            right = self.parse_additive()
            return Node("binary-op", "..", [left, right], span=left.span)
        return left

    def parse_additive(self) -> Node:
        left = self.parse_multiplicative()
        while self.at("+", "-"):
            op = self.advance().text
            left = Node("binary-op", op, [left, self.parse_multiplicative()], span=left.span)
        return left

    def parse_multiplicative(self) -> Node:
        left = self.parse_unary()
        while self.at("*", "/", "mod", "rem"):
            op = self.advance().text
            left = Node("binary-op", op, [left, self.parse_unary()], span=left.span)
        return left

    def parse_unary(self) -> Node:
        if self.at("-", "+") or (self.at("not") and self.peek().text not in ("null", "in")):
            tok = self.advance()
            return Node("unary-op", tok.text, [self.parse_unary()], span=tok.span)
        return self.parse_power()

    def parse_power(self) -> Node:
        base = self.parse_postfix()
        if self.accept("**"):
            return Node("binary-op", "**", [base, self.parse_unary()], span=base.span)
        return base

    def parse_postfix(self) -> Node:
        node = self.parse_primary()
        while True:
            tok = self.tok
            if self.at("(") and not tok.newline_before:
                node = Node("call", children=[node] + self.parse_args(), span=node.span)
            elif self.at("[") and not tok.newline_before:
                self.advance()
                if self.accept(".."):
                    self.expect("]")
                    node = Node("slice", children=[node], span=node.span, full=True)
                    continue
                index = self.parse_expr()
                self.expect("]")
                if index.kind == "binary-op" and index.text == "..":
                    node = Node("slice", children=[node] + index.children, span=node.span, full=False)
                else:
                    node = Node("index", children=[node, index], span=node.span)
            elif self.at(".") and self.peek().kind == "identifier":
                self.advance()
                field = self.advance()
                if field.text in ("First", "Last"):
                    node = Node("attribute", field.text, [node], span=field.span)
                else:
                    node = Node("selected", field.text, [node], span=field.span)
            else:
                return node

    def parse_args(self) -> List[Node]:
        self.expect("(")
        args = []
        saved, self.no_gt = self.no_gt, 0
        try:
            while not self.at(")"):
                tok = self.tok
                if tok.kind == "identifier" and self.peek().text == "=>":
                    self.advance()
                    self.advance()
                    args.append(Node("named-arg", tok.text, [self.parse_expr()], span=tok.span))
                else:
                    args.append(self.parse_expr())
                if not self.accept(","):
                    break
            self.expect(")")
        finally:
            self.no_gt = saved
        return args

    def parse_primary(self) -> Node:
        tok = self.tok
        span = tok.span
        if tok.kind == "identifier" or (tok.kind == "identifier" and tok.text.startswith("@")):
            parts = [self.advance()]
            while self.at("::") and self.peek().kind in ("identifier", "string-lit"):
                self.advance()
                parts.append(self.advance())
            if self.at("::") and self.peek().text == "(":
                self.advance()
                qual_type = Node("type", parts[-1].text, span=span, optional=False,
                                 qual="::".join(p.text for p in parts[:-1]) or None, actuals=[], generic=False)
                return self.parse_record(qual_type)
            last = parts[-1]
            qual = "::".join(p.text for p in parts[:-1]) or None
            if last.kind == "string-lit":
                return Node("name", last.value, span=span, quoted=True, qual=qual)
            return Node("name", last.text, span=span, quoted=False, qual=qual)
        if tok.kind == "integer-lit":
            self.advance()
            return Node("literal", tok.text, span=span, lit="int", value=tok.value)
        if tok.kind == "real-lit":
            self.advance()
            return Node("literal", tok.text, span=span, lit="real", value=tok.value)
        if tok.kind == "char-lit":
            self.advance()
            return Node("literal", tok.text, span=span, lit="char", value=tok.value)
        if tok.kind == "enum-lit":
            self.advance()
            return Node("literal", tok.text, span=span, lit="enum", value=tok.value)
        if tok.kind == "string-lit":
            self.advance()
            if self.at("(") and not self.tok.newline_before:
                return Node("name", tok.value, span=span, quoted=True, qual=None)
            return Node("literal", tok.text, span=span, lit="string", value=tok.value)
        if self.accept("null"):
            return Node("literal", "null", span=span, lit="null", value=None)
        if self.at("("):
            if self.peek().kind == "identifier" and self.peek(2).text in ("=>", "<=="):
                self.advance()
                return self.parse_record(None, opened=True, span=span)
            self.advance()
            saved, self.no_gt = self.no_gt, 0
            try:
                inner = self.parse_expr()
            finally:
                self.no_gt = saved
            self.expect(")")
            return inner
        if self.at("["):
            return self.parse_bracket_aggregate()
        if self.accept("|"):
            inner = self.parse_range()
            self.expect("|")
            return Node("magnitude", children=[inner], span=span)
        self.fail({"identifier", "literal", "(", "[", "|"}, message=None)

    def parse_record(self, qual_type: Optional[Node], opened: bool = False, span: Optional[Span] = None) -> Node:
        span = span or self.tok.span
        if not opened:
            self.expect("(")
        pairs = []
        saved, self.no_gt = self.no_gt, 0
        try:
            while not self.at(")"):
                field = self.expect_identifier()
                op = self.expect("=>", "<==").text
                pairs.append(Node("pair", field.text, [self.parse_expr()], span=field.span, move=op == "<=="))
                if not self.accept(","):
                    break
            self.expect(")")
        finally:
            self.no_gt = saved
        return Node("record", children=pairs, span=span, qual=qual_type)

    def parse_bracket_aggregate(self) -> Node:
        span = self.expect("[").span
        saved, self.no_gt = self.no_gt, 0
        try:
            if self.at("for"):
                self.advance()
                self.expect("each")
                var = self.expect_identifier().text
                self.expect("of")
                container = self.parse_expr()
                cond = self.parse_condition() if self.at("{") else None
                self.expect("=>")
                value = self.parse_expr()
                self.expect("]")
                comp = Node("comprehension", var, span=span, container=container, filter=cond, value=value)
                return Node("aggregate", children=[comp], span=span)
            elements = []
            while not self.at("]"):
                elem = self.parse_expr()
                if self.accept("=>"):
                    elem = Node("pair", None, [elem, self.parse_expr()], span=elem.span, move=False)
                elements.append(elem)
                if not self.accept(","):
                    break
            self.expect("]")
        finally:
            self.no_gt = saved
        return Node("aggregate", children=elements, span=span)


def _wrap(fn, tokens: List[Token]):
    parser = Parser(tokens)
    try:
        return parser, fn(parser)
    except ParseError as e:
        raise DiagnosticError([e.diagnostic])


def parse_unit(tokens: List[Token]) -> Node:
    """
    Parse a compilation unit

    Args:
        tokens: Output of tokenize

    Returns:
        A unit node holding modules and stand-alone operations

    Raises:
        DiagnosticError: On the first syntax error
    """
    _, unit = _wrap(lambda p: p.parse_unit(), tokens)
    return unit


def parse_expression(tokens: List[Token]) -> Node:
    """Parse a single expression spanning the whole token list"""
    def run(p: Parser) -> Node:
        expr = p.parse_expr()
        if not p.tok.is_eof:
            p.fail({"end of input"})
        return expr
    _, expr = _wrap(run, tokens)
    return expr


def parse_statements(tokens: List[Token]) -> Node:
    """Parse a statement sequence spanning the whole token list (REPL input)"""
    def run(p: Parser) -> Node:
        body = p.parse_sequence()
        if not p.tok.is_eof:
            p.fail({"end of input"})
        return body
    _, body = _wrap(run, tokens)
    return body


def parse_source(source: str, file: Optional[str] = None) -> Node:
    """Tokenize and parse a whole source text"""
    unit = parse_unit(tokenize(source, file))
    logger.debug(f"Parsed {file or '<input>'}: {len(unit.children)} declarations")
    return unit
