import glob
import os
import sys

import pytest

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import settings
from errors import DiagnosticError
from lexer import tokenize
from pretty_printer import pretty_print
from syntax_parser import parse_expression, parse_source, parse_statements


def expr_text(source: str) -> str:
    return pretty_print(parse_expression(tokenize(source)))


def first_code(fn, *args) -> str:
    with pytest.raises(DiagnosticError) as info:
        fn(*args)
    return info.value.diagnostics[0].code


# Lexer

def test_token_kinds():
    tokens = tokenize('func F(X : Univ_Integer) -> Univ_String is ("a" | #less | \'c\' | 2.5)')
    kinds = {t.text: t.kind for t in tokens if not t.is_eof}
    assert kinds["func"] == "keyword"
    assert kinds["Univ_Integer"] == "identifier"
    assert kinds["->"] == "operator"
    assert kinds["#less"] == "enum-lit"
    assert kinds['"a"'] == "string-lit"
    assert kinds["'c'"] == "char-lit"
    assert kinds["2.5"] == "real-lit"
    assert tokens[-1].is_eof


def test_integer_literal_forms():
    values = [t.value for t in tokenize("1_000 16#FF# 2#1010# 0x1f") if not t.is_eof]
    assert values == [1000, 255, 10, 31]


def test_longest_operator_wins():
    texts = [t.text for t in tokenize("A <== B <=> C <= D =? E || F |= G") if t.kind == "operator"]
    assert texts == ["<==", "<=>", "<=", "=?", "||", "|="]


def test_spans_track_lines_and_columns():
    tokens = tokenize("X :=\n   Y + 1", "f.psl")
    y = next(t for t in tokens if t.text == "Y")
    assert (y.span.file, y.span.line, y.span.col) == ("f.psl", 2, 4)
    assert y.newline_before


def test_comments_are_skipped():
    assert [t.text for t in tokenize("X // trailing words\nY") if not t.is_eof] == ["X", "Y"]


def test_unterminated_string():
    assert first_code(tokenize, 'Println("no end)') == "LEX_UNTERMINATED"


def test_generated_names_are_rejected_in_sources():
    assert first_code(tokenize, "X := @T1") == "LEX_ILLEGAL_CHAR"
    assert [t.text for t in tokenize("@T1", allow_generated=True) if not t.is_eof] == ["@T1"]


# Parser

def test_precedence_is_kept_by_the_printer():
    assert expr_text("A + B * C") == "A + B * C"
    assert expr_text("(A + B) * C") == "(A + B) * C"
    assert expr_text("A - (B - C)") == "A - (B - C)"
    assert expr_text("X in 1 .. N and Y not null") == "X in 1 .. N and Y not null"


def test_chained_comparison_is_rejected():
    assert first_code(parse_expression, tokenize("A < B < C")) == "CHAINED_COMPARE"


def test_parenthesized_comparison_is_accepted():
    assert expr_text("(A < B) == C") == "(A < B) == C"


def test_mismatched_end_name():
    source = "func F() is\n    return\nend func G\n"
    assert first_code(parse_source, source) == "END_NAME"


def test_syntax_error_location():
    with pytest.raises(DiagnosticError) as info:
        parse_source("func F( is\nend func F\n", "bad.psl")
    diag = info.value.diagnostics[0]
    assert diag.code == "SYNTAX"
    assert diag.render().startswith("bad.psl:1:")


def test_statement_forms():
    body = parse_statements(tokenize(
        "var X := 1\n"
        "X += 2\n"
        "A[I] <=> A[J]\n"
        "for I in 1 .. 3 reverse loop\n"
        "    Println(I)\n"
        "end loop\n"))
    assert [s.kind for s in body.children] == ["decl", "assign", "swap", "for-in-range"]
    assert body.children[3].get("direction") == "reverse"


@pytest.mark.parametrize("keyword", ["while", "until"])
def test_condition_loops_keep_their_keyword(keyword):
    body = parse_statements(tokenize(f"{keyword} X < 10 loop\n    X += 1\nend loop\n"))
    loop = body.children[0] if body.kind == "block" else body
    assert loop.kind == "loop-until"
    assert loop.get("loop_kind") == keyword
    assert pretty_print(body).startswith(f"{keyword} X < 10 loop")


def test_generic_formals():
    unit = parse_source("interface Table<Key_Type is Hashable<>; Size : Univ_Integer := 8> is\n"
                        "    func Create() -> Table\n"
                        "end interface Table\n")
    formals = unit.children[0].get("formals")
    assert [(f.text, f.get("formal_kind")) for f in formals] == [("Key_Type", "type"), ("Size", "value")]
    assert formals[1].get("default") is not None
    printed = pretty_print(unit)
    assert "Key_Type is Hashable<>" in printed
    assert "Size: Univ_Integer := 8" in printed


def test_parallel_and_then_groups():
    body = parse_statements(tokenize("A := 1 || B := 2 then C := A + B"))
    text = pretty_print(body)
    assert "||" in text
    assert "then" in text


def test_bare_return_before_newline():
    unit = parse_source("func F() is\n    return\n    Println(\"x\")\nend func F\n")
    stmts = unit.children[0].get("body").children
    assert stmts[0].kind == "return"
    assert not stmts[0].children


def test_trailing_semicolons_are_accepted():
    unit = parse_source("func F() is\n    Println(\"x\");\nend func F;\n")
    assert unit.children[0].text == "F"


@pytest.mark.parametrize("path", sorted(glob.glob(os.path.join(settings.programs_dir, "*.psl"))),
                         ids=os.path.basename)
def test_printed_programs_reparse_to_the_same_text(path):
    with open(path, encoding="utf-8") as f:
        printed = pretty_print(parse_source(f.read(), path))
    assert pretty_print(parse_source(printed, path)) == printed
