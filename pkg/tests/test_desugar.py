import glob
import os
import re
import sys
from unittest.mock import MagicMock

import pytest

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from ast_nodes import Node
from builtin_catalog import compare_scalars
from config import settings
from desugar import (desugar, desugar_comparison, desugar_literal, reset_generated_names, sugar_kinds_in)
from lexer import tokenize
from pretty_printer import pretty_print
from store import EQUAL, GREATER, LESS, UNORDERED
from syntax_parser import parse_expression, parse_source, parse_statements

GOLDEN_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "golden")
GENERATED = re.compile(r"@([A-Za-z]+)\d+")


def normalize(text: str) -> str:
    return GENERATED.sub(r"@\1", text.strip())


def desugared(source: str) -> str:
    reset_generated_names()
    return pretty_print(desugar(parse_statements(tokenize(source))))


@pytest.mark.parametrize("name", sorted(os.path.splitext(os.path.basename(p))[0]
                                        for p in glob.glob(os.path.join(GOLDEN_DIR, "*.psl"))))
def test_golden(name):
    with open(os.path.join(GOLDEN_DIR, f"{name}.psl"), encoding="utf-8") as f:
        source = f.read()
    with open(os.path.join(GOLDEN_DIR, f"{name}.expected"), encoding="utf-8") as f:
        expected = f.read()
    assert normalize(desugared(source)) == normalize(expected)


def test_generated_names_restart_after_reset():
    first = desugared("S := [1]")
    second = desugared("S := [1]")
    assert first == second
    assert "@T1" in first


def test_comparison_expansion_shape():
    lhs, rhs = Node("name", "A"), Node("name", "B")
    node = desugar_comparison("<=", lhs, rhs)
    assert node.kind == "in-set"
    assert not node.get("negated")
    assert node.children[0].text == "=?"
    assert [m.text for m in node.children[1:]] == ["#less", "#equal"]
    assert desugar_comparison("!=", lhs, rhs).get("negated")


def test_literal_conversion_is_qualified():
    lit = parse_expression(tokenize("20"))
    assert pretty_print(desugar_literal(lit, "Small")) == 'Small::"from_univ"(20)'


def test_nested_sugar_is_rewritten_inside_out():
    text = pretty_print(desugar(parse_expression(tokenize("|A[I]| < B[J]"))))
    assert text == '("magnitude"("indexing"(A, I)) =? "indexing"(B, J)) in [#less]'


@pytest.mark.parametrize("path", sorted(glob.glob(os.path.join(settings.programs_dir, "*.psl"))
                                        + glob.glob(os.path.join(settings.lib_dir, "*.psl"))),
                         ids=os.path.basename)
def test_no_sugar_survives(path):
    with open(path, encoding="utf-8") as f:
        unit = desugar(parse_source(f.read(), path))
    assert sugar_kinds_in(unit) == []


# Ordering truth table

TRUTH = {
    #       less   equal  greater unordered
    "==": (False, True, False, False),
    "!=": (True, False, True, True),
    "<": (True, False, False, False),
    "<=": (True, True, False, False),
    ">": (False, False, True, False),
    ">=": (False, True, True, False),
}
OUTCOMES = ("#less", "#equal", "#greater", "#unordered")


@pytest.mark.parametrize("op", sorted(TRUTH))
def test_expansion_truth_table_with_stub_compare(op):
    compare = MagicMock()
    node = desugar_comparison(op, Node("name", "A"), Node("name", "B"))
    members = {m.text for m in node.children[1:]}
    for outcome, expected in zip(OUTCOMES, TRUTH[op]):
        compare.return_value = outcome
        result = (compare("A", "B") in members) != bool(node.get("negated"))
        assert result is expected, f"{op} with {outcome}"
    assert compare.call_count == len(OUTCOMES)


@pytest.mark.parametrize("left,right,outcome", [(1, 2, LESS), (2, 2, EQUAL), (3, 2, GREATER),
                                                ("a", "b", LESS), (1.0, float("nan"), UNORDERED)])
def test_builtin_three_way_compare(left, right, outcome):
    assert compare_scalars(left, right) is outcome


@pytest.mark.parametrize("text,expected", [
    ("3 < 4", True), ("4 < 3", False), ("4 <= 4", True), ("5 >= 6", False),
    ("5 == 5", True), ("5 != 5", False), ('"abc" < "abd"', True), ("(3 =? 4) == #less", True),
])
def test_relational_operators_evaluate_through_compare(text, expected, session):
    assert session.evaluate_line(text) == expected
