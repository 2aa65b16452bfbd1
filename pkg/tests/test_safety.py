import glob
import os
import sys

import pytest

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from conftest import CORPUS_DIR
from errors import RuntimeFault

NEGATIVE = sorted(glob.glob(os.path.join(CORPUS_DIR, "negative", "*.psl")))
POSITIVE = sorted(glob.glob(os.path.join(CORPUS_DIR, "positive", "*.psl")))

# Printed output of each positive program's main()
POSITIVE_OUTPUT = {
    "map_usage": "size 2\nM[1] = 10\n2 removed\n",
    "set_usage": "count 3\ntotal 84\n",
    "vector_usage": "length 10\nlast 25\n",
    "locked_box_simple": "got 42\n",
    "integer_range": "s 6\n",
    "ordering": "3 < 4\n4 > 3\n4 = 4\n",
    "parallel_sum": "sum 5050\n",
    "linked_list": "length 3\n",
    "expression_functions": "squares 30\n",
    "concurrent_counter": "count 3\n",
    "while_loop": "gcd 12\nmod 2\n",
    "slices": "".join(f"A[{i}] = {v}\n" for i, v in enumerate([10, 50, 40, 30, 20, 60], 1)),
}


def read(path: str) -> str:
    with open(path, encoding="utf-8") as f:
        return f.read()


def expected_code(source: str) -> str:
    first = source.splitlines()[0]
    assert first.startswith("// expect:"), "corpus files start with an expect line"
    return first.split(":", 1)[1].strip()


def test_corpus_is_present():
    assert len(NEGATIVE) >= 12
    assert len(POSITIVE) >= 12


@pytest.mark.parametrize("path", NEGATIVE, ids=os.path.basename)
def test_negative_program_is_rejected_with_its_code(path, check_source):
    source = read(path)
    code = expected_code(source)
    errors = [d for d in check_source(source, path) if d.is_error]
    assert errors, f"{os.path.basename(path)} was accepted"
    assert code in {d.code for d in errors}, [d.render() for d in errors]


@pytest.mark.parametrize("path", POSITIVE, ids=os.path.basename)
def test_positive_program_is_accepted(path, check_source):
    source = read(path)
    assert expected_code(source) == "OK"
    errors = [d for d in check_source(source, path) if d.is_error]
    assert errors == [], [d.render() for d in errors]


@pytest.mark.parametrize("name", sorted(POSITIVE_OUTPUT))
def test_positive_program_output(name, run_source):
    path = os.path.join(CORPUS_DIR, "positive", f"{name}.psl")
    assert run_source(read(path), path) == POSITIVE_OUTPUT[name]


def test_diagnostic_rendering_format(check_source):
    diagnostics = check_source("var Counter := 0\n\nfunc Bump() is\n    Counter := Counter + 1\nend func Bump\n",
                               "g.psl")
    rendered = [d.render() for d in diagnostics if d.code == "GLOBAL_VAR"]
    assert rendered
    assert rendered[0].startswith("g.psl:4:")
    assert "error[GLOBAL_VAR]" in rendered[0]


def test_null_test_on_a_required_object_is_a_warning(check_source):
    source = """
func main() is
    var X : Univ_Integer := 3
    if X is null then
        Println("never")
    end if
end func main
"""
    diagnostics = check_source(source, "n.psl")
    assert "OPT_TEST_CONST" in {d.code for d in diagnostics}
    assert not [d for d in diagnostics if d.is_error]


# Checks that can only fail while running

OVERLAPPING_BRANCHES = """
type Int_Array is Basic_Array<Univ_Integer>

func Fill_Two(var A : Int_Array; I : Univ_Integer; J : Univ_Integer) is
    block
        A[I] := 10
      ||
        A[J] := 20
    end block
end func Fill_Two

func main() is
    var A : Int_Array := Create(4, 0)
    Fill_Two(A, 1, 3)
    Println("A[3] = " | A[3])
    Fill_Two(A, 2, 2)
end func main
"""

LOCKED_REENTRY = """
concurrent interface Counter<> is
    func Create() -> Counter
    func Bump(locked var C : Counter)
    func Value(locked C : Counter) -> Univ_Integer
end interface Counter

concurrent class Counter is
    var Count : Univ_Integer
  exports
    func Create() -> Counter is
        return (Count => 0)
    end func Create

    func Bump(locked var C : Counter) is
        const Before := Value(C)
        C.Count := Before + 1
    end func Bump

    func Value(locked C : Counter) -> Univ_Integer is
        return C.Count
    end func Value
end class Counter

func main() is
    var C : Counter := Create()
    Bump(C)
end func main
"""


def test_parallel_branches_overlapping_at_run_time_fault(session):
    session.load_source(OVERLAPPING_BRANCHES, "overlap.psl")
    with pytest.raises(RuntimeFault) as info:
        session.run_main()
    assert info.value.code == "DISJOINT_FAIL"
    assert session.out.getvalue() == "A[3] = 20\n"


def test_locked_operation_reentering_its_object_faults(session):
    session.load_source(LOCKED_REENTRY, "reentry.psl")
    with pytest.raises(RuntimeFault) as info:
        session.run_main()
    assert info.value.code == "SYNC_REENTRY"


POSTCONDITION_SOURCE = """
func Clamp(X : Univ_Integer) -> Result : Univ_Integer {Result <= 10} is
    Result := X
end func Clamp

func main() is
    Println("c " | Clamp(4))
    Println("c " | Clamp(40))
end func main
"""


def test_postcondition_is_checked_on_return(session):
    session.load_source(POSTCONDITION_SOURCE, "post.psl")
    with pytest.raises(RuntimeFault) as info:
        session.run_main()
    assert info.value.code == "POSTCONDITION"
    assert "Clamp" in info.value.message
    assert session.out.getvalue() == "c 4\n"


# Run-time check annotations

CHECKED_SOURCE = """
type Small is Integer<1 .. 10>

func Half(N : Univ_Integer) {N mod 2 == 0} -> Univ_Integer is (N / 2)

func main() is
    var S : Small := 5
    var Name : Univ_String := "x"
    Println("half " | Half(6))
    S := S + 1
    Println("half " | Half(7))
end func main
"""


def main_body(session):
    return next(b for b in session.resolver.bodies if b.op is not None and b.op.name == "main")


def main_nodes(session, kind: str):
    body = main_body(session).decl.get("body")
    return [n for n in body.walk() if n.kind == kind]


def calls_named(session, name: str):
    return [n for n in main_nodes(session, "call") if n.children and n.children[0].text == name]


def test_checks_are_kept_only_where_they_can_fail(session):
    session.load_source(CHECKED_SOURCE, "checked.psl")
    decls = {n.text: n for n in main_nodes(session, "decl")}
    assert decls["S"].ann["range_check"] is True
    assert decls["Name"].ann["range_check"] is False
    assert [n.ann["check_pre"] for n in calls_named(session, "Half")] == [True, True]
    assert not any(n.ann.get("check_pre") for n in calls_named(session, "Println"))


def test_precondition_marked_on_a_call_is_enforced(session):
    session.load_source(CHECKED_SOURCE, "checked.psl")
    with pytest.raises(RuntimeFault) as info:
        session.run_main()
    assert info.value.code == "PRECONDITION"
    assert session.out.getvalue() == "half 3\n"


def test_call_without_a_precondition_mark_skips_the_check(session):
    session.load_source(CHECKED_SOURCE, "checked.psl")
    calls_named(session, "Half")[1].ann["check_pre"] = False
    session.run_main()
    assert session.out.getvalue() == "half 3\nhalf 3\n"
