import io
import os
import sys
from collections import Counter

import pytest

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from concurrent_objects import check_event_log
from conftest import make_settings
from corpus import (lcg_values, library_paths, map_operations, oracle_map, oracle_sort, program_names,
                    program_path)
from errors import RuntimeFault
from interpreter import Interpreter
from models import SyncEvent
from session import Session


def run_named(name: str, **overrides) -> str:
    out = io.StringIO()
    session = Session(make_settings(**overrides), out=out)
    try:
        session.load_file(program_path(name))
        session.run_main()
    finally:
        session.close()
    return out.getvalue()


@pytest.fixture
def program_session():
    """Session with one example program loaded"""
    sessions = []

    def load(name: str, **overrides) -> Session:
        session = Session(make_settings(**overrides), out=io.StringIO())
        session.load_file(program_path(name))
        sessions.append(session)
        return session

    yield load
    for session in sessions:
        session.close()


def test_bundled_programs():
    assert {"quicksort", "qsort", "search", "locked_box_stress", "racing_return"} <= set(program_names())


def test_library_units_are_checked_as_one_group():
    session = Session(make_settings(), out=io.StringIO(), with_library=False)
    try:
        sources = []
        for path in reversed(library_paths(session.settings.lib_dir)):
            with open(path, encoding="utf-8") as f:
                sources.append((f.read(), path))
        found = session.load_sources(sources)
        assert not [d for d in found if d.is_error]
        assert {"Hash_Table", "Set", "Map", "Vector", "Locked_Box"} <= set(session.program.modules)
    finally:
        session.close()


# Sorting

def test_quicksort_program_output():
    expected = oracle_sort(lcg_values(12345, 25, 1000))
    lines = [f"A[{i}] = {v}" for i, v in enumerate(expected, 1)]
    assert run_named("quicksort").splitlines() == lines


def test_qsort_program_output():
    expected = oracle_sort(lcg_values(4242, 30, 100))
    lines = [f"V[{i}] = {v}" for i, v in enumerate(expected, 1)]
    assert run_named("qsort").splitlines() == lines


@pytest.mark.parametrize("values", [
    [],
    [1],
    [2, 1],
    [5, 5, 5, 5],
    list(range(40, 0, -1)),
    lcg_values(99, 200, 50),
    lcg_values(7, 1000, 1000000),
])
def test_quicksort_matches_host_sort(values, program_session):
    session = program_session("quicksort")
    array = session.from_host(values, "Array_Type")
    session.call("Quicksort", array)
    assert session.to_host(array) == oracle_sort(values)


# Search

def test_search_program_matches_host_walk():
    keys = set(lcg_values(777, 40, 500))
    expected = []
    for desired in (0, 3, 30, 300, 301, 1497):
        found = desired // 3 if desired % 3 == 0 and desired // 3 in keys else None
        expected.append(f"Search({desired}) = {'null' if found is None else found}")
    assert run_named("search").splitlines() == expected


# Racing returns

def test_racing_returns_have_one_winner():
    assert run_named("racing_return", servers=4) == "race winners in range: 200\npaired winners valid: 200\n"


# Map differential

def drive_map(session, count: int, key_space: int, seed: int):
    """Mirror random operations on an interpreted Map and the host oracle, comparing every 100 ops"""
    session.load_source("type Int_Map is Map<Univ_Integer, Univ_Integer>\n", "<map-test>")
    session.evaluate_line("var M : Int_Map := []")
    oracle = oracle_map()
    for step, (op, key, value) in enumerate(map_operations(count, key_space, seed=seed), 1):
        if op == "insert":
            session.evaluate_line(f"M |= (Key => {key}, Value => {value})")
            oracle.insert(key, value)
        elif op == "remove":
            session.evaluate_line(f"M -= {key}")
            oracle.remove(key)
        else:
            assert session.evaluate_line(f"{key} in M") == oracle.contains(key)
            if oracle.contains(key):
                assert session.evaluate_line(f"M[{key}]") == oracle.lookup(key)
        if step % 100 == 0:
            assert session.evaluate_line("|M|") == len(oracle)
            assert session.evaluate_line("Is_Well_Formed(M)") == True  # noqa: E712
    for key in range(key_space):
        assert session.evaluate_line(f"{key} in M") == oracle.contains(key)
    for key in oracle.keys():
        assert session.evaluate_line(f"M[{key}]") == oracle.lookup(key)


def test_map_against_oracle(session):
    drive_map(session, 400, 40, seed=5)


@pytest.mark.slow
def test_map_against_oracle_full(session):
    drive_map(session, 10000, 2000, seed=17)


def test_map_lookup_of_absent_key_faults(session):
    session.load_source("type Int_Map is Map<Univ_Integer, Univ_Integer>\n", "<map-test>")
    session.evaluate_line("var M : Int_Map := []")
    session.evaluate_line("M |= (Key => 1, Value => 2)")
    with pytest.raises(RuntimeFault) as info:
        session.evaluate_line("M[3]")
    assert info.value.code == "PRECONDITION"


# Objects declared for an anchor

ANCHORED_SOURCE = """
type Int_Vector is Vector<Univ_Integer>

func Scratch(var V : Int_Vector) is
    var Tmp : Int_Vector for V := []
    Tmp |= 5
    Tmp |= 6
end func Scratch

func Keep(var V : Int_Vector) is
    var Tmp : Int_Vector for V := []
    Tmp |= 7
    V <== Tmp
end func Keep
"""


def test_anchored_object_does_not_leak_into_the_anchor_region(session):
    session.load_source(ANCHORED_SOURCE, "<anchored>")
    session.evaluate_line("var Big : Int_Vector := []")
    store = session.interpreter.store
    before = store.live_objects
    session.evaluate_line("Scratch(Big)")
    assert store.live_objects == before
    assert store.check_conservation()
    assert session.evaluate_line("|Big|") == 0


def test_anchored_object_moved_into_its_anchor_survives(session):
    session.load_source(ANCHORED_SOURCE, "<anchored>")
    session.evaluate_line("var Big : Int_Vector := []")
    session.evaluate_line("Keep(Big)")
    assert session.evaluate_line("|Big|") == 1
    assert session.evaluate_line("Big[1]") == 7


# Faults inside a bag loop

COUNT_UP_SOURCE = """
func Count_Up(N : Univ_Integer) is
    for I => 1 while I <= N loop
        continue loop with I => I + 1
    end loop
end func Count_Up
"""


def test_bag_loop_fault_after_spawning_still_exits_its_region(session, monkeypatch):
    session.load_source(COUNT_UP_SOURCE, "<count-up>")
    store = session.interpreter.store
    regions_before = len(store.live_regions)
    objects_before = store.live_objects
    drained = []

    def spawned_iteration():
        drained.append(True)
        return None
        yield

    def iteration_then_fault(self, state, binding):
        self.store.new_array(None, [binding], 1, state.region)
        self._spawn(state.env, state.master, spawned_iteration(), "iteration")
        raise RuntimeFault("PRECONDITION", "iteration fault")
        yield

    monkeypatch.setattr(Interpreter, "_iteration", iteration_then_fault)
    with pytest.raises(RuntimeFault) as info:
        session.call("Count_Up", 3)
    assert info.value.code == "PRECONDITION"
    assert drained == [True]
    assert len(store.live_regions) == regions_before
    assert store.live_objects == objects_before
    assert store.check_conservation()


# Locked_Box producers and consumers

def expected_items(producers: int, per_worker: int) -> Counter:
    return Counter(p * 1000000 + s for p in range(1, producers + 1) for s in range(1, per_worker + 1))


def test_locked_box_small_stress(program_session):
    session = program_session("locked_box_stress", servers=4)
    items = session.call("Run_Stress", 3, 100)
    assert Counter(items) == expected_items(3, 100)


@pytest.mark.slow
def test_locked_box_full_stress(program_session):
    session = program_session("locked_box_stress", servers=4)
    items = session.call("Run_Stress", 8, 1000)
    assert len(items) == 8000
    assert Counter(items) == expected_items(8, 1000)


def test_locked_box_event_log_is_well_formed(program_session):
    session = program_session("locked_box_stress", servers=4, debug_sync=True, debug_checks=True)
    items = session.call("Run_Stress", 2, 50)
    assert Counter(items) == expected_items(2, 50)
    lines = session.sync_events()
    assert lines
    events = [SyncEvent.parse(line) for line in lines]
    assert {e.op for e in events} >= {"Put", "Get", "Add"}
    assert check_event_log(events) == []


# Determinism

@pytest.mark.parametrize("name", ["quicksort", "qsort", "search"])
def test_output_does_not_depend_on_server_count(name):
    sequential = run_named(name, sequential=True, servers=1)
    for servers in (1, 2, 4):
        assert run_named(name, servers=servers) == sequential


def test_stats_after_a_parallel_run(program_session):
    session = program_session("quicksort", servers=2)
    session.run_main()
    stats = session.stats()
    assert stats["picothreads_spawned"] > 0
    assert stats["picothreads_spawned"] == stats["picothreads_executed"] + stats["picothreads_terminated"]
    assert stats["servers"] == 2
