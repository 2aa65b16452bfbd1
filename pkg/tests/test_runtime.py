import os
import sys
import threading
from unittest.mock import MagicMock

import pytest

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from concurrent_objects import ConcurrentObject, held_objects
from errors import InternalFault, RuntimeFault
from store import Cell, SlotLoc, Store
from work_stealing import Await, Master, Park, Scheduler, run_sync


@pytest.fixture
def store():
    return Store()


@pytest.fixture
def desc():
    mock = MagicMock()
    mock.name = "Node"
    return mock


# Store

def test_allocation_and_bulk_release_conserve_counts(store, desc):
    root = store.region_enter()
    inner = store.region_enter(root)
    for _ in range(5):
        store.new_composite(desc, [1, None], inner)
    outer = store.new_composite(desc, [None, None], root)
    assert store.live_objects == 6
    assert store.check_conservation()

    store.region_exit(inner)
    assert store.live_objects == 1
    assert store.check_conservation()

    store.release(outer)
    store.region_exit(root)
    stats = store.stats()
    assert stats.live_objects == 0
    assert stats.allocated == stats.released == 6
    assert stats.peak_live_objects == 6


def test_release_frees_the_whole_tree(store, desc):
    region = store.region_enter()
    leaf = store.new_composite(desc, [1], region)
    parent = store.new_array(desc, [leaf, None, 3], 1, region)
    store.release(parent)
    assert store.live_objects == 0
    assert parent.region is None and leaf.region is None
    assert store.check_conservation()


def test_copy_into_another_region_is_deep(store, desc):
    a = store.region_enter()
    b = store.region_enter()
    leaf = store.new_composite(desc, [7], a)
    tree = store.new_composite(desc, [leaf], a)
    copied = store.copy(tree, b)
    assert copied is not tree and copied.slots[0] is not leaf
    assert copied.region is b and copied.slots[0].region is b
    assert store.live_objects == 4
    assert store.check_conservation()


def test_move_leaves_source_null_and_keeps_live_count(store, desc):
    a = store.region_enter()
    b = store.region_enter()
    src = Cell(store.new_composite(desc, [1], a), a)
    dest = Cell(None, b)
    store.move_into(dest, src)
    assert src.get() is None
    assert dest.get().region is b
    assert store.live_objects == 1
    assert store.check_conservation()


def test_swap_in_one_region_allocates_nothing(store, desc):
    region = store.region_enter()
    holder = store.new_array(desc, [store.new_composite(desc, [1], region),
                                    store.new_composite(desc, [2], region)], 1, region)
    first, second = holder.slots
    allocated = store.allocated
    store.swap(SlotLoc(holder, 0), SlotLoc(holder, 1))
    assert holder.slots == [second, first]
    assert store.allocated == allocated


def test_overwrite_releases_the_old_value(store, desc):
    region = store.region_enter()
    cell = Cell(store.new_composite(desc, [1], region), region)
    store.assign_copy(cell, store.new_composite(desc, [2], region), fresh=True)
    assert cell.get().slots == [2]
    assert store.live_objects == 1


def test_null_into_required_object(store):
    region = store.region_enter()
    cell = Cell(5, region, optional=False)
    with pytest.raises(RuntimeFault) as info:
        store.assign_copy(cell, None)
    assert info.value.code == "NULL_INTO_REQUIRED"


def test_parent_region_cannot_exit_before_child(store, desc):
    root = store.region_enter()
    child = store.region_enter(root)
    store.new_composite(desc, [], child)
    store.new_composite(desc, [], root)
    with pytest.raises(InternalFault):
        store.region_exit(root)


def test_object_declared_for_an_anchor_is_nulled_at_scope_exit(store, desc):
    anchor = store.region_enter()
    scope = store.region_enter(anchor)
    leaf = store.new_composite(desc, [1], anchor)
    cell = Cell(store.new_composite(desc, [leaf], anchor), anchor, name="Tmp")
    store.declare_for(cell, scope)
    assert cell.anchored
    assert anchor.live_count == 2

    store.region_exit(scope)
    assert cell.get() is None
    assert anchor.live_count == 0
    assert store.check_conservation()


def test_object_moved_away_from_its_anchor_cell_survives(store, desc):
    anchor = store.region_enter()
    scope = store.region_enter(anchor)
    cell = Cell(store.new_composite(desc, [1], anchor), anchor)
    store.declare_for(cell, scope)
    keeper = Cell(None, anchor)
    store.move_into(keeper, cell)

    store.region_exit(scope)
    assert keeper.get() is not None
    assert anchor.live_count == 1


def test_anchor_in_the_same_scope_is_a_plain_declaration(store, desc):
    region = store.region_enter()
    cell = Cell(store.new_composite(desc, [1], region), region)
    store.declare_for(cell, region)
    assert not cell.anchored
    assert region.anchored is None


# Scheduler

def racing_child(master: Master, value: int, winners: list, lock: threading.Lock):
    won = master.claim(value)
    with lock:
        winners.append(won)
    return None
    yield


def racing_root(scheduler: Scheduler, master: Master, width: int, winners: list):
    lock = threading.Lock()
    for i in range(1, width + 1):
        scheduler.spawn(master, racing_child(master, i, winners, lock), label=f"child-{i}")
    yield Await(master)
    return master.outcome


@pytest.mark.parametrize("servers", [1, 2, 4])
def test_exactly_one_claim_wins(servers):
    scheduler = Scheduler(servers=servers, seed=3)
    master = Master()
    winners = []
    outcome = scheduler.run(racing_root(scheduler, master, 64, winners))
    assert 1 <= outcome <= 64
    assert winners.count(True) == 1
    assert len(winners) == 64
    assert master.claims == 1
    assert master.outstanding == 0
    assert scheduler.no_lost_work()


def summing_child(scheduler: Scheduler, depth: int, out: list, lock: threading.Lock):
    if depth == 0:
        with lock:
            out.append(1)
        return
    master = Master()
    for _ in range(2):
        scheduler.spawn(master, summing_child(scheduler, depth - 1, out, lock))
    yield Await(master)


def test_nested_fork_join_runs_every_leaf():
    scheduler = Scheduler(servers=4, seed=11)
    leaves = []
    scheduler.run(summing_child(scheduler, 8, leaves, threading.Lock()))
    assert len(leaves) == 2 ** 8
    stats = scheduler.stats()
    assert stats.picothreads_spawned == 2 ** 9 - 2
    assert scheduler.no_lost_work()
    assert stats.servers == 4


def test_sequential_mode_uses_one_server():
    scheduler = Scheduler(servers=4, sequential=True)
    leaves = []
    scheduler.run(summing_child(scheduler, 4, leaves, threading.Lock()))
    assert len(leaves) == 16
    assert scheduler.stats().servers == 1
    assert scheduler.steals == 0


def test_root_exception_propagates():
    def failing():
        raise RuntimeFault("PRECONDITION", "boom")
        yield

    with pytest.raises(RuntimeFault) as info:
        Scheduler(servers=2).run(failing())
    assert info.value.code == "PRECONDITION"


def test_parked_forever_is_a_deadlock():
    def waiting():
        yield Park(lambda item: None)

    with pytest.raises(RuntimeFault) as info:
        Scheduler(servers=2, deadlock_grace_ms=100).run(waiting())
    assert info.value.code == "DEADLOCK"


def test_run_sync_refuses_to_block():
    def blocking():
        yield Park(lambda item: None)

    with pytest.raises(RuntimeFault) as info:
        run_sync(blocking())
    assert info.value.code == "SYNC_BLOCKED_IN_LOCK"


# Concurrent object state access

def make_box(desc, value, **kwargs):
    state = MagicMock()
    state.slots = [value]
    return ConcurrentObject(desc, state, **kwargs)


def test_component_read_from_outside_takes_a_shared_tenure(desc):
    box = make_box(desc, 5)
    assert box.read_component(0) == 5
    assert box.tenures == 1
    assert box not in held_objects()


def test_component_read_waits_for_an_exclusive_holder(desc):
    box = make_box(desc, 5, lock_timeout_ms=50)
    locked = threading.Event()
    done = threading.Event()

    def holder():
        box.acquire("exclusive")
        locked.set()
        done.wait(5)
        box.release("exclusive")

    thread = threading.Thread(target=holder)
    thread.start()
    try:
        assert locked.wait(5)
        with pytest.raises(RuntimeFault) as info:
            box.read_component(0)
        assert info.value.code == "LOCK_TIMEOUT"
    finally:
        done.set()
        thread.join()
    assert box.read_component(0) == 5


def test_holder_reads_and_addresses_components_directly(desc):
    box = make_box(desc, 5)
    box.acquire("exclusive")
    try:
        assert box.read_component(0) == 5
        assert box.locked_state() is box.state
        assert box.tenures == 1
    finally:
        box.release("exclusive")


def test_addressing_a_component_without_the_lock_faults(desc):
    box = make_box(desc, 5)
    with pytest.raises(RuntimeFault) as info:
        box.locked_state()
    assert info.value.code == "SYNC_UNLOCKED"
