"""
Concurrent objects: locked and queued operations

A concurrent object owns its state composite behind a readers-writer lock.
Locked operations run under a shared or exclusive tenure; queued operations
wait on the object's entry queue until their dequeue condition holds. After
every exclusive tenure the queue is serviced in arrival order until no entry
is satisfied, then the lock is released.
"""
import itertools
import logging
import threading
import time
from typing import Any, Callable, List, Optional

from errors import InternalFault, RuntimeFault
from models import SyncEvent

logger = logging.getLogger(__name__)

_object_ids = itertools.count(1)
_held = threading.local()


def held_objects() -> set:
    """Concurrent objects whose lock the current thread holds"""
    found = getattr(_held, "objects", None)
    if found is None:
        found = _held.objects = set()
    return found


class SyncLog:
    """Linearized begin/end events for the --debug-sync overlap checker"""

    def __init__(self):
        self._lock = threading.Lock()
        self.events: List[SyncEvent] = []

    def record(self, obj_id: int, op: str, phase: str, mode: str):
        with self._lock:
            self.events.append(SyncEvent(obj_id=obj_id, op=op, phase=phase, mode=mode))

    def lines(self) -> List[str]:
        with self._lock:
            return [e.render() for e in self.events]


def check_event_log(events: List[SyncEvent]) -> List[str]:
    """
    Find mutual-exclusion violations in an event log

    Returns:
        Descriptions of violations (empty when the log is clean)
    """
    shared, exclusive = {}, {}
    problems = []
    for i, event in enumerate(events):
        obj = event.obj_id
        is_exclusive = event.mode != "shared"
        if event.phase == "begin":
            if exclusive.get(obj, 0) or (is_exclusive and shared.get(obj, 0)):
                problems.append(f"event {i}: {event.render()} overlaps another tenure")
            table = exclusive if is_exclusive else shared
            table[obj] = table.get(obj, 0) + 1
        else:
            table = exclusive if is_exclusive else shared
            if table.get(obj, 0) <= 0:
                problems.append(f"event {i}: {event.render()} ends a tenure that never began")
            else:
                table[obj] -= 1
    return problems


class QueuedCall:
    """A suspended caller of a queued operation"""

    __slots__ = ("op", "condition", "body", "item", "arrival")

    def __init__(self, op: str, condition: Callable[[], bool], body: Callable[[], Any], item, arrival: int):
        self.op = op
        self.condition = condition
        self.body = body
        self.item = item
        self.arrival = arrival


class ConcurrentObject:
    """
    Runtime-synchronized object wrapping a state composite

    Attributes:
        obj_id: Identity used in the event log
        state: Composite holding the components
        desc: Type descriptor of the concurrent type
    """

    is_concurrent = True

    def __init__(self, desc, state, region=None, scheduler=None, sync_log: Optional[SyncLog] = None,
                 lock_timeout_ms: Optional[int] = None, debug: bool = False):
        self.logger = logging.getLogger(__name__)
        self.obj_id = next(_object_ids)
        self.desc = desc
        self.state = state
        self.region = region
        self.scheduler = scheduler
        self.sync_log = sync_log
        self.lock_timeout = lock_timeout_ms / 1000.0 if lock_timeout_ms else None
        self.debug = debug
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False
        self.queue: List[QueuedCall] = []
        self._arrivals = itertools.count(1)
        self.tenures = 0

    def clone(self, store, region) -> "ConcurrentObject":
        self.acquire("shared")
        try:
            state = store.copy(self.state, region)
        finally:
            self.release("shared")
        return store.adopt(ConcurrentObject(self.desc, state, None, self.scheduler, self.sync_log,
                                            int(self.lock_timeout * 1000) if self.lock_timeout else None,
                                            self.debug), region)

    @property
    def slots(self):
        return self.state.slots

    def read_state(self, reader: Callable[[Any], Any]) -> Any:
        """Apply reader to the state under a shared tenure, or under the caller's own tenure if it holds one"""
        if self in held_objects():
            return reader(self.state)
        self.acquire("shared")
        try:
            return reader(self.state)
        finally:
            self.release("shared")

    def read_component(self, index: int) -> Any:
        return self.read_state(lambda state: state.slots[index])

    def locked_state(self, span=None):
        """State for addressing a component; only an operation holding the lock may do so"""
        if self not in held_objects():
            raise RuntimeFault("SYNC_UNLOCKED", f"component of {self.desc.display()} addressed outside "
                                                f"a locked operation", span)
        return self.state

    # Lock

    def acquire(self, mode: str):
        held = held_objects()
        if self in held:
            raise RuntimeFault("SYNC_REENTRY", f"{self.desc.display()} is already locked by this operation")
        deadline = time.monotonic() + self.lock_timeout if self.lock_timeout else None
        with self._cond:
            while self._writer or (mode != "shared" and self._readers):
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    raise RuntimeFault("LOCK_TIMEOUT", f"waited too long for {self.desc.display()}")
                self._cond.wait(remaining)
            if mode == "shared":
                self._readers += 1
            else:
                self._writer = True
            self.tenures += 1
        held.add(self)

    def release(self, mode: str):
        held_objects().discard(self)
        with self._cond:
            if mode == "shared":
                self._readers -= 1
            else:
                self._writer = False
            self._cond.notify_all()

    def _log(self, op: str, phase: str, mode: str):
        if self.sync_log is not None:
            self.sync_log.record(self.obj_id, op, phase, mode)

    # Operations

    def call_locked(self, op: str, mode: str, body: Callable[[], Any]) -> Any:
        """Run body under a shared or exclusive tenure; exclusive tenures service the queue before release"""
        self.acquire(mode)
        try:
            self._log(op, "begin", mode)
            try:
                result = body()
            finally:
                self._log(op, "end", mode)
            if mode != "shared":
                self.service_queue()
            return result
        finally:
            self.release(mode)

    def call_queued(self, op: str, condition: Callable[[], bool], body: Callable[[], Any], item):
        """
        Park callback of a queued call

        Runs the body now when the condition holds, otherwise appends the
        caller to the entry queue. The caller's picothread is resumed with
        the body's result or fault.
        """
        try:
            self.acquire("exclusive")
        except RuntimeFault as e:
            self.scheduler.resume(item, exc=e)
            return
        try:
            try:
                ready = condition()
            except Exception as e:
                self.scheduler.resume(item, exc=e)
                return
            if ready:
                self._run_entry(QueuedCall(op, condition, body, item, next(self._arrivals)))
            else:
                self.queue.append(QueuedCall(op, condition, body, item, next(self._arrivals)))
            self.service_queue()
        finally:
            self.release("exclusive")

    def call_queued_sync(self, op: str, condition: Callable[[], bool], body: Callable[[], Any]) -> Any:
        """Queued call made from inside a locked body: it may not wait"""
        self.acquire("exclusive")
        try:
            if not condition():
                raise RuntimeFault("SYNC_BLOCKED_IN_LOCK", f"{op} would wait inside a locked operation")
            self._log(op, "begin", "queued")
            try:
                result = body()
            finally:
                self._log(op, "end", "queued")
            self.service_queue()
            return result
        finally:
            self.release("exclusive")

    def _run_entry(self, entry: QueuedCall):
        if self.debug and not entry.condition():
            raise InternalFault(f"{entry.op} entered with its dequeue condition false")
        self._log(entry.op, "begin", "queued")
        try:
            result = entry.body()
        except Exception as e:
            self._log(entry.op, "end", "queued")
            self.scheduler.resume(entry.item, exc=e)
            return
        self._log(entry.op, "end", "queued")
        self.scheduler.resume(entry.item, value=result)

    def service_queue(self):
        """Exclusive lock held: run satisfied entries in arrival order until a scan finds none"""
        progressed = True
        while progressed and self.queue:
            progressed = False
            for entry in self.queue:
                try:
                    ready = entry.condition()
                except Exception as e:
                    self.queue.remove(entry)
                    self.scheduler.resume(entry.item, exc=e)
                    progressed = True
                    break
                if ready:
                    self.queue.remove(entry)
                    self._run_entry(entry)
                    progressed = True
                    break
        if self.debug:
            self.check_quiescent()

    def check_quiescent(self):
        for entry in self.queue:
            if entry.condition():
                raise InternalFault(f"lock of {self.desc.display()} released with {entry.op} satisfied")

    def __repr__(self) -> str:
        return f"ConcurrentObject({self.desc.display()}#{self.obj_id})"
