"""
Work-stealing scheduler for picothreads

A picothread is a Python generator. It runs on a server thread until it
yields a request: Await(master) suspends it until every child of the master
has finished, Park(callback) suspends it and hands it to the callback (a
concurrent object's entry queue). Servers service their own deque newest
first and steal oldest first from a randomly chosen victim.
"""
import collections
import logging
import random
import sys
import threading
import time
from typing import Any, Callable, Deque, List, Optional

from errors import InternalFault, RuntimeFault
from models import SchedulerStats

logger = logging.getLogger(__name__)

SERVER_STACK_BYTES = 256 * 1024 * 1024
RECURSION_LIMIT = 200000
IDLE_POLL_SECONDS = 0.05


class Await:
    """Request: suspend until the master has no outstanding children"""

    __slots__ = ("master",)

    def __init__(self, master: "Master"):
        self.master = master


class Park:
    """Request: suspend and pass the item to callback, which arranges its resumption"""

    __slots__ = ("callback",)

    def __init__(self, callback: Callable[["WorkItem"], None]):
        self.callback = callback


class Terminated(Exception):
    """Raised inside a picothread whose master was cancelled"""


TERMINATED = object()


class Master:
    """
    Join group of spawned picothreads

    Holds the single-winner outcome of a parallel group or loop and the
    cancellation flag that its children poll.
    """

    __slots__ = ("outstanding", "waiter", "outcome", "cancelled", "parent", "continued", "fault", "lock",
                 "claims", "kind")

    def __init__(self, parent: Optional["Master"] = None, kind: str = "group"):
        self.outstanding = 0
        self.waiter: Optional[WorkItem] = None
        self.outcome = None
        self.cancelled = False
        self.parent = parent
        self.continued = False
        self.fault: Optional[BaseException] = None
        self.lock = threading.Lock()
        self.claims = 0
        self.kind = kind

    def claim(self, outcome) -> bool:
        """First claim wins and cancels the remaining members"""
        with self.lock:
            if self.outcome is not None or self.fault is not None:
                return False
            self.outcome = outcome
            self.claims += 1
            self.cancelled = True
        return True

    def record_fault(self, exc: BaseException):
        with self.lock:
            if self.fault is None:
                self.fault = exc
            self.cancelled = True

    def cancel(self):
        self.cancelled = True

    @property
    def is_cancelled(self) -> bool:
        master = self
        while master is not None:
            if master.cancelled:
                return True
            master = master.parent
        return False

    def __repr__(self) -> str:
        return f"Master({self.kind}, outstanding={self.outstanding})"


class WorkItem:
    """One picothread: a generator plus the master it reports to"""

    __slots__ = ("gen", "master", "send_value", "throw_exc", "label")

    def __init__(self, gen, master: Optional[Master], label: str = ""):
        self.gen = gen
        self.master = master
        self.send_value = None
        self.throw_exc: Optional[BaseException] = None
        self.label = label

    def __repr__(self) -> str:
        return f"WorkItem({self.label})"


class Server:
    __slots__ = ("id", "deque", "steals", "executed")

    def __init__(self, server_id: int):
        self.id = server_id
        self.deque: Deque[WorkItem] = collections.deque()
        self.steals = 0
        self.executed = 0


def run_sync(gen) -> Any:
    """
    Drive a picothread to completion on the calling thread

    Used for bodies of locked and queued operations, which may not suspend.
    """
    value, exc = None, None
    while True:
        try:
            request = gen.throw(exc) if exc is not None else gen.send(value)
        except StopIteration as stop:
            return stop.value
        value, exc = None, None
        if isinstance(request, Await):
            if request.master.outstanding:
                exc = InternalFault("picothread spawned inside a locked operation")
        elif isinstance(request, Park):
            exc = RuntimeFault("SYNC_BLOCKED_IN_LOCK", "queued call would block inside a locked operation")
        else:
            exc = InternalFault(f"unknown scheduler request {request!r}")


class Scheduler:
    """
    Servers, deques and the root picothread of one program run

    Attributes:
        servers: Number of server threads
        sequential: One server and strict in-order execution
    """

    def __init__(self, servers: int = 1, sequential: bool = False, seed: Optional[int] = None,
                 deadlock_grace_ms: int = 2000):
        self.logger = logging.getLogger(__name__)
        if servers < 1:
            raise ValueError("servers must be at least 1")
        self.sequential = sequential
        self.servers = [Server(i) for i in range(1 if sequential else servers)]
        self.random = random.Random(seed)
        self.deadlock_grace = deadlock_grace_ms / 1000.0
        self._cond = threading.Condition()
        self._local = threading.local()
        self._inbox: Deque[WorkItem] = collections.deque()
        self._stopping = False
        self._idle = 0
        self._active = 0
        self._stalled_since: Optional[float] = None
        self._root: Optional[WorkItem] = None
        self._root_result = None
        self._root_error: Optional[BaseException] = None
        self.spawned = 0
        self.executed = 0
        self.terminated = 0
        self.max_active = 0
        self.claims = 0

    # Public API

    def run(self, gen, label: str = "main") -> Any:
        """
        Run a root picothread to completion on the server threads

        Returns:
            The generator's return value

        Raises:
            Whatever the root picothread raised, or RuntimeFault DEADLOCK
        """
        sys.setrecursionlimit(max(sys.getrecursionlimit(), RECURSION_LIMIT))
        with self._cond:
            self._stopping = False
            self._root_error = None
            self._root_result = None
            self._stalled_since = None
        self._root = WorkItem(gen, None, label)
        self._inbox.append(self._root)
        previous = threading.stack_size()
        threading.stack_size(SERVER_STACK_BYTES)
        try:
            threads = [threading.Thread(target=self._server_loop, args=(server,), name=f"psl-server-{server.id}",
                                        daemon=True) for server in self.servers]
        finally:
            threading.stack_size(previous)
        self.logger.info(f"Scheduler starting: {len(self.servers)} servers, sequential={self.sequential}")
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()
        self.logger.info(f"Scheduler stopped: spawned={self.spawned} steals={self.steals}")
        if self._root_error is not None:
            raise self._root_error
        return self._root_result

    def spawn(self, master: Master, gen, label: str = ""):
        """Count the child on its master, then push it newest-first on the current server"""
        with master.lock:
            master.outstanding += 1
        item = WorkItem(gen, master, label)
        with self._cond:
            self.spawned += 1
            self._push(item)
            self._cond.notify()

    def resume(self, item: WorkItem, value=None, exc: Optional[BaseException] = None):
        item.send_value = value
        item.throw_exc = exc
        with self._cond:
            self._push(item)
            self._cond.notify()

    @property
    def current(self) -> Optional[WorkItem]:
        return getattr(self._local, "item", None)

    @property
    def steals(self) -> int:
        return sum(s.steals for s in self.servers)

    def stats(self) -> SchedulerStats:
        return SchedulerStats(picothreads_spawned=self.spawned, picothreads_executed=self.executed,
                              picothreads_terminated=self.terminated, steals=self.steals,
                              max_active=self.max_active, servers=len(self.servers), claims=self.claims)

    def no_lost_work(self) -> bool:
        return self.spawned == self.executed + self.terminated

    # Servers

    def _push(self, item: WorkItem):
        server = getattr(self._local, "server", None)
        if server is None:
            self._inbox.append(item)
        else:
            server.deque.append(item)

    def _server_loop(self, server: Server):
        self._local.server = server
        try:
            while True:
                item = self._next_item(server)
                if item is None:
                    return
                self._execute(item, server)
        except BaseException as e:
            self.logger.error(f"Server {server.id} crashed: {e}")
            self._finish_root(None, e)

    def _next_item(self, server: Server) -> Optional[WorkItem]:
        with self._cond:
            while True:
                if self._stopping:
                    return None
                if server.deque:
                    return server.deque.pop()
                if self._inbox:
                    return self._inbox.popleft()
                victims = [s for s in self.servers if s is not server and s.deque]
                if victims:
                    victim = self.random.choice(victims)
                    server.steals += 1
                    return victim.deque.popleft()
                self._idle += 1
                try:
                    if self._idle == len(self.servers) and self._active == 0:
                        now = time.monotonic()
                        if self._stalled_since is None:
                            self._stalled_since = now
                        elif now - self._stalled_since >= self.deadlock_grace:
                            self.logger.error("Every picothread is parked; reporting deadlock")
                            self._root_error = RuntimeFault("DEADLOCK", "every picothread is waiting")
                            self._stop_locked()
                            return None
                    self._cond.wait(IDLE_POLL_SECONDS)
                finally:
                    self._idle -= 1

    def _execute(self, item: WorkItem, server: Server):
        with self._cond:
            self._active += 1
            self._stalled_since = None
            if self._active > self.max_active:
                self.max_active = self._active
        self._local.item = item
        try:
            self._step(item)
        finally:
            self._local.item = None
            with self._cond:
                self._active -= 1

    def _step(self, item: WorkItem):
        gen = item.gen
        value, exc = item.send_value, item.throw_exc
        item.send_value, item.throw_exc = None, None
        while True:
            try:
                request = gen.throw(exc) if exc is not None else gen.send(value)
            except StopIteration as stop:
                self._item_done(item, stop.value, None)
                return
            except BaseException as e:
                self._item_done(item, None, e)
                return
            value, exc = None, None
            if isinstance(request, Await):
                master = request.master
                with master.lock:
                    if master.outstanding > 0:
                        master.waiter = item
                        return
            elif isinstance(request, Park):
                request.callback(item)
                return
            else:
                exc = InternalFault(f"unknown scheduler request {request!r}")

    def _item_done(self, item: WorkItem, result, error: Optional[BaseException]):
        if item is self._root:
            self._finish_root(result, error)
            return
        with self._cond:
            if result is TERMINATED or isinstance(error, Terminated):
                self.terminated += 1
            else:
                self.executed += 1
        master = item.master
        if error is not None and not isinstance(error, Terminated):
            master.record_fault(error)
        waiter = None
        with master.lock:
            master.outstanding -= 1
            if master.outstanding < 0:
                raise InternalFault("master joined more children than it spawned")
            if master.outstanding == 0 and master.waiter is not None:
                waiter, master.waiter = master.waiter, None
        if waiter is not None:
            self.resume(waiter)

    def _finish_root(self, result, error: Optional[BaseException]):
        with self._cond:
            if self._root_error is None and error is not None:
                self._root_error = error
            self._root_result = result
            self._stop_locked()

    def _stop_locked(self):
        self._stopping = True
        self._cond.notify_all()

    def note_claim(self):
        with self._cond:
            self.claims += 1
