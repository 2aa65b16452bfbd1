"""
Pointer-free value model with region-based storage accounting
"""
import itertools
import logging
import threading
from typing import Any, List, Optional

from errors import InternalFault, RuntimeFault
from models import StoreStats

logger = logging.getLogger(__name__)

INT_MIN = -(2 ** 63) + 1
INT_MAX = 2 ** 63 - 1

_region_ids = itertools.count(1)


class EnumLit:
    """An interned enumeration literal such as #less"""

    __slots__ = ("sym",)
    _interned = {}
    _lock = threading.Lock()

    def __new__(cls, sym: str):
        found = cls._interned.get(sym)
        if found is not None:
            return found
        with cls._lock:
            found = cls._interned.get(sym)
            if found is None:
                found = object.__new__(cls)
                found.sym = sym
                cls._interned[sym] = found
            return found

    def __repr__(self) -> str:
        return self.sym

    def __reduce__(self):
        return (EnumLit, (self.sym,))


LESS = EnumLit("#less")
EQUAL = EnumLit("#equal")
GREATER = EnumLit("#greater")
UNORDERED = EnumLit("#unordered")


class Char:
    """A Univ_Character value"""

    __slots__ = ("code",)

    def __init__(self, code: int):
        self.code = code

    def __eq__(self, other) -> bool:
        return isinstance(other, Char) and other.code == self.code

    def __hash__(self) -> int:
        return hash(("char", self.code))

    def __repr__(self) -> str:
        return chr(self.code)


class Region:
    """
    Allocation pool of one scope

    Registration with the store happens on the first allocation, so scopes
    that never allocate cost nothing.
    """

    __slots__ = ("id", "parent", "objects", "children", "registered", "closed", "anchored")

    def __init__(self, parent: Optional["Region"] = None):
        self.id = 0
        self.parent = parent
        self.objects = None
        self.children = 0
        self.registered = False
        self.closed = False
        self.anchored: Optional[List["Cell"]] = None

    @property
    def live_count(self) -> int:
        return len(self.objects) if self.objects else 0

    def __repr__(self) -> str:
        return f"Region({self.id}, live={self.live_count})"


class Composite:
    """An instance of a module type: one slot per component"""

    __slots__ = ("desc", "slots", "region")

    def __init__(self, desc, slots: List[Any], region: Region):
        self.desc = desc
        self.slots = slots
        self.region = region

    def __repr__(self) -> str:
        return f"{self.desc.name}({', '.join(map(repr, self.slots))})"


class ArrayValue:
    """A Basic_Array instance"""

    __slots__ = ("desc", "slots", "first", "region")

    def __init__(self, desc, slots: List[Any], first: int, region: Region):
        self.desc = desc
        self.slots = slots
        self.first = first
        self.region = region

    @property
    def last(self) -> int:
        return self.first + len(self.slots) - 1

    @property
    def length(self) -> int:
        return len(self.slots)

    def __repr__(self) -> str:
        return f"[{', '.join(map(repr, self.slots))}]"


class SliceView:
    """A bounded view of an array; never allocated, never owns storage"""

    __slots__ = ("base", "first", "last")

    def __init__(self, base: ArrayValue, first: int, last: int):
        self.base = base
        self.first = first
        self.last = last

    @property
    def desc(self):
        return self.base.desc

    @property
    def region(self) -> Region:
        return self.base.region

    @property
    def length(self) -> int:
        return max(0, self.last - self.first + 1)

    @property
    def slots(self) -> List[Any]:
        return self.base.slots[self.first - self.base.first:self.last - self.base.first + 1]

    def __repr__(self) -> str:
        return f"[{', '.join(map(repr, self.slots))}]"


# Locations


class Cell:
    """A declared object owning its value"""

    __slots__ = ("value", "region", "optional", "desc", "name", "anchored")

    def __init__(self, value, region: Region, optional: bool = True, desc=None, name: str = ""):
        self.value = value
        self.region = region
        self.optional = optional
        self.desc = desc
        self.name = name
        self.anchored = False

    def get(self):
        return self.value

    def set(self, value):
        self.value = value

    def __repr__(self) -> str:
        return f"Cell({self.name}={self.value!r})"


class SlotLoc:
    """A component or element slot inside a composite or array"""

    __slots__ = ("obj", "index", "optional", "desc")

    def __init__(self, obj, index: int, optional: bool = True, desc=None):
        self.obj = obj
        self.index = index
        self.optional = optional
        self.desc = desc

    @property
    def region(self) -> Region:
        return self.obj.region

    def get(self):
        return self.obj.slots[self.index]

    def set(self, value):
        self.obj.slots[self.index] = value

    def same_as(self, other) -> bool:
        return isinstance(other, SlotLoc) and other.obj is self.obj and other.index == self.index


class ConstLoc:
    """A read-only binding to a value owned elsewhere"""

    __slots__ = ("value", "region", "desc")

    def __init__(self, value, region: Optional[Region] = None, desc=None):
        self.value = value
        self.region = region if region is not None else getattr(value, "region", None)
        self.desc = desc

    optional = True

    def get(self):
        return self.value

    def set(self, value):
        raise InternalFault("assignment through a read-only binding")


def is_allocated(value) -> bool:
    return isinstance(value, (Composite, ArrayValue)) or getattr(value, "is_concurrent", False)


def check_int(value: int, span=None) -> int:
    if value < INT_MIN or value > INT_MAX:
        raise RuntimeFault("OVERFLOW", f"integer result {value} outside 64-bit range", span)
    return value


class Store:
    """Owns region accounting; every allocation and release goes through here"""

    def __init__(self):
        self.logger = logging.getLogger(__name__)
        self._lock = threading.Lock()
        self.allocated = 0
        self.released = 0
        self.peak_live = 0
        self.regions_created = 0
        self.live_regions = set()

    # Regions

    def region_enter(self, parent: Optional[Region] = None) -> Region:
        """Fresh empty region parented to the caller's region"""
        return Region(parent)

    def _register(self, region: Region):
        with self._lock:
            if region.registered:
                return
            region.id = next(_region_ids)
            region.objects = set()
            region.registered = True
            self.regions_created += 1
            self.live_regions.add(region)
            parent = region.parent
        while parent is not None and not parent.registered:
            self._register(parent)
        if parent is not None:
            with self._lock:
                parent.children += 1

    def region_exit(self, region: Region):
        """Release every allocation of the region in bulk and destroy it"""
        if region.closed:
            return
        if region.anchored:
            # objects declared "for" an outer anchor live elsewhere but die with this scope
            for cell in region.anchored:
                self.set_null(cell)
            region.anchored = None
        region.closed = True
        if not region.registered:
            return
        if region.children:
            raise InternalFault(f"region {region.id} exited with {region.children} live child regions")
        with self._lock:
            remaining = len(region.objects)
            self.released += remaining
            for obj in region.objects:
                obj.region = None
            region.objects.clear()
            self.live_regions.discard(region)
            if region.parent is not None and region.parent.registered:
                region.parent.children -= 1

    # Allocation

    def _track(self, obj, region: Region):
        if not region.registered:
            self._register(region)
        if region.closed:
            raise InternalFault(f"allocation in closed region {region.id}")
        with self._lock:
            region.objects.add(obj)
            self.allocated += 1
            live = self.allocated - self.released
            if live > self.peak_live:
                self.peak_live = live

    def new_composite(self, desc, slots: List[Any], region: Region) -> Composite:
        obj = Composite(desc, slots, region)
        self._track(obj, region)
        return obj

    def new_array(self, desc, slots: List[Any], first: int, region: Region) -> ArrayValue:
        obj = ArrayValue(desc, slots, first, region)
        self._track(obj, region)
        return obj

    def adopt(self, obj, region: Region):
        """Account for an externally built allocated object (concurrent objects)"""
        obj.region = region
        self._track(obj, region)
        return obj

    def release(self, value):
        """Release a value tree immediately (null-assignment, overwrite)"""
        stack = [value]
        while stack:
            v = stack.pop()
            if isinstance(v, (Composite, ArrayValue)):
                region = v.region
                if region is None:
                    continue
                with self._lock:
                    if v in region.objects:
                        region.objects.discard(v)
                        self.released += 1
                v.region = None
                stack.extend(s for s in v.slots if s is not None and is_allocated(s))
            elif getattr(v, "is_concurrent", False):
                region = v.region
                if region is None:
                    continue
                with self._lock:
                    if v in region.objects:
                        region.objects.discard(v)
                        self.released += 1
                v.region = None
                stack.append(v.state)

    def copy(self, value, region: Region):
        """Deep copy of a value tree into a region; scalars are shared"""
        if isinstance(value, Composite):
            return self.new_composite(value.desc, [self.copy(s, region) for s in value.slots], region)
        if isinstance(value, ArrayValue):
            return self.new_array(value.desc, [self.copy(s, region) for s in value.slots], value.first, region)
        if isinstance(value, SliceView):
            return self.new_array(value.desc, [self.copy(s, region) for s in value.slots], value.first, region)
        if getattr(value, "is_concurrent", False):
            return value.clone(self, region)
        return value

    def owned_in(self, value, region: Region):
        """Return value allocated in region, copying when it lives elsewhere"""
        if value is None or not is_allocated(value) or value.region is region:
            return value
        return self.copy(value, region)

    # Object-level operations

    def assign_copy(self, dest, value, fresh: bool = False):
        """
        Replace dest's value with a copy of value, releasing the prior value

        Args:
            dest: Target location
            value: New value
            fresh: Value is a temporary nobody else owns; it is moved in
        """
        if value is None and not dest.optional:
            raise RuntimeFault("NULL_INTO_REQUIRED", "null assigned to a non-optional object")
        region = dest.region
        if isinstance(value, SliceView):
            new = self.copy(value, region)
        elif fresh and (not is_allocated(value) or value.region is region):
            new = value
        elif fresh and is_allocated(value):
            new = self.copy(value, region)
            self.release(value)
        else:
            new = self.copy(value, region)
        old = dest.get()
        dest.set(new)
        if old is not None and old is not new and is_allocated(old):
            self.release(old)

    def move_into(self, dest, src):
        """dest takes src's value; src becomes null"""
        if dest is src or (isinstance(dest, SlotLoc) and dest.same_as(src)):
            return
        value = src.get()
        if value is None and not dest.optional:
            raise RuntimeFault("NULL_INTO_REQUIRED", "moving null into a non-optional object")
        src.set(None)
        if is_allocated(value) and value.region is not dest.region:
            moved = self.copy(value, dest.region)
            self.release(value)
            value = moved
        old = dest.get()
        dest.set(value)
        if old is not None and is_allocated(old):
            self.release(old)

    def swap(self, a, b):
        """Exchange two values; same-region swap performs no allocation"""
        if a is b or (isinstance(a, SlotLoc) and a.same_as(b)):
            return
        va, vb = a.get(), b.get()
        if a.region is not b.region:
            if is_allocated(va):
                moved = self.copy(va, b.region)
                self.release(va)
                va = moved
            if is_allocated(vb):
                moved = self.copy(vb, a.region)
                self.release(vb)
                vb = moved
        a.set(vb)
        b.set(va)

    def declare_for(self, cell: Cell, scope_region: Region):
        """Tie an object allocated in its anchor's region to the lifetime of its declaring scope"""
        if cell.region is scope_region:
            return
        cell.anchored = True
        if scope_region.anchored is None:
            scope_region.anchored = []
        scope_region.anchored.append(cell)

    def set_null(self, dest):
        old = dest.get()
        dest.set(None)
        if old is not None and is_allocated(old):
            self.release(old)

    # Accounting

    @property
    def live_objects(self) -> int:
        return self.allocated - self.released

    def check_conservation(self) -> bool:
        """Sum of region live counts equals allocations minus releases"""
        with self._lock:
            total = sum(len(r.objects) for r in self.live_regions)
            return total == self.allocated - self.released

    def stats(self) -> StoreStats:
        with self._lock:
            return StoreStats(
                allocated=self.allocated,
                released=self.released,
                live_objects=self.allocated - self.released,
                peak_live_objects=self.peak_live,
                regions_created=self.regions_created,
                live_regions=len(self.live_regions),
            )


class RangeValue:
    """A Countable_Range value: the closed interval lo .. hi"""

    __slots__ = ("lo", "hi")

    def __init__(self, lo: int, hi: int):
        self.lo = lo
        self.hi = hi

    @property
    def length(self) -> int:
        return max(0, self.hi - self.lo + 1)

    def __contains__(self, value) -> bool:
        return self.lo <= value <= self.hi

    def __eq__(self, other) -> bool:
        return isinstance(other, RangeValue) and (self.lo, self.hi) == (other.lo, other.hi)

    def __hash__(self) -> int:
        return hash(("range", self.lo, self.hi))

    def __repr__(self) -> str:
        return f"{self.lo} .. {self.hi}"


DEFAULT_INT_RANGE = RangeValue(INT_MIN, INT_MAX)
