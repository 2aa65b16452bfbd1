"""
Library and example program sources, plus the host-level oracles the
differential tests compare against
"""
import glob
import logging
import os
import random
from typing import Dict, Iterator, List, Optional, Tuple

from config import settings
from errors import UsageError

logger = logging.getLogger(__name__)

# Load order of the library: each file only names modules declared earlier
LIBRARY_ORDER = [
    "core.psl",
    "key_value.psl",
    "hash_table.psl",
    "set.psl",
    "map.psl",
    "vector.psl",
    "locked_box.psl",
]


def library_paths(lib_dir: Optional[str] = None) -> List[str]:
    """
    Paths of the library sources in load order

    Args:
        lib_dir: Directory holding the .psl library (settings.lib_dir by default)

    Returns:
        Known files in dependency order, then any others alphabetically
    """
    lib_dir = lib_dir or settings.lib_dir
    found = {os.path.basename(p): p for p in glob.glob(os.path.join(lib_dir, "*.psl"))}
    ordered = [found.pop(name) for name in LIBRARY_ORDER if name in found]
    ordered.extend(found[name] for name in sorted(found))
    return ordered


def library_sources(lib_dir: Optional[str] = None) -> List[Tuple[str, str]]:
    """
    Read every library source

    Returns:
        (path, text) pairs in load order
    """
    sources = []
    for path in library_paths(lib_dir):
        with open(path, encoding="utf-8") as f:
            sources.append((path, f.read()))
    logger.info(f"Read {len(sources)} library sources")
    return sources


def program_path(name: str, programs_dir: Optional[str] = None) -> str:
    """Path of a bundled example program, by file name with or without .psl"""
    programs_dir = programs_dir or settings.programs_dir
    if not name.endswith(".psl"):
        name += ".psl"
    path = os.path.join(programs_dir, name)
    if not os.path.exists(path):
        raise UsageError(f"no example program named {name} in {programs_dir}")
    return path


def program_names(programs_dir: Optional[str] = None) -> List[str]:
    programs_dir = programs_dir or settings.programs_dir
    return sorted(os.path.splitext(os.path.basename(p))[0]
                  for p in glob.glob(os.path.join(programs_dir, "*.psl")))


# Oracles


class OracleMap:
    """
    Host-level associative array mirroring Map operations

    Used only by tests as the ground truth for the interpreted Map.
    """

    def __init__(self):
        self._items: Dict[int, int] = {}

    def insert(self, key: int, value: int):
        """Add or replace, as `M |= (Key => K, Value => V)`"""
        self._items[key] = value

    def remove(self, key: int):
        """Remove if present, as `M -= K`"""
        self._items.pop(key, None)

    def lookup(self, key: int) -> Optional[int]:
        return self._items.get(key)

    def contains(self, key: int) -> bool:
        return key in self._items

    def keys(self) -> List[int]:
        return sorted(self._items)

    def pairs(self) -> List[Tuple[int, int]]:
        return sorted(self._items.items())

    def __len__(self) -> int:
        return len(self._items)


def oracle_map() -> OracleMap:
    """Fresh empty reference map"""
    return OracleMap()


def oracle_sort(values: List) -> List:
    """Stable ascending sort of a host list"""
    return sorted(values)


def map_operations(count: int, key_space: int, seed: int = 0) -> Iterator[Tuple[str, int, int]]:
    """
    Random insert / remove / lookup sequence for differential tests

    Yields:
        (op, key, value) with op one of "insert", "remove", "lookup"
    """
    rng = random.Random(seed)
    for _ in range(count):
        roll = rng.random()
        key = rng.randrange(key_space)
        if roll < 0.5:
            yield "insert", key, rng.randrange(1_000_000)
        elif roll < 0.75:
            yield "remove", key, 0
        else:
            yield "lookup", key, 0


def lcg_values(seed: int, count: int, modulus: int) -> List[int]:
    """The linear congruential sequence the example programs fill their inputs with"""
    values = []
    s = seed
    for _ in range(count):
        s = (s * 1103515245 + 12345) % 2147483648
        values.append(s % modulus)
    return values
