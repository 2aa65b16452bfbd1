import io
import os
import sys
import time

import pytest

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from conftest import make_settings
from corpus import lcg_values, program_path
from session import Session


def free_threaded() -> bool:
    check = getattr(sys, "_is_gil_enabled", None)
    return check is not None and not check()


def sort_seconds(servers: int, values) -> float:
    session = Session(make_settings(servers=servers, sequential=servers == 1), out=io.StringIO())
    try:
        session.load_file(program_path("quicksort"))
        array = session.from_host(values, "Array_Type")
        start = time.perf_counter()
        session.call("Quicksort", array)
        elapsed = time.perf_counter() - start
        assert session.to_host(array) == sorted(values)
        return elapsed
    finally:
        session.close()


@pytest.mark.slow
@pytest.mark.skipif(not free_threaded() or (os.cpu_count() or 1) < 4,
                    reason="needs a free-threaded interpreter and at least 4 CPUs")
def test_quicksort_speeds_up_on_four_servers():
    values = lcg_values(2024, 20000, 1000000)
    one = sort_seconds(1, values)
    four = sort_seconds(4, values)
    assert four < one / 1.5
