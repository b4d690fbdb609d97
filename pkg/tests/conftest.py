import functools

import pytest

from afred.models import FAMILIES, get_family
from afred.solver import Solver, sample_radii

BUILTIN = tuple(FAMILIES)
CRITERIA = {}


@functools.lru_cache(maxsize=None)
def family(name):
    return get_family(name)


@functools.lru_cache(maxsize=None)
def full_plan(name):
    return sample_radii(family(name))


@functools.lru_cache(maxsize=None)
def full_solver(name):
    return Solver(family(name), plan=full_plan(name))


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion."""

    def record(number, title, ok, detail=""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
        CRITERIA.setdefault(number, []).append((ok, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        for _, line in CRITERIA[number]:
            terminalreporter.write_line(line)
