import numpy as np
import pytest

from rdlab.mesh import build_structured_unit_square


@pytest.fixture(scope="session")
def meshes():
    """Structured unit-square meshes keyed by subdivision count, built once."""
    cache = {}

    def get(n):
        if n not in cache:
            cache[n] = build_structured_unit_square(n)
        return cache[n]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# -- acceptance verdicts --------------------------------------------------------------
# test_acceptance.py records one line per criterion; they are printed together at the
# end of the session so the verdicts are visible whatever the verbosity.

_VERDICTS: dict[str, str] = {}


@pytest.fixture
def verdict():
    def record(criterion: str, passed: bool, detail: str) -> bool:
        _VERDICTS[criterion] = f"{criterion} {'PASS' if passed else 'FAIL'}  {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_VERDICTS, key=lambda k: int(k[1:])):
        terminalreporter.write_line(_VERDICTS[key])
