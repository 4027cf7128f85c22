import os

import pytest
from hypothesis import HealthCheck, settings

from herd_pricer import signals as sig

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.register_profile("ci", parent=settings.get_profile("default"), max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def uniform():
    return sig.make_family(sig.Family.UNIFORM, lo=0.3)


@pytest.fixture(scope="session")
def tent():
    return sig.make_family(sig.Family.TENT, lo=0.3)


@pytest.fixture(scope="session")
def beta():
    return sig.make_family(sig.Family.BETA)


@pytest.fixture(scope="session")
def power():
    return sig.make_family(sig.Family.POWER, lo=0.3, kappa=2.0)


@pytest.fixture(scope="session")
def families(uniform, tent, beta):
    return {"UniformBelief": uniform, "Tent": tent, "BetaUnbounded": beta}


# -- acceptance report ---------------------------------------------------------
# Acceptance tests record one verdict per criterion; the lines are printed in
# the terminal summary so they show up without ``-s``.

_CRITERIA: dict = {}


@pytest.fixture(scope="session")
def criterion():
    def record(number: int, passed: bool, detail: str):
        prev = _CRITERIA.get(number)
        if prev is not None:
            passed = passed and prev[0]
            detail = f"{prev[1]}; {detail}"
        _CRITERIA[number] = (passed, detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
