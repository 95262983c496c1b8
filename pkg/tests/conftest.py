import pytest

from hspkit.synth import make_patator_fixture

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def patator():
    """Seed-0 patator fixture: benign background, a persistent and a non-persistent run."""
    return make_patator_fixture(seed=0)


@pytest.fixture
def record_acceptance():
    def record(number, title, ok, detail=""):
        line = f"ACCEPTANCE {number:>2} {'SKIP' if ok is None else 'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def pytest_sessionfinish(session, exitstatus):
    # the train/test disjointness guard must not have fired in any experiment run
    from hspkit.experiment import LEAKAGE_AUDIT

    if LEAKAGE_AUDIT["violations"]:
        session.exitstatus = 1
