import numpy as np
import pytest
from hypothesis import settings

# fixed example order so repeated runs print identical output
settings.register_profile("repo", derandomize=True, deadline=None, max_examples=60, print_blob=True)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance(capsys):
    """Record one PASS/FAIL line per acceptance criterion and echo it immediately."""

    def record(n: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"[AC{n:02d}] {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
        ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
