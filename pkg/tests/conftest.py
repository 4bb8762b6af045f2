import os

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("asmlp", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("asmlp")

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

# acceptance tests append (number, title, passed, detail) here
ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def repo_root():
    return ROOT


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {number:>2}. {title}: {detail}")
