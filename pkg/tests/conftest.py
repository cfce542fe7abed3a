import numpy as np
import pytest
from hypothesis import strategies as st

from roadtube.datamodel import Box


@st.composite
def boxes(draw, min_size=0.0):
    x1 = draw(st.floats(0.0, 1.0 - min_size))
    y1 = draw(st.floats(0.0, 1.0 - min_size))
    x2 = draw(st.floats(x1 + min_size, 1.0))
    y2 = draw(st.floats(y1 + min_size, 1.0))
    return Box(x1, y1, x2, y2)


def random_box(rng, margin=0.0, min_size=0.02):
    while True:
        x1, x2 = np.sort(rng.uniform(margin, 1 - margin, 2))
        y1, y2 = np.sort(rng.uniform(margin, 1 - margin, 2))
        if x2 - x1 >= min_size and y2 - y1 >= min_size:
            return Box(float(x1), float(y1), float(x2), float(y2))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one acceptance line (printed now and again in the summary), then assert."""
    def record(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  [{detail}]" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
