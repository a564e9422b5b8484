import numpy as np
import pytest

from harmonize.embedding import TokenRole, encode_text, encode_visual

ACCEPTANCE_LINES = []

PROMPT_ROLES = [
    TokenRole.SPECIAL, TokenRole.ARTICLE, TokenRole.SUBJECT, TokenRole.CLASS_NAME,
    TokenRole.REGULAR, TokenRole.REGULAR, TokenRole.REGULAR, TokenRole.SPECIAL,
]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def text():
    return encode_text([11, 22, 33, 44, 55, 66, 77, 88], PROMPT_ROLES, seed=3, dim=8)


@pytest.fixture
def visual():
    img = np.add.outer(np.arange(8.0), np.arange(8.0)) / 14.0
    return encode_visual(img, n_tokens=4, seed=3, dim=8)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
