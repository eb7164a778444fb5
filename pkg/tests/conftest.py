from __future__ import annotations

import sys
from pathlib import Path

import pytest

TESTS = Path(__file__).parent
ROOT = TESTS.parent
DATA = ROOT / "data"

sys.path.insert(0, str(TESTS))

from pstmon import pst  # noqa: E402


@pytest.fixture
def s_game_src() -> str:
    return (DATA / "s_game.pst").read_text()


@pytest.fixture
def s_game(s_game_src):
    return pst.load(s_game_src)


@pytest.fixture
def s_game_wild():
    return pst.load((DATA / "s_game_wild.pst").read_text())
