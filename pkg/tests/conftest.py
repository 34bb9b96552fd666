import sys
from dataclasses import replace
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from picsim import load_scenario


@pytest.fixture(scope="session")
def paper_fig2():
    return load_scenario("paper_fig2")


@pytest.fixture(scope="session")
def paper_fig2_small(paper_fig2):
    """paper_fig2 with a shorter buffer for fast unit tests."""
    soi = replace(paper_fig2.soi, qam=replace(paper_fig2.soi.qam, num_symbols=1024))
    return replace(paper_fig2, soi=soi)


@pytest.fixture(scope="session")
def multiuser():
    return load_scenario("multiuser_two_interferers")
