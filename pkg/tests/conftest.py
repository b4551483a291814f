import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from treespace.trees import LeafSet, random_tree

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("fast", max_examples=10, deadline=None)
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

LEAVES = {1: "abc", 2: "abcd", 3: "abcde", 4: "abcdef"}


def leafset(m: int) -> LeafSet:
    return LeafSet(tuple(LEAVES[m]), "r")


@st.composite
def tree_pairs(draw, max_m=3, allow_degenerate=True):
    """Two random trees on a common leaf set, built from a drawn seed."""
    m = draw(st.integers(1, max_m))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    ls = leafset(m)

    def one():
        k = int(rng.integers(0, m + 1)) if allow_degenerate else m
        return random_tree(ls, rng, n_edges=k)

    return one(), one()


@st.composite
def binary_trees(draw, m=None, max_m=3):
    m = m or draw(st.integers(1, max_m))
    seed = draw(st.integers(0, 2**32 - 1))
    return random_tree(leafset(m), np.random.default_rng(seed))


@pytest.fixture
def t4():
    return leafset(2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)
