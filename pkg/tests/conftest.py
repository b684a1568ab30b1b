import numpy as np
import pytest

from qgspectra import build_graph, kirchhoff_s0


@pytest.fixture(scope="session")
def interval():
    """Single bond of length pi with free ends: spectrum is the integers."""
    g = build_graph(["u", "v"], [("u", "v")], [np.pi])
    return g, kirchhoff_s0(g)


@pytest.fixture(scope="session")
def star3():
    """Three-arm star with the benchmark lengths (1, 1.05, 0.95)."""
    g = build_graph(
        ["c", "t1", "t2", "t3"],
        [("c", "t1"), ("c", "t2"), ("c", "t3")],
        [1.0, 1.05, 0.95],
    )
    return g, kirchhoff_s0(g)


@pytest.fixture(scope="session")
def star3_equilateral():
    g = build_graph(
        ["c", "t1", "t2", "t3"],
        [("c", "t1"), ("c", "t2"), ("c", "t3")],
        [1.0, 1.0, 1.0],
    )
    return g, kirchhoff_s0(g)


@pytest.fixture(scope="session")
def star3_irrational():
    """Star with rationally independent lengths for equidistribution tests."""
    g = build_graph(
        ["c", "t1", "t2", "t3"],
        [("c", "t1"), ("c", "t2"), ("c", "t3")],
        [1.0, np.sqrt(2) - 0.37, np.sqrt(3) - 0.8],
    )
    return g, kirchhoff_s0(g)
