"""Pytest configuration and fixtures."""

import numpy as np
import pytest

from dgrbench.dem import build_decoding_graph, parse_dem
from dgrbench.surfgen import SurfaceCodeSpec, generate_surface_pheno


def graph_from_dem(text, weights=None):
    graph = build_decoding_graph(parse_dem(text))
    if weights is not None:
        graph = graph.with_weights(np.asarray(weights, dtype=float))
    return graph


@pytest.fixture
def make_graph():
    """Build a decoding graph from DEM text, optionally forcing the edge weights."""
    return graph_from_dem


@pytest.fixture
def simple_dem():
    """Three-edge chain with a logical on the left boundary."""
    return """
error(0.1) D0 L0
error(0.1) D0 D1
error(0.1) D1
"""


@pytest.fixture
def y_channel_dem():
    """One depolarizing-style channel whose middle arm touches both subgraphs."""
    return """
dem v1 detectors 4 observables 1
channel {
    error(0.01) D0 D1 L0
    error(0.02) D0 D1 L0 ^ D2 D3
    error(0.01) D2 D3
}
error(0.05) D0
error(0.05) D3
"""


@pytest.fixture(scope="session")
def d3_spec():
    return SurfaceCodeSpec(distance=3, p=0.01, rounds=3)


@pytest.fixture(scope="session")
def d3_model(d3_spec):
    return generate_surface_pheno(d3_spec)


@pytest.fixture(scope="session")
def d3_graph(d3_model):
    return build_decoding_graph(d3_model)


@pytest.fixture(scope="session")
def d3_r1_model():
    """Single noisy round at a high rate, so shots carry many flipped detectors."""
    return generate_surface_pheno(SurfaceCodeSpec(distance=3, p=0.05, rounds=1))


@pytest.fixture(scope="session")
def d3_r1_graph(d3_r1_model):
    return build_decoding_graph(d3_r1_model)


@pytest.fixture(scope="session")
def d5_model():
    return generate_surface_pheno(SurfaceCodeSpec(distance=5, p=0.01))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
