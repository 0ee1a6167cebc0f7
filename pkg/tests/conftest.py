import numpy as np
import pytest

from trajsynth import corpus as C
from trajsynth import roadnet, synthworld


@pytest.fixture(scope="session")
def small_world():
    """5x5 grid with a 300-trajectory oracle corpus (fast, shared read-only)."""
    cfg = synthworld.WorldConfig(width=5, height=5, n_trajectories=300, seed=11)
    network = synthworld.generate_grid_network(cfg)
    corpus = synthworld.simulate_corpus(network, cfg)
    return cfg, network, corpus


@pytest.fixture(scope="session")
def small_vocab(small_world):
    _, network, _ = small_world
    return C.Vocab(network.n_links)


@pytest.fixture(scope="session")
def small_geo(small_world, small_vocab):
    _, network, corpus = small_world
    rmap = roadnet.build_region_map(network, 4, 4)
    weights = roadnet.region_weights(corpus, rmap)
    gtable = roadnet.build_gravity_table(weights, rmap)
    rcm = roadnet.build_rcm(corpus, small_vocab.size,
                            boundary_tokens=small_vocab.boundary_tokens)
    return rmap, gtable, rcm


def make_line_network(n_nodes=4, length=100.0):
    """Chain of nodes with bidirectional links, for hand-computable cases."""
    xy = np.array([(i * length, 0.0) for i in range(n_nodes)])
    link_from, link_to = [], []
    for i in range(n_nodes - 1):
        link_from += [i, i + 1]
        link_to += [i + 1, i]
    return roadnet.RoadNetwork(xy, np.array(link_from), np.array(link_to),
                               np.full(len(link_from), length))
