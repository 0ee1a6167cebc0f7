import heapq

import numpy as np
import pytest

from trajsynth import roadnet, synthworld
from trajsynth.errors import ConfigError


def test_grid_link_counts():
    for w, h, expect in [(2, 2, 8), (10, 10, 360), (3, 5, 2 * (3 * 4 + 5 * 2))]:
        cfg = synthworld.WorldConfig(width=w, height=h, seed=0)
        net = synthworld.generate_grid_network(cfg)
        assert net.n_links == expect
        assert net.n_nodes == w * h


def test_every_link_has_a_reverse():
    net = synthworld.generate_grid_network(synthworld.WorldConfig(width=4, height=3, seed=0))
    pairs = {(int(a), int(b)) for a, b in zip(net.link_from, net.link_to)}
    for a, b in pairs:
        assert (b, a) in pairs


def test_config_validation():
    with pytest.raises(ConfigError):
        synthworld.WorldConfig(width=1, height=5).validate()
    with pytest.raises(ConfigError):
        synthworld.WorldConfig(route_noise=0.9).validate()
    with pytest.raises(ConfigError):
        synthworld.WorldConfig(link_length=0.0).validate()


def _dijkstra_node_dist(net, source):
    """Independent shortest-path oracle over directed links."""
    out = [[] for _ in range(net.n_nodes)]
    for j in range(net.n_links):
        out[int(net.link_from[j])].append(j)
    dist = np.full(net.n_nodes, np.inf)
    dist[source] = 0.0
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for j in out[u]:
            v = int(net.link_to[j])
            nd = d + net.link_length[j]
            if nd < dist[v] - 1e-12:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def test_zero_noise_routes_are_shortest_paths():
    cfg = synthworld.WorldConfig(width=6, height=6, n_trajectories=60,
                                 route_noise=0.0, seed=5)
    net = synthworld.generate_grid_network(cfg)
    corpus = synthworld.simulate_corpus(net, cfg)
    for traj in corpus:
        o = int(net.link_from[traj[0]])
        d = int(net.link_to[traj[-1]])
        oracle = _dijkstra_node_dist(net, o)[d]
        assert float(net.link_length[traj].sum()) == pytest.approx(oracle, abs=1e-9)


def test_minimum_trip_length_and_adjacency(small_world):
    _, net, corpus = small_world
    for traj in corpus:
        assert len(traj) >= synthworld.MIN_TRIP_LINKS
        assert (net.link_to[traj[:-1]] == net.link_from[traj[1:]]).all()


def test_same_seed_reproduces_corpus_exactly(small_world):
    cfg, net, corpus = small_world
    again = synthworld.simulate_corpus(net, cfg)
    assert len(again) == len(corpus)
    assert all(np.array_equal(a, b) for a, b in zip(corpus, again))


def test_empirical_od_gravity_converges_to_planted():
    cfg_small = synthworld.WorldConfig(width=6, height=6, n_trajectories=250, seed=3)
    cfg_big = synthworld.WorldConfig(width=6, height=6, n_trajectories=4000, seed=3)
    net = synthworld.generate_grid_network(cfg_small)
    rmap = roadnet.build_region_map(net, 3, 3)
    od = synthworld.od_matrix(net, cfg_small)

    planted = np.zeros((rmap.n_regions, rmap.n_regions))
    region_of_node = np.array([rmap.region_of_point(x, y) for x, y in net.node_xy])
    for o in range(net.n_nodes):
        for d in range(net.n_nodes):
            planted[region_of_node[o], region_of_node[d]] += od[o, d]

    def empirical(corpus):
        emp = np.zeros_like(planted)
        for t in corpus:
            o = region_of_node[int(net.link_from[t[0]])]
            d = region_of_node[int(net.link_to[t[-1]])]
            emp[o, d] += 1
        return emp / emp.sum()

    l1_small = np.abs(empirical(synthworld.simulate_corpus(net, cfg_small)) - planted).sum()
    l1_big = np.abs(empirical(synthworld.simulate_corpus(net, cfg_big)) - planted).sum()
    assert l1_big < l1_small
