"""Deterministic synthetic road worlds and an oracle trip generator.

A w x h lattice of intersections with every street doubled into two
directed links stands in for a real city. Trips are drawn from a planted
origin-destination structure (seeded per-node popularity combined with an
inverse-square distance kernel) and routed along shortest paths with an
optional per-step detour, so every downstream statistic has a known ground
truth.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .rng import substream
from .roadnet import RoadNetwork

MIN_TRIP_LINKS = 5          # shorter trips are discarded and redrawn
_MAX_REDRAWS = 200


@dataclass(frozen=True)
class WorldConfig:
    width: int = 10
    height: int = 10
    link_length: float = 100.0
    curviness: float = 0.6
    n_trajectories: int = 2000
    od_exponent: float = 2.0
    route_noise: float = 0.1
    seed: int = 0

    def validate(self) -> "WorldConfig":
        if self.width < 2 or self.height < 2:
            raise ConfigError("grid must be at least 2x2 intersections")
        if not 0.0 <= self.route_noise <= 0.5:
            raise ConfigError("route_noise must lie in [0, 0.5]")
        if self.link_length <= 0:
            raise ConfigError("link_length must be positive")
        if self.curviness < 0:
            raise ConfigError("curviness must be >= 0")
        if self.n_trajectories < 1:
            raise ConfigError("n_trajectories must be >= 1")
        return self


def generate_grid_network(cfg: WorldConfig) -> RoadNetwork:
    """Lattice with both directions of every street as separate links.

    Road length is the lattice spacing stretched by a seeded per-street
    curvature factor in [1, 1 + curviness] (roads bend; both directions of
    a street share one length), so trip length is not a multiple of a
    single unit.
    """
    cfg.validate()
    w, h, ll = cfg.width, cfg.height, cfg.link_length
    curve_rng = substream(cfg.seed, "curvature")
    xy = np.array([(c * ll, r * ll) for r in range(h) for c in range(w)])
    link_from, link_to, lengths = [], [], []
    for r in range(h):
        for c in range(w):
            u = r * w + c
            for v in ((u + 1) if c + 1 < w else None,
                      (u + w) if r + 1 < h else None):
                if v is None:
                    continue
                street = ll * (1.0 + cfg.curviness * curve_rng.random())
                link_from += [u, v]
                link_to += [v, u]
                lengths += [street, street]
    return RoadNetwork(xy, np.array(link_from, dtype=np.int64),
                       np.array(link_to, dtype=np.int64), np.array(lengths))


def node_popularity(cfg: WorldConfig) -> np.ndarray:
    """Planted per-node attraction weights (heavy-ish lognormal tail)."""
    rng = substream(cfg.seed, "popularity")
    return rng.lognormal(mean=0.0, sigma=0.5, size=cfg.width * cfg.height)


def od_matrix(network: RoadNetwork, cfg: WorldConfig) -> np.ndarray:
    """Normalized OD draw probabilities: pop(o)*pop(d) / dist(o,d)^exponent."""
    pop = node_popularity(cfg)
    xy = network.node_xy
    d = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=2))
    with np.errstate(divide="ignore"):
        p = np.outer(pop, pop) / np.where(d > 0, d ** cfg.od_exponent, np.inf)
    np.fill_diagonal(p, 0.0)
    return p / p.sum()


def _dist_to_target(network: RoadNetwork, target: int) -> np.ndarray:
    """Dijkstra distances from every node to `target` along directed links."""
    # Run on the reversed graph: incoming links of each node.
    n = network.n_nodes
    incoming: list[list[int]] = [[] for _ in range(n)]
    for j in range(network.n_links):
        incoming[int(network.link_to[j])].append(j)
    dist = np.full(n, np.inf)
    dist[target] = 0.0
    heap = [(0.0, target)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for j in incoming[u]:
            v = int(network.link_from[j])
            nd = d + network.link_length[j]
            if nd < dist[v] - 1e-12:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def _route(network: RoadNetwork, out_links, dist, origin: int, target: int,
           eps: float, rng: np.random.Generator, max_steps: int):
    """Walk origin -> target descending the distance field, with eps detours.

    A detour takes one random feasible outgoing link; the walk then resumes
    greedy shortest-path descent. The exact reverse of the previous link is
    avoided whenever an alternative exists.
    """
    path: list[int] = []
    node, prev = origin, -1
    for _ in range(max_steps):
        if node == target:
            return path
        cand = out_links[node]
        if prev >= 0 and len(cand) > 1:
            rev = (network.link_to[cand] == network.link_from[prev]) & \
                  (network.link_from[cand] == network.link_to[prev])
            cand = cand[~rev]
        if eps > 0 and rng.random() < eps:
            j = int(cand[rng.integers(len(cand))])
        else:
            through = network.link_length[cand] + dist[network.link_to[cand]]
            best = cand[through <= through.min() + 1e-9]
            j = int(best[rng.integers(len(best))]) if len(best) > 1 else int(best[0])
        path.append(j)
        prev = j
        node = int(network.link_to[j])
    return None  # step budget exhausted; caller redraws


def simulate_corpus(network: RoadNetwork, cfg: WorldConfig) -> list[np.ndarray]:
    """Oracle trip corpus; same seed gives a byte-identical corpus."""
    cfg.validate()
    out_links = network.out_links()
    od = od_matrix(network, cfg)
    od_flat = np.cumsum(od.ravel())
    od_flat /= od_flat[-1]
    n_nodes = network.n_nodes
    dist_cache: dict[int, np.ndarray] = {}
    max_steps = 8 * (cfg.width + cfg.height)

    corpus = []
    for i in range(cfg.n_trajectories):
        rng = substream(cfg.seed, "trajectory", i)
        for _ in range(_MAX_REDRAWS):
            k = int(np.searchsorted(od_flat, rng.random()))
            o, d = divmod(k, n_nodes)
            if d not in dist_cache:
                dist_cache[d] = _dist_to_target(network, d)
            if not np.isfinite(dist_cache[d][o]):
                continue  # unreachable OD; redraw
            path = _route(network, out_links, dist_cache[d], o, d,
                          cfg.route_noise, rng, max_steps)
            if path is not None and len(path) >= MIN_TRIP_LINKS:
                corpus.append(np.array(path, dtype=np.int64))
                break
        else:
            raise NumericalError(f"trajectory {i}: redraw budget exhausted")
    return corpus
