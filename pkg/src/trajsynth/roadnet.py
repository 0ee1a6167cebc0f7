"""Road network graph, region grid, gravity table, and link connectivity.

Coordinates are planar meters. Link ids are dense integers 0..L-1 and a
link and its reverse are distinct entries (the graph is directed). The
connectivity matrix is derived from consecutive link pairs observed in a
trajectory corpus, with the boundary-token row and column always allowed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError

NETWORK_FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class RoadNetwork:
    node_xy: np.ndarray      # (N, 2) float64, meters
    link_from: np.ndarray    # (L,) int64
    link_to: np.ndarray      # (L,) int64
    link_length: np.ndarray  # (L,) float64, meters > 0

    def __post_init__(self):
        n, l = self.n_nodes, self.n_links
        if n == 0 or l == 0:
            raise DataFormatError("network must have at least one node and one link")
        for arr in (self.link_from, self.link_to):
            if arr.min() < 0 or arr.max() >= n:
                raise DataFormatError("link references a nonexistent node")
        if not (self.link_length > 0).all():
            bad = int(np.argmin(self.link_length > 0))
            raise DataFormatError(f"link {bad} has nonpositive length")

    @property
    def n_nodes(self) -> int:
        return self.node_xy.shape[0]

    @property
    def n_links(self) -> int:
        return self.link_from.shape[0]

    @property
    def link_centroids(self) -> np.ndarray:
        """(L, 2) segment midpoints, used for region assignment and radii."""
        return 0.5 * (self.node_xy[self.link_from] + self.node_xy[self.link_to])

    def out_links(self) -> list[np.ndarray]:
        """Per-node array of outgoing link ids."""
        order = np.argsort(self.link_from, kind="stable")
        bounds = np.searchsorted(self.link_from[order], np.arange(self.n_nodes + 1))
        return [order[bounds[i]:bounds[i + 1]] for i in range(self.n_nodes)]

    def successor_links(self) -> list[np.ndarray]:
        """Per-link array of graph-adjacent successor links (head meets tail)."""
        per_node = self.out_links()
        return [per_node[int(h)] for h in self.link_to]


def write_network(path, network: RoadNetwork) -> None:
    lines = [f"ROADNET {NETWORK_FORMAT_VERSION}",
             f"NODES {network.n_nodes}",
             f"LINKS {network.n_links}"]
    for i in range(network.n_nodes):
        x, y = network.node_xy[i]
        lines.append(f"N {i} {float(x)!r} {float(y)!r}")
    for j in range(network.n_links):
        lines.append(f"L {j} {int(network.link_from[j])} {int(network.link_to[j])} "
                     f"{float(network.link_length[j])!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_network(path) -> RoadNetwork:
    with open(path, "r", encoding="utf-8") as fh:
        raw = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if len(raw) < 3 or not raw[0].startswith("ROADNET "):
        raise DataFormatError(f"{path}: missing ROADNET header")
    version = raw[0].split()[1]
    if int(version) != NETWORK_FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported network format version {version}")
    try:
        n_nodes = int(raw[1].split()[1])
        n_links = int(raw[2].split()[1])
        node_xy = np.zeros((n_nodes, 2))
        link_from = np.zeros(n_links, dtype=np.int64)
        link_to = np.zeros(n_links, dtype=np.int64)
        link_length = np.zeros(n_links)
        seen_n = np.zeros(n_nodes, dtype=bool)
        seen_l = np.zeros(n_links, dtype=bool)
        for ln in raw[3:]:
            parts = ln.split()
            if parts[0] == "N":
                i = int(parts[1])
                node_xy[i] = (float(parts[2]), float(parts[3]))
                seen_n[i] = True
            elif parts[0] == "L":
                j = int(parts[1])
                link_from[j] = int(parts[2])
                link_to[j] = int(parts[3])
                link_length[j] = float(parts[4])
                seen_l[j] = True
            else:
                raise DataFormatError(f"{path}: unknown record type {parts[0]!r}")
    except (IndexError, ValueError) as exc:
        raise DataFormatError(f"{path}: malformed record ({exc})") from exc
    if not seen_n.all() or not seen_l.all():
        raise DataFormatError(f"{path}: header counts do not match records")
    return RoadNetwork(node_xy, link_from, link_to, link_length)


def network_file_hash(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def lonlat_to_meters(lon: np.ndarray, lat: np.ndarray) -> np.ndarray:
    """Local equirectangular projection around the data's mean latitude."""
    r_earth = 6_371_000.0
    lat0 = np.deg2rad(np.mean(lat))
    x = r_earth * np.deg2rad(lon) * np.cos(lat0)
    y = r_earth * np.deg2rad(lat)
    return np.stack([x, y], axis=1)


# ---------------------------------------------------------------------------
# Region grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RegionMap:
    gw: int
    gh: int
    bbox: tuple[float, float, float, float]   # xmin, ymin, xmax, ymax
    link_region: np.ndarray                    # (L,) int64
    region_centroids: np.ndarray               # (gw*gh, 2)
    degenerate: bool = False

    @property
    def n_regions(self) -> int:
        return self.gw * self.gh

    def region_of_point(self, x: float, y: float) -> int:
        cx = _cell_index(x, self.bbox[0], self.bbox[2], self.gw)
        cy = _cell_index(y, self.bbox[1], self.bbox[3], self.gh)
        return cy * self.gw + cx


def _cell_index(v: float, lo: float, hi: float, n: int) -> int:
    """Grid cell of v in [lo, hi]; exact cell boundaries go to the lower cell."""
    if hi <= lo:
        return 0
    t = (v - lo) / (hi - lo)
    c = int(np.ceil(t * n)) - 1
    return min(n - 1, max(0, c))


def build_region_map(network: RoadNetwork, gw: int, gh: int) -> RegionMap:
    if gw < 1 or gh < 1:
        raise ValueError("grid dimensions must be >= 1")
    cent = network.link_centroids
    xmin, ymin = cent.min(axis=0)
    xmax, ymax = cent.max(axis=0)
    degenerate = xmax <= xmin and ymax <= ymin
    if degenerate:
        gw = gh = 1
    cx = np.array([_cell_index(x, xmin, xmax, gw) for x in cent[:, 0]], dtype=np.int64)
    cy = np.array([_cell_index(y, ymin, ymax, gh) for y in cent[:, 1]], dtype=np.int64)
    link_region = cy * gw + cx

    # Member-centroid means where occupied, geometric cell centers elsewhere
    # (empty regions carry weight 0 so the filler never reaches the gravity sum).
    n_regions = gw * gh
    centroids = np.zeros((n_regions, 2))
    wx = (xmax - xmin) / gw if xmax > xmin else 1.0
    wy = (ymax - ymin) / gh if ymax > ymin else 1.0
    for r in range(n_regions):
        members = link_region == r
        if members.any():
            centroids[r] = cent[members].mean(axis=0)
        else:
            centroids[r] = (xmin + ((r % gw) + 0.5) * wx, ymin + ((r // gw) + 0.5) * wy)
    return RegionMap(gw, gh, (float(xmin), float(ymin), float(xmax), float(ymax)),
                     link_region, centroids, degenerate)


def region_weights(corpus: list[np.ndarray], rmap: RegionMap) -> np.ndarray:
    """Trajectory-endpoint counts per region: start and end each contribute 1."""
    w = np.zeros(rmap.n_regions)
    for traj in corpus:
        if len(traj) == 0:
            raise ValueError("trajectories must contain at least one link")
        w[rmap.link_region[traj[0]]] += 1
        w[rmap.link_region[traj[-1]]] += 1
    return w


@dataclass(frozen=True, eq=False)
class GravityTable:
    weights: np.ndarray    # (R,) endpoint counts
    dist2: np.ndarray      # (R, R) floored squared centroid distances, m^2
    gravity: np.ndarray    # (R, R) nonnegative flow scores
    dist_floor: float


def build_gravity_table(weights: np.ndarray, rmap: RegionMap) -> GravityTable:
    c = rmap.region_centroids
    d = np.sqrt(((c[:, None, :] - c[None, :, :]) ** 2).sum(axis=2))
    xmin, ymin, xmax, ymax = rmap.bbox
    cell_w = (xmax - xmin) / rmap.gw if xmax > xmin else 1.0
    cell_h = (ymax - ymin) / rmap.gh if ymax > ymin else 1.0
    # Half the cell diagonal keeps the same-region distance finite and scale-consistent.
    floor = 0.5 * float(np.hypot(cell_w, cell_h))
    d = np.maximum(d, floor)
    d2 = d * d
    grav = np.outer(weights, weights) / d2
    return GravityTable(np.asarray(weights, dtype=float), d2, grav, floor)


def gravity(table: GravityTable, rx: int, ry: int) -> float:
    return float(table.gravity[rx, ry])


# ---------------------------------------------------------------------------
# Connectivity matrix
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConnectivityMatrix:
    """Binary successor matrix over the token vocabulary.

    Stored as per-row sorted successor arrays; boundary-token rows and
    columns are all ones and are materialized on construction.
    """

    vocab_size: int
    boundary_tokens: tuple[int, ...]
    successors: tuple[np.ndarray, ...]         # per-row sorted allowed tokens
    _dense: np.ndarray = field(repr=False, default=None)

    def allows(self, a: int, b: int) -> bool:
        row = self.successors[a]
        i = np.searchsorted(row, b)
        return bool(i < len(row) and row[i] == b)

    def allowed_successors(self, a: int) -> np.ndarray:
        return self.successors[a]

    def dense_mask(self) -> np.ndarray:
        """(V, V) boolean matrix; rows index the previous token."""
        if self._dense is None:
            dense = np.zeros((self.vocab_size, self.vocab_size), dtype=bool)
            for a, row in enumerate(self.successors):
                dense[a, row] = True
            object.__setattr__(self, "_dense", dense)
        return self._dense

    def pairs_allowed(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return self.dense_mask()[a, b]

    @property
    def n_observed_pairs(self) -> int:
        """Allowed pairs excluding any involving a boundary token."""
        boundary = set(self.boundary_tokens)
        return sum(len(row) - len(boundary)
                   for a, row in enumerate(self.successors) if a not in boundary)


def build_rcm(corpus: list[np.ndarray], vocab_size: int, boundary_tokens=(),
              network: RoadNetwork | None = None,
              union_graph_adjacency: bool = False) -> ConnectivityMatrix:
    """Connectivity from observed consecutive pairs plus all-ones boundary rows/cols.

    With `union_graph_adjacency`, head-meets-tail link adjacency from the
    network is additionally allowed (stricter topological variant).
    """
    boundary = tuple(sorted(int(t) for t in boundary_tokens))
    rows: list[set[int]] = [set() for _ in range(vocab_size)]
    for traj in corpus:
        t = np.asarray(traj)
        if len(t) and (t.min() < 0 or t.max() >= vocab_size):
            raise DataFormatError(f"corpus contains link id outside vocab of size {vocab_size}")
        for a, b in zip(t[:-1], t[1:]):
            rows[int(a)].add(int(b))
    if union_graph_adjacency:
        if network is None:
            raise ValueError("union_graph_adjacency requires the network")
        for a, succ in enumerate(network.successor_links()):
            rows[a].update(int(s) for s in succ)
    for t in boundary:
        rows[t] = set(range(vocab_size))
    for a in range(vocab_size):
        rows[a].update(boundary)
    successors = tuple(np.array(sorted(r), dtype=np.int64) for r in rows)
    return ConnectivityMatrix(vocab_size, boundary, successors)
