"""Distributional utility metrics comparing a synthetic corpus against a real one.

Query error counts per-link trajectory visits under a sanity bound;
everything else is base-2 Jensen-Shannon divergence over paired histograms
(origin-destination regions, trip lengths, radii of gyration, recomputed
region-pair gravity) plus the connectivity fraction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .roadnet import RegionMap, RoadNetwork, build_gravity_table, region_weights
from .rng import substream

REPORT_FORMAT_VERSION = 1
SMOOTH_EPS = 1e-12     # zero-mass smoothing keeps KL terms finite
DEFAULT_BINS = 50
DEFAULT_QUERIES = 500


@dataclass(frozen=True, eq=False)
class Histogram:
    """Normalized mass over shared numeric bins or shared category labels."""

    mass: np.ndarray
    edges: np.ndarray | None = None          # numeric bins: len(mass) + 1 edges
    categories: tuple | None = None          # categorical support
    count: int = 0

    def __post_init__(self):
        if (self.edges is None) == (self.categories is None):
            raise ValueError("histogram needs exactly one of edges or categories")
        if self.edges is not None and not (np.diff(self.edges) > 0).all():
            raise ValueError("bin edges must be strictly increasing")
        if (self.mass < 0).any() or abs(self.mass.sum() - 1.0) > 1e-9:
            raise ValueError("histogram mass must be nonnegative and sum to 1")

    def same_support(self, other: "Histogram") -> bool:
        if self.edges is not None:
            return other.edges is not None and np.array_equal(self.edges, other.edges)
        return self.categories == other.categories


def jsd(p: Histogram, q: Histogram) -> float:
    """Base-2 Jensen-Shannon divergence, bounded in [0, 1]."""
    if not p.same_support(q):
        raise ValueError("histograms are over different supports")
    return jsd_mass(p.mass, q.mass)


def jsd_mass(p: np.ndarray, q: np.ndarray) -> float:
    m = 0.5 * (p + q)

    def kl(a):
        nz = a > 0
        return float(np.sum(a[nz] * np.log2(a[nz] / m[nz])))

    return 0.5 * kl(p) + 0.5 * kl(q)


def pooled_edges(value_groups, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Uniform bin edges spanning the pooled min/max of all inputs."""
    allv = np.concatenate([np.asarray(v, dtype=float) for v in value_groups])
    lo, hi = float(allv.min()), float(allv.max())
    if hi <= lo:   # all-equal values still need a valid bin range
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, bins + 1)


def value_histogram(values, edges: np.ndarray) -> Histogram:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("cannot histogram an empty corpus")
    idx = np.clip(np.searchsorted(edges, values, side="right") - 1, 0, len(edges) - 2)
    mass = np.bincount(idx, minlength=len(edges) - 1).astype(float)
    return Histogram(mass / mass.sum(), edges=edges, count=values.size)


def categorical_histogram(counts: dict, categories: tuple,
                          smooth: float = SMOOTH_EPS) -> Histogram:
    mass = np.array([counts.get(c, 0.0) for c in categories], dtype=float)
    mass += smooth
    total = int(sum(counts.values()))
    return Histogram(mass / mass.sum(), categories=categories, count=total)


# ---------------------------------------------------------------------------
# Corpus statistics
# ---------------------------------------------------------------------------

def od_pair_counts(corpus, rmap: RegionMap) -> dict:
    counts: dict[tuple[int, int], float] = {}
    for traj in corpus:
        key = (int(rmap.link_region[traj[0]]), int(rmap.link_region[traj[-1]]))
        counts[key] = counts.get(key, 0.0) + 1.0
    return counts


def od_distribution(corpus, rmap: RegionMap, categories: tuple | None = None) -> Histogram:
    """Categorical distribution over (origin region, destination region) pairs."""
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    counts = od_pair_counts(corpus, rmap)
    if categories is None:
        categories = tuple(sorted(counts))
    return categorical_histogram(counts, categories)


def union_categories(*count_dicts) -> tuple:
    keys = set()
    for c in count_dicts:
        keys.update(c)
    return tuple(sorted(keys))


def traj_lengths(corpus, network: RoadNetwork) -> np.ndarray:
    return np.array([float(network.link_length[t].sum()) for t in corpus])


def trip_length_distribution(corpus, network: RoadNetwork,
                             edges: np.ndarray) -> Histogram:
    return value_histogram(traj_lengths(corpus, network), edges)


def radius_of_gyration(traj, network: RoadNetwork) -> float:
    """Root-mean-square distance of link centroids from their mean."""
    c = network.link_centroids[np.asarray(traj, dtype=np.int64)]
    center = c.mean(axis=0)
    return float(np.sqrt(((c - center) ** 2).sum(axis=1).mean()))


def radii(corpus, network: RoadNetwork) -> np.ndarray:
    return np.array([radius_of_gyration(t, network) for t in corpus])


def gravity_pair_values(corpus, rmap: RegionMap) -> dict:
    """Region-pair gravity recomputed from the corpus's own endpoint weights."""
    w = region_weights(corpus, rmap)
    table = build_gravity_table(w, rmap)
    out = {}
    nz = np.argwhere(table.gravity > 0)
    for rx, ry in nz:
        out[(int(rx), int(ry))] = float(table.gravity[rx, ry])
    return out


def gravity_distribution(corpus, rmap: RegionMap,
                         categories: tuple | None = None) -> Histogram:
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    vals = gravity_pair_values(corpus, rmap)
    if categories is None:
        categories = tuple(sorted(vals))
    return categorical_histogram(vals, categories)


def connectivity(corpus, rcm) -> float:
    """Fraction of trajectories whose every consecutive pair is allowed."""
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    ok = 0
    for traj in corpus:
        t = np.asarray(traj, dtype=np.int64)
        if len(t) < 2 or rcm.pairs_allowed(t[:-1], t[1:]).all():
            ok += 1
    return ok / len(corpus)


def query_error(real, syn, network: RoadNetwork, n_queries: int = DEFAULT_QUERIES,
                seed: int = 0) -> float:
    """Mean normalized per-link visit-count error over sampled query links.

    Per query link: |f_real - f_syn| / max(f_real, s) where f counts
    trajectories passing through the link and the sanity bound s is 1% of
    the real corpus size.
    """
    if len(real) == 0 or len(syn) == 0:
        raise ValueError("query error needs two nonempty corpora")
    rng = substream(seed, "query_links")
    k = min(n_queries, network.n_links)
    links = rng.choice(network.n_links, size=k, replace=False)

    def visits(corpus):
        f = np.zeros(network.n_links)
        for traj in corpus:
            f[np.unique(np.asarray(traj, dtype=np.int64))] += 1
        return f

    f_real, f_syn = visits(real), visits(syn)
    s = 0.01 * len(real)
    per_query = np.abs(f_real[links] - f_syn[links]) / np.maximum(f_real[links], s)
    return float(per_query.mean())


# ---------------------------------------------------------------------------
# Report assembly
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    rows: dict[str, dict]                 # per-corpus metric rows, keyed by label
    real_size: int
    syn_size: int
    seed: int
    config_hash: str = ""
    plot_data: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"format_version": REPORT_FORMAT_VERSION,
                "real_size": self.real_size, "syn_size": self.syn_size,
                "seed": self.seed, "config_hash": self.config_hash,
                "rows": self.rows}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, indent=1)


def metric_row(real, syn, network: RoadNetwork, rmap: RegionMap, rcm,
               seed: int = 0, bins: int = DEFAULT_BINS,
               n_queries: int = DEFAULT_QUERIES):
    """All six metrics for one (real, synthetic) corpus pair."""
    od_cats = union_categories(od_pair_counts(real, rmap), od_pair_counts(syn, rmap))
    grav_cats = union_categories(gravity_pair_values(real, rmap),
                                 gravity_pair_values(syn, rmap))
    len_real, len_syn = traj_lengths(real, network), traj_lengths(syn, network)
    len_edges = pooled_edges([len_real, len_syn], bins)
    rad_real, rad_syn = radii(real, network), radii(syn, network)
    rad_edges = pooled_edges([rad_real, rad_syn], bins)
    row = {
        "query_error": query_error(real, syn, network, n_queries, seed),
        "jsd_od": jsd(od_distribution(real, rmap, od_cats),
                      od_distribution(syn, rmap, od_cats)),
        "jsd_trip_length": jsd(value_histogram(len_real, len_edges),
                               value_histogram(len_syn, len_edges)),
        "jsd_radius": jsd(value_histogram(rad_real, rad_edges),
                          value_histogram(rad_syn, rad_edges)),
        "jsd_gravity": jsd(gravity_distribution(real, rmap, grav_cats),
                           gravity_distribution(syn, rmap, grav_cats)),
        "connectivity": connectivity(syn, rcm),
    }
    plot = {
        "trip_length": {"edges": len_edges,
                        "real": value_histogram(len_real, len_edges).mass,
                        "syn": value_histogram(len_syn, len_edges).mass},
        "radius": {"edges": rad_edges,
                   "real": value_histogram(rad_real, rad_edges).mass,
                   "syn": value_histogram(rad_syn, rad_edges).mass},
    }
    return row, plot


def report(real, syn, network: RoadNetwork, rmap: RegionMap, rcm, *,
           seed: int = 0, baselines: dict | None = None, config_hash: str = "",
           bins: int = DEFAULT_BINS, n_queries: int = DEFAULT_QUERIES) -> MetricsReport:
    """Metric rows for the model corpus and any baseline corpora."""
    rows = {}
    row, plot = metric_row(real, syn, network, rmap, rcm, seed, bins, n_queries)
    rows["model"] = row
    for name, corpus in (baselines or {}).items():
        rows[name], _ = metric_row(real, corpus, network, rmap, rcm, seed,
                                   bins, n_queries)
    return MetricsReport(rows, len(real), len(syn), seed,
                         config_hash=config_hash, plot_data=plot)


def write_report(path, rep: MetricsReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(rep.to_json() + "\n")


def write_plot_csv(path, rep: MetricsReport, header_meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in sorted((header_meta or {}).items()):
            fh.write(f"# {k}={v}\n")
        fh.write("metric,bin_left,bin_right,real_mass,syn_mass\n")
        for metric, data in sorted(rep.plot_data.items()):
            edges = data["edges"]
            for i in range(len(edges) - 1):
                fh.write(f"{metric},{float(edges[i])!r},{float(edges[i + 1])!r},"
                         f"{float(data['real'][i])!r},{float(data['syn'][i])!r}\n")
