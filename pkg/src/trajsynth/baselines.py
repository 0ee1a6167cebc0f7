"""Reference generators the trained model is compared against.

The random walk follows graph adjacency weighted by real-corpus visitation
counts with lengths resampled from the real length distribution; the
Markov-chain baseline fits first-order link transitions with an absorbing
end state by maximum likelihood.
"""

from __future__ import annotations

import numpy as np

from .rng import substream
from .roadnet import RoadNetwork


def visitation_counts(corpus, n_links: int) -> np.ndarray:
    counts = np.zeros(n_links)
    for traj in corpus:
        ids, occ = np.unique(np.asarray(traj, dtype=np.int64), return_counts=True)
        counts[ids] += occ
    return counts


def _draw(rng: np.random.Generator, cum: np.ndarray) -> int:
    return int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))


def random_walk_baseline(network: RoadNetwork, real_corpus, n: int, seed: int = 0):
    """Visitation-count-guided random walks with real-corpus lengths."""
    if len(real_corpus) == 0:
        raise ValueError("baseline needs a nonempty real corpus")
    counts = visitation_counts(real_corpus, network.n_links)
    if counts.sum() == 0:
        counts = np.ones(network.n_links)
    start_cum = np.cumsum(counts)
    succ = network.successor_links()
    lengths = np.array([len(t) for t in real_corpus])

    out = []
    for i in range(n):
        rng = substream(seed, "rw", i)
        target = int(lengths[rng.integers(len(lengths))])
        cur = _draw(rng, start_cum)
        traj = [cur]
        while len(traj) < target:
            nxt = succ[cur]
            if len(nxt) == 0:
                break
            w = counts[nxt]
            if w.sum() <= 0:
                w = np.ones(len(nxt))
            cur = int(nxt[_draw(rng, np.cumsum(w))])
            traj.append(cur)
        out.append(np.array(traj, dtype=np.int64))
    return out


class MarkovChainModel:
    """First-order link transition model with an absorbing end state."""

    def __init__(self, corpus, n_links: int):
        if len(corpus) == 0:
            raise ValueError("cannot fit a Markov chain on an empty corpus")
        self.n_links = n_links
        self.end_state = n_links
        start = np.zeros(n_links)
        self._rows: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        counts: dict[int, dict[int, int]] = {}
        for traj in corpus:
            t = np.asarray(traj, dtype=np.int64)
            start[t[0]] += 1
            for a, b in zip(t[:-1], t[1:]):
                counts.setdefault(int(a), {}).setdefault(int(b), 0)
                counts[int(a)][int(b)] += 1
            counts.setdefault(int(t[-1]), {}).setdefault(self.end_state, 0)
            counts[int(t[-1])][self.end_state] += 1
        self.start_probs = start / start.sum()
        for a, row in counts.items():
            states = np.array(sorted(row), dtype=np.int64)
            probs = np.array([row[int(s)] for s in states], dtype=float)
            self._rows[a] = (states, probs / probs.sum())
        self.max_observed_len = max(len(t) for t in corpus)

    def transition_probs(self, a: int) -> dict[int, float]:
        states, probs = self._rows.get(int(a), (np.array([], dtype=np.int64),
                                                np.array([])))
        return {int(s): float(p) for s, p in zip(states, probs)}

    def sample(self, n: int, seed: int = 0, max_len: int | None = None):
        """n trajectories; walks end at the absorbing state or the length cap."""
        cap = max_len if max_len is not None else 4 * self.max_observed_len
        start_cum = np.cumsum(self.start_probs)
        out = []
        for i in range(n):
            rng = substream(seed, "mmc", i)
            cur = _draw(rng, start_cum)
            traj = [cur]
            while len(traj) < cap:
                states, probs = self._rows.get(cur, (None, None))
                if states is None:
                    break
                nxt = int(states[_draw(rng, np.cumsum(probs))])
                if nxt == self.end_state:
                    break
                traj.append(nxt)
                cur = nxt
            out.append(np.array(traj, dtype=np.int64))
        return out


def mmc_baseline(corpus, n_links: int, n: int, seed: int = 0,
                 max_len: int | None = None):
    return MarkovChainModel(corpus, n_links).sample(n, seed=seed, max_len=max_len)
