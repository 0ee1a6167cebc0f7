"""Gravity-ablation direction sweep over seeds on the curvy world."""

import sys
import time

import numpy as np

from trajsynth import baselines, corpus as C, evalmetrics as E, generate as G
from trajsynth import pretrain as P, roadnet, synthworld
from trajsynth.nn import AdamW, ModelConfig, Transformer
from trajsynth.rng import substream

STEPS = int(sys.argv[1]) if len(sys.argv) > 1 else 3000
LR = 3e-4
SEEDS = [1, 2, 3]
KEYS = ["query_error", "jsd_od", "jsd_trip_length", "jsd_radius", "jsd_gravity"]


def main():
    wcfg = synthworld.WorldConfig(width=10, height=10, n_trajectories=2000, seed=0)
    net = synthworld.generate_grid_network(wcfg)
    crp = synthworld.simulate_corpus(net, wcfg)
    print(f"world: mean len {np.mean([len(t) for t in crp]):.1f}, "
          f"len std {np.std([float(net.link_length[t].sum()) for t in crp]):.0f} m")
    vocab = C.Vocab(net.n_links)
    rmap = roadnet.build_region_map(net, 8, 8)
    gt = roadnet.build_gravity_table(roadnet.region_weights(crp, rmap), rmap)
    rcm = roadnet.build_rcm(crp, vocab.size, boundary_tokens=vocab.boundary_tokens)

    rows = {}
    for seed in SEEDS:
        train, test = C.split(crp, 0.8, substream(seed, "split"))
        for gravity in (True, False):
            t0 = time.time()
            model = Transformer(ModelConfig(vocab_size=vocab.size, seed=seed),
                                substream(seed, "init"))
            sampler = P.GravitySampler.from_corpus(
                train, rmap, gt, substream(seed, "sampler"), gravity_on=gravity)
            tcfg = P.TrainConfig(steps=STEPS, batch_size=64, eval_interval=1000,
                                 seed=seed, gravity_sampling=gravity)
            trace = P.pretrain(model, AdamW(lr=LR), train, test, vocab, rcm,
                               sampler, tcfg)
            syn, _ = G.generate_corpus(model, rcm, vocab, len(crp),
                                       temperature=1.0, max_len=48, seed=seed)
            row, _ = E.metric_row(crp, syn, net, rmap, rcm, seed=seed)
            rows[(seed, gravity)] = row
            print(f"seed={seed} gravity={int(gravity)} ({time.time()-t0:.0f}s, "
                  f"eval {trace[-1]['eval_loss']:.3f}): "
                  + " ".join(f"{k}={row[k]:.4f}" for k in KEYS), flush=True)

    print("\nmedians over seeds:")
    for gravity in (True, False):
        med = {k: float(np.median([rows[(s, gravity)][k] for s in SEEDS])) for k in KEYS}
        print(f"  gravity={int(gravity)}: " + " ".join(f"{k}={med[k]:.4f}" for k in KEYS))

    print("\nbaselines (per seed):")
    for seed in SEEDS:
        rw = baselines.random_walk_baseline(net, crp, len(crp), seed=seed)
        row_rw, _ = E.metric_row(crp, rw, net, rmap, rcm, seed=seed)
        mmc = baselines.mmc_baseline(crp, net.n_links, len(crp), seed=seed)
        row_mmc, _ = E.metric_row(crp, mmc, net, rmap, rcm, seed=seed)
        m = rows[(seed, True)]
        print(f"  seed={seed} rw: " + " ".join(f"{k}={row_rw[k]:.4f}" for k in KEYS))
        print(f"  seed={seed} mmc: " + " ".join(f"{k}={row_mmc[k]:.4f}" for k in KEYS))
        print(f"  seed={seed} model beats rw {sum(m[k] < row_rw[k] for k in KEYS)}/5, "
              f"mmc {sum(m[k] < row_mmc[k] for k in KEYS)}/5")


if __name__ == "__main__":
    main()
