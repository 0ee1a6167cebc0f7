"""Compare sampling schemes: uniform vs trajectory-gravity vs pair-gravity."""

import sys
import time

import numpy as np

from trajsynth import corpus as C, evalmetrics as E, generate as G
from trajsynth import pretrain as P, roadnet, synthworld
from trajsynth.nn import AdamW, ModelConfig, Transformer
from trajsynth.rng import substream

STEPS = int(sys.argv[1]) if len(sys.argv) > 1 else 1500
SEEDS = [int(s) for s in (sys.argv[2].split(",") if len(sys.argv) > 2 else ["1", "2"])]
TEMP = float(sys.argv[3]) if len(sys.argv) > 3 else 1.0
KEYS = ["query_error", "jsd_od", "jsd_trip_length", "jsd_radius", "jsd_gravity"]


def main():
    wcfg = synthworld.WorldConfig(width=10, height=10, n_trajectories=2000, seed=0)
    net = synthworld.generate_grid_network(wcfg)
    crp = synthworld.simulate_corpus(net, wcfg)
    vocab = C.Vocab(net.n_links)
    rmap = roadnet.build_region_map(net, 8, 8)
    gt = roadnet.build_gravity_table(roadnet.region_weights(crp, rmap), rmap)
    rcm = roadnet.build_rcm(crp, vocab.size, boundary_tokens=vocab.boundary_tokens)

    rows = {}
    for seed in SEEDS:
        train, test = C.split(crp, 0.8, substream(seed, "split"))
        schemes = {
            "uniform": np.ones(len(train)),
            "traj_gravity": P.trajectory_gravity_weights(train, rmap, gt,
                                                         pair_level=False),
            "pair_gravity": P.trajectory_gravity_weights(train, rmap, gt,
                                                         pair_level=True),
        }
        for name, weights in schemes.items():
            t0 = time.time()
            model = Transformer(ModelConfig(vocab_size=vocab.size, seed=seed),
                                substream(seed, "init"))
            sampler = P.GravitySampler(weights, substream(seed, "sampler"))
            tcfg = P.TrainConfig(steps=STEPS, batch_size=64, eval_interval=STEPS,
                                 seed=seed, gravity_sampling=True)
            trace = P.pretrain(model, AdamW(lr=3e-4), train, test, vocab, rcm,
                               sampler, tcfg)
            syn, _ = G.generate_corpus(model, rcm, vocab, len(crp),
                                       temperature=TEMP, max_len=48, seed=seed)
            row, _ = E.metric_row(crp, syn, net, rmap, rcm, seed=seed)
            rows[(seed, name)] = row
            distinct = len({tuple(t) for t in syn})
            print(f"seed={seed} {name:>13} ({time.time()-t0:.0f}s, "
                  f"eval {trace[-1]['eval_loss']:.3f}, distinct {distinct}): "
                  + " ".join(f"{k}={row[k]:.4f}" for k in KEYS), flush=True)

    print("\nmedians over seeds:")
    for name in ("uniform", "traj_gravity", "pair_gravity"):
        med = {k: float(np.median([rows[(s, name)][k] for s in SEEDS])) for k in KEYS}
        print(f"  {name:>13}: " + " ".join(f"{k}={med[k]:.4f}" for k in KEYS))


if __name__ == "__main__":
    main()
