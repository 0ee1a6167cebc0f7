"""Full-scale dry run of the directional acceptance checks (one seed).

Trains the four pretraining arms, builds preferences, trains the reward
model, runs PPO and SFT, and prints every metric the acceptance suite
gates on. Used to pin desk-scale defaults before freezing tolerances.
"""

import sys
import time

import numpy as np

from trajsynth import baselines, corpus as C, evalmetrics as E, generate as G
from trajsynth import pretrain as P, rltf, roadnet, synthworld
from trajsynth.nn import AdamW, ModelConfig, Transformer
from trajsynth.rng import substream

SEED = int(sys.argv[1]) if len(sys.argv) > 1 else 1
STEPS = int(sys.argv[2]) if len(sys.argv) > 2 else 3000
LR = float(sys.argv[3]) if len(sys.argv) > 3 else 3e-4


def world():
    wcfg = synthworld.WorldConfig(width=10, height=10, n_trajectories=2000, seed=0)
    net = synthworld.generate_grid_network(wcfg)
    crp = synthworld.simulate_corpus(net, wcfg)
    return net, crp


def train_arm(net, crp, seed, gravity, rcm_mask, steps=STEPS, mode=C.EOT_ONLY):
    vocab = C.Vocab(net.n_links, mode)
    rmap = roadnet.build_region_map(net, 8, 8)
    gt = roadnet.build_gravity_table(roadnet.region_weights(crp, rmap), rmap)
    rcm = roadnet.build_rcm(crp, vocab.size, boundary_tokens=vocab.boundary_tokens)
    train, test = C.split(crp, 0.8, substream(seed, "split"))
    model = Transformer(ModelConfig(vocab_size=vocab.size, seed=seed),
                        substream(seed, "init"))
    opt = AdamW(lr=LR)
    sampler = P.GravitySampler.from_corpus(train, rmap, gt,
                                           substream(seed, "sampler"),
                                           gravity_on=gravity)
    tcfg = P.TrainConfig(steps=steps, batch_size=64, eval_interval=500, seed=seed,
                         gravity_sampling=gravity, rcm_masking=rcm_mask)
    t0 = time.time()
    trace = P.pretrain(model, opt, train, test, vocab, rcm, sampler, tcfg)
    print(f"  arm(gravity={gravity}, rcm={rcm_mask}, seed={seed}): "
          f"{time.time()-t0:.0f}s, final eval {trace[-1]['eval_loss']:.3f} "
          f"(bound {np.log(vocab.size):.3f})", flush=True)
    return model, vocab, rmap, gt, rcm, train, test


def gen_and_eval(model, rcm, vocab, net, rmap, crp, seed, use_mask=True, n=None):
    n = len(crp) if n is None else n
    t0 = time.time()
    syn, meta = G.generate_corpus(model, rcm if use_mask else None, vocab, n,
                                  temperature=1.0, max_len=48, seed=seed)
    row, _ = E.metric_row(crp, syn, net, rmap, rcm, seed=seed)
    print(f"  gen+eval {time.time()-t0:.0f}s meta={meta['retries']}r/{meta['shortfall']}s "
          f"-> {({k: round(v, 4) for k, v in row.items()})}", flush=True)
    return row, syn


def main():
    t_all = time.time()
    net, crp = world()
    print(f"world: {net.n_links} links, {len(crp)} trajectories, "
          f"mean len {np.mean([len(t) for t in crp]):.1f}")

    print("== criterion 3 arms (rcm on/off) ==", flush=True)
    m_on, vocab, rmap, gt, rcm, train, test = train_arm(net, crp, SEED, True, True)
    row_on, _ = gen_and_eval(m_on, rcm, vocab, net, rmap, crp, SEED, use_mask=True)
    m_off, *_ = train_arm(net, crp, SEED, True, False)
    row_off, _ = gen_and_eval(m_off, rcm, vocab, net, rmap, crp, SEED, use_mask=False)
    print(f"  connectivity: masked={row_on['connectivity']} unmasked={row_off['connectivity']}")

    print("== criterion 4 arm (gravity off) ==", flush=True)
    m_ng, *_ = train_arm(net, crp, SEED, False, True)
    row_ng, _ = gen_and_eval(m_ng, rcm, vocab, net, rmap, crp, SEED, use_mask=True)
    print(f"  gravity-on  jsd_od={row_on['jsd_od']:.4f} jsd_gravity={row_on['jsd_gravity']:.4f}")
    print(f"  gravity-off jsd_od={row_ng['jsd_od']:.4f} jsd_gravity={row_ng['jsd_gravity']:.4f}")

    print("== criterion 5 baselines ==", flush=True)
    rw = baselines.random_walk_baseline(net, crp, len(crp), seed=SEED)
    row_rw, _ = E.metric_row(crp, rw, net, rmap, rcm, seed=SEED)
    mmc = baselines.mmc_baseline(crp, net.n_links, len(crp), seed=SEED)
    row_mmc, _ = E.metric_row(crp, mmc, net, rmap, rcm, seed=SEED)
    print(f"  rw : {({k: round(v, 4) for k, v in row_rw.items()})}")
    print(f"  mmc: {({k: round(v, 4) for k, v in row_mmc.items()})}")
    keys = ["query_error", "jsd_od", "jsd_trip_length", "jsd_radius", "jsd_gravity"]
    print("  model beats rw:", sum(row_on[k] < row_rw[k] for k in keys), "/5")
    print("  model beats mmc:", sum(row_on[k] < row_mmc[k] for k in keys), "/5")

    print("== criterion 7 reward model ==", flush=True)
    t0 = time.time()
    pairs, stats = rltf.build_preference_dataset(
        m_on, rcm, vocab, net, train, 500, temperature=1.0, max_len=48, seed=SEED)
    print(f"  {len(pairs)} pairs in {time.time()-t0:.0f}s, stats {stats}", flush=True)
    t0 = time.time()
    rcfg = rltf.RewardConfig(steps=400, lr=1e-4, seed=SEED)
    rmodel, rtrace = rltf.train_reward_model(pairs, m_on, vocab, rcfg)
    print(f"  reward {time.time()-t0:.0f}s val_acc={rtrace[-1]['val_accuracy']:.3f} "
          f"trace={[(r['step'], round(r['val_accuracy'],3)) for r in rtrace]}", flush=True)

    print("== criterion 6 PPO + SFT ==", flush=True)
    base = m_on.clone()
    pcfg = rltf.PPOConfig(iterations=50, rollouts=32, epochs=4, lr=1e-5, beta=0.1,
                          seed=SEED)
    t0 = time.time()
    policy = m_on.clone()
    policy, ptrace = rltf.ppo_finetune(policy, base, rmodel, rcm, vocab, net,
                                       train, pcfg)
    print(f"  ppo {time.time()-t0:.0f}s rewards {ptrace[0]['mean_reward']:.3f} -> "
          f"{ptrace[-1]['mean_reward']:.3f}, kl -> {ptrace[-1]['mean_kl']:.4f}", flush=True)
    row_ppo, _ = gen_and_eval(policy, rcm, vocab, net, rmap, crp, SEED)
    sft_policy = m_on.clone()
    scfg = rltf.SFTConfig(steps=200, lr=1e-5, seed=SEED)
    sft_policy, _ = rltf.sft_finetune(sft_policy, pairs, rcm, vocab, scfg)
    row_sft, _ = gen_and_eval(sft_policy, rcm, vocab, net, rmap, crp, SEED)
    print(f"  trip-length JSD: pretrained={row_on['jsd_trip_length']:.4f} "
          f"ppo={row_ppo['jsd_trip_length']:.4f} sft={row_sft['jsd_trip_length']:.4f}")
    print(f"total {time.time()-t_all:.0f}s")


if __name__ == "__main__":
    main()
