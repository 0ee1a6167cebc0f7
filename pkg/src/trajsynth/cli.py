"""Command-line pipeline: world synthesis, pretraining, fine-tuning, evaluation.

One structured YAML config drives every stage; command-line flags override
file values. All randomness flows from a single master seed through named
substreams, and every output file embeds the resolved config hash and the
master seed, so reruns with equal hashes are byte-identical.

Exit codes: 0 success, 2 config error, 3 data-format error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import baselines, corpus as corpus_mod, evalmetrics, generate as gen_mod
from . import pretrain as pretrain_mod, rltf, roadnet, synthworld
from .errors import ConfigError, DataFormatError, NumericalError
from .nn import AdamW, ModelConfig, Transformer, load_checkpoint, save_checkpoint
from .rng import substream

DEFAULTS: dict = {
    "master_seed": 0,
    "threads": 1,
    "tokenizer": corpus_mod.EOT_ONLY,
    "world": {"width": 10, "height": 10, "link_length": 100.0, "curviness": 0.6,
              "n_trajectories": 2000, "od_exponent": 2.0, "route_noise": 0.1},
    "regions": {"gw": 8, "gh": 8},
    "model": {"n_layers": 2, "n_heads": 2, "d_model": 32, "block_size": 64,
              "dropout": 0.1},
    "pretrain": {"steps": 3000, "batch_size": 64, "eval_interval": 100,
                 "train_frac": 0.8, "lr": 1e-5, "gravity_sampling": True,
                 "rcm_masking": True},
    "prefs": {"n_pairs": 500, "m_frac": 0.25, "temperature": 1.0, "max_len": 48},
    "reward": {"steps": 400, "batch_pairs": 32, "lr": 1e-4, "val_frac": 0.1,
               "eval_interval": 50},
    "ppo": {"iterations": 50, "rollouts": 32, "epochs": 4, "lr": 1e-5,
            "beta": 0.1, "clip_eps": 0.2, "temperature": 1.0, "max_len": 48,
            "m_frac": 0.25, "kl_ceiling": 5.0, "gravity_prompts": False},
    "sft": {"steps": 200, "batch_pairs": 32, "lr": 1e-5},
    "generate": {"n": 1000, "temperature": 1.0, "max_len": 48},
    "evaluate": {"bins": 50, "n_queries": 500, "with_baselines": False},
}


def _merge(base: dict, override: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in base:
            raise ConfigError(f"unknown config field {path + key!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config field {path + key!r} must be a section")
            out[key] = _merge(base[key], val, path + key + ".")
        else:
            out[key] = val
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULTS)
    if not Path(path).exists():
        raise ConfigError(f"config file {path} does not exist")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            user = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    if not isinstance(user, dict):
        raise ConfigError(f"{path}: config root must be a mapping")
    return _merge(DEFAULTS, user)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def file_hash(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _out_dir(args) -> Path:
    env = os.environ.get("TRAJSYNTH_OUT_DIR")
    base = Path(args.out_dir if getattr(args, "out_dir", None) else (env or "."))
    base.mkdir(parents=True, exist_ok=True)
    return base


def _stamp(cfg: dict) -> dict:
    return {"config_hash": config_hash(cfg), "master_seed": cfg["master_seed"]}


def _load_world(args, cfg):
    network = roadnet.read_network(args.network)
    net_hash = roadnet.network_file_hash(args.network)
    crp, meta = corpus_mod.read_corpus(args.corpus, expect_network_hash=net_hash)
    if any(t.max() >= network.n_links for t in crp):
        raise DataFormatError("corpus references links outside the network")
    return network, net_hash, crp, meta


def _build_vocab(cfg, network, mode=None):
    return corpus_mod.Vocab(network.n_links, mode or cfg["tokenizer"])


def _model_config(cfg, vocab, seed) -> ModelConfig:
    m = cfg["model"]
    try:
        return ModelConfig(vocab_size=vocab.size, n_layers=int(m["n_layers"]),
                           n_heads=int(m["n_heads"]), d_model=int(m["d_model"]),
                           block_size=int(m["block_size"]),
                           dropout=float(m["dropout"]), seed=seed).validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model config: {exc}") from exc


def _geo(cfg, network, crp, vocab):
    rmap = roadnet.build_region_map(network, cfg["regions"]["gw"], cfg["regions"]["gh"])
    weights = roadnet.region_weights(crp, rmap)
    gtable = roadnet.build_gravity_table(weights, rmap)
    rcm = roadnet.build_rcm(crp, vocab.size, boundary_tokens=vocab.boundary_tokens)
    return rmap, gtable, rcm


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth_world(args, cfg) -> int:
    out = _out_dir(args)
    w = cfg["world"]
    wcfg = synthworld.WorldConfig(
        width=int(w["width"]), height=int(w["height"]),
        link_length=float(w["link_length"]), curviness=float(w["curviness"]),
        n_trajectories=int(w["n_trajectories"]),
        od_exponent=float(w["od_exponent"]), route_noise=float(w["route_noise"]),
        seed=cfg["master_seed"]).validate()
    network = synthworld.generate_grid_network(wcfg)
    net_path = out / "network.txt"
    roadnet.write_network(net_path, network)
    crp = synthworld.simulate_corpus(network, wcfg)
    corpus_mod.write_corpus(out / "corpus.txt", crp, {
        "network_sha256": roadnet.network_file_hash(net_path),
        "kind": "synthetic_world", **_stamp(cfg)})
    print(f"wrote {net_path} ({network.n_links} links) and corpus "
          f"({len(crp)} trajectories)")
    return 0


def cmd_pretrain(args, cfg) -> int:
    network, net_hash, crp, _ = _load_world(args, cfg)
    vocab = _build_vocab(cfg, network, args.tokenizer)
    seed = cfg["master_seed"]
    pc = cfg["pretrain"]
    rmap, gtable, rcm = _geo(cfg, network, crp, vocab)
    train, test = corpus_mod.split(crp, float(pc["train_frac"]),
                                   substream(seed, "split"))
    model = Transformer(_model_config(cfg, vocab, seed), substream(seed, "init"))
    optimizer = AdamW(lr=float(pc["lr"]))
    tcfg = pretrain_mod.TrainConfig(
        steps=int(args.steps if args.steps is not None else pc["steps"]),
        batch_size=int(pc["batch_size"]), eval_interval=int(pc["eval_interval"]),
        seed=seed,
        gravity_sampling=pc["gravity_sampling"] and not args.no_gravity,
        rcm_masking=pc["rcm_masking"] and not args.no_rcm).validate()
    sampler = pretrain_mod.GravitySampler.from_corpus(
        train, rmap, gtable, substream(seed, "sampler"),
        gravity_on=tcfg.gravity_sampling)
    trace = pretrain_mod.pretrain(model, optimizer, train, test, vocab, rcm,
                                  sampler, tcfg)
    extra = {"network_sha256": net_hash, "tokenizer": vocab.mode,
             "rcm_masking": tcfg.rcm_masking,
             "gravity_sampling": tcfg.gravity_sampling, **_stamp(cfg)}
    save_checkpoint(args.out_checkpoint, model, optimizer, extra=extra)
    loss_csv = args.loss_csv or str(Path(args.out_checkpoint).with_suffix(".loss.csv"))
    pretrain_mod.write_trace_csv(loss_csv, trace, extra)
    final = trace[-1] if trace else {}
    print(f"pretrained {tcfg.steps} steps; final eval loss "
          f"{final.get('eval_loss', float('nan')):.4f}; wrote {args.out_checkpoint}")
    return 0


def _load_policy_and_world(args, cfg):
    network, net_hash, crp, _ = _load_world(args, cfg)
    model, _, _, extra = load_checkpoint(args.checkpoint)
    mode = extra.get("tokenizer", cfg["tokenizer"])
    vocab = corpus_mod.Vocab(network.n_links, mode)
    if model.cfg.vocab_size != vocab.size:
        raise DataFormatError(
            f"checkpoint vocab {model.cfg.vocab_size} does not match corpus "
            f"vocab {vocab.size}")
    if extra.get("network_sha256") not in (None, net_hash):
        raise DataFormatError("checkpoint was trained against a different network")
    rcm = roadnet.build_rcm(crp, vocab.size, boundary_tokens=vocab.boundary_tokens)
    use_rcm = extra.get("rcm_masking", True)
    return network, crp, model, vocab, rcm if use_rcm else None, extra


def cmd_build_prefs(args, cfg) -> int:
    network, crp, model, vocab, rcm, _ = _load_policy_and_world(args, cfg)
    seed = cfg["master_seed"]
    p = cfg["prefs"]
    train, _ = corpus_mod.split(crp, float(cfg["pretrain"]["train_frac"]),
                                substream(seed, "split"))
    pairs, stats = rltf.build_preference_dataset(
        model, rcm, vocab, network, train, int(p["n_pairs"]),
        m_frac=float(p["m_frac"]), temperature=float(p["temperature"]),
        max_len=int(p["max_len"]), seed=seed)
    rltf.write_preference_dataset(args.out, pairs, {
        "stats": stats, "checkpoint_sha256": file_hash(args.checkpoint),
        **_stamp(cfg)})
    print(f"wrote {len(pairs)} preference pairs to {args.out} "
          f"(skipped: {stats['skipped_identical']} identical, "
          f"{stats['skipped_ties']} ties)")
    return 0


def cmd_train_reward(args, cfg) -> int:
    pairs, _ = rltf.read_preference_dataset(args.prefs)
    policy, _, _, extra = load_checkpoint(args.checkpoint)
    seed = cfg["master_seed"]
    r = cfg["reward"]
    rcfg = rltf.RewardConfig(steps=int(r["steps"]), batch_pairs=int(r["batch_pairs"]),
                             lr=float(r["lr"]), val_frac=float(r["val_frac"]),
                             eval_interval=int(r["eval_interval"]), seed=seed)
    mode = extra.get("tokenizer", cfg["tokenizer"])
    n_boundary = 1 if mode == corpus_mod.EOT_ONLY else 2
    vocab = corpus_mod.Vocab(policy.cfg.vocab_size - n_boundary, mode)
    model, trace = rltf.train_reward_model(pairs, policy, vocab, rcfg)
    save_checkpoint(args.out, model, extra={"kind": "reward_model", **_stamp(cfg)})
    final = trace[-1] if trace else {}
    print(f"reward model: val pairwise accuracy "
          f"{final.get('val_accuracy', float('nan')):.3f}; wrote {args.out}")
    return 0


def cmd_finetune(args, cfg) -> int:
    network, crp, policy, vocab, rcm, _ = _load_policy_and_world(args, cfg)
    seed = cfg["master_seed"]
    train, _ = corpus_mod.split(crp, float(cfg["pretrain"]["train_frac"]),
                                substream(seed, "split"))
    if args.mode == "rltf":
        if not args.reward:
            raise ConfigError("finetune --mode rltf requires --reward")
        reward_model, _, _, _ = load_checkpoint(args.reward)
        base = policy.clone()
        p = cfg["ppo"]
        pcfg = rltf.PPOConfig(
            iterations=int(args.iterations if args.iterations is not None
                           else p["iterations"]),
            rollouts=int(p["rollouts"]), epochs=int(p["epochs"]),
            lr=float(p["lr"]), beta=float(p["beta"]),
            clip_eps=float(p["clip_eps"]), temperature=float(p["temperature"]),
            m_frac=float(p["m_frac"]), max_len=int(p["max_len"]),
            kl_ceiling=float(p["kl_ceiling"]), seed=seed).validate()
        weights = None
        if p["gravity_prompts"]:
            rmap, gtable, _ = _geo(cfg, network, crp, vocab)
            weights = pretrain_mod.trajectory_gravity_weights(train, rmap, gtable)
        policy, trace = rltf.ppo_finetune(policy, base, reward_model, rcm, vocab,
                                          network, train, pcfg,
                                          prompt_weights=weights)
        if args.trace_csv:
            rltf.write_ppo_trace_csv(args.trace_csv, trace, _stamp(cfg))
        label = f"{pcfg.iterations} PPO iterations"
    else:
        if not args.prefs:
            raise ConfigError("finetune --mode sft requires --prefs")
        pairs, _ = rltf.read_preference_dataset(args.prefs)
        s = cfg["sft"]
        scfg = rltf.SFTConfig(steps=int(s["steps"]), batch_pairs=int(s["batch_pairs"]),
                              lr=float(s["lr"]), seed=seed)
        policy, trace = rltf.sft_finetune(policy, pairs, rcm, vocab, scfg)
        label = f"{scfg.steps} SFT steps"
    save_checkpoint(args.out, policy, extra={
        "kind": f"finetuned_{args.mode}", "network_sha256": file_hash(args.network),
        "tokenizer": vocab.mode, "rcm_masking": rcm is not None, **_stamp(cfg)})
    print(f"fine-tuned policy ({label}); wrote {args.out}")
    return 0


def cmd_generate(args, cfg) -> int:
    _, crp, model, vocab, rcm, extra = _load_policy_and_world(args, cfg)
    g = cfg["generate"]
    seed = cfg["master_seed"]
    n = int(args.n if args.n is not None else g["n"])
    temperatures = ([float(t) for t in args.temperature_sweep.split(",")]
                    if args.temperature_sweep else
                    [float(args.temperature if args.temperature is not None
                           else g["temperature"])])
    for temp in temperatures:
        syn, meta = gen_mod.generate_corpus(
            model, rcm, vocab, n, temperature=temp,
            max_len=int(g["max_len"]), seed=seed)
        path = Path(args.out)
        if len(temperatures) > 1:
            path = path.with_name(f"{path.stem}_t{temp:g}{path.suffix}")
        meta.update({"checkpoint_sha256": file_hash(args.checkpoint),
                     "rcm_masking": rcm is not None, **_stamp(cfg)})
        corpus_mod.write_corpus(path, syn, meta)
        print(f"wrote {len(syn)} trajectories to {path} (temperature {temp:g})")
    return 0


def cmd_evaluate(args, cfg) -> int:
    network = roadnet.read_network(args.network)
    net_hash = roadnet.network_file_hash(args.network)
    real, _ = corpus_mod.read_corpus(args.real, expect_network_hash=net_hash)
    syn, _ = corpus_mod.read_corpus(args.syn)
    if not real or not syn:
        raise DataFormatError("both corpora must be nonempty")
    seed = cfg["master_seed"]
    ev = cfg["evaluate"]
    vocab = corpus_mod.Vocab(network.n_links, corpus_mod.EOT_ONLY)
    rmap, _, rcm = _geo(cfg, network, real, vocab)
    base = {}
    if args.with_baselines or ev["with_baselines"]:
        base["random_walk"] = baselines.random_walk_baseline(
            network, real, len(syn), seed=seed)
        base["mmc"] = baselines.mmc_baseline(real, network.n_links, len(syn),
                                             seed=seed)
    rep = evalmetrics.report(real, syn, network, rmap, rcm, seed=seed,
                             baselines=base, config_hash=config_hash(cfg),
                             bins=int(ev["bins"]), n_queries=int(ev["n_queries"]))
    out = _out_dir(args)
    evalmetrics.write_report(out / "report.json", rep)
    evalmetrics.write_plot_csv(out / "plots.csv", rep, _stamp(cfg))
    for name, row in rep.rows.items():
        stats = " ".join(f"{k}={v:.4f}" for k, v in row.items())
        print(f"{name}: {stats}")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trajsynth",
                                 description="road-link trajectory synthesis pipeline")
    ap.add_argument("--config", help="YAML config file; flags override its values")
    ap.add_argument("--seed", type=int, help="master seed override")
    ap.add_argument("--threads", type=int, default=None,
                    help="worker-parallelism cap (default 1; this build runs serially)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-world", help="write a synthetic network + corpus")
    p.add_argument("--out-dir", required=False)
    p.set_defaults(func=cmd_synth_world)

    p = sub.add_parser("pretrain", help="train the base model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--network", required=True)
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--loss-csv")
    p.add_argument("--steps", type=int)
    p.add_argument("--no-gravity", action="store_true",
                   help="ablation: uniform trajectory sampling")
    p.add_argument("--no-rcm", action="store_true",
                   help="ablation: no connectivity masking")
    p.add_argument("--tokenizer", choices=[corpus_mod.EOT_ONLY, corpus_mod.BOT_AND_EOT])
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("build-prefs", help="construct the preference dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--network", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_prefs)

    p = sub.add_parser("train-reward", help="train the scalar reward model")
    p.add_argument("--prefs", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_reward)

    p = sub.add_parser("finetune", help="PPO or SFT fine-tuning")
    p.add_argument("--mode", choices=["rltf", "sft"], required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--network", required=True)
    p.add_argument("--reward", help="reward-model checkpoint (rltf mode)")
    p.add_argument("--prefs", help="preference dataset (sft mode)")
    p.add_argument("--iterations", type=int)
    p.add_argument("--trace-csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("generate", help="sample a synthetic corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True,
                   help="training corpus (rebuilds the connectivity matrix)")
    p.add_argument("--network", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--temperature-sweep",
                   help="comma-separated list; writes one corpus per value")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="metric report for (real, synthetic)")
    p.add_argument("--real", required=True)
    p.add_argument("--syn", required=True)
    p.add_argument("--network", required=True)
    p.add_argument("--out-dir", required=False)
    p.add_argument("--with-baselines", action="store_true")
    p.set_defaults(func=cmd_evaluate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["master_seed"] = int(args.seed)
        threads = args.threads
        env_threads = os.environ.get("TRAJSYNTH_THREADS")
        if threads is None and env_threads is not None:
            threads = int(env_threads)
        cfg["threads"] = int(threads) if threads is not None else cfg["threads"]
        if cfg["threads"] < 1:
            raise ConfigError("threads must be >= 1")
        if cfg["threads"] > 1:
            print("note: this build executes serially; --threads recorded only",
                  file=sys.stderr)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataFormatError as exc:
        print(f"data format error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
