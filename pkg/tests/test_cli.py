"""End-to-end CLI pipeline on a miniature configuration."""

import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from trajsynth.cli import main

MINI_CONFIG = {
    "master_seed": 5,
    "world": {"width": 5, "height": 5, "n_trajectories": 200},
    "regions": {"gw": 4, "gh": 4},
    "model": {"n_layers": 1, "n_heads": 2, "d_model": 16, "block_size": 32,
              "dropout": 0.1},
    "pretrain": {"steps": 40, "batch_size": 16, "eval_interval": 20, "lr": 1e-3},
    "prefs": {"n_pairs": 20, "max_len": 24},
    "reward": {"steps": 30, "batch_pairs": 8, "eval_interval": 30},
    "ppo": {"iterations": 2, "rollouts": 8, "epochs": 2, "max_len": 24},
    "sft": {"steps": 10, "batch_pairs": 8},
    "generate": {"n": 80, "max_len": 24},
    "evaluate": {"n_queries": 40},
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "config.yaml"
    cfg_path.write_text(yaml.safe_dump(MINI_CONFIG))
    return root, str(cfg_path)


def run(argv):
    return main(argv)


def test_full_pipeline_and_reruns_are_byte_identical(workdir):
    root, cfg = workdir
    out1, out2 = root / "run1", root / "run2"
    for out in (out1, out2):
        out.mkdir()
        net = str(out / "network.txt")
        crp = str(out / "corpus.txt")
        ckpt = str(out / "model.ckpt")
        assert run(["--config", cfg, "synth-world", "--out-dir", str(out)]) == 0
        assert run(["--config", cfg, "pretrain", "--corpus", crp, "--network", net,
                    "--out-checkpoint", ckpt]) == 0
        assert run(["--config", cfg, "build-prefs", "--checkpoint", ckpt,
                    "--corpus", crp, "--network", net,
                    "--out", str(out / "prefs.jsonl")]) == 0
        assert run(["--config", cfg, "train-reward", "--prefs",
                    str(out / "prefs.jsonl"), "--checkpoint", ckpt,
                    "--out", str(out / "reward.ckpt")]) == 0
        assert run(["--config", cfg, "finetune", "--mode", "rltf",
                    "--checkpoint", ckpt, "--corpus", crp, "--network", net,
                    "--reward", str(out / "reward.ckpt"),
                    "--trace-csv", str(out / "ppo.csv"),
                    "--out", str(out / "tuned.ckpt")]) == 0
        assert run(["--config", cfg, "finetune", "--mode", "sft",
                    "--checkpoint", ckpt, "--corpus", crp, "--network", net,
                    "--prefs", str(out / "prefs.jsonl"),
                    "--out", str(out / "sft.ckpt")]) == 0
        assert run(["--config", cfg, "generate", "--checkpoint",
                    str(out / "tuned.ckpt"), "--corpus", crp, "--network", net,
                    "--out", str(out / "syn.txt")]) == 0
        assert run(["--config", cfg, "evaluate", "--real", crp,
                    "--syn", str(out / "syn.txt"), "--network", net,
                    "--out-dir", str(out)]) == 0

    for name in ("network.txt", "corpus.txt", "corpus.txt.meta.json",
                 "model.ckpt", "model.loss.csv", "prefs.jsonl", "reward.ckpt",
                 "tuned.ckpt", "ppo.csv", "sft.ckpt", "syn.txt",
                 "syn.txt.meta.json", "report.json", "plots.csv"):
        a, b = out1 / name, out2 / name
        assert a.exists(), f"{name} missing"
        assert a.read_bytes() == b.read_bytes(), f"{name} differs between reruns"


def test_outputs_embed_config_hash_and_seed(workdir):
    root, cfg = workdir
    out = root / "run1"
    meta = json.loads((out / "corpus.txt.meta.json").read_text())
    assert meta["master_seed"] == 5
    assert len(meta["config_hash"]) == 16
    report = json.loads((out / "report.json").read_text())
    assert report["config_hash"] == meta["config_hash"]
    assert "# config_hash=" in (out / "plots.csv").read_text()


def test_generated_corpus_metadata(workdir):
    root, _ = workdir
    meta = json.loads((root / "run1" / "syn.txt.meta.json").read_text())
    for key in ("temperature", "seed", "checkpoint_sha256", "retries",
                "shortfall", "rcm_masking"):
        assert key in meta


def test_temperature_sweep_writes_one_corpus_per_value(workdir):
    root, cfg = workdir
    out = root / "run1"
    assert run(["--config", cfg, "generate", "--checkpoint",
                str(out / "model.ckpt"), "--corpus", str(out / "corpus.txt"),
                "--network", str(out / "network.txt"),
                "--n", "20", "--temperature-sweep", "0.5,1.0",
                "--out", str(out / "sweep.txt")]) == 0
    assert (out / "sweep_t0.5.txt").exists()
    assert (out / "sweep_t1.txt").exists()


def test_evaluate_with_baselines(workdir):
    root, cfg = workdir
    out = root / "run1"
    dest = root / "base_eval"
    dest.mkdir()
    assert run(["--config", cfg, "evaluate", "--real", str(out / "corpus.txt"),
                "--syn", str(out / "syn.txt"), "--network",
                str(out / "network.txt"), "--out-dir", str(dest),
                "--with-baselines"]) == 0
    report = json.loads((dest / "report.json").read_text())
    assert set(report["rows"]) == {"model", "random_walk", "mmc"}


def test_invalid_config_field_exits_2(workdir, tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("no_such_section: {}\n")
    assert run(["--config", str(bad), "synth-world", "--out-dir",
                str(tmp_path)]) == 2
    bad.write_text("world: {width: 1}\n")
    assert run(["--config", str(bad), "synth-world", "--out-dir",
                str(tmp_path)]) == 2
    assert run(["--config", str(tmp_path / "missing.yaml"), "synth-world",
                "--out-dir", str(tmp_path)]) == 2


def test_data_format_error_exits_3(workdir, tmp_path):
    root, cfg = workdir
    out = root / "run1"
    junk = tmp_path / "junk.txt"
    junk.write_text("this is not a network\n")
    assert run(["--config", cfg, "pretrain", "--corpus",
                str(out / "corpus.txt"), "--network", str(junk),
                "--out-checkpoint", str(tmp_path / "x.ckpt")]) == 3
    # corpus built against a different network is rejected
    other_out = tmp_path / "other"
    other_out.mkdir()
    other_cfg = tmp_path / "other.yaml"
    cfg_dict = dict(MINI_CONFIG)
    cfg_dict["world"] = dict(MINI_CONFIG["world"], width=4)
    other_cfg.write_text(yaml.safe_dump(cfg_dict))
    assert run(["--config", str(other_cfg), "synth-world", "--out-dir",
                str(other_out)]) == 0
    assert run(["--config", cfg, "pretrain", "--corpus",
                str(out / "corpus.txt"), "--network",
                str(other_out / "network.txt"),
                "--out-checkpoint", str(tmp_path / "y.ckpt")]) == 3


def test_checkpoint_vocab_mismatch_exits_3(workdir, tmp_path):
    root, cfg = workdir
    out = root / "run1"
    other = tmp_path / "world4"
    other.mkdir()
    other_cfg = tmp_path / "w4.yaml"
    cfg_dict = dict(MINI_CONFIG)
    cfg_dict["world"] = dict(MINI_CONFIG["world"], width=4)
    other_cfg.write_text(yaml.safe_dump(cfg_dict))
    assert run(["--config", str(other_cfg), "synth-world", "--out-dir",
                str(other)]) == 0
    assert run(["--config", str(other_cfg), "generate", "--checkpoint",
                str(out / "model.ckpt"), "--corpus", str(other / "corpus.txt"),
                "--network", str(other / "network.txt"),
                "--out", str(tmp_path / "g.txt")]) == 3


def test_seed_flag_overrides_config(workdir, tmp_path):
    root, cfg = workdir
    dest = tmp_path / "seeded"
    dest.mkdir()
    assert run(["--config", cfg, "--seed", "99", "synth-world",
                "--out-dir", str(dest)]) == 0
    meta = json.loads((dest / "corpus.txt.meta.json").read_text())
    assert meta["master_seed"] == 99
    # different seed, different corpus
    assert (dest / "corpus.txt").read_bytes() != \
        (root / "run1" / "corpus.txt").read_bytes()
