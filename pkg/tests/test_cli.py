import dataclasses
import json

import pytest

from sganv2.checkpoint import load_checkpoint, save_checkpoint
from sganv2.cli import main
from sganv2.config import config_from_dict, config_hash, config_to_dict
from sganv2.discriminator import TrajectoryDiscriminator
from sganv2.generator import TrajectoryGenerator
from sganv2.scenes import load_scenes
from sganv2.seeding import seed_module
from sganv2.training import TrainingLog, train

TINY = {
    "seed": 5,
    "horizon": {"t_obs": 4, "t_pred_len": 3},
    "world": {"total_steps": 7},
    "data": {"n_scenes": 10},
    "sim": {
        "motion_embed_dim": 8,
        "interaction_dim": 16,
        "grid_cells_per_side": 4,
        "goal_embed_dim": 8,
    },
    "generator": {"hidden_dim": 16, "noise_dim": 4},
    "discriminator": {
        "n_layers": 1,
        "model_dim": 16,
        "ffn_dim": 16,
        "score_head_dims": [16],
        "max_seq_len": 16,
    },
    "train": {"epochs": 1, "batch_size": 4, "variety_k": 2},
    "eval": {"k": [1, 2]},
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def config_path(workdir):
    path = workdir / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


@pytest.fixture(scope="module")
def dataset_dir(workdir, config_path):
    out = workdir / "data"
    code = main(["gen-data", "--config", str(config_path), "--out", str(out)])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def trained_dir(workdir, config_path, dataset_dir):
    out = workdir / "run"
    code = main(
        ["train", "--config", str(config_path), "--data", str(dataset_dir),
         "--out", str(out)]
    )
    assert code == 0
    return out


def read_error(capsys):
    err = capsys.readouterr().err.strip().splitlines()[-1]
    return json.loads(err)


# ----------------------------------------------------------------- gen-data

def test_gen_data_split_and_manifest(dataset_dir, capsys):
    manifest = json.loads((dataset_dir / "manifest.json").read_text())
    assert manifest["kind"] == "crossing"
    assert manifest["files"]["train"]["scenes"] == 8
    assert manifest["files"]["val"]["scenes"] == 1
    assert manifest["files"]["test"]["scenes"] == 1
    assert "config_hash" in manifest
    for name in ("train", "val", "test"):
        scenes = load_scenes(dataset_dir / f"{name}.ndjson")
        assert len(scenes) == manifest["files"][name]["scenes"]
        for scene in scenes:
            assert scene.n_steps == 7
    first = (dataset_dir / "train.ndjson").read_text().splitlines()[0]
    assert "scene" in json.loads(first)


def test_gen_data_deterministic(workdir, config_path):
    out_a = workdir / "data_a"
    out_b = workdir / "data_b"
    out_c = workdir / "data_c"
    assert main(["gen-data", "--config", str(config_path), "--out", str(out_a)]) == 0
    assert main(["gen-data", "--config", str(config_path), "--out", str(out_b)]) == 0
    assert main(
        ["gen-data", "--config", str(config_path), "--seed", "6", "--out", str(out_c)]
    ) == 0
    same = (out_a / "train.ndjson").read_bytes()
    assert same == (out_b / "train.ndjson").read_bytes()
    assert same != (out_c / "train.ndjson").read_bytes()


def test_gen_data_forking(workdir, config_path):
    doc = dict(TINY)
    doc["data"] = {"kind": "forking", "mode_count": 4, "samples_per_mode": 2}
    cfg_path = workdir / "forking.json"
    cfg_path.write_text(json.dumps(doc))
    out = workdir / "forkdata"
    assert main(["gen-data", "--config", str(cfg_path), "--out", str(out)]) == 0
    scenes = load_scenes(out / "train.ndjson")
    assert len(scenes) == 8  # 4 modes x 2 samples
    modes = json.loads((out / "modes.json").read_text())
    assert len(modes["futures"]) == 8
    assert {f["mode"] for f in modes["futures"]} == {0, 1, 2, 3}
    assert len(modes["prefix"]["track"]) == 4


# -------------------------------------------------------------------- train

def test_train_writes_artifacts(trained_dir, capsys):
    ckpt_path = trained_dir / "checkpoint_last.ckpt"
    log_path = trained_dir / "log.jsonl"
    assert ckpt_path.exists() and log_path.exists()
    ckpt = load_checkpoint(ckpt_path)
    assert ckpt.epoch == 1
    assert ckpt.config["model"] == "sganv2"
    assert ckpt.config["experiment"]["train"]["epochs"] == 1
    log = TrainingLog.load_jsonl(log_path)
    assert len(log.entries) == 1
    entry = log.entries[0]
    for key in ("epoch", "g_loss", "d_loss", "variety", "d_real_mean",
                "d_fake_mean", "lr_g", "lr_d", "seconds", "val_col"):
        assert key in entry, key


def test_train_resume_completes_interrupted_run(workdir, config_path, dataset_dir):
    """Crash after epoch 1 of 2, resume via CLI, match an uninterrupted CLI
    run parameter for parameter."""
    doc = dict(TINY)
    doc["train"] = dict(TINY["train"], epochs=2)
    cfg2_path = workdir / "two_epochs.json"
    cfg2_path.write_text(json.dumps(doc))

    # straight two-epoch run through the CLI
    full_dir = workdir / "full_run"
    assert main(
        ["train", "--config", str(cfg2_path), "--data", str(dataset_dir),
         "--out", str(full_dir)]
    ) == 0

    # interrupted run: train epoch 1 the way cmd_train does, then "crash"
    cfg2 = config_from_dict(doc)
    gen = TrajectoryGenerator(cfg2.generator_config(), cfg2.no_interaction)
    disc = TrajectoryDiscriminator(cfg2.discriminator_config(), cfg2.no_interaction)
    seed_module(gen, cfg2.seed, "init/gen")
    seed_module(disc, cfg2.seed, "init/disc")
    scenes = load_scenes(dataset_dir / "train.ndjson", cfg2.horizon)
    val = load_scenes(dataset_dir / "val.ndjson", cfg2.horizon)
    part_dir = workdir / "part_run"
    part_dir.mkdir()
    snapshot = {
        "experiment": config_to_dict(cfg2),
        "model": "sganv2",
        "config_hash": config_hash(cfg2),
    }
    log = TrainingLog()

    class Crash(Exception):
        pass

    def crash_after_first(epoch, entry, ctx):
        log.save_jsonl(part_dir / "log.jsonl")
        save_checkpoint(
            part_dir / "checkpoint_last.ckpt", config=snapshot, epoch=epoch,
            gen=gen, disc=disc, opt_g=ctx["opt_g"], opt_d=ctx["opt_d"],
            rng_states=ctx["rng_states"],
        )
        if epoch == 1:
            raise Crash

    with pytest.raises(Crash):
        train(scenes, gen, disc, cfg2.train, horizon=cfg2.horizon,
              val_scenes=val, epoch_callback=crash_after_first, log=log)

    assert main(
        ["train", "--resume", str(part_dir / "checkpoint_last.ckpt"),
         "--data", str(dataset_dir), "--out", str(part_dir)]
    ) == 0

    resumed = load_checkpoint(part_dir / "checkpoint_last.ckpt")
    straight = load_checkpoint(full_dir / "checkpoint_last.ckpt")
    assert resumed.epoch == straight.epoch == 2
    assert resumed.blocks.keys() == straight.blocks.keys()
    for name in straight.blocks:
        assert (resumed.blocks[name] == straight.blocks[name]).all(), name
    log_a = TrainingLog.load_jsonl(part_dir / "log.jsonl")
    log_b = TrainingLog.load_jsonl(full_dir / "log.jsonl")
    assert [e["epoch"] for e in log_a.entries] == [1, 2]
    for ea, eb in zip(log_a.entries, log_b.entries):
        assert {k: v for k, v in ea.items() if k != "seconds"} == \
               {k: v for k, v in eb.items() if k != "seconds"}


# --------------------------------------------------------------------- eval

def test_eval_up_baseline(workdir, config_path, dataset_dir, capsys):
    out = workdir / "eval_up"
    code = main(
        ["eval", "--config", str(config_path), "--model", "up",
         "--data", str(dataset_dir / "test.ndjson"), "--out", str(out)]
    )
    assert code == 0
    stdout = capsys.readouterr().out
    assert "model: up" in stdout
    assert "col [%]" in stdout
    doc = json.loads((out / "metrics.json").read_text())
    assert doc["model"] == "up"
    assert doc["k_values"] == [1, 2]
    assert not doc["refined"]
    assert (out / "metrics.txt").read_text().strip() in stdout.strip()


def test_eval_cv_forces_single_sample(workdir, config_path, dataset_dir):
    out = workdir / "eval_cv"
    assert main(
        ["eval", "--config", str(config_path), "--model", "cv",
         "--data", str(dataset_dir / "test.ndjson"), "--out", str(out)]
    ) == 0
    doc = json.loads((out / "metrics.json").read_text())
    assert doc["k_values"] == [1]


def test_eval_learned_model(workdir, dataset_dir, trained_dir):
    out = workdir / "eval_model"
    assert main(
        ["eval", "--model", "sganv2",
         "--checkpoint", str(trained_dir / "checkpoint_last.ckpt"),
         "--data", str(dataset_dir / "test.ndjson"), "--out", str(out),
         "--k", "1,2"]
    ) == 0
    doc = json.loads((out / "metrics.json").read_text())
    assert doc["model"] == "sganv2"
    assert doc["k_values"] == [1, 2]
    assert set(doc["report"]["top_k_ade"]) == {"1", "2"}


def test_eval_refine_writes_report(workdir, dataset_dir, trained_dir):
    out = workdir / "eval_refined"
    assert main(
        ["eval", "--model", "sganv2",
         "--checkpoint", str(trained_dir / "checkpoint_last.ckpt"),
         "--data", str(dataset_dir / "test.ndjson"), "--out", str(out),
         "--k", "2", "--refine"]
    ) == 0
    doc = json.loads((out / "metrics.json").read_text())
    assert doc["refined"] is True
    assert "refinement" in doc
    assert (out / "refinement.jsonl").exists()
    first = json.loads((out / "refinement.jsonl").read_text().splitlines()[0])
    assert "summary" in first


def test_eval_learned_requires_checkpoint(workdir, dataset_dir, capsys):
    out = workdir / "eval_nockpt"
    code = main(
        ["eval", "--model", "sganv2", "--data", str(dataset_dir / "test.ndjson"),
         "--out", str(out)]
    )
    assert code == 1
    err = read_error(capsys)
    assert err["error"] == "ValidationError"
    assert "checkpoint" in err["message"]


def test_eval_bad_k_rejected(workdir, config_path, dataset_dir, capsys):
    out = workdir / "eval_badk"
    code = main(
        ["eval", "--config", str(config_path), "--model", "up",
         "--data", str(dataset_dir / "test.ndjson"), "--out", str(out),
         "--k", "three"]
    )
    assert code == 1
    assert read_error(capsys)["error"] == "ValidationError"


# --------------------------------------------------------------------- plot

def test_plot_renders_images(workdir, config_path, dataset_dir, trained_dir, capsys):
    out = workdir / "plots"
    code = main(
        ["plot", "--config", str(config_path),
         "--checkpoint", str(trained_dir / "checkpoint_last.ckpt"),
         "--data", str(dataset_dir / "test.ndjson"), "--out", str(out),
         "--k", "2", "--limit", "1"]
    )
    assert code == 0
    info = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert info["images"] == 1
    images = list(out.glob("*.png"))
    assert len(images) == 1


def test_plot_zero_scenes_succeeds(workdir, config_path, capsys):
    empty = workdir / "empty.ndjson"
    empty.write_text("")
    out = workdir / "plots_empty"
    code = main(
        ["plot", "--config", str(config_path), "--data", str(empty),
         "--out", str(out)]
    )
    assert code == 0
    info = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert info["images"] == 0


# ------------------------------------------------------------------- errors

def test_missing_data_file_fails_cleanly(workdir, config_path, capsys):
    out = workdir / "no_data_run"
    code = main(
        ["train", "--config", str(config_path),
         "--data", str(workdir / "does_not_exist"), "--out", str(out)]
    )
    assert code == 1
    err = read_error(capsys)
    assert err["error"] in ("OSError", "FileNotFoundError")


def test_unknown_config_key_fails_cleanly(workdir, capsys):
    bad = workdir / "bad.json"
    bad.write_text(json.dumps({"trian": {}}))
    out = workdir / "bad_run"
    code = main(["gen-data", "--config", str(bad), "--out", str(out)])
    assert code == 1
    err = read_error(capsys)
    assert err["error"] == "ValidationError"
    assert "trian" in err["message"]


def test_corrupt_checkpoint_fails_cleanly(workdir, dataset_dir, capsys):
    fake = workdir / "fake.ckpt"
    fake.write_bytes(b"not a checkpoint at all")
    out = workdir / "eval_fake"
    code = main(
        ["eval", "--model", "sganv2", "--checkpoint", str(fake),
         "--data", str(dataset_dir / "test.ndjson"), "--out", str(out)]
    )
    assert code == 1
    assert read_error(capsys)["error"] == "CheckpointError"
