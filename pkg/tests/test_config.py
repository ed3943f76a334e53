import json

import pytest

from sganv2.config import (
    DataConfig,
    ExperimentConfig,
    apply_overrides,
    config_from_dict,
    config_hash,
    config_to_dict,
    load_config,
)
from sganv2.scenes import ValidationError


def test_empty_document_gives_defaults():
    cfg = config_from_dict({})
    assert cfg.seed == 0
    assert cfg.horizon.t_obs == 9
    assert cfg.horizon.t_pred_len == 12
    assert cfg.world.n_pedestrians == 4
    assert cfg.train.epochs == 50
    assert cfg.train.lr_g == pytest.approx(3e-4)
    assert cfg.train.lr_d == pytest.approx(1e-3)
    assert cfg.train.batch_size == 32
    assert cfg.train.g_steps_per_d_step == 2
    assert cfg.refine.step_size == pytest.approx(0.01)
    assert cfg.refine.max_iterations == 5
    assert cfg.refine.score_threshold == pytest.approx(0.5)
    assert cfg.eval.k == (3, 20)
    assert cfg.sim.goal_embed_dim == 16
    assert cfg.discriminator.variant == "transformer"
    assert not cfg.no_interaction


def test_sections_parse_and_tuples_coerce():
    cfg = config_from_dict(
        {
            "data": {"kind": "forking", "n_scenes": 5, "split": [1.0, 0.0, 0.0]},
            "discriminator": {"score_head_dims": [32, 16], "variant": "recurrent"},
            "eval": {"k": [1, 5]},
        }
    )
    assert cfg.data.kind == "forking"
    assert cfg.data.split == (1.0, 0.0, 0.0)
    assert cfg.discriminator.score_head_dims == (32, 16)
    assert cfg.eval.k == (1, 5)


def test_unknown_section_and_key_rejected():
    with pytest.raises(ValidationError, match="unknown sections"):
        config_from_dict({"oops": {}})
    with pytest.raises(ValidationError, match="unknown keys"):
        config_from_dict({"train": {"learning_rate": 1e-3}})
    with pytest.raises(ValidationError):
        config_from_dict([1, 2])


def test_section_validation_propagates():
    with pytest.raises(ValidationError):
        config_from_dict({"train": {"objective": "hinge"}})
    with pytest.raises(ValidationError):
        config_from_dict({"data": {"split": [0.5, 0.5, 0.5]}})
    with pytest.raises(ValidationError):
        DataConfig(kind="circles")


def test_root_seed_propagates_unless_pinned():
    cfg = config_from_dict({"seed": 7})
    assert cfg.world.seed == 7
    assert cfg.train.seed == 7
    pinned = config_from_dict({"seed": 7, "world": {"seed": 3}})
    assert pinned.world.seed == 3
    assert pinned.train.seed == 7


def test_model_config_builders_share_sim_and_horizon():
    # goal_embed_dim null (None) disables goal conditioning
    cfg = config_from_dict(
        {"horizon": {"t_obs": 6, "t_pred_len": 8}, "sim": {"goal_embed_dim": None}}
    )
    g = cfg.generator_config()
    d = cfg.discriminator_config()
    assert g.horizon.t_obs == 6
    assert g.sim is cfg.sim
    assert d.sim is cfg.sim
    assert not g.sim.goal_embed_dim


def test_round_trip_through_dict():
    cfg = config_from_dict({"seed": 3, "train": {"epochs": 2}})
    doc = config_to_dict(cfg)
    again = config_from_dict(doc)
    assert again == cfg
    json.dumps(doc)  # must be JSON-serialisable as-is


def test_config_hash_stability_and_sensitivity():
    a = config_from_dict({"seed": 1})
    b = config_from_dict({"seed": 1})
    c = config_from_dict({"seed": 2})
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(c)
    assert len(config_hash(a)) == 16


def test_apply_overrides():
    cfg = ExperimentConfig()
    out = apply_overrides(
        cfg, seed=9, no_interaction=True, variant="recurrent", objective="lsgan+gp"
    )
    assert out.seed == 9
    assert out.train.seed == 9
    assert out.world.seed == 9
    assert out.no_interaction
    assert out.discriminator.variant == "recurrent"
    assert out.train.objective == "lsgan+gp"
    # original untouched
    assert cfg.seed == 0 and not cfg.no_interaction
    # no-op call changes nothing
    assert apply_overrides(cfg) == cfg


def test_load_config_from_file(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps({"seed": 5, "train": {"epochs": 1}}))
    cfg = load_config(path)
    assert cfg.seed == 5
    assert cfg.train.epochs == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ValidationError, match="invalid JSON"):
        load_config(bad)
