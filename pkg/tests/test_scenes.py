import json

import numpy as np
import pytest

from sganv2.scenes import (
    HorizonSpec,
    ParseError,
    Scene,
    ValidationError,
    load_scenes,
    save_scenes,
    split_scene,
    velocities,
)

from conftest import straight_scene


def quantized_scene(scene_id=0, n_peds=3, t_total=21, seed=0, with_absence=False):
    """Random scene with 3-decimal coordinates, as the pipeline stores them."""
    rng = np.random.default_rng(seed)
    peds = {}
    for i in range(n_peds):
        track = np.round(rng.uniform(-8, 8, size=(t_total, 2)), 3)
        if with_absence and i > 0:
            track[: rng.integers(1, 5)] = np.nan
        peds[100 * scene_id + i] = track
    goals = {p: np.round(rng.uniform(-20, 20, size=2), 3) for p in peds}
    return Scene(scene_id=scene_id, primary_id=100 * scene_id, pedestrians=peds,
                 goals=goals, dt=0.4)


# ----------------------------------------------------------------- velocity

def test_velocities_trivial_constant_speed():
    # position steps of (1, 1) at dt=0.4 -> velocity (2.5, 2.5) everywhere
    pos = np.cumsum(np.ones((5, 2)), axis=0)
    vel = velocities(pos, dt=0.4)
    assert vel.shape == (4, 2)
    assert np.allclose(vel, 2.5)


def test_velocities_nan_propagates():
    pos = np.array([[0.0, 0.0], [np.nan, np.nan], [2.0, 0.0]])
    vel = velocities(pos, dt=1.0)
    assert np.isnan(vel[0]).all() and np.isnan(vel[1]).all()


def test_velocities_too_short():
    with pytest.raises(ValidationError):
        velocities(np.zeros((1, 2)), dt=0.4)


# ------------------------------------------------------------------- scenes

def test_scene_validation_accepts_absent_neighbor_steps():
    scene = quantized_scene(with_absence=True)
    scene.validate()


def test_scene_rejects_absent_primary_step():
    peds = {0: np.zeros((21, 2)), 1: np.ones((21, 2))}
    peds[0][3] = np.nan
    with pytest.raises(ValidationError) as err:
        Scene(scene_id=7, primary_id=0, pedestrians=peds)
    assert "primary" in str(err.value) and "7" in str(err.value)


def test_scene_rejects_half_nan_row():
    peds = {0: np.zeros((21, 2)), 1: np.ones((21, 2))}
    peds[1][3, 0] = np.nan
    with pytest.raises(ValidationError):
        Scene(scene_id=0, primary_id=0, pedestrians=peds)


def test_scene_rejects_mismatched_lengths():
    peds = {0: np.zeros((21, 2)), 1: np.ones((20, 2))}
    with pytest.raises(ValidationError):
        Scene(scene_id=0, primary_id=0, pedestrians=peds)


def test_scene_rejects_unknown_primary():
    with pytest.raises(ValidationError):
        Scene(scene_id=0, primary_id=9, pedestrians={0: np.zeros((5, 2))})


def test_scene_rejects_nonpositive_dt():
    with pytest.raises(ValidationError):
        Scene(scene_id=0, primary_id=0, pedestrians={0: np.zeros((5, 2))}, dt=0.0)


def test_scene_rejects_infinite_coordinate():
    peds = {0: np.zeros((5, 2))}
    peds[0][2, 1] = np.inf
    with pytest.raises(ValidationError):
        Scene(scene_id=0, primary_id=0, pedestrians=peds)


# -------------------------------------------------------------------- split

def test_split_concat_reconstructs():
    scene = quantized_scene(with_absence=True)
    horizon = HorizonSpec(9, 12)
    obs, fut = split_scene(scene, horizon)
    assert obs.n_steps == 9 and fut.n_steps == 12
    for ped in scene.pedestrians:
        merged = np.concatenate([obs.pedestrians[ped], fut.pedestrians[ped]])
        assert np.array_equal(merged, scene.pedestrians[ped], equal_nan=True)


def test_split_rejects_short_scene():
    scene = quantized_scene(t_total=15)
    with pytest.raises(ValidationError) as err:
        split_scene(scene, HorizonSpec(9, 12))
    assert "shorter" in str(err.value)


def test_split_rejects_long_scene():
    scene = quantized_scene(t_total=25)
    with pytest.raises(ValidationError):
        split_scene(scene, HorizonSpec(9, 12))


# ------------------------------------------------------------------- format

def test_save_load_round_trip_identity(tmp_path):
    scenes = [quantized_scene(scene_id=i, seed=i, with_absence=(i % 2 == 1))
              for i in range(5)]
    path = tmp_path / "scenes.ndjson"
    save_scenes(scenes, path)
    loaded = load_scenes(path, HorizonSpec(9, 12))
    assert len(loaded) == len(scenes)
    for a, b in zip(scenes, loaded):
        assert a.scene_id == b.scene_id
        assert a.primary_id == b.primary_id
        assert a.dt == b.dt
        assert set(a.pedestrians) == set(b.pedestrians)
        for ped in a.pedestrians:
            assert np.array_equal(a.pedestrians[ped], b.pedestrians[ped],
                                  equal_nan=True)
        assert set(a.goals) == set(b.goals)
        for ped in a.goals:
            assert np.array_equal(a.goals[ped], b.goals[ped])


def test_save_load_without_goals(tmp_path):
    scene = straight_scene(with_goals=False)
    path = tmp_path / "scenes.ndjson"
    save_scenes([scene], path)
    loaded = load_scenes(path, HorizonSpec(9, 12))
    assert loaded[0].goals is None


def test_two_record_kind_files_load(tmp_path):
    """Files containing only scene and track records are valid."""
    lines = [json.dumps({"scene": {"id": 0, "p": 1, "s": 1, "e": 3, "fps": 2.5}})]
    for f in (1, 2, 3):
        lines.append(json.dumps({"track": {"f": f, "p": 1, "x": 0.1 * f, "y": 0.0}}))
    path = tmp_path / "plain.ndjson"
    path.write_text("\n".join(lines) + "\n")
    scenes = load_scenes(path)
    assert len(scenes) == 1
    assert scenes[0].n_steps == 3
    assert scenes[0].goals is None


def test_parse_error_reports_line_number(tmp_path):
    path = tmp_path / "bad.ndjson"
    path.write_text(
        json.dumps({"scene": {"id": 0, "p": 1, "s": 1, "e": 2, "fps": 2.5}})
        + "\nnot json at all\n"
    )
    with pytest.raises(ParseError) as err:
        load_scenes(path)
    assert "line 2" in str(err.value)


def test_parse_error_unknown_record_kind(tmp_path):
    path = tmp_path / "bad.ndjson"
    path.write_text(json.dumps({"mystery": {"a": 1}}) + "\n")
    with pytest.raises(ParseError) as err:
        load_scenes(path)
    assert "mystery" in str(err.value)


def test_parse_error_missing_field(tmp_path):
    path = tmp_path / "bad.ndjson"
    path.write_text(json.dumps({"track": {"f": 1, "p": 2, "x": 0.0}}) + "\n")
    with pytest.raises(ParseError) as err:
        load_scenes(path)
    assert "y" in str(err.value)


def test_load_rejects_scene_with_absent_primary(tmp_path):
    lines = [json.dumps({"scene": {"id": 3, "p": 1, "s": 1, "e": 3, "fps": 2.5}})]
    # primary present only at frames 1 and 3
    for f in (1, 3):
        lines.append(json.dumps({"track": {"f": f, "p": 1, "x": 1.0, "y": 1.0}}))
    for f in (1, 2, 3):
        lines.append(json.dumps({"track": {"f": f, "p": 2, "x": 0.0, "y": 0.0}}))
    path = tmp_path / "bad.ndjson"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValidationError) as err:
        load_scenes(path)
    message = str(err.value)
    assert "primary" in message and "3" in message


def test_load_nonstrict_drops_invalid(tmp_path):
    lines = [
        json.dumps({"scene": {"id": 0, "p": 1, "s": 1, "e": 2, "fps": 2.5}}),
        json.dumps({"track": {"f": 1, "p": 1, "x": 0.0, "y": 0.0}}),
        json.dumps({"track": {"f": 2, "p": 1, "x": 0.4, "y": 0.0}}),
        # second scene's primary has a hole
        json.dumps({"scene": {"id": 1, "p": 5, "s": 10, "e": 12, "fps": 2.5}}),
        json.dumps({"track": {"f": 10, "p": 5, "x": 0.0, "y": 0.0}}),
        json.dumps({"track": {"f": 12, "p": 5, "x": 0.8, "y": 0.0}}),
        json.dumps({"track": {"f": 10, "p": 6, "x": 1.0, "y": 0.0}}),
        json.dumps({"track": {"f": 11, "p": 6, "x": 1.4, "y": 0.0}}),
        json.dumps({"track": {"f": 12, "p": 6, "x": 1.8, "y": 0.0}}),
    ]
    path = tmp_path / "mixed.ndjson"
    path.write_text("\n".join(lines) + "\n")
    scenes = load_scenes(path, strict=False)
    assert [s.scene_id for s in scenes] == [0]


def test_load_horizon_mismatch(tmp_path):
    scene = quantized_scene(t_total=21)
    path = tmp_path / "scenes.ndjson"
    save_scenes([scene], path)
    with pytest.raises(ValidationError):
        load_scenes(path, HorizonSpec(9, 20))


def test_save_validates_before_writing(tmp_path):
    scene = quantized_scene()
    scene.pedestrians[scene.primary_id][0] = np.nan  # corrupt after construction
    with pytest.raises(ValidationError):
        save_scenes([scene], tmp_path / "x.ndjson")
