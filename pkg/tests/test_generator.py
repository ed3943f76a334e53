import numpy as np
import pytest
import torch

from sganv2.batching import collate_rollout, collate_training
from sganv2.generator import (
    GeneratorConfig,
    TrajectoryGenerator,
    forecast_scenes,
    predict_k,
    rollout_simultaneous,
    rollout_teacher_forced,
    split_gaussian,
)
from sganv2.scenes import HorizonSpec, Scene
from sganv2.seeding import seed_module, torch_generator
from sganv2.sim import NumericalError, SimConfig
from sganv2.synth import WorldConfig, generate_scene

from conftest import straight_scene

HORIZON = HorizonSpec(9, 12)


def small_config(goal=True, noise_dim=4):
    return GeneratorConfig(
        hidden_dim=16,
        noise_dim=noise_dim,
        sim=SimConfig(
            motion_embed_dim=8,
            interaction_dim=16,
            grid_cells_per_side=6,
            cell_resolution=0.6,
            goal_embed_dim=8 if goal else None,
        ),
        horizon=HORIZON,
    )


def build_gen(seed=0, goal=True, no_interaction=False, noise_dim=4):
    gen = TrajectoryGenerator(small_config(goal, noise_dim), no_interaction)
    seed_module(gen, seed, "init/gen")
    return gen


def interaction_scene(seed=0):
    return generate_scene(WorldConfig(), seed, HORIZON, scene_id=seed)


def test_split_gaussian_ranges():
    raw = torch.randn(7, 5) * 3
    mu, sigma, rho = split_gaussian(raw)
    assert torch.equal(mu, raw[:, :2])
    assert (sigma > 0).all()
    assert (rho.abs() < 1).all()


def test_rollout_shapes_and_length():
    gen = build_gen()
    batch = collate_training([interaction_scene(0), interaction_scene(1)], HORIZON, True)
    z = torch.randn(2, 4, generator=torch_generator(0, "z"))
    pos, gauss = rollout_teacher_forced(gen, batch, z)
    assert pos.shape == (2, HORIZON.t_pred_len, 2)
    assert gauss.shape == (2, HORIZON.t_pred_len, 5)
    assert (gauss[..., 2:4] > 0).all()
    assert (gauss[..., 4].abs() < 1).all()


def test_positions_integrate_emitted_means():
    """pos[t+1] = pos[t] + mu[t+1] * dt, starting at the last observed step."""
    gen = build_gen()
    scene = interaction_scene(2)
    batch = collate_training([scene], HORIZON, True)
    z = torch.randn(1, 4, generator=torch_generator(1, "z"))
    pos, gauss = rollout_teacher_forced(gen, batch, z)
    dt = scene.dt
    start = torch.as_tensor(scene.primary[HORIZON.t_obs - 1], dtype=torch.float32)
    expected = start + torch.cumsum(gauss[0, :, :2] * dt, dim=0)
    assert torch.allclose(pos[0], expected, atol=1e-5)


def test_noise_drawn_once_per_sample():
    """Same z gives identical rollouts; different z changes them."""
    gen = build_gen()
    batch = collate_training([interaction_scene(3)], HORIZON, True)
    z1 = torch.full((1, 4), 0.3)
    z2 = torch.full((1, 4), -0.9)
    pos_a, _ = rollout_teacher_forced(gen, batch, z1)
    pos_b, _ = rollout_teacher_forced(gen, batch, z1)
    pos_c, _ = rollout_teacher_forced(gen, batch, z2)
    assert torch.equal(pos_a, pos_b)
    assert not torch.equal(pos_a, pos_c)


def test_no_interaction_flag_blinds_generator():
    scene = interaction_scene(4)
    moved = Scene(
        scene_id=scene.scene_id,
        primary_id=scene.primary_id,
        pedestrians={
            p: tr + (0 if p == scene.primary_id else 50.0)
            for p, tr in scene.pedestrians.items()
        },
        goals=scene.goals,
        dt=scene.dt,
    )
    z = torch.randn(1, 4, generator=torch_generator(2, "z"))

    blind = build_gen(seed=7, no_interaction=True)
    pos_a, _ = rollout_teacher_forced(blind, collate_training([scene], HORIZON, True), z)
    pos_b, _ = rollout_teacher_forced(blind, collate_training([moved], HORIZON, True), z)
    assert torch.equal(pos_a, pos_b)

    aware = build_gen(seed=7, no_interaction=False)
    pos_c, _ = rollout_teacher_forced(aware, collate_training([scene], HORIZON, True), z)
    pos_d, _ = rollout_teacher_forced(aware, collate_training([moved], HORIZON, True), z)
    assert not torch.equal(pos_c, pos_d)


def test_encoder_uses_first_observed_position():
    gen = build_gen()
    scene = interaction_scene(5)
    shifted = Scene(
        scene_id=scene.scene_id,
        primary_id=scene.primary_id,
        pedestrians={
            p: (tr if p != scene.primary_id else
                np.concatenate([tr[:1] + 0.5, tr[1:]]))
            for p, tr in scene.pedestrians.items()
        },
        goals=scene.goals,
        dt=scene.dt,
    )
    h_a, _ = gen.encode_batch(collate_training([scene], HORIZON, True))
    h_b, _ = gen.encode_batch(collate_training([shifted], HORIZON, True))
    assert not torch.equal(h_a, h_b)


def test_predict_k_bundle():
    gen = build_gen()
    bundle = predict_k(gen, interaction_scene(6), k=5, seed=11)
    assert bundle.k == 5
    assert bundle.positions.shape == (5, 12, 2)
    assert bundle.gaussians.shape == (5, 12, 5)
    # samples differ
    assert not np.allclose(bundle.positions[0], bundle.positions[1])


def test_forecast_deterministic_in_seed():
    gen = build_gen()
    scenes = [interaction_scene(7), interaction_scene(8)]
    f1 = forecast_scenes(gen, scenes, 3, seed=21)
    f2 = forecast_scenes(gen, scenes, 3, seed=21)
    f3 = forecast_scenes(gen, scenes, 3, seed=22)
    for a, b in zip(f1, f2):
        for ped in a.predicted:
            assert np.array_equal(a.predicted[ped], b.predicted[ped])
    assert not np.array_equal(
        f1[0].predicted[f1[0].primary_id], f3[0].predicted[f3[0].primary_id]
    )


def test_forecast_covers_all_pedestrians():
    scene = interaction_scene(9)
    gen = build_gen()
    forecast = forecast_scenes(gen, [scene], 2, seed=0)[0]
    assert set(forecast.predicted) == set(scene.pedestrians)
    for pred in forecast.predicted.values():
        assert pred.shape == (2, 12, 2)


def test_teacher_forced_equals_simultaneous_without_neighbors():
    """With one pedestrian both regimes see the same inputs."""
    scene = straight_scene(n_peds=1)
    gen = build_gen()
    tf = predict_k(gen, scene, k=3, seed=5, teacher_forcing=True)
    sim = predict_k(gen, scene, k=3, seed=5, teacher_forcing=False)
    assert np.allclose(tf.positions, sim.positions, atol=1e-6)


def test_simultaneous_neighbors_follow_predictions():
    """In joint rollout, changing one pedestrian's noise changes what the
    others see. Run the same scene with k=2: the two samples of the primary
    differ, and so do the neighbours' rollouts."""
    gen = build_gen()
    scene = interaction_scene(10)
    batch = collate_rollout([scene], HORIZON, 2, True)
    m = batch.obs_pos.shape[0]
    z = torch.randn(m, 4, generator=torch_generator(3, "z"))
    pos, _ = rollout_simultaneous(gen, batch, z)
    r = batch.rows_per_sample
    sample0, sample1 = pos[:r], pos[r:]
    assert not torch.allclose(sample0, sample1)


def test_nonfinite_decode_raises_with_step():
    gen = build_gen()
    with torch.no_grad():
        gen.head.bias.fill_(float("nan"))
    batch = collate_training([interaction_scene(11)], HORIZON, True)
    z = torch.zeros(1, 4)
    with pytest.raises(NumericalError) as err:
        rollout_teacher_forced(gen, batch, z)
    assert "step 0" in str(err.value)


def test_generator_backprop_matches_finite_differences():
    """Full encoder-decoder gradient w.r.t. selected parameters agrees with
    central differences (double precision, single-pedestrian scene)."""
    scene = straight_scene(n_peds=1, t_total=21)
    gen = build_gen(goal=True, noise_dim=2).double()
    batch = collate_training([scene], HORIZON, True, dtype=torch.float64)
    z = torch.randn(1, 2, generator=torch_generator(4, "z")).double()

    def loss_fn():
        pos, _ = rollout_teacher_forced(gen, batch, z)
        return (pos * torch.linspace(0.5, 1.5, 24, dtype=torch.float64).view(12, 2)).sum()

    loss = loss_fn()
    loss.backward()
    picks = [
        (gen.sim.motion_fc.weight, (0, 0)),
        (gen.sim.goal_fc.weight, (1, 1)),
        (gen.encoder.weight_ih_l0, (3, 2)),
        (gen.decoder.weight_hh, (5, 4)),
        (gen.head.weight, (0, 3)),
        (gen.head.bias, (2,)),
    ]
    h = 1e-6
    for param, index in picks:
        analytic = param.grad[index].item()
        with torch.no_grad():
            orig = param[index].item()
            param[index] = orig + h
        hi = loss_fn().item()
        with torch.no_grad():
            param[index] = orig - h
        lo = loss_fn().item()
        with torch.no_grad():
            param[index] = orig
        fd = (hi - lo) / (2 * h)
        assert fd == pytest.approx(analytic, rel=1e-4, abs=1e-8), (param.shape, index)
