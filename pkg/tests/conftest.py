import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture(autouse=True)
def _no_global_seed_leak():
    """Tests must not depend on global RNG state; scramble it to catch leaks."""
    np.random.seed(0xC0FFEE % (2**31))
    torch.manual_seed(0xC0FFEE)
    yield


def straight_scene(scene_id=0, n_peds=2, t_total=21, dt=0.4, speed=1.0, spacing=5.0,
                   with_goals=True):
    """Deterministic parallel walkers along +x, far apart (no interaction)."""
    from sganv2.scenes import Scene

    peds = {}
    goals = {}
    for i in range(n_peds):
        xs = np.arange(t_total) * speed * dt
        ys = np.full(t_total, i * spacing)
        peds[i] = np.stack([xs, ys], axis=-1)
        goals[i] = np.array([xs[-1] + 10.0, i * spacing])
    return Scene(
        scene_id=scene_id,
        primary_id=0,
        pedestrians=peds,
        goals=goals if with_goals else None,
        dt=dt,
    )
