"""Scene visualisation: observed tracks, ground truth, samples, refinements.

One image per scene, written to deterministic filenames
(scene_<id, zero padded>.png). Legend encodes trajectory roles; the primary
is drawn thicker than neighbours.
"""

from __future__ import annotations

from pathlib import Path
from typing import List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .generator import SceneForecast
from .scenes import HorizonSpec, Scene

_COLORS = {
    "observed": "#1f4e79",
    "truth": "#2e7d32",
    "prediction": "#c75000",
    "refined": "#8e24aa",
    "neighbor": "#7f8c8d",
}


def plot_scene(
    scene: Scene,
    horizon: HorizonSpec,
    out_path,
    forecast: Optional[SceneForecast] = None,
    refined: Optional[SceneForecast] = None,
) -> None:
    """Render one scene to out_path.

    Observed segments are solid, ground-truth futures dashed, predicted
    samples dotted, refined samples dash-dotted in their own color.
    """
    t_obs = horizon.t_obs
    fig, ax = plt.subplots(figsize=(6, 6))
    seen = set()

    def draw(x, y, role, primary, linestyle):
        label = None
        if role not in seen:
            seen.add(role)
            label = role
        ax.plot(
            x, y,
            linestyle=linestyle,
            color=_COLORS[role],
            linewidth=2.0 if primary else 1.0,
            alpha=1.0 if primary else 0.6,
            label=label,
        )

    for ped, track in scene.pedestrians.items():
        primary = ped == scene.primary_id
        obs = track[:t_obs]
        fut = track[t_obs:]
        role_obs = "observed" if primary else "neighbor"
        draw(obs[:, 0], obs[:, 1], role_obs, primary, "-")
        if len(fut):
            bridged = np.concatenate([obs[-1:], fut])
            draw(bridged[:, 0], bridged[:, 1], "truth", primary, "--")
        ax.plot(obs[-1, 0], obs[-1, 1], "o", color=_COLORS[role_obs], markersize=4)

    def draw_samples(source: SceneForecast, role: str, linestyle: str):
        for ped, samples in source.predicted.items():
            primary = ped == source.primary_id
            last_obs = scene.pedestrians[ped][t_obs - 1]
            for j in range(samples.shape[0]):
                bridged = np.concatenate([last_obs[None], samples[j]])
                draw(bridged[:, 0], bridged[:, 1], role, primary, linestyle)

    if forecast is not None:
        draw_samples(forecast, "prediction", ":")
    if refined is not None:
        draw_samples(refined, "refined", "-.")

    if scene.goals:
        goal = scene.goal_of(scene.primary_id)
        if goal is not None:
            ax.plot(goal[0], goal[1], "*", color="#b8860b", markersize=12, label="goal")

    ax.set_aspect("equal")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    ax.set_title(f"scene {scene.scene_id}")
    fig.savefig(out_path, dpi=110, bbox_inches="tight")
    plt.close(fig)


def plot_scenes(
    scenes: Sequence[Scene],
    horizon: HorizonSpec,
    out_dir,
    forecasts: Optional[Sequence[SceneForecast]] = None,
    refined: Optional[Sequence[SceneForecast]] = None,
) -> List[str]:
    """Render every scene; returns the written file paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, scene in enumerate(scenes):
        path = out_dir / f"scene_{scene.scene_id:06d}.png"
        plot_scene(
            scene,
            horizon,
            path,
            None if forecasts is None else forecasts[i],
            None if refined is None else refined[i],
        )
        paths.append(str(path))
    return paths
