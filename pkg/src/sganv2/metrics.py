"""Evaluation protocol: displacement errors, collisions, goal distance,
mode coverage, and the two non-learned baselines.

Collision checking treats every trajectory as piecewise-linear motion and
computes the exact minimum distance between two moving points on each
sub-segment in closed form, so verdicts do not depend on the substep count.
The predicted window is bridged to the last observed position so the first
transition is covered.
"""

from __future__ import annotations

import dataclasses
import json
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .generator import SceneForecast, TrajectoryBundle
from .scenes import HorizonSpec, Scene, ValidationError, split_scene

COLLISION_THRESHOLD = 0.1
COLLISION_SUBSTEPS = 4

# uniform-predictor profile grid: every heading rotation paired with every
# speed multiplier, enumerated rotation-major
UP_ANGLES_DEG = (0.0, 25.0, 50.0, -25.0, -50.0)
UP_SPEEDS = (1.0, 0.75, 1.25, 0.25)


# ------------------------------------------------------------------ geometry

def _segment_min_distance(rel0: np.ndarray, rel1: np.ndarray) -> np.ndarray:
    """Exact min |rel0 + tau * (rel1 - rel0)| over tau in [0, 1].

    rel0, rel1: (..., 2) relative positions at the segment endpoints.
    """
    diff = rel1 - rel0
    denom = (diff * diff).sum(axis=-1)
    dot = (rel0 * diff).sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        tau = np.where(denom > 0, -dot / np.where(denom > 0, denom, 1.0), 0.0)
    tau = np.clip(tau, 0.0, 1.0)
    closest = rel0 + tau[..., None] * diff
    return np.linalg.norm(closest, axis=-1)


def min_separation(
    path_a: np.ndarray, path_b: np.ndarray, substeps: int = COLLISION_SUBSTEPS
) -> float:
    """Minimum distance between two synchronously moving points.

    Both paths are (T, 2) with matching timestamps and linear motion between
    steps. Each step interval is split into ``substeps`` sub-segments and
    the minimum over each is computed in closed form; the result is exact
    for any substeps >= 1.
    """
    path_a = np.asarray(path_a, dtype=np.float64)
    path_b = np.asarray(path_b, dtype=np.float64)
    if path_a.shape != path_b.shape or path_a.ndim != 2 or path_a.shape[0] < 2:
        raise ValidationError("paths must share shape (T, 2) with T >= 2")
    if substeps < 1:
        raise ValidationError("substeps must be >= 1")
    rel = path_a - path_b
    taus = np.linspace(0.0, 1.0, substeps + 1)
    # breakpoints (T-1, substeps+1, 2) along each interval
    points = rel[:-1, None, :] + taus[None, :, None] * (rel[1:] - rel[:-1])[:, None, :]
    dists = _segment_min_distance(points[:, :-1], points[:, 1:])
    return float(dists.min())


def paths_collide(
    path_a: np.ndarray,
    path_b: np.ndarray,
    threshold: float = COLLISION_THRESHOLD,
    substeps: int = COLLISION_SUBSTEPS,
) -> bool:
    """True when the interpolated separation drops strictly below threshold."""
    return min_separation(path_a, path_b, substeps) < threshold


def _bridged(last_obs: np.ndarray, predicted: np.ndarray) -> np.ndarray:
    return np.concatenate([last_obs.reshape(1, 2), predicted], axis=0)


def forecast_collisions(
    scene: Scene,
    forecast: SceneForecast,
    horizon: HorizonSpec,
    threshold: float = COLLISION_THRESHOLD,
    substeps: int = COLLISION_SUBSTEPS,
) -> np.ndarray:
    """Per-sample collision verdicts for the primary of one forecast.

    Sample j collides when the primary's bridged predicted path passes
    within ``threshold`` of any neighbour's bridged predicted path in joint
    sample j. Returns a (k,) bool array.
    """
    t_obs = horizon.t_obs
    primary_pred = forecast.predicted[forecast.primary_id]
    last_obs = scene.primary[t_obs - 1]
    verdicts = np.zeros(forecast.k, dtype=bool)
    neighbors = [
        (ped, pred) for ped, pred in forecast.predicted.items()
        if ped != forecast.primary_id
    ]
    for j in range(forecast.k):
        pa = _bridged(last_obs, primary_pred[j])
        for ped, pred in neighbors:
            pb = _bridged(scene.pedestrians[ped][t_obs - 1], pred[j])
            if paths_collide(pa, pb, threshold, substeps):
                verdicts[j] = True
                break
    return verdicts


def collision_rate(
    scenes: Sequence[Scene],
    forecasts: Sequence[SceneForecast],
    horizon: HorizonSpec,
    threshold: float = COLLISION_THRESHOLD,
    substeps: int = COLLISION_SUBSTEPS,
) -> float:
    """Percentage of (scene, sample) pairs whose primary collides.

    With k=1 this is the percentage of scenes with a colliding primary.
    """
    if len(scenes) != len(forecasts):
        raise ValidationError("scenes and forecasts must align")
    if not scenes:
        raise ValidationError("empty evaluation set")
    total, hits = 0, 0
    for scene, forecast in zip(scenes, forecasts):
        verdicts = forecast_collisions(scene, forecast, horizon, threshold, substeps)
        hits += int(verdicts.sum())
        total += forecast.k
    return 100.0 * hits / total


def ground_truth_collision_rate(
    scenes: Sequence[Scene],
    horizon: HorizonSpec,
    threshold: float = COLLISION_THRESHOLD,
    substeps: int = COLLISION_SUBSTEPS,
) -> float:
    """Collision rate of the ground-truth futures themselves."""
    forecasts = []
    for scene in scenes:
        _, future = split_scene(scene, horizon)
        predicted = {
            ped: track[None, :, :]
            for ped, track in future.pedestrians.items()
            if not np.isnan(track).any()
        }
        forecasts.append(
            SceneForecast(
                scene_id=scene.scene_id,
                primary_id=scene.primary_id,
                predicted=predicted,
                k=1,
            )
        )
    return collision_rate(scenes, forecasts, horizon, threshold, substeps)


# ------------------------------------------------------------- displacement

def ade(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean Euclidean displacement over prediction steps."""
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def fde(pred: np.ndarray, gt: np.ndarray) -> float:
    """Euclidean displacement at the final step."""
    return float(np.linalg.norm(pred[-1] - gt[-1]))


def top_k_ade_fde(
    bundle: TrajectoryBundle, gt_future: np.ndarray, k: int
) -> Tuple[float, float]:
    """Best ADE among the first k samples, with that sample's FDE.

    The FDE reported belongs to the ADE-minimising sample, so metric pairs
    describe one trajectory.
    """
    if k < 1 or k > bundle.k:
        raise ValidationError(f"k={k} out of range for a bundle of {bundle.k}")
    ades = np.linalg.norm(bundle.positions[:k] - gt_future[None], axis=-1).mean(axis=-1)
    best = int(np.argmin(ades))
    return float(ades[best]), fde(bundle.positions[best], gt_future)


def dist2goal(prediction: np.ndarray, goal: np.ndarray) -> float:
    """Distance from the predicted endpoint to the goal."""
    return float(np.linalg.norm(np.asarray(prediction)[-1] - np.asarray(goal)))


# ------------------------------------------------------------ mode coverage

def mode_centers(mode_futures: Sequence[Tuple[int, np.ndarray]]) -> Dict[int, np.ndarray]:
    """Mean endpoint per mode index."""
    endpoints: Dict[int, List[np.ndarray]] = {}
    for mode, future in mode_futures:
        endpoints.setdefault(mode, []).append(np.asarray(future)[-1])
    return {mode: np.mean(pts, axis=0) for mode, pts in endpoints.items()}


def cluster_radius(mode_futures: Sequence[Tuple[int, np.ndarray]]) -> float:
    """Largest member-endpoint distance to its own mode center."""
    centers = mode_centers(mode_futures)
    return max(
        float(np.linalg.norm(np.asarray(future)[-1] - centers[mode]))
        for mode, future in mode_futures
    )


def mode_coverage(
    bundle: TrajectoryBundle,
    mode_futures: Sequence[Tuple[int, np.ndarray]],
    radius: Optional[float] = None,
) -> float:
    """Fraction of modes with at least one sample endpoint within radius.

    radius defaults to twice the within-cluster endpoint spread, which is
    still far below the separation the forking scene guarantees between
    cluster centers.
    """
    centers = mode_centers(mode_futures)
    if radius is None:
        radius = 2.0 * cluster_radius(mode_futures)
    endpoints = bundle.positions[:, -1, :]
    covered = sum(
        1
        for center in centers.values()
        if np.linalg.norm(endpoints - center[None], axis=-1).min() <= radius
    )
    return covered / len(centers)


# ---------------------------------------------------------------- baselines

def _rotation(deg: float) -> np.ndarray:
    rad = math.radians(deg)
    return np.array(
        [[math.cos(rad), -math.sin(rad)], [math.sin(rad), math.cos(rad)]]
    )


def up_profiles() -> List[np.ndarray]:
    """The 20 uniform-predictor rotation matrices scaled by speed."""
    return [
        _rotation(angle) * speed for angle in UP_ANGLES_DEG for speed in UP_SPEEDS
    ]


def _constant_velocity_path(
    last_pos: np.ndarray, velocity: np.ndarray, t_pred_len: int, dt: float
) -> np.ndarray:
    steps = np.arange(1, t_pred_len + 1)[:, None]
    return last_pos[None] + steps * (velocity[None] * dt)


def _last_velocity(track: np.ndarray, t_obs: int, dt: float) -> np.ndarray:
    return (track[t_obs - 1] - track[t_obs - 2]) / dt


def constant_velocity_bundle(scene: Scene, horizon: HorizonSpec) -> TrajectoryBundle:
    """Single-sample baseline: continue the last observed velocity."""
    vel = _last_velocity(scene.primary, horizon.t_obs, scene.dt)
    path = _constant_velocity_path(
        scene.primary[horizon.t_obs - 1], vel, horizon.t_pred_len, scene.dt
    )
    return TrajectoryBundle(positions=path[None])


def uniform_bundle(scene: Scene, horizon: HorizonSpec, k: int = 20) -> TrajectoryBundle:
    """Uniform predictor: k profiles of (rotation, speed) applied to the
    last observed velocity, each rolled out at constant velocity."""
    profiles = up_profiles()
    if k < 1 or k > len(profiles):
        raise ValidationError(f"uniform predictor supports 1..{len(profiles)} samples")
    vel = _last_velocity(scene.primary, horizon.t_obs, scene.dt)
    last = scene.primary[horizon.t_obs - 1]
    paths = [
        _constant_velocity_path(last, profile @ vel, horizon.t_pred_len, scene.dt)
        for profile in profiles[:k]
    ]
    return TrajectoryBundle(positions=np.stack(paths))


def baseline_forecast(
    scene: Scene, horizon: HorizonSpec, model: str, k: int
) -> SceneForecast:
    """SceneForecast for 'up' or 'cv', applied to every complete pedestrian.

    Joint sample j uses profile j for all pedestrians, so samples stay
    deterministic and aligned across the scene.
    """
    t_obs = horizon.t_obs
    predicted = {}
    for ped, track in scene.pedestrians.items():
        if np.isnan(track[:t_obs]).any():
            continue
        if model == "cv":
            predicted[ped] = constant_velocity_bundle(
                Scene(scene.scene_id, ped, {ped: track}, None, scene.dt), horizon
            ).positions
        elif model == "up":
            predicted[ped] = uniform_bundle(
                Scene(scene.scene_id, ped, {ped: track}, None, scene.dt), horizon, k
            ).positions
        else:
            raise ValidationError(f"unknown baseline {model!r}")
    return SceneForecast(
        scene_id=scene.scene_id,
        primary_id=scene.primary_id,
        predicted=predicted,
        k=1 if model == "cv" else k,
    )


# ------------------------------------------------------------------- report

@dataclasses.dataclass
class MetricsReport:
    """Aggregate evaluation results over a scene set."""

    n_scenes: int
    k_values: Tuple[int, ...]
    top_k_ade: Dict[int, float]
    top_k_fde: Dict[int, float]
    col_rate: float
    dist2goal_mean: Optional[float] = None
    gt_dist2goal_mean: Optional[float] = None
    mode_coverage: Optional[float] = None
    extras: Dict[str, float] = dataclasses.field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_scenes": self.n_scenes,
            "k_values": list(self.k_values),
            "top_k_ade": {str(k): v for k, v in self.top_k_ade.items()},
            "top_k_fde": {str(k): v for k, v in self.top_k_fde.items()},
            "col_rate": self.col_rate,
            "dist2goal_mean": self.dist2goal_mean,
            "gt_dist2goal_mean": self.gt_dist2goal_mean,
            "mode_coverage": self.mode_coverage,
            "extras": self.extras,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        rows = [("scenes", f"{self.n_scenes}")]
        for k in self.k_values:
            rows.append((f"top-{k} ade [m]", f"{self.top_k_ade[k]:.4f}"))
            rows.append((f"top-{k} fde [m]", f"{self.top_k_fde[k]:.4f}"))
        rows.append(("col [%]", f"{self.col_rate:.2f}"))
        if self.dist2goal_mean is not None:
            rows.append(("dist2goal [m]", f"{self.dist2goal_mean:.3f}"))
        if self.gt_dist2goal_mean is not None:
            rows.append(("gt dist2goal [m]", f"{self.gt_dist2goal_mean:.3f}"))
        if self.mode_coverage is not None:
            rows.append(("mode coverage", f"{self.mode_coverage:.3f}"))
        for key in sorted(self.extras):
            rows.append((key, f"{self.extras[key]:.4f}"))
        width = max(len(name) for name, _ in rows)
        lines = [f"{name.ljust(width)}  {value}" for name, value in rows]
        return "\n".join(lines)


def evaluate_forecasts(
    scenes: Sequence[Scene],
    forecasts: Sequence[SceneForecast],
    horizon: HorizonSpec,
    k_values: Sequence[int] = (3, 20),
    collision_threshold: float = COLLISION_THRESHOLD,
    substeps: int = COLLISION_SUBSTEPS,
) -> MetricsReport:
    """Score forecasts against ground truth.

    Top-k metrics use the first k samples of each bundle; the bundle must
    hold at least max(k_values) samples. Dist2Goal is reported when scenes
    carry a primary goal, as the mean over scenes of the per-scene mean over
    samples, next to the ground-truth endpoint's own Dist2Goal.
    """
    if len(scenes) != len(forecasts):
        raise ValidationError("scenes and forecasts must align")
    if not scenes:
        raise ValidationError("empty evaluation set")
    k_values = tuple(sorted(set(int(k) for k in k_values)))
    k_max = max(k_values)
    ade_acc = {k: 0.0 for k in k_values}
    fde_acc = {k: 0.0 for k in k_values}
    d2g_acc, gt_d2g_acc, with_goal = 0.0, 0.0, 0
    for scene, forecast in zip(scenes, forecasts):
        if forecast.k < k_max:
            raise ValidationError(
                f"scene {scene.scene_id}: bundle has {forecast.k} samples, "
                f"need {k_max}"
            )
        _, future = split_scene(scene, horizon)
        gt = future.primary
        bundle = forecast.primary_bundle
        for k in k_values:
            a, f = top_k_ade_fde(bundle, gt, k)
            ade_acc[k] += a
            fde_acc[k] += f
        goal = scene.goal_of(scene.primary_id)
        if goal is not None:
            d2g_acc += float(
                np.mean([dist2goal(p, goal) for p in bundle.positions])
            )
            gt_d2g_acc += dist2goal(gt, goal)
            with_goal += 1
    n = len(scenes)
    col = collision_rate(scenes, forecasts, horizon, collision_threshold, substeps)
    return MetricsReport(
        n_scenes=n,
        k_values=k_values,
        top_k_ade={k: ade_acc[k] / n for k in k_values},
        top_k_fde={k: fde_acc[k] / n for k in k_values},
        col_rate=col,
        dist2goal_mean=d2g_acc / with_goal if with_goal else None,
        gt_dist2goal_mean=gt_d2g_acc / with_goal if with_goal else None,
    )
