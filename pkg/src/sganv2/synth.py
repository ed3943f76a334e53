"""Goal-driven synthetic crowd worlds.

Two generators. Circle-crossing scenes: pedestrians spawn on a circle and
cross it toward far-away goals, steered by a goal-attraction force plus an
exponential pairwise repulsion, so ground-truth paths interact but never
collide. A forking scene: one pedestrian whose observed prefix admits
several well-separated future modes, for studying mode recovery.

Forces, per pedestrian i:

    accel_i = (desired_speed * unit(goal_i - pos_i) - vel_i) / relaxation_time
              + sum_j repulsion_strength * exp(-|pos_i - pos_j| / repulsion_range)
                       * unit(pos_i - pos_j)

integrated with explicit Euler at an internal substep of dt / SUBSTEPS.
Speeds are capped at 2 x desired_speed.
"""

from __future__ import annotations

import dataclasses
import math
from typing import List, Optional, Tuple

import numpy as np

from .scenes import COORD_DECIMALS, HorizonSpec, Scene, ValidationError
from .seeding import stream_seed

SUBSTEPS = 10
SPEED_CAP_FACTOR = 2.0
GOAL_DISTANCE_FACTOR = 3.0  # goal distance from spawn, in units of arena_radius
INTERACTION_RADIUS = 2.0    # neighbour proximity that makes a scene interaction-rich
MIN_CLEARANCE = 0.2         # reject scenes whose ground truth gets closer than this
MIN_SPAWN_SEPARATION = 1.5
HEADING_JITTER = 0.35       # radians around the crossing direction
MAX_ATTEMPTS = 200

FORK_SPREAD = math.radians(120.0)  # fan width of forking-scene modes
FORK_HEADING_JITTER = math.radians(3.0)
FORK_SPEED_JITTER = 0.05


class GenerationError(RuntimeError):
    """World sampling failed to produce a scene satisfying its contract."""


@dataclasses.dataclass(frozen=True)
class WorldConfig:
    """Physics and sampling parameters of the circle-crossing world."""

    n_pedestrians: int = 4
    arena_radius: float = 5.0
    desired_speed: float = 1.2
    relaxation_time: float = 0.5
    repulsion_strength: float = 8.0
    repulsion_range: float = 0.5
    dt: float = 0.4
    total_steps: int = 21
    seed: int = 0

    def __post_init__(self):
        if self.n_pedestrians < 1:
            raise ValidationError("n_pedestrians must be >= 1")
        for name in ("arena_radius", "desired_speed", "relaxation_time",
                     "repulsion_range", "dt"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be > 0")
        if self.repulsion_strength < 0:
            raise ValidationError("repulsion_strength must be >= 0")
        if self.total_steps < 2:
            raise ValidationError("total_steps must be >= 2")


def _unit(vec: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    norm = np.linalg.norm(vec, axis=-1, keepdims=True)
    return vec / np.maximum(norm, eps)


def simulate(
    cfg: WorldConfig,
    starts: np.ndarray,
    goals: np.ndarray,
) -> Tuple[np.ndarray, float]:
    """Roll the force model forward from given starts toward given goals.

    Parameters
    ----------
    cfg : WorldConfig
    starts, goals : (n, 2) arrays

    Returns
    -------
    positions : (total_steps, n, 2) array
        Recorded every cfg.dt; positions[0] equals starts.
    min_separation : float
        Smallest pairwise distance seen at any internal substep (inf for a
        single pedestrian).
    """
    starts = np.asarray(starts, dtype=np.float64)
    goals = np.asarray(goals, dtype=np.float64)
    n = starts.shape[0]
    pos = starts.copy()
    vel = cfg.desired_speed * _unit(goals - pos)
    speed_cap = SPEED_CAP_FACTOR * cfg.desired_speed
    dt_sub = cfg.dt / SUBSTEPS
    eye = np.eye(n, dtype=bool)

    out = np.empty((cfg.total_steps, n, 2))
    out[0] = pos
    min_sep = np.inf
    for step in range(1, cfg.total_steps):
        for _ in range(SUBSTEPS):
            accel = (cfg.desired_speed * _unit(goals - pos) - vel) / cfg.relaxation_time
            if n > 1:
                diff = pos[:, None, :] - pos[None, :, :]
                dist = np.linalg.norm(diff, axis=-1)
                np.fill_diagonal(dist, np.inf)
                min_sep = min(min_sep, dist.min())
                weight = cfg.repulsion_strength * np.exp(-dist / cfg.repulsion_range)
                accel = accel + np.sum(
                    weight[:, :, None] * diff / dist[:, :, None], axis=1
                )
            vel = vel + dt_sub * accel
            speed = np.linalg.norm(vel, axis=-1, keepdims=True)
            vel = np.where(speed > speed_cap, vel * (speed_cap / speed), vel)
            pos = pos + dt_sub * vel
        if n > 1:
            diff = pos[:, None, :] - pos[None, :, :]
            dist = np.where(eye, np.inf, np.linalg.norm(diff, axis=-1))
            min_sep = min(min_sep, dist.min())
        out[step] = pos
    return out, float(min_sep)


def _spawn(cfg: WorldConfig, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Sample circle-crossing starts and far goals with separated spawns."""
    starts = np.empty((cfg.n_pedestrians, 2))
    for i in range(cfg.n_pedestrians):
        for _ in range(100):
            theta = rng.uniform(0.0, 2.0 * math.pi)
            radius = cfg.arena_radius * rng.uniform(0.9, 1.1)
            candidate = radius * np.array([math.cos(theta), math.sin(theta)])
            if i == 0 or np.linalg.norm(starts[:i] - candidate, axis=-1).min() >= MIN_SPAWN_SEPARATION:
                starts[i] = candidate
                break
        else:
            raise GenerationError("could not place spawn points apart")
    jitter = rng.uniform(-HEADING_JITTER, HEADING_JITTER, size=cfg.n_pedestrians)
    inward = math.pi + np.arctan2(starts[:, 1], starts[:, 0]) + jitter
    direction = np.stack([np.cos(inward), np.sin(inward)], axis=-1)
    goals = starts + GOAL_DISTANCE_FACTOR * cfg.arena_radius * direction
    return starts, goals


def _interaction_rich(
    paths: np.ndarray, primary: int, horizon: HorizonSpec
) -> bool:
    """True when some neighbour comes within INTERACTION_RADIUS of the
    primary during the prediction steps."""
    pred = paths[horizon.t_obs:]
    rel = pred - pred[:, primary:primary + 1, :]
    dist = np.linalg.norm(rel, axis=-1)
    dist[:, primary] = np.inf
    return bool(dist.min() < INTERACTION_RADIUS)


def generate_scene(
    cfg: WorldConfig,
    rng_seed: int,
    horizon: HorizonSpec = HorizonSpec(),
    scene_id: int = 0,
) -> Scene:
    """Sample one interaction-rich, collision-free circle-crossing scene.

    Resamples spawns until the ground truth keeps at least MIN_CLEARANCE
    pairwise separation at every internal substep and some neighbour passes
    within INTERACTION_RADIUS of the primary during the prediction window.
    The primary is the first pedestrian satisfying the filter. Deterministic
    in (cfg, rng_seed).
    """
    if cfg.total_steps < horizon.t_total:
        raise ValidationError(
            f"total_steps {cfg.total_steps} shorter than horizon {horizon.t_total}"
        )
    rng = np.random.default_rng(rng_seed)
    for _ in range(MAX_ATTEMPTS):
        starts, goals = _spawn(cfg, rng)
        paths, min_sep = simulate(cfg, starts, goals)
        if cfg.n_pedestrians > 1 and min_sep < MIN_CLEARANCE:
            continue
        primary = next(
            (
                i
                for i in range(cfg.n_pedestrians)
                if _interaction_rich(paths, i, horizon)
            ),
            None,
        )
        if primary is None:
            if cfg.n_pedestrians == 1:
                primary = 0
            else:
                continue
        paths = np.round(paths, COORD_DECIMALS)
        goals = np.round(goals, COORD_DECIMALS)
        base = scene_id * 100
        ids = [base + i for i in range(cfg.n_pedestrians)]
        return Scene(
            scene_id=scene_id,
            primary_id=ids[primary],
            pedestrians={ids[i]: paths[:, i, :] for i in range(cfg.n_pedestrians)},
            goals={ids[i]: goals[i] for i in range(cfg.n_pedestrians)},
            dt=cfg.dt,
        )
    raise GenerationError(
        f"no interaction-rich collision-free scene after {MAX_ATTEMPTS} attempts "
        f"(seed {rng_seed})"
    )


def generate_dataset(
    cfg: WorldConfig,
    n_scenes: int,
    seed: Optional[int] = None,
    horizon: HorizonSpec = HorizonSpec(),
) -> List[Scene]:
    """Generate a list of scenes, one independent child stream per scene."""
    root = cfg.seed if seed is None else seed
    return [
        generate_scene(cfg, stream_seed(root, f"scene/{i}"), horizon, scene_id=i)
        for i in range(n_scenes)
    ]


def generate_forking_scene(
    mode_count: int = 4,
    samples_per_mode: int = 8,
    seed: int = 0,
    horizon: HorizonSpec = HorizonSpec(t_obs=8, t_pred_len=13),
    speed: float = 1.2,
    dt: float = 0.4,
) -> Tuple[Scene, List[Tuple[int, np.ndarray]]]:
    """Build a single-pedestrian scene whose future forks into modes.

    The observed prefix walks along +x and ends at the origin. Each mode is
    a straight future at one of ``mode_count`` headings fanned evenly over
    FORK_SPREAD; each sample jitters the heading and speed slightly.

    Returns
    -------
    prefix : Scene
        Observation-only scene (t_obs steps, one pedestrian, no goal).
    futures : list of (mode_index, (t_pred_len, 2) array)
        samples_per_mode entries per mode. Cluster centers (mean endpoints)
        are separated by more than 4 x the largest within-cluster endpoint
        spread; violations raise GenerationError.
    """
    if mode_count < 2:
        raise ValidationError("mode_count must be >= 2")
    if samples_per_mode < 1:
        raise ValidationError("samples_per_mode must be >= 1")
    rng = np.random.default_rng(seed)
    t_obs, t_pred = horizon.t_obs, horizon.t_pred_len

    xs = (np.arange(t_obs) - (t_obs - 1)) * speed * dt
    prefix_track = np.stack([xs, np.zeros(t_obs)], axis=-1)
    prefix = Scene(
        scene_id=0,
        primary_id=0,
        pedestrians={0: np.round(prefix_track, COORD_DECIMALS)},
        goals=None,
        dt=dt,
    )

    headings = np.linspace(-FORK_SPREAD / 2.0, FORK_SPREAD / 2.0, mode_count)
    steps = np.arange(1, t_pred + 1) * dt
    futures: List[Tuple[int, np.ndarray]] = []
    for mode, heading in enumerate(headings):
        for _ in range(samples_per_mode):
            angle = heading + rng.uniform(-FORK_HEADING_JITTER, FORK_HEADING_JITTER)
            v = speed * (1.0 + rng.uniform(-FORK_SPEED_JITTER, FORK_SPEED_JITTER))
            track = np.stack(
                [steps * v * math.cos(angle), steps * v * math.sin(angle)], axis=-1
            )
            futures.append((mode, np.round(track, COORD_DECIMALS)))

    centers = np.stack(
        [
            np.mean([f[-1] for m, f in futures if m == mode], axis=0)
            for mode in range(mode_count)
        ]
    )
    spread = max(
        max(np.linalg.norm(f[-1] - centers[m]) for m, f in futures if m == mode)
        for mode in range(mode_count)
    )
    center_gap = min(
        np.linalg.norm(centers[a] - centers[b])
        for a in range(mode_count)
        for b in range(a + 1, mode_count)
    )
    if center_gap <= 4.0 * spread:
        raise GenerationError(
            f"forking modes not separated: center gap {center_gap:.3f} "
            f"vs within-mode spread {spread:.3f}"
        )
    return prefix, futures


def forking_training_scenes(
    prefix: Scene, futures: List[Tuple[int, np.ndarray]]
) -> List[Scene]:
    """Assemble full scenes (prefix + one sampled future each) for training."""
    scenes = []
    obs = prefix.primary
    for idx, (_, future) in enumerate(futures):
        track = np.concatenate([obs, future], axis=0)
        scenes.append(
            Scene(
                scene_id=idx,
                primary_id=prefix.primary_id,
                pedestrians={prefix.primary_id: track},
                goals=None,
                dt=prefix.dt,
            )
        )
    return scenes
