"""Scene domain types and the line-delimited trajectory dataset format.

A scene is a fixed-length window of pedestrian tracks sampled at a constant
rate. One pedestrian is the primary: the agent whose future is predicted and
scored. Neighbour tracks may be absent at some steps (NaN rows); the primary
track must be complete. Scenes optionally carry a goal position per
pedestrian.

On disk a dataset is NDJSON with one record per line:

    {"scene": {"id": 0, "p": 17, "s": 1, "e": 21, "fps": 2.5}}
    {"track": {"f": 1, "p": 17, "x": 3.21, "y": -0.04}}
    {"goal": {"scene": 0, "p": 17, "x": 12.0, "y": 0.5}}

Track records form a pool keyed by (frame, pedestrian); a scene record
selects the tracks whose frame lies in [s, e]. Goal records are optional and
keyed by (scene, pedestrian). Coordinates are stored with 3 decimals.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from typing import Dict, List, Optional, Tuple

import numpy as np

LOG = logging.getLogger(__name__)

COORD_DECIMALS = 3
FRAME_GAP = 8  # empty frames between consecutive scenes on disk


class ParseError(ValueError):
    """A dataset line that cannot be parsed into a known record."""


class ValidationError(ValueError):
    """A scene or horizon that violates a structural invariant."""


@dataclasses.dataclass(frozen=True)
class HorizonSpec:
    """Observation/prediction split lengths, in steps."""

    t_obs: int = 9
    t_pred_len: int = 12

    def __post_init__(self):
        if self.t_obs < 2:
            raise ValidationError("t_obs must be >= 2, velocities need one difference")
        if self.t_pred_len < 1:
            raise ValidationError("t_pred_len must be >= 1")

    @property
    def t_total(self) -> int:
        return self.t_obs + self.t_pred_len


def _as_track(positions) -> np.ndarray:
    arr = np.asarray(positions, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValidationError(f"track must have shape (T, 2), got {arr.shape}")
    return arr


@dataclasses.dataclass
class Scene:
    """One forecasting instance: primary plus neighbours over a fixed window.

    Attributes
    ----------
    scene_id : int
    primary_id : int
        Key into ``pedestrians``.
    pedestrians : dict
        Pedestrian id -> (T, 2) float64 positions in meters. A NaN row marks
        the pedestrian as absent at that step; partial NaN rows are invalid.
    goals : dict, optional
        Pedestrian id -> (2,) goal position. May cover a subset of ids.
    dt : float
        Seconds between consecutive steps.
    """

    scene_id: int
    primary_id: int
    pedestrians: Dict[int, np.ndarray]
    goals: Optional[Dict[int, np.ndarray]] = None
    dt: float = 0.4

    def __post_init__(self):
        self.pedestrians = {int(p): _as_track(tr) for p, tr in self.pedestrians.items()}
        if self.goals is not None:
            self.goals = {
                int(p): np.asarray(g, dtype=np.float64).reshape(2)
                for p, g in self.goals.items()
            }
        self.validate()

    def validate(self) -> None:
        """Raise ValidationError on the first violated invariant."""
        if not (self.dt > 0) or not math.isfinite(self.dt):
            raise ValidationError(f"scene {self.scene_id}: dt must be finite and > 0")
        if not self.pedestrians:
            raise ValidationError(f"scene {self.scene_id}: no pedestrians")
        if self.primary_id not in self.pedestrians:
            raise ValidationError(
                f"scene {self.scene_id}: primary id {self.primary_id} has no track"
            )
        lengths = {tr.shape[0] for tr in self.pedestrians.values()}
        if len(lengths) != 1:
            raise ValidationError(
                f"scene {self.scene_id}: tracks span different lengths {sorted(lengths)}"
            )
        if self.n_steps < 1:
            raise ValidationError(f"scene {self.scene_id}: empty tracks")
        for ped, tr in self.pedestrians.items():
            if np.isinf(tr).any():
                raise ValidationError(
                    f"scene {self.scene_id}: pedestrian {ped} has non-finite coordinates"
                )
            row_nan = np.isnan(tr)
            partial = row_nan.any(axis=1) & ~row_nan.all(axis=1)
            if partial.any():
                step = int(np.argmax(partial))
                raise ValidationError(
                    f"scene {self.scene_id}: pedestrian {ped} half-absent at step {step}"
                )
        primary = self.pedestrians[self.primary_id]
        if np.isnan(primary).any():
            step = int(np.argmax(np.isnan(primary).any(axis=1)))
            raise ValidationError(
                f"scene {self.scene_id}: primary track absent at step {step}; "
                "the primary must be present at every step"
            )
        if self.goals is not None:
            for ped, goal in self.goals.items():
                if not np.isfinite(goal).all():
                    raise ValidationError(
                        f"scene {self.scene_id}: goal of pedestrian {ped} is not finite"
                    )
                if ped not in self.pedestrians:
                    raise ValidationError(
                        f"scene {self.scene_id}: goal for unknown pedestrian {ped}"
                    )

    @property
    def n_steps(self) -> int:
        return next(iter(self.pedestrians.values())).shape[0]

    @property
    def neighbor_ids(self) -> List[int]:
        return [p for p in self.pedestrians if p != self.primary_id]

    @property
    def primary(self) -> np.ndarray:
        return self.pedestrians[self.primary_id]

    def goal_of(self, ped: int) -> Optional[np.ndarray]:
        if self.goals is None:
            return None
        return self.goals.get(ped)


def velocities(positions: np.ndarray, dt: float) -> np.ndarray:
    """Finite-difference velocities, one per step transition.

    Parameters
    ----------
    positions : (T, 2) array
    dt : float

    Returns
    -------
    (T - 1, 2) array with row j = (positions[j+1] - positions[j]) / dt.
    NaN endpoints propagate to NaN velocities.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 2 or positions.shape[0] < 2:
        raise ValidationError("need at least two positions to form a velocity")
    return np.diff(positions, axis=0) / dt


def split_scene(scene: Scene, horizon: HorizonSpec) -> Tuple[Scene, Scene]:
    """Split a scene into its observed and future parts.

    The scene must span exactly ``horizon.t_total`` steps. Concatenating the
    two parts along time reconstructs the original tracks.
    """
    if scene.n_steps < horizon.t_total:
        raise ValidationError(
            f"scene {scene.scene_id} spans {scene.n_steps} steps, "
            f"shorter than the horizon {horizon.t_total}"
        )
    if scene.n_steps > horizon.t_total:
        raise ValidationError(
            f"scene {scene.scene_id} spans {scene.n_steps} steps, "
            f"longer than the horizon {horizon.t_total}"
        )
    cut = horizon.t_obs
    observed = Scene(
        scene_id=scene.scene_id,
        primary_id=scene.primary_id,
        pedestrians={p: tr[:cut].copy() for p, tr in scene.pedestrians.items()},
        goals=None if scene.goals is None else dict(scene.goals),
        dt=scene.dt,
    )
    future = Scene(
        scene_id=scene.scene_id,
        primary_id=scene.primary_id,
        pedestrians={p: tr[cut:].copy() for p, tr in scene.pedestrians.items()},
        goals=None if scene.goals is None else dict(scene.goals),
        dt=scene.dt,
    )
    return observed, future


def _round(x: float) -> float:
    return round(float(x), COORD_DECIMALS)


def save_scenes(scenes: List[Scene], path) -> None:
    """Write scenes as NDJSON. Frame bands are disjoint across scenes."""
    frame = 1
    with open(path, "w") as handle:
        for scene in scenes:
            scene.validate()
            start, end = frame, frame + scene.n_steps - 1
            fps = 1.0 / scene.dt
            record = {
                "scene": {
                    "id": int(scene.scene_id),
                    "p": int(scene.primary_id),
                    "s": start,
                    "e": end,
                    "fps": fps,
                }
            }
            handle.write(json.dumps(record) + "\n")
            if scene.goals is not None:
                for ped in scene.pedestrians:
                    goal = scene.goals.get(ped)
                    if goal is None:
                        continue
                    handle.write(
                        json.dumps(
                            {
                                "goal": {
                                    "scene": int(scene.scene_id),
                                    "p": int(ped),
                                    "x": _round(goal[0]),
                                    "y": _round(goal[1]),
                                }
                            }
                        )
                        + "\n"
                    )
            for ped, track in scene.pedestrians.items():
                for step in range(scene.n_steps):
                    x, y = track[step]
                    if np.isnan(x):
                        continue
                    handle.write(
                        json.dumps(
                            {
                                "track": {
                                    "f": start + step,
                                    "p": int(ped),
                                    "x": _round(x),
                                    "y": _round(y),
                                }
                            }
                        )
                        + "\n"
                    )
            frame = end + 1 + FRAME_GAP


def _parse_line(line: str, lineno: int):
    try:
        record = json.loads(line)
    except json.JSONDecodeError as err:
        raise ParseError(f"line {lineno}: not valid JSON ({err.msg})") from err
    if not isinstance(record, dict) or len(record) != 1:
        raise ParseError(f"line {lineno}: expected a single-key record object")
    kind, body = next(iter(record.items()))
    if kind not in ("scene", "track", "goal"):
        raise ParseError(f"line {lineno}: unknown record kind {kind!r}")
    if not isinstance(body, dict):
        raise ParseError(f"line {lineno}: record body must be an object")
    required = {
        "scene": ("id", "p", "s", "e", "fps"),
        "track": ("f", "p", "x", "y"),
        "goal": ("scene", "p", "x", "y"),
    }[kind]
    for key in required:
        if key not in body:
            raise ParseError(f"line {lineno}: {kind} record missing field {key!r}")
    return kind, body


def load_scenes(
    path,
    horizon: Optional[HorizonSpec] = None,
    strict: bool = True,
) -> List[Scene]:
    """Load and validate scenes from an NDJSON dataset file.

    Parameters
    ----------
    path : str or Path
    horizon : HorizonSpec, optional
        When given, every scene must span exactly t_obs + t_pred_len steps.
    strict : bool
        If True (default) the first invalid scene raises ValidationError.
        If False, invalid scenes are dropped with a logged reason.

    Raises
    ------
    ParseError
        Malformed line, with its line number.
    ValidationError
        In strict mode, the first scene violating an invariant.
    """
    scene_heads = []
    pool: Dict[Tuple[int, int], Tuple[float, float]] = {}
    goal_pool: Dict[Tuple[int, int], Tuple[float, float]] = {}
    with open(path) as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            kind, body = _parse_line(line, lineno)
            if kind == "scene":
                scene_heads.append((lineno, body))
            elif kind == "track":
                key = (int(body["f"]), int(body["p"]))
                value = (float(body["x"]), float(body["y"]))
                if key in pool and pool[key] != value:
                    raise ParseError(
                        f"line {lineno}: conflicting track for frame {key[0]} "
                        f"pedestrian {key[1]}"
                    )
                pool[key] = value
            else:
                goal_pool[(int(body["scene"]), int(body["p"]))] = (
                    float(body["x"]),
                    float(body["y"]),
                )

    frames_by_ped: Dict[int, List[int]] = {}
    for frame, ped in pool:
        frames_by_ped.setdefault(ped, []).append(frame)

    scenes: List[Scene] = []
    for lineno, body in scene_heads:
        scene_id = int(body["id"])
        start, end = int(body["s"]), int(body["e"])
        fps = float(body["fps"])
        if end < start or fps <= 0:
            raise ParseError(f"line {lineno}: scene {scene_id} has an empty span or bad fps")
        n_steps = end - start + 1
        peds = sorted(
            ped
            for ped, frames in frames_by_ped.items()
            if any(start <= f <= end for f in frames)
        )
        tracks = {}
        for ped in peds:
            track = np.full((n_steps, 2), np.nan)
            for step in range(n_steps):
                xy = pool.get((start + step, ped))
                if xy is not None:
                    track[step] = xy
            tracks[ped] = track
        goals = {
            ped: np.array(xy) for (sid, ped), xy in goal_pool.items() if sid == scene_id
        }
        try:
            if not tracks:
                raise ValidationError(f"scene {scene_id}: no tracks in frame span")
            scene = Scene(
                scene_id=scene_id,
                primary_id=int(body["p"]),
                pedestrians=tracks,
                goals=goals or None,
                dt=1.0 / fps,
            )
            if horizon is not None and scene.n_steps != horizon.t_total:
                raise ValidationError(
                    f"scene {scene_id} spans {scene.n_steps} steps, "
                    f"horizon expects {horizon.t_total}"
                )
        except ValidationError as err:
            if strict:
                raise
            LOG.warning("dropping scene: %s", err)
            continue
        scenes.append(scene)
    return scenes
