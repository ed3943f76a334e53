"""Tensorisation of scenes for training and rollout.

Training uses a primary-centric view: one batch row per scene, neighbours
teacher-forced from ground truth at every step. Test-time rollout uses a
pedestrian-centric view: one row per (pedestrian, sample), with neighbour
state gathered from the evolving batch itself so everyone is advanced by
the shared generator simultaneously.

Absent neighbour steps are zero-filled and masked out. A neighbour
contributes to a grid at transition j only if it has positions at both ends
of the transition.
"""

from __future__ import annotations

import dataclasses
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .scenes import HorizonSpec, Scene, ValidationError

NeighborFeed = Callable[[int, torch.Tensor, torch.Tensor], Tuple[torch.Tensor, torch.Tensor, torch.Tensor]]


@dataclasses.dataclass
class TrainBatch:
    """Teacher-forced tensors for a batch of scenes (primary view).

    pos: (B, T, 2) primary ground truth over the full horizon.
    nb_pos: (B, T, N, 2) neighbour positions, zero where absent.
    nb_ok: (B, T, N) presence mask.
    nb_vel: (B, T-1, N, 2) neighbour velocities per transition, zero where invalid.
    nb_vel_ok: (B, T-1, N).
    goal: (B, 2) or None.
    """

    pos: torch.Tensor
    nb_pos: torch.Tensor
    nb_ok: torch.Tensor
    nb_vel: torch.Tensor
    nb_vel_ok: torch.Tensor
    goal: Optional[torch.Tensor]
    dt: float
    horizon: HorizonSpec

    @property
    def size(self) -> int:
        return self.pos.shape[0]

    def observed_feed(self) -> NeighborFeed:
        """Neighbour feed over ground-truth tracks, indexed by transition."""

        def feed(j: int, pos: torch.Tensor, vel: torch.Tensor):
            t = self.horizon.t_obs + j
            return self.nb_pos[:, t], self.nb_vel[:, t - 1], self.nb_vel_ok[:, t - 1]

        return feed


def scene_to_arrays(scene: Scene, horizon: HorizonSpec, with_goal: bool):
    """Per-scene float32 arrays used by collate_training."""
    if scene.n_steps != horizon.t_total:
        raise ValidationError(
            f"scene {scene.scene_id} spans {scene.n_steps} steps, "
            f"expected {horizon.t_total}"
        )
    primary = scene.primary.astype(np.float32)
    nb_ids = scene.neighbor_ids
    n = len(nb_ids)
    t = scene.n_steps
    nb = np.zeros((t, n, 2), dtype=np.float32)
    ok = np.zeros((t, n), dtype=bool)
    for k, ped in enumerate(nb_ids):
        track = scene.pedestrians[ped]
        present = ~np.isnan(track).any(axis=1)
        ok[:, k] = present
        nb[present, k] = track[present].astype(np.float32)
    goal = None
    if with_goal:
        g = scene.goal_of(scene.primary_id)
        if g is None:
            raise ValidationError(
                f"scene {scene.scene_id} has no goal for the primary but the "
                "model is goal-conditioned"
            )
        goal = g.astype(np.float32)
    return primary, nb, ok, goal


def collate_training(
    scenes: Sequence[Scene],
    horizon: HorizonSpec,
    with_goal: bool,
    dtype: torch.dtype = torch.float32,
) -> TrainBatch:
    """Pad scenes to a common neighbour count and stack into one batch."""
    if not scenes:
        raise ValidationError("empty batch")
    dt = scenes[0].dt
    arrays = [scene_to_arrays(s, horizon, with_goal) for s in scenes]
    b = len(arrays)
    t = horizon.t_total
    n_max = max(a[1].shape[1] for a in arrays)
    pos = np.stack([a[0] for a in arrays])
    nb = np.zeros((b, t, n_max, 2), dtype=np.float32)
    ok = np.zeros((b, t, n_max), dtype=bool)
    for i, (_, nb_i, ok_i, _) in enumerate(arrays):
        n = nb_i.shape[1]
        nb[i, :, :n] = nb_i
        ok[i, :, :n] = ok_i
    goal = np.stack([a[3] for a in arrays]) if with_goal else None

    pos_t = torch.from_numpy(pos).to(dtype)
    nb_t = torch.from_numpy(nb).to(dtype)
    ok_t = torch.from_numpy(ok)
    vel_ok = ok_t[:, 1:] & ok_t[:, :-1]
    nb_vel = (nb_t[:, 1:] - nb_t[:, :-1]) / dt
    nb_vel = nb_vel * vel_ok.unsqueeze(-1)
    return TrainBatch(
        pos=pos_t,
        nb_pos=nb_t,
        nb_ok=ok_t,
        nb_vel=nb_vel,
        nb_vel_ok=vel_ok,
        goal=None if goal is None else torch.from_numpy(goal).to(dtype),
        dt=dt,
        horizon=horizon,
    )


@dataclasses.dataclass
class RolloutBatch:
    """Pedestrian-centric tensors for simultaneous k-sample rollout.

    Rows are ordered sample-major: k blocks of R rows, block s holding
    sample s of every (scene, pedestrian) row. nb_index addresses rows
    within a block; adding the block offset s*R yields absolute rows.
    """

    obs_pos: torch.Tensor      # (M, t_obs, 2)
    nb_obs_pos: torch.Tensor   # (M, t_obs, N, 2) teacher-forced observation
    nb_obs_vel: torch.Tensor   # (M, t_obs-1, N, 2)
    nb_obs_vel_ok: torch.Tensor
    goal: Optional[torch.Tensor]
    nb_index: torch.Tensor     # (R, N) row index of each neighbour within a block
    nb_valid: torch.Tensor     # (R, N)
    rows: List[Tuple[int, int]]  # (scene position in input list, ped id) per block row
    k: int
    dt: float
    horizon: HorizonSpec

    @property
    def rows_per_sample(self) -> int:
        return len(self.rows)

    def neighbor_feed(self) -> NeighborFeed:
        """Feed that gathers neighbour state from the evolving batch."""
        r = self.rows_per_sample
        n = self.nb_index.shape[1]
        offsets = torch.arange(self.k).repeat_interleave(r) * r  # (M,)
        index = self.nb_index.repeat(self.k, 1) + offsets.unsqueeze(1)
        valid = self.nb_valid.repeat(self.k, 1)
        index = torch.where(valid, index, torch.zeros_like(index))

        def feed(j: int, pos: torch.Tensor, vel: torch.Tensor):
            m = pos.shape[0]
            if n == 0:
                empty = pos.new_zeros(m, 0, 2)
                return empty, empty, valid
            flat = index.reshape(-1)
            nb_pos = pos[flat].view(m, n, 2)
            nb_vel = vel[flat].view(m, n, 2)
            return nb_pos, nb_vel, valid

        return feed


def collate_rollout(
    scenes: Sequence[Scene],
    horizon: HorizonSpec,
    k: int,
    with_goal: bool,
    dtype: torch.dtype = torch.float32,
) -> RolloutBatch:
    """Tensorise scenes for simultaneous rollout of every pedestrian.

    Pedestrians with an incomplete observed track are not rolled out (and
    are invisible to the others during prediction). The primaries of all
    scenes are always rolled out; a scene whose primary cannot be encoded
    is a validation error upstream.
    """
    if not scenes:
        raise ValidationError("empty rollout batch")
    dt = scenes[0].dt
    t_obs = horizon.t_obs
    rows: List[Tuple[int, int]] = []
    row_of = {}
    for si, scene in enumerate(scenes):
        if scene.n_steps < t_obs:
            raise ValidationError(
                f"scene {scene.scene_id} shorter than the observation window"
            )
        for ped, track in scene.pedestrians.items():
            if np.isnan(track[:t_obs]).any():
                continue
            row_of[(si, ped)] = len(rows)
            rows.append((si, ped))

    r = len(rows)
    goal = np.zeros((r, 2), dtype=np.float32) if with_goal else None
    obs = np.zeros((r, t_obs, 2), dtype=np.float32)
    neighbor_rows: List[List[int]] = []
    obs_neighbors: List[List[np.ndarray]] = []
    for row, (si, ped) in enumerate(rows):
        scene = scenes[si]
        obs[row] = scene.pedestrians[ped][:t_obs]
        if with_goal:
            g = scene.goal_of(ped)
            if g is None:
                raise ValidationError(
                    f"scene {scene.scene_id}: pedestrian {ped} has no goal but "
                    "the model is goal-conditioned"
                )
            goal[row] = g
        neighbor_rows.append(
            [row_of[(si, nb)] for nb in scene.pedestrians
             if nb != ped and (si, nb) in row_of]
        )
        obs_neighbors.append(
            [scene.pedestrians[nb][:t_obs] for nb in scene.pedestrians if nb != ped]
        )

    n_max = max((len(nbs) for nbs in neighbor_rows), default=0)
    nb_index = np.zeros((r, n_max), dtype=np.int64)
    nb_valid = np.zeros((r, n_max), dtype=bool)
    for row, nbs in enumerate(neighbor_rows):
        nb_index[row, : len(nbs)] = nbs
        nb_valid[row, : len(nbs)] = True

    # teacher-forced neighbour tensors over the observed window; these also
    # cover pedestrians too incomplete to roll out, masked per step
    n_obs_max = max((len(nbs) for nbs in obs_neighbors), default=0)
    nb_obs = np.zeros((r, t_obs, n_obs_max, 2), dtype=np.float32)
    nb_ok = np.zeros((r, t_obs, n_obs_max), dtype=bool)
    for row, tracks in enumerate(obs_neighbors):
        for j, track in enumerate(tracks):
            present = ~np.isnan(track).any(axis=1)
            nb_ok[row, present, j] = True
            nb_obs[row, present, j] = track[present]

    obs_t = torch.from_numpy(obs).to(dtype).repeat(k, 1, 1)
    nb_obs_t = torch.from_numpy(nb_obs).to(dtype).repeat(k, 1, 1, 1)
    nb_ok_t = torch.from_numpy(nb_ok).repeat(k, 1, 1)
    vel_ok = nb_ok_t[:, 1:] & nb_ok_t[:, :-1]
    nb_vel = (nb_obs_t[:, 1:] - nb_obs_t[:, :-1]) / dt
    nb_vel = nb_vel * vel_ok.unsqueeze(-1)
    return RolloutBatch(
        obs_pos=obs_t,
        nb_obs_pos=nb_obs_t,
        nb_obs_vel=nb_vel,
        nb_obs_vel_ok=vel_ok,
        goal=None if goal is None else torch.from_numpy(goal).to(dtype).repeat(k, 1),
        nb_index=torch.from_numpy(nb_index),
        nb_valid=torch.from_numpy(nb_valid),
        rows=rows,
        k=k,
        dt=dt,
        horizon=horizon,
    )
