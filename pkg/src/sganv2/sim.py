"""Spatio-temporal interaction embedding shared by generator and discriminator.

Each pedestrian-step is summarised by the concatenation of a motion
embedding (its velocity through a linear layer + ReLU), an interaction
embedding (a directional occupancy grid of relative neighbour velocities,
flattened through a linear layer + ReLU) and, when configured, a
goal-direction embedding. The two networks hold separate instances, so their
interaction parameters never share gradients.

The directional grid covers a square neighbourhood centred on the pedestrian
(grid_cells_per_side x grid_cells_per_side cells of cell_resolution meters);
each cell accumulates the sum of (neighbour velocity - own velocity) over
the neighbours whose relative position falls inside it. Cell assignment is
a hard binning and is excluded from backprop; the accumulated velocities are
not, so gradients flow to both trajectories through the velocity channel.
"""

from __future__ import annotations

import dataclasses
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from .scenes import Scene, ValidationError


class NumericalError(RuntimeError):
    """Non-finite values entered or left a network component."""


@dataclasses.dataclass(frozen=True)
class SimConfig:
    motion_embed_dim: int = 16
    interaction_dim: int = 64
    grid_cells_per_side: int = 12
    cell_resolution: float = 0.6
    goal_embed_dim: Optional[int] = None

    def __post_init__(self):
        if self.motion_embed_dim < 1 or self.interaction_dim < 1:
            raise ValidationError("embedding dims must be >= 1")
        if self.grid_cells_per_side < 1:
            raise ValidationError("grid_cells_per_side must be >= 1")
        if not self.cell_resolution > 0:
            raise ValidationError("cell_resolution must be > 0")
        if self.goal_embed_dim is not None and self.goal_embed_dim < 1:
            raise ValidationError("goal_embed_dim must be >= 1 when set")

    @property
    def grid_flat_dim(self) -> int:
        return self.grid_cells_per_side * self.grid_cells_per_side * 2

    @property
    def step_dim(self) -> int:
        return (
            self.motion_embed_dim
            + self.interaction_dim
            + (self.goal_embed_dim or 0)
        )


def directional_grids(
    center_pos: torch.Tensor,
    center_vel: torch.Tensor,
    neighbor_pos: torch.Tensor,
    neighbor_vel: torch.Tensor,
    neighbor_mask: torch.Tensor,
    cells: int,
    resolution: float,
) -> torch.Tensor:
    """Directional occupancy grids for a batch of center pedestrians.

    Parameters
    ----------
    center_pos, center_vel : (M, 2)
    neighbor_pos, neighbor_vel : (M, N, 2)
    neighbor_mask : (M, N) bool
        False entries are ignored (absent neighbours).
    cells : int
    resolution : float

    Returns
    -------
    (M, cells, cells, 2) tensor. Cell [ix, iy] holds the summed relative
    velocity of the masked-in neighbours whose relative position lands in
    that cell; neighbours outside the grid extent are dropped. The bin
    assignment uses detached positions, so no gradient flows through it.
    """
    m, n = neighbor_pos.shape[0], neighbor_pos.shape[1]
    dtype = center_pos.dtype
    flat = torch.zeros(m * cells * cells, 2, dtype=dtype)
    if n == 0:
        return flat.view(m, cells, cells, 2)
    rel = neighbor_pos.detach() - center_pos.detach().unsqueeze(1)
    half_side = cells * resolution / 2.0
    idx = torch.floor((rel + half_side) / resolution).long()
    in_range = ((idx >= 0) & (idx < cells)).all(dim=-1)
    finite = torch.isfinite(rel).all(dim=-1)
    valid = neighbor_mask & in_range & finite
    if valid.any():
        rel_vel = neighbor_vel - center_vel.unsqueeze(1)
        rows = torch.arange(m).unsqueeze(1).expand(m, n)
        lin = (rows * cells + idx[..., 0]) * cells + idx[..., 1]
        flat = flat.index_add(0, lin[valid], rel_vel[valid])
    return flat.view(m, cells, cells, 2)


def directional_grid(
    primary_pos,
    primary_vel,
    neighbor_pos,
    neighbor_vel,
    cells: int,
    resolution: float,
) -> torch.Tensor:
    """Single-pedestrian convenience wrapper around directional_grids.

    neighbor_pos / neighbor_vel are (N, 2); returns (cells, cells, 2).
    """
    center_pos = torch.as_tensor(primary_pos, dtype=torch.float64).view(1, 2)
    center_vel = torch.as_tensor(primary_vel, dtype=torch.float64).view(1, 2)
    nb_pos = torch.as_tensor(neighbor_pos, dtype=torch.float64).view(1, -1, 2)
    nb_vel = torch.as_tensor(neighbor_vel, dtype=torch.float64).view(1, -1, 2)
    mask = torch.ones(1, nb_pos.shape[1], dtype=torch.bool)
    return directional_grids(
        center_pos, center_vel, nb_pos, nb_vel, mask, cells, resolution
    )[0]


def sequence_grids(
    pos: torch.Tensor,
    neighbor_pos: torch.Tensor,
    neighbor_vel: torch.Tensor,
    neighbor_vel_mask: torch.Tensor,
    dt: float,
    cells: int,
    resolution: float,
) -> torch.Tensor:
    """Grids for every transition of a batch of tracks, in one shot.

    Parameters
    ----------
    pos : (B, T, 2) center positions
    neighbor_pos : (B, T, N, 2)
    neighbor_vel : (B, T-1, N, 2)
        neighbor_vel[:, j] is the neighbour velocity over transition j, i.e.
        at the same time index as pos[:, j+1].
    neighbor_vel_mask : (B, T-1, N) bool
    dt : float

    Returns
    -------
    (B, T-1, cells, cells, 2): entry [:, j] is the grid centred at
    pos[:, j+1] with center velocity (pos[:, j+1] - pos[:, j]) / dt.
    """
    b, t = pos.shape[0], pos.shape[1]
    vel = (pos[:, 1:] - pos[:, :-1]) / dt
    n = neighbor_pos.shape[2]
    grids = directional_grids(
        pos[:, 1:].reshape(b * (t - 1), 2),
        vel.reshape(b * (t - 1), 2),
        neighbor_pos[:, 1:].reshape(b * (t - 1), n, 2),
        neighbor_vel.reshape(b * (t - 1), n, 2),
        neighbor_vel_mask.reshape(b * (t - 1), n),
        cells,
        resolution,
    )
    return grids.view(b, t - 1, cells, cells, 2)


def goal_direction(pos: torch.Tensor, goal: torch.Tensor, eps: float = 1e-9) -> torch.Tensor:
    """Unit vector from pos toward goal, zero when already at the goal."""
    diff = goal - pos
    norm = diff.norm(dim=-1, keepdim=True)
    return torch.where(norm > eps, diff / norm.clamp_min(eps), torch.zeros_like(diff))


class InteractionEmbedding(nn.Module):
    """Per-step embedding [motion ; interaction ; goal?] of one pedestrian."""

    def __init__(self, cfg: SimConfig):
        super().__init__()
        self.cfg = cfg
        self.motion_fc = nn.Linear(2, cfg.motion_embed_dim)
        self.interaction_fc = nn.Linear(cfg.grid_flat_dim, cfg.interaction_dim)
        self.goal_fc = (
            nn.Linear(2, cfg.goal_embed_dim) if cfg.goal_embed_dim else None
        )

    def embed_motion(self, vel: torch.Tensor) -> torch.Tensor:
        if not torch.isfinite(vel).all():
            raise NumericalError("non-finite velocity fed to motion embedding")
        return torch.relu(self.motion_fc(vel))

    def embed_interaction(self, grid: torch.Tensor) -> torch.Tensor:
        cells = self.cfg.grid_cells_per_side
        if grid.shape[-3:] != (cells, cells, 2):
            raise ValidationError(
                f"grid shape {tuple(grid.shape)} does not match "
                f"({cells}, {cells}, 2)"
            )
        flat = grid.reshape(*grid.shape[:-3], self.cfg.grid_flat_dim)
        return torch.relu(self.interaction_fc(flat))

    def embed_goal(self, goal_dir: torch.Tensor) -> torch.Tensor:
        if self.goal_fc is None:
            raise ValidationError("goal embedding requested but goal_embed_dim unset")
        return torch.relu(self.goal_fc(goal_dir))

    def step(
        self,
        vel: torch.Tensor,
        grid: torch.Tensor,
        goal_dir: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        """Concatenated step embedding; shape (..., step_dim)."""
        parts = [self.embed_motion(vel), self.embed_interaction(grid)]
        if self.goal_fc is not None:
            if goal_dir is None:
                raise ValidationError("goal-conditioned embedding needs goal_dir")
            parts.append(self.embed_goal(goal_dir))
        return torch.cat(parts, dim=-1)


def sim_step(
    sim: InteractionEmbedding, scene: Scene, t: int, ped_id: int
) -> torch.Tensor:
    """Step embedding of pedestrian ped_id at step t of a scene.

    t indexes recorded steps (0-based) and must be >= 1 so a velocity
    exists. Neighbours missing a position at t or t-1 are dropped from the
    grid. Returns a (step_dim,) tensor in the module's parameter dtype.
    """
    if t < 1 or t >= scene.n_steps:
        raise ValidationError(f"step {t} out of range for velocity at scene length {scene.n_steps}")
    dtype = next(sim.parameters()).dtype
    track = scene.pedestrians[ped_id]
    pos = torch.as_tensor(track[t], dtype=dtype)
    vel = torch.as_tensor((track[t] - track[t - 1]) / scene.dt, dtype=dtype)
    nb_ids = [p for p in scene.pedestrians if p != ped_id]
    nb_pos, nb_vel = [], []
    for nb in nb_ids:
        tr = scene.pedestrians[nb]
        if np.isnan(tr[t]).any() or np.isnan(tr[t - 1]).any():
            continue
        nb_pos.append(tr[t])
        nb_vel.append((tr[t] - tr[t - 1]) / scene.dt)
    cells, res = sim.cfg.grid_cells_per_side, sim.cfg.cell_resolution
    if nb_pos:
        grid = directional_grids(
            pos.view(1, 2),
            vel.view(1, 2),
            torch.as_tensor(np.array(nb_pos), dtype=dtype).view(1, -1, 2),
            torch.as_tensor(np.array(nb_vel), dtype=dtype).view(1, -1, 2),
            torch.ones(1, len(nb_pos), dtype=torch.bool),
            cells,
            res,
        )[0]
    else:
        grid = torch.zeros(cells, cells, 2, dtype=dtype)
    goal_dir = None
    if sim.cfg.goal_embed_dim:
        goal = scene.goal_of(ped_id)
        if goal is None:
            raise ValidationError(f"pedestrian {ped_id} has no goal but the embedding is goal-conditioned")
        goal_dir = goal_direction(pos, torch.as_tensor(goal, dtype=dtype))
    return sim.step(vel.view(1, 2), grid.unsqueeze(0), None if goal_dir is None else goal_dir.view(1, 2))[0]
