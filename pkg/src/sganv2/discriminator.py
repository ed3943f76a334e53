"""Spatio-temporal trajectory discriminator.

The discriminator consumes the same per-step interaction embeddings as the
generator (its own parameters), projected to the model width, and scores a
whole trajectory with either a small transformer encoder (default) or an
LSTM (recurrent variant). It never sees absolute coordinates, only
velocities, relative-neighbour grids and the goal direction, so scores are
translation invariant.

A trajectory spanning T steps yields T - 1 embedded transitions; the score
is read from the last sequence element (transformer) or the final hidden
state (recurrent) through a small MLP.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional, Sequence, Tuple

import torch
import torch.nn as nn

from .scenes import HorizonSpec, ValidationError
from .sim import (
    InteractionEmbedding,
    SimConfig,
    goal_direction,
    sequence_grids,
)

VARIANTS = ("transformer", "recurrent")


@dataclasses.dataclass(frozen=True)
class DiscriminatorConfig:
    n_layers: int = 4
    model_dim: int = 64
    ffn_dim: int = 64
    sim: SimConfig = dataclasses.field(default_factory=SimConfig)
    variant: str = "transformer"
    score_head_dims: Tuple[int, ...] = (64,)
    max_seq_len: int = 64

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"variant must be one of {VARIANTS}")
        if self.n_layers < 1 or self.model_dim < 1 or self.ffn_dim < 1:
            raise ValidationError("n_layers, model_dim and ffn_dim must be >= 1")
        if self.max_seq_len < 2:
            raise ValidationError("max_seq_len must be >= 2")


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Scaled dot-product attention, softmax over the key axis.

    q, k, v: (..., L, d). Each output row is a convex combination of the
    value rows.
    """
    d = q.shape[-1]
    weights = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(d), dim=-1)
    return weights @ v


class EncoderLayer(nn.Module):
    """Single-head post-norm transformer block: attention and feedforward,
    each wrapped in residual + layer norm."""

    def __init__(self, model_dim: int, ffn_dim: int):
        super().__init__()
        self.q = nn.Linear(model_dim, model_dim)
        self.k = nn.Linear(model_dim, model_dim)
        self.v = nn.Linear(model_dim, model_dim)
        self.norm1 = nn.LayerNorm(model_dim)
        self.norm2 = nn.LayerNorm(model_dim)
        self.ffn_in = nn.Linear(model_dim, ffn_dim)
        self.ffn_out = nn.Linear(ffn_dim, model_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        attended = attention(self.q(x), self.k(x), self.v(x))
        x = self.norm1(x + attended)
        fed = self.ffn_out(torch.relu(self.ffn_in(x)))
        return self.norm2(x + fed)


class TrajectoryDiscriminator(nn.Module):
    """Scores trajectories embedded as interaction-step sequences."""

    def __init__(self, cfg: DiscriminatorConfig, no_interaction: bool = False):
        super().__init__()
        self.cfg = cfg
        self.no_interaction = no_interaction
        self.sim = InteractionEmbedding(cfg.sim)
        self.input_proj = nn.Linear(cfg.sim.step_dim, cfg.model_dim)
        if cfg.variant == "transformer":
            self.pos_embed = nn.Parameter(
                torch.randn(cfg.max_seq_len, cfg.model_dim) * 0.02
            )
            self.layers = nn.ModuleList(
                EncoderLayer(cfg.model_dim, cfg.ffn_dim) for _ in range(cfg.n_layers)
            )
            self.recurrent = None
        else:
            self.pos_embed = None
            self.layers = None
            self.recurrent = nn.LSTM(cfg.model_dim, cfg.model_dim, batch_first=True)
        head: list = []
        width = cfg.model_dim
        for hidden in cfg.score_head_dims:
            head += [nn.Linear(width, hidden), nn.ReLU()]
            width = hidden
        head.append(nn.Linear(width, 1))
        self.score_head = nn.Sequential(*head)

    def stack_sequence(
        self,
        pos: torch.Tensor,
        nb_pos: torch.Tensor,
        nb_vel: torch.Tensor,
        nb_vel_ok: torch.Tensor,
        goal: Optional[torch.Tensor],
        dt: float,
    ) -> torch.Tensor:
        """Embed a batch of trajectories into (B, T-1, model_dim).

        pos: (B, T, 2) positions over the full horizon (observed + future,
        ground truth or predicted). nb_*: teacher-forced neighbour tensors
        as produced by the batching helpers. Gradients flow back to ``pos``
        through velocities, relative grid velocities and goal directions.
        """
        b, t = pos.shape[0], pos.shape[1]
        if t < 2:
            raise ValidationError("need at least two steps to embed a trajectory")
        if t - 1 > self.cfg.max_seq_len:
            raise ValidationError(
                f"sequence length {t - 1} exceeds max_seq_len {self.cfg.max_seq_len}"
            )
        vel = (pos[:, 1:] - pos[:, :-1]) / dt
        cells = self.cfg.sim.grid_cells_per_side
        if self.no_interaction:
            grids = torch.zeros(
                b, t - 1, cells, cells, 2, dtype=pos.dtype, device=pos.device
            )
        else:
            grids = sequence_grids(
                pos, nb_pos, nb_vel, nb_vel_ok, dt, cells,
                self.cfg.sim.cell_resolution,
            )
        goal_dir = None
        if self.cfg.sim.goal_embed_dim:
            if goal is None:
                raise ValidationError("goal-conditioned discriminator needs goals")
            goal_dir = goal_direction(pos[:, 1:], goal.unsqueeze(1))
        steps = self.sim.step(vel, grids, goal_dir)
        return self.input_proj(steps)

    def _transformer_score(self, seq: torch.Tensor) -> torch.Tensor:
        length = seq.shape[1]
        x = seq + self.pos_embed[:length]
        for layer in self.layers:
            x = layer(x)
        return self.score_head(x[:, -1]).squeeze(-1)

    def _recurrent_score(self, seq: torch.Tensor) -> torch.Tensor:
        _, (h, _) = self.recurrent(seq)
        return self.score_head(h[0]).squeeze(-1)

    def score(
        self,
        pos: torch.Tensor,
        nb_pos: torch.Tensor,
        nb_vel: torch.Tensor,
        nb_vel_ok: torch.Tensor,
        goal: Optional[torch.Tensor],
        dt: float,
    ) -> torch.Tensor:
        """Realism score per trajectory, shape (B,). Higher is more real."""
        seq = self.stack_sequence(pos, nb_pos, nb_vel, nb_vel_ok, goal, dt)
        if self.cfg.variant == "transformer":
            return self._transformer_score(seq)
        return self._recurrent_score(seq)

    def score_recurrent(self, pos, nb_pos, nb_vel, nb_vel_ok, goal, dt) -> torch.Tensor:
        """Recurrent-variant scoring; requires variant='recurrent'."""
        if self.recurrent is None:
            raise ValidationError("score_recurrent needs the recurrent variant")
        seq = self.stack_sequence(pos, nb_pos, nb_vel, nb_vel_ok, goal, dt)
        return self._recurrent_score(seq)
