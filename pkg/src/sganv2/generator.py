"""Recurrent trajectory generator with interaction-aware decoding.

The generator encodes the observed window as a sequence of interaction
embeddings through an LSTM, then unrolls an LSTM cell over the prediction
horizon. Each decoded step re-embeds the current state (velocity,
neighbourhood grid, goal direction), conditions on a noise vector drawn once
per sample, and emits a bivariate Gaussian over the next velocity; the mean
is integrated to produce the next position.

Two rollout regimes share the same decode loop:

- teacher forced (training): neighbours follow their ground-truth tracks;
  only the primary is predicted.
- simultaneous (test): every pedestrian is a batch row and neighbours are
  read from the evolving batch state, so the crowd moves jointly.
"""

from __future__ import annotations

import dataclasses
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from .batching import (
    NeighborFeed,
    RolloutBatch,
    TrainBatch,
    collate_rollout,
    collate_training,
)
from .scenes import HorizonSpec, Scene, ValidationError
from .seeding import torch_generator
from .sim import (
    InteractionEmbedding,
    NumericalError,
    SimConfig,
    directional_grids,
    goal_direction,
)


@dataclasses.dataclass(frozen=True)
class GeneratorConfig:
    hidden_dim: int = 64
    noise_dim: int = 16
    sim: SimConfig = dataclasses.field(default_factory=SimConfig)
    horizon: HorizonSpec = dataclasses.field(default_factory=HorizonSpec)

    def __post_init__(self):
        if self.hidden_dim < 1:
            raise ValidationError("hidden_dim must be >= 1")
        if self.noise_dim < 0:
            raise ValidationError("noise_dim must be >= 0")


@dataclasses.dataclass
class TrajectoryBundle:
    """k sampled futures of one pedestrian.

    positions: (k, t_pred_len, 2) absolute coordinates.
    gaussians: (k, t_pred_len, 5) per-step (mu_x, mu_y, sigma_x, sigma_y, rho),
        None for baselines that do not emit distribution parameters.
    """

    positions: np.ndarray
    gaussians: Optional[np.ndarray] = None

    @property
    def k(self) -> int:
        return self.positions.shape[0]


@dataclasses.dataclass
class SceneForecast:
    """Joint k-sample forecast of a scene.

    predicted maps pedestrian id -> (k, t_pred_len, 2). Sample j of every
    pedestrian belongs to the same joint rollout. Pedestrians whose observed
    track was incomplete are absent.
    """

    scene_id: int
    primary_id: int
    predicted: Dict[int, np.ndarray]
    k: int
    primary_gaussians: Optional[np.ndarray] = None

    @property
    def primary_bundle(self) -> TrajectoryBundle:
        return TrajectoryBundle(
            positions=self.predicted[self.primary_id],
            gaussians=self.primary_gaussians,
        )


def split_gaussian(raw: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Map raw head output (..., 5) to (mu, sigma, rho) with valid ranges."""
    mu = raw[..., 0:2]
    sigma = torch.exp(raw[..., 2:4])
    rho = torch.tanh(raw[..., 4:5])
    return mu, sigma, rho


class TrajectoryGenerator(nn.Module):
    """Interaction-aware LSTM encoder-decoder emitting velocity Gaussians."""

    def __init__(self, cfg: GeneratorConfig, no_interaction: bool = False):
        super().__init__()
        self.cfg = cfg
        self.no_interaction = no_interaction
        self.sim = InteractionEmbedding(cfg.sim)
        self.encoder = nn.LSTM(cfg.sim.step_dim, cfg.hidden_dim, batch_first=True)
        self.decoder = nn.LSTMCell(cfg.sim.step_dim + cfg.noise_dim, cfg.hidden_dim)
        self.head = nn.Linear(cfg.hidden_dim, 5)

    # ---------------------------------------------------------------- embed

    def _grids(self, pos, vel, nb_pos, nb_vel, nb_ok):
        cells = self.cfg.sim.grid_cells_per_side
        if self.no_interaction:
            return torch.zeros(
                pos.shape[0], cells, cells, 2, dtype=pos.dtype, device=pos.device
            )
        return directional_grids(
            pos, vel, nb_pos, nb_vel, nb_ok, cells, self.cfg.sim.cell_resolution
        )

    def _step_embedding(self, pos, vel, nb_pos, nb_vel, nb_ok, goal):
        grid = self._grids(pos, vel, nb_pos, nb_vel, nb_ok)
        goal_dir = None
        if self.cfg.sim.goal_embed_dim:
            if goal is None:
                raise ValidationError("goal-conditioned generator needs goals")
            goal_dir = goal_direction(pos, goal)
        return self.sim.step(vel, grid, goal_dir)

    def _encode_sequence(self, pos, nb_pos, nb_vel, nb_vel_ok, goal, dt):
        """Run the encoder over transitions 1..t_obs-1 of observed tracks.

        pos: (M, t_obs, 2); nb_pos: (M, t_obs, N, 2); nb_vel/nb_vel_ok per
        transition. Returns the final (h, c), each (M, hidden_dim).
        """
        m, t = pos.shape[0], pos.shape[1]
        n = nb_pos.shape[2]
        vel = (pos[:, 1:] - pos[:, :-1]) / dt
        flat = lambda x, d: x.reshape(m * (t - 1), *d)
        grid = self._grids(
            flat(pos[:, 1:], (2,)),
            flat(vel, (2,)),
            flat(nb_pos[:, 1:], (n, 2)),
            flat(nb_vel, (n, 2)),
            flat(nb_vel_ok, (n,)),
        )
        goal_dir = None
        if self.cfg.sim.goal_embed_dim:
            if goal is None:
                raise ValidationError("goal-conditioned generator needs goals")
            goal_dir = goal_direction(
                flat(pos[:, 1:], (2,)), goal.repeat_interleave(t - 1, dim=0)
            )
        steps = self.sim.step(flat(vel, (2,)), grid, goal_dir)
        seq = steps.view(m, t - 1, -1)
        _, (h, c) = self.encoder(seq)
        return h[0], c[0]

    def encode_batch(self, batch: TrainBatch):
        t_obs = batch.horizon.t_obs
        return self._encode_sequence(
            batch.pos[:, :t_obs],
            batch.nb_pos[:, :t_obs],
            batch.nb_vel[:, : t_obs - 1],
            batch.nb_vel_ok[:, : t_obs - 1],
            batch.goal,
            batch.dt,
        )

    def encode_rollout(self, batch: RolloutBatch):
        return self._encode_sequence(
            batch.obs_pos,
            batch.nb_obs_pos,
            batch.nb_obs_vel,
            batch.nb_obs_vel_ok,
            batch.goal,
            batch.dt,
        )

    # --------------------------------------------------------------- decode

    def decode(
        self,
        state: Tuple[torch.Tensor, torch.Tensor],
        z: torch.Tensor,
        pos: torch.Tensor,
        vel: torch.Tensor,
        neighbors: NeighborFeed,
        goal: Optional[torch.Tensor],
        dt: float,
        t_pred_len: Optional[int] = None,
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """Unroll the decoder for t_pred_len steps from the given state.

        state: encoder (h, c), each (M, hidden_dim).
        z: (M, noise_dim), one draw per sample, reused at every step.
        pos, vel: (M, 2) position and velocity at the last observed step.
        neighbors: feed(j, pos, vel) -> neighbour (pos, vel, mask) at the
            time of prediction step j (before the step is taken).

        Returns (positions (M, T, 2), gaussians (M, T, 5)); gaussians hold
        (mu, sigma, rho) in emitted form, not raw head output.
        """
        h, c = state
        steps = t_pred_len if t_pred_len is not None else self.cfg.horizon.t_pred_len
        out_pos: List[torch.Tensor] = []
        out_gauss: List[torch.Tensor] = []
        for j in range(steps):
            nb_pos, nb_vel, nb_ok = neighbors(j, pos, vel)
            s = self._step_embedding(pos, vel, nb_pos, nb_vel, nb_ok, goal)
            h, c = self.decoder(torch.cat([s, z], dim=-1), (h, c))
            raw = self.head(h)
            if not torch.isfinite(raw).all():
                raise NumericalError(f"non-finite decoder output at prediction step {j}")
            mu, sigma, rho = split_gaussian(raw)
            vel = mu
            pos = pos + mu * dt
            out_pos.append(pos)
            out_gauss.append(torch.cat([mu, sigma, rho], dim=-1))
        return torch.stack(out_pos, dim=1), torch.stack(out_gauss, dim=1)

    def forward(self, batch: TrainBatch, z: torch.Tensor, k: int = 1):
        return rollout_teacher_forced(self, batch, z, k)


def _tile(t: Optional[torch.Tensor], k: int) -> Optional[torch.Tensor]:
    if t is None or k == 1:
        return t
    return t.repeat(k, *([1] * (t.dim() - 1)))


def rollout_teacher_forced(
    gen: TrajectoryGenerator, batch: TrainBatch, z: torch.Tensor, k: int = 1
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Predict the primary of each scene with ground-truth neighbours.

    z has shape (k * B, noise_dim), sample-major (k blocks of B rows).
    Returns positions (k * B, t_pred_len, 2) and gaussians (k * B, .., 5).
    """
    t_obs = batch.horizon.t_obs
    h, c = gen.encode_batch(batch)
    h, c = _tile(h, k), _tile(c, k)
    start_pos = _tile(batch.pos[:, t_obs - 1], k)
    start_vel = _tile((batch.pos[:, t_obs - 1] - batch.pos[:, t_obs - 2]) / batch.dt, k)
    goal = _tile(batch.goal, k)
    base_feed = batch.observed_feed()
    if k == 1:
        feed = base_feed
    else:
        def feed(j, pos, vel):
            nb_pos, nb_vel, nb_ok = base_feed(j, pos, vel)
            return _tile(nb_pos, k), _tile(nb_vel, k), _tile(nb_ok, k)
    return gen.decode(
        (h, c), z, start_pos, start_vel, feed, goal, batch.dt,
        batch.horizon.t_pred_len,
    )


def rollout_simultaneous(
    gen: TrajectoryGenerator, batch: RolloutBatch, z: torch.Tensor
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Advance every batch row jointly.

    Returns positions (M, t_pred_len, 2) and gaussians (M, t_pred_len, 5).
    """
    t_obs = batch.horizon.t_obs
    h, c = gen.encode_rollout(batch)
    start_pos = batch.obs_pos[:, t_obs - 1]
    start_vel = (batch.obs_pos[:, t_obs - 1] - batch.obs_pos[:, t_obs - 2]) / batch.dt
    pos, gauss = gen.decode(
        (h, c), z, start_pos, start_vel, batch.neighbor_feed(), batch.goal,
        batch.dt, batch.horizon.t_pred_len,
    )
    return pos, gauss


def forecast_scenes(
    gen: TrajectoryGenerator,
    scenes: Sequence[Scene],
    k: int,
    seed: int,
    horizon: Optional[HorizonSpec] = None,
    batch_scenes: int = 512,
) -> List[SceneForecast]:
    """Simultaneous k-sample forecasts for a list of scenes.

    Noise is drawn from a generator seeded with ``seed``; the same seed and
    scene list reproduce the same forecasts bit for bit.
    """
    horizon = horizon or gen.cfg.horizon
    with_goal = bool(gen.cfg.sim.goal_embed_dim)
    noise = torch_generator(seed, "noise")
    out: List[SceneForecast] = []
    gen.eval()
    with torch.no_grad():
        for lo in range(0, len(scenes), batch_scenes):
            chunk = scenes[lo : lo + batch_scenes]
            batch = collate_rollout(chunk, horizon, k, with_goal)
            m = batch.obs_pos.shape[0]
            z = torch.randn(m, gen.cfg.noise_dim, generator=noise)
            pos, gauss = rollout_simultaneous(gen, batch, z)
            r = batch.rows_per_sample
            pos = pos.view(k, r, horizon.t_pred_len, 2).numpy().astype(np.float64)
            gauss = gauss.view(k, r, horizon.t_pred_len, 5).numpy().astype(np.float64)
            per_scene: Dict[int, Dict[int, np.ndarray]] = {}
            prim_gauss: Dict[int, np.ndarray] = {}
            for row, (si, ped) in enumerate(batch.rows):
                per_scene.setdefault(si, {})[ped] = pos[:, row].copy()
                if ped == chunk[si].primary_id:
                    prim_gauss[si] = gauss[:, row].copy()
            for si, scene in enumerate(chunk):
                out.append(
                    SceneForecast(
                        scene_id=scene.scene_id,
                        primary_id=scene.primary_id,
                        predicted=per_scene[si],
                        k=k,
                        primary_gaussians=prim_gauss.get(si),
                    )
                )
    return out


def predict_k(
    gen: TrajectoryGenerator,
    scene: Scene,
    k: int,
    seed: int,
    teacher_forcing: bool = False,
    horizon: Optional[HorizonSpec] = None,
) -> TrajectoryBundle:
    """k futures for the primary of one scene.

    teacher_forcing=True follows the training regime (ground-truth
    neighbours over the whole horizon; the scene must span it). Otherwise
    all pedestrians are rolled out simultaneously from the observation.
    """
    horizon = horizon or gen.cfg.horizon
    gen.eval()
    if not teacher_forcing:
        forecast = forecast_scenes(gen, [scene], k, seed, horizon)[0]
        return forecast.primary_bundle
    with_goal = bool(gen.cfg.sim.goal_embed_dim)
    batch = collate_training([scene], horizon, with_goal)
    noise = torch_generator(seed, "noise")
    z = torch.randn(k, gen.cfg.noise_dim, generator=noise)
    with torch.no_grad():
        pos, gauss = rollout_teacher_forced(gen, batch, z, k=k)
    return TrajectoryBundle(
        positions=pos.view(k, horizon.t_pred_len, 2).numpy().astype(np.float64),
        gaussians=gauss.view(k, horizon.t_pred_len, 5).numpy().astype(np.float64),
    )
