"""Adversarial training: least-squares GAN with a variety loss and an
optional gradient penalty.

Per batch, one discriminator update is followed by g_steps_per_d_step
generator updates. The generator's samples are teacher forced (ground-truth
neighbours) and only the primary is predicted; the variety loss backs up
through the closest-to-ground-truth sample only, while the adversarial term
covers all samples.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import time
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .batching import TrainBatch, collate_training
from .discriminator import TrajectoryDiscriminator
from .generator import TrajectoryGenerator, forecast_scenes, rollout_teacher_forced
from .metrics import collision_rate
from .scenes import HorizonSpec, Scene, ValidationError
from .seeding import np_rng, stream_seed, torch_generator

OBJECTIVES = ("lsgan", "lsgan+gp")


class TrainingDivergence(RuntimeError):
    """A loss turned non-finite; holds the last finite model state."""

    def __init__(self, message: str, epoch: int, batch_index: int, last_state=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch_index = batch_index
        self.last_state = last_state


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    lr_g: float = 3e-4
    lr_d: float = 1e-3
    epochs: int = 50
    batch_size: int = 32
    variety_k: int = 3
    variety_weight: float = 0.2
    g_steps_per_d_step: int = 2
    objective: str = "lsgan"
    gp_weight: float = 10.0
    seed: int = 0
    lr_step_epochs: Optional[int] = None
    lr_decay: float = 0.1

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValidationError(f"objective must be one of {OBJECTIVES}")
        for name in ("lr_g", "lr_d"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be >= 1")
        if self.variety_k < 1:
            raise ValidationError("variety_k must be >= 1")
        if self.variety_weight < 0 or self.gp_weight < 0:
            raise ValidationError("loss weights must be >= 0")
        if self.g_steps_per_d_step < 1:
            raise ValidationError("g_steps_per_d_step must be >= 1")


# ------------------------------------------------------------------- losses

def generator_adversarial_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    """Least-squares generator loss, 0.5 * E[(D(fake) - 1)^2]."""
    return 0.5 * ((fake_scores - 1.0) ** 2).mean()


def discriminator_adversarial_loss(
    real_scores: torch.Tensor, fake_scores: torch.Tensor
) -> torch.Tensor:
    """Least-squares discriminator loss,
    0.5 * E[(D(real) - 1)^2] + 0.5 * E[D(fake)^2]."""
    return 0.5 * ((real_scores - 1.0) ** 2).mean() + 0.5 * (fake_scores ** 2).mean()


def variety_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Minimum-over-samples summed squared error.

    pred: (k, B, T, 2) sampled futures; gt: (B, T, 2). For each scene only
    the closest sample contributes, so gradients reach that sample alone.
    """
    dist = ((pred - gt.unsqueeze(0)) ** 2).sum(dim=(-1, -2))  # (k, B)
    return dist.min(dim=0).values.mean()


def gradient_penalty(
    score_fn: Callable[[torch.Tensor], torch.Tensor],
    real: torch.Tensor,
    fake: torch.Tensor,
    rng: torch.Generator,
) -> torch.Tensor:
    """Two-sided gradient penalty on interpolated primary futures.

    score_fn maps a (B, T, 2) future to (B,) scores. Interpolation draws one
    uniform weight per scene; the penalty is E[(|grad| - 1)^2].
    """
    eps = torch.rand(real.shape[0], 1, 1, generator=rng, dtype=real.dtype)
    mixed = (eps * real + (1.0 - eps) * fake).requires_grad_(True)
    scores = score_fn(mixed)
    grads = torch.autograd.grad(
        scores.sum(), mixed, create_graph=True, retain_graph=True
    )[0]
    norms = grads.reshape(grads.shape[0], -1).norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()


# ---------------------------------------------------------------------- log

@dataclasses.dataclass
class TrainingLog:
    """Per-epoch scalar history, one JSON object per epoch when saved."""

    entries: List[dict] = dataclasses.field(default_factory=list)

    def append(self, **kwargs) -> dict:
        self.entries.append(dict(kwargs))
        return self.entries[-1]

    def save_jsonl(self, path) -> None:
        with open(path, "w") as handle:
            for entry in self.entries:
                handle.write(json.dumps(entry, sort_keys=True) + "\n")

    @classmethod
    def load_jsonl(cls, path) -> "TrainingLog":
        entries = []
        with open(path) as handle:
            for line in handle:
                line = line.strip()
                if line:
                    entries.append(json.loads(line))
        return cls(entries=entries)


# --------------------------------------------------------------------- loop

def _score_full(disc, batch: TrainBatch, future: torch.Tensor) -> torch.Tensor:
    t_obs = batch.horizon.t_obs
    full = torch.cat([batch.pos[:, :t_obs], future], dim=1)
    return disc.score(
        full, batch.nb_pos, batch.nb_vel, batch.nb_vel_ok, batch.goal, batch.dt
    )


def _tile_batch(batch: TrainBatch, k: int) -> TrainBatch:
    if k == 1:
        return batch
    rep = lambda t: None if t is None else t.repeat(k, *([1] * (t.dim() - 1)))
    return TrainBatch(
        pos=rep(batch.pos),
        nb_pos=rep(batch.nb_pos),
        nb_ok=rep(batch.nb_ok),
        nb_vel=rep(batch.nb_vel),
        nb_vel_ok=rep(batch.nb_vel_ok),
        goal=rep(batch.goal),
        dt=batch.dt,
        horizon=batch.horizon,
    )


def train(
    scenes: Sequence[Scene],
    gen: TrajectoryGenerator,
    disc: TrajectoryDiscriminator,
    cfg: TrainConfig,
    horizon: Optional[HorizonSpec] = None,
    val_scenes: Sequence[Scene] = (),
    epoch_callback: Optional[Callable[[int, dict, dict], None]] = None,
    log: Optional[TrainingLog] = None,
    start_epoch: int = 0,
    optimizers: Optional[Tuple[torch.optim.Optimizer, torch.optim.Optimizer]] = None,
    rng_states: Optional[dict] = None,
) -> Tuple[TrainingLog, torch.optim.Optimizer, torch.optim.Optimizer]:
    """Train the pair in place; returns the log and both optimizers.

    Deterministic in (scenes, initial parameters, cfg.seed): batch order,
    noise and gradient-penalty draws come from named streams of cfg.seed.
    Resuming from a checkpoint passes start_epoch, optimizers and rng_states.

    Raises TrainingDivergence (carrying the last finite state dicts) when a
    loss or update turns non-finite.
    """
    if not scenes:
        raise ValidationError("no training scenes")
    horizon = horizon or gen.cfg.horizon
    with_goal = bool(gen.cfg.sim.goal_embed_dim)
    opt_g, opt_d = optimizers or (
        torch.optim.Adam(gen.parameters(), lr=cfg.lr_g),
        torch.optim.Adam(disc.parameters(), lr=cfg.lr_d),
    )
    order_rng = np_rng(cfg.seed, "order")
    noise_gen = torch_generator(cfg.seed, "noise")
    gp_gen = torch_generator(cfg.seed, "gp")
    if rng_states is not None:
        order_rng.bit_generator.state = rng_states["order"]
        noise_gen.set_state(rng_states["noise"])
        gp_gen.set_state(rng_states["gp"])
    val_seed = stream_seed(cfg.seed, "val-noise")
    log = log if log is not None else TrainingLog()

    def stream_states() -> dict:
        return {
            "order": order_rng.bit_generator.state,
            "noise": noise_gen.get_state(),
            "gp": gp_gen.get_state(),
        }

    arrays = [s for s in scenes]  # stable ordering
    n = len(arrays)
    zdim = gen.cfg.noise_dim
    last_state = None
    for epoch in range(start_epoch + 1, cfg.epochs + 1):
        t0 = time.perf_counter()
        gen.train()
        disc.train()
        if cfg.lr_step_epochs:
            decays = (epoch - 1) // cfg.lr_step_epochs
            for opt, base in ((opt_g, cfg.lr_g), (opt_d, cfg.lr_d)):
                for group in opt.param_groups:
                    group["lr"] = base * (cfg.lr_decay ** decays)
        perm = order_rng.permutation(n)
        sums = {"d_loss": 0.0, "g_adv": 0.0, "variety": 0.0,
                "d_real": 0.0, "d_fake": 0.0, "gp": 0.0}
        n_batches = 0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            batch = collate_training([arrays[i] for i in idx], horizon, with_goal)
            b = batch.size
            t_obs = horizon.t_obs
            gt_future = batch.pos[:, t_obs:]

            # discriminator update
            with torch.no_grad():
                z = torch.randn(b, zdim, generator=noise_gen)
                fake, _ = rollout_teacher_forced(gen, batch, z)
            d_real = _score_full(disc, batch, gt_future)
            d_fake = _score_full(disc, batch, fake)
            d_loss = discriminator_adversarial_loss(d_real, d_fake)
            gp_value = 0.0
            if cfg.objective == "lsgan+gp":
                gp = gradient_penalty(
                    lambda y: _score_full(disc, batch, y), gt_future, fake, gp_gen
                )
                gp_value = float(gp.detach())
                d_loss = d_loss + cfg.gp_weight * gp
            if not torch.isfinite(d_loss.detach()):
                raise TrainingDivergence(
                    f"discriminator loss non-finite at epoch {epoch}",
                    epoch, n_batches, last_state,
                )
            opt_d.zero_grad(set_to_none=True)
            d_loss.backward()
            opt_d.step()

            # generator updates
            k = cfg.variety_k
            tiled = _tile_batch(batch, k)
            g_adv_val = variety_val = 0.0
            for _ in range(cfg.g_steps_per_d_step):
                z = torch.randn(k * b, zdim, generator=noise_gen)
                fake_k, _ = rollout_teacher_forced(gen, batch, z, k=k)
                scores = _score_full(disc, tiled, fake_k)
                g_adv = generator_adversarial_loss(scores)
                variety = variety_loss(
                    fake_k.view(k, b, horizon.t_pred_len, 2), gt_future
                )
                g_loss = g_adv + cfg.variety_weight * variety
                if not torch.isfinite(g_loss.detach()):
                    raise TrainingDivergence(
                        f"generator loss non-finite at epoch {epoch}",
                        epoch, n_batches, last_state,
                    )
                opt_g.zero_grad(set_to_none=True)
                g_loss.backward()
                opt_g.step()
                g_adv_val = float(g_adv.detach())
                variety_val = float(variety.detach())

            sums["d_loss"] += float(d_loss.detach())
            sums["g_adv"] += g_adv_val
            sums["variety"] += variety_val
            sums["d_real"] += float(d_real.detach().mean())
            sums["d_fake"] += float(d_fake.detach().mean())
            sums["gp"] += gp_value
            n_batches += 1

        entry = {
            "epoch": epoch,
            "g_loss": sums["g_adv"] / n_batches,
            "d_loss": sums["d_loss"] / n_batches,
            "variety": sums["variety"] / n_batches,
            "d_real_mean": sums["d_real"] / n_batches,
            "d_fake_mean": sums["d_fake"] / n_batches,
            "lr_g": opt_g.param_groups[0]["lr"],
            "lr_d": opt_d.param_groups[0]["lr"],
            "seconds": round(time.perf_counter() - t0, 3),
        }
        if cfg.objective == "lsgan+gp":
            entry["gp"] = sums["gp"] / n_batches
        if val_scenes:
            forecasts = forecast_scenes(gen, val_scenes, 1, val_seed, horizon)
            entry["val_col"] = collision_rate(val_scenes, forecasts, horizon)
        log.append(**entry)
        last_state = {
            "gen": copy.deepcopy(gen.state_dict()),
            "disc": copy.deepcopy(disc.state_dict()),
            "epoch": epoch,
        }
        if epoch_callback is not None:
            epoch_callback(
                epoch, entry,
                {"opt_g": opt_g, "opt_d": opt_d, "rng_states": stream_states()},
            )
    return log, opt_g, opt_d
