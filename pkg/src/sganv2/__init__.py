"""Socially-aware GAN trajectory forecasting with test-time refinement."""

from .scenes import HorizonSpec, Scene, load_scenes, save_scenes, split_scene
from .synth import WorldConfig, generate_dataset, generate_forking_scene, generate_scene
from .sim import InteractionEmbedding, SimConfig, directional_grid
from .generator import (
    GeneratorConfig,
    SceneForecast,
    TrajectoryBundle,
    TrajectoryGenerator,
    forecast_scenes,
    predict_k,
)
from .discriminator import DiscriminatorConfig, TrajectoryDiscriminator, attention
from .training import TrainConfig, TrainingLog, train
from .refine import RefineConfig, refine, refine_forecasts
from .metrics import MetricsReport, collision_rate, evaluate_forecasts, min_separation
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config

__version__ = "0.1.0"
