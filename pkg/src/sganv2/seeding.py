"""Deterministic derivation of per-purpose random streams from one root seed.

Every source of randomness in the pipeline (world sampling, parameter init,
noise draws, refinement order, ...) pulls its seed from a named stream so
that changing how often one consumer draws never shifts another consumer's
sequence.
"""

import hashlib

import numpy as np
import torch

_MASK_63 = (1 << 63) - 1


def stream_seed(root_seed: int, stream: str) -> int:
    """Derive a stable 63-bit child seed for a named stream.

    The same (root_seed, stream) pair always maps to the same child seed;
    distinct names give statistically independent seeds.
    """
    digest = hashlib.sha256(f"{root_seed}:{stream}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & _MASK_63


def np_rng(root_seed: int, stream: str) -> np.random.Generator:
    """NumPy generator for a named stream."""
    return np.random.default_rng(stream_seed(root_seed, stream))


def torch_generator(root_seed: int, stream: str) -> torch.Generator:
    """CPU torch generator for a named stream."""
    gen = torch.Generator()
    gen.manual_seed(stream_seed(root_seed, stream))
    return gen


def seed_module(module: torch.nn.Module, root_seed: int, stream: str) -> None:
    """Re-draw a module's parameters deterministically from a named stream."""
    gen = torch_generator(root_seed, stream)
    with torch.no_grad():
        for param in module.parameters():
            if param.dim() >= 2:
                torch.nn.init.xavier_uniform_(param, generator=gen)
            else:
                param.uniform_(-0.08, 0.08, generator=gen)
