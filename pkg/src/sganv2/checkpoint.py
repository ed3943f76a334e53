"""Single-file checkpoint container.

Layout: an 8-byte magic, a little-endian uint32 header length, a UTF-8 JSON
header, then raw little-endian float32 blocks back to back. The header
carries the format version, the experiment config snapshot, the epoch
counter, optimizer scalar state, RNG stream states, and a manifest of the
blocks (name, shape, byte offset) in file order.

Blocks store every entry of the generator/discriminator state dicts and the
Adam moment tensors, so training resumes exactly and evaluation can verify
horizon compatibility before loading weights.
"""

from __future__ import annotations

import base64
import dataclasses
import json
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch

MAGIC = b"SG2CKPT\x00"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Unreadable, truncated or incompatible checkpoint file."""


@dataclasses.dataclass
class Checkpoint:
    header: dict
    blocks: Dict[str, np.ndarray]

    @property
    def epoch(self) -> int:
        return self.header["epoch"]

    @property
    def config(self) -> dict:
        return self.header["config"]

    def state_dict(self, prefix: str) -> Dict[str, torch.Tensor]:
        """Reassemble a module state dict from blocks named prefix/name."""
        shapes = self.header["tensor_shapes"]
        out = {}
        for name, array in self.blocks.items():
            if name.startswith(prefix + "/"):
                key = name[len(prefix) + 1:]
                out[key] = torch.from_numpy(
                    array.reshape(shapes[name]).copy()
                )
        return out


def _flatten_state(prefix: str, state: Dict[str, torch.Tensor]):
    for key, tensor in state.items():
        yield f"{prefix}/{key}", tensor.detach().to(torch.float32).numpy()


def _optimizer_blocks(prefix: str, opt: torch.optim.Optimizer):
    scalars: Dict[str, float] = {}
    blocks = []
    state = opt.state_dict()
    for idx, entry in state["state"].items():
        for key, value in entry.items():
            name = f"{prefix}/{idx}/{key}"
            if isinstance(value, torch.Tensor) and value.dim() > 0:
                blocks.append((name, value.detach().to(torch.float32).numpy()))
            else:
                scalars[name] = float(value)
    return blocks, scalars, state["param_groups"]


def save_checkpoint(
    path,
    *,
    config: dict,
    epoch: int,
    gen: torch.nn.Module,
    disc: torch.nn.Module,
    opt_g: Optional[torch.optim.Optimizer] = None,
    opt_d: Optional[torch.optim.Optimizer] = None,
    rng_states: Optional[dict] = None,
    extra: Optional[dict] = None,
) -> None:
    """Write models (and optionally optimizer + RNG state) to one file."""
    blocks: List[Tuple[str, np.ndarray]] = []
    blocks += list(_flatten_state("gen", gen.state_dict()))
    blocks += list(_flatten_state("disc", disc.state_dict()))
    opt_scalars: Dict[str, float] = {}
    param_groups: Dict[str, list] = {}
    for prefix, opt in (("opt_g", opt_g), ("opt_d", opt_d)):
        if opt is None:
            continue
        opt_blocks, scalars, groups = _optimizer_blocks(prefix, opt)
        blocks += opt_blocks
        opt_scalars.update(scalars)
        param_groups[prefix] = groups

    manifest = []
    offset = 0
    shapes = {}
    for name, array in blocks:
        manifest.append({"name": name, "bytes": int(array.nbytes), "offset": offset})
        shapes[name] = list(array.shape)
        offset += array.nbytes

    header = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "epoch": int(epoch),
        "blocks": manifest,
        "tensor_shapes": shapes,
        "optimizer_scalars": opt_scalars,
        "param_groups": param_groups,
        "extra": extra or {},
    }
    if rng_states is not None:
        header["rng"] = _encode_rng(rng_states)
    payload = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(np.uint32(len(payload)).tobytes())
        handle.write(payload)
        for _, array in blocks:
            handle.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def _encode_rng(rng_states: dict) -> dict:
    out = {}
    for name, state in rng_states.items():
        if isinstance(state, torch.Tensor):
            out[name] = {
                "kind": "torch",
                "data": base64.b64encode(state.numpy().tobytes()).decode(),
            }
        else:
            out[name] = {"kind": "numpy", "data": state}
    return out


def decode_rng(header: dict) -> dict:
    """Invert _encode_rng; torch states come back as uint8 tensors."""
    out = {}
    for name, entry in header.get("rng", {}).items():
        if entry["kind"] == "torch":
            raw = base64.b64decode(entry["data"])
            out[name] = torch.from_numpy(
                np.frombuffer(raw, dtype=np.uint8).copy()
            )
        else:
            out[name] = entry["data"]
    return out


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint; raises CheckpointError on malformed files."""
    with open(path, "rb") as handle:
        magic = handle.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        raw_len = handle.read(4)
        if len(raw_len) != 4:
            raise CheckpointError(f"{path}: truncated header length")
        header_len = int(np.frombuffer(raw_len, dtype="<u4")[0])
        payload = handle.read(header_len)
        if len(payload) != header_len:
            raise CheckpointError(f"{path}: truncated header")
        try:
            header = json.loads(payload.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as err:
            raise CheckpointError(f"{path}: unreadable header ({err})") from err
        version = header.get("format_version")
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: format version {version} unsupported "
                f"(expected {FORMAT_VERSION})"
            )
        body = handle.read()
    blocks = {}
    for entry in header["blocks"]:
        lo, n = entry["offset"], entry["bytes"]
        chunk = body[lo : lo + n]
        if len(chunk) != n:
            raise CheckpointError(f"{path}: truncated block {entry['name']}")
        blocks[entry["name"]] = np.frombuffer(chunk, dtype="<f4")
    return Checkpoint(header=header, blocks=blocks)


def restore_optimizer(
    opt: torch.optim.Optimizer, ckpt: Checkpoint, prefix: str
) -> None:
    """Load Adam state saved under prefix into a freshly built optimizer."""
    groups = ckpt.header["param_groups"].get(prefix)
    if groups is None:
        raise CheckpointError(f"checkpoint has no optimizer state {prefix!r}")
    # JSON loses tuples; betas must come back as a tuple to match torch
    groups = [
        {k: tuple(v) if k == "betas" else v for k, v in group.items()}
        for group in groups
    ]
    shapes = ckpt.header["tensor_shapes"]
    state: Dict[int, dict] = {}
    for name, value in ckpt.header["optimizer_scalars"].items():
        if not name.startswith(prefix + "/"):
            continue
        _, idx, key = name.split("/", 2)
        entry = state.setdefault(int(idx), {})
        entry[key] = torch.tensor(value)
    for name, array in ckpt.blocks.items():
        if not name.startswith(prefix + "/"):
            continue
        _, idx, key = name.split("/", 2)
        entry = state.setdefault(int(idx), {})
        entry[key] = torch.from_numpy(array.reshape(shapes[name]).copy())
    loaded = opt.state_dict()
    loaded["state"] = state
    loaded["param_groups"] = groups
    opt.load_state_dict(loaded)
