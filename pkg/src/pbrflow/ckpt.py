"""Deterministic checkpoint serialization.

Checkpoints are pickled dicts whose tensor leaves are converted to numpy
arrays.  Unlike ``torch.save``/``np.savez`` (zip containers with timestamps),
a plain pickle of the same data is byte-identical across runs, which the
reproducibility contract relies on.
"""
from __future__ import annotations

import pickle
from pathlib import Path
from typing import Any

import numpy as np
import torch

FORMAT_VERSION = 1


def _to_plain(obj: Any) -> Any:
    if isinstance(obj, torch.Tensor):
        return obj.detach().cpu().contiguous().numpy()
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        converted = [_to_plain(v) for v in obj]
        return type(obj)(converted) if isinstance(obj, tuple) else converted
    return obj


def state_dict_to_numpy(module: torch.nn.Module) -> dict:
    return {k: v.detach().cpu().contiguous().numpy() for k, v in module.state_dict().items()}


def load_state_dict_from_numpy(module: torch.nn.Module, state: dict) -> None:
    tensors = {k: torch.from_numpy(np.ascontiguousarray(v)) for k, v in state.items()}
    module.load_state_dict(tensors)


def save_checkpoint(path: str | Path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    record = {"format_version": FORMAT_VERSION}
    record.update(_to_plain(payload))
    with open(path, "wb") as fh:
        pickle.dump(record, fh, protocol=4)


def load_checkpoint(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        record = pickle.load(fh)
    if record.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format in {path}")
    return record
