"""Versioned, value-exact save/load for model parameters.

Containers are .npz archives holding every state-dict tensor under its name
plus a JSON metadata entry with the constructor arguments. numpy's zip writer
uses a fixed timestamp, so identical parameters produce identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .errors import MissingArtifactError

PARAMS_FORMAT_VERSION = 1
_META_KEY = "__meta__"


def save_module(path: Path, module: nn.Module, meta: dict) -> None:
    arrays = {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}
    header = {"version": PARAMS_FORMAT_VERSION, "meta": meta}
    arrays[_META_KEY] = np.frombuffer(
        json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    np.savez(Path(path), **arrays)


def load_arrays(path: Path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"missing parameter file: {path}")
    with np.load(path) as z:
        header = json.loads(bytes(z[_META_KEY].tobytes()).decode("utf-8"))
        if header.get("version") != PARAMS_FORMAT_VERSION:
            raise MissingArtifactError(
                f"{path}: unsupported parameter format version {header.get('version')!r}"
            )
        arrays = {k: z[k] for k in z.files if k != _META_KEY}
    return header["meta"], arrays


def load_into(module: nn.Module, arrays: dict[str, np.ndarray]) -> None:
    state = {k: torch.from_numpy(np.array(v)) for k, v in arrays.items()}
    module.load_state_dict(state)
    module.eval()
