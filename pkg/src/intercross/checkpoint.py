"""Checkpoint directories: ``index.json`` plus one raw float32 blob.

``index.json`` maps every tensor name to its shape, dtype, file and byte
offset, and carries the model configuration, training step and the style
class / instance vocabulary the classification heads were built for.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .exceptions import CorruptFrames, IoFailure, MissingFile
from .model import ModelConfig, MultiReferenceTacotron

CHECKPOINT_FORMAT = "intercross.checkpoint/1"
BLOB = "params.f32"


def save_checkpoint(path, model: MultiReferenceTacotron, *, step: int = 0, class_names=None,
                    instance_ids=None, extra: dict | None = None) -> Path:
    out = Path(path)
    tensors = {}
    chunks = []
    offset = 0
    for name, t in model.state_dict().items():
        arr = np.ascontiguousarray(t.detach().cpu().numpy(), dtype="<f4")
        tensors[name] = {"shape": list(arr.shape), "dtype": "float32", "file": BLOB, "offset": offset}
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    index = {
        "format": CHECKPOINT_FORMAT,
        "model_config": model.config.to_dict(),
        "step": int(step),
        "class_names": list(class_names or []),
        "instance_ids": [list(ids) for ids in (instance_ids or [])],
        "tensors": tensors,
        "extra": extra or {},
    }
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / BLOB).write_bytes(b"".join(chunks))
        (out / "index.json").write_text(json.dumps(index, indent=2) + "\n")
    except OSError as exc:
        raise IoFailure(f"could not write checkpoint to {out}: {exc}") from exc
    return out


def load_checkpoint(path) -> tuple[MultiReferenceTacotron, dict]:
    """Rebuild the model from a checkpoint directory; returns (model, index)."""
    root = Path(path)
    index_path = root / "index.json"
    if not index_path.exists():
        raise MissingFile(f"no index.json in checkpoint {root}")
    index = json.loads(index_path.read_text())
    model = MultiReferenceTacotron(ModelConfig.from_dict(index["model_config"]))
    blobs: dict[str, bytes] = {}
    state = {}
    for name, info in index["tensors"].items():
        if info["file"] not in blobs:
            p = root / info["file"]
            if not p.exists():
                raise MissingFile(f"checkpoint blob {p} is missing")
            blobs[info["file"]] = p.read_bytes()
        count = int(np.prod(info["shape"], dtype=np.int64))
        end = info["offset"] + 4 * count
        if end > len(blobs[info["file"]]):
            raise CorruptFrames(name, f"checkpoint blob too short for tensor {info['shape']}")
        arr = np.frombuffer(blobs[info["file"]], dtype="<f4", count=count, offset=info["offset"])
        state[name] = torch.from_numpy(arr.reshape(info["shape"]).copy())
    model.load_state_dict(state)
    model.eval()
    return model, index
