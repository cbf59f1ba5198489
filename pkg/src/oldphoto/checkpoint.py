"""Versioned checkpoint container: named parameter sets plus a config echo."""
import hashlib
import os
from pathlib import Path

import torch

from .errors import ConfigurationError

FORMAT_VERSION = 1


def save_checkpoint(path, stage, modules, optimizers=None, step=0, epoch=0, config=None, extra=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": FORMAT_VERSION,
        "stage": stage,
        "step": int(step),
        "epoch": int(epoch),
        "config": dict(config or {}),
        "modules": {name: m.state_dict() for name, m in modules.items() if m is not None},
        "optimizers": {name: o.state_dict() for name, o in (optimizers or {}).items()},
        "extra": dict(extra or {}),
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return path


def load_checkpoint(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ConfigurationError(f"{path}: unsupported checkpoint format {version!r}")
    return payload


def apply_checkpoint(payload, modules, optimizers=None):
    for name, module in modules.items():
        if module is None:
            continue
        if name not in payload["modules"]:
            raise ConfigurationError(f"checkpoint for stage {payload['stage']!r} has no {name!r}")
        module.load_state_dict(payload["modules"][name])
    for name, opt in (optimizers or {}).items():
        if name in payload["optimizers"]:
            opt.load_state_dict(payload["optimizers"][name])


def param_hash(*modules):
    """SHA-256 over every parameter and buffer, in name order."""
    h = hashlib.sha256()
    for i, module in enumerate(modules):
        for name, t in sorted(module.state_dict().items()):
            h.update(f"{i}:{name}:{tuple(t.shape)}:{t.dtype}".encode())
            h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
