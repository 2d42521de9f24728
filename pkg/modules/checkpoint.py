# -*- coding: utf-8 -*-
"""
Versioned checkpoint container shared by every network component.

A checkpoint is a torch.save payload with a header (format version, application version,
module name, shape manifest) next to the state dict and optional extras such as optimiser
state. Files are written atomically.
"""
import logging
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import torch
import torch.nn as nn

from modules.constants import CHECKPOINT_FORMAT_VERSION, CHECKPOINT_SUFFIX, VERSION_FILE

logger = logging.getLogger(__name__)


class CheckpointError(RuntimeError):
    """Raised when a checkpoint is missing, corrupt or does not match the expected module."""


def read_app_version() -> str:
    try:
        return VERSION_FILE.read_text(encoding="utf-8").strip()
    except FileNotFoundError:
        logger.warning(f"Application version file not found at {VERSION_FILE}. Assuming 'unknown' version.")
        return "unknown"


def shape_manifest(state: Mapping[str, torch.Tensor]) -> Dict[str, List[int]]:
    return {name: list(tensor.shape) for name, tensor in state.items()}


def checkpoint_path(directory: Path, module_name: str, tag: Optional[str] = None) -> Path:
    stem = module_name if tag is None else f"{module_name}-{tag}"
    return Path(directory) / f"{stem}{CHECKPOINT_SUFFIX}"


def save_checkpoint(path: Path, module_name: str, state: Mapping[str, torch.Tensor],
                    extra: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cpu_state = {name: tensor.detach().cpu() for name, tensor in state.items()}
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "app_version": read_app_version(),
        "module_name": module_name,
        "shapes": shape_manifest(cpu_state),
        "state": cpu_state,
        "extra": extra or {},
    }
    temp_path = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, temp_path)
    temp_path.replace(path)
    logger.debug(f"Saved checkpoint '{module_name}' to {path}")
    return path


def load_checkpoint(path: Path, module_name: Optional[str] = None,
                    expected_shapes: Optional[Mapping[str, List[int]]] = None) -> Dict[str, Any]:
    """
    Load and validate a checkpoint payload.

    Raises:
        CheckpointError: naming the first header field or parameter that does not match.
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"Failed to read checkpoint {path}: {e}") from e

    if not isinstance(payload, dict) or "state" not in payload:
        raise CheckpointError(f"{path} is not a checkpoint container")
    if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"format_version: {path} has {payload.get('format_version')}, expected {CHECKPOINT_FORMAT_VERSION}"
        )
    if module_name is not None and payload.get("module_name") != module_name:
        raise CheckpointError(f"module_name: {path} holds '{payload.get('module_name')}', expected '{module_name}'")
    if payload.get("app_version") != read_app_version():
        logger.warning(f"Checkpoint {path.name} was written by version {payload.get('app_version')}.")

    shapes = payload.get("shapes", {})
    if shapes != shape_manifest(payload["state"]):
        raise CheckpointError(f"shapes: manifest of {path} does not describe its state")
    if expected_shapes is not None:
        for name in sorted(set(expected_shapes) | set(shapes)):
            if name not in shapes:
                raise CheckpointError(f"{name}: missing from {path}")
            if name not in expected_shapes:
                raise CheckpointError(f"{name}: unexpected entry in {path}")
            if list(expected_shapes[name]) != list(shapes[name]):
                raise CheckpointError(f"{name}: shape {shapes[name]} in {path}, expected {list(expected_shapes[name])}")
    return payload


def save_module(module: nn.Module, path: Path, module_name: str, extra: Optional[Dict[str, Any]] = None) -> Path:
    return save_checkpoint(path, module_name, module.state_dict(), extra)


def load_module(module: nn.Module, path: Path, module_name: str) -> Dict[str, Any]:
    """Load weights into module after checking them against its own shape manifest; returns the extras."""
    payload = load_checkpoint(path, module_name, shape_manifest(module.state_dict()))
    module.load_state_dict(payload["state"])
    logger.info(f"Loaded '{module_name}' weights from {path}")
    return payload["extra"]
