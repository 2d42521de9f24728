# -*- coding: utf-8 -*-
"""
Utility functions for the DG Video Enhancer.
"""
import hashlib
import logging
import random
import textwrap
from pathlib import Path
from typing import Any, Dict, List

import numpy as np
import torch
import yaml

from modules.constants import FRAME_WIDTH

logger = logging.getLogger(__name__)

FRAME_RULE = "|" + "=" * FRAME_WIDTH + "|"
FRAME_BLANK = "|" + " " * FRAME_WIDTH + "|"

LEVEL_TAG_WIDTH = 10


def frame_lines(msg: str) -> List[str]:
    """Wrap a message into |...| rows; 'center:' and 'left:' prefixes pick the alignment."""
    if msg.startswith('|') and msg.endswith('|'):
        return [msg]
    align = 'left'
    if msg.startswith('center:'):
        msg, align = msg[7:].strip(), 'center'
    elif msg.startswith('left:'):
        msg = msg[5:]
    rows = []
    lines = textwrap.wrap(msg, width=FRAME_WIDTH - 2) if len(msg) > FRAME_WIDTH - 2 else [msg]
    for line in lines:
        padded = line.center(FRAME_WIDTH) if align == 'center' else (" " + line).ljust(FRAME_WIDTH)
        rows.append(f"|{padded}|")
    return rows


class FrameFormatter(logging.Formatter):
    """Draws every message inside the console frame, after a padded '[LEVEL]' tag."""

    def format(self, record):
        record.message = record.getMessage()
        if self.usesTime():
            record.asctime = self.formatTime(record, self.datefmt)
        head = self.formatMessage(record)[:-len(record.message) or None]
        # the last "[...] " tag is the level
        tag_start = head.rfind("[")
        prefix = head if tag_start == -1 else head[:tag_start] + head[tag_start:].ljust(LEVEL_TAG_WIDTH)
        text = '\n'.join(prefix + row for row in frame_lines(record.message))
        if record.exc_info and not record.exc_text:
            record.exc_text = self.formatException(record.exc_info)
        if record.exc_text:
            text = f"{text}\n{record.exc_text}"
        return text


def log_frame(msg: str, align: str = 'left') -> None:
    logging.info(f"{'center' if align == 'center' else 'left'}:{msg}")


def log_section(title: str) -> None:
    """Open a framed section in the console log."""
    logging.info(FRAME_BLANK)
    logging.info(FRAME_RULE)
    log_frame(title, 'center')
    logging.info(FRAME_RULE)


def derive_seed(*parts: int) -> int:
    """Mix integers into a 63-bit seed that is stable across runs and platforms."""
    digest = hashlib.sha256(",".join(str(int(p)) for p in parts).encode("ascii")).digest()
    return int.from_bytes(digest[:8], "little") & ((1 << 63) - 1)


def set_determinism(seed: int) -> None:
    """Seed python, numpy and torch and request deterministic kernels."""
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)
    torch.backends.cudnn.benchmark = False


def resolve_device(name: str) -> torch.device:
    if name == "auto":
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")
    if name == "cuda" and not torch.cuda.is_available():
        logger.warning("CUDA requested but not available. Falling back to CPU.")
        return torch.device("cpu")
    return torch.device(name)


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_key_values(path: Path, values: Dict[str, Any]) -> None:
    """Write a human-readable key-value sidecar."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(values, f, sort_keys=True, default_flow_style=None)


def read_key_values(path: Path) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f)
    if not isinstance(data, dict):
        raise ValueError(f"Sidecar {path} must contain a key-value mapping")
    return data


def write_run_manifest(run_dir: Path, filename: str = "manifest.txt") -> Path:
    """List every artifact below run_dir with its sha256, sorted by path."""
    manifest_path = run_dir / filename
    lines = []
    for path in sorted(p for p in run_dir.rglob("*") if p.is_file() and p != manifest_path):
        lines.append(f"{sha256_file(path)}  {path.relative_to(run_dir).as_posix()}")
    manifest_path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    logger.info(f"Run manifest written with {len(lines)} artifacts to {manifest_path}")
    return manifest_path
