# -*- coding: utf-8 -*-
"""
Streaming video enhancement with key-frame degradation estimation.

Key frames get their representation from the DAM; the frames in between get it from the
propagator, which reads the representations actually used on earlier frames.
"""
import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Tuple, Union

import torch

from modules.budget import ComponentFlops, component_flops
from modules.checkpoint import checkpoint_path
from modules.config import RunConfig
from modules.constants import FRAME_PATTERN, VIDEO_SIDECAR
from modules.imaging import ShapeError, VideoSequence, iter_video_frames, read_frame_rate, save_image
from modules.networks import ModelBundle, PropagationState, RepresentationSource, build_models, propagate
from modules.scheduler import KeyFrameScheduler
from modules.training import checkpoint_dir, load_components
from modules.utils import write_key_values

logger = logging.getLogger(__name__)

FRAME_LOG_FIELDS = ("index", "source", "ms", "flops")


@dataclass
class FrameRecord:
    index: int
    input: torch.Tensor
    output: torch.Tensor
    source: RepresentationSource
    ms: float
    flops: float
    d_c: Optional[torch.Tensor] = None


def estimate_avg_flops(delta_t: int, flops: ComponentFlops) -> float:
    """F_DGEM + F_DAM / delta_t + F_DRPM * (1 - 1 / delta_t)."""
    if delta_t < 1:
        raise ValueError("delta_t must be >= 1")
    return flops.dgem + flops.dam / delta_t + flops.drpm * (1.0 - 1.0 / delta_t)


class StreamEnhancer:
    """Enhances one stream frame by frame, strictly in order."""

    def __init__(self, bundle: ModelBundle, config: RunConfig, flops: Optional[ComponentFlops] = None):
        self.bundle = bundle
        self.scheduler = KeyFrameScheduler(config.scheduler)
        self.state = PropagationState(capacity=bundle.drpm.context)
        self.flops = flops
        self.frame_shape: Optional[Tuple[int, ...]] = None
        self.next_index = 0
        self.device = next(bundle.dgem.parameters()).device

    def _representation(self, x_l: torch.Tensor, source: RepresentationSource) -> torch.Tensor:
        if source is RepresentationSource.DAM:
            return self.bundle.generator.represent(x_l)
        return propagate(self.state, self.bundle.drpm).unsqueeze(0)

    def _frame_flops(self, source: RepresentationSource) -> float:
        if self.flops is None:
            return 0.0
        extra = self.flops.dam if source is RepresentationSource.DAM else self.flops.drpm
        return self.flops.dgem + extra

    @torch.no_grad()
    def process(self, frame: torch.Tensor) -> FrameRecord:
        shape = tuple(frame.shape)
        if self.frame_shape is None:
            self.frame_shape = shape
        elif shape != self.frame_shape:
            raise ShapeError(f"Frame {self.next_index} has shape {shape}; the stream started with {self.frame_shape}")
        index = self.next_index
        start = time.perf_counter()
        source = self.scheduler.next_source(index)
        x_l = frame.unsqueeze(0).to(self.device)
        d_c = self._representation(x_l, source)
        x_enh, d_c = self.bundle.dgem(x_l, d_c=d_c)
        self.state.update(index, d_c.squeeze(0), source)
        elapsed = (time.perf_counter() - start) * 1000.0
        self.next_index += 1
        return FrameRecord(index=index, input=frame, output=x_enh.squeeze(0).cpu(), source=source, ms=elapsed,
                           flops=self._frame_flops(source), d_c=d_c.squeeze(0).cpu())


def enhance_video(frames: Union[VideoSequence, Iterable[torch.Tensor]], bundle: ModelBundle, config: RunConfig,
                  flops: Optional[ComponentFlops] = None) -> List[FrameRecord]:
    """Enhance every frame in input order; raises on an empty stream or a size change."""
    bundle.eval()
    enhancer = StreamEnhancer(bundle, config, flops)
    records = [enhancer.process(frame) for frame in frames]
    if not records:
        raise ValueError("Cannot enhance an empty video")
    keys = enhancer.scheduler.state.key_frames
    logger.info(f"Enhanced {len(records)} frames: {keys} key frames, {len(records) - keys} propagated")
    return records


@dataclass(frozen=True)
class FrameLogRow:
    """One frames.csv line; holds no tensors."""
    index: int
    source: RepresentationSource
    ms: float
    flops: float

    @classmethod
    def from_record(cls, record: FrameRecord) -> "FrameLogRow":
        return cls(index=record.index, source=record.source, ms=record.ms, flops=record.flops)

    def as_row(self) -> List[str]:
        return [str(self.index), self.source.value, f"{self.ms:.3f}", f"{self.flops:.0f}"]


def write_frame_log(records: Iterable[Union[FrameRecord, FrameLogRow]], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(FRAME_LOG_FIELDS)
        for record in records:
            row = record if isinstance(record, FrameLogRow) else FrameLogRow.from_record(record)
            writer.writerow(row.as_row())
    return path


def load_inference_bundle(config: RunConfig) -> ModelBundle:
    """
    Build the models and load DAM and DGEM weights from the checkpoint directory.

    A missing DRPM checkpoint leaves the propagator untrained, which repeats the last key
    frame's representation.
    """
    directory = checkpoint_dir(config)
    bundle = build_models(config)
    load_components(bundle, directory, ["dam", "dgem"])
    if checkpoint_path(directory, "drpm").exists():
        load_components(bundle, directory, ["drpm"])
    elif config.scheduler.delta_t > 1:
        logger.warning(f"No DRPM checkpoint in {directory}. Propagated frames reuse the last key frame's estimate.")
    return bundle


def enhance_video_dir(input_dir: Path, output_dir: Path, bundle: ModelBundle, config: RunConfig,
                      log_name: str = "frames.csv") -> List[FrameLogRow]:
    """
    Stream frames from input_dir and write each enhanced frame and its frames.csv row as soon as it is done.

    Only the per-frame log rows are kept in memory. A frame whose size differs from the first
    raises ShapeError; the rows of the frames already written stay in frames.csv.
    """
    input_dir, output_dir = Path(input_dir), Path(output_dir)
    if not input_dir.is_dir():
        raise FileNotFoundError(f"Input video directory not found: {input_dir}")
    bundle.eval()
    enhancer = StreamEnhancer(bundle, config)
    rows: List[FrameLogRow] = []
    output_dir.mkdir(parents=True, exist_ok=True)
    with open(output_dir / log_name, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(FRAME_LOG_FIELDS)
        for frame in iter_video_frames(input_dir, config.system.prefetch):
            if enhancer.flops is None:
                enhancer.flops = component_flops(bundle, tuple(frame.shape[-2:]))
            record = enhancer.process(frame)
            save_image(record.output, output_dir / FRAME_PATTERN.format(record.index))
            row = FrameLogRow.from_record(record)
            writer.writerow(row.as_row())
            f.flush()
            rows.append(row)
    write_key_values(output_dir / VIDEO_SIDECAR, {"frame_rate": read_frame_rate(input_dir)})
    logger.info(f"Wrote {len(rows)} enhanced frames and {log_name} to {output_dir}")
    return rows
