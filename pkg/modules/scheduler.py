# -*- coding: utf-8 -*-
"""
Key-frame scheduler for video inference: decides per frame whether the degradation
representation comes from a full DAM estimate or from temporal propagation.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional

from .config import SchedulerConfig
from .networks.drpm import RepresentationSource

logger = logging.getLogger(__name__)


@dataclass
class SchedulerState:
    """Tracks what the scheduler has decided so far for one stream."""
    frames_seen: int = 0
    key_frames: int = 0
    propagated_frames: int = 0
    last_index: Optional[int] = None
    last_keyframe_index: Optional[int] = None


class KeyFrameScheduler:
    """Frame i is a key frame iff i is a multiple of delta_t; with warm_start the first frame always is."""

    def __init__(self, config: SchedulerConfig):
        self.delta_t = config.delta_t
        self.warm_start = config.warm_start
        self.state = SchedulerState()

    def is_key_frame(self, index: int) -> bool:
        if self.warm_start and self.state.frames_seen == 0:
            return True
        return index % self.delta_t == 0

    def next_source(self, index: int) -> RepresentationSource:
        """Decide the source for frame index and record the decision. Indices must increase."""
        if self.state.last_index is not None and index <= self.state.last_index:
            raise ValueError(f"Frame index {index} does not follow {self.state.last_index}")
        key = self.is_key_frame(index)
        if not key and self.state.last_keyframe_index is None:
            raise ValueError(f"Frame {index} would be propagated before any key frame (warm_start is off)")
        self.state.frames_seen += 1
        self.state.last_index = index
        if key:
            self.state.key_frames += 1
            self.state.last_keyframe_index = index
            logger.debug(f"Frame {index}: key frame")
            return RepresentationSource.DAM
        self.state.propagated_frames += 1
        return RepresentationSource.DRPM

    def reset(self) -> None:
        self.state = SchedulerState()


def key_frame_indices(length: int, delta_t: int) -> List[int]:
    return list(range(0, length, delta_t))


def count_key_frames(length: int, delta_t: int) -> int:
    """ceil(length / delta_t) for a stream starting at index 0."""
    if delta_t < 1:
        raise ValueError("delta_t must be >= 1")
    return math.ceil(length / delta_t)
