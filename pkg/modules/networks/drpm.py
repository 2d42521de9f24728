# -*- coding: utf-8 -*-
"""
Degradation representation propagation.

A small temporal transformer reads the recent history of compressed representations and
predicts the next frame's representation as a residual on the newest entry. The output
projection starts at zero, so an untrained propagator repeats the last representation.
"""
import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, List, Optional

import torch
import torch.nn as nn

from modules.imaging import ShapeError

logger = logging.getLogger(__name__)


class PropagationStateError(RuntimeError):
    """Raised on an empty history or out-of-order frame indices."""


class RepresentationSource(str, Enum):
    DAM = "DAM"
    DRPM = "DRPM"


@dataclass(frozen=True)
class HistoryEntry:
    index: int
    d_c: torch.Tensor
    source: RepresentationSource


@dataclass
class PropagationState:
    """Per-stream ring buffer of the representations actually used, oldest first."""
    capacity: int = 16
    entries: Deque[HistoryEntry] = field(default_factory=deque)
    last_keyframe_index: Optional[int] = None

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def last_index(self) -> Optional[int]:
        return self.entries[-1].index if self.entries else None

    def update(self, frame_index: int, d_c: torch.Tensor, source: RepresentationSource) -> "PropagationState":
        source = RepresentationSource(source)
        if self.entries and frame_index <= self.entries[-1].index:
            raise PropagationStateError(
                f"Frame index {frame_index} must exceed the last stored index {self.entries[-1].index}"
            )
        self.entries.append(HistoryEntry(int(frame_index), d_c.detach(), source))
        while len(self.entries) > self.capacity:
            self.entries.popleft()
        if source is RepresentationSource.DAM:
            self.last_keyframe_index = int(frame_index)
        return self

    def history(self) -> torch.Tensor:
        """(L, D_c) tensor of stored representations, oldest first."""
        if not self.entries:
            raise PropagationStateError("Propagation history is empty")
        return torch.stack([entry.d_c.reshape(-1) for entry in self.entries])

    def sources(self) -> List[RepresentationSource]:
        return [entry.source for entry in self.entries]


def update_state(state: PropagationState, frame_index: int, d_c: torch.Tensor,
                 source: RepresentationSource) -> PropagationState:
    return state.update(frame_index, d_c, source)


class TemporalSelfAttention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        if dim % num_heads:
            raise ShapeError(f"Head count {num_heads} must divide model width {dim}")
        self.dim = dim
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, L, C = x.shape
        heads = self.num_heads

        def split(t: torch.Tensor) -> torch.Tensor:
            return t.view(B, L, heads, C // heads).transpose(1, 2)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        attn = ((q * self.scale) @ k.transpose(-2, -1)).softmax(dim=-1)
        return self.proj((attn @ v).transpose(1, 2).reshape(B, L, C))

    def attention_flops(self, x: torch.Tensor) -> int:
        batch, length, _ = x.shape
        return batch * self.num_heads * 2 * length * length * (self.dim // self.num_heads)


class TemporalEncoderLayer(nn.Module):
    def __init__(self, dim: int, num_heads: int, ff_dim: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = TemporalSelfAttention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, ff_dim), nn.GELU(), nn.Linear(ff_dim, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.ff(self.norm2(x))


class DegradationPropagator(nn.Module):
    """(B, L, D_c) history, oldest first -> (B, D_c) prediction for the next frame."""

    def __init__(self, embed_dim: int = 60, model_dim: int = 128, context: int = 16, num_layers: int = 2,
                 num_heads: int = 4, ff_dim: int = 240):
        super().__init__()
        self.embed_dim = embed_dim
        self.context = context
        self.input_proj = nn.Linear(embed_dim, model_dim)
        self.position = nn.Parameter(torch.zeros(context, model_dim))
        self.layers = nn.ModuleList([TemporalEncoderLayer(model_dim, num_heads, ff_dim) for _ in range(num_layers)])
        self.norm = nn.LayerNorm(model_dim)
        self.output_proj = nn.Linear(model_dim, embed_dim)
        nn.init.trunc_normal_(self.position, std=.02)
        nn.init.zeros_(self.output_proj.weight)
        nn.init.zeros_(self.output_proj.bias)

    def forward(self, history: torch.Tensor) -> torch.Tensor:
        if history.dim() != 3 or history.shape[-1] != self.embed_dim:
            raise ShapeError(f"Expected history of shape (B, L, {self.embed_dim}), got {tuple(history.shape)}")
        history = history[:, -self.context:]
        length = history.shape[1]
        if length == 0:
            raise PropagationStateError("Propagation history is empty")
        # slot 0 is the newest entry
        slots = torch.arange(length - 1, -1, -1, device=history.device)
        x = self.input_proj(history) + self.position[slots]
        for layer in self.layers:
            x = layer(x)
        delta = self.output_proj(self.norm(x[:, -1]))
        return history[:, -1] + delta


def propagate(state: PropagationState, propagator: DegradationPropagator) -> torch.Tensor:
    """Predict d_c for frame state.last_index + 1 from the stored history."""
    if not state.entries:
        raise PropagationStateError("Cannot propagate from an empty history")
    if state.last_keyframe_index is None:
        raise PropagationStateError("History holds no DAM-sourced representation")
    return propagator(state.history().unsqueeze(0)).squeeze(0)
