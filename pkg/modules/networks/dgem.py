# -*- coding: utf-8 -*-
"""
Degradation-guided enhancement module.

Four stages: degradation representation compression, shallow feature extraction, feature
modulation with value-gated shifted-window attention, and sub-pixel reconstruction.
"""
import logging
from typing import Dict, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from modules.imaging import ShapeError, resize_bicubic

logger = logging.getLogger(__name__)


class DegradationCompression(nn.Module):
    """Channel attention, then spatial attention, then global pooling and projection to D_c."""

    def __init__(self, rep_channels: int = 256, hidden: int = 96, embed_dim: int = 60):
        super().__init__()
        self.channel_fc1 = nn.Conv2d(rep_channels, hidden, 1)
        self.channel_fc2 = nn.Conv2d(hidden, rep_channels, 1)
        self.spatial = nn.Conv2d(rep_channels, 1, 1)
        self.project = nn.Linear(rep_channels, embed_dim)

    def forward(self, d_map: torch.Tensor) -> torch.Tensor:
        d = torch.sigmoid(self.channel_fc2(F.relu(self.channel_fc1(d_map)))) * d_map
        d = torch.sigmoid(self.spatial(d)) * d
        return self.project(d.mean(dim=(2, 3)))


def window_partition(x: torch.Tensor, window_size: int) -> torch.Tensor:
    """(B, H, W, C) -> (num_windows*B, window_size, window_size, C)"""
    B, H, W, C = x.shape
    x = x.view(B, H // window_size, window_size, W // window_size, window_size, C)
    return x.permute(0, 1, 3, 2, 4, 5).contiguous().view(-1, window_size, window_size, C)


def window_reverse(windows: torch.Tensor, window_size: int, H: int, W: int) -> torch.Tensor:
    """(num_windows*B, window_size, window_size, C) -> (B, H, W, C)"""
    B = int(windows.shape[0] / (H * W / window_size / window_size))
    x = windows.view(B, H // window_size, W // window_size, window_size, window_size, -1)
    return x.permute(0, 1, 3, 2, 4, 5).contiguous().view(B, H, W, -1)


class ModulatedWindowAttention(nn.Module):
    r"""
    Window multi-head self attention with relative position bias whose values are gated
    channel-wise by the compressed degradation representation: V_hat = V * d_c.

    Args:
        dim (int): Number of input channels.
        window_size (int): Side of the square window.
        num_heads (int): Number of attention heads.
    """

    def __init__(self, dim: int, window_size: int, num_heads: int, qkv_bias: bool = True):
        super().__init__()
        if dim % num_heads:
            raise ShapeError(f"Head count {num_heads} must divide embedding width {dim}")
        self.dim = dim
        self.window_size = window_size
        self.num_heads = num_heads
        head_dim = dim // num_heads
        self.scale = head_dim ** -0.5

        self.relative_position_bias_table = nn.Parameter(torch.zeros((2 * window_size - 1) ** 2, num_heads))
        coords = torch.stack(torch.meshgrid(torch.arange(window_size), torch.arange(window_size), indexing="ij"))
        coords_flatten = torch.flatten(coords, 1)
        relative_coords = (coords_flatten[:, :, None] - coords_flatten[:, None, :]).permute(1, 2, 0).contiguous()
        relative_coords[:, :, 0] += window_size - 1
        relative_coords[:, :, 1] += window_size - 1
        relative_coords[:, :, 0] *= 2 * window_size - 1
        self.register_buffer("relative_position_index", relative_coords.sum(-1), persistent=False)

        self.qkv = nn.Linear(dim, dim * 3, bias=qkv_bias)
        self.proj = nn.Linear(dim, dim)
        nn.init.trunc_normal_(self.relative_position_bias_table, std=.02)

    def forward(self, x: torch.Tensor, d_c: Optional[torch.Tensor] = None, mask: Optional[torch.Tensor] = None,
                return_attention: bool = False):
        """
        Args:
            x: window tokens (num_windows*B, N, C)
            d_c: per-window gains (num_windows*B, C), or None for plain attention
            mask: (0/-inf) mask (num_windows, N, N) or None
        """
        B_, N, C = x.shape
        if C != self.dim:
            raise ShapeError(f"Expected token width {self.dim}, got {C}")
        qkv = self.qkv(x).reshape(B_, N, 3, self.num_heads, C // self.num_heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]

        attn = (q * self.scale) @ k.transpose(-2, -1)
        bias = self.relative_position_bias_table[self.relative_position_index.view(-1)].view(N, N, -1)
        attn = attn + bias.permute(2, 0, 1).contiguous().unsqueeze(0)
        if mask is not None:
            nW = mask.shape[0]
            attn = attn.view(B_ // nW, nW, self.num_heads, N, N) + mask.unsqueeze(1).unsqueeze(0)
            attn = attn.view(-1, self.num_heads, N, N)
        attn = attn.softmax(dim=-1)

        if d_c is not None:
            if d_c.shape != (B_, C):
                raise ShapeError(f"Expected gains of shape {(B_, C)}, got {tuple(d_c.shape)}")
            v = v * d_c.view(B_, self.num_heads, 1, C // self.num_heads)

        out = self.proj((attn @ v).transpose(1, 2).reshape(B_, N, C))
        if return_attention:
            return out, attn
        return out

    def attention_flops(self, x: torch.Tensor) -> int:
        windows, tokens, _ = x.shape
        return windows * self.num_heads * 2 * tokens * tokens * (self.dim // self.num_heads)

    def extra_repr(self) -> str:
        return f'dim={self.dim}, window_size={self.window_size}, num_heads={self.num_heads}'


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(x)))


class DegradationAwareBlock(nn.Module):
    """Pre-norm window attention block; odd blocks shift windows by half a window."""

    def __init__(self, dim: int, num_heads: int, window_size: int, shift_size: int = 0, mlp_ratio: float = 2.0):
        super().__init__()
        self.dim = dim
        self.window_size = window_size
        self.shift_size = shift_size
        self.norm1 = nn.LayerNorm(dim)
        self.attn = ModulatedWindowAttention(dim, window_size, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))
        self._masks: Dict[Tuple[int, int, str], torch.Tensor] = {}

    def attention_mask(self, H: int, W: int, device, dtype) -> Optional[torch.Tensor]:
        if self.shift_size == 0:
            return None
        key = (H, W, f"{device}-{dtype}")
        if key not in self._masks:
            img_mask = torch.zeros((1, H, W, 1), device=device)
            slices = (slice(0, -self.window_size), slice(-self.window_size, -self.shift_size),
                      slice(-self.shift_size, None))
            cnt = 0
            for h in slices:
                for w in slices:
                    img_mask[:, h, w, :] = cnt
                    cnt += 1
            mask_windows = window_partition(img_mask, self.window_size).view(-1, self.window_size ** 2)
            mask = mask_windows.unsqueeze(1) - mask_windows.unsqueeze(2)
            mask = mask.masked_fill(mask != 0, float(-100.0)).masked_fill(mask == 0, float(0.0))
            self._masks[key] = mask.to(dtype)
        return self._masks[key]

    def forward(self, x: torch.Tensor, d_c: Optional[torch.Tensor] = None,
                return_attention: bool = False):
        """x: (B, H, W, C) with H, W multiples of the window size; d_c: (B, C) or None."""
        B, H, W, C = x.shape
        shift = self.shift_size if min(H, W) > self.window_size else 0
        shortcut = x
        x = self.norm1(x)
        if shift:
            x = torch.roll(x, shifts=(-shift, -shift), dims=(1, 2))
        windows = window_partition(x, self.window_size).view(-1, self.window_size ** 2, C)
        gains = None
        if d_c is not None:
            gains = d_c.repeat_interleave(windows.shape[0] // B, dim=0)
        mask = self.attention_mask(H, W, x.device, x.dtype) if shift else None
        attn_windows, attn = self.attn(windows, gains, mask, return_attention=True)
        x = window_reverse(attn_windows.view(-1, self.window_size, self.window_size, C), self.window_size, H, W)
        if shift:
            x = torch.roll(x, shifts=(shift, shift), dims=(1, 2))
        x = shortcut + x
        x = x + self.mlp(self.norm2(x))
        if return_attention:
            return x, attn
        return x


class DegradationGuidedEnhancer(nn.Module):
    """x_l (B, 3, H, W) and a degradation map or compressed gains -> x_enh (B, 3, sH, sW) in [0, 1]."""

    def __init__(self, rep_channels: int = 256, embed_dim: int = 60, num_heads: int = 4, window_size: int = 8,
                 num_blocks: int = 4, mlp_ratio: float = 2.0, compress_hidden: int = 96, shallow_hidden: int = 3,
                 recon_channels: int = 64, recon_depth: int = 4, scale: int = 2, bicubic_skip: bool = True):
        super().__init__()
        self.embed_dim = embed_dim
        self.window_size = window_size
        self.scale = scale
        self.bicubic_skip = bicubic_skip

        self.compression = DegradationCompression(rep_channels, compress_hidden, embed_dim)
        self.shallow = nn.Sequential(
            nn.Conv2d(3, shallow_hidden, 3, padding=1),
            nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(shallow_hidden, embed_dim, 3, padding=1),
        )
        self.blocks = nn.ModuleList([
            DegradationAwareBlock(embed_dim, num_heads, window_size,
                                  shift_size=0 if i % 2 == 0 else window_size // 2, mlp_ratio=mlp_ratio)
            for i in range(num_blocks)
        ])
        self.norm = nn.LayerNorm(embed_dim)
        layers = [nn.Conv2d(embed_dim, recon_channels, 3, padding=1), nn.LeakyReLU(0.1, inplace=True)]
        for _ in range(recon_depth):
            layers += [nn.Conv2d(recon_channels, recon_channels, 3, padding=1), nn.LeakyReLU(0.1, inplace=True)]
        layers += [nn.Conv2d(recon_channels, 3 * scale * scale, 3, padding=1), nn.PixelShuffle(scale)]
        self.reconstruction = nn.Sequential(*layers)

    def compress(self, d_map: torch.Tensor) -> torch.Tensor:
        return self.compression(d_map)

    def _pad(self, x: torch.Tensor) -> torch.Tensor:
        pad_h = (-x.shape[-2]) % self.window_size
        pad_w = (-x.shape[-1]) % self.window_size
        if pad_h or pad_w:
            x = F.pad(x, (0, pad_w, 0, pad_h), mode="reflect")
        return x

    def modulate(self, features: torch.Tensor, d_c: Optional[torch.Tensor], return_attention: bool = False):
        """Run the attention body on (B, C, H, W) features; d_c=None gives the unmodulated path."""
        x = features.permute(0, 2, 3, 1)
        maps = []
        for block in self.blocks:
            x, attn = block(x, d_c, return_attention=True)
            maps.append(attn)
        x = self.norm(x).permute(0, 3, 1, 2) + features
        if return_attention:
            return x, maps
        return x

    def reconstruct(self, x_l: torch.Tensor, d_c: Optional[torch.Tensor]) -> torch.Tensor:
        height, width = x_l.shape[-2:]
        features = self.shallow(self._pad(x_l))
        body = self.modulate(features, d_c)
        out = self.reconstruction(body)[..., :height * self.scale, :width * self.scale]
        if self.bicubic_skip:
            out = out + resize_bicubic(x_l, size=(height * self.scale, width * self.scale))
        return out.clamp(0.0, 1.0)

    def forward(self, x_l: torch.Tensor, d_map: Optional[torch.Tensor] = None,
                d_c: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        if d_c is None:
            if d_map is None:
                raise ValueError("Either d_map or d_c is required")
            d_c = self.compress(d_map)
        if d_c.shape != (x_l.shape[0], self.embed_dim):
            raise ShapeError(f"Expected d_c of shape {(x_l.shape[0], self.embed_dim)}, got {tuple(d_c.shape)}")
        return self.reconstruct(x_l, d_c), d_c
