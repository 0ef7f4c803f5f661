"""Plain, non-hierarchical ViT backbone producing one single-scale feature map.

Token width and grid resolution stay constant through every block (asserted
per forward). Attention is windowed over non-overlapping square windows except
in the configured global blocks. Positions are learned absolute embeddings,
interpolated bicubically when the runtime grid differs from the one the
embedding was built for.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ConfigError, DataError


def default_global_indices(depth: int) -> tuple[int, int]:
    """Two evenly spaced global-attention blocks, the last one included."""
    if depth < 2:
        raise ConfigError("depth must be >= 2 to place two global blocks")
    return (depth // 2 - 1, depth - 1)


@dataclass(frozen=True)
class BackboneConfig:
    img_size: int = 96
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 4
    num_heads: int = 4
    mlp_ratio: float = 4.0
    window_size: int = 4
    global_block_indices: tuple[int, ...] | None = None
    pyramid_channels: int = 32
    seed: int = 0

    def __post_init__(self) -> None:
        if self.img_size <= 0 or self.patch_size <= 0:
            raise ConfigError("image and patch sizes must be positive")
        if self.img_size % self.patch_size != 0:
            raise ConfigError(
                f"img_size {self.img_size} not divisible by patch_size {self.patch_size}"
            )
        if self.embed_dim % self.num_heads != 0:
            raise ConfigError("embed_dim must be divisible by num_heads")
        if self.window_size <= 0:
            raise ConfigError("window_size must be positive")
        if self.global_block_indices is None:
            object.__setattr__(
                self, "global_block_indices", default_global_indices(self.depth)
            )
        if any(not 0 <= i < self.depth for i in self.global_block_indices):
            raise ConfigError("global_block_indices must lie in [0, depth)")

    @property
    def token_grid(self) -> int:
        return self.img_size // self.patch_size


@dataclass
class FeatureMap:
    """Spatial features as (B, C, H, W) with a pixel stride per cell."""

    values: torch.Tensor
    stride: int


def window_partition(x: torch.Tensor, ws: int) -> tuple[torch.Tensor, tuple[int, int]]:
    """Split (B, H, W, D) into (B * nWindows, ws, ws, D), padding H/W up to ws."""
    b, h, w, d = x.shape
    pad_h = (ws - h % ws) % ws
    pad_w = (ws - w % ws) % ws
    if pad_h or pad_w:
        x = F.pad(x, (0, 0, 0, pad_w, 0, pad_h))
    hp, wp = h + pad_h, w + pad_w
    x = x.view(b, hp // ws, ws, wp // ws, ws, d)
    windows = x.permute(0, 1, 3, 2, 4, 5).reshape(-1, ws, ws, d)
    return windows, (hp, wp)


def window_unpartition(windows: torch.Tensor, ws: int, padded: tuple[int, int],
                       hw: tuple[int, int]) -> torch.Tensor:
    hp, wp = padded
    h, w = hw
    b = windows.shape[0] // ((hp // ws) * (wp // ws))
    x = windows.view(b, hp // ws, wp // ws, ws, ws, -1)
    x = x.permute(0, 1, 3, 2, 4, 5).reshape(b, hp, wp, -1)
    return x[:, :h, :w, :].contiguous()


class Attention(nn.Module):
    """Multi-head self-attention over a flat token sequence."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.scale = self.head_dim ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, return_attn: bool = False):
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4).unbind(0)
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, d)
        out = self.proj(out)
        if return_attn:
            return out, attn
        return out


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class Block(nn.Module):
    """Pre-norm transformer block, windowed unless marked global."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float,
                 window_size: int, is_global: bool):
        super().__init__()
        self.window_size = window_size
        self.is_global = is_global
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, h, w, d = x.shape
        shortcut = x
        y = self.norm1(x)
        if self.is_global:
            y = self.attn(y.view(b, h * w, d)).view(b, h, w, d)
        else:
            windows, padded = window_partition(y, self.window_size)
            ws = self.window_size
            attended = self.attn(windows.view(-1, ws * ws, d)).view(-1, ws, ws, d)
            y = window_unpartition(attended, ws, padded, (h, w))
        x = shortcut + y
        x = x + self.mlp(self.norm2(x))
        assert x.shape == (b, h, w, d), "block must preserve token grid and width"
        return x


class PlainViT(nn.Module):
    """Patchify, add learned positions, run the blocks, emit one feature map."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        self.patch_embed = nn.Conv2d(3, cfg.embed_dim, kernel_size=cfg.patch_size,
                                     stride=cfg.patch_size)
        g = cfg.token_grid
        self.pos_embed = nn.Parameter(torch.zeros(1, g, g, cfg.embed_dim))
        self.blocks = nn.ModuleList([
            Block(cfg.embed_dim, cfg.num_heads, cfg.mlp_ratio, cfg.window_size,
                  is_global=(i in cfg.global_block_indices))
            for i in range(cfg.depth)
        ])
        self.norm = nn.LayerNorm(cfg.embed_dim)
        self.apply(_init_weights)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)

    def interpolated_pos_embed(self, h: int, w: int) -> torch.Tensor:
        g = self.pos_embed.shape[1]
        if (h, w) == (g, g):
            return self.pos_embed
        pe = self.pos_embed.permute(0, 3, 1, 2)
        pe = F.interpolate(pe, size=(h, w), mode="bicubic", align_corners=False)
        return pe.permute(0, 2, 3, 1)

    def embed(self, images: torch.Tensor) -> torch.Tensor:
        """Token grid (B, H', W', D) with positional embedding added."""
        if images.ndim != 4 or images.shape[1] != 3:
            raise DataError(f"expected (B, 3, H, W) images, got {tuple(images.shape)}")
        if images.shape[-2] % self.cfg.patch_size or images.shape[-1] % self.cfg.patch_size:
            raise DataError(
                f"image size {tuple(images.shape[-2:])} not divisible by patch size "
                f"{self.cfg.patch_size}"
            )
        x = self.patch_embed(images).permute(0, 2, 3, 1)
        return x + self.interpolated_pos_embed(x.shape[1], x.shape[2])

    def forward(self, images: torch.Tensor) -> FeatureMap:
        x = self.embed(images)
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        return FeatureMap(values=x.permute(0, 3, 1, 2), stride=self.cfg.patch_size)


def _init_weights(module: nn.Module) -> None:
    if isinstance(module, (nn.Linear, nn.Conv2d, nn.ConvTranspose2d)):
        nn.init.trunc_normal_(module.weight, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
