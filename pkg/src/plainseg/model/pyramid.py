"""Simple feature pyramid synthesized from the backbone's single feature map.

Five levels with strides stride/4, stride/2, stride, 2*stride, 4*stride, built
by transposed-convolution upsampling, identity, and strided max-pool
downsampling respectively, each followed by a 1x1 projection to a shared
channel width.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch.nn.functional as F
from torch import nn

from ..errors import ConfigError
from .vit import FeatureMap


@dataclass
class FeaturePyramid:
    levels: list[FeatureMap]

    @property
    def strides(self) -> list[int]:
        return [lvl.stride for lvl in self.levels]

    def __post_init__(self) -> None:
        for prev, cur in zip(self.levels, self.levels[1:]):
            if cur.stride != 2 * prev.stride:
                raise ConfigError("pyramid strides must double level to level")


class SimpleFeaturePyramid(nn.Module):
    def __init__(self, embed_dim: int, out_channels: int):
        super().__init__()
        self.out_channels = out_channels
        self.up4_a = nn.ConvTranspose2d(embed_dim, embed_dim, 2, stride=2)
        self.up4_b = nn.ConvTranspose2d(embed_dim, embed_dim, 2, stride=2)
        self.up2 = nn.ConvTranspose2d(embed_dim, embed_dim, 2, stride=2)
        self.proj = nn.ModuleList([
            nn.Conv2d(embed_dim, out_channels, 1) for _ in range(5)
        ])

    def forward(self, fm: FeatureMap) -> FeaturePyramid:
        if fm.stride % 4 != 0:
            raise ConfigError(
                f"backbone stride {fm.stride} must be divisible by 4 to build "
                "quarter-stride levels"
            )
        x = fm.values
        if x.shape[-1] % 4 or x.shape[-2] % 4:
            raise ConfigError(
                f"feature grid {tuple(x.shape[-2:])} must be divisible by 4"
            )
        sources = [
            self.up4_b(F.gelu(self.up4_a(x))),
            self.up2(x),
            x,
            F.max_pool2d(x, kernel_size=2, stride=2),
            F.max_pool2d(x, kernel_size=4, stride=4),
        ]
        strides = [fm.stride // 4, fm.stride // 2, fm.stride,
                   fm.stride * 2, fm.stride * 4]
        levels = [
            FeatureMap(values=proj(src), stride=stride)
            for proj, src, stride in zip(self.proj, sources, strides)
        ]
        return FeaturePyramid(levels=levels)
