"""Token-guided pre-editing network: a U-Net whose down- and up-sampling
branches fuse image features with semantic-token features at every scale, and
whose behaviour is modulated by the compression-ratio index.

The residual output branch is scaled by a parameter initialized to zero, so an
untrained pre-editor is exactly the identity (clamped to [0,1]).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError, DimensionError
from .layers import AdaptionLayer, BaseBlock, ChannelLayerNorm, conv1x1, conv3x3
from .tokens import tokens_to_spatial


@dataclass
class PreEditConfig:
    scales: int = 4
    base_channels: int = 32
    q_levels: int = 6
    token_dim: int = 64

    def __post_init__(self):
        if self.scales < 2:
            raise ConfigurationError("need at least 2 resolution levels")
        if self.base_channels < 8:
            raise ConfigurationError("base_channels must be at least 8")
        if self.q_levels < 2:
            raise ConfigurationError("q_levels must be at least 2")

    def channels(self, level: int) -> int:
        return self.base_channels * (2 ** level)


class TokenBlock(nn.Module):
    """Semantic token refinement at one scale: resize, 1x1 conv, layer norm,
    base block."""

    def __init__(self, token_dim: int, channels: int):
        super().__init__()
        self.proj = conv1x1(token_dim, channels)
        self.norm = ChannelLayerNorm(channels)
        self.block = BaseBlock(channels)

    def forward(self, tokens: torch.Tensor, target_h: int, target_w: int) -> torch.Tensor:
        grid = tokens_to_spatial(tokens, target_h, target_w)
        if grid.dim() == 3:
            grid = grid.unsqueeze(0)
        return self.block(self.norm(self.proj(grid)))


class FusionBlock(nn.Module):
    """Channel-reducing convolution, base block, then adaption processing."""

    def __init__(self, in_channels: int, out_channels: int, q_levels: int):
        super().__init__()
        self.reduce = conv3x3(in_channels, out_channels)
        self.block = BaseBlock(out_channels)
        self.adaption = AdaptionLayer(out_channels, q_levels)

    def forward(self, x: torch.Tensor, q: int) -> torch.Tensor:
        return self.adaption(self.block(self.reduce(x)), q)


class PreEditNet(nn.Module):
    """(image, tokens, q) -> pre-edited image of identical shape in [0,1]."""

    def __init__(self, config: PreEditConfig | None = None):
        super().__init__()
        self.config = config or PreEditConfig()
        cfg = self.config
        s = cfg.scales
        ch = [cfg.channels(i) for i in range(s)]
        self.stem = conv3x3(3, ch[0])
        self.token_blocks = nn.ModuleList(
            [TokenBlock(cfg.token_dim, ch[i]) for i in range(s)]
        )
        self.down_fuse = nn.ModuleList(
            [FusionBlock(2 * ch[i], ch[i], cfg.q_levels) for i in range(s)]
        )
        self.down_proj = nn.ModuleList(
            [conv3x3(ch[i], ch[i + 1]) for i in range(s - 1)]
        )
        self.up_proj = nn.ModuleList(
            [conv3x3(ch[i + 1], ch[i]) for i in range(s - 1)]
        )
        self.up_fuse = nn.ModuleList(
            [FusionBlock(3 * ch[i], ch[i], cfg.q_levels) for i in range(s - 1)]
        )
        self.head = conv3x3(ch[0], 3)
        # the residual branch is zeroed through its final convolution, so the
        # untrained network is an identity map while gradients still reach the
        # head at full strength (a zero scalar gate would block them all);
        # per-q gains start neutral and learn each q's editing intensity
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)
        self.residual_scale = nn.Parameter(torch.ones(cfg.q_levels))

    def forward(self, image: torch.Tensor, tokens: torch.Tensor, q: int) -> torch.Tensor:
        squeeze = image.dim() == 3
        x_in = image.unsqueeze(0) if squeeze else image
        cfg = self.config
        h, w = x_in.shape[-2:]
        div = 2 ** (cfg.scales - 1)
        if h % div or w % div:
            raise DimensionError(
                f"image {h}x{w} must be divisible by {div} for {cfg.scales} scales"
            )
        t_dim = tokens.shape[-2]
        if t_dim != cfg.token_dim:
            raise ConfigurationError(
                f"token dimension {t_dim} does not match configured {cfg.token_dim}"
            )
        if tokens.dim() == 2:
            tokens = tokens.unsqueeze(0)
        if tokens.shape[0] != x_in.shape[0]:
            tokens = tokens.expand(x_in.shape[0], -1, -1)

        # down-sampling branch, fusing token features at every scale
        x = self.stem(x_in)
        token_feats = []
        skips = []
        for i in range(cfg.scales):
            th, tw = h // (2 ** i), w // (2 ** i)
            tk = self.token_blocks[i](tokens, th, tw)
            token_feats.append(tk)
            fused = self.down_fuse[i](torch.cat([x, tk], dim=1), q)
            skips.append(fused)
            if i < cfg.scales - 1:
                x = self.down_proj[i](F.max_pool2d(fused, kernel_size=2))

        # up-sampling branch with token features and skip connections
        u = skips[-1]
        for i in range(cfg.scales - 2, -1, -1):
            u = F.interpolate(u, scale_factor=2, mode="nearest")
            u = self.up_proj[i](u)
            u = self.up_fuse[i](torch.cat([u, token_feats[i], skips[i]], dim=1), q)

        residual = self.head(u)
        out = (x_in + self.residual_scale[q] * residual).clamp(0.0, 1.0)
        return out.squeeze(0) if squeeze else out
