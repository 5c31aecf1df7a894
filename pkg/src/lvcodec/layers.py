"""Building blocks shared by the codec transforms and the pre-editing network:
GDN/IGDN, compression-ratio adaption layers, channel-attention base blocks.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError

BETA_MIN = 1e-6
_SOFTPLUS_INV_ONE = math.log(math.expm1(1.0))  # softplus(x) == 1


def conv3x3(in_ch: int, out_ch: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=stride, padding=1)


def conv1x1(in_ch: int, out_ch: int) -> nn.Conv2d:
    return nn.Conv2d(in_ch, out_ch, kernel_size=1)


def subpel_conv3x3(in_ch: int, out_ch: int, factor: int = 2) -> nn.Sequential:
    """x2 upsampling with a 3x3 convolution followed by pixel shuffle."""
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch * factor * factor, kernel_size=3, padding=1),
        nn.PixelShuffle(factor),
    )


def gdn_apply(x: torch.Tensor, beta: torch.Tensor, gamma: torch.Tensor,
              inverse: bool = False) -> torch.Tensor:
    """Generalized divisive normalization per spatial location.

    forward: y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2); inverse multiplies.
    """
    c = x.shape[-3]
    norm = F.conv2d(x * x, gamma.view(c, c, 1, 1), bias=beta)
    den = torch.sqrt(norm)
    return x * den if inverse else x / den


class GDN(nn.Module):
    """GDN/IGDN with nonnegativity enforced by square reparameterization.

    A tiny floor on the raw off-diagonal couplings keeps their gradients alive
    (the square reparameterization has zero gradient exactly at zero).
    """

    def __init__(self, channels: int, inverse: bool = False):
        super().__init__()
        self.inverse = inverse
        beta0 = torch.ones(channels)
        gamma0 = 0.1 * torch.eye(channels)
        self.beta_raw = nn.Parameter(torch.sqrt(beta0 - BETA_MIN))
        self.gamma_raw = nn.Parameter(torch.sqrt(gamma0 + 1e-6))

    @property
    def beta(self) -> torch.Tensor:
        return BETA_MIN + self.beta_raw ** 2

    @property
    def gamma(self) -> torch.Tensor:
        return self.gamma_raw ** 2

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return gdn_apply(x, self.beta, self.gamma, inverse=self.inverse)


class AdaptionLayer(nn.Module):
    """Per-channel feature gain conditioned on the compression ratio index.

    The index is embedded and mapped through a two-layer perceptron to a
    positive scale vector (softplus output); initialization puts every scale
    at exactly 1 so the layer starts as an identity.
    """

    def __init__(self, channels: int, q_levels: int, embed_dim: int = 64):
        super().__init__()
        self.q_levels = q_levels
        self.embed = nn.Embedding(q_levels, embed_dim)
        self.fc1 = nn.Linear(embed_dim, embed_dim)
        self.fc2 = nn.Linear(embed_dim, channels)
        nn.init.zeros_(self.fc2.weight)
        nn.init.constant_(self.fc2.bias, _SOFTPLUS_INV_ONE)

    def scales(self, q: int) -> torch.Tensor:
        if not 0 <= int(q) < self.q_levels:
            raise ConfigurationError(f"q={q} outside [0, {self.q_levels})")
        idx = torch.tensor([int(q)], device=self.embed.weight.device)
        h = F.relu(self.fc1(self.embed(idx)))
        # tiny floor keeps the gains strictly positive under float32 underflow
        return F.softplus(self.fc2(h)).squeeze(0).clamp_min(1e-12)

    def forward(self, x: torch.Tensor, q: int) -> torch.Tensor:
        s = self.scales(q)
        return x * s.view(1, -1, 1, 1)


class ChannelLayerNorm(nn.Module):
    """Layer normalization over the channel dimension of a C,H,W feature map."""

    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mu = x.mean(dim=-3, keepdim=True)
        var = x.var(dim=-3, keepdim=True, unbiased=False)
        x = (x - mu) / torch.sqrt(var + self.eps)
        return x * self.weight.view(-1, 1, 1) + self.bias.view(-1, 1, 1)


class ChannelAttention(nn.Module):
    """Squeeze-excite gate: global average pool -> bottleneck MLP -> sigmoid."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        hidden = max(channels // reduction, 4)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        g = x.mean(dim=(-2, -1))
        g = torch.sigmoid(self.fc2(F.relu(self.fc1(g))))
        return x * g.unsqueeze(-1).unsqueeze(-1)


class BaseBlock(nn.Module):
    """Residual block: pointwise -> depthwise 3x3 -> GELU -> channel attention
    -> pointwise, added back to the input."""

    def __init__(self, channels: int):
        super().__init__()
        self.pw1 = conv1x1(channels, channels)
        self.dw = nn.Conv2d(channels, channels, kernel_size=3, padding=1,
                            groups=channels)
        self.attn = ChannelAttention(channels)
        self.pw2 = conv1x1(channels, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.dw(self.pw1(x))
        h = self.attn(F.gelu(h))
        return x + self.pw2(h)


class QGain(nn.Module):
    """Direct per-q positive channel gain, initialized as a geometric ladder
    from 1 (q=0) to ``end_gain`` (q=q_levels-1).

    The simplest possible compression-ratio adapt layer: one learned feature
    weighting vector per q index.  The monotone initialization is what makes
    the discrete rate ladder usable after a short training run; a
    zero-initialized shared predictor cannot separate the q levels quickly.
    """

    def __init__(self, channels: int, q_levels: int, end_gain: float = 1.0):
        super().__init__()
        self.q_levels = q_levels
        gains = torch.tensor(
            [end_gain ** (q / max(q_levels - 1, 1)) for q in range(q_levels)]
        )
        raw = torch.log(torch.expm1(gains)).view(-1, 1).repeat(1, channels)
        self.raw = nn.Parameter(raw)

    def gains(self, q: int) -> torch.Tensor:
        if not 0 <= int(q) < self.q_levels:
            raise ConfigurationError(f"q={q} outside [0, {self.q_levels})")
        return F.softplus(self.raw[int(q)])

    def forward(self, x: torch.Tensor, q: int) -> torch.Tensor:
        return x * self.gains(q).view(1, -1, 1, 1)


class ResBlockQ(nn.Module):
    """Codec residual block: conv -> GDN/IGDN -> conv plus skip, finished by
    two adapt layers: the MLP-predicted gain and a direct per-q ladder gain.

    Scaling the whole output (identity path included) lets matching encoder
    and decoder blocks realize a per-q gain and its inverse around the
    quantizer; ``gain_end`` < 1 on the analysis side and > 1 on the synthesis
    side seeds a monotone rate ladder.
    """

    def __init__(self, channels: int, q_levels: int, inverse: bool = False,
                 gain_end: float = 1.0):
        super().__init__()
        self.conv1 = conv3x3(channels, channels)
        self.gdn = GDN(channels, inverse=inverse)
        self.conv2 = conv3x3(channels, channels)
        self.adaption = AdaptionLayer(channels, q_levels)
        self.qgain = QGain(channels, q_levels, end_gain=gain_end)

    def forward(self, x: torch.Tensor, q: int) -> torch.Tensor:
        h = self.conv2(self.gdn(self.conv1(x)))
        return self.qgain(self.adaption(x + h, q), q)
