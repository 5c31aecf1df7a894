"""Training objective: rate + distortion + token terms with per-q weight
presets.

The distortion is always measured against the original image (never the
pre-edited one), and the rate enters as bits per pixel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F

from .errors import ConfigurationError, DimensionError
from .tokens import rank_loss, token_mse

DISTORTION_LADDER_6 = (420.0, 220.0, 120.0, 64.0, 35.0, 18.0)


@dataclass(frozen=True)
class LambdaPreset:
    """Loss weights attached to one compression-ratio index.

    Token weights are sized so the token terms land in the same order as
    lambda_D * MSE at mid bitrate (tokens are pre-normalized by their global
    standard deviation); they remain sweep candidates.
    """

    q: int
    lambda_distortion: float
    lambda_rate: float = 1.0
    lambda_token: float = 40.0
    lambda_rank: float = 2.0

    def __post_init__(self):
        for name in ("lambda_rate", "lambda_distortion", "lambda_token", "lambda_rank"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative")


def default_presets(q_levels: int = 6) -> Tuple[LambdaPreset, ...]:
    """Distortion-weight ladder, strictly decreasing in q (q=0 is highest rate)."""
    if q_levels == 6:
        ladder = DISTORTION_LADDER_6
    else:
        hi, lo = DISTORTION_LADDER_6[0], DISTORTION_LADDER_6[-1]
        ladder = tuple(
            hi * (lo / hi) ** (i / (q_levels - 1)) for i in range(q_levels)
        )
    presets = tuple(LambdaPreset(q=i, lambda_distortion=ladder[i])
                    for i in range(q_levels))
    for a, b in zip(presets, presets[1:]):
        if not a.lambda_distortion > b.lambda_distortion:
            raise ConfigurationError("presets must be strictly ordered by lambda_D")
    return presets


def total_loss(
    bits: torch.Tensor,
    num_pixels: int,
    original: torch.Tensor,
    reconstructed: torch.Tensor,
    preset: LambdaPreset,
    tokens_ref: Optional[torch.Tensor] = None,
    tokens_dec: Optional[torch.Tensor] = None,
    include_token_terms: bool = True,
) -> Tuple[torch.Tensor, Dict[str, float]]:
    """Weighted objective and its per-term breakdown.

    Returns (total, breakdown) where breakdown carries the raw term values
    (bpp, mse, tk, rk, total); the weighted contributions recombine to the
    total exactly because the assembly is done in float64.
    """
    if original.shape != reconstructed.shape:
        raise DimensionError(
            f"image shapes differ: {tuple(original.shape)} vs {tuple(reconstructed.shape)}"
        )
    bits = torch.as_tensor(bits, dtype=torch.float64) if not torch.is_tensor(bits) else bits
    bpp = bits.double() / float(num_pixels)
    mse = F.mse_loss(reconstructed, original).double()
    total = preset.lambda_rate * bpp + preset.lambda_distortion * mse
    tk = rk = None
    if include_token_terms:
        if tokens_ref is None or tokens_dec is None:
            raise ConfigurationError("token terms enabled but token grids missing")
        tk = token_mse(tokens_ref, tokens_dec).double()
        rk = rank_loss(tokens_ref, tokens_dec).double()
        total = total + preset.lambda_token * tk + preset.lambda_rank * rk
    breakdown = {
        "bpp": float(bpp.detach()),
        "mse": float(mse.detach()),
        "tk": float(tk.detach()) if tk is not None else 0.0,
        "rk": float(rk.detach()) if rk is not None else 0.0,
        "total": float(total.detach()),
    }
    return total, breakdown


def recombine(breakdown: Dict[str, float], preset: LambdaPreset,
              include_token_terms: bool = True) -> float:
    """Reassemble the total from a breakdown; mirrors total_loss exactly."""
    total = (preset.lambda_rate * breakdown["bpp"]
             + preset.lambda_distortion * breakdown["mse"])
    if include_token_terms:
        total = (total + preset.lambda_token * breakdown["tk"]
                 + preset.lambda_rank * breakdown["rk"])
    return total


def presets_to_json(presets: Sequence[LambdaPreset]) -> list:
    return [
        {
            "q": p.q,
            "lambda_rate": p.lambda_rate,
            "lambda_distortion": p.lambda_distortion,
            "lambda_token": p.lambda_token,
            "lambda_rank": p.lambda_rank,
        }
        for p in presets
    ]


def presets_from_json(items: Sequence[dict]) -> Tuple[LambdaPreset, ...]:
    return tuple(
        LambdaPreset(
            q=int(d["q"]),
            lambda_distortion=float(d["lambda_distortion"]),
            lambda_rate=float(d.get("lambda_rate", 1.0)),
            lambda_token=float(d.get("lambda_token", 40.0)),
            lambda_rank=float(d.get("lambda_rank", 2.0)),
        )
        for d in items
    )
