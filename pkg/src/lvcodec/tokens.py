"""Semantic token extraction, token geometry, and token-level metrics.

Tokens are matrices of shape (T_dim, T_num).  The backbone that produces them
is pluggable; a deterministic, differentiable toy extractor (patch mean-pool
plus a fixed seeded projection) stands in for heavyweight ViT backbones, and
precomputed tokens can be exchanged through ".tok" files.
"""

from __future__ import annotations

import math
import struct

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigurationError, DimensionError, FormatError, NumericError

TOKEN_MAGIC = b"TOKG"
TOKEN_VERSION = 1


def validate_token_grid(tokens: torch.Tensor, require_square: bool = False) -> None:
    if tokens.dim() not in (2, 3):
        raise DimensionError(
            f"token grid must be (T_dim, T_num) or batched, got {tuple(tokens.shape)}"
        )
    if not torch.isfinite(tokens).all():
        raise NumericError("token grid contains non-finite entries")
    if require_square:
        n = tokens.shape[-1]
        g = math.isqrt(n)
        if g * g != n:
            raise DimensionError(f"token count {n} is not a perfect square")


class ToyTokenExtractor:
    """Deterministic differentiable extractor: non-overlapping patch mean-pool
    followed by a fixed seeded linear projection.

    Instances are immutable after construction; the projection depends only on
    (output_dim, seed), so an extractor is fully described by its name.
    """

    def __init__(self, name: str = "toy", output_dim: int = 64, patch: int = 16,
                 reference_size: int = 256, seed: int = 0x5EED):
        self.name = name
        self.output_dim = int(output_dim)
        self.patch = int(patch)
        self.reference_size = int(reference_size)
        self.patch_grid = self.reference_size // self.patch
        gen = torch.Generator().manual_seed(seed)
        w = torch.randn(self.output_dim, 3, generator=gen) / math.sqrt(3.0)
        self._weight = w

    def extract(self, image: torch.Tensor) -> torch.Tensor:
        """(3,H,W) -> (T_dim, T_num) or (B,3,H,W) -> (B, T_dim, T_num)."""
        squeeze = image.dim() == 3
        if squeeze:
            image = image.unsqueeze(0)
        pooled = F.avg_pool2d(image, self.patch)  # (B, 3, h, w)
        b = pooled.shape[0]
        flat = pooled.reshape(b, 3, -1)
        tokens = torch.matmul(self._weight.to(flat.dtype), flat)
        return tokens.squeeze(0) if squeeze else tokens


_EXTRACTORS = {
    "toy": lambda: ToyTokenExtractor("toy", output_dim=64),
    "toy768": lambda: ToyTokenExtractor("toy768", output_dim=768),
}


def get_extractor(name: str):
    try:
        factory = _EXTRACTORS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown token extractor {name!r}; available: {sorted(_EXTRACTORS)}"
        ) from None
    return factory()


def register_extractor(name: str, factory) -> None:
    _EXTRACTORS[name] = factory


def extract_tokens(image: torch.Tensor, extractor) -> torch.Tensor:
    """Run the extractor on an image whose dims divide the patch size."""
    h, w = image.shape[-2:]
    p = extractor.patch
    if h % p or w % p:
        raise DimensionError(
            f"image {h}x{w} not divisible by extractor patch size {p}"
        )
    return extractor.extract(image)


def tokens_for_image(image: torch.Tensor, extractor) -> torch.Tensor:
    """Extract a square token grid by resampling to the extractor's reference
    resolution when the image would not produce one directly."""
    h, w = image.shape[-2:]
    p = extractor.patch
    if h == w and h % p == 0:
        return extract_tokens(image, extractor)
    ref = extractor.reference_size
    squeeze = image.dim() == 3
    batched = image.unsqueeze(0) if squeeze else image
    resized = F.interpolate(batched, size=(ref, ref), mode="bilinear",
                            align_corners=False)
    tokens = extractor.extract(resized)
    return tokens.squeeze(0) if squeeze else tokens


def tokens_to_spatial(tokens: torch.Tensor, target_h: int, target_w: int) -> torch.Tensor:
    """Reshape (T_dim, n^2) tokens to (T_dim, n, n) and resize bilinearly."""
    squeeze = tokens.dim() == 2
    if squeeze:
        tokens = tokens.unsqueeze(0)
    if tokens.dim() != 3:
        raise DimensionError(f"expected 2-D or 3-D tokens, got {tuple(tokens.shape)}")
    b, dim, n = tokens.shape
    g = math.isqrt(n)
    if g * g != n:
        raise DimensionError(f"token count {n} is not a perfect square")
    grid = tokens.reshape(b, dim, g, g)
    if (target_h, target_w) != (g, g):
        grid = F.interpolate(grid, size=(target_h, target_w), mode="bilinear",
                             align_corners=False)
    return grid.squeeze(0) if squeeze else grid


class _SoftRankFn(torch.autograd.Function):
    """Sum of sigmoid over the singular values, with an analytic backward.

    d/dA sum_i sigmoid(s_i) = U diag(sigmoid'(s_i)) V^T.  Singular values are
    clamped at 1e-6 in the backward pass; degenerate (near-equal) values fall
    back to whatever basis the decomposition routine picked, which is a valid
    subgradient.
    """

    @staticmethod
    def forward(ctx, t):
        u, s, vh = torch.linalg.svd(t, full_matrices=False)
        ctx.save_for_backward(u, s, vh)
        return torch.sigmoid(s).sum(dim=-1)

    @staticmethod
    def backward(ctx, grad_out):
        u, s, vh = ctx.saved_tensors
        s = s.clamp_min(1e-6)
        sig = torch.sigmoid(s)
        w = sig * (1.0 - sig) * grad_out.unsqueeze(-1)
        return (u * w.unsqueeze(-2)) @ vh


def soft_rank(tokens: torch.Tensor) -> torch.Tensor:
    """Differentiable rank surrogate: sum_i sigmoid(sigma_i) over singular values.

    A batched (B, T_dim, T_num) input yields one value per grid.
    """
    validate_token_grid(tokens)
    return _SoftRankFn.apply(tokens)


def rank_loss(t_gt: torch.Tensor, t_d: torch.Tensor) -> torch.Tensor:
    """Squared difference of the two soft ranks (mean over a batch)."""
    if t_gt.shape != t_d.shape:
        raise DimensionError(
            f"token grids differ in shape: {tuple(t_gt.shape)} vs {tuple(t_d.shape)}"
        )
    return (((soft_rank(t_gt) - soft_rank(t_d)) ** 2)).mean()


def token_mse(t_gt: torch.Tensor, t_d: torch.Tensor) -> torch.Tensor:
    """Mean squared elementwise difference over all T_dim * T_num entries."""
    if t_gt.shape != t_d.shape:
        raise DimensionError(
            f"token grids differ in shape: {tuple(t_gt.shape)} vs {tuple(t_d.shape)}"
        )
    return ((t_gt - t_d) ** 2).mean()


# --- ".tok" interchange files ------------------------------------------------

def save_tokens(path, tokens: torch.Tensor) -> None:
    """Write a (T_dim, T_num) grid as float32 little-endian, dimension-major."""
    if tokens.dim() != 2:
        raise DimensionError(f"token files hold one 2-D grid, got {tuple(tokens.shape)}")
    validate_token_grid(tokens)
    t_dim, t_num = tokens.shape
    data = np.ascontiguousarray(
        tokens.detach().cpu().numpy().astype("<f4")
    )
    with open(path, "wb") as f:
        f.write(TOKEN_MAGIC)
        f.write(struct.pack("<B3xII", TOKEN_VERSION, t_dim, t_num))
        f.write(data.tobytes())


def load_tokens(path) -> torch.Tensor:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != TOKEN_MAGIC:
        raise FormatError("not a token file (bad magic)")
    version, t_dim, t_num = struct.unpack_from("<B3xII", raw, 4)
    if version != TOKEN_VERSION:
        raise FormatError(f"unsupported token file version {version}")
    expected = 16 + 4 * t_dim * t_num
    if len(raw) != expected:
        raise FormatError(
            f"token file length {len(raw)} does not match header ({expected})"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=16).reshape(t_dim, t_num)
    return torch.from_numpy(data.copy())
