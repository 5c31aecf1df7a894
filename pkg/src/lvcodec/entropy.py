"""Entropy models: conditional Gaussian likelihoods, a learned factorized
prior for the hyper-latent, and discretization of both into the integer CDF
tables consumed by the range coder.

Table quantization is normative: 16-bit precision (total mass 65536), strictly
increasing CDFs, tail mass 1e-9 folded into the edge symbols, symbol support
derived from each distribution's quantiles.
"""

from __future__ import annotations

import math
from statistics import NormalDist
from typing import List, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import NumericError
from .rangecoder import CdfTable, TOTAL

LIKELIHOOD_FLOOR = 2.0 ** -24
TAIL_MASS = 1e-9

SCALE_BOUND = 0.11
SCALE_MAX = 256.0
SCALE_LEVELS = 64


def make_scale_table(scale_bound: float = SCALE_BOUND, scale_max: float = SCALE_MAX,
                     levels: int = SCALE_LEVELS) -> np.ndarray:
    """Log-spaced coding scales; endpoints pinned exactly to the bounds."""
    table = np.exp(np.linspace(math.log(scale_bound), math.log(scale_max), levels))
    table[0] = scale_bound
    table[-1] = scale_max
    return table


class _LowerBoundFn(torch.autograd.Function):
    """max(x, bound) that still passes gradients pushing x back above bound."""

    @staticmethod
    def forward(ctx, x, bound):
        ctx.save_for_backward(x)
        ctx.bound = bound
        return x.clamp_min(bound)

    @staticmethod
    def backward(ctx, grad_out):
        (x,) = ctx.saved_tensors
        pass_through = (x >= ctx.bound) | (grad_out < 0)
        return grad_out * pass_through, None


def lower_bound(x: torch.Tensor, bound: float) -> torch.Tensor:
    return _LowerBoundFn.apply(x, bound)


def _std_normal_cdf(x: torch.Tensor) -> torch.Tensor:
    # erfc keeps precision in the tails
    return 0.5 * torch.erfc(-x * (2 ** -0.5))


def gaussian_interval_likelihood(y: torch.Tensor, scales: torch.Tensor) -> torch.Tensor:
    """P(round) mass of a zero-mean Gaussian: Phi((y+0.5)/s) - Phi((y-0.5)/s).

    Evaluated in the left tail of the cumulative for numerical stability.
    """
    values = -y.abs()
    upper = _std_normal_cdf((values + 0.5) / scales)
    lower = _std_normal_cdf((values - 0.5) / scales)
    return upper - lower


def likelihood_to_bits(likelihood: torch.Tensor) -> torch.Tensor:
    """Total bits with the 2^-24 likelihood floor keeping the sum finite."""
    if not torch.isfinite(likelihood).all():
        raise NumericError("non-finite likelihoods")
    return -torch.log2(lower_bound(likelihood, LIKELIHOOD_FLOOR)).sum()


def quantize_pmf_to_cdf(pmf: np.ndarray, offset: int = 0) -> CdfTable:
    """Quantize a probability vector to an integer CDF with total mass 65536.

    Every entry keeps frequency >= 1 so the table stays strictly increasing;
    the rounding residue is settled against the largest-mass symbols.
    """
    pmf = np.asarray(pmf, dtype=np.float64)
    if pmf.ndim != 1 or len(pmf) == 0:
        raise NumericError("pmf must be a non-empty vector")
    if not np.all(np.isfinite(pmf)) or np.any(pmf < 0):
        raise NumericError("pmf entries must be finite and nonnegative")
    total = pmf.sum()
    if total <= 0:
        raise NumericError("pmf must have positive mass")
    freq = np.maximum(1, np.rint(pmf / total * TOTAL)).astype(np.int64)
    diff = TOTAL - int(freq.sum())
    if diff > 0:
        freq[int(np.argmax(freq))] += diff
    elif diff < 0:
        for i in np.argsort(freq)[::-1]:
            take = min(-diff, int(freq[i]) - 1)
            freq[i] -= take
            diff += take
            if diff == 0:
                break
        if diff != 0:
            raise NumericError("cannot renormalize pmf: too many symbols")
    cdf = np.concatenate([[0], np.cumsum(freq)])
    return CdfTable(cdf=tuple(int(c) for c in cdf), offset=offset)


def gaussian_tail_multiplier(tail_mass: float = TAIL_MASS) -> float:
    return NormalDist().inv_cdf(1.0 - tail_mass / 2.0)


def build_gaussian_tables(scale_table: Sequence[float],
                          tail_mass: float = TAIL_MASS) -> List[CdfTable]:
    """One CDF table per coding scale, support +-ceil(scale * quantile)."""
    mult = gaussian_tail_multiplier(tail_mass)
    tables = []
    for s in scale_table:
        m = max(1, int(math.ceil(float(s) * mult)))
        x = torch.arange(-m, m + 1, dtype=torch.float64)
        upper = _std_normal_cdf((x + 0.5) / s)
        lower = _std_normal_cdf((x - 0.5) / s)
        pmf = (upper - lower).numpy()
        pmf[0] = float(_std_normal_cdf(torch.tensor((-m + 0.5) / s, dtype=torch.float64)))
        pmf[-1] = float(1.0 - _std_normal_cdf(torch.tensor((m - 0.5) / s, dtype=torch.float64)))
        tables.append(quantize_pmf_to_cdf(pmf, offset=-m))
    return tables


def snap_scale_indices(scales: torch.Tensor, scale_table: torch.Tensor) -> torch.Tensor:
    """Index of the nearest table entry >= scale (clamped to the widest)."""
    idx = torch.searchsorted(scale_table, scales.reshape(-1).contiguous())
    return idx.clamp_(max=len(scale_table) - 1)


class FactorizedPrior(nn.Module):
    """Nonparametric univariate density per channel for the hyper-latent.

    The cumulative is a composition of small monotone layers (softplus-positive
    matrices plus a tanh gating term), squashed by a sigmoid at evaluation.
    """

    def __init__(self, channels: int, filters=(3, 3, 3), init_scale: float = 10.0):
        super().__init__()
        self.channels = channels
        self.filters = tuple(int(f) for f in filters)
        dims = (1,) + self.filters + (1,)
        scale = init_scale ** (1.0 / (len(dims) - 1))
        self._matrices = nn.ParameterList()
        self._biases = nn.ParameterList()
        self._factors = nn.ParameterList()
        for k in range(len(dims) - 1):
            d_in, d_out = dims[k], dims[k + 1]
            init = math.log(math.expm1(1.0 / scale / d_out))
            self._matrices.append(nn.Parameter(torch.full((channels, d_out, d_in), init)))
            bias = torch.empty(channels, d_out, 1).uniform_(-0.5, 0.5)
            self._biases.append(nn.Parameter(bias))
            if k < len(dims) - 2:
                self._factors.append(nn.Parameter(torch.zeros(channels, d_out, 1)))

    def _logits_cdf(self, x: torch.Tensor) -> torch.Tensor:
        # x: (channels, 1, n) -> logits of the cumulative, same shape
        h = x
        for k, (w, b) in enumerate(zip(self._matrices, self._biases)):
            h = F.softplus(w) @ h + b
            if k < len(self._factors):
                h = h + torch.tanh(self._factors[k]) * torch.tanh(h)
        return h

    def likelihood(self, z: torch.Tensor) -> torch.Tensor:
        """Interval mass of round(z); z shaped (B, C, H, W)."""
        b, c, h, w = z.shape
        flat = z.permute(1, 0, 2, 3).reshape(c, 1, -1)
        upper = self._logits_cdf(flat + 0.5)
        lower = self._logits_cdf(flat - 0.5)
        sign = -torch.sign(upper + lower).detach()
        lik = torch.abs(torch.sigmoid(sign * upper) - torch.sigmoid(sign * lower))
        return lik.reshape(c, b, h, w).permute(1, 0, 2, 3)

    @torch.no_grad()
    def _cdf_at(self, points: torch.Tensor) -> torch.Tensor:
        # points: (n,) -> (channels, n) cumulative values in float64
        x = points.to(torch.float64).reshape(1, 1, -1).expand(self.channels, 1, -1)
        params = [p.data for p in self._matrices]
        h = x
        for k, (w, b) in enumerate(zip(params, self._biases)):
            h = F.softplus(w.to(torch.float64)) @ h + b.data.to(torch.float64)
            if k < len(self._factors):
                f = self._factors[k].data.to(torch.float64)
                h = h + torch.tanh(f) * torch.tanh(h)
        return torch.sigmoid(h).reshape(self.channels, -1)

    @torch.no_grad()
    def build_tables(self, tail_mass: float = TAIL_MASS,
                     max_radius: int = 4096) -> List[CdfTable]:
        """Per-channel integer CDF tables over quantile-derived supports."""
        grid = torch.arange(-max_radius, max_radius + 1, dtype=torch.float64)
        cdf_half = self._cdf_at(grid + 0.5).numpy()  # F(i + 0.5) at grid points
        tables = []
        lo_target = tail_mass / 2.0
        hi_target = 1.0 - tail_mass / 2.0
        for c in range(self.channels):
            fc = cdf_half[c]
            above = np.nonzero(fc > lo_target)[0]
            below = np.nonzero(fc < hi_target)[0]
            lo_i = int(above[0]) if len(above) else len(grid) - 1
            hi_i = int(below[-1]) + 1 if len(below) else 0
            lo = min(-1, lo_i - max_radius)
            hi = max(1, hi_i - max_radius)
            pmf = np.empty(hi - lo + 1, dtype=np.float64)
            # interior mass from CDF differences, edges fold in the tails
            idx = np.arange(lo, hi + 1) + max_radius
            pmf[1:] = fc[idx[1:]] - fc[idx[:-1]]
            pmf[0] = fc[idx[0]]
            pmf[-1] = 1.0 - fc[idx[-1] - 1]
            pmf = np.maximum(pmf, 0.0)
            tables.append(quantize_pmf_to_cdf(pmf, offset=lo))
        return tables
