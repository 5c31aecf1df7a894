"""Variable-bitrate hyperprior codec: analysis/synthesis transforms with
compression-ratio adaption, quantization, entropy models, and the bitstream
container.

Container layout (all integers little-endian, normative):

    magic "LVCC" | version u8=1 | q u8 | orig_h u16 | orig_w u16
    | z_len u32 | y_len u32 | z_bytes | y_bytes

The payloads are range-coder streams.  Latents whose rounded values fall
outside a table's quantile support are clamped to the edge symbol and the
overflow magnitude is Exp-Golomb coded over a two-symbol bypass table in a
second segment of the same stream, so coding stays exactly lossless for any
integers while the coder itself only ever sees in-support symbols.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import entropy
from .entropy import (
    FactorizedPrior,
    gaussian_interval_likelihood,
    likelihood_to_bits,
    make_scale_table,
)
from .errors import (
    ConfigurationError,
    DecodeError,
    DimensionError,
    FormatError,
    NumericError,
)
from .layers import GDN, AdaptionLayer, ResBlockQ, conv3x3, subpel_conv3x3
from .rangecoder import CdfTable, RangeDecoder, RangeEncoder

MAGIC = b"LVCC"
VERSION = 1
HEADER_LEN = 18
PAD_MULTIPLE = 64
MIN_SIZE = 64

BYPASS_TABLE = CdfTable(cdf=(0, 32768, 65536), offset=0)


@dataclass
class CodecConfig:
    n_channels: int = 192
    q_levels: int = 6
    scale_bound: float = 0.11
    scale_max: float = 256.0
    scale_levels: int = 64

    def __post_init__(self):
        if self.n_channels < 8:
            raise ConfigurationError("n_channels must be at least 8")
        if self.q_levels < 2:
            raise ConfigurationError("q_levels must be at least 2")
        if not 0 < self.scale_bound < self.scale_max:
            raise ConfigurationError("scale bounds must satisfy 0 < bound < max")

    def scale_table(self) -> np.ndarray:
        return make_scale_table(self.scale_bound, self.scale_max, self.scale_levels)


TINY_CONFIG = dict(n_channels=32)


@dataclass
class LatentPack:
    """Rounded latents plus the decoded scale field for one image."""

    y: torch.Tensor
    z: torch.Tensor
    scales: torch.Tensor

    def __post_init__(self):
        if self.scales.shape != self.y.shape:
            raise DimensionError("scale field must match the main latent shape")
        if float(self.scales.min()) <= 0:
            raise NumericError("scale field must be positive")


@dataclass
class Bitstream:
    """Versioned container chi = header + z-stream + y-stream."""

    q: int
    orig_h: int
    orig_w: int
    z_bytes: bytes
    y_bytes: bytes
    version: int = VERSION

    @property
    def total_bytes(self) -> int:
        return HEADER_LEN + len(self.z_bytes) + len(self.y_bytes)

    def pack(self) -> bytes:
        return (
            MAGIC
            + struct.pack(
                "<BBHHII",
                self.version,
                self.q,
                self.orig_h,
                self.orig_w,
                len(self.z_bytes),
                len(self.y_bytes),
            )
            + self.z_bytes
            + self.y_bytes
        )

    @classmethod
    def unpack(cls, data: bytes) -> "Bitstream":
        if len(data) < HEADER_LEN:
            raise FormatError("container shorter than its header")
        if data[:4] != MAGIC:
            raise FormatError("bad container magic")
        version, q, orig_h, orig_w, z_len, y_len = struct.unpack_from(
            "<BBHHII", data, 4
        )
        if version != VERSION:
            raise FormatError(f"unsupported container version {version}")
        if len(data) != HEADER_LEN + z_len + y_len:
            raise DecodeError(
                f"container length {len(data)} does not match header "
                f"({HEADER_LEN + z_len + y_len})"
            )
        z_bytes = data[HEADER_LEN:HEADER_LEN + z_len]
        y_bytes = data[HEADER_LEN + z_len:]
        return cls(q=q, orig_h=orig_h, orig_w=orig_w, z_bytes=z_bytes,
                   y_bytes=y_bytes, version=version)


def quantize(x: torch.Tensor, mode: str) -> torch.Tensor:
    """noise: additive U(-0.5, 0.5) training proxy; round: ties to even."""
    if mode == "noise":
        return x + torch.empty_like(x).uniform_(-0.5, 0.5)
    if mode == "round":
        return torch.round(x)
    raise ConfigurationError(f"unknown quantization mode {mode!r}")


GAIN_END_ENC = 0.72  # per-block rate-ladder endpoint on the analysis side


class AnalysisTransform(nn.Module):
    """g_enc: four stride-2 stages of conv + adaptive ResBlock + GDN."""

    def __init__(self, n: int, q_levels: int):
        super().__init__()
        self.convs = nn.ModuleList([conv3x3(c, n, stride=2) for c in (3, n, n, n)])
        self.blocks = nn.ModuleList(
            [ResBlockQ(n, q_levels, gain_end=GAIN_END_ENC) for _ in range(4)]
        )
        self.gdns = nn.ModuleList([GDN(n) for _ in range(4)])

    def forward(self, x: torch.Tensor, q: int) -> torch.Tensor:
        for conv, block, gdn in zip(self.convs, self.blocks, self.gdns):
            x = gdn(block(conv(x), q))
        return x


class SynthesisTransform(nn.Module):
    """g_dec: mirrors g_enc with IGDN and pixel-shuffle x2 upsampling."""

    def __init__(self, n: int, q_levels: int):
        super().__init__()
        self.blocks = nn.ModuleList(
            [ResBlockQ(n, q_levels, inverse=True, gain_end=1.0 / GAIN_END_ENC)
             for _ in range(4)]
        )
        self.igdns = nn.ModuleList([GDN(n, inverse=True) for _ in range(4)])
        self.ups = nn.ModuleList([subpel_conv3x3(n, c) for c in (n, n, n, 3)])

    def forward(self, y: torch.Tensor, q: int) -> torch.Tensor:
        for block, igdn, up in zip(self.blocks, self.igdns, self.ups):
            y = up(igdn(block(y, q)))
        return y


class HyperAnalysis(nn.Module):
    """h_enc: two stride-2 conv stages with adaption."""

    def __init__(self, n: int, q_levels: int):
        super().__init__()
        self.conv1 = conv3x3(n, n, stride=2)
        self.ad1 = AdaptionLayer(n, q_levels)
        self.conv2 = conv3x3(n, n, stride=2)
        self.ad2 = AdaptionLayer(n, q_levels)

    def forward(self, y: torch.Tensor, q: int) -> torch.Tensor:
        h = F.leaky_relu(self.ad1(self.conv1(y), q))
        return self.ad2(self.conv2(h), q)


class HyperSynthesis(nn.Module):
    """h_dec: mirrors h_enc and emits the scale field through a softplus floor."""

    def __init__(self, n: int, q_levels: int, scale_bound: float):
        super().__init__()
        self.scale_bound = scale_bound
        self.up1 = subpel_conv3x3(n, n)
        self.ad1 = AdaptionLayer(n, q_levels)
        self.up2 = subpel_conv3x3(n, n)
        self.ad2 = AdaptionLayer(n, q_levels)
        self.head = conv3x3(n, n)

    def forward(self, z: torch.Tensor, q: int) -> torch.Tensor:
        h = F.leaky_relu(self.ad1(self.up1(z), q))
        h = F.leaky_relu(self.ad2(self.up2(h), q))
        return self.scale_bound + F.softplus(self.head(h))


def rate_estimate(y_hat: torch.Tensor, scales: torch.Tensor, z_hat: torch.Tensor,
                  prior: FactorizedPrior,
                  scale_bound: float = entropy.SCALE_BOUND) -> Tuple[torch.Tensor, torch.Tensor]:
    """Estimated coding cost in bits for the main and hyper latents."""
    if float(scales.detach().min()) < scale_bound * (1 - 1e-6):
        raise NumericError("scale field below the configured bound")
    bits_y = likelihood_to_bits(gaussian_interval_likelihood(y_hat, scales))
    bits_z = likelihood_to_bits(prior.likelihood(z_hat))
    return bits_y, bits_z


# --- escape-extended stream coding -------------------------------------------

def _encode_stream(symbols: np.ndarray, table_ids: np.ndarray,
                   tables: List[CdfTable], bypass_id: int,
                   trace: Optional[list] = None) -> bytes:
    """Main segment: symbols clamped to table support; escape segment: overflow
    magnitudes (Exp-Golomb over the bypass table) for every edge-hitting symbol."""
    enc = RangeEncoder()
    bypass = tables[bypass_id]
    escapes = []
    for sym, tid in zip(symbols.tolist(), table_ids.tolist()):
        t = tables[tid]
        main = min(max(sym, t.min_symbol), t.max_symbol)
        enc.encode_symbol(t, main)
        if trace is not None:
            trace.append((tid, main))
        if main == t.min_symbol:
            escapes.append(t.min_symbol - sym)
        elif main == t.max_symbol:
            escapes.append(sym - t.max_symbol)
    for m in escapes:
        v = m + 1
        nbits = v.bit_length() - 1
        bits = [1] * nbits + [0]
        for k in range(nbits - 1, -1, -1):
            bits.append((v >> k) & 1)
        for b in bits:
            enc.encode_symbol(bypass, b)
            if trace is not None:
                trace.append((bypass_id, b))
    return enc.finish()


def _decode_stream(data: bytes, table_ids: np.ndarray, tables: List[CdfTable],
                   bypass_id: int) -> np.ndarray:
    dec = RangeDecoder(data)
    bypass = tables[bypass_id]
    out = np.empty(len(table_ids), dtype=np.int64)
    edge: List[Tuple[int, int]] = []  # (position, sign) of edge-hitting mains
    for pos, tid in enumerate(table_ids.tolist()):
        t = tables[tid]
        sym = dec.decode_symbol(t)
        out[pos] = sym
        if sym == t.min_symbol:
            edge.append((pos, -1))
        elif sym == t.max_symbol:
            edge.append((pos, 1))
    for pos, sign in edge:
        nbits = 0
        while dec.decode_symbol(bypass) == 1:
            nbits += 1
            if nbits > 63:
                raise DecodeError("escape magnitude out of range")
        v = 1
        for _ in range(nbits):
            v = (v << 1) | dec.decode_symbol(bypass)
        out[pos] += sign * (v - 1)
    return out


class VariableRateCodec(nn.Module):
    """Hyperprior autoencoder serving all compression-ratio indices with one
    set of weights; the q index only drives the adaption layers."""

    def __init__(self, config: Optional[CodecConfig] = None):
        super().__init__()
        self.config = config or CodecConfig()
        n, ql = self.config.n_channels, self.config.q_levels
        self.g_enc = AnalysisTransform(n, ql)
        self.g_dec = SynthesisTransform(n, ql)
        self.h_enc = HyperAnalysis(n, ql)
        self.h_dec = HyperSynthesis(n, ql, self.config.scale_bound)
        self.prior = FactorizedPrior(n)
        table = torch.from_numpy(self.config.scale_table()).float()
        self.register_buffer("scale_table", table)
        self._z_tables: Optional[List[CdfTable]] = None
        self._y_tables: Optional[List[CdfTable]] = None

    # -- table management ------------------------------------------------

    def train(self, mode: bool = True):
        if mode:
            self._z_tables = None  # prior weights are about to change
        return super().train(mode)

    def update_tables(self) -> None:
        self._z_tables = self.prior.build_tables()
        if self._y_tables is None:
            self._y_tables = entropy.build_gaussian_tables(
                self.scale_table.double().numpy()
            )

    def coding_tables(self) -> Tuple[List[CdfTable], int, int, int]:
        """All tables in one list: z (per channel), y (per scale), bypass.

        Returns (tables, y_base_id, bypass_id, n_channels).
        """
        if self._z_tables is None or self._y_tables is None:
            self.update_tables()
        tables = list(self._z_tables) + list(self._y_tables) + [BYPASS_TABLE]
        y_base = len(self._z_tables)
        bypass_id = len(tables) - 1
        return tables, y_base, bypass_id, self.config.n_channels

    # -- shape helpers -----------------------------------------------------

    @staticmethod
    def _pad(image: torch.Tensor) -> torch.Tensor:
        h, w = image.shape[-2:]
        ph = math.ceil(h / PAD_MULTIPLE) * PAD_MULTIPLE
        pw = math.ceil(w / PAD_MULTIPLE) * PAD_MULTIPLE
        if (ph, pw) == (h, w):
            return image
        return F.pad(image, (0, pw - w, 0, ph - h), mode="reflect")

    def _check_q(self, q: int) -> int:
        q = int(q)
        if not 0 <= q < self.config.q_levels:
            raise ConfigurationError(
                f"q={q} outside [0, {self.config.q_levels})"
            )
        return q

    # -- training forward ----------------------------------------------------

    def forward(self, x: torch.Tensor, q: int, quant: str = "noise") -> dict:
        q = self._check_q(q)
        h, w = x.shape[-2:]
        if h % PAD_MULTIPLE or w % PAD_MULTIPLE:
            raise DimensionError(
                f"input {h}x{w} must be a multiple of {PAD_MULTIPLE}; "
                "use compress() for arbitrary sizes"
            )
        y = self.g_enc(x, q)
        z = self.h_enc(y, q)
        z_hat = quantize(z, quant)
        scales = self.h_dec(z_hat, q)
        y_hat = quantize(y, quant)
        bits_y, bits_z = rate_estimate(y_hat, scales, z_hat, self.prior,
                                       self.config.scale_bound)
        x_hat = self.g_dec(y_hat, q)
        if not self.training:
            x_hat = x_hat.clamp(0.0, 1.0)
        return {
            "x_hat": x_hat,
            "y": y,
            "y_hat": y_hat,
            "z": z,
            "z_hat": z_hat,
            "scales": scales,
            "bits_y": bits_y,
            "bits_z": bits_z,
        }

    # -- deterministic inference ----------------------------------------------

    @torch.no_grad()
    def latents(self, image: torch.Tensor, q: int) -> LatentPack:
        """Rounded latents and decoded scale field for a (3,H,W) image."""
        q = self._check_q(q)
        x = self._pad(image.unsqueeze(0) if image.dim() == 3 else image)
        y = self.g_enc(x, q)
        y_hat = torch.round(y)
        z = self.h_enc(y, q)
        z_hat = torch.round(z)
        scales = self.h_dec(z_hat, q)
        return LatentPack(y=y_hat.squeeze(0), z=z_hat.squeeze(0),
                          scales=scales.squeeze(0))

    @torch.no_grad()
    def direct_synthesis(self, image: torch.Tensor, q: int) -> torch.Tensor:
        """g_dec(round(g_enc(x))) on the padded image, clamped and cropped."""
        q = self._check_q(q)
        h, w = image.shape[-2:]
        pack = self.latents(image, q)
        x_hat = self.g_dec(pack.y.unsqueeze(0), q).clamp(0.0, 1.0)
        return x_hat.squeeze(0)[:, :h, :w]

    @torch.no_grad()
    def compress(self, image: torch.Tensor, q: int,
                 orig_size: Optional[Tuple[int, int]] = None,
                 trace: Optional[dict] = None) -> Bitstream:
        q = self._check_q(q)
        if image.dim() != 3 or image.shape[0] != 3:
            raise DimensionError(f"expected a (3,H,W) image, got {tuple(image.shape)}")
        h, w = image.shape[-2:]
        if h < MIN_SIZE or w < MIN_SIZE:
            raise DimensionError(f"image {h}x{w} smaller than {MIN_SIZE}x{MIN_SIZE}")
        orig_h, orig_w = orig_size if orig_size is not None else (h, w)
        pack = self.latents(image, q)
        tables, y_base, bypass_id, n = self.coding_tables()

        z_syms = pack.z.numpy().astype(np.int64).reshape(n, -1)
        z_ids = np.repeat(np.arange(n), z_syms.shape[1])
        trace_z = [] if trace is not None else None
        z_bytes = _encode_stream(z_syms.reshape(-1), z_ids, tables, bypass_id,
                                 trace_z)

        scale_idx = entropy.snap_scale_indices(pack.scales, self.scale_table)
        y_ids = (scale_idx.numpy() + y_base).astype(np.int64)
        y_syms = pack.y.numpy().astype(np.int64).reshape(-1)
        trace_y = [] if trace is not None else None
        y_bytes = _encode_stream(y_syms, y_ids, tables, bypass_id, trace_y)

        if trace is not None:
            trace["tables"] = tables
            trace["z"] = (trace_z, z_bytes)
            trace["y"] = (trace_y, y_bytes)
        return Bitstream(q=q, orig_h=orig_h, orig_w=orig_w,
                         z_bytes=z_bytes, y_bytes=y_bytes)

    @torch.no_grad()
    def decompress_latents(self, bs: Bitstream) -> LatentPack:
        """Entropy-decode the integer latents and the scale field only."""
        q = self._check_q(bs.q)
        tables, y_base, bypass_id, n = self.coding_tables()
        ph = math.ceil(bs.orig_h / PAD_MULTIPLE) * PAD_MULTIPLE
        pw = math.ceil(bs.orig_w / PAD_MULTIPLE) * PAD_MULTIPLE
        zh, zw = ph // 64, pw // 64

        z_ids = np.repeat(np.arange(n), zh * zw)
        z_syms = _decode_stream(bs.z_bytes, z_ids, tables, bypass_id)
        z_hat = torch.from_numpy(z_syms.reshape(1, n, zh, zw)).float()
        scales = self.h_dec(z_hat, q)

        scale_idx = entropy.snap_scale_indices(scales.squeeze(0), self.scale_table)
        y_ids = (scale_idx.numpy() + y_base).astype(np.int64)
        y_syms = _decode_stream(bs.y_bytes, y_ids, tables, bypass_id)
        y_hat = torch.from_numpy(
            y_syms.reshape(1, n, ph // 16, pw // 16)
        ).float()
        return LatentPack(y=y_hat.squeeze(0), z=z_hat.squeeze(0),
                          scales=scales.squeeze(0))

    @torch.no_grad()
    def decompress(self, bs: Bitstream) -> Tuple[torch.Tensor, int]:
        """Reconstruct the image; returns (image, q) from the header."""
        q = self._check_q(bs.q)
        pack = self.decompress_latents(bs)
        x_hat = self.g_dec(pack.y.unsqueeze(0), q).clamp(0.0, 1.0)
        return x_hat.squeeze(0)[:, :bs.orig_h, :bs.orig_w], q
