"""Full compression pipeline (pre-editor + codec + extractor binding) and the
checkpoint container.

Checkpoint layout (little-endian):

    magic "LVCK" | version u8=1 | stage u8 | config_len u32 | config JSON
    | n_tensors u32
    per tensor: name_len u16 | name utf-8 | ndim u8 | dims u32*ndim
                | float32 payload | crc32 u32

The config JSON echoes the model configs, the extractor name, and whatever
training configuration produced the checkpoint.
"""

from __future__ import annotations

import json
import math
import os
import struct
import zlib
from dataclasses import asdict
from typing import Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .codec import (MIN_SIZE, PAD_MULTIPLE, Bitstream, CodecConfig,
                    VariableRateCodec)
from .errors import DimensionError, FormatError
from .preedit import PreEditConfig, PreEditNet
from .tokens import get_extractor, tokens_for_image

CKPT_MAGIC = b"LVCK"
CKPT_VERSION = 1


class Pipeline(nn.Module):
    """Pre-editing network plus variable-rate codec sharing one q ladder."""

    def __init__(self, codec_config: Optional[CodecConfig] = None,
                 preedit_config: Optional[PreEditConfig] = None,
                 extractor: str = "toy"):
        super().__init__()
        self.codec = VariableRateCodec(codec_config)
        self.preedit = PreEditNet(preedit_config)
        self.extractor_name = extractor
        self._extractor = get_extractor(extractor)
        # global token std estimated on the training set; 0 means "unset"
        self.register_buffer("token_scale", torch.zeros(1))

    @property
    def extractor(self):
        return self._extractor

    @property
    def q_levels(self) -> int:
        return self.codec.config.q_levels

    def token_norm(self) -> float:
        s = float(self.token_scale)
        return s if s > 0 else 1.0

    @torch.no_grad()
    def encode_image(self, image: torch.Tensor, q: int, use_preedit: bool = True,
                     tokens: Optional[torch.Tensor] = None) -> Bitstream:
        """Pad, optionally pre-edit under token guidance, then compress.

        The header keeps the pre-pad dimensions so decoding restores them.
        """
        h, w = image.shape[-2:]
        if h < MIN_SIZE or w < MIN_SIZE:
            raise DimensionError(
                f"image {h}x{w} smaller than {MIN_SIZE}x{MIN_SIZE}"
            )
        ph = math.ceil(h / PAD_MULTIPLE) * PAD_MULTIPLE
        pw = math.ceil(w / PAD_MULTIPLE) * PAD_MULTIPLE
        padded = image
        if (ph, pw) != (h, w):
            padded = F.pad(image.unsqueeze(0), (0, pw - w, 0, ph - h),
                           mode="reflect").squeeze(0)
        if use_preedit:
            if tokens is None:
                tokens = tokens_for_image(padded, self._extractor)
            padded = self.preedit(padded, tokens, q)
        return self.codec.compress(padded, q, orig_size=(h, w))

    @torch.no_grad()
    def decode_image(self, bs: Bitstream) -> Tuple[torch.Tensor, int]:
        return self.codec.decompress(bs)


def build_pipeline(codec: Optional[dict] = None, preedit: Optional[dict] = None,
                   extractor: str = "toy") -> Pipeline:
    codec_cfg = CodecConfig(**(codec or {}))
    preedit_cfg = PreEditConfig(**(preedit or {}))
    return Pipeline(codec_cfg, preedit_cfg, extractor=extractor)


def save_checkpoint(path, pipeline: Pipeline, stage: int = 0,
                    train_config: Optional[dict] = None) -> None:
    """Atomic write: serialize to a temp file, then rename into place."""
    config = {
        "codec": asdict(pipeline.codec.config),
        "preedit": asdict(pipeline.preedit.config),
        "extractor": pipeline.extractor_name,
        "train": train_config or {},
    }
    blob = json.dumps(config).encode("utf-8")
    state = pipeline.state_dict()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<BB", CKPT_VERSION, stage))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(state)))
        for name, tensor in state.items():
            data = np.ascontiguousarray(
                tensor.detach().cpu().numpy().astype("<f4")
            )
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            payload = data.tobytes()
            f.write(payload)
            f.write(struct.pack("<I", zlib.crc32(payload)))
    os.replace(tmp, path)


def checkpoint_checksums(path) -> dict:
    """Tensor name -> crc32 as stored in the file (cheap integrity probe)."""
    _, _, _, sums = _read_checkpoint(path)
    return sums


def _read_checkpoint(path):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != CKPT_MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    version, stage = struct.unpack_from("<BB", raw, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (blob_len,) = struct.unpack_from("<I", raw, 6)
    pos = 10
    config = json.loads(raw[pos:pos + blob_len].decode("utf-8"))
    pos += blob_len
    (n_tensors,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    tensors = {}
    sums = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        payload = raw[pos:pos + 4 * count]
        if len(payload) != 4 * count:
            raise FormatError("truncated checkpoint tensor payload")
        pos += 4 * count
        (crc,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        if zlib.crc32(payload) != crc:
            raise FormatError(f"checksum mismatch for tensor {name!r}")
        arr = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
        tensors[name] = torch.from_numpy(arr)
        sums[name] = crc
    if pos != len(raw):
        raise FormatError("trailing bytes in checkpoint file")
    return config, stage, tensors, sums


def load_checkpoint(path) -> Tuple[Pipeline, int, dict, dict]:
    """Rebuild the pipeline; returns (pipeline, stage, config, checksums)."""
    config, stage, tensors, sums = _read_checkpoint(path)
    pipeline = build_pipeline(
        codec=config.get("codec"),
        preedit=config.get("preedit"),
        extractor=config.get("extractor", "toy"),
    )
    state = pipeline.state_dict()
    missing = set(state) - set(tensors)
    extra = set(tensors) - set(state)
    if missing or extra:
        raise FormatError(
            f"checkpoint does not match model (missing={sorted(missing)}, "
            f"unexpected={sorted(extra)})"
        )
    pipeline.load_state_dict(tensors)
    pipeline.eval()
    return pipeline, stage, config, sums
