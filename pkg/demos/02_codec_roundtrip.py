#!/usr/bin/env python3
"""Compress / decompress round trip.

Runs an untrained tiny codec end to end: pad, transform, quantize, range-code,
and verify that decoding reproduces the encoder's integer latents exactly and
the reconstruction bit-exactly.
"""

import numpy as np
import torch

from lvcodec.codec import CodecConfig, VariableRateCodec
from lvcodec.evalkit import bpp, psnr
from lvcodec.toydata import make_image

torch.manual_seed(0)
codec = VariableRateCodec(CodecConfig(n_channels=32))
codec.eval()

rng = np.random.default_rng(1)
image = torch.from_numpy(np.moveaxis(make_image(rng, 192, 168), -1, 0).copy())
print(f"image: {tuple(image.shape)}")

for q in range(0, 6, 2):
    bs = codec.compress(image, q)
    recon, q_out = codec.decompress(bs)
    pack_enc = codec.latents(image, q)
    pack_dec = codec.decompress_latents(bs)
    lossless = (torch.equal(pack_enc.y, pack_dec.y)
                and torch.equal(pack_enc.z, pack_dec.z))
    exact = torch.equal(recon, codec.direct_synthesis(image, q))
    print(f"q={q}: {bs.total_bytes:6d} bytes  {bpp(bs):6.4f} bpp  "
          f"psnr {psnr(image, recon):6.2f} dB  "
          f"latents lossless={lossless}  recon bit-exact={exact}")

data = codec.compress(image, 3).pack()
print(f"\ncontainer starts with {data[:4]!r}, header is 18 bytes, "
      f"z/y streams follow")
